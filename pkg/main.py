"""
gmcprior - Main Entry Point
Run this file to fit, compare and simulate GMC borrowing models from the command line
"""

import sys
from pathlib import Path

project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from gmcprior.run import main

if __name__ == "__main__":
    main(sys.argv[1:])

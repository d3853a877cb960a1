"""File integrations for gmcprior.

This package contains modules for:
- CSV ingestion of regression and survival datasets
- Result bundles (draws, summaries, curve grids, diagnostics, run manifest)
"""

from __future__ import annotations

"""Modified low-rank thin-plate (mLRTP) cubic spline basis.

The curve on the rescaled axis t in [0, 1] is

    phi(t; beta) = beta_0 + beta_1 t + sum_{k=2..K} beta_k (|t - knot_{k-1}|^3 - |knot_{k-1}|^3)

so beta_0 is the value at t = 0. The smoothing prior is placed on the
transformed radial block b = Omega^{1/2} beta_radial, with Omega_{jk} =
|knot_{j-1} - knot_{k-1}|^3 over the interior knots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import linalg

from ..errors import DegeneratePartition, DimensionMismatch, DomainError, SingularOmega

DOMAIN_TOL = 1e-12
MAX_CONDITION = 1e12

Spacing = Literal["equal", "quantile", "custom"]


@dataclass(frozen=True)
class Partition:
    """Ordered knots 0 = knot_0 < knot_1 < ... < knot_K = 1.

    Survival models accept K = 1 (a single exponential interval); spline
    operations require K >= 2.
    """
    knots: np.ndarray
    spacing: Spacing = "custom"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise DegeneratePartition("a partition needs at least the knots 0 and 1")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise DegeneratePartition(f"partition must start at 0 and end at 1, got {knots[0]} .. {knots[-1]}")
        if np.any(np.diff(knots) <= 0.0):
            raise DegeneratePartition(f"knots must be strictly increasing: {knots.tolist()}")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def K(self) -> int:
        return self.knots.size - 1

    @property
    def interior(self) -> np.ndarray:
        """knot_1 .. knot_{K-1}."""
        return self.knots[1:-1]

    @property
    def label(self) -> str:
        return f"K={self.K}/{self.spacing}"


@dataclass(frozen=True)
class BasisCoefficients:
    """beta_0 (intercept), beta_1 (slope), beta_2..beta_K (radial)."""
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))


@dataclass(frozen=True)
class OmegaFactor:
    omega: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    condition: float


def build_partition(K: int, spacing: Spacing = "equal", t: Optional[Sequence[float]] = None) -> Partition:
    """Build an equally spaced or quantile spaced partition with K intervals.

    Quantile spacing puts the interior knots at the (linearly interpolated)
    empirical quantiles of ``t`` at probabilities k/K, k = 1..K-1, with the
    end points fixed at 0 and 1.

    Raises:
        DegeneratePartition: K < 1, or fewer than K distinct t values for
            quantile spacing, or quantiles that collide.
    """
    if K < 1:
        raise DegeneratePartition(f"K must be >= 1, got {K}")
    if spacing == "equal":
        return Partition(np.arange(K + 1) / K, "equal")
    if spacing != "quantile":
        raise DegeneratePartition(f"unknown spacing {spacing!r}")
    values = np.asarray(t if t is not None else [], dtype=float)
    values = values[(values > 0.0) & (values <= 1.0)]
    if np.unique(values).size < K:
        raise DegeneratePartition(
            f"quantile spacing with K={K} needs at least {K} distinct t values in (0, 1], "
            f"got {np.unique(values).size}"
        )
    interior = np.quantile(values, np.arange(1, K) / K, method="linear")
    knots = np.concatenate([[0.0], interior, [1.0]])
    if np.any(np.diff(knots) <= 0.0):
        raise DegeneratePartition(f"quantile knots collide: {knots.tolist()}")
    return Partition(knots, "quantile")


def _require_spline(p: Partition) -> None:
    if p.K < 2:
        raise DegeneratePartition(f"spline basis needs K >= 2, got K={p.K}")


def _check_domain(t: np.ndarray) -> np.ndarray:
    if t.size and (np.min(t) < -DOMAIN_TOL or np.max(t) > 1.0 + DOMAIN_TOL):
        raise DomainError(f"t must lie in [0, 1], got range [{np.min(t)}, {np.max(t)}]")
    return np.clip(t, 0.0, 1.0)


def design_matrix(t: Sequence[float], p: Partition) -> np.ndarray:
    """Rows (1, t, |t - knot_1|^3 - knot_1^3, ..., |t - knot_{K-1}|^3 - knot_{K-1}^3)."""
    _require_spline(p)
    t = _check_domain(np.atleast_1d(np.asarray(t, dtype=float)))
    knots = p.interior
    radial = np.abs(t[:, None] - knots[None, :]) ** 3 - knots[None, :] ** 3
    return np.column_stack([np.ones_like(t), t, radial]).reshape(t.size, p.K + 1)


def eval_basis(t: float, p: Partition) -> np.ndarray:
    return design_matrix([t], p)[0]


def omega_factor(p: Partition) -> OmegaFactor:
    """Omega and its SVD-based square root U D^{1/2} V' with inverse V D^{-1/2} U'.

    Raises:
        SingularOmega: condition number of Omega at or above 1e12 (K = 2 always is).
    """
    _require_spline(p)
    knots = p.interior
    omega = np.abs(knots[:, None] - knots[None, :]) ** 3
    u, d, vt = linalg.svd(omega)
    if d.min() <= 0.0 or d.max() / d.min() >= MAX_CONDITION:
        cond = np.inf if d.min() <= 0.0 else d.max() / d.min()
        raise SingularOmega(f"Omega for {p.label} is numerically singular (condition {cond:.3g})")
    root = np.sqrt(d)
    sqrt = (u * root) @ vt
    inv_sqrt = (vt.T / root) @ u.T
    return OmegaFactor(omega, sqrt, inv_sqrt, float(d.max() / d.min()))


def _split(vector: np.ndarray, f: OmegaFactor) -> np.ndarray:
    vector = np.asarray(getattr(vector, "beta", vector), dtype=float)
    if vector.shape != (f.omega.shape[0] + 2,):
        raise DimensionMismatch(f"expected {f.omega.shape[0] + 2} coefficients, got shape {vector.shape}")
    return vector


def to_b_space(beta: BasisCoefficients | np.ndarray, f: OmegaFactor) -> np.ndarray:
    beta = _split(beta, f)
    return np.concatenate([beta[:2], f.sqrt @ beta[2:]])


def from_b_space(b: np.ndarray, f: OmegaFactor) -> BasisCoefficients:
    b = _split(b, f)
    return BasisCoefficients(np.concatenate([b[:2], f.inv_sqrt @ b[2:]]))


def transformed_design(t: Sequence[float], p: Partition, f: OmegaFactor) -> np.ndarray:
    """Design matrix acting on b-space coefficients: X_radial is mapped through inv_sqrt."""
    x = design_matrix(t, p)
    return np.column_stack([x[:, :2], x[:, 2:] @ f.inv_sqrt])


def eval_curve(t: Sequence[float], p: Partition, beta: BasisCoefficients | np.ndarray) -> np.ndarray:
    beta = np.asarray(getattr(beta, "beta", beta), dtype=float)
    return design_matrix(t, p) @ beta


def derivative_matrix(t: Sequence[float], p: Partition) -> np.ndarray:
    """Rows whose product with beta gives phi'(t; beta)."""
    _require_spline(p)
    t = _check_domain(np.atleast_1d(np.asarray(t, dtype=float)))
    r = t[:, None] - p.interior[None, :]
    radial = np.sign(r) * 3.0 * r ** 2
    return np.column_stack([np.zeros_like(t), np.ones_like(t), radial]).reshape(t.size, p.K + 1)


def eval_derivative(t: float, p: Partition, beta: BasisCoefficients | np.ndarray) -> float:
    """beta_1 + sum_k sign(t - knot_{k-1}) 3 beta_k (t - knot_{k-1})^2, with sign(0) = 0."""
    beta = np.asarray(getattr(beta, "beta", beta), dtype=float)
    if beta.shape != (p.K + 1,):
        raise DimensionMismatch(f"expected {p.K + 1} coefficients, got {beta.shape}")
    return float(derivative_matrix([t], p)[0] @ beta)

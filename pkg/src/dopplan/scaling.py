"""Per-operator-kind scalability models and their calibration from
measured samples.

Throughput follows the universal-scalability form
``r * d / (1 + sigma*(d-1) + kappa*d*(d-1))``: ``r`` is the single-node
rate, ``sigma`` the contention penalty, ``kappa`` the coherency penalty
that eventually makes adding nodes counterproductive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CalibrationError(ValueError):
    """Raised for unusable calibration sample sets."""


@dataclass(frozen=True)
class ScalabilityModel:
    op_kind: str
    r: float
    sigma: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.r <= 0 or not math.isfinite(self.r):
            raise ValueError(f"base rate must be positive, got {self.r}")
        if self.sigma < 0 or self.kappa < 0:
            raise ValueError("sigma and kappa must be non-negative")

    def throughput(self, dop: int) -> float:
        if dop < 1:
            raise ValueError(f"dop must be >= 1, got {dop}")
        d = float(dop)
        return self.r * d / (1.0 + self.sigma * (d - 1.0) + self.kappa * d * (d - 1.0))


def op_throughput(model: ScalabilityModel, dop: int) -> float:
    """Rows/second the operator kind sustains at the given parallelism."""
    return model.throughput(dop)


def peak_dop(model: ScalabilityModel) -> int | None:
    """DOP beyond which throughput strictly decreases, or None for
    kappa == 0 (monotone scaling)."""
    if model.kappa <= 0:
        return None
    return max(1, round(math.sqrt((1.0 - model.sigma) / model.kappa)))


@dataclass(frozen=True)
class CalibrationSample:
    op_kind: str
    dop: int
    rows: float
    measured_seconds: float

    def __post_init__(self):
        if self.dop < 1:
            raise ValueError(f"dop must be >= 1, got {self.dop}")
        if self.rows <= 0 or self.measured_seconds <= 0:
            raise ValueError("rows and measured_seconds must be positive")


def fit_model(samples: list[CalibrationSample]) -> ScalabilityModel:
    """Least-squares fit of (r, sigma, kappa) to measured durations.

    The predicted duration ``rows*(1 + sigma*(d-1) + kappa*d*(d-1)) / (r*d)``
    is linear in (1/r, sigma/r, kappa/r), so the fit is a single exact
    linear solve; non-negativity of sigma and kappa is enforced by picking
    the best feasible active set.  Deterministic.
    """
    if len(samples) < 3:
        raise CalibrationError(f"need >= 3 samples, got {len(samples)}")
    kinds = {s.op_kind for s in samples}
    if len(kinds) != 1:
        raise CalibrationError(f"samples mix operator kinds: {sorted(kinds)}")
    dops = sorted({s.dop for s in samples})
    if len(dops) < 2:
        raise CalibrationError(f"degenerate samples: all at dop {dops[0]}")

    d = np.array([float(s.dop) for s in samples])
    rows = np.array([s.rows for s in samples])
    y = np.array([s.measured_seconds for s in samples])
    # Columns multiply (1/r, sigma/r, kappa/r).
    full = np.column_stack([rows / d, rows * (d - 1.0) / d, rows * (d - 1.0)])

    # With only two distinct DOPs the three columns are rank-2: pin kappa.
    subsets = [(0,), (0, 1), (0, 2), (0, 1, 2)] if len(dops) >= 3 else [(0,), (0, 1)]

    best: tuple[float, np.ndarray] | None = None
    for cols in subsets:
        coef, *_ = np.linalg.lstsq(full[:, cols], y, rcond=None)
        params = np.zeros(3)
        params[list(cols)] = coef
        if params[0] <= 0 or params[1] < 0 or params[2] < 0:
            continue
        sse = float(np.sum((full @ params - y) ** 2))
        if best is None or sse < best[0] * (1.0 - 1e-12) - 1e-300:
            best = (sse, params)
    if best is None:
        raise CalibrationError("no feasible fit (non-positive base rate)")

    a, b, c = best[1]
    return ScalabilityModel(op_kind=samples[0].op_kind, r=1.0 / a,
                            sigma=b / a, kappa=c / a)

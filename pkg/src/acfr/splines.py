"""Truncated power basis embeddings for a scalar treatment in [0, 1].

The embedding of a dose t is the fixed feature vector
``[1, t, ..., t^p, (t - k_1)_+^p, ..., (t - k_q)_+^p]`` for degree p and
interior knots k_1 < ... < k_q. It is piecewise polynomial, C^(p-1) at every
knot, and needs no learned parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DEGREE = 2
DEFAULT_KNOTS = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True)
class SplineConfig:
    """Degree and interior knots of the treatment embedding.

    Knots must be strictly increasing and lie strictly inside (0, 1). The
    basis dimension is ``degree + 1 + len(knots)``.
    """

    degree: int = DEFAULT_DEGREE
    knots: tuple = field(default=DEFAULT_KNOTS)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(f"spline degree must be >= 1, got {self.degree}")
        knots = tuple(float(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        for k in knots:
            if not 0.0 < k < 1.0:
                raise ValueError(f"knots must lie strictly inside (0, 1), got {k}")
        if any(a >= b for a, b in zip(knots, knots[1:])):
            raise ValueError(f"knots must be strictly increasing, got {knots}")

    @property
    def dim(self) -> int:
        return self.degree + 1 + len(self.knots)


def basis_eval(t: float, cfg: SplineConfig) -> np.ndarray:
    """Evaluate the basis at a single dose t in [0, 1]."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"treatment must lie in [0, 1], got {t}")
    powers = t ** np.arange(cfg.degree + 1, dtype=np.float64)
    truncated = np.maximum(t - np.asarray(cfg.knots), 0.0) ** cfg.degree
    return np.concatenate([powers, truncated])


def basis_matrix(ts, cfg: SplineConfig) -> np.ndarray:
    """Row-stack basis_eval over a vector of doses; shape (len(ts), cfg.dim)."""
    ts = np.asarray(ts, dtype=np.float64).reshape(-1)
    if ts.size == 0:
        return np.zeros((0, cfg.dim))
    bad = np.flatnonzero((ts < 0.0) | (ts > 1.0))
    if bad.size:
        raise ValueError(
            f"treatment at row {bad[0]} lies outside [0, 1]: {ts[bad[0]]}"
        )
    cols = ts[:, None] ** np.arange(cfg.degree + 1, dtype=np.float64)[None, :]
    truncated = np.maximum(ts[:, None] - np.asarray(cfg.knots)[None, :], 0.0) ** cfg.degree
    return np.concatenate([cols, truncated], axis=1)

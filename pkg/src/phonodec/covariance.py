"""Channel cross-covariance embedding of multichannel EEG trials.

A trial (C channels x T samples) becomes a C x C lagged covariance matrix;
at lag 0 the matrix is symmetric positive semi-definite. Its lower triangle
(diagonal included, row-major) is the flattened form fed to the temporal
network: length C(C+1)/2, e.g. 61 channels -> 1891.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, ValidationError
from .labels import TokenLabel


@dataclass
class EegTrial:
    subject_id: str
    token: TokenLabel
    data: np.ndarray  # (C, T) float, microvolts

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"trial data must be 2-D (C, T), got {self.data.shape}")
        c, t = self.data.shape
        if c < 2 or t < 2:
            raise ValidationError(f"trial needs C >= 2 and T >= 2, got {c}x{t}")
        if not np.isfinite(self.data).all():
            raise ValidationError(
                f"trial {self.subject_id}/{self.token.value} contains non-finite samples"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


@dataclass
class CovMatrix:
    values: np.ndarray  # (C, C)
    lag: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ShapeError(f"covariance must be square, got {self.values.shape}")

    @property
    def order(self) -> int:
        return self.values.shape[0]


def standardize_channels(trial: EegTrial) -> EegTrial:
    """Remove each channel's mean; variance is untouched."""
    centered = trial.data - trial.data.mean(axis=1, keepdims=True)
    return EegTrial(trial.subject_id, trial.token, centered)


def channel_cross_covariance(trial: EegTrial, lag: int = 0) -> CovMatrix:
    """Lagged covariance between every channel pair.

    Entry (c1, c2) averages (x_c1(t) - mu_c1)(x_c2(t + lag) - mu_c2) over the
    T - |lag| valid time steps. Lag 0 yields a symmetric PSD matrix.
    """
    t = trial.samples
    if abs(lag) >= t:
        raise ValidationError(f"|lag| = {abs(lag)} must be < T = {t}")
    x = trial.data - trial.data.mean(axis=1, keepdims=True)
    n = t - abs(lag)
    if lag >= 0:
        cov = x[:, : t - lag] @ x[:, lag:].T / n
    else:
        cov = x[:, -lag:] @ x[:, : t + lag].T / n
    return CovMatrix(cov, lag=lag)


def lower_triangular_flatten(m: CovMatrix) -> np.ndarray:
    """Row-major lower triangle including the diagonal; length C(C+1)/2."""
    rows, cols = np.tril_indices(m.order)
    return m.values[rows, cols]


def unflatten_symmetric(flat: np.ndarray, order: int) -> np.ndarray:
    """Inverse of lower_triangular_flatten for symmetric matrices."""
    expected = order * (order + 1) // 2
    if flat.shape != (expected,):
        raise ShapeError(f"expected length {expected} for order {order}, got {flat.shape}")
    out = np.zeros((order, order), dtype=np.float64)
    rows, cols = np.tril_indices(order)
    out[rows, cols] = flat
    out[cols, rows] = flat
    return out


def is_psd(m: CovMatrix, tol_scale: float = 1e-8) -> bool:
    """Minimum eigenvalue >= -tol_scale * trace (symmetric eigendecomposition)."""
    sym = 0.5 * (m.values + m.values.T)
    eigs = np.linalg.eigvalsh(sym)
    return bool(eigs.min() >= -tol_scale * max(np.trace(sym), np.finfo(float).tiny))

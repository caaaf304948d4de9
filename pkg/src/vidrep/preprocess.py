"""Descriptor pre-processing: l2 normalization and PCA with optional whitening.

The intended pipeline order is: l2-normalize each raw frame descriptor, then
project with a PCA model fitted on normalized training descriptors. Whitening
divides each projected coordinate by sqrt(eigenvalue + eps).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import (
    DataError,
    DegenerateDataError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit l2 norm; zero vectors pass through unchanged."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise DataError("non-finite value in vector to normalize")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v.copy()
    return v / norm


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise :func:`l2_normalize` for an (n, d) array."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DataError("non-finite value in rows to normalize")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)


@dataclass
class PcaModel:
    """Fitted PCA projection with optional whitening.

    ``projection`` columns are the leading principal directions (orthonormal),
    ``eigenvalues`` the matching training variances in descending order.
    """

    mean: np.ndarray
    projection: np.ndarray
    eigenvalues: np.ndarray
    whiten: bool
    eps: float = 1e-8

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[1]

    def save(self, path: str | Path) -> None:
        fileio.write_model(
            path,
            "pca",
            {
                "input_dim": self.input_dim,
                "output_dim": self.output_dim,
                "whiten": bool(self.whiten),
                "eps": float(self.eps),
            },
            {
                "mean": self.mean,
                "projection": self.projection,
                "eigenvalues": self.eigenvalues,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "PcaModel":
        mf = fileio.read_model(path)
        if mf.kind != "pca":
            raise FormatError(f"{path}: expected a pca model, got {mf.kind!r}")
        return cls(
            mean=mf.blocks["mean"].astype(np.float64),
            projection=mf.blocks["projection"].astype(np.float64),
            eigenvalues=mf.blocks["eigenvalues"].astype(np.float64),
            whiten=bool(mf.params["whiten"]),
            eps=float(mf.params["eps"]),
        )


def fit_pca(
    train: np.ndarray, d_out: int, whiten: bool = True, eps: float = 1e-8
) -> PcaModel:
    """Fit a PCA model on (n, D) training descriptors.

    Uses the sample covariance (n-1 divisor). The sign of each principal
    direction is fixed by forcing its largest-magnitude entry positive, so
    repeated fits are deterministic.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2:
        raise ShapeError(f"training data must be 2-D, got shape {train.shape}")
    if not np.isfinite(train).all():
        raise DataError("non-finite value in PCA training data")
    n, d = train.shape
    if d_out < 1:
        raise InsufficientDataError(f"d_out must be >= 1, got {d_out}")
    if n <= d_out:
        raise InsufficientDataError(
            f"need more than d_out={d_out} training rows, got {n}"
        )
    mean = train.mean(axis=0)
    centered = train - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_out]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 0.0:
        raise DegenerateDataError("training data has zero variance")
    # Deterministic sign: largest-|entry| of each direction made positive.
    for j in range(eigvecs.shape[1]):
        col = eigvecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            eigvecs[:, j] = -col
    return PcaModel(
        mean=mean,
        projection=eigvecs,
        eigenvalues=eigvals,
        whiten=whiten,
        eps=eps,
    )


def apply_pca(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project a D-vector (or (n, D) rows) into the model's D' dimensions."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2 or rows.shape[1] != model.input_dim:
        raise ShapeError(
            f"expected input dim {model.input_dim}, got shape {x.shape}"
        )
    if not np.isfinite(rows).all():
        raise DataError("non-finite value in PCA input")
    y = (rows - model.mean) @ model.projection
    if model.whiten:
        y = y / np.sqrt(model.eigenvalues + model.eps)
    return y[0] if single else y

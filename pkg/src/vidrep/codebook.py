"""Codebook training: K-means (Lloyd + k-means++ seeding) and diagonal GMMs.

Both trainers are deterministic given (data, K, seed): seeding draws come from
a single `numpy` Generator, assignment ties break toward the lowest center
index, and empty clusters are re-seeded by a fixed rule. The GMM is
initialized from a K-means fit and refined with EM; its per-iteration
log-likelihood history is kept on the model for convergence checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import fileio
from .errors import (
    DataError,
    DegenerateDataError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)


@dataclass
class Codebook:
    """K-means centers, plus the objective trace of the fit that made them."""

    centers: np.ndarray
    objective_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def save(self, path: str | Path) -> None:
        fileio.write_model(
            path, "kmeans", {"K": self.k, "dim": self.dim}, {"centers": self.centers}
        )

    @classmethod
    def load(cls, path: str | Path) -> "Codebook":
        mf = fileio.read_model(path)
        if mf.kind != "kmeans":
            raise FormatError(f"{path}: expected a kmeans model, got {mf.kind!r}")
        return cls(centers=mf.blocks["centers"].astype(np.float64))


@dataclass
class GmmModel:
    """Diagonal-covariance Gaussian mixture: means, variances, priors."""

    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray
    loglik_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def save(self, path: str | Path) -> None:
        fileio.write_model(
            path,
            "gmm",
            {"K": self.k, "dim": self.dim},
            {"means": self.means, "variances": self.variances, "priors": self.priors},
        )

    @classmethod
    def load(cls, path: str | Path) -> "GmmModel":
        mf = fileio.read_model(path)
        if mf.kind != "gmm":
            raise FormatError(f"{path}: expected a gmm model, got {mf.kind!r}")
        return cls(
            means=mf.blocks["means"].astype(np.float64),
            variances=mf.blocks["variances"].astype(np.float64),
            priors=mf.blocks["priors"].astype(np.float64),
        )


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (n, K), clipped at zero."""
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.clip(d2, 0.0, None)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = _sq_distances(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining mass on duplicates of chosen centers; pick uniformly.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_distances(x, centers[j : j + 1])[:, 0])
    return centers


def fit_kmeans(
    train: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> Codebook:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the summed center movement drops below ``tol`` or after
    ``max_iter`` iterations. Empty clusters are re-seeded with the training
    point currently farthest from its assigned center (lowest index on ties).
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"training data must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("non-finite value in k-means training data")
    n = x.shape[0]
    if k < 1:
        raise InsufficientDataError(f"K must be >= 1, got {k}")
    if n < k:
        raise InsufficientDataError(f"need at least K={k} training rows, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    history: list = []
    for _ in range(max_iter):
        d2 = _sq_distances(x, centers)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), labels].sum()))
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            own = d2[np.arange(n), labels].copy()
            for j in empties:
                far = int(np.argmax(own))
                new_centers[j] = x[far]
                own[far] = -1.0  # don't reuse the same point for another empty
        movement = float(np.linalg.norm(new_centers - centers, axis=1).sum())
        centers = new_centers
        if movement < tol:
            break
    return Codebook(centers=centers, objective_history=history)


def _log_gaussians(
    x: np.ndarray, means: np.ndarray, variances: np.ndarray, priors: np.ndarray
) -> np.ndarray:
    """Per-sample, per-component joint log density log(pi_k N(x; mu_k, var_k))."""
    const = -0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
    # Expand (x - mu)^2 / var as x^2/var - 2 x mu/var + mu^2/var for speed.
    inv = 1.0 / variances
    quad = (
        (x * x) @ inv.T
        - 2.0 * (x @ (means * inv).T)
        + np.sum(means * means * inv, axis=1)[None, :]
    )
    return np.log(priors)[None, :] + const[None, :] - 0.5 * quad


def _log_posteriors(gmm: GmmModel, x: np.ndarray) -> np.ndarray:
    joint = _log_gaussians(x, gmm.means, gmm.variances, gmm.priors)
    return joint - logsumexp(joint, axis=1, keepdims=True)


def posteriors(gmm: GmmModel, x: np.ndarray) -> np.ndarray:
    """Component posterior probabilities for one descriptor, summing to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != gmm.dim:
        raise ShapeError(f"expected a {gmm.dim}-vector, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("non-finite value in posterior input")
    return np.exp(_log_posteriors(gmm, x[None, :]))[0]


def fit_gmm(
    train: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    var_floor: float | None = None,
    tol: float = 1e-5,
) -> GmmModel:
    """EM for a diagonal GMM, initialized from :func:`fit_kmeans`.

    ``var_floor`` defaults to 1e-4 times the mean per-dimension variance of
    the training data; it guards against component collapse. The training
    log-likelihood per iteration is recorded on the returned model.
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"training data must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("non-finite value in GMM training data")
    n, d = x.shape
    if n < k:
        raise InsufficientDataError(f"need at least K={k} training rows, got {n}")
    if n < 10 * k:
        warnings.warn(
            f"GMM fit with only {n} rows for K={k}; 10*K or more is recommended",
            stacklevel=2,
        )
    if var_floor is None:
        var_floor = 1e-4 * float(np.var(x, axis=0).mean())
    if var_floor <= 0.0:
        raise DegenerateDataError("training data has zero variance")

    km = fit_kmeans(x, k, seed=seed)
    d2 = _sq_distances(x, km.centers)
    labels = np.argmin(d2, axis=1)
    rng = np.random.default_rng(seed)
    means = km.centers.copy()
    variances = np.empty((k, d))
    priors = np.empty(k)
    for attempt in range(4):
        counts = np.bincount(labels, minlength=k)
        if counts.min() > 0:
            break
        if attempt == 3:
            raise DegenerateDataError("could not initialize all GMM components")
        for j in np.flatnonzero(counts == 0):
            labels[int(rng.integers(n))] = j
    for j in range(k):
        members = x[labels == j]
        variances[j] = np.maximum(members.var(axis=0), var_floor)
        priors[j] = counts[j] / n

    prev_ll = -np.inf
    history: list = []
    for _ in range(max_iter):
        joint = _log_gaussians(x, means, variances, priors)
        norm = logsumexp(joint, axis=1, keepdims=True)
        ll = float(norm.sum())
        history.append(ll)
        resp = np.exp(joint - norm)
        nk = resp.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        means = (resp.T @ x) / nk_safe[:, None]
        second = (resp.T @ (x * x)) / nk_safe[:, None]
        variances = np.maximum(second - means * means, var_floor)
        priors = np.maximum(nk / n, 1e-10)
        priors = priors / priors.sum()
        if ll - prev_ll < tol * max(1.0, abs(ll)):
            break
        prev_ll = ll
    return GmmModel(
        means=means, variances=variances, priors=priors, loglik_history=history
    )

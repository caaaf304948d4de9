"""Video-level encoders: average pooling, Fisher vector, and VLAD-k.

All three turn an (n_frames, D') descriptor matrix into a single vector:

* average pooling: l2-normalize each frame, average, re-normalize;
* Fisher vector: first- and second-order deviations of the descriptors from
  a diagonal GMM, weighted by component posteriors, giving a 2*D'*K vector;
* VLAD-k: sum of (descriptor - center) residuals accumulated into the blocks
  of each descriptor's k nearest K-means centers, giving a D'*K vector.

Signed square root (SSR) and l2 normalization are applied to the encoded
vector when enabled; VLAD additionally supports per-block intra-normalization.
Encoders are pure functions, so videos can be processed concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codebook import Codebook, GmmModel, _log_posteriors, _sq_distances
from .errors import DataError, EmptyInputError, ParameterError, ShapeError
from .preprocess import l2_normalize, l2_normalize_rows

#: Posterior weights below this are dropped from Fisher accumulation. This
#: perturbs the encoding below the 1e-6 level in exchange for sparsity.
POSTERIOR_FLOOR = 1e-6

#: Default order in which the enabled VLAD normalizations are applied.
DEFAULT_NORM_ORDER = ("intra", "ssr", "l2")


@dataclass
class VideoRepresentation:
    """One encoded vector per video, tagged with its encoder and settings."""

    encoder: str
    vector: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def ssr(v: np.ndarray) -> np.ndarray:
    """Signed square root, elementwise: z -> sign(z) * sqrt(|z|)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise DataError("non-finite value in SSR input")
    return np.sign(v) * np.sqrt(np.abs(v))


def intra_normalize(v: np.ndarray, k: int, dim: int) -> np.ndarray:
    """l2-normalize each of the K contiguous ``dim``-sized blocks of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (k * dim,):
        raise ShapeError(f"expected length {k * dim}, got shape {v.shape}")
    blocks = v.reshape(k, dim)
    return l2_normalize_rows(blocks).ravel()


_signed_sqrt = ssr


def _check_frames(frames: np.ndarray, dim: int | None = None) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"frames must be 2-D, got shape {frames.shape}")
    if frames.shape[0] == 0:
        raise EmptyInputError("video has no frames to encode")
    if dim is not None and frames.shape[1] != dim:
        raise ShapeError(f"expected descriptor dim {dim}, got {frames.shape[1]}")
    if not np.isfinite(frames).all():
        raise DataError("non-finite value in frame descriptors")
    return frames


def average_pool(frames: np.ndarray) -> VideoRepresentation:
    """Average-pooling representation: normalize, mean over frames, re-normalize."""
    frames = _check_frames(frames)
    mean = l2_normalize_rows(frames).mean(axis=0)
    return VideoRepresentation(
        encoder="avg", vector=l2_normalize(mean), meta={"n_frames": frames.shape[0]}
    )


def fisher_encode(
    gmm: GmmModel,
    frames: np.ndarray,
    ssr: bool = True,
    l2: bool = True,
) -> VideoRepresentation:
    """Fisher vector of the frames under a diagonal GMM.

    Per component k, with posterior weights q and sigma = sqrt(variance):

        u_k = 1/(N sqrt(prior_k))   * sum_i q_ik (x_i - mu_k) / sigma_k
        v_k = 1/(N sqrt(2 prior_k)) * sum_i q_ik [((x_i - mu_k)/sigma_k)^2 - 1]

    The output concatenates all u_k then all v_k (length 2*D'*K), followed by
    optional SSR and l2 normalization.
    """
    frames = _check_frames(frames, gmm.dim)
    n = frames.shape[0]
    q = np.exp(_log_posteriors(gmm, frames))
    q[q < POSTERIOR_FLOOR] = 0.0

    sigma = np.sqrt(gmm.variances)
    s0 = q.sum(axis=0)  # (K,)
    s1 = q.T @ frames  # (K, D')
    s2 = q.T @ (frames * frames)  # (K, D')

    diff1 = (s1 - gmm.means * s0[:, None]) / sigma
    u = diff1 / (n * np.sqrt(gmm.priors))[:, None]
    quad = (s2 - 2.0 * gmm.means * s1 + gmm.means**2 * s0[:, None]) / gmm.variances
    v = (quad - s0[:, None]) / (n * np.sqrt(2.0 * gmm.priors))[:, None]

    vec = np.concatenate([u.ravel(), v.ravel()])
    if ssr:
        vec = _signed_sqrt(vec)
    if l2:
        vec = l2_normalize(vec)
    return VideoRepresentation(
        encoder="fv",
        vector=vec,
        meta={"K": gmm.k, "dim": gmm.dim, "ssr": ssr, "l2": l2, "n_frames": n},
    )


def vlad_encode(
    codebook: Codebook,
    frames: np.ndarray,
    knn: int = 5,
    intra: bool = True,
    ssr: bool = True,
    l2: bool = True,
    norm_order: Sequence[str] = DEFAULT_NORM_ORDER,
) -> VideoRepresentation:
    """VLAD-k encoding of the frames against a K-means codebook.

    Each descriptor adds its difference to the block of each of its ``knn``
    nearest centers (ties toward the lower center index). The enabled
    normalizations run in ``norm_order``; the default applies per-block
    intra-normalization, then SSR, then a global l2.
    """
    frames = _check_frames(frames, codebook.dim)
    k, d = codebook.k, codebook.dim
    if not 1 <= knn <= k:
        raise ParameterError(f"knn must be in [1, K={k}], got {knn}")
    if set(norm_order) != {"intra", "ssr", "l2"} or len(norm_order) != 3:
        raise ParameterError(
            f"norm_order must be a permutation of ('intra', 'ssr', 'l2'), got {norm_order!r}"
        )

    d2 = _sq_distances(frames, codebook.centers)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :knn]
    blocks = np.zeros((k, d))
    for j in range(knn):
        idx = nearest[:, j]
        np.add.at(blocks, idx, frames - codebook.centers[idx])

    vec = blocks.ravel()
    enabled = {"intra": intra, "ssr": ssr, "l2": l2}
    for step in norm_order:
        if not enabled[step]:
            continue
        if step == "intra":
            vec = intra_normalize(vec, k, d)
        elif step == "ssr":
            vec = _signed_sqrt(vec)
        else:
            vec = l2_normalize(vec)
    return VideoRepresentation(
        encoder="vlad",
        vector=vec,
        meta={
            "K": k,
            "dim": d,
            "knn": knn,
            "intra": intra,
            "ssr": ssr,
            "l2": l2,
            "norm_order": tuple(norm_order),
            "n_frames": frames.shape[0],
        },
    )

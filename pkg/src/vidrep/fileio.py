"""Bit-exact file formats for descriptors, tensors, models, labels, and scores.

All binary formats are little-endian regardless of host platform, so a file
written anywhere reads identically everywhere. Layouts:

``.vdsc`` descriptor sets
    magic ``VDSC`` | u32 version (=1) | u32 n_items | u32 dim |
    n_items*dim float32 values, row-major.

``.vp5t`` activation tensors
    magic ``VP5T`` | u32 version (=1) | u32 n_frames | u32 a | u32 M |
    n_frames*a*a*M float32, row-major (frame, row, col, channel).

``.vmdl`` model files
    magic ``VMDL`` | u32 version (=1) | u32 header_len | UTF-8 JSON header |
    raw float32 blocks in the order the header declares. The header carries
    ``kind``, scalar hyperparameters under ``params``, and a ``blocks`` list
    of ``{"name": ..., "shape": [...]}`` entries.

``.vpqc`` product-quantizer code files
    magic ``VPQC`` | u32 version (=1) | u32 n_videos | u32 S | u32 m |
    packed code bits | id table (per video: u32 byte length, UTF-8 id).
    Codes are packed m bits per index, video-major then subspace order,
    LSB-first within the byte stream.

Labels and scores are CSV: UTF-8, comma separator, header row
``video_id,label`` or ``video_id,score``, one row per video.

Writers are atomic (temp file + rename), so a killed process never leaves a
truncated file at the destination. Readers refuse non-finite payload values
and cap the declared payload size (default 16 GiB) before allocating.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CorruptionError, DataError, FormatError

MAGIC_DESCRIPTORS = b"VDSC"
MAGIC_POOL5 = b"VP5T"
MAGIC_MODEL = b"VMDL"
MAGIC_PQ_CODES = b"VPQC"
FORMAT_VERSION = 1

#: Refuse to allocate payloads larger than this unless the caller raises it.
DEFAULT_PAYLOAD_CAP = 16 * 1024**3

MODEL_KINDS = ("pca", "gmm", "kmeans", "pq", "linsvm", "ksvm")

#: Scalar params that must be present in a model header, by kind.
_REQUIRED_MODEL_PARAMS = {
    "pca": ("input_dim", "output_dim", "whiten", "eps"),
    "gmm": ("K", "dim"),
    "kmeans": ("K", "dim"),
    "pq": ("dim", "sub_len", "bits"),
    "linsvm": ("dim", "C", "bias"),
    "ksvm": ("kernel", "sigma", "mean_distance", "C", "bias", "dim"),
}


def atomic_write(path: str | Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a same-directory temp file + rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_finite(data: np.ndarray, path: str | Path) -> None:
    finite = np.isfinite(data)
    if not finite.all():
        idx = int(np.argmin(finite.ravel()))
        raise DataError(f"{path}: non-finite value at flat index {idx}")


def _read_header(fh, magic: bytes, n_fields: int, path) -> tuple[int, ...]:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    raw = fh.read(4 * n_fields)
    if len(raw) != 4 * n_fields:
        raise FormatError(f"{path}: truncated header")
    fields = struct.unpack(f"<{n_fields}I", raw)
    if fields[0] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {fields[0]}")
    return fields


def _read_payload(fh, count: int, path, max_bytes: int) -> np.ndarray:
    nbytes = count * 4
    if nbytes > max_bytes:
        raise FormatError(
            f"{path}: declared payload of {nbytes} bytes exceeds cap {max_bytes}"
        )
    raw = fh.read(nbytes)
    if len(raw) != nbytes:
        raise CorruptionError(
            f"{path}: payload truncated, expected {nbytes} bytes, got {len(raw)}"
        )
    if fh.read(1):
        raise CorruptionError(f"{path}: trailing bytes after declared payload")
    return np.frombuffer(raw, dtype="<f4").copy()


# ---------------------------------------------------------------------------
# Descriptor sets


def write_descriptors(path: str | Path, data: np.ndarray) -> None:
    """Write an (n_items, dim) array of descriptors as a .vdsc file."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise DataError(f"descriptor set must be 2-D, got shape {data.shape}")
    if data.shape[1] < 1:
        raise DataError("descriptor dim must be >= 1")
    _check_finite(data, path)
    header = MAGIC_DESCRIPTORS + struct.pack(
        "<3I", FORMAT_VERSION, data.shape[0], data.shape[1]
    )
    atomic_write(path, header + data.astype("<f4").tobytes())


def read_descriptors(
    path: str | Path, max_bytes: int = DEFAULT_PAYLOAD_CAP
) -> np.ndarray:
    """Read a .vdsc file into an (n_items, dim) float32 array."""
    with open(path, "rb") as fh:
        _, n_items, dim = _read_header(fh, MAGIC_DESCRIPTORS, 3, path)
        if dim < 1:
            raise FormatError(f"{path}: dim must be >= 1, got {dim}")
        flat = _read_payload(fh, n_items * dim, path, max_bytes)
    _check_finite(flat, path)
    return flat.reshape(n_items, dim)


# ---------------------------------------------------------------------------
# pool5-style activation tensors


def write_pool5(path: str | Path, tensor: np.ndarray) -> None:
    """Write an (n_frames, a, a, M) activation tensor as a .vp5t file."""
    tensor = np.ascontiguousarray(tensor, dtype=np.float32)
    if tensor.ndim != 4 or tensor.shape[1] != tensor.shape[2]:
        raise DataError(
            f"tensor must have shape (n_frames, a, a, M), got {tensor.shape}"
        )
    _check_finite(tensor, path)
    n, a, _, m = tensor.shape
    header = MAGIC_POOL5 + struct.pack("<4I", FORMAT_VERSION, n, a, m)
    atomic_write(path, header + tensor.astype("<f4").tobytes())


def read_pool5(path: str | Path, max_bytes: int = DEFAULT_PAYLOAD_CAP) -> np.ndarray:
    """Read a .vp5t file into an (n_frames, a, a, M) float32 array."""
    with open(path, "rb") as fh:
        _, n_frames, a, m = _read_header(fh, MAGIC_POOL5, 4, path)
        if a < 1 or m < 1:
            raise FormatError(f"{path}: need a >= 1 and M >= 1, got a={a}, M={m}")
        flat = _read_payload(fh, n_frames * a * a * m, path, max_bytes)
    _check_finite(flat, path)
    return flat.reshape(n_frames, a, a, m)


# ---------------------------------------------------------------------------
# Model files


@dataclass
class ModelFile:
    """Decoded .vmdl contents: kind, scalar params, named float32 blocks."""

    kind: str
    params: dict
    blocks: dict[str, np.ndarray]


def write_model(
    path: str | Path,
    kind: str,
    params: Mapping,
    blocks: Mapping[str, np.ndarray] | Sequence[tuple[str, np.ndarray]],
) -> None:
    """Write a model file: JSON header plus raw float32 blocks in order."""
    if kind not in MODEL_KINDS:
        raise FormatError(f"unknown model kind {kind!r}")
    missing = [f for f in _REQUIRED_MODEL_PARAMS[kind] if f not in params]
    if missing:
        raise FormatError(f"model kind {kind!r} missing params {missing}")
    items = list(blocks.items()) if isinstance(blocks, Mapping) else list(blocks)
    arrays = []
    declared = []
    for name, arr in items:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        _check_finite(arr, path)
        arrays.append(arr)
        declared.append({"name": name, "shape": list(arr.shape)})
    header_obj = {
        "kind": kind,
        "params": dict(params),
        "blocks": declared,
    }
    header = json.dumps(header_obj, sort_keys=True).encode("utf-8")
    out = [
        MAGIC_MODEL,
        struct.pack("<2I", FORMAT_VERSION, len(header)),
        header,
    ]
    out.extend(a.astype("<f4").tobytes() for a in arrays)
    atomic_write(path, b"".join(out))


def read_model(path: str | Path, max_bytes: int = DEFAULT_PAYLOAD_CAP) -> ModelFile:
    """Read and validate a .vmdl file written by :func:`write_model`."""
    with open(path, "rb") as fh:
        got = fh.read(4)
        if got != MAGIC_MODEL:
            raise FormatError(f"{path}: bad magic {got!r}, expected {MAGIC_MODEL!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise FormatError(f"{path}: truncated header")
        version, header_len = struct.unpack("<2I", raw)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        header_raw = fh.read(header_len)
        if len(header_raw) != header_len:
            raise FormatError(f"{path}: truncated JSON header")
        try:
            header = json.loads(header_raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable JSON header: {exc}") from exc
        kind = header.get("kind")
        if kind not in MODEL_KINDS:
            raise FormatError(f"{path}: unknown model kind {kind!r}")
        params = header.get("params", {})
        missing = [f for f in _REQUIRED_MODEL_PARAMS[kind] if f not in params]
        if missing:
            raise FormatError(f"{path}: model kind {kind!r} missing params {missing}")
        declared = header.get("blocks", [])
        total = sum(int(np.prod(b["shape"])) for b in declared)
        flat = _read_payload(fh, total, path, max_bytes)
    _check_finite(flat, path)
    blocks = {}
    offset = 0
    for spec in declared:
        count = int(np.prod(spec["shape"]))
        blocks[spec["name"]] = flat[offset : offset + count].reshape(spec["shape"])
        offset += count
    return ModelFile(kind=kind, params=params, blocks=blocks)


# ---------------------------------------------------------------------------
# Product-quantizer code files


def _pack_indices(codes: np.ndarray, m: int) -> bytes:
    codes = np.ascontiguousarray(codes)
    if m == 8:
        return codes.astype(np.uint8).tobytes()
    # Generic path: m bits per index, LSB-first in the byte stream.
    shifts = np.arange(m, dtype=np.uint32)
    bits = (codes.astype(np.uint32).reshape(-1, 1) >> shifts) & 1
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def _unpack_indices(raw: bytes, n: int, s: int, m: int) -> np.ndarray:
    if m == 8:
        return np.frombuffer(raw, dtype=np.uint8).reshape(n, s).copy()
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    bits = bits[: n * s * m].reshape(n * s, m).astype(np.uint32)
    vals = (bits << np.arange(m, dtype=np.uint32)).sum(axis=1)
    dtype = np.uint8 if m <= 8 else np.uint16
    return vals.astype(dtype).reshape(n, s)


def write_pq_codes(
    path: str | Path, video_ids: Sequence[str], codes: np.ndarray, m: int
) -> None:
    """Write per-video PQ codes plus their video ids as a .vpqc file."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise DataError(f"codes must be 2-D (n_videos, S), got {codes.shape}")
    if len(video_ids) != codes.shape[0]:
        raise DataError("one video id required per code row")
    if len(set(video_ids)) != len(video_ids):
        raise DataError("video ids must be unique")
    if not (1 <= m <= 16):
        raise DataError(f"bits per index must be in [1, 16], got {m}")
    if codes.size and int(codes.max()) >= (1 << m):
        raise DataError(f"code index {int(codes.max())} out of range for m={m}")
    n, s = codes.shape
    parts = [
        MAGIC_PQ_CODES,
        struct.pack("<4I", FORMAT_VERSION, n, s, m),
        _pack_indices(codes, m),
    ]
    for vid in video_ids:
        enc = vid.encode("utf-8")
        parts.append(struct.pack("<I", len(enc)))
        parts.append(enc)
    atomic_write(path, b"".join(parts))


def read_pq_codes(path: str | Path) -> tuple[list[str], np.ndarray, int]:
    """Read a .vpqc file; returns (video_ids, codes (n, S), m)."""
    with open(path, "rb") as fh:
        _, n, s, m = _read_header(fh, MAGIC_PQ_CODES, 4, path)
        if not (1 <= m <= 16):
            raise FormatError(f"{path}: bits per index {m} out of range")
        nbytes = (n * s * m + 7) // 8
        raw = fh.read(nbytes)
        if len(raw) != nbytes:
            raise CorruptionError(f"{path}: truncated code payload")
        codes = _unpack_indices(raw, n, s, m)
        ids = []
        for _ in range(n):
            lraw = fh.read(4)
            if len(lraw) != 4:
                raise CorruptionError(f"{path}: truncated id table")
            (length,) = struct.unpack("<I", lraw)
            enc = fh.read(length)
            if len(enc) != length:
                raise CorruptionError(f"{path}: truncated id entry")
            ids.append(enc.decode("utf-8"))
        if fh.read(1):
            raise CorruptionError(f"{path}: trailing bytes after id table")
    if codes.size and int(codes.max()) >= (1 << m):
        raise CorruptionError(f"{path}: code index out of range for m={m}")
    return ids, codes, m


# ---------------------------------------------------------------------------
# Label and score CSVs


def _read_csv_rows(path: str | Path, expected_header: str) -> Iterator[list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != expected_header:
            raise FormatError(
                f"{path}: expected header {expected_header!r}, got {header!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
            yield parts


def read_labels(path: str | Path) -> dict[str, int]:
    """Read a label CSV into an ordered {video_id: 0-or-1} mapping."""
    labels: dict[str, int] = {}
    for vid, raw in _read_csv_rows(path, "video_id,label"):
        if raw not in ("0", "1"):
            raise DataError(f"{path}: label for {vid!r} must be 0 or 1, got {raw!r}")
        if vid in labels:
            raise DataError(f"{path}: duplicate video id {vid!r}")
        labels[vid] = int(raw)
    return labels


def write_labels(path: str | Path, labels: Mapping[str, int]) -> None:
    lines = ["video_id,label"]
    for vid, lab in labels.items():
        if lab not in (0, 1):
            raise DataError(f"label for {vid!r} must be 0 or 1, got {lab!r}")
        lines.append(f"{vid},{lab}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_scores(path: str | Path) -> dict[str, float]:
    """Read a score CSV into an ordered {video_id: score} mapping."""
    scores: dict[str, float] = {}
    for vid, raw in _read_csv_rows(path, "video_id,score"):
        try:
            val = float(raw)
        except ValueError as exc:
            raise DataError(f"{path}: bad score {raw!r} for {vid!r}") from exc
        if not np.isfinite(val):
            raise DataError(f"{path}: non-finite score for {vid!r}")
        if vid in scores:
            raise DataError(f"{path}: duplicate video id {vid!r}")
        scores[vid] = val
    return scores


def write_scores(path: str | Path, scores: Mapping[str, float]) -> None:
    lines = ["video_id,score"]
    for vid, val in scores.items():
        val = float(val)
        if not np.isfinite(val):
            raise DataError(f"score for {vid!r} is not finite")
        lines.append(f"{vid},{val!r}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_histogram_csv(
    path: str | Path,
    bin_edges: np.ndarray,
    pos_pos: np.ndarray,
    pos_neg: np.ndarray,
) -> None:
    """Emit a similarity histogram as CSV (bin_low, bin_high, pos_pos, pos_neg)."""
    lines = ["bin_low,bin_high,pos_pos,pos_neg"]
    for i in range(len(pos_pos)):
        lines.append(
            f"{float(bin_edges[i])!r},{float(bin_edges[i + 1])!r},"
            f"{float(pos_pos[i])!r},{float(pos_neg[i])!r}"
        )
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))

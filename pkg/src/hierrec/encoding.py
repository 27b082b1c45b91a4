"""Embedding sets, the HEMB file format, pooling and trainable projections.

The frozen image/text encoders are replaced by sources that hand over
precomputed (or synthetic) embeddings; the only learnable pieces are two
d x d projection maps and an optional log temperature.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import tensorops as T
from .taxonomy import SCORES_PER_ITEM, Taxonomy

HEMB_MAGIC = b"HEMB"
HEMB_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
NORM_TOL = 1e-9

MEMBER_FILES = {
    "H_V": "video.hemb",
    "H_A": "annotation.hemb",
    "H_C1": "items.hemb",
    "H_C2": "scores.hemb",
}


class EmbeddingFileError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "synthetic-seeded"  # file-loaded | synthetic-seeded | trainable-affine
    dim: int = 32
    seed: int = 0
    source: str | None = None

    def __post_init__(self):
        if self.kind not in ("file-loaded", "synthetic-seeded", "trainable-affine"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError("embedding dim must be >= 2")
        if self.kind == "file-loaded" and not self.source:
            raise ValueError("file-loaded encoder needs a source path")


def _check_unit(name: str, arr: np.ndarray) -> None:
    norms = np.linalg.norm(arr, axis=-1)
    bad = np.abs(norms - 1.0) > NORM_TOL
    if bad.any():
        idx = np.argwhere(bad)[0].tolist()
        raise ValueError(f"{name}: row {idx} has norm {norms[tuple(idx)]:.12f}, expected 1")


@dataclass(frozen=True)
class EmbeddingSet:
    H_V: np.ndarray
    H_A: np.ndarray
    H_C1: np.ndarray
    H_C2: np.ndarray

    def __post_init__(self):
        n, d = self.H_V.shape
        if self.H_A.shape != (n, d):
            raise ValueError(f"H_A shape {self.H_A.shape} does not match H_V {self.H_V.shape}")
        if self.H_C1.ndim != 2 or self.H_C1.shape[1] != d:
            raise ValueError(f"H_C1 shape {self.H_C1.shape} inconsistent with dim {d}")
        j = self.H_C1.shape[0]
        if self.H_C2.shape != (j, SCORES_PER_ITEM, d):
            raise ValueError(f"H_C2 shape {self.H_C2.shape}, expected {(j, SCORES_PER_ITEM, d)}")
        for name in MEMBER_FILES:
            arr = getattr(self, name)
            arr.setflags(write=False)
            _check_unit(name, arr)

    @property
    def n(self) -> int:
        return self.H_V.shape[0]

    @property
    def dim(self) -> int:
        return self.H_V.shape[1]

    @property
    def n_items(self) -> int:
        return self.H_C1.shape[0]

    def subset(self, index) -> "EmbeddingSet":
        index = np.asarray(index, dtype=np.int64)
        return EmbeddingSet(self.H_V[index].copy(), self.H_A[index].copy(), self.H_C1, self.H_C2)

    def equals(self, other: "EmbeddingSet") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in MEMBER_FILES)


@dataclass
class ProjectionParams:
    P_V: np.ndarray
    P_T: np.ndarray
    log_temperature: float = 0.0
    train_projections: bool = True
    train_temperature: bool = False

    def __post_init__(self):
        for name in ("P_V", "P_T"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise ValueError(f"{name} must be square, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    @classmethod
    def identity(cls, d: int, **kw) -> "ProjectionParams":
        return cls(np.eye(d), np.eye(d), **kw)

    @classmethod
    def init(cls, d: int, seed: int, sigma: float = 0.01, **kw) -> "ProjectionParams":
        rng = np.random.default_rng(seed)
        return cls(
            np.eye(d) + sigma * rng.standard_normal((d, d)),
            np.eye(d) + sigma * rng.standard_normal((d, d)),
            **kw,
        )

    def copy(self) -> "ProjectionParams":
        return ProjectionParams(
            self.P_V.copy(), self.P_T.copy(), self.log_temperature,
            self.train_projections, self.train_temperature,
        )

    def save(self, directory) -> None:
        """Write P_V.hemb, P_T.hemb and params.json (byte-stable for equal values)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_hemb(directory / "P_V.hemb", self.P_V)
        write_hemb(directory / "P_T.hemb", self.P_T)
        meta = {
            "log_temperature": self.log_temperature,
            "train_projections": self.train_projections,
            "train_temperature": self.train_temperature,
        }
        (directory / "params.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "ProjectionParams":
        directory = Path(directory)
        meta = json.loads((directory / "params.json").read_text())
        return cls(
            read_hemb(directory / "P_V.hemb"), read_hemb(directory / "P_T.hemb"),
            float(meta["log_temperature"]), bool(meta["train_projections"]),
            bool(meta["train_temperature"]),
        )


class Embedded(NamedTuple):
    """Differentiable view of an embedding set (all rows unit-norm)."""

    hv: T.Tensor
    ha: T.Tensor
    hc1: T.Tensor
    hc2: T.Tensor


def l2_normalize_rows(m):
    return T.l2_normalize_rows(T.as_tensor(m))


def temporal_pool(frames) -> T.Tensor:
    """Mean over the frame axis of an n x T x d stack, then L2-normalise."""
    frames = T.as_tensor(frames)
    if frames.ndim != 3 or frames.shape[1] < 1:
        raise ValueError(f"temporal_pool expects n x T x d with T >= 1, got {frames.shape}")
    pooled = T.mean_axis(frames, 1)
    norms = np.linalg.norm(pooled.data, axis=-1)
    if np.any(norms == 0):
        raise ValueError(f"sample {int(np.argmax(norms == 0))} pools to a zero vector")
    return T.l2_normalize_rows(pooled)


def project(raw: EmbeddingSet, pv: T.Tensor, pt: T.Tensor) -> Embedded:
    """Video rows go through ``pv``; annotation and both category levels share ``pt``."""
    d = raw.dim
    if pv.shape != (d, d) or pt.shape != (d, d):
        raise ValueError(f"projection shape {pv.shape}/{pt.shape} does not match dim {d}")
    j = raw.n_items
    hv = T.l2_normalize_rows(T.matmul(T.Tensor(raw.H_V), pv))
    ha = T.l2_normalize_rows(T.matmul(T.Tensor(raw.H_A), pt))
    hc1 = T.l2_normalize_rows(T.matmul(T.Tensor(raw.H_C1), pt))
    c2 = T.matmul(T.Tensor(raw.H_C2.reshape(j * SCORES_PER_ITEM, d)), pt)
    hc2 = T.reshape(T.l2_normalize_rows(c2), (j, SCORES_PER_ITEM, d))
    return Embedded(hv, ha, hc1, hc2)


def apply_projections(raw: EmbeddingSet, p: ProjectionParams) -> EmbeddingSet:
    e = project(raw, T.Tensor(p.P_V), T.Tensor(p.P_T))
    return EmbeddingSet(e.hv.data, e.ha.data, e.hc1.data, e.hc2.data)


def embedded_constant(es: EmbeddingSet) -> Embedded:
    return Embedded(T.Tensor(es.H_V), T.Tensor(es.H_A), T.Tensor(es.H_C1), T.Tensor(es.H_C2))


# ---------------------------------------------------------------------------
# HEMB files


def write_hemb(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    rows = int(np.prod(arr.shape[:-1])) if arr.ndim > 1 else 1
    dim = int(arr.shape[-1])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(HEMB_MAGIC, HEMB_VERSION, rows, dim))
        fh.write(arr.tobytes(order="C"))


def read_hemb(path) -> np.ndarray:
    """Read a HEMB file as a rows x dim float64 matrix."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise EmbeddingFileError(f"{path.name}: truncated header")
    magic, version, rows, dim = _HEADER.unpack_from(blob)
    if magic != HEMB_MAGIC:
        raise EmbeddingFileError(f"{path.name}: bad magic {magic!r}")
    if version != HEMB_VERSION:
        raise EmbeddingFileError(f"{path.name}: unsupported version {version}")
    expected = _HEADER.size + rows * dim * 8
    if len(blob) != expected:
        raise EmbeddingFileError(
            f"{path.name}: shape error, header says {rows}x{dim} "
            f"({expected} bytes) but file has {len(blob)} bytes"
        )
    return np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, dim).astype(np.float64)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_embedding_set(es: EmbeddingSet, directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for member, fname in MEMBER_FILES.items():
        arr = getattr(es, member)
        write_hemb(directory / fname, arr)
        entries[member] = {"file": fname, "shape": list(arr.shape), "sha256": _sha256(directory / fname)}
    manifest = {"format": "HEMB", "version": HEMB_VERSION, "members": entries}
    (directory / "embeddings.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_embedding_set(directory, taxonomy: Taxonomy | None = None) -> EmbeddingSet:
    directory = Path(directory)
    manifest = json.loads((directory / "embeddings.json").read_text())
    arrays = {}
    for member, entry in manifest["members"].items():
        path = directory / entry["file"]
        if not path.exists():
            raise EmbeddingFileError(f"{entry['file']}: missing")
        mat = read_hemb(path)
        if "sha256" in entry and _sha256(path) != entry["sha256"]:
            raise EmbeddingFileError(f"{entry['file']}: checksum mismatch")
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != mat.size or shape[-1] != mat.shape[1]:
            raise EmbeddingFileError(f"{entry['file']}: shape error, manifest {shape} vs file {mat.shape}")
        arrays[member] = mat.reshape(shape)
    missing = set(MEMBER_FILES) - set(arrays)
    if missing:
        raise EmbeddingFileError(f"manifest lacks members {sorted(missing)}")
    if taxonomy is not None:
        j = taxonomy.n_items
        if arrays["H_C1"].shape[0] != j:
            raise EmbeddingFileError(f"{MEMBER_FILES['H_C1']}: {arrays['H_C1'].shape[0]} rows, taxonomy has {j} items")
        if arrays["H_C2"].size // arrays["H_C2"].shape[-1] != SCORES_PER_ITEM * j:
            raise EmbeddingFileError(
                f"{MEMBER_FILES['H_C2']}: shape error, expected {SCORES_PER_ITEM * j} score rows"
            )
    return EmbeddingSet(**arrays)


# ---------------------------------------------------------------------------


def synthetic_embeddings(n: int, n_items: int, dim: int, seed: int) -> EmbeddingSet:
    rng = np.random.default_rng(seed)

    def unit(shape):
        x = rng.standard_normal(shape)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    return EmbeddingSet(
        unit((n, dim)), unit((n, dim)), unit((n_items, dim)), unit((n_items, SCORES_PER_ITEM, dim))
    )


def build_embeddings(spec: EncoderSpec, taxonomy: Taxonomy, source=None) -> EmbeddingSet:
    """Dispatch on the encoder kind.

    ``source`` is the sample count for synthetic-seeded, a base EmbeddingSet
    for trainable-affine, and ignored for file-loaded (``spec.source`` wins).
    """
    if spec.kind == "synthetic-seeded":
        n = int(source) if source is not None else 3 * taxonomy.n_leaves
        return synthetic_embeddings(n, taxonomy.n_items, spec.dim, spec.seed)
    if spec.kind == "file-loaded":
        es = read_embedding_set(spec.source, taxonomy)
        if es.dim != spec.dim:
            raise EmbeddingFileError(f"file dim {es.dim} does not match encoder dim {spec.dim}")
        return es
    if not isinstance(source, EmbeddingSet):
        raise ValueError("trainable-affine encoder needs a base EmbeddingSet as source")
    if source.dim != spec.dim:
        raise ValueError(f"base dim {source.dim} does not match encoder dim {spec.dim}")
    return apply_projections(source, ProjectionParams.init(spec.dim, spec.seed))

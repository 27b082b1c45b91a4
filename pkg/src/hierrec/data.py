"""Synthetic hierarchical-mixture datasets, dataset files and split construction."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoding import EmbeddingSet, read_embedding_set, temporal_pool, write_embedding_set
from .taxonomy import SCORES_PER_ITEM, Taxonomy, load_taxonomy


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n: int = 480
    n_items: int = 4
    dim: int = 32
    item_separation: float = 1.5
    score_separation: float = 1.0
    noise_sigma: float = 0.3
    annotation_noise_sigma: float = 0.3
    text_rotation: float = 1.0
    n_frames: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("need at least one item")
        if self.n < SCORES_PER_ITEM * self.n_items:
            raise ValueError(f"n={self.n} must be >= {SCORES_PER_ITEM * self.n_items} (one per leaf)")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        for name in ("item_separation", "score_separation", "noise_sigma",
                     "annotation_noise_sigma", "text_rotation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# closer score centres; separates hierarchical from flat scoring
HARD = {"score_separation": 0.5}
# identical category embeddings at both levels; accuracy must sit at chance
CHANCE = {"item_separation": 0.0, "score_separation": 0.0}


def preset(name: str, **overrides) -> SynthConfig:
    """``default``, ``hard`` or ``chance`` synthetic config, with overrides."""
    table = {"default": {}, "hard": HARD, "chance": CHANCE}
    if name not in table:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return SynthConfig(**{**table[name], **overrides})


@dataclass
class LabeledDataset:
    embeddings: EmbeddingSet
    labels: np.ndarray  # n x 2 (item, score)
    ids: list[str]
    taxonomy: Taxonomy
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1, 2)
        validate_labels(self.labels, self.taxonomy)
        if len(self.labels) != self.embeddings.n or len(self.ids) != self.embeddings.n:
            raise DatasetError(
                f"{len(self.labels)} labels / {len(self.ids)} ids for {self.embeddings.n} samples"
            )
        if self.embeddings.n_items != self.taxonomy.n_items:
            raise DatasetError("embedding item count does not match taxonomy")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def flat_labels(self) -> np.ndarray:
        return self.labels[:, 0] * SCORES_PER_ITEM + self.labels[:, 1]

    def equals(self, other: "LabeledDataset") -> bool:
        return (
            self.embeddings.equals(other.embeddings)
            and np.array_equal(self.labels, other.labels)
            and self.ids == other.ids
            and self.taxonomy == other.taxonomy
        )


def validate_labels(labels: np.ndarray, taxonomy: Taxonomy) -> None:
    bad = (labels[:, 0] < 0) | (labels[:, 0] >= taxonomy.n_items)
    bad |= (labels[:, 1] < 0) | (labels[:, 1] >= SCORES_PER_ITEM)
    if bad.any():
        row = int(np.argmax(bad))
        raise DatasetError(
            f"label row {row}: (item={labels[row, 0]}, score={labels[row, 1]}) invalid for "
            f"{taxonomy.n_items} items"
        )


def _directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    # orthonormal when the space allows it, otherwise random unit vectors
    if count <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return q[:, :count].T
    x = rng.standard_normal((count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def text_rotation_matrix(rng: np.random.Generator, dim: int, strength: float) -> np.ndarray:
    """Cayley transform of a random skew-symmetric generator scaled to ``strength``."""
    g = rng.standard_normal((dim, dim))
    a = (g - g.T) / np.sqrt(2 * dim) * strength
    eye = np.eye(dim)
    return np.linalg.solve(eye - a / 2, eye + a / 2)


def generate_synthetic(cfg: SynthConfig, taxonomy: Taxonomy) -> LabeledDataset:
    """Hierarchical Gaussian mixture in the unit sphere.

    Every leaf centre is ``base + item_offset + score_offset``, where item
    offsets are pairwise ``item_separation`` apart and score offsets within an
    item are pairwise ``score_separation`` apart. Each video is the temporal
    mean of ``n_frames`` noisy frames around its leaf centre; its annotation is
    the video embedding plus independent noise. Category embeddings are the
    normalised item and leaf centres.

    With ``text_rotation`` > 0 every text-side vector (annotations and both
    category levels) is additionally rotated by a seeded orthogonal map whose
    generator has that strength, so the two modalities start misaligned and the
    projections have something to learn.
    """
    if taxonomy.n_items != cfg.n_items:
        raise ValueError(f"config has {cfg.n_items} items, taxonomy has {taxonomy.n_items}")
    rng = np.random.default_rng(cfg.seed)
    j, d = cfg.n_items, cfg.dim
    dirs = _directions(rng, 1 + j + j * SCORES_PER_ITEM, d)
    base = dirs[0]
    item_off = dirs[1 : 1 + j] * (cfg.item_separation / np.sqrt(2))
    score_off = dirs[1 + j :].reshape(j, SCORES_PER_ITEM, d) * (cfg.score_separation / np.sqrt(2))
    item_centres = base + item_off
    leaf_centres = item_centres[:, None, :] + score_off

    def normalise(x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    flat = np.arange(cfg.n) % (j * SCORES_PER_ITEM)
    labels = np.stack([flat // SCORES_PER_ITEM, flat % SCORES_PER_ITEM], axis=1)
    centres = leaf_centres.reshape(-1, d)[flat]
    frames = centres[:, None, :] + cfg.noise_sigma * rng.standard_normal((cfg.n, cfg.n_frames, d))
    hv = temporal_pool(frames).data
    ha = normalise(hv + cfg.annotation_noise_sigma * rng.standard_normal((cfg.n, d)))
    rot = text_rotation_matrix(rng, d, cfg.text_rotation)
    emb = EmbeddingSet(
        hv, normalise(ha @ rot), normalise(item_centres @ rot), normalise(leaf_centres @ rot)
    )
    ids = [f"s{i:05d}" for i in range(cfg.n)]
    return LabeledDataset(emb, labels, ids, taxonomy, {"synth_config": asdict(cfg)})


# ---------------------------------------------------------------------------
# files


def write_dataset(ds: LabeledDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    emb_manifest = write_embedding_set(ds.embeddings, directory)
    with open(directory / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "item", "score"])
        for sid, (item, score) in zip(ds.ids, ds.labels.tolist()):
            w.writerow([sid, item, score])
    ds.taxonomy.save(directory / "taxonomy.json")
    manifest = {
        "n": ds.n,
        "n_items": ds.taxonomy.n_items,
        "dim": ds.embeddings.dim,
        "files": {
            "labels": "labels.csv",
            "taxonomy": "taxonomy.json",
            "embeddings": "embeddings.json",
        },
        "shapes": {k: v["shape"] for k, v in emb_manifest["members"].items()},
        "seed": ds.meta.get("synth_config", {}).get("seed"),
        "config": ds.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    if not (directory / "manifest.json").exists():
        raise DatasetError(f"{directory}: no manifest.json")
    manifest = json.loads((directory / "manifest.json").read_text())
    taxonomy = load_taxonomy(directory / manifest["files"]["taxonomy"])
    emb = read_embedding_set(directory, taxonomy)
    ids, labels = [], []
    with open(directory / manifest["files"]["labels"], newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "item", "score"]:
            raise DatasetError(f"labels.csv: unexpected columns {reader.fieldnames}")
        for row in reader:
            ids.append(row["id"])
            try:
                labels.append((int(row["item"]), int(row["score"])))
            except ValueError:
                raise DatasetError(f"labels.csv: non-integer label in row {row}") from None
    labels = np.array(labels, dtype=np.int64).reshape(-1, 2)
    if len(labels) != manifest["n"]:
        raise DatasetError(f"labels.csv has {len(labels)} rows, manifest says {manifest['n']}")
    return LabeledDataset(emb, labels, ids, taxonomy, manifest.get("config", {}))


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "full"  # full | few-shot | zero-shot
    k: int = 1
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "few-shot", "zero-shot"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")
        if self.mode == "few-shot" and self.k < 1:
            raise ValueError("few-shot K must be >= 1")


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}


def _round(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_splits(ds, spec: SplitSpec) -> Splits:
    """Index lists stratified by leaf (C2) label.

    ``ds`` is a LabeledDataset or an array of flat leaf labels. In few-shot
    mode the test indices are drawn first, independently of K, so runs with
    different K share one test set and nest their training sets.
    """
    flat = ds.flat_labels if isinstance(ds, LabeledDataset) else ds
    flat_labels = np.asarray(flat, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    train, val, test = [], [], []
    for c in np.unique(flat_labels):
        idx = rng.permutation(np.flatnonzero(flat_labels == c))
        m = len(idx)
        if spec.mode == "full":
            n_tr = _round(spec.train_fraction * m)
            n_va = min(_round(spec.val_fraction * m), m - n_tr)
            train += idx[:n_tr].tolist()
            val += idx[n_tr : n_tr + n_va].tolist()
            test += idx[n_tr + n_va :].tolist()
        elif spec.mode == "zero-shot":
            n_va = _round(spec.val_fraction * m)
            val += idx[:n_va].tolist()
            test += idx[n_va:].tolist()
        else:
            n_te = _round(spec.test_fraction * m)
            if spec.k > m - n_te:
                raise DatasetError(
                    f"class {c} has {m} samples ({n_te} held out for test), too few for K={spec.k}"
                )
            test += idx[:n_te].tolist()
            train += idx[n_te : n_te + spec.k].tolist()
            val += idx[n_te + spec.k :].tolist()
    return Splits(*(np.array(sorted(s), dtype=np.int64) for s in (train, val, test)))

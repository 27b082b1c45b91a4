"""Cross-modal and level-wise similarities, plus the InfoNCE objective."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensorops as T
from .tensorops import Tensor

SIM_EPS = 1e-9


class LevelSims(NamedTuple):
    S_V_C1: Tensor
    S_A_C1: Tensor
    S_VA_C1: Tensor
    S_V_C2: Tensor
    S_A_C2: Tensor
    S_VA_C2: Tensor


def cross_modal_similarity(hv: Tensor, ha: Tensor) -> Tensor:
    if hv.shape != ha.shape:
        raise T.ShapeError(f"video {hv.shape} and annotation {ha.shape} embeddings differ")
    return T.matmul(hv, T.transpose(ha))


def info_nce(s: Tensor, direction: str = "symmetric") -> Tensor:
    """Mean negative log-probability of the matched (diagonal) pair.

    ``row`` normalises each video's row over annotations, ``column`` each
    annotation's column over videos, ``symmetric`` averages the two.
    """
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise T.ShapeError(f"info_nce expects a square matrix, got {s.shape}")
    if direction == "row":
        return _row_nce(s)
    if direction == "column":
        return _row_nce(T.transpose(s))
    if direction == "symmetric":
        return T.scale(T.add(_row_nce(s), _row_nce(T.transpose(s))), 0.5)
    raise ValueError(f"unknown InfoNCE direction {direction!r}")


def _row_nce(s: Tensor) -> Tensor:
    return T.mean_all(T.sub(T.logsumexp_last(s), T.diagonal(s)))


def level_similarity(hx: Tensor, hc: Tensor) -> Tensor:
    """n x J for a J x d category matrix, n x J x 3 for a J x 3 x d tensor."""
    if hx.ndim != 2 or hc.shape[-1] != hx.shape[1]:
        raise T.ShapeError(f"level_similarity shape mismatch: {hx.shape} vs {hc.shape}")
    if hc.ndim == 2:
        return T.matmul(hx, T.transpose(hc))
    if hc.ndim == 3:
        j, k, d = hc.shape
        flat = T.matmul(hx, T.transpose(T.reshape(hc, (j * k, d))))
        return T.reshape(flat, (hx.shape[0], j, k))
    raise T.ShapeError(f"category embeddings must have 2 or 3 axes, got {hc.shape}")


def fuse_modalities(s_v: Tensor, s_a: Tensor) -> Tensor:
    if s_v.shape != s_a.shape:
        raise T.ShapeError(f"fuse_modalities shape mismatch: {s_v.shape} vs {s_a.shape}")
    return T.scale(T.add(s_v, s_a), 0.5)


def level_sims(hv: Tensor, ha: Tensor, hc1: Tensor, hc2: Tensor, modality: str = "both") -> LevelSims:
    """All six level similarity tensors.

    ``modality`` of ``video`` or ``text`` replaces the fused tensors by the
    single-modality similarity.
    """
    s_v1, s_a1 = level_similarity(hv, hc1), level_similarity(ha, hc1)
    s_v2, s_a2 = level_similarity(hv, hc2), level_similarity(ha, hc2)
    if modality == "both":
        f1, f2 = fuse_modalities(s_v1, s_a1), fuse_modalities(s_v2, s_a2)
    elif modality == "video":
        f1, f2 = s_v1, s_v2
    elif modality == "text":
        f1, f2 = s_a1, s_a2
    else:
        raise ValueError(f"unknown modality {modality!r}")
    return LevelSims(s_v1, s_a1, f1, s_v2, s_a2, f2)


def check_bounds(sims: LevelSims, eps: float = SIM_EPS) -> None:
    for name, t in sims._asdict().items():
        if np.any(np.abs(t.data) > 1 + eps):
            raise ValueError(f"{name} has entries outside [-1, 1]")

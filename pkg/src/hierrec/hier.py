"""Score-to-item / item-to-score interaction units and the top-down filter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensorops as T
from .fusion import LevelSims
from .taxonomy import SCORES_PER_ITEM
from .tensorops import Tensor


class S2IOut(NamedTuple):
    ms_c2: Tensor       # n x J, strongest score match per item
    pool_idx: np.ndarray
    ns_c1: Tensor       # n x J x d
    s_prime_c1: Tensor  # n x J
    s_hat_c1: Tensor    # n x J, rows on the simplex


class I2SOut(NamedTuple):
    ms_c1: Tensor       # n x J x 3
    ns_c2: Tensor       # n x J x 3 x d
    s_prime_c2: Tensor  # n x J x 3
    s_hat_c2: Tensor    # n x J x 3


@dataclass
class HierOutputs:
    S_hat_C1: Tensor
    S_hat_C2: Tensor
    mask: np.ndarray
    S_hat_C2_filtered: Tensor
    s2i: S2IOut | None = None
    i2s: I2SOut | None = None


@dataclass(frozen=True)
class HierPrediction:
    item: np.ndarray
    score: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.item * SCORES_PER_ITEM + self.score


def s2i(sims: LevelSims, hc1: Tensor, hv: Tensor) -> S2IOut:
    ms_c2, idx = T.max_pool_last(sims.S_VA_C2)
    ns_c1 = T.hadamard_scale(hc1, ms_c2)
    s_prime = T.batched_matvec(ns_c1, hv)
    s_hat = T.scale(T.add(T.softmax(sims.S_VA_C1), T.softmax(s_prime)), 0.5)
    return S2IOut(ms_c2, idx, ns_c1, s_prime, s_hat)


def i2s(sims: LevelSims, hc2: Tensor, hv: Tensor, c2_axis: str = "flat2") -> I2SOut:
    ms_c1 = T.broadcast_repeat(sims.S_VA_C1, SCORES_PER_ITEM)
    ns_c2 = T.hadamard_scale(hc2, ms_c1)
    s_prime = T.batched_matvec(ns_c2, hv)
    s_hat = T.scale(T.add(T.softmax(sims.S_VA_C2, c2_axis), T.softmax(s_prime, c2_axis)), 0.5)
    return I2SOut(ms_c1, ns_c2, s_prime, s_hat)


def filter_mask(s_hat_c1) -> np.ndarray:
    """Binary n x J x 3 mask selecting the scores of each row's top item."""
    data = s_hat_c1.data if isinstance(s_hat_c1, Tensor) else np.asarray(s_hat_c1, dtype=np.float64)
    top = np.argmax(data, axis=1)
    mask = np.zeros(data.shape + (SCORES_PER_ITEM,))
    mask[np.arange(data.shape[0]), top, :] = 1.0
    return mask


def apply_filter(s_hat_c2: Tensor, mask: np.ndarray) -> Tensor:
    if s_hat_c2.shape != mask.shape:
        raise T.ShapeError(f"filter shape mismatch: {s_hat_c2.shape} vs {mask.shape}")
    return T.mul(s_hat_c2, Tensor(mask))


def run_head(
    sims: LevelSims,
    hc1: Tensor,
    hc2: Tensor,
    query: Tensor,
    hier_units: bool = True,
    c2_axis: str = "flat2",
) -> HierOutputs:
    """Full hierarchical head, or the independent per-level head when ``hier_units`` is off.

    ``query`` is the sample embedding re-matched inside the units (the video
    embedding unless a single-modality variant says otherwise).
    """
    if hier_units:
        a = s2i(sims, hc1, query)
        b = i2s(sims, hc2, query, c2_axis)
        s1, s2 = a.s_hat_c1, b.s_hat_c2
    else:
        a = b = None
        s1 = T.softmax(sims.S_VA_C1)
        s2 = T.softmax(sims.S_VA_C2, c2_axis)
    mask = filter_mask(s1)
    return HierOutputs(s1, s2, mask, apply_filter(s2, mask), a, b)


def predict(outputs: HierOutputs) -> HierPrediction:
    s1 = outputs.S_hat_C1.data
    item = np.argmax(s1, axis=1)
    rows = np.arange(s1.shape[0])
    score = np.argmax(outputs.S_hat_C2_filtered.data[rows, item, :], axis=1)
    return HierPrediction(item.astype(np.int64), score.astype(np.int64))


def predict_independent(outputs: HierOutputs) -> np.ndarray:
    """Flat C2 argmax over all leaves of the unfiltered scores."""
    s2 = outputs.S_hat_C2.data
    return np.argmax(s2.reshape(s2.shape[0], -1), axis=1).astype(np.int64)

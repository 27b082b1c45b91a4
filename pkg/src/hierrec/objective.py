"""Ground-truth indicators, hierarchical KL losses and the total objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorops as T
from .taxonomy import SCORES_PER_ITEM
from .tensorops import Tensor


@dataclass(frozen=True)
class Targets:
    G_C1: np.ndarray  # n x J
    G_C2: np.ndarray  # n x J x 3
    items: np.ndarray
    scores: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.items * SCORES_PER_ITEM + self.scores


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for v in (self.lambda1, self.lambda2):
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss weights must be finite and non-negative")


def one_hot_targets(labels, n_items: int) -> Targets:
    """``labels`` is an n x 2 array (or sequence) of (item, score) pairs."""
    lab = np.asarray(labels, dtype=np.int64).reshape(-1, 2)
    items, scores = lab[:, 0], lab[:, 1]
    if np.any((items < 0) | (items >= n_items)) or np.any((scores < 0) | (scores >= SCORES_PER_ITEM)):
        raise IndexError(f"label out of range for {n_items} items x {SCORES_PER_ITEM} scores")
    n = lab.shape[0]
    g1 = np.zeros((n, n_items))
    g1[np.arange(n), items] = 1.0
    g2 = np.zeros((n, n_items, SCORES_PER_ITEM))
    g2[np.arange(n), items, scores] = 1.0
    return Targets(g1, g2, items, scores)


def _softmax_np(x: np.ndarray, axis: str) -> np.ndarray:
    return T.softmax(Tensor(x), axis).data


def _grouped(t: Tensor, axis: str) -> Tensor:
    # per-item groups become their own rows so kl_rows sees one simplex per row
    if t.ndim == 3 and axis == "last":
        return T.reshape(t, (t.shape[0] * t.shape[1], t.shape[2]))
    return t


def _kl(pred: Tensor, target: np.ndarray, direction: str, allow_zero_pred: bool = False) -> Tensor:
    tgt = Tensor(target)
    if direction == "pred_target":
        return T.kl_rows(pred, tgt, allow_zero_p=allow_zero_pred)
    if direction == "target_pred":
        if allow_zero_pred:
            raise ValueError("target_pred KL is undefined with a strictly masked prediction")
        return T.kl_rows(tgt, pred, allow_zero_p=True)
    raise ValueError(f"unknown KL direction {direction!r}")


def hier_losses(
    s_hat_c1: Tensor,
    s_hat_c2_filtered: Tensor,
    targets: Targets,
    kl_direction: str = "pred_target",
    target_mode: str = "softmax",
    c2_axis: str = "flat2",
    strict_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """KL between softmaxed predictions and (softmaxed) ground truth at both levels.

    The default direction is KL(prediction || target) with softmax-smoothed
    targets. ``target_mode='onehot'`` keeps hard indicators, which only makes
    sense with ``kl_direction='target_pred'``. Passing ``strict_mask`` renormalises
    the C2 prediction over the selected parent only instead of over zeros.
    """
    if s_hat_c1.shape != targets.G_C1.shape or s_hat_c2_filtered.shape != targets.G_C2.shape:
        raise T.ShapeError("prediction and target shapes differ")
    if target_mode == "softmax":
        t1 = _softmax_np(targets.G_C1, "last")
        t2 = _softmax_np(targets.G_C2, c2_axis)
    elif target_mode == "onehot":
        if kl_direction != "target_pred":
            raise ValueError("one-hot targets need kl_direction='target_pred'")
        if c2_axis != "flat2":
            raise ValueError("one-hot targets need the flattened C2 softmax")
        t1 = targets.G_C1
        t2 = targets.G_C2
    else:
        raise ValueError(f"unknown target mode {target_mode!r}")

    l1 = _kl(T.softmax(s_hat_c1), t1, kl_direction)
    if strict_mask is None:
        p2 = T.softmax(s_hat_c2_filtered, c2_axis)
        l2 = _kl(_grouped(p2, c2_axis), _grouped_np(t2, c2_axis), kl_direction)
    else:
        p2 = T.masked_softmax(s_hat_c2_filtered, strict_mask)
        l2 = _kl(p2, _softmax_np(targets.G_C2, "flat2") if target_mode == "softmax" else t2,
                 kl_direction, allow_zero_pred=True)
    return l1, l2


def _grouped_np(x: np.ndarray, axis: str) -> np.ndarray:
    if x.ndim == 3 and axis == "last":
        return x.reshape(x.shape[0] * x.shape[1], x.shape[2])
    return x


def cross_entropy(logits: Tensor, index: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[index] over rows."""
    return T.mean_all(T.sub(T.logsumexp_last(logits), T.take_along_last(logits, index)))


def ce_variant(s_hat_c1: Tensor, s_hat_c2_filtered: Tensor, targets: Targets) -> tuple[Tensor, Tensor]:
    n = s_hat_c2_filtered.shape[0]
    l1 = cross_entropy(s_hat_c1, targets.items)
    l2 = cross_entropy(T.reshape(s_hat_c2_filtered, (n, -1)), targets.flat)
    return l1, l2


def total_loss(l_cross, l1, l2, w: LossWeights):
    return l_cross + w.lambda1 * l1 + w.lambda2 * l2

"""Finite-difference checks for every differentiable op and three end-to-end paths."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensorops as T
from .encoding import EmbeddingSet, Embedded, project, temporal_pool
from .fusion import LevelSims, cross_modal_similarity, info_nce, level_sims
from .hier import apply_filter, filter_mask, i2s, s2i
from .objective import hier_losses, one_hot_targets
from .tensorops import Tensor

TOLERANCE = 1e-5
INV_TEMP = 10.0
CONDITION_RATIO = 1e-3


def _readout(out: Tensor, w: np.ndarray) -> Tensor:
    return T.sum_all(T.mul(out, Tensor(w)))


def _signed(rng, shape, low=0.5, high=1.5):
    # magnitudes bounded away from zero keep every gradient component well above
    # the finite-difference roundoff floor (about 1e-10 * |f| at h = 1e-6)
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, high, size=shape)


def _unit(rng, shape):
    x = _signed(rng, shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _toy_set(rng, n=6, j=3, d=5) -> EmbeddingSet:
    return EmbeddingSet(_unit(rng, (n, d)), _unit(rng, (n, d)), _unit(rng, (j, d)), _unit(rng, (j, 3, d)))


def cases(seed: int = 0) -> list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """(name, scalar function, input point) triples checked by :func:`run`."""
    rng = np.random.default_rng(seed)
    n, j, d = 5, 3, 4
    out: list = []

    def add(name, f, x):
        out.append((name, f, np.asarray(x, dtype=np.float64)))

    b = _signed(rng, (d, 3))
    w = _signed(rng, (n, 3))
    add("matmul[A]", lambda x: _readout(T.matmul(x, Tensor(b)), w), _signed(rng, (n, d)))
    a = _signed(rng, (n, d))
    add("matmul[B]", lambda x: _readout(T.matmul(Tensor(a), x), w), _signed(rng, (d, 3)))

    v = _signed(rng, (n, d))
    w3 = _signed(rng, (n, j))
    add("batched_matvec[T]", lambda x: _readout(T.batched_matvec(x, Tensor(v)), w3),
        _signed(rng, (n, j, d)))
    t3 = _signed(rng, (n, j, d))
    add("batched_matvec[v]", lambda x: _readout(T.batched_matvec(Tensor(t3), x), w3),
        _signed(rng, (n, d)))
    w4 = _signed(rng, (n, j, 3))
    t4 = _signed(rng, (n, j, 3, d))
    add("batched_matvec4[T]", lambda x: _readout(T.batched_matvec(x, Tensor(v)), w4),
        _signed(rng, (n, j, 3, d)))
    add("batched_matvec4[v]", lambda x: _readout(T.batched_matvec(Tensor(t4), x), w4),
        _signed(rng, (n, d)))

    ws = _signed(rng, (n, j, 3))
    add("softmax[last]", lambda x: _readout(T.softmax(x, "last"), ws), _signed(rng, (n, j, 3)))
    add("softmax[flat2]", lambda x: _readout(T.softmax(x, "flat2"), ws), _signed(rng, (n, j, 3)))
    mask = filter_mask(_signed(rng, (n, j)))
    add("masked_softmax", lambda x: _readout(T.masked_softmax(x, mask), ws), _signed(rng, (n, j, 3)))

    # well separated values so +-h never changes the argmax
    pool_x = rng.permutation(n * j * 3).reshape(n, j, 3) * 0.1
    add("max_pool_last", lambda x: _readout(T.max_pool_last(x)[0], w3), pool_x)
    add("broadcast_repeat", lambda x: _readout(T.broadcast_repeat(x, 3), ws), _signed(rng, (n, j)))

    ms = _signed(rng, (n, j))
    wh = _signed(rng, (n, j, d))
    add("hadamard_scale[H]", lambda x: _readout(T.hadamard_scale(x, Tensor(ms)), wh), _signed(rng, (j, d)))
    h = _signed(rng, (j, d))
    add("hadamard_scale[MS]", lambda x: _readout(T.hadamard_scale(Tensor(h), x), wh), _signed(rng, (n, j)))

    q = T.softmax(Tensor(_signed(rng, (n, j)))).data
    add("kl_rows[P]", lambda x: T.kl_rows(T.softmax(x), Tensor(q)), _signed(rng, (n, j)))
    p = T.softmax(Tensor(_signed(rng, (n, j)))).data
    add("kl_rows[Q]", lambda x: T.kl_rows(Tensor(p), T.softmax(x)), _signed(rng, (n, j)))
    q3 = T.softmax(Tensor(_signed(rng, (n, j, 3))), "flat2").data
    add("kl_rows[3d]", lambda x: T.kl_rows(T.softmax(x, "flat2"), Tensor(q3)), _signed(rng, (n, j, 3)))

    wn = _signed(rng, (n, d))
    add("l2_normalize_rows", lambda x: _readout(T.l2_normalize_rows(x), wn), _signed(rng, (n, d)))
    add("temporal_pool", lambda x: _readout(temporal_pool(x), wn), _signed(rng, (n, 4, d)))

    y = _signed(rng, (n, d))
    for direction in ("row", "column", "symmetric"):
        add(f"info_nce[{direction}]",
            lambda x, dr=direction: info_nce(T.matmul(x, T.transpose(Tensor(y))), dr),
            _signed(rng, (n, d)))

    raw = _toy_set(rng)
    pt = np.eye(raw.dim) + 0.3 * _signed(rng, (raw.dim, raw.dim))
    wv = _signed(rng, (raw.n, raw.dim))
    add("apply_projections[P_V]", lambda x: _readout(project(raw, x, Tensor(pt)).hv, wv),
        np.eye(raw.dim) + 0.3 * _signed(rng, (raw.dim, raw.dim)))
    wc2 = _signed(rng, (raw.n_items, 3, raw.dim))
    add("apply_projections[P_T]",
        lambda x: T.add(_readout(project(raw, Tensor(pt), x).hc2, wc2),
                        _readout(project(raw, Tensor(pt), x).ha, wv)),
        np.eye(raw.dim) + 0.3 * _signed(rng, (raw.dim, raw.dim)))

    out.extend(end_to_end_cases(seed))
    return out


def end_to_end_cases(seed: int = 0, inv_temp: float = INV_TEMP):
    """L_cross alone, L1 through the S2I unit, L2 through I2S and the filter.

    Similarities are scaled by ``inv_temp`` (a reachable learnable-temperature
    point); at unit temperature the losses are so flat that the smallest
    gradient entries sink into central-difference roundoff.
    """
    rng = np.random.default_rng(seed + 1)
    raw = _toy_set(rng, n=6, j=3, d=5)
    labels = np.stack([rng.integers(0, 3, raw.n), rng.integers(0, 3, raw.n)], axis=1)
    targets = one_hot_targets(labels, raw.n_items)
    pt = Tensor(np.eye(raw.dim) + 0.3 * _signed(rng, (raw.dim, raw.dim)))
    pv0 = np.eye(raw.dim) + 0.3 * _signed(rng, (raw.dim, raw.dim))
    k = Tensor(inv_temp)

    def embed(pv: Tensor) -> Embedded:
        return project(raw, pv, pt)

    def scaled_sims(e: Embedded) -> LevelSims:
        return LevelSims(*(T.mul(s, k) for s in level_sims(e.hv, e.ha, e.hc1, e.hc2)))

    def l_cross(pv):
        e = embed(pv)
        return info_nce(T.mul(cross_modal_similarity(e.hv, e.ha), k))

    def l1_s2i(pv):
        e = embed(pv)
        s_hat = s2i(scaled_sims(e), e.hc1, e.hv).s_hat_c1
        return T.kl_rows(T.softmax(s_hat), Tensor(T.softmax(Tensor(targets.G_C1)).data))

    def l2_i2s(pv):
        e = embed(pv)
        sims = scaled_sims(e)
        s_hat_c1 = s2i(sims, e.hc1, e.hv).s_hat_c1
        s_hat_c2 = i2s(sims, e.hc2, e.hv).s_hat_c2
        filtered = apply_filter(s_hat_c2, filter_mask(s_hat_c1))
        return hier_losses(s_hat_c1, filtered, targets)[1]

    return [
        ("e2e[L_cross]", l_cross, pv0),
        ("e2e[L1 via S2I]", l1_s2i, pv0),
        ("e2e[L2 via I2S+filter]", l2_i2s, pv0),
    ]


def well_conditioned(f, x: np.ndarray, ratio: float = CONDITION_RATIO) -> bool:
    """True if no gradient entry is nonzero yet tiny next to the largest one.

    Such entries sit near the 1e-8 floor of the relative error, where
    central-difference roundoff alone exceeds the tolerance. Judged from a
    coarse-step difference so the taped gradient plays no part in the choice.
    """
    g = np.abs(T.numerical_gradient(f, x, 1e-4))
    top = g.max()
    if top == 0.0:
        return True
    live = g[g > 0]
    return bool(live.min() >= ratio * top)


def conditioned_cases(seed: int = 0, max_redraws: int = 50):
    """One well-conditioned instance per case, redrawing from derived seeds."""
    chosen: dict = {}
    for attempt in range(max_redraws):
        for name, f, x in cases(seed + 100_003 * attempt):
            if name not in chosen and well_conditioned(f, x):
                chosen[name] = (name, f, x)
        if len(chosen) == len(CASE_NAMES):
            break
    missing = [n for n in CASE_NAMES if n not in chosen]
    if missing:
        raise RuntimeError(f"no well-conditioned instance for {missing}")
    return [chosen[n] for n in CASE_NAMES]


def run(seed: int = 0, h: float = 1e-6) -> list[tuple[str, float]]:
    return [(name, T.grad_check(f, x, h)) for name, f, x in conditioned_cases(seed)]


CASE_NAMES = [name for name, _, _ in cases(0)]

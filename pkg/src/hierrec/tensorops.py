"""Dense float64 tensors with a small reverse-mode tape.

Only the operations needed by the recognition head are provided. Each op
computes its forward value with numpy and, when a :class:`Tape` is active and
any input requires a gradient, records a vector-Jacobian closure. Gradients
are obtained with :meth:`Tape.gradient`, which walks the records in exact
reverse order of recording.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

MAX_AXES = 4


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > MAX_AXES:
            raise ShapeError(f"tensor has {arr.ndim} axes, at most {MAX_AXES} supported")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable operations while active (``with Tape() as t``)."""

    _active: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self.records.append((out, inputs, vjp))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Cotangents of scalar ``target`` with respect to each of ``sources``."""
        if target.data.size != 1:
            raise ShapeError("gradient target must be a scalar")
        cot: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, inputs, vjp in reversed(self.records):
            g = cot.get(id(out))
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in cot:
                    cot[key] = cot[key] + gi
                else:
                    cot[key] = gi
        return [cot.get(id(s), np.zeros_like(s.data)) for s in sources]


def _emit(value: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs and Tape._active:
        Tape._active[-1].record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError below
        v = np.exp(a.data)
    return _emit(v, (a,), lambda g: (g * v,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")
    return _emit(np.log(a.data), (a,), lambda g: (g / a.data,))


def sum_all(a: Tensor) -> Tensor:
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _emit(
        np.array(a.data.mean()),
        (a,),
        lambda g: (np.full(a.shape, float(g) / n),),
    )


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    return _emit(
        a.data.mean(axis=axis),
        (a,),
        lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,),
    )


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def diagonal(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal expects a square matrix, got {a.shape}")
    n = a.shape[0]

    def vjp(g):
        out = np.zeros(a.shape)
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _emit(np.diagonal(a.data).copy(), (a,), vjp)


def take_along_last(a: Tensor, index: np.ndarray) -> Tensor:
    """out[i] = a[i, index[i]] for a 2-D ``a``."""
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return _emit(a.data[rows, idx], (a,), vjp)


def logsumexp_last(a: Tensor) -> Tensor:
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=-1, keepdims=True)
    p = e / s
    return _emit((m + np.log(s))[..., 0], (a,), lambda g: (g[..., None] * p,))


# ---------------------------------------------------------------------------
# model ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def batched_matvec(t: Tensor, v: Tensor) -> Tensor:
    """out[i, ...] = sum_m t[i, ..., m] * v[i, m] for 3- or 4-axis ``t``."""
    if t.ndim not in (3, 4) or v.ndim != 2:
        raise ShapeError(f"batched_matvec expects n x J(xK) x d and n x d, got {t.shape}, {v.shape}")
    if t.shape[0] != v.shape[0] or t.shape[-1] != v.shape[1]:
        raise ShapeError(f"batched_matvec shape mismatch: {t.shape} vs {v.shape}")
    expand = (slice(None),) + (None,) * (t.ndim - 2) + (slice(None),)
    vb = v.data[expand]
    mid = tuple(range(1, t.ndim - 1))

    def vjp(g):
        gt = g[..., None]
        return gt * vb, (gt * t.data).sum(axis=mid)

    return _emit((t.data * vb).sum(axis=-1), (t, v), vjp)


def hadamard_scale(h: Tensor, ms: Tensor) -> Tensor:
    """Scale each category embedding by a per-sample score.

    ``h`` is J x d (or J x K x d) and ``ms`` is n x J (or n x J x K); the result
    is n x J x d (or n x J x K x d) with out[i, j, m] = h[j, m] * ms[i, j].
    """
    if h.ndim != ms.ndim or h.shape[:-1] != ms.shape[1:]:
        raise ShapeError(f"hadamard_scale shape mismatch: {h.shape} vs {ms.shape}")
    hb = h.data[None]
    mb = ms.data[..., None]

    def vjp(g):
        return (g * mb).sum(axis=0), (g * hb).sum(axis=-1)

    return _emit(hb * mb, (h, ms), vjp)


def softmax(a: Tensor, axis: str = "last") -> Tensor:
    """Max-stabilised softmax over the last axis or the flattened last two."""
    if axis == "last":
        groups = a.data
    elif axis == "flat2":
        if a.ndim < 2:
            raise ShapeError("flat2 softmax needs at least two axes")
        groups = a.data.reshape(a.shape[:-2] + (-1,))
    else:
        raise ValueError(f"unknown softmax axis spec {axis!r}")
    z = groups - groups.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        gg = g.reshape(p.shape)
        dz = p * (gg - (gg * p).sum(axis=-1, keepdims=True))
        return (dz.reshape(a.shape),)

    return _emit(p.reshape(a.shape), (a,), vjp)


def masked_softmax(a: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the flattened last two axes restricted to ``mask`` == 1.

    Entries outside the mask are exactly zero. Every group needs at least one
    active entry.
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise ShapeError(f"mask shape {m.shape} does not match {a.shape}")
    flat = a.data.reshape(a.shape[0], -1)
    fm = m.reshape(a.shape[0], -1)
    if not fm.any(axis=1).all():
        raise ValueError("masked_softmax: a group has no active entries")
    top = np.where(fm, flat, -np.inf).max(axis=1, keepdims=True)
    e = np.where(fm, np.exp(np.where(fm, flat - top, 0.0)), 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        gg = g.reshape(p.shape)
        dz = p * (gg - (gg * p).sum(axis=1, keepdims=True))
        return (dz.reshape(a.shape),)

    return _emit(p.reshape(a.shape), (a,), vjp)


def max_pool_last(t: Tensor) -> tuple[Tensor, np.ndarray]:
    """Max over the last axis; ties go to the lowest index.

    The argmax indices are returned and treated as constants in the backward
    pass: the cotangent flows only to the recorded position.
    """
    if t.ndim != 3 or t.shape[-1] < 1:
        raise ShapeError(f"max_pool_last expects n x J x K with K >= 1, got {t.shape}")
    idx = np.argmax(t.data, axis=-1)  # numpy returns the first maximum
    out = np.take_along_axis(t.data, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        full = np.zeros(t.shape)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _emit(out, (t,), vjp), idx


def broadcast_repeat(m: Tensor, k: int) -> Tensor:
    if k < 1:
        raise ValueError("repeat count must be >= 1")
    if m.ndim != 2:
        raise ShapeError("broadcast_repeat expects a matrix")
    out = np.repeat(m.data[..., None], k, axis=-1)
    return _emit(out, (m,), lambda g: (g.sum(axis=-1),))


def kl_rows(p: Tensor, q: Tensor, tol: float = 1e-6, allow_zero_p: bool = False) -> Tensor:
    """Mean over groups of sum p * ln(p / q).

    Groups are the rows of a matrix, or the flattened last two axes of a
    3-axis tensor. With ``allow_zero_p`` entries where p == 0 contribute 0.
    """
    if p.shape != q.shape:
        raise ShapeError(f"kl_rows shape mismatch: {p.shape} vs {q.shape}")
    pf = p.data.reshape(p.shape[0], -1)
    qf = q.data.reshape(q.shape[0], -1)
    if np.any(qf <= 0) or np.any(pf < 0) or (not allow_zero_p and np.any(pf <= 0)):
        raise ValueError("kl_rows requires strictly positive distributions")
    for name, arr in (("p", pf), ("q", qf)):
        if np.any(np.abs(arr.sum(axis=1) - 1.0) > tol):
            raise ValueError(f"kl_rows: rows of {name} do not sum to 1")
    live = pf > 0
    ratio = np.where(live, pf, 1.0) / qf
    terms = np.where(live, pf * np.log(ratio), 0.0)
    n = pf.shape[0]
    value = terms.sum() / n

    def vjp(g):
        gs = float(g) / n
        dp = np.where(live, np.log(ratio) + 1.0, 0.0) * gs
        dq = -pf / qf * gs
        return dp.reshape(p.shape), dq.reshape(q.shape)

    return _emit(np.array(value), (p, q), vjp)


def l2_normalize_rows(m: Tensor) -> Tensor:
    """Divide every vector along the last axis by its Euclidean norm."""
    norms = np.sqrt((m.data * m.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        bad = np.argwhere(norms[..., 0] == 0)[0].tolist()
        raise ValueError(f"cannot normalise zero row at index {bad}")
    u = m.data / norms

    def vjp(g):
        return ((g - u * (g * u).sum(axis=-1, keepdims=True)) / norms,)

    return _emit(u, (m,), vjp)


# ---------------------------------------------------------------------------
# finite-difference checking


def numerical_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x)).item()
        flat[i] = orig - h
        fm = f(Tensor(x)).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("finite-difference gradient is not finite")
    return grad


def analytic_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    with Tape() as tape:
        xt = Tensor(x, requires_grad=True)
        y = f(xt)
        (g,) = tape.gradient(y, [xt])
    return g


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-6) -> float:
    """Max component-wise relative error between tape and central differences."""
    g = analytic_gradient(f, x)
    g_fd = numerical_gradient(f, x, h)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g - g_fd) / denom))

"""Reverse-mode gradient engine over the package's numeric primitives.

A Tape records operations as they execute; backward() replays the record in
reverse, producing exact gradients for every leaf that asked for them. All
forward values are cached on the tape (no checkpointing; everything here is
desk-scale). ReLU-style kinks use subgradient 0, and log() is guarded below
LOG_GUARD so discriminator saturation cannot produce -inf.
"""

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

LOG_GUARD = 1e-12


class Var:
    """One tape node: a cached value plus the recipe for its adjoint."""

    __slots__ = ("value", "tape", "idx", "parents", "vjp", "needs", "name")

    def __init__(self, value, tape, idx, parents=(), vjp=None, needs=False, name=None):
        self.value = value
        self.tape = tape
        self.idx = idx
        self.parents = parents
        self.vjp = vjp
        self.needs = needs
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    def __init__(self):
        self._vars = []
        self._consumed = False

    def _record(self, value, parents, vjp, needs, name=None):
        if self._consumed:
            raise RuntimeError("tape already consumed by backward(); start a new one")
        v = Var(value, self, len(self._vars), parents, vjp, needs, name)
        self._vars.append(v)
        return v

    def leaf(self, value, name=None, requires_grad=True):
        arr = np.ascontiguousarray(value, dtype=np.float64)
        return self._record(arr, (), None, bool(requires_grad), name)

    def const(self, value, name=None):
        return self.leaf(value, name, requires_grad=False)

    def backward(self, loss):
        """Adjoint sweep from a scalar node; returns {leaf Var: gradient}."""
        if self._consumed:
            raise RuntimeError("backward() already ran on this tape")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ValueError("loss is not a node of this tape")
        if loss.value.shape != ():
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.isfinite(loss.value):
            raise NumericError("loss is not finite")
        self._consumed = True

        adjoints = {loss.idx: np.ones(())}
        grads = {}
        for i in range(loss.idx, -1, -1):
            adj = adjoints.pop(i, None)
            if adj is None:
                continue
            v = self._vars[i]
            if not v.parents:
                if v.needs:
                    grads[v] = adj
                continue
            if not v.needs:
                continue
            contribs = v.vjp(adj)
            for parent, g in zip(v.parents, contribs):
                if g is None or not parent.needs:
                    continue
                if g.shape != parent.value.shape:
                    raise ShapeError(
                        f"adjoint shape {g.shape} != value shape {parent.value.shape}"
                    )
                acc = adjoints.get(parent.idx)
                if acc is None:
                    adjoints[parent.idx] = g
                else:
                    np.add(acc, g, out=acc)
        return grads


def _same_tape(*vs):
    t = vs[0].tape
    for v in vs[1:]:
        if v.tape is not t:
            raise ValueError("operands recorded on different tapes")
    return t


def conv2d(x, w, b, stride=1, padding=1):
    tape = _same_tape(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    if wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"kernel {wv.shape} does not match input {xv.shape}")
    out = kernels.conv2d_forward(xv, wv, bv, stride, padding)
    H, W = xv.shape[1], xv.shape[2]
    kh, kw = wv.shape[2], wv.shape[3]

    def vjp(adj):
        adj = np.ascontiguousarray(adj)
        gx = (
            kernels.conv2d_backward_input(adj, wv, stride, padding, H, W)
            if x.needs
            else None
        )
        gw = (
            kernels.conv2d_backward_kernel(adj, xv, stride, padding, kh, kw)
            if w.needs
            else None
        )
        gb = adj.sum(axis=(1, 2)) if b.needs else None
        return gx, gw, gb

    return tape._record(out, (x, w, b), vjp, x.needs or w.needs or b.needs)


def relu(x):
    out = np.maximum(x.value, 0.0)

    def vjp(adj):
        if not x.needs:
            return (None,)
        return (adj * (x.value > 0),)

    return x.tape._record(out, (x,), vjp, x.needs)


def leaky_relu(x, alpha=0.2):
    xv = x.value
    out = np.where(xv > 0, xv, alpha * xv)

    def vjp(adj):
        if not x.needs:
            return (None,)
        return (np.where(xv > 0, adj, alpha * adj),)

    return x.tape._record(out, (x,), vjp, x.needs)


def avg_pool2(x):
    H, W = x.value.shape[1], x.value.shape[2]
    out = kernels.avgpool2_forward(x.value)
    return x.tape._record(
        out,
        (x,),
        lambda adj: (kernels.avgpool2_backward(np.ascontiguousarray(adj), H, W),),
        x.needs,
    )


def upsample_nearest2(x):
    out = kernels.upsample2_forward(x.value)
    return x.tape._record(
        out,
        (x,),
        lambda adj: (kernels.upsample2_backward(np.ascontiguousarray(adj)),),
        x.needs,
    )


def concat(a, b):
    tape = _same_tape(a, b)
    if a.value.shape[1:] != b.value.shape[1:]:
        raise ShapeError(f"spatial dims differ: {a.value.shape} vs {b.value.shape}")
    out = np.concatenate([a.value, b.value], axis=0)
    ca = a.value.shape[0]

    def vjp(adj):
        return (
            np.ascontiguousarray(adj[:ca]) if a.needs else None,
            np.ascontiguousarray(adj[ca:]) if b.needs else None,
        )

    return tape._record(out, (a, b), vjp, a.needs or b.needs)


def add(a, b):
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
    return tape._record(
        a.value + b.value,
        (a, b),
        lambda adj: (adj if a.needs else None, adj if b.needs else None),
        a.needs or b.needs,
    )


def sub(a, b):
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
    return tape._record(
        a.value - b.value,
        (a, b),
        lambda adj: (adj if a.needs else None, -adj if b.needs else None),
        a.needs or b.needs,
    )


def mul(a, b):
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return tape._record(
        av * bv,
        (a, b),
        lambda adj: (adj * bv if a.needs else None, adj * av if b.needs else None),
        a.needs or b.needs,
    )


def scale(x, s):
    s = float(s)
    return x.tape._record(
        x.value * s, (x,), lambda adj: (adj * s if x.needs else None,), x.needs
    )


def mul_const(x, c):
    """Elementwise multiply by a constant array broadcastable to x."""
    c = np.asarray(c, dtype=np.float64)
    out = x.value * c
    if out.shape != x.value.shape:
        raise ShapeError(f"constant {c.shape} broadcasts {x.value.shape} to {out.shape}")
    return x.tape._record(
        out, (x,), lambda adj: (adj * c if x.needs else None,), x.needs
    )


def rsub_const(c, x):
    """c - x for a scalar constant c."""
    c = float(c)
    return x.tape._record(
        c - x.value, (x,), lambda adj: (-adj if x.needs else None,), x.needs
    )


def asum(x):
    out = np.asarray(x.value.sum())
    return x.tape._record(
        out,
        (x,),
        lambda adj: (np.full(x.value.shape, float(adj)) if x.needs else None,),
        x.needs,
    )


def amean(x):
    n = x.value.size
    out = np.asarray(x.value.mean())
    return x.tape._record(
        out,
        (x,),
        lambda adj: (np.full(x.value.shape, float(adj) / n) if x.needs else None,),
        x.needs,
    )


def sumsq(x):
    xv = x.value
    out = np.asarray(np.vdot(xv, xv))
    return x.tape._record(
        out, (x,), lambda adj: (2.0 * float(adj) * xv if x.needs else None,), x.needs
    )


def absval(x):
    xv = x.value
    return x.tape._record(
        np.abs(xv),
        (x,),
        lambda adj: (adj * np.sign(xv) if x.needs else None,),
        x.needs,
    )


def log_guarded(x):
    xv = x.value
    out = np.log(np.maximum(xv, LOG_GUARD))
    return x.tape._record(
        out,
        (x,),
        lambda adj: (np.where(xv > LOG_GUARD, adj / xv, 0.0) if x.needs else None,),
        x.needs,
    )


def sigmoid(x):
    xv = x.value
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    out[~pos] = ex / (1.0 + ex)
    return x.tape._record(
        out, (x,), lambda adj: (adj * out * (1.0 - out) if x.needs else None,), x.needs
    )


def gram(x):
    """Channel Gram matrix: G[a,b] = sum_xy F_a(x,y) F_b(x,y)."""
    C = x.value.shape[0]
    F = x.value.reshape(C, -1)
    out = F @ F.T

    def vjp(adj):
        if not x.needs:
            return (None,)
        return (((adj + adj.T) @ F).reshape(x.value.shape),)

    return x.tape._record(out, (x,), vjp, x.needs)


def finite_diff_check(f, params, h=1e-5, sample=200, seed=0):
    """Compare analytic gradients of f against central differences.

    f(params, need_grad) returns (scalar value, {name: grad} or None).
    Checks every coordinate when the total count is at most `sample`;
    otherwise a seeded subset of at least `sample` coordinates, spread
    over all arrays. Returns (max relative error, per-parameter maxima).
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    value, grads = f(params, True)
    if not np.isfinite(value):
        raise NumericError("objective is not finite")

    total = sum(p.size for p in params.values())
    rng = np.random.default_rng(seed)
    plan = {}
    if total <= sample:
        for k, p in params.items():
            plan[k] = np.arange(p.size)
    else:
        weights = {k: p.size / total for k, p in params.items()}
        for k, p in params.items():
            n = min(p.size, max(1, int(round(sample * weights[k])) + 1))
            plan[k] = rng.choice(p.size, size=n, replace=False)

    worst = 0.0
    per_param = {}
    for k, idxs in plan.items():
        p = params[k]
        flat = p.reshape(-1)
        g = grads[k].reshape(-1)
        err_k = 0.0
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + h
            up, _ = f(params, False)
            flat[i] = keep - h
            dn, _ = f(params, False)
            flat[i] = keep
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise NumericError(f"objective not finite while probing {k}[{i}]")
            num = (up - dn) / (2.0 * h)
            ana = g[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > err_k:
                err_k = err
        per_param[k] = err_k
        worst = max(worst, err_k)
    return worst, per_param

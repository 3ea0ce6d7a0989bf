"""Reverse-mode differentiation over a linear tape of array operations.

Every `Var` created from tape-tracked operands is appended to its `Tape`, so
the tape order is already a topological order and `backward` is one reverse
sweep that visits each node once.  Plain numpy operands are treated as
constants.  The functions at the bottom (`matmul`, `einsum`, `leaky_relu`,
...) dispatch on their arguments, so model code runs unchanged on bare arrays
for inference and on `Var`s for training.
"""
from __future__ import annotations

from collections.abc import Callable, Mapping

import numpy as np

from .tensor import DimensionError, NonFiniteError, ParamStore


class Tape:
    """Recorded computation graph (the gradient tape)."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def __len__(self):
        return len(self.nodes)

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, "Var"]:
        """Register parameters as differentiable leaves."""
        out = {}
        for name, value in params.items():
            if name in self.leaves:
                raise KeyError(f"parameter {name!r} already on tape")
            v = Var(np.asarray(value, dtype=np.float64), self, ())
            self.leaves[name] = v
            out[name] = v
        return out


GradTape = Tape


class Var:
    __slots__ = ("value", "tape", "parents", "index")
    # make numpy defer to our reflected operators (ndarray - Var etc.)
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, tape: Tape, parents: tuple):
        # parents: tuple of (Var, vjp) with vjp mapping output cotangent -> parent cotangent
        self.value = value
        self.tape = tape
        self.parents = parents
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(value, inputs_and_vjps):
    """Create a node if any input is tracked; otherwise return the raw value."""
    tape = None
    parents = []
    for x, vjp in inputs_and_vjps:
        if isinstance(x, Var):
            tape = x.tape
            parents.append((x, vjp))
    if tape is None:
        return value
    return Var(value, tape, tuple(parents))


# ---------------------------------------------------------------- primitives

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _make(out, ((a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))))


def neg(a):
    return _make(-value_of(a), ((a, lambda g: -g),))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _make(av * bv, ((a, lambda g: _unbroadcast(g * bv, sa)),
                           (b, lambda g: _unbroadcast(g * av, sb))))


def reciprocal(a):
    av = value_of(a)
    out = 1.0 / av
    return _make(out, ((a, lambda g: -g * out * out),))


def square(a):
    av = value_of(a)
    return _make(av * av, ((a, lambda g: 2.0 * g * av),))


def exp(a):
    out = np.exp(value_of(a))
    return _make(out, ((a, lambda g: g * out),))


def log(a):
    av = value_of(a)
    return _make(np.log(av), ((a, lambda g: g / av),))


def abs_(a):
    av = value_of(a)
    sign = np.sign(av)
    return _make(np.abs(av), ((a, lambda g: g * sign),))


def clamp_min(a, floor: float):
    """max(a, floor); gradient passes only where a > floor."""
    av = value_of(a)
    keep = av > floor
    return _make(np.where(keep, av, floor), ((a, lambda g: g * keep),))


def leaky_relu(a, slope: float):
    av = value_of(a)
    d = np.where(av > 0, 1.0, slope)
    return _make(av * d, ((a, lambda g: g * d),))


def leaky_relu_grad(a, slope: float) -> np.ndarray:
    """Derivative of leaky_relu at `a` (a constant: piecewise-linear activation)."""
    return np.where(value_of(a) > 0, 1.0, slope)


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 1 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shapes {av.shape} @ {bv.shape}")
    out = av @ bv
    sa, sb = av.shape, bv.shape

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), sa) if av.ndim > 1 else g @ bv.T

    def gb(g):
        if av.ndim == 1:
            return np.outer(av, g)
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, sb)

    return _make(out, ((a, ga), (b, gb)))


def einsum(subscripts: str, a, b):
    """Two-operand einsum. Every index of an operand must appear in the output
    or in the other operand (true for all contractions used here)."""
    av, bv = value_of(a), value_of(b)
    ins, out_s = subscripts.replace(" ", "").split("->")
    sa_s, sb_s = ins.split(",")
    out = np.einsum(subscripts, av, bv, optimize=False)
    return _make(out, ((a, lambda g: np.einsum(f"{out_s},{sb_s}->{sa_s}", g, bv)),
                       (b, lambda g: np.einsum(f"{out_s},{sa_s}->{sb_s}", g, av))))


def sum_(a, axis=None, keepdims=False):
    av = value_of(a)
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make(av.sum(axis=axis, keepdims=keepdims), ((a, vjp),))


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    count = av.size if axis is None else int(np.prod([av.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    av = value_of(a)
    old = av.shape
    return _make(av.reshape(shape), ((a, lambda g: g.reshape(old)),))


def transpose(a, axes=None):
    av = value_of(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(av, axes), ((a, lambda g: np.transpose(g, inv)),))


def getitem(a, idx):
    av = value_of(a)
    shape = av.shape

    def vjp(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return z

    return _make(av[idx], ((a, vjp),))


def broadcast_to(a, shape):
    av = value_of(a)
    s = av.shape
    return _make(np.broadcast_to(av, shape).copy(), ((a, lambda g: _unbroadcast(g, s)),))


def concat(xs, axis=-1):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def split_vjp(i):
        return lambda g: np.split(g, sizes, axis=axis)[i]

    return _make(out, tuple((x, split_vjp(i)) for i, x in enumerate(xs)))


# ---------------------------------------------------------------- gradients

def backward(tape: Tape, output: Var, seed=None) -> ParamStore:
    """Gradient of `output` (contracted with `seed`) for every watched leaf.

    `seed` defaults to 1 for scalar outputs and must match the output shape
    otherwise.  Leaves the output does not depend on get zero gradients.
    """
    if not isinstance(output, Var) or output.tape is not tape:
        raise ValueError("output was not recorded on this tape")
    if seed is None:
        if output.value.size != 1:
            raise DimensionError(f"non-scalar output {output.shape} needs an explicit seed")
        seed = np.ones_like(output.value)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.value.shape:
        raise DimensionError(f"seed shape {seed.shape} != output shape {output.value.shape}")

    grads: list = [None] * (output.index + 1)
    grads[output.index] = seed
    nodes = tape.nodes
    for i in range(output.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        for parent, vjp in nodes[i].parents:
            pg = vjp(g)
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg
    out = ParamStore()
    for name, leaf in tape.leaves.items():
        g = grads[leaf.index] if leaf.index <= output.index else None
        out[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.value.shape)
    return out


def value_and_grad(fn: Callable, params: Mapping[str, np.ndarray], *args, **kwargs):
    """Evaluate scalar `fn(param_vars, *args)` on a fresh tape; return (value, grads).

    If `fn` returns a tuple, the first element is differentiated and the
    remaining elements are passed back with tape values unwrapped.
    """
    tape = Tape()
    pv = tape.watch(params)
    res = fn(pv, *args, **kwargs)
    extra = ()
    if isinstance(res, tuple):
        res, extra = res[0], res[1:]
    if not isinstance(res, Var):
        # output does not depend on any parameter
        val = float(np.asarray(res))
        return val, ParamStore((k, np.zeros_like(np.asarray(v, dtype=np.float64))) for k, v in params.items()), extra
    val = float(res.value)
    if not np.isfinite(val):
        raise NonFiniteError("loss is not finite")
    return val, backward(tape, res), extra


def fd_gradient(loss_fn: Callable[[ParamStore], float], params: ParamStore, epsilon: float = 1e-5) -> ParamStore:
    """Central finite-difference gradient, one coordinate at a time."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grads = ParamStore()
    work = params.copy()
    for name, v in work.items():
        g = np.zeros_like(v)
        flat = v.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = float(loss_fn(work))
            flat[i] = orig - epsilon
            fm = float(loss_fn(work))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"loss not finite while perturbing {name}[{i}]")
            g.reshape(-1)[i] = (fp - fm) / (2.0 * epsilon)
        grads[name] = g
    return grads

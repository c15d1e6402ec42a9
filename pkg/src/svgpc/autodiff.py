"""A small reverse-mode differentiation tape over numpy arrays.

Every primitive accepts plain arrays or :class:`Var` nodes. When none of the
inputs is a ``Var`` the primitive returns a plain ``ndarray`` and records
nothing, so model code written against this module doubles as an ordinary
numpy implementation.

    >>> def f(p):
    ...     return sum_(exp(p["x"]) * p["x"])
    >>> value, grads = value_and_grad(f, {"x": np.array([0.0, 1.0])})
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as la
from scipy import special


class Var:
    """A node on the tape: a value plus the vector-Jacobian products to its parents."""

    __slots__ = ("value", "parents", "grad")
    __array_priority__ = 1000  # make ndarray <op> Var dispatch to Var

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _node(out, *pairs):
    parents = tuple((p, vjp) for p, vjp in pairs if isinstance(p, Var))
    if not parents:
        return out
    return Var(out, parents)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    return _node(av + bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    return _node(av - bv,
                 (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    return _node(av * bv,
                 (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _node(out,
                 (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return _node(-value(a), (a, lambda g: -g))


def square(a):
    av = value(a)
    return _node(av * av, (a, lambda g: 2.0 * g * av))


def exp(a):
    out = np.exp(value(a))
    return _node(out, (a, lambda g: g * out))


def log(a):
    av = value(a)
    return _node(np.log(av), (a, lambda g: g / av))


def log1p(a):
    av = value(a)
    return _node(np.log1p(av), (a, lambda g: g / (1.0 + av)))


def sqrt(a):
    out = np.sqrt(value(a))
    return _node(out, (a, lambda g: 0.5 * g / out))


def sigmoid(a):
    out = special.expit(value(a))
    return _node(out, (a, lambda g: g * out * (1.0 - out)))


def softplus(a):
    """log(1 + exp(a)), overflow-safe."""
    av = value(a)
    return _node(np.logaddexp(0.0, av), (a, lambda g: g * special.expit(av)))


def maximum(a, floor: float):
    """Elementwise max against a constant floor; no gradient below the floor."""
    av = value(a)
    keep = av >= floor
    return _node(np.where(keep, av, floor), (a, lambda g: g * keep))


def norm_cdf(a):
    av = value(a)
    pdf = np.exp(-0.5 * av * av) / np.sqrt(2.0 * np.pi)
    return _node(special.ndtr(av), (a, lambda g: g * pdf))


def log_norm_cdf(a):
    av = value(a)
    out = special.log_ndtr(av)

    def vjp(g):
        # phi/Phi evaluated in log space stays finite far into the lower tail
        return g * np.exp(-0.5 * av * av - 0.5 * np.log(2.0 * np.pi) - out)

    return _node(out, (a, vjp))


# -- reductions and shape ---------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a, vjp))


def logsumexp(a, axis=-1):
    av = value(a)
    out = special.logsumexp(av, axis=axis)

    def vjp(g):
        weights = np.exp(av - np.expand_dims(out, axis))
        return np.expand_dims(g, axis) * weights

    return _node(out, (a, vjp))


def transpose(a):
    return _node(value(a).T, (a, lambda g: g.T))


def reshape(a, shape):
    av = value(a)
    return _node(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def getitem(a, index):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, index, g)
        return out

    return _node(av[index], (a, vjp))


def stack(items, axis=0):
    values = [value(x) for x in items]
    out = np.stack(values, axis=axis)
    pairs = []
    for i, x in enumerate(items):
        pairs.append((x, lambda g, i=i: np.take(g, i, axis=axis)))
    return _node(out, *pairs)


def diag_part(a):
    av = value(a)

    def vjp(g):
        return np.diag(g)

    return _node(np.diag(av).copy(), (a, vjp))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim == 1 or bv.ndim == 1:
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        out = a2 @ b2

        def vjp_a(g):
            g2 = g.reshape(out.shape)
            return (g2 @ b2.T).reshape(av.shape)

        def vjp_b(g):
            g2 = g.reshape(out.shape)
            return (a2.T @ g2).reshape(bv.shape)

        shape = out.shape
        if av.ndim == 1:
            shape = shape[1:]
        if bv.ndim == 1:
            shape = shape[:-1]
        return _node(out.reshape(shape), (a, vjp_a), (b, vjp_b))
    return _node(av @ bv, (a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))


def solve_triangular(L, B, trans: bool = False):
    """Solve L X = B (or L^T X = B with ``trans``) for lower-triangular L."""
    Lv, Bv = value(L), value(B)
    X = la.solve_triangular(Lv, Bv, lower=True, trans=1 if trans else 0, check_finite=False)

    def vjp_B(g):
        return la.solve_triangular(Lv, g, lower=True, trans=0 if trans else 1, check_finite=False)

    def vjp_L(g):
        gB = vjp_B(g)
        if trans:
            outer = -np.outer(X, gB) if X.ndim == 1 else -X @ gB.T
        else:
            outer = -np.outer(gB, X) if X.ndim == 1 else -gB @ X.T
        return np.tril(outer)

    return _node(X, (L, vjp_L), (B, vjp_B))


def cholesky(A, jitter: float = 0.0):
    """Lower Cholesky factor of A + jitter*I.

    The gradient is returned symmetrised, i.e. for perturbations of A that
    keep it symmetric.
    """
    Av = value(A)
    L = la.cholesky(Av + jitter * np.eye(Av.shape[0]), lower=True)

    def vjp(g):
        P = L.T @ np.tril(g)
        P = np.tril(P) - 0.5 * np.diag(np.diag(P))
        # S = L^{-T} P L^{-1}
        P_Linv = la.solve_triangular(L, P.T, lower=True, trans=1, check_finite=False).T
        S = la.solve_triangular(L, P_Linv, lower=True, trans=1, check_finite=False)
        return 0.5 * (S + S.T)

    return _node(L, (A, vjp))


# -- driver -----------------------------------------------------------------

def backward(out: Var) -> None:
    if out.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order = []
    seen = set()
    stack_ = [(out, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=float, copy=True).reshape(parent.value.shape)
            else:
                parent.grad = parent.grad + np.reshape(contrib, parent.value.shape)


def value_and_grad(fn, params: dict[str, np.ndarray]):
    """Evaluate ``fn(params)`` and its gradient with respect to every entry of ``params``."""
    leaves = {name: Var(np.array(v, dtype=float)) for name, v in params.items()}
    out = fn(leaves)
    if not isinstance(out, Var):
        return float(out), {name: np.zeros_like(v.value) for name, v in leaves.items()}
    backward(out)
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    return float(out.value), grads

"""Forward-mode automatic differentiation over small dense arrays.

A :class:`DualVector` carries a value array of shape ``S`` together with a
tangent array of shape ``S + (k,)`` holding ``k`` directional derivatives.
Seeding the tangent with the identity gives full Jacobians in one pass;
seeding with a single column gives Jacobian-vector products.

Leading axes of the value are free to act as a batch axis, so a kernel written
with ``...``-style contractions evaluates a whole homogeneous batch of
elements at once.

Supported primitives: ``+ - * /``, integer and real powers, :func:`sqrt`,
indexing, :func:`matvec` (constant matrix times dual vector), :func:`matmul`,
:func:`einsum`, :func:`stack`, ``sum``, ``reshape``.
Everything is evaluated in float64.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = [
    "DomainError",
    "DualVector",
    "einsum",
    "matvec",
    "matmul",
    "stack",
    "sqrt",
    "value_of",
    "jacobian_forward",
    "jvp",
    "batched_jacobian",
]


class DomainError(ArithmeticError):
    """Raised when a primitive is evaluated outside its differentiable domain."""


def _tangent_key(key):
    # the derivative axis is trailing, so an Ellipsis index must not swallow it
    if not isinstance(key, tuple):
        key = (key,)
    if any(k is Ellipsis for k in key):
        return key + (slice(None),)
    return key


class DualVector:
    """Value plus a block of directional derivatives."""

    __array_priority__ = 100.0

    def __init__(self, value, tangent):
        value = np.asarray(value, dtype=np.float64)
        tangent = np.asarray(tangent, dtype=np.float64)
        if tangent.shape[:-1] != value.shape:
            raise ValueError(
                f"tangent shape {tangent.shape} incompatible with value shape {value.shape}"
            )
        self.value = value
        self.tangent = tangent

    @classmethod
    def seed(cls, x, directions=None):
        """Lift ``x`` (shape ``(..., n)``) into a dual.

        With ``directions=None`` the tangent is the identity (one column per
        input). Otherwise ``directions`` has shape ``(..., n)`` or
        ``(..., n, k)``.
        """
        x = np.asarray(x, dtype=np.float64)
        if directions is None:
            tangent = np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()
        else:
            d = np.asarray(directions, dtype=np.float64)
            tangent = d[..., None] if d.shape == x.shape else d
        return cls(x, tangent)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def n_directions(self):
        return self.tangent.shape[-1]

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"DualVector(value={self.value!r}, n_directions={self.n_directions})"

    def __getitem__(self, key):
        return DualVector(self.value[key], self.tangent[_tangent_key(key)])

    def __neg__(self):
        return DualVector(-self.value, -self.tangent)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, DualVector):
            v = self.value + other.value
            t = self.tangent + other.tangent
            return DualVector(v, np.broadcast_to(t, v.shape + t.shape[-1:]))
        v = self.value + other
        return DualVector(v, np.broadcast_to(self.tangent, v.shape + self.tangent.shape[-1:]))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DualVector):
            v = self.value * other.value
            t = self.tangent * other.value[..., None] + self.value[..., None] * other.tangent
            return DualVector(v, t)
        other = np.asarray(other, dtype=np.float64)
        return DualVector(self.value * other, self.tangent * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualVector):
            return self * other._reciprocal()
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        if np.any(self.value == 0.0):
            raise DomainError("division by a dual number with zero value part")
        inv = 1.0 / self.value
        return DualVector(inv, -self.tangent * (inv * inv)[..., None])

    def __pow__(self, p):
        if isinstance(p, DualVector):
            raise TypeError("dual exponents are not in the supported primitive set")
        p = float(p)
        if p == 0.0:
            return DualVector(np.ones_like(self.value), np.zeros_like(self.tangent))
        if p == 1.0:
            return self
        if not p.is_integer() and np.any(self.value <= 0.0):
            raise DomainError("non-integer power of a non-positive value")
        if p < 1.0 and np.any(self.value == 0.0):
            raise DomainError("power with exponent < 1 is not differentiable at zero")
        v = self.value ** p
        d = p * self.value ** (p - 1.0)
        return DualVector(v, self.tangent * d[..., None])

    def sum(self, axis=None):
        if axis is None:
            axes = tuple(range(self.ndim))
        else:
            axes = tuple(a % self.ndim for a in np.atleast_1d(axis))
        return DualVector(self.value.sum(axis=axes), self.tangent.sum(axis=axes))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        v = self.value.reshape(shape)
        return DualVector(v, self.tangent.reshape(v.shape + (self.n_directions,)))

    def swapaxes(self, a, b):
        a, b = a % self.ndim, b % self.ndim
        return DualVector(self.value.swapaxes(a, b), self.tangent.swapaxes(a, b))


def value_of(x):
    """Primal part of a dual, or ``x`` itself for plain arrays."""
    return x.value if isinstance(x, DualVector) else np.asarray(x)


def sqrt(x):
    if not isinstance(x, DualVector):
        return np.sqrt(x)
    if np.any(x.value <= 0.0):
        raise DomainError("sqrt is not differentiable at non-positive values")
    r = np.sqrt(x.value)
    return DualVector(r, x.tangent * (0.5 / r)[..., None])


def stack(items, axis=0):
    """Stack duals (and constants) along a new value axis."""
    duals = [it for it in items if isinstance(it, DualVector)]
    if not duals:
        return np.stack(items, axis=axis)
    k = duals[0].n_directions
    ref_shape = np.broadcast_shapes(*(np.shape(value_of(it)) for it in items))
    vals, tans = [], []
    for it in items:
        if isinstance(it, DualVector):
            vals.append(np.broadcast_to(it.value, ref_shape))
            tans.append(np.broadcast_to(it.tangent, ref_shape + (k,)))
        else:
            vals.append(np.broadcast_to(np.asarray(it, dtype=np.float64), ref_shape))
            tans.append(np.zeros(ref_shape + (k,)))
    ndim = len(ref_shape) + 1
    ax = axis % ndim
    return DualVector(np.stack(vals, axis=ax), np.stack(tans, axis=ax))


def matvec(A, x):
    """``A @ x`` over trailing axes for a constant matrix stack ``A`` (``(..., m, n)``)."""
    A = np.asarray(A, dtype=np.float64)
    if not isinstance(x, DualVector):
        return (A @ np.asarray(x)[..., None])[..., 0]
    return DualVector((A @ x.value[..., None])[..., 0], A @ x.tangent)


def matmul(A, B):
    """Stacked matrix product ``A @ B`` where either operand may be a dual."""
    Av, Bv = value_of(A), value_of(B)
    v = Av @ Bv
    if not isinstance(A, DualVector) and not isinstance(B, DualVector):
        return v
    t = 0.0
    # move the derivative axis in front of the matrix axes so np.matmul broadcasts over it
    if isinstance(A, DualVector):
        t = t + np.moveaxis(A.tangent, -1, -3) @ Bv[..., None, :, :]
    if isinstance(B, DualVector):
        t = t + Av[..., None, :, :] @ np.moveaxis(B.tangent, -1, -3)
    return DualVector(v, np.moveaxis(t, -3, -1))


_TANGENT_LETTER = "Z"


def einsum(subscripts, *operands):
    """Multilinear contraction of plain arrays and duals (product rule per dual operand).

    Subscripts use the explicit ``'in,in->out'`` form and may contain ``...``.
    The letter ``Z`` is reserved for the derivative axis.
    """
    if "->" not in subscripts:
        raise ValueError("einsum on duals requires explicit output subscripts")
    if _TANGENT_LETTER in subscripts:
        raise ValueError(f"subscript letter {_TANGENT_LETTER!r} is reserved")
    inputs, output = subscripts.replace(" ", "").split("->")
    in_specs = inputs.split(",")
    if len(in_specs) != len(operands):
        raise ValueError("operand count does not match subscripts")

    values = [value_of(op) for op in operands]
    out_value = np.einsum(subscripts, *values)
    dual_pos = [i for i, op in enumerate(operands) if isinstance(op, DualVector)]
    if not dual_pos:
        return out_value

    tangent = None
    for i in dual_pos:
        specs = list(in_specs)
        specs[i] = specs[i] + _TANGENT_LETTER
        args = list(values)
        args[i] = operands[i].tangent
        term = np.einsum(",".join(specs) + "->" + output + _TANGENT_LETTER, *args)
        tangent = term if tangent is None else tangent + term
    return DualVector(out_value, tangent)


def jacobian_forward(f, x):
    """Dense Jacobian of ``f`` at ``x`` by a single multi-seed forward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a vector")
    out = f(DualVector.seed(x))
    if not isinstance(out, DualVector):
        return np.zeros((np.size(out), x.size))
    return out.tangent.reshape(-1, x.size).copy()


def jvp(f, x, v):
    """``J_f(x) @ v`` using one tangent column."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError("direction must match the shape of x")
    out = f(DualVector.seed(x, v))
    if not isinstance(out, DualVector):
        return np.zeros(np.shape(out))
    return out.tangent[..., 0].copy()


def batched_jacobian(f, xs, *, vectorized=True, workers=None):
    """Jacobians of ``f`` at every row of ``xs``.

    ``vectorized=True`` assumes ``f`` broadcasts over leading axes and runs one
    seeded pass over the whole batch. Otherwise each member is differentiated
    separately, optionally on a thread pool; output order always matches input
    order.
    """
    if isinstance(xs, (list, tuple)):
        shapes = {np.shape(x) for x in xs}
        if len(shapes) != 1:
            raise ValueError(f"heterogeneous batch shapes: {sorted(shapes)}")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise ValueError("xs must have shape (batch, n)")
    if vectorized:
        out = f(DualVector.seed(xs))
        return out.tangent.reshape(xs.shape[0], -1, xs.shape[1]).copy()
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            jacs = list(pool.map(lambda x: jacobian_forward(f, x), xs))
    else:
        jacs = [jacobian_forward(f, x) for x in xs]
    return np.stack(jacs)

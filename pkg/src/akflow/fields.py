"""Periodic grids, tensor fields and pointwise tensor algebra.

A TensorField stores its components as ``data[level, *grid_shape, *index_dims]``.
For ordinary grid fields there is a single level (the values).  Fields built
from a closed-form family may instead carry a truncated Taylor jet along one
grid axis: ``data[k]`` then holds the k-th derivative along ``jet_axis``.
All algebra below works on both kinds; products follow the Leibniz rule and
``partial`` along the jet axis shifts the levels down.  This is the only
module that knows how derivatives are taken.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial, prod

import numpy as np

UP, LO = "u", "l"

# central first-derivative weights c_k for offsets +-k
_STENCILS = {
    2: (1 / 2,),
    4: (2 / 3, -1 / 12),
    6: (3 / 4, -3 / 20, 1 / 60),
    8: (4 / 5, -1 / 5, 4 / 105, -1 / 280),
}


class ConfigurationError(ValueError):
    """Invalid grid, family or run configuration."""


class VarianceError(TypeError):
    """Index variance mismatch in a contraction or projection."""


class JetOrderError(RuntimeError):
    """A closed-form jet field ran out of derivative levels."""


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    resolutions: tuple
    fd_order: int = 4

    def __post_init__(self):
        object.__setattr__(self, "resolutions", tuple(int(r) for r in self.resolutions))
        if self.dim < 2 or self.dim % 2:
            raise ConfigurationError(f"dim must be even and >= 2, got {self.dim}")
        if len(self.resolutions) != self.dim:
            raise ConfigurationError(
                f"need {self.dim} resolutions, got {len(self.resolutions)}")
        if self.fd_order not in _STENCILS:
            raise ConfigurationError(f"fd_order must be one of 2,4,6,8, got {self.fd_order}")
        for ax, n in enumerate(self.resolutions):
            if n < 1:
                raise ConfigurationError(f"resolution on axis {ax} must be positive")
            if 1 < n <= self.fd_order:
                raise ConfigurationError(
                    f"axis {ax}: resolution {n} too small for fd_order {self.fd_order}")

    @property
    def shape(self):
        return self.resolutions

    @property
    def npoints(self):
        return prod(self.resolutions)

    def spacing(self, axis):
        return 2 * np.pi / self.resolutions[axis]

    def coordinate(self, axis):
        """Coordinate x_axis broadcast over the full grid."""
        n = self.resolutions[axis]
        x = np.arange(n) * (2 * np.pi / n)
        shape = [1] * self.dim
        shape[axis] = n
        return np.broadcast_to(x.reshape(shape), self.shape).copy()

    def with_resolution(self, axis, n):
        res = list(self.resolutions)
        res[axis] = n
        return PeriodicGrid(self.dim, tuple(res), self.fd_order)


class TensorField:
    __slots__ = ("grid", "data", "variance", "jet_axis")

    def __init__(self, grid, data, variance, jet_axis=None):
        data = np.asarray(data, dtype=float)
        variance = "".join(variance)
        if any(v not in (UP, LO) for v in variance):
            raise VarianceError(f"bad variance string {variance!r}")
        expected = tuple(grid.shape) + (grid.dim,) * len(variance)
        if data.shape[1:] != expected:
            raise ValueError(f"data shape {data.shape[1:]} != {expected}")
        self.grid = grid
        self.data = data
        self.variance = variance
        self.jet_axis = jet_axis

    # construction helpers
    @classmethod
    def from_values(cls, grid, values, variance):
        return cls(grid, np.asarray(values, dtype=float)[None], variance)

    @classmethod
    def constant(cls, grid, array, variance, like=None):
        """Spatially constant field; jet-compatible with ``like`` if given."""
        array = np.asarray(array, dtype=float)
        levels = 1 if like is None else like.levels
        jet_axis = None if like is None else like.jet_axis
        data = np.zeros((levels,) + tuple(grid.shape) + array.shape)
        data[0] = array
        return cls(grid, data, variance, jet_axis)

    @property
    def values(self):
        return self.data[0]

    @property
    def rank(self):
        return len(self.variance)

    @property
    def levels(self):
        return self.data.shape[0]

    @property
    def is_jet(self):
        return self.jet_axis is not None

    def _new(self, data, variance=None):
        return TensorField(self.grid, data, self.variance if variance is None else variance,
                           self.jet_axis)

    def truncate(self, levels):
        if levels >= self.levels:
            return self
        return self._new(self.data[:levels])

    def values_only(self):
        """Drop jet information, keeping an ordinary grid field."""
        return TensorField(self.grid, self.data[:1].copy(), self.variance)

    # arithmetic
    def _align(self, other):
        if not isinstance(other, TensorField):
            raise TypeError("expected TensorField")
        if other.variance != self.variance:
            raise VarianceError(f"variance {self.variance!r} vs {other.variance!r}")
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        if self.is_jet and other.is_jet and self.jet_axis != other.jet_axis:
            raise ValueError("jet axes differ")
        n = min(self.levels, other.levels)
        return self.data[:n], other.data[:n], self.jet_axis if self.is_jet else other.jet_axis

    def __add__(self, other):
        a, b, ax = self._align(other)
        return TensorField(self.grid, a + b, self.variance, ax)

    def __sub__(self, other):
        a, b, ax = self._align(other)
        return TensorField(self.grid, a - b, self.variance, ax)

    def __neg__(self):
        return self._new(-self.data)

    def __mul__(self, c):
        if isinstance(c, TensorField):
            raise TypeError("use ein() for products of fields")
        return self._new(self.data * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._new(self.data / float(c))

    def __repr__(self):
        return (f"TensorField(variance={self.variance!r}, grid={self.grid.resolutions}, "
                f"levels={self.levels})")


def _compositions(k, n):
    """All n-tuples of nonnegative ints summing to k."""
    if n == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in _compositions(k - first, n - 1):
            yield (first,) + rest


def ein(spec, *fields):
    """Einstein-summation product of tensor fields, pointwise over the grid.

    ``spec`` names tensor indices only, e.g. ``"ij,jk->ik"``; the grid axes are
    implicit.  Output variances are inherited from the inputs and every summed
    index must pair one upper with one lower slot.
    """
    lhs, out = spec.replace(" ", "").split("->")
    terms = lhs.split(",")
    if len(terms) != len(fields):
        raise ValueError(f"{spec!r} expects {len(terms)} operands, got {len(fields)}")
    seen = {}
    for term, f in zip(terms, fields):
        if len(term) != f.rank:
            raise ValueError(f"{spec!r}: term {term!r} does not match rank {f.rank}")
        for letter, var in zip(term, f.variance):
            seen.setdefault(letter, []).append(var)
    out_var = []
    for letter in out:
        if len(seen.get(letter, ())) != 1:
            raise ValueError(f"{spec!r}: output index {letter!r} must occur exactly once")
        out_var.append(seen[letter][0])
    for letter, vs in seen.items():
        if letter in out:
            continue
        if sorted(vs) != [LO, UP]:
            raise VarianceError(f"{spec!r}: index {letter!r} contracts {vs}")

    grid = fields[0].grid
    jet_axes = {f.jet_axis for f in fields if f.is_jet}
    if len(jet_axes) > 1:
        raise ValueError("jet axes differ")
    jet_axis = jet_axes.pop() if jet_axes else None
    levels = min(f.levels for f in fields)
    np_spec = ",".join("..." + t for t in terms) + "->..." + out
    n = len(fields)
    result = []
    for k in range(levels):
        acc = None
        for parts in _compositions(k, n):
            coef = factorial(k) // prod(factorial(p) for p in parts)
            ops = [f.data[p] for f, p in zip(fields, parts)]
            term = np.einsum(np_spec, *ops, optimize=n > 2)
            acc = coef * term if acc is None else acc + coef * term
        result.append(acc)
    return TensorField(grid, np.stack(result), "".join(out_var), jet_axis)


def leibniz_inverse(f):
    """Pointwise matrix inverse of a rank-2 field, jets included.

    For variance 'll' the result is 'uu' and vice versa, with
    inv^{ik} f_{kj} = delta^i_j.
    """
    if f.rank != 2 or f.variance[0] != f.variance[1]:
        raise VarianceError("inverse needs a rank-2 field with matching slot variances")
    a = f.data
    v0 = np.linalg.inv(a[0])
    out = [v0]
    if f.levels > 1:
        v1 = -v0 @ a[1] @ v0
        out.append(v1)
    if f.levels > 2:
        out.append(-v0 @ a[2] @ v0 - 2 * v1 @ a[1] @ v0)
    if f.levels > 3:
        raise JetOrderError("inverse implemented for jets up to second order")
    flipped = UP * 2 if f.variance[0] == LO else LO * 2
    return TensorField(f.grid, np.stack(out), flipped, f.jet_axis)


def _fd_first(values, axis, grid):
    """Periodic central difference of a values array along a grid axis."""
    n = grid.resolutions[axis]
    if n == 1:
        return np.zeros_like(values)
    h = grid.spacing(axis)
    out = np.zeros_like(values)
    for k, c in enumerate(_STENCILS[grid.fd_order], start=1):
        out += c * (np.roll(values, -k, axis=axis) - np.roll(values, k, axis=axis))
    return out / h


def partial_axis(f, axis):
    """Derivative of every component along one coordinate axis (same rank)."""
    grid = f.grid
    if not 0 <= axis < grid.dim:
        raise ConfigurationError(f"axis {axis} out of range")
    if f.is_jet:
        if f.levels < 2:
            raise JetOrderError("closed-form jets exhausted")
        if axis == f.jet_axis:
            return f._new(f.data[1:].copy())
        return f._new(np.zeros_like(f.data[1:]))
    n = grid.resolutions[axis]
    if 1 < n <= grid.fd_order:
        raise ConfigurationError(f"stencil of order {grid.fd_order} does not fit {n} points")
    return f._new(_fd_first(f.data[0], axis, grid)[None])


def partial(f):
    """Coordinate gradient: a new leading lower slot holding d/dx^i."""
    comps = [partial_axis(f, a).data for a in range(f.grid.dim)]
    data = np.stack(comps, axis=1 + f.grid.dim)
    return f._new(data, LO + f.variance)


def permute(f, spec):
    """Reorder slots, e.g. permute(t, 'ijk->kij')."""
    return ein(spec, f)


def contract(f, slot_a, slot_b):
    if slot_a == slot_b:
        raise ValueError("cannot contract a slot with itself")
    va, vb = f.variance[slot_a], f.variance[slot_b]
    if va == vb:
        raise VarianceError(f"cannot contract two {'upper' if va == UP else 'lower'} slots")
    letters = _letters(f.rank)
    letters[slot_b] = letters[slot_a]
    keep = "".join(c for i, c in enumerate(letters) if i not in (slot_a, slot_b))
    return ein("".join(letters) + "->" + keep, f)


def _letters(n, skip=""):
    pool = [c for c in "abcdefghijklmnopqrstuvwxyz" if c not in skip]
    return pool[:n]


def raise_lower(f, slot, s, to):
    """Raise (to='upper') or lower (to='lower') one slot using the metric of s."""
    target = UP if to in ("upper", UP) else LO
    if f.variance[slot] == target:
        raise VarianceError(f"slot {slot} is already {to}")
    letters = _letters(f.rank, skip="z")
    src = letters.copy()
    src[slot] = "z"
    metric = s.g_inv if target == UP else s.g
    return ein(f"{''.join(src)},z{letters[slot]}->{''.join(letters)}", f, metric)


def lower_all(f, s):
    for slot, v in enumerate(f.variance):
        if v == UP:
            f = raise_lower(f, slot, s, "lower")
    return f


def project_type(f, slot_pair, s, kind):
    """Split a pair of like slots into its J-invariant or J-anti-invariant part."""
    i, j = slot_pair
    if f.variance[i] != f.variance[j]:
        raise VarianceError("type projection needs two slots of the same variance")
    letters = _letters(f.rank, skip="yz")
    src = letters.copy()
    src[i], src[j] = "y", "z"
    dst = "".join(letters)
    if f.variance[i] == LO:
        spec = f"{letters[i]}y,{letters[j]}z,{''.join(src)}->{dst}"
    else:
        spec = f"y{letters[i]},z{letters[j]},{''.join(src)}->{dst}"
    rotated = ein(spec, s.J, s.J, f)
    anti = (f - rotated) * 0.5
    if kind == "twozero":
        return anti
    if kind == "oneone":
        return f - anti
    raise ValueError(f"kind must be 'oneone' or 'twozero', got {kind!r}")


def inner(a, b, s):
    """Pointwise metric inner product of two fields of equal rank."""
    a, b = lower_all(a, s), lower_all(b, s)
    if a.rank == 0:
        return ein(",->", a, b)
    la = _letters(a.rank)
    lb = [c.upper() for c in la]
    spec = ",".join(["".join(la), "".join(lb)] + [x + y for x, y in zip(la, lb)]) + "->"
    return ein(spec, a, b, *([s.g_inv] * a.rank))


def tensor_norm2(f, s):
    return inner(f, f, s)


def max_abs(f):
    return float(np.max(np.abs(f.values))) if f.values.size else 0.0


def l2_mean(f):
    v = f.values
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


def delta(grid, like=None, variance=LO + UP):
    return TensorField.constant(grid, np.eye(grid.dim), variance, like)

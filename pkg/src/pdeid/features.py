"""Feature dictionaries, numerical derivatives and per-patch regression systems."""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .patches import Patch
from .trajectory import SpaceTimeGrid, TrajectoryField

__all__ = [
    "Factor",
    "FeatureDescriptor",
    "Dictionary",
    "PatchRegressionSystem",
    "build_dictionary",
    "fornberg_weights",
    "fd_derivative",
    "FiniteDifferenceSource",
    "AnalyticSource",
    "evaluate_features",
    "assemble_patch_system",
]

_AXES = "xyz"


# --------------------------------------------------------------------------- descriptors


@dataclass(frozen=True)
class Factor:
    """``d^alpha field`` for a spatial multi-index ``alpha``."""

    field: str
    alpha: tuple[int, ...]

    @property
    def order(self) -> int:
        return sum(self.alpha)

    def sort_key(self):
        return (self.field, self.order, tuple(-a for a in self.alpha))

    def __str__(self):
        if not self.order:
            return self.field
        return self.field + "_" + "".join(_AXES[i] * a for i, a in enumerate(self.alpha))

    @classmethod
    def parse(cls, text: str, ndim: int) -> "Factor":
        m = re.fullmatch(r"([A-Za-z][A-Za-z0-9]*)(?:_([xyz]+))?", text.strip())
        if not m:
            raise ValueError(f"cannot parse factor {text!r}")
        suffix = m.group(2) or ""
        alpha = tuple(suffix.count(_AXES[i]) for i in range(ndim))
        if sum(alpha) != len(suffix):
            raise ValueError(f"factor {text!r} uses an axis beyond {ndim}D")
        return cls(m.group(1), alpha)


@dataclass(frozen=True)
class FeatureDescriptor:
    """A product of derivative factors, or ``sin``/``cos`` of a single factor."""

    factors: tuple[Factor, ...] = ()
    trig: tuple[str, Factor] | None = None

    def __post_init__(self):
        if bool(self.factors) == (self.trig is not None):
            raise ValueError("a descriptor has either factors or a trig tag, not both")
        if self.trig is not None and self.trig[0] not in ("sin", "cos"):
            raise ValueError(f"unsupported nonlinearity {self.trig[0]!r}")
        object.__setattr__(self, "factors", tuple(sorted(self.factors, key=Factor.sort_key)))

    @classmethod
    def product(cls, *factors: Factor) -> "FeatureDescriptor":
        return cls(tuple(factors))

    @classmethod
    def sin_of(cls, f: Factor) -> "FeatureDescriptor":
        return cls((), ("sin", f))

    @classmethod
    def cos_of(cls, f: Factor) -> "FeatureDescriptor":
        return cls((), ("cos", f))

    @property
    def max_order(self) -> int:
        if self.trig is not None:
            return self.trig[1].order
        return max(f.order for f in self.factors)

    def all_factors(self) -> tuple[Factor, ...]:
        return (self.trig[1],) if self.trig is not None else self.factors

    def __str__(self):
        if self.trig is not None:
            return f"{self.trig[0]}({self.trig[1]})"
        return "*".join(str(f) for f in self.factors)

    @classmethod
    def parse(cls, text: str, ndim: int = 1) -> "FeatureDescriptor":
        text = text.replace(" ", "")
        m = re.fullmatch(r"(sin|cos)\((.+)\)", text)
        if m:
            return cls((), (m.group(1), Factor.parse(m.group(2), ndim)))
        return cls(tuple(Factor.parse(p, ndim) for p in text.split("*")))


class Dictionary:
    """Ordered, duplicate-free list of feature descriptors (indices are 0-based)."""

    def __init__(self, entries: Iterable[FeatureDescriptor], ndim: int = 1):
        self.entries = tuple(entries)
        self.ndim = ndim
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("dictionary contains duplicate descriptors")
        self._index = {d: i for i, d in enumerate(self.entries)}

    @property
    def K(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def index(self, d: FeatureDescriptor | str) -> int:
        if isinstance(d, str):
            d = FeatureDescriptor.parse(d, self.ndim)
        return self._index[d]

    @property
    def names(self) -> list[str]:
        return [str(d) for d in self.entries]

    @property
    def max_order(self) -> int:
        return max(d.max_order for d in self.entries)

    @property
    def fields(self) -> list[str]:
        seen = []
        for d in self.entries:
            for f in d.all_factors():
                if f.field not in seen:
                    seen.append(f.field)
        return seen

    def to_json(self) -> str:
        return json.dumps({"ndim": self.ndim, "features": self.names})

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        data = json.loads(text)
        if isinstance(data, list):
            data = {"ndim": 1, "features": data}
        nd = int(data.get("ndim", 1))
        return cls((FeatureDescriptor.parse(s, nd) for s in data["features"]), nd)


def _multi_indices(ndim: int, order: int) -> list[tuple[int, ...]]:
    out = [a for a in itertools.product(range(order + 1), repeat=ndim) if sum(a) == order]
    return sorted(out, reverse=True)


def build_dictionary(field_names: Sequence[str], max_derivative_order: int,
                     max_product_terms: int, trig_terms: Sequence[FeatureDescriptor | str] = (),
                     ndim: int = 1) -> Dictionary:
    """All products of 1..``max_product_terms`` base derivatives, then ``trig_terms``.

    Base terms are ``d^alpha f`` for every field ``f`` and ``|alpha| <= max_derivative_order``,
    ordered by field, then derivative order.
    """
    if not field_names:
        raise ValueError("at least one field is required")
    if max_derivative_order < 0 or max_product_terms < 1:
        raise ValueError("need max_derivative_order >= 0 and max_product_terms >= 1")
    base = [Factor(f, a) for f in field_names for p in range(max_derivative_order + 1)
            for a in _multi_indices(ndim, p)]
    entries = []
    for deg in range(1, max_product_terms + 1):
        for combo in itertools.combinations_with_replacement(base, deg):
            entries.append(FeatureDescriptor(tuple(combo)))
    for t in trig_terms:
        entries.append(FeatureDescriptor.parse(t, ndim) if isinstance(t, str) else t)
    return Dictionary(entries, ndim)


# --------------------------------------------------------------------------- finite differences


@lru_cache(maxsize=None)
def fornberg_weights(offsets: tuple[float, ...], order: int) -> np.ndarray:
    """Weights of the ``order``-th derivative at 0 on the given node offsets (unit spacing)."""
    z = np.asarray(offsets, dtype=float)
    n = len(z)
    if order >= n:
        raise ValueError("need more nodes than the derivative order")
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, z[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, z[i]
        for j in range(i):
            c3 = z[i] - z[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    w = c[:, order]
    w.setflags(write=False)
    return w


def central_halfwidth(order: int, accuracy: int) -> int:
    """Half-width of the central stencil of the given even accuracy."""
    return (2 * ((order + 1) // 2) - 1 + accuracy) // 2


def fd_derivative(f: np.ndarray, grid: SpaceTimeGrid, axis: int, order: int,
                  accuracy: int | None = None) -> np.ndarray:
    """Finite-difference derivative of ``f`` along ``axis`` (``grid.ndim`` is time).

    Central stencils of the given accuracy (default 4 in space, 2 in time);
    periodic axes wrap, other axes switch to one-sided stencils of the same
    accuracy near the ends.
    """
    f = np.asarray(f, dtype=float)
    if order < 1:
        raise ValueError("derivative order must be >= 1")
    if not 0 <= axis <= grid.ndim:
        raise ValueError(f"axis {axis} out of range for a {grid.ndim}D grid")
    is_time = axis == grid.ndim
    if accuracy is None:
        accuracy = 2 if is_time else 4
    h = grid.dt if is_time else grid.dx[axis]
    periodic = False if is_time else grid.periodic[axis]
    n = f.shape[axis]
    hw = central_halfwidth(order, accuracy)
    if 2 * hw + 1 > n:
        raise ValueError(f"stencil of width {2 * hw + 1} exceeds axis length {n}")
    w = fornberg_weights(tuple(range(-hw, hw + 1)), order) / h**order
    fm = np.moveaxis(f, axis, 0)
    if periodic:
        out = sum(wi * np.roll(fm, -s, axis=0) for s, wi in zip(range(-hw, hw + 1), w) if wi)
        return np.moveaxis(out, 0, axis)
    out = np.zeros_like(fm)
    inner = slice(hw, n - hw)
    for s, wi in zip(range(-hw, hw + 1), w):
        if wi:
            out[inner] += wi * fm[hw + s:n - hw + s]
    width = order + accuracy
    if width > n:
        raise ValueError(f"one-sided stencil of width {width} exceeds axis length {n}")
    for i in list(range(hw)) + list(range(n - hw, n)):
        start = min(max(i - hw, 0), n - width)
        offsets = tuple(range(start - i, start - i + width))
        wb = fornberg_weights(offsets, order) / h**order
        out[i] = np.tensordot(wb, fm[start:start + width], axes=(0, 0))
    return np.moveaxis(out, 0, axis)


# --------------------------------------------------------------------------- derivative sources


class FiniteDifferenceSource:
    """Derivatives of an observed trajectory by finite differences, cached per (field, alpha)."""

    def __init__(self, traj: TrajectoryField, space_accuracy: int = 4, time_accuracy: int = 2):
        self.traj = traj
        self.grid = traj.grid
        self.space_accuracy = space_accuracy
        self.time_accuracy = time_accuracy
        self._cache: dict = {}

    def halo(self, max_order: int) -> tuple[int, ...]:
        """Clearance needed around a point: space axes (for ``max_order``), then time."""
        hw = max((central_halfwidth(p, self.space_accuracy) for p in range(1, max_order + 1)),
                 default=0)
        return (hw,) * self.grid.ndim + (central_halfwidth(1, self.time_accuracy),)

    def _array(self, field: str, alpha: tuple[int, ...]) -> np.ndarray:
        key = (field, alpha)
        if key not in self._cache:
            arr = self.traj[field]
            for ax, a in enumerate(alpha):
                if a:
                    arr = fd_derivative(arr, self.grid, ax, a, self.space_accuracy)
            self._cache[key] = arr
        return self._cache[key]

    def _time_array(self, field: str) -> np.ndarray:
        key = (field, "t")
        if key not in self._cache:
            self._cache[key] = fd_derivative(self.traj[field], self.grid, self.grid.ndim, 1,
                                             self.time_accuracy)
        return self._cache[key]

    def space(self, field: str, alpha: tuple[int, ...], points: np.ndarray) -> np.ndarray:
        return self._array(field, tuple(alpha))[tuple(points.T)]

    def time(self, field: str, points: np.ndarray) -> np.ndarray:
        return self._time_array(field)[tuple(points.T)]

    def check(self, points: np.ndarray, max_order: int) -> None:
        """Reject points whose central stencils leave a non-periodic axis."""
        halo = self.halo(max_order)
        g = self.grid
        for ax in range(g.ndim + 1):
            periodic = ax < g.ndim and g.periodic[ax]
            if periodic:
                continue
            n = g.shape[ax]
            lo, hi = points[:, ax].min(), points[:, ax].max()
            if lo - halo[ax] < 0 or hi + halo[ax] >= n:
                name = "t" if ax == g.ndim else g.axis_name(ax)
                raise ValueError(
                    f"point too close to the {name} boundary for a stencil of half-width "
                    f"{halo[ax]}")


class AnalyticSource:
    """Exact derivatives from closed-form callables, evaluated only where requested.

    ``space_fn(field, alpha, coords, t)`` and ``time_fn(field, coords, t)``
    receive physical coordinates (``coords`` is a tuple of arrays, one per
    space axis).
    """

    def __init__(self, grid: SpaceTimeGrid, space_fn: Callable, time_fn: Callable):
        self.grid = grid
        self.space_fn = space_fn
        self.time_fn = time_fn

    def _coords(self, points: np.ndarray):
        g = self.grid
        xs = tuple(g.space_extent[i][0] + g.dx[i] * points[:, i] for i in range(g.ndim))
        t = g.time_extent[0] + g.dt * points[:, -1]
        return xs, t

    def space(self, field, alpha, points):
        xs, t = self._coords(points)
        return np.asarray(self.space_fn(field, tuple(alpha), xs, t), dtype=float)

    def time(self, field, points):
        xs, t = self._coords(points)
        return np.asarray(self.time_fn(field, xs, t), dtype=float)

    def check(self, points, max_order):
        return None


def _as_source(obj):
    return FiniteDifferenceSource(obj) if isinstance(obj, TrajectoryField) else obj


def _factor_column(src, f: Factor, points, memo: dict) -> np.ndarray:
    if f not in memo:
        memo[f] = src.space(f.field, f.alpha, points)
    return memo[f]


def evaluate_features(source, dictionary: Dictionary, points) -> np.ndarray:
    """Feature matrix ``(len(points), K)`` at grid indices ``points``.

    ``source`` is a :class:`TrajectoryField` (finite differences) or any
    derivative source such as :class:`FiniteDifferenceSource` or
    :class:`AnalyticSource`.
    """
    src = _as_source(source)
    points = np.atleast_2d(np.asarray(points, dtype=int))
    src.check(points, dictionary.max_order)
    memo: dict = {}
    F = np.empty((points.shape[0], dictionary.K))
    for k, d in enumerate(dictionary):
        if d.trig is not None:
            fn = np.sin if d.trig[0] == "sin" else np.cos
            F[:, k] = fn(_factor_column(src, d.trig[1], points, memo))
        else:
            col = np.ones(points.shape[0])
            for f in d.factors:
                col = col * _factor_column(src, f, points, memo)
            F[:, k] = col
    return F


@dataclass
class PatchRegressionSystem:
    """Local regression data of one patch: ``target ~ F @ c``.

    ``sobolev`` holds the pure derivative columns ``d^alpha u`` with
    ``1 <= |alpha| <= P_max`` (orders in ``sobolev_orders``) used by the Sobolev
    filter, and ``values`` the raw field samples used by the variation test.
    """

    patch: Patch
    F: np.ndarray
    target: np.ndarray
    points: np.ndarray
    coords: np.ndarray
    field: str
    sobolev: np.ndarray
    sobolev_orders: tuple[int, ...]
    values: np.ndarray

    @property
    def id(self) -> int:
        return self.patch.id

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def center_coords(self) -> tuple[float, ...]:
        return self._grid_center

    def scaled(self, factor: float) -> "PatchRegressionSystem":
        """Same system with the target multiplied by ``factor``."""
        out = PatchRegressionSystem(self.patch, self.F, factor * self.target, self.points,
                                    self.coords, self.field, self.sobolev, self.sobolev_orders,
                                    self.values)
        out._grid_center = self._grid_center
        return out


def assemble_patch_system(source, patch: Patch, dictionary: Dictionary, target: str = "u",
                          sobolev_order: int | None = None,
                          value_fields: Sequence[str] | None = None) -> PatchRegressionSystem:
    """Assemble features and the time derivative of ``target`` over every patch point."""
    src = _as_source(source)
    grid = src.grid
    points = patch.points(grid)
    if points.shape[0] == 0:
        raise ValueError("degenerate patch with no points")
    F = evaluate_features(src, dictionary, points)
    ut = src.time(target, points)
    fields = list(value_fields) if value_fields is not None else dictionary.fields
    p_max = dictionary.max_order if sobolev_order is None else sobolev_order
    cols, orders = [], []
    for name in fields:
        for p in range(1, p_max + 1):
            for a in _multi_indices(grid.ndim, p):
                cols.append(src.space(name, a, points))
                orders.append(p)
    sob = np.column_stack(cols) if cols else np.zeros((points.shape[0], 0))
    vals = np.column_stack([src.space(name, (0,) * grid.ndim, points) for name in fields])
    coords = np.array([grid.coordinates(p) for p in points])
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(ut))):
        raise ValueError(f"non-finite entries in the system of patch {patch.id}")
    sys = PatchRegressionSystem(patch, F, ut, points, coords, target, sob, tuple(orders), vals)
    sys._grid_center = grid.coordinates(patch.center)
    return sys

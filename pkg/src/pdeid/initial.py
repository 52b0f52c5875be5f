"""Initial-condition families: random Fourier series, bump, square/hat/int, sinusoid sums."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PPoly

from .expr import Expression
from .trajectory import SpaceTimeGrid

__all__ = [
    "InitialCondition",
    "FourierSeries",
    "make_initial",
    "bump",
    "square",
    "mapping_g",
    "regularity_family",
    "random_fourier_coefficients",
]

KINDS = ("random_fourier", "bump", "square", "hat", "int", "sinusoid_sum", "custom_closed_form")


@dataclass(frozen=True)
class InitialCondition:
    """Declarative initial data.

    ``params`` by kind:

    * ``random_fourier``: ``modes`` (M), ``seed``, optional ``half_length`` and ``offset``
    * ``bump``: optional ``center`` (0), ``width`` (1), ``amplitude`` (1), ``offset`` (0)
    * ``square``/``hat``/``int``: none
    * ``sinusoid_sum``: ``terms``, a list of ``{amplitude, kind: sin|cos, wavenumber, phase}``
      plus optional ``offset``
    * ``custom_closed_form``: ``expr`` in ``x`` (and ``y``)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialCondition":
        d = dict(d)
        return cls(d.pop("kind"), d)


@dataclass(frozen=True)
class FourierSeries:
    """``offset + sum_k a_k cos(w_k x) + b_k sin(w_k x)`` on one axis."""

    offset: float
    wavenumbers: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray

    def derivative(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.offset if order == 0 else 0.0)
        for w, a, b in zip(self.wavenumbers, self.cos_coef, self.sin_coef):
            # d^n/dx^n [a cos(wx) + b sin(wx)] = w^n [a cos(wx + n pi/2) + b sin(wx + n pi/2)]
            ph = w * x + order * np.pi / 2
            out = out + w**order * (a * np.cos(ph) + b * np.sin(ph))
        return out

    def __call__(self, x):
        return self.derivative(x, 0)


def random_fourier_coefficients(modes: int, seed: int) -> np.ndarray:
    """Draw ``[a_0, a_1..a_M, b_1..b_M]`` i.i.d. from ``N(0, 1/(2M+1))``."""
    if modes < 0:
        raise ValueError("mode count must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(2 * modes + 1), size=2 * modes + 1)


def fourier_series(ic: InitialCondition, grid: SpaceTimeGrid | None = None) -> FourierSeries:
    """Exact Fourier representation for ``random_fourier`` and ``sinusoid_sum`` data."""
    p = ic.params
    if ic.kind == "random_fourier":
        m = int(p["modes"])
        if "half_length" in p:
            half = float(p["half_length"])
        elif grid is not None:
            a, b = grid.space_extent[0]
            half = (b - a) / 2
        else:
            raise ValueError("random_fourier needs half_length or a grid")
        c = random_fourier_coefficients(m, int(p["seed"]))
        w = np.pi * np.arange(1, m + 1) / half
        return FourierSeries(float(p.get("offset", 0.0)) + c[0], w,
                             np.sqrt(2) * c[1:m + 1], np.sqrt(2) * c[m + 1:])
    if ic.kind == "sinusoid_sum":
        ws, cs, ss = [], [], []
        for term in p["terms"]:
            amp = float(term.get("amplitude", 1.0))
            w = float(Expression(term["wavenumber"])())
            phi = float(Expression(term.get("phase", 0.0))())
            if term.get("kind", "sin") == "sin":
                cs.append(amp * np.sin(phi))
                ss.append(amp * np.cos(phi))
            else:
                cs.append(amp * np.cos(phi))
                ss.append(-amp * np.sin(phi))
            ws.append(w)
        return FourierSeries(float(p.get("offset", 0.0)), np.array(ws), np.array(cs), np.array(ss))
    raise ValueError(f"{ic.kind!r} initial data has no finite Fourier representation")


def bump(x, center: float = 0.0, width: float = 1.0) -> np.ndarray:
    """``exp(-1/(1-s^2))`` with ``s = (x-center)/width`` on ``|s| < 1``, zero elsewhere."""
    s = (np.asarray(x, dtype=float) - center) / width
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    denom = 1.0 - s[inside] ** 2
    # exp underflows to 0 long before denom reaches 0; guard the division only
    out[inside] = np.exp(-1.0 / np.maximum(denom, np.finfo(float).tiny))
    return out


def square(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where((x >= -4) & (x <= 0), 1.0, np.where((x > 0) & (x <= 4), -1.0, 0.0))


_SQUARE = PPoly(np.array([[0.0, 1.0, -1.0, 0.0]]), np.array([-8.0, -4.0, 0.0, 4.0, 8.0]))


def mapping_g(f: PPoly) -> PPoly:
    """Apply ``G f(x) = int_{-8}^x f~(s) ds`` to a piecewise polynomial on ``[-8, 8]``.

    ``f~(x) = f(2x + 4)`` on ``[-4, 0]``, ``-f(4 - 2x)`` on ``(0, 4]`` and zero
    elsewhere, i.e. the odd extension of the compressed profile, which keeps
    ``G f`` compactly supported in ``[-4, 4]``.
    """
    inner = f.x[(f.x > -4) & (f.x < 4)]
    left = (np.concatenate([[-4.0], inner, [4.0]]) - 4.0) / 2.0
    right = (4.0 - np.concatenate([[-4.0], inner, [4.0]])[::-1]) / 2.0
    breaks = np.unique(np.concatenate([[-8.0], left, right, [8.0]]))
    deg = f.c.shape[0] - 1

    def ftilde(s):
        s = np.asarray(s, dtype=float)
        return np.where((s >= -4) & (s <= 0), f(2 * s + 4),
                        np.where((s > 0) & (s <= 4), -f(4 - 2 * s), 0.0))

    coefs = np.zeros((deg + 1, len(breaks) - 1))
    for i in range(len(breaks) - 1):
        a, b = breaks[i], breaks[i + 1]
        # Chebyshev nodes strictly inside the piece; fit is exact for polynomials
        nodes = a + (b - a) * (0.5 - 0.5 * np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1)))
        coefs[:, i] = np.polyfit(nodes - a, ftilde(nodes), deg) if deg else ftilde(nodes)
    return PPoly(coefs, breaks).antiderivative()


def regularity_family() -> dict[str, PPoly]:
    """Piecewise-polynomial ``square``, ``hat = G(square)``, ``int = G(hat)``."""
    hat = mapping_g(_SQUARE)
    return {"square": _SQUARE, "hat": hat, "int": mapping_g(hat)}


def make_initial(ic: InitialCondition, grid: SpaceTimeGrid) -> np.ndarray:
    """Sample initial data over the spatial grid (shape ``grid.space_points``)."""
    coords = grid.mesh()
    p = ic.params
    if ic.kind in ("random_fourier", "sinusoid_sum"):
        if grid.ndim != 1:
            raise ValueError(f"{ic.kind} initial data is one-dimensional only")
        return fourier_series(ic, grid)(coords[0])
    if ic.kind == "bump":
        if grid.ndim != 1:
            raise ValueError("bump initial data is one-dimensional only")
        amp = float(p.get("amplitude", 1.0))
        return float(p.get("offset", 0.0)) + amp * bump(
            coords[0], float(p.get("center", 0.0)), float(p.get("width", 1.0)))
    if ic.kind in ("square", "hat", "int"):
        if grid.ndim != 1:
            raise ValueError(f"{ic.kind} initial data is one-dimensional only")
        if ic.kind == "square":
            return square(coords[0])
        x = coords[0]
        pp = regularity_family()[ic.kind]
        return np.where((x >= -8) & (x <= 8), pp(np.clip(x, -8, 8)), 0.0)
    if ic.kind == "custom_closed_form":
        e = Expression(p["expr"])
        if grid.ndim == 1:
            return e(x=coords[0])
        if grid.ndim == 2:
            return e(x=coords[0], y=coords[1])
    raise ValueError(f"unsupported initial condition {ic.kind!r} for {grid.ndim}D grid")

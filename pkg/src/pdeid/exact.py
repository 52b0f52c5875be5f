"""Closed-form derivative sources ("exact features") for benchmark problems.

Supported problems:

* ``transport1d`` with constant speed ``c``: ``u = u0(x + c t)``
* ``heat1d`` with constant diffusivity and Fourier-series initial data
* ``burgers1d`` with constant ``a`` before shock formation: ``u = u0(xi)`` with
  ``xi - a t u0(xi) = x``, derivatives by implicit differentiation
* ``circular_flow_2d``: ``u = f(x cos t - y sin t, x sin t + y cos t)``
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

from .expr import Expression
from .features import AnalyticSource
from .initial import InitialCondition, fourier_series, regularity_family
from .solvers import EvolutionProblem, NoClosedFormError

__all__ = ["profile_derivatives", "exact_source", "burgers_characteristic"]

_X, _Y, _T = sp.symbols("x y t", real=True)
_SYMPY_NAMES = {
    "pi": sp.pi, "e": sp.E, "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "tanh": sp.tanh,
    "sinh": sp.sinh, "cosh": sp.cosh, "exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt,
    "abs": sp.Abs, "arctan": sp.atan, "arctan2": sp.atan2, "x": _X, "y": _Y, "t": _T,
}


def to_sympy(source: str) -> sp.Expr:
    """Parse an :class:`Expression` source into sympy."""
    return sp.sympify(Expression(source).source, locals=_SYMPY_NAMES)


@lru_cache(maxsize=None)
def _bump_derivative(order: int):
    s = sp.Symbol("s", real=True)
    expr = sp.diff(sp.exp(-1 / (1 - s**2)), s, order)
    return sp.lambdify(s, expr, "numpy")


@lru_cache(maxsize=None)
def _closed_form_derivative(source: str, order: int):
    return sp.lambdify(_X, sp.diff(to_sympy(source), _X, order), "numpy")


def profile_derivatives(ic: InitialCondition, grid=None):
    """Return ``d(x, order)`` evaluating ``u0^(order)`` at arbitrary points ``x``."""
    p = ic.params
    if ic.kind in ("random_fourier", "sinusoid_sum"):
        fs = fourier_series(ic, grid)
        return fs.derivative
    if ic.kind == "bump":
        c, w = float(p.get("center", 0.0)), float(p.get("width", 1.0))
        amp, off = float(p.get("amplitude", 1.0)), float(p.get("offset", 0.0))

        def d(x, order=0):
            s = (np.asarray(x, dtype=float) - c) / w
            out = np.zeros_like(s)
            inside = np.abs(s) < 1.0
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                vals = _bump_derivative(order)(s[inside])
            out[inside] = np.nan_to_num(vals, nan=0.0, posinf=0.0, neginf=0.0)
            out = amp * out / w**order
            return out + off if order == 0 else out
        return d
    if ic.kind in ("hat", "int"):
        pp = regularity_family()[ic.kind]

        def d(x, order=0):
            x = np.asarray(x, dtype=float)
            return np.where(np.abs(x) <= 8, pp.derivative(order)(np.clip(x, -8, 8))
                            if order else pp(np.clip(x, -8, 8)), 0.0)
        return d
    if ic.kind == "custom_closed_form":
        src = str(p["expr"])

        def d(x, order=0):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(_closed_form_derivative(src, order)(x), x.shape).astype(float)
        return d
    raise NoClosedFormError(f"{ic.kind!r} initial data has no smooth closed-form derivatives")


def _wrap(x, extent):
    a, b = extent
    return a + np.mod(x - a, b - a)


# --------------------------------------------------------------------------- Burgers


def burgers_characteristic(d, a: float, x, t, tol: float = 1e-14, max_iter: int = 100):
    """Solve ``xi - a t u0(xi) = x`` by safeguarded Newton iteration (pre-shock)."""
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    xi = x.copy()
    for _ in range(max_iter):
        g = xi - a * t * d(xi, 0) - x
        gp = 1.0 - a * t * d(xi, 1)
        if np.any(gp <= 0):
            raise NoClosedFormError("characteristics have crossed (shock) at the requested time")
        step = g / gp
        xi = xi - step
        if np.max(np.abs(step), initial=0.0) < tol * (1 + np.max(np.abs(xi), initial=0.0)):
            break
    return xi


@lru_cache(maxsize=None)
def _burgers_formulas(max_order: int):
    """Lambdified ``d^n u/dx^n`` in terms of ``(p0..p_{n+1}, a, t)`` with ``p_k = u0^(k)(xi)``."""
    xi, a, t = sp.symbols("xi a t", real=True)
    f = sp.Function("f")
    p = sp.symbols(f"p0:{max_order + 2}", real=True)
    dxi = 1 / (1 - a * t * sp.diff(f(xi), xi))
    expr = f(xi)
    out = []
    for n in range(max_order + 1):
        sub = expr
        for k in range(max_order + 1, 0, -1):
            sub = sub.subs(sp.Derivative(f(xi), (xi, k)), p[k])
        sub = sub.subs(f(xi), p[0])
        out.append(sp.lambdify((p, a, t), sp.simplify(sub), "numpy"))
        expr = dxi * sp.diff(expr, xi)
    return out


# --------------------------------------------------------------------------- circular flow


@lru_cache(maxsize=None)
def _rotation_formulas(source: str):
    f = to_sympy(source)
    c, s = sp.cos(_T), sp.sin(_T)
    u = f.subs({_X: _X * c - _Y * s, _Y: _X * s + _Y * c}, simultaneous=True)
    return u


@lru_cache(maxsize=None)
def _rotation_derivative(source: str, alpha: tuple[int, ...]):
    u = _rotation_formulas(source)
    expr = sp.diff(u, _X, alpha[0], _Y, alpha[1]) if sum(alpha) else u
    return sp.lambdify((_X, _Y, _T), expr, "numpy")


@lru_cache(maxsize=None)
def _rotation_time(source: str):
    return sp.lambdify((_X, _Y, _T), sp.diff(_rotation_formulas(source), _T), "numpy")


# --------------------------------------------------------------------------- sources


def exact_source(problem: EvolutionProblem) -> AnalyticSource:
    """Analytic derivative source for problems with a closed-form solution."""
    g = problem.grid
    kind = problem.kind
    coef = problem.coefficients

    if kind == "transport1d" and coef["speed"].is_constant:
        c = float(coef["speed"]())
        d = profile_derivatives(problem.initial["u"], g)
        periodic = g.periodic[0]

        def arg(xs, t):
            z = xs[0] + c * t
            return _wrap(z, g.space_extent[0]) if periodic else z

        return AnalyticSource(g, lambda f, a, xs, t: d(arg(xs, t), a[0]),
                              lambda f, xs, t: c * d(arg(xs, t), 1))

    if kind == "heat1d" and coef["diffusivity"].is_constant:
        ic = problem.initial["u"]
        if ic.kind not in ("random_fourier", "sinusoid_sum"):
            raise NoClosedFormError("heat1d exact features need Fourier-series initial data")
        kappa = float(coef["diffusivity"]())
        fs = fourier_series(ic, g)

        def space(f, a, xs, t):
            x = xs[0]
            out = np.full(x.shape, fs.offset if a[0] == 0 else 0.0)
            for w, ca, sb in zip(fs.wavenumbers, fs.cos_coef, fs.sin_coef):
                ph = w * x + a[0] * np.pi / 2
                out = out + w ** a[0] * np.exp(-kappa * w**2 * t) * (ca * np.cos(ph) + sb * np.sin(ph))
            return out

        return AnalyticSource(g, space, lambda f, xs, t: kappa * space(f, (2,), xs, t))

    if kind == "burgers1d" and coef["advection"].is_constant:
        a = float(coef["advection"]())
        d = profile_derivatives(problem.initial["u"], g)

        def state(xs, t, order):
            # characteristics live on the real line; periodic data is handled by d itself
            xi = burgers_characteristic(d, a, xs[0], t)
            return [d(xi, k) for k in range(order + 2)]

        def space(f, alpha, xs, t):
            n = alpha[0]
            p = state(xs, t, n)
            return np.broadcast_to(_burgers_formulas(n)[n](p, a, t), xs[0].shape)

        def time(f, xs, t):
            p = state(xs, t, 0)
            # xi_t = a u0(xi) / (1 - a t u0'(xi)), so u_t = u0'(xi) xi_t
            return p[1] * a * p[0] / (1 - a * t * p[1])

        return AnalyticSource(g, space, time)

    if kind == "circular_flow_2d":
        ic = problem.initial["u"]
        if ic.kind != "custom_closed_form":
            raise NoClosedFormError("circular flow exact features need closed-form initial data")
        src = str(ic.params["expr"])

        def space(f, alpha, xs, t):
            val = _rotation_derivative(src, tuple(alpha))(xs[0], xs[1], t)
            return np.broadcast_to(val, xs[0].shape).astype(float)

        def time(f, xs, t):
            return np.broadcast_to(_rotation_time(src)(xs[0], xs[1], t), xs[0].shape).astype(float)

        return AnalyticSource(g, space, time)

    raise NoClosedFormError(f"no exact features for {kind} with these coefficients")

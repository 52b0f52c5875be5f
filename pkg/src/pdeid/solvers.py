"""Benchmark evolution problems and their pseudo-spectral solvers.

Periodic one-dimensional problems are advanced with Fourier differentiation in
space and an integrating-factor RK4 (Lawson) step in time.  The part of the
leading linear term whose coefficient depends on ``t`` only is integrated
exactly through the integrating factor; whatever varies in space is treated
explicitly, and the step is subdivided until the explicit part is stable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression, transition
from .initial import InitialCondition, fourier_series, make_initial
from .trajectory import SpaceTimeGrid, TrajectoryField

__all__ = [
    "EvolutionProblem",
    "StabilityError",
    "NoClosedFormError",
    "KIND_SLOTS",
    "KIND_FIELDS",
    "solve",
    "evaluate_exact",
    "add_noise",
    "transition",
    "true_model",
]

log = logging.getLogger(__name__)

KIND_SLOTS = {
    "transport1d": ("speed",),
    "heat1d": ("diffusivity",),
    "kdv1d": ("advection", "dispersion"),
    "burgers1d": ("advection",),
    "schrodinger1d_system": ("potential",),
    "circular_flow_2d": (),
}
KIND_FIELDS = {k: ("u", "v") if k == "schrodinger1d_system" else ("u",) for k in KIND_SLOTS}

# RK4 stability region reaches ~2.78 on the real and ~2.83 on the imaginary axis
_RK4_LIMIT = 2.5
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)


class StabilityError(ValueError):
    """Requested time step violates the explicit scheme's stability bound."""


class NoClosedFormError(ValueError):
    """The problem has no closed-form solution available."""


@dataclass
class EvolutionProblem:
    """A benchmark PDE: operator kind, coefficient functions, initial data and grid.

    ``options`` recognised by :func:`solve`: ``substeps`` (explicit sub-steps per
    output step; chosen automatically when absent), ``max_slope`` (Burgers
    pre-shock cap on ``max |u_x|``) and ``filter`` (spectral filter on/off for
    the nonlinear kinds).
    """

    kind: str
    grid: SpaceTimeGrid
    initial: dict[str, InitialCondition]
    coefficients: dict[str, Expression] = field(default_factory=dict)
    name: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KIND_SLOTS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        self.coefficients = {k: v if isinstance(v, Expression) else Expression(v)
                             for k, v in self.coefficients.items()}
        if isinstance(self.initial, InitialCondition):
            self.initial = {"u": self.initial}
        required = set(KIND_SLOTS[self.kind])
        if set(self.coefficients) != required:
            raise ValueError(
                f"{self.kind} requires coefficients {sorted(required)}, got {sorted(self.coefficients)}")
        missing = set(KIND_FIELDS[self.kind]) - set(self.initial)
        if missing:
            raise ValueError(f"{self.kind} needs initial data for fields {sorted(missing)}")
        want = 2 if self.kind == "circular_flow_2d" else 1
        if self.grid.ndim != want:
            raise ValueError(f"{self.kind} needs a {want}D grid, got {self.grid.ndim}D")

    @property
    def fields(self) -> tuple[str, ...]:
        return KIND_FIELDS[self.kind]

    def coefficient(self, slot: str, x, t, y=0.0):
        return self.coefficients[slot](x=x, t=t, y=y)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "grid": self.grid.to_dict(),
            "initial": {k: v.to_dict() for k, v in self.initial.items()},
            "coefficients": {k: v.source for k, v in self.coefficients.items()},
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionProblem":
        init = d["initial"]
        if "kind" in init:
            init = {"u": init}
        return cls(
            kind=d["kind"],
            grid=SpaceTimeGrid.from_dict(d["grid"]),
            initial={k: InitialCondition.from_dict(v) for k, v in init.items()},
            coefficients=dict(d.get("coefficients", {})),
            name=d.get("name", ""),
            options=dict(d.get("options", {})),
        )


def true_model(problem: EvolutionProblem) -> dict[str, dict[str, Expression]]:
    """Ground-truth right-hand side per target field: ``{field: {term: coefficient}}``.

    Term strings use the dictionary's descriptor notation (``u_x``, ``u*u_x`` ...).
    """
    c = problem.coefficients
    k = problem.kind
    if k == "transport1d":
        return {"u": {"u_x": c["speed"]}}
    if k == "heat1d":
        return {"u": {"u_xx": c["diffusivity"]}}
    if k == "kdv1d":
        return {"u": {"u*u_x": c["advection"], "u_xxx": c["dispersion"]}}
    if k == "burgers1d":
        return {"u": {"u*u_x": c["advection"]}}
    if k == "schrodinger1d_system":
        v = c["potential"].source
        return {
            "u": {"v_xx": Expression(0.5), "v": Expression(f"-({v})")},
            "v": {"u_xx": Expression(-0.5), "u": Expression(v)},
        }
    return {"u": {"u_x": Expression("-y"), "u_y": Expression("x")}}


# --------------------------------------------------------------------------- spectral machinery


class _Spectral:
    def __init__(self, grid: SpaceTimeGrid, complex_field: bool):
        n = grid.space_points[0]
        length = grid.space_extent[0][1] - grid.space_extent[0][0]
        self.n = n
        self.complex = complex_field
        if complex_field:
            self.k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
        else:
            self.k = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
        self.kmax = np.pi * n / length
        # odd derivatives of the Nyquist mode are not representable on a real grid
        self.k_odd = self.k.copy()
        if n % 2 == 0:
            self.k_odd[n // 2] = 0.0

    def fwd(self, u):
        return np.fft.fft(u) if self.complex else np.fft.rfft(u)

    def inv(self, uh):
        return np.fft.ifft(uh) if self.complex else np.fft.irfft(uh, n=self.n)

    def symbol(self, order: int) -> np.ndarray:
        k = self.k_odd if order % 2 else self.k
        return (1j * k) ** order

    def deriv(self, uh, order: int):
        return self.inv(self.symbol(order) * uh)


def _time_mean(expr: Expression, x, t: float) -> float:
    return float(np.mean(expr(x=x, t=t)))


def _integral(expr: Expression, x, t0: float, t1: float) -> float:
    """``int_{t0}^{t1}`` of the spatial mean of a coefficient (Gauss-Legendre)."""
    if t1 == t0:
        return 0.0
    if not expr.depends_on("t"):
        return _time_mean(expr, x, t0) * (t1 - t0)
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    return half * sum(w * _time_mean(expr, x, mid + half * s) for s, w in zip(_GAUSS_X, _GAUSS_W))


class _Model:
    """Split ``du/dt = a(t) * symbol(k) * u + N(u, t)`` for one periodic 1D problem."""

    def __init__(self, problem: EvolutionProblem):
        self.p = problem
        g = problem.grid
        if not g.periodic[0]:
            raise ValueError("the spectral solver needs a periodic space axis")
        self.x = g.axis(0)
        kind = problem.kind
        self.sp = _Spectral(g, complex_field=kind == "schrodinger1d_system")
        c = problem.coefficients
        if kind == "transport1d":
            self.lin, self.sym = c["speed"], self.sp.symbol(1)
        elif kind == "heat1d":
            self.lin, self.sym = c["diffusivity"], self.sp.symbol(2)
        elif kind == "kdv1d":
            self.lin, self.sym = c["dispersion"], self.sp.symbol(3)
        elif kind == "burgers1d":
            self.lin, self.sym = None, np.zeros_like(self.sp.k, dtype=complex)
        else:
            # psi_t = -(i/2) psi_xx + i V psi; the mean of V joins the factor
            self.lin = c["potential"]
            self.sym = 1j * np.ones_like(self.sp.k, dtype=complex)
            self.free = -0.5j * self.sp.symbol(2)
        nonlinear = kind in ("kdv1d", "burgers1d")
        use_filter = problem.options.get("filter", nonlinear)
        kk = np.abs(self.sp.k) / self.sp.kmax
        self.filt = np.exp(-36.0 * kk**36) if use_filter else None

    def exponent(self, t0: float, t1: float) -> np.ndarray:
        """Integrating-factor exponent over ``[t0, t1]``."""
        out = np.zeros_like(self.sym, dtype=complex)
        if self.lin is not None:
            out = out + self.sym * _integral(self.lin, self.x, t0, t1)
        if self.p.kind == "schrodinger1d_system":
            out = out + self.free * (t1 - t0)
        return out

    def rhs(self, uh, t: float):
        """Explicit remainder ``N(u, t)`` in spectral space."""
        sp, x, c = self.sp, self.x, self.p.coefficients
        kind = self.p.kind
        if kind in ("transport1d", "heat1d"):
            order = 1 if kind == "transport1d" else 2
            slot = "speed" if kind == "transport1d" else "diffusivity"
            rest = c[slot](x=x, t=t)
            rest = rest - rest.mean()
            if not np.any(rest):
                return np.zeros_like(uh)
            return sp.fwd(rest * sp.deriv(uh, order))
        if kind in ("kdv1d", "burgers1d"):
            u = sp.inv(uh)
            out = c["advection"](x=x, t=t) * u * sp.deriv(uh, 1)
            if kind == "kdv1d":
                rest = c["dispersion"](x=x, t=t)
                rest = rest - rest.mean()
                if np.any(rest):
                    out = out + rest * sp.deriv(uh, 3)
            return sp.fwd(out)
        v = c["potential"](x=x, t=t)
        v = v - v.mean()
        if not np.any(v):
            return np.zeros_like(uh)
        return sp.fwd(1j * v * sp.inv(uh))

    def stiffness(self, u0: np.ndarray) -> float:
        """Bound on the spectral radius of the explicit part over the run."""
        g = self.p.grid
        ts = np.linspace(g.time_extent[0], g.time_extent[1], 33)
        c = self.p.coefficients
        kmax = self.sp.kmax
        umax = 1.5 * float(np.max(np.abs(u0))) if u0.size else 0.0

        def spread(slot):
            vals = [c[slot](x=self.x, t=t) for t in ts]
            return max(float(np.max(np.abs(v - v.mean()))) for v in vals)

        def peak(slot):
            return max(float(np.max(np.abs(c[slot](x=self.x, t=t)))) for t in ts)

        kind = self.p.kind
        if kind == "transport1d":
            return spread("speed") * kmax
        if kind == "heat1d":
            return spread("diffusivity") * kmax**2
        if kind == "kdv1d":
            return spread("dispersion") * kmax**3 + peak("advection") * umax * kmax
        if kind == "burgers1d":
            return peak("advection") * umax * kmax
        return spread("potential")


def _lawson_rk4(model: _Model, uh, t: float, h: float):
    e_half = np.exp(model.exponent(t, t + 0.5 * h))
    e_full = np.exp(model.exponent(t, t + h))
    e_tail = np.exp(model.exponent(t + 0.5 * h, t + h))
    k1 = model.rhs(uh, t)
    k2 = model.rhs(e_half * (uh + 0.5 * h * k1), t + 0.5 * h)
    k3 = model.rhs(e_half * uh + 0.5 * h * k2, t + 0.5 * h)
    k4 = model.rhs(e_full * uh + h * e_tail * k3, t + h)
    out = e_full * uh + (h / 6.0) * (e_full * k1 + 2 * e_tail * (k2 + k3) + k4)
    if model.filt is not None:
        out = model.filt * out
    return out


def _substeps(problem: EvolutionProblem, model: _Model, u0) -> int:
    dt = problem.grid.dt
    lam = model.stiffness(u0)
    forced = problem.options.get("substeps")
    if forced is not None:
        forced = int(forced)
        ratio = dt / forced * lam
        if ratio > _RK4_LIMIT:
            raise StabilityError(
                f"{problem.kind}: explicit step {dt / forced:.3e} gives stiffness ratio "
                f"h*lambda = {ratio:.3f} > {_RK4_LIMIT} (increase substeps or refine dt)")
        return forced
    return max(1, math.ceil(dt * lam / _RK4_LIMIT))


def solve(problem: EvolutionProblem) -> TrajectoryField:
    """Integrate ``problem`` over its grid and return the sampled trajectory.

    ``circular_flow_2d`` is sampled from its closed-form solution.  Burgers runs
    are truncated (with a warning) at the last output time whose ``max |u_x|``
    stays under ``options["max_slope"]``.
    """
    g = problem.grid
    prov = {"problem": problem.to_dict(), "solver": "closed-form" if problem.kind ==
            "circular_flow_2d" else "fourier-lawson-rk4"}
    if problem.kind == "circular_flow_2d":
        xx, yy = g.mesh()
        data = np.stack([evaluate_exact(problem, (xx, yy), t) for t in g.times], axis=-1)
        return TrajectoryField(g, {"u": data}, prov)

    model = _Model(problem)
    if problem.kind == "schrodinger1d_system":
        u0 = make_initial(problem.initial["u"], g) + 1j * make_initial(problem.initial["v"], g)
    else:
        u0 = make_initial(problem.initial["u"], g)
    nsub = _substeps(problem, model, u0)
    h = g.dt / nsub
    prov["substeps"] = nsub

    out = np.empty((g.space_points[0], g.time_points), dtype=u0.dtype)
    out[:, 0] = u0
    uh = model.sp.fwd(u0)
    times = g.times
    max_slope = problem.options.get("max_slope")
    if problem.kind == "burgers1d" and max_slope is None:
        slope0 = float(np.max(np.abs(model.sp.deriv(uh, 1))))
        max_slope = 20.0 * slope0 if slope0 > 0 else np.inf
    stop = g.time_points
    for n in range(1, g.time_points):
        t = times[n - 1]
        for s in range(nsub):
            uh = _lawson_rk4(model, uh, t + s * h, h)
        if not np.all(np.isfinite(uh)):
            raise StabilityError(f"{problem.kind}: solution blew up at t={times[n]:.4g}")
        out[:, n] = model.sp.inv(uh)
        if problem.kind == "burgers1d":
            slope = float(np.max(np.abs(model.sp.deriv(uh, 1))))
            if slope > max_slope:
                stop = n
                log.warning("burgers1d: max|u_x|=%.3g exceeds %.3g at t=%.4g; run capped",
                            slope, max_slope, times[n])
                break

    if stop < g.time_points:
        g = SpaceTimeGrid(g.space_points, stop, g.space_extent,
                          (g.time_extent[0], g.time_extent[0] + stop * g.dt), g.periodic)
        out = out[:, :stop]
        prov["capped_at"] = stop
    if problem.kind == "schrodinger1d_system":
        return TrajectoryField(g, {"u": out.real.copy(), "v": out.imag.copy()}, prov)
    return TrajectoryField(g, {"u": out.real.copy() if np.iscomplexobj(out) else out}, prov)


def _wrap(x, grid: SpaceTimeGrid, axis: int = 0):
    a, b = grid.space_extent[axis]
    return a + np.mod(np.asarray(x, dtype=float) - a, b - a)


def evaluate_exact(problem: EvolutionProblem, x, t):
    """Closed-form solution where one exists.

    Supported: ``circular_flow_2d`` (``x`` is an ``(x, y)`` pair), constant-speed
    ``transport1d`` (any initial data) and constant-coefficient ``heat1d`` with
    Fourier-series initial data.
    """
    g = problem.grid
    kind = problem.kind
    if kind == "circular_flow_2d":
        xs, ys = (np.asarray(v, dtype=float) for v in x)
        f = problem.initial["u"]
        if f.kind != "custom_closed_form":
            raise NoClosedFormError("circular flow needs closed-form initial data")
        # rotation by +t solves u_t = -y u_x + x u_y
        c, s = np.cos(t), np.sin(t)
        return Expression(f.params["expr"])(x=xs * c - ys * s, y=xs * s + ys * c)
    if kind == "transport1d" and problem.coefficients["speed"].is_constant:
        speed = float(problem.coefficients["speed"]())
        ic = problem.initial["u"]
        xs = _wrap(np.asarray(x, dtype=float) + speed * t, g)
        sub = SpaceTimeGrid((1,), 1, g.space_extent, g.time_extent, g.periodic)
        if ic.kind in ("random_fourier", "sinusoid_sum"):
            return fourier_series(ic, g)(xs)
        return _sample_initial(ic, sub, xs)
    if kind == "heat1d" and problem.coefficients["diffusivity"].is_constant:
        ic = problem.initial["u"]
        if ic.kind not in ("random_fourier", "sinusoid_sum"):
            raise NoClosedFormError("heat1d closed form needs Fourier-series initial data")
        kappa = float(problem.coefficients["diffusivity"]())
        fs = fourier_series(ic, g)
        decay = np.exp(-kappa * fs.wavenumbers**2 * t)
        damped = type(fs)(fs.offset, fs.wavenumbers, fs.cos_coef * decay, fs.sin_coef * decay)
        return damped(np.asarray(x, dtype=float))
    raise NoClosedFormError(f"no closed form for {kind} with these coefficients")


def _sample_initial(ic: InitialCondition, grid: SpaceTimeGrid, xs) -> np.ndarray:
    """Evaluate spatial initial data at arbitrary points (not only grid nodes)."""
    from .initial import bump, regularity_family, square

    p = ic.params
    xs = np.asarray(xs, dtype=float)
    if ic.kind == "bump":
        return float(p.get("offset", 0.0)) + float(p.get("amplitude", 1.0)) * bump(
            xs, float(p.get("center", 0.0)), float(p.get("width", 1.0)))
    if ic.kind == "square":
        return square(xs)
    if ic.kind in ("hat", "int"):
        return np.where(np.abs(xs) <= 8, regularity_family()[ic.kind](np.clip(xs, -8, 8)), 0.0)
    if ic.kind == "custom_closed_form":
        return Expression(p["expr"])(x=xs)
    return fourier_series(ic, grid)(xs)


def add_noise(traj: TrajectoryField, percent: float, seed: int) -> TrajectoryField:
    """Add i.i.d. Gaussian noise with std ``percent/100 * std(field)`` to every field."""
    if percent < 0:
        raise ValueError("noise percent must be non-negative")
    if percent == 0:
        return traj.replace({n: a.copy() for n, a in traj.fields.items()},
                            noise={"percent": 0.0, "seed": seed})
    rng = np.random.default_rng(seed)
    noisy = {}
    for name, arr in traj.fields.items():
        sigma = percent / 100.0 * float(np.std(arr))
        noisy[name] = arr + sigma * rng.standard_normal(arr.shape)
    return traj.replace(noisy, noise={"percent": float(percent), "seed": int(seed)})

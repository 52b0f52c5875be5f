"""Snapshot-matrix singular spectra, two-snapshot Fourier identification, feature conditioning."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import Dictionary, Factor, evaluate_features
from .trajectory import TrajectoryField

__all__ = [
    "SvdReport",
    "SpectralIdentification",
    "FeatureConditioning",
    "svd_dimension_report",
    "required_mode_count",
    "identify_constant_coeff",
    "feature_conditioning",
]

PHASE_GUARD = np.pi * (1 - 1e-6)


# --------------------------------------------------------------------------- data-space dimension


@dataclass
class SvdReport:
    """Singular spectrum of a snapshot matrix and dominant counts per threshold."""

    singular_values: np.ndarray
    counts: dict[float, int]
    time_window: tuple[float, float]
    relative: bool = True
    shape: tuple[int, int] = (0, 0)

    def percentages(self) -> dict[float, float]:
        n = len(self.singular_values)
        return {k: 100.0 * v / n for k, v in self.counts.items()}

    def write_csv(self, path: str | Path) -> None:
        s = self.singular_values
        energy = np.cumsum(s**2) / np.sum(s**2) if np.any(s) else np.zeros_like(s)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "singular_value", "cumulative_energy"])
            for i, (v, e) in enumerate(zip(s, energy)):
                w.writerow([i, repr(float(v)), repr(float(e))])


def count_dominant(s: np.ndarray, threshold: float, relative: bool = True) -> int:
    """Number of singular values above ``threshold`` (times ``s[0]`` when relative).

    A zero threshold counts every singular value.
    """
    if threshold == 0:
        return int(len(s))
    cut = threshold * (s[0] if (relative and len(s)) else 1.0)
    return int(np.count_nonzero(s > cut))


def svd_dimension_report(traj, time_window: tuple[float, float] | None = None,
                         thresholds: Sequence[float] = (1e-3,), relative: bool = True,
                         field: str | None = None) -> SvdReport:
    """Singular values of ``u_jk = u(x_j, t_k)`` over ``t_start <= t_k < t_end``.

    ``traj`` is a :class:`TrajectoryField` (spatial axes are flattened) or a
    plain 2D matrix, in which case ``time_window`` indexes its columns.
    """
    if isinstance(traj, TrajectoryField):
        data = traj[field or traj.names[0]]
        t = traj.grid.times
        data = data.reshape(-1, data.shape[-1])
        if time_window is None:
            time_window = (float(t[0]), float(t[-1]) + traj.grid.dt)
        eps = 1e-9 * traj.grid.dt
        keep = (t >= time_window[0] - eps) & (t < time_window[1] - eps)
        mat = data[:, keep]
    else:
        mat = np.asarray(traj, dtype=float)
        if mat.ndim != 2:
            raise ValueError("snapshot matrix must be 2D")
        if time_window is None:
            time_window = (0, mat.shape[1])
        mat = mat[:, int(time_window[0]):int(time_window[1])]
    if mat.size == 0:
        raise ValueError(f"time window {time_window} is empty")
    s = np.linalg.svd(mat, compute_uv=False)
    counts = {float(th): count_dominant(s, th, relative) for th in thresholds}
    return SvdReport(s, counts, (float(time_window[0]), float(time_window[1])), relative,
                     tuple(mat.shape))


# --------------------------------------------------------------------------- spectral identification


def _multi_indices(d: int, n: int, parity: int) -> list[tuple[int, ...]]:
    out = []
    for order in range(parity, n + 1, 2):
        out += sorted((a for a in itertools.product(range(order + 1), repeat=d)
                       if sum(a) == order), reverse=True)
    return out


def required_mode_count(n: int, d: int = 1) -> int:
    """Minimum ``|Q|`` for unique recovery of an order-``n`` operator in ``d`` dimensions."""
    even = sum(comb(2 * k + d - 1, d - 1) for k in range(n // 2 + 1))
    odd = sum(comb(2 * k + d, d - 1) for k in range((n - 1) // 2 + 1)) if n >= 1 else 0
    return max(even, odd)


def _name(alpha: tuple[int, ...], field: str = "u") -> str:
    return str(Factor(field, alpha))


@dataclass
class SpectralIdentification:
    """Coefficients ``q_alpha`` of ``u_t = sum q_alpha d^alpha u`` from two snapshots.

    ``p`` holds the same operator in the ``d_t u = -(2 pi)^(-d/2) sum p_alpha d^alpha u``
    convention, ``p_alpha = -(2 pi)^(d/2) q_alpha``.
    """

    order: int
    coefficients: dict[tuple[int, ...], float]
    p: dict[tuple[int, ...], float]
    even_indices: list[tuple[int, ...]]
    odd_indices: list[tuple[int, ...]]
    modes: list[tuple[int, ...]]
    residual_even: float
    residual_odd: float
    rank_deficient_even: bool = False
    rank_deficient_odd: bool = False
    names: dict[tuple[int, ...], str] = field(default_factory=dict)

    @property
    def rank_deficient(self) -> bool:
        return self.rank_deficient_even or self.rank_deficient_odd

    def by_name(self) -> dict[str, float]:
        return {self.names.get(a, str(a)): v for a, v in self.coefficients.items()}


def identify_constant_coeff(snap1, snap2, dt: float, order: int,
                            lengths: float | Sequence[float] | None = None,
                            modes: Sequence | None = None, floor: float = 1e-10,
                            rcond: float = 1e-10) -> SpectralIdentification:
    """Recover a constant-coefficient linear operator from two snapshots ``dt`` apart.

    With ``r(zeta) = u^(zeta, t2) / u^(zeta, t1)`` the moduli and phases give
    two decoupled polynomial fits over the modes ``Q``::

        log|r| / dt = sum_{|a| even} q_a i^|a| zeta^a
        Arg r / dt  = sum_{|a| odd}  q_a i^(|a|-1) zeta^a

    ``lengths`` are the periods of the spatial axes (default ``2 pi``, i.e. integer
    wavenumbers).  ``modes`` are integer frequency tuples; by default every
    non-negative frequency whose amplitude is at least ``floor`` times the peak.
    """
    u1 = np.asarray(snap1, dtype=float)
    u2 = np.asarray(snap2, dtype=float)
    if u1.shape != u2.shape:
        raise ValueError("snapshots differ in shape")
    if dt <= 0:
        raise ValueError("need t2 > t1")
    d = u1.ndim
    if lengths is None:
        lengths = (2 * np.pi,) * d
    elif np.isscalar(lengths):
        lengths = (float(lengths),) * d
    U1, U2 = np.fft.fftn(u1), np.fft.fftn(u2)
    amp = np.abs(U1)
    peak = amp.max()
    if modes is None:
        freqs = [np.fft.fftfreq(n, 1.0 / n).astype(int) for n in u1.shape]
        modes = []
        for idx in itertools.product(*(range(n) for n in u1.shape)):
            k = tuple(int(f[i]) for f, i in zip(freqs, idx))
            first = next((v for v in k if v != 0), 0)
            if first >= 0 and amp[idx] >= floor * peak and peak > 0:
                modes.append(k)
    modes = [tuple(np.atleast_1d(np.asarray(m, dtype=int)).tolist()) for m in modes]
    need = required_mode_count(order, d)
    if len(modes) < need:
        raise ValueError(f"{len(modes)} modes supplied; order {order} in {d}D needs at least {need}")
    idx = [tuple(k % n for k, n in zip(m, u1.shape)) for m in modes]
    for m, i in zip(modes, idx):
        if amp[i] < floor * peak or amp[i] == 0:
            raise ValueError(f"mode {m} has amplitude below the floor")
    ratio = np.array([U2[i] / U1[i] for i in idx])
    phase = np.angle(ratio)
    if np.any(np.abs(phase) >= PHASE_GUARD):
        raise ValueError("phase of a mode ratio reaches pi; reduce the time step between snapshots")
    zeta = np.array([[2 * np.pi * k / L for k, L in zip(m, lengths)] for m in modes])
    even, odd = _multi_indices(d, order, 0), _multi_indices(d, order, 1)

    def fit(indices, rhs, power):
        if not indices:
            return {}, 0.0, False
        A = np.array([[np.prod(z ** np.array(a)) for a in indices] for z in zeta])
        sign = np.array([np.real(1j ** (sum(a) - power)) for a in indices])
        x, res, rank, sv = np.linalg.lstsq(A * sign, rhs, rcond=rcond)
        r = float(np.linalg.norm(A * sign @ x - rhs))
        return dict(zip(indices, x)), r, bool(rank < len(indices))

    ce, re, de = fit(even, np.log(np.abs(ratio)) / dt, 0)
    co, ro, do = fit(odd, phase / dt, 1)
    coef = {a: float(v) for a, v in {**ce, **co}.items()}
    coef = dict(sorted(coef.items(), key=lambda kv: (sum(kv[0]), tuple(-v for v in kv[0]))))
    p = {a: -(2 * np.pi) ** (d / 2) * v for a, v in coef.items()}
    return SpectralIdentification(order, coef, p, even, odd, modes, re, ro, de, do,
                                  {a: _name(a) for a in coef})


# --------------------------------------------------------------------------- conditioning


@dataclass
class FeatureConditioning:
    singular_values: np.ndarray

    @property
    def ratio(self) -> float:
        s = self.singular_values
        return float(s[-1] / s[0]) if len(s) and s[0] > 0 else 0.0

    def numerical_rank(self, rtol: float = 1e-8) -> int:
        s = self.singular_values
        return int(np.count_nonzero(s > rtol * s[0])) if len(s) and s[0] > 0 else 0


def feature_conditioning(source, dictionary: Dictionary, sample_points) -> FeatureConditioning:
    """Singular spectrum of the pointwise feature matrix of a derivative-only dictionary."""
    for desc in dictionary:
        if desc.trig is not None or len(desc.factors) != 1:
            raise ValueError(f"feature {desc} is not a pure derivative")
    F = evaluate_features(source, dictionary, sample_points)
    return FeatureConditioning(np.linalg.svd(F, compute_uv=False))

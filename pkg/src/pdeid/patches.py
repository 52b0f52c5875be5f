"""Sensor patches, patch filtering, noise-variance estimation and local conditioning."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .trajectory import SpaceTimeGrid, TrajectoryField

__all__ = [
    "Patch",
    "NoiseEstimate",
    "ConditionDiagnostic",
    "ALPHA_90",
    "sample_sensors",
    "sample_sensors_on_circle",
    "observation_times",
    "sobolev_seminorm",
    "filter_by_sobolev",
    "noise_patches",
    "estimate_noise_variance",
    "variation_test",
    "condition_diagnostic",
    "identifiability_margin",
    "write_patch_report",
]

ALPHA_90 = 1.644853
_MAX_PAIR_POINTS = 200


@dataclass(frozen=True)
class Patch:
    """Full space-time box ``center +/- radius`` around a grid node.

    ``center`` is ``(i_1, .., i_d, k)`` (space indices, then time index).
    Periodic space axes wrap; anything else must lie inside the grid.
    """

    center: tuple[int, ...]
    radius: tuple[int, ...]
    time_radius: int
    id: int = 0
    margin: tuple[int, ...] = field(default=(), compare=False)

    @classmethod
    def build(cls, grid: SpaceTimeGrid, center: Sequence[int], radius: int | Sequence[int],
              time_radius: int, id: int = 0, margin: Sequence[int] = ()) -> "Patch":
        """Validated construction.

        ``margin`` adds extra clearance per axis (space axes then time) for
        derivative stencils; it defaults to no clearance.
        """
        r = (int(radius),) * grid.ndim if np.isscalar(radius) else tuple(int(v) for v in radius)
        center = tuple(int(c) for c in center)
        if len(center) != grid.ndim + 1 or len(r) != grid.ndim:
            raise ValueError("patch center/radius do not match the grid dimension")
        if min(r) < 0 or time_radius < 0:
            raise ValueError("patch radii must be non-negative")
        margin = tuple(margin) or (0,) * (grid.ndim + 1)
        for i in range(grid.ndim):
            if grid.periodic[i]:
                if 2 * r[i] + 1 > grid.space_points[i]:
                    raise ValueError(f"patch wider than periodic axis {grid.axis_name(i)}")
                continue
            lo, hi = center[i] - r[i] - margin[i], center[i] + r[i] + margin[i]
            if lo < 0 or hi >= grid.space_points[i]:
                raise ValueError(
                    f"patch at {center} exceeds non-periodic axis {grid.axis_name(i)} "
                    f"(needs [{lo}, {hi}] inside [0, {grid.space_points[i] - 1}])")
        lo, hi = center[-1] - time_radius - margin[-1], center[-1] + time_radius + margin[-1]
        if lo < 0 or hi >= grid.time_points:
            raise ValueError(
                f"patch at {center} exceeds the time axis (needs [{lo}, {hi}] inside "
                f"[0, {grid.time_points - 1}])")
        return cls(center, r, int(time_radius), id, margin)

    @property
    def size(self) -> int:
        return int(np.prod([2 * r + 1 for r in self.radius]) * (2 * self.time_radius + 1))

    def points(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Member indices, shape ``(size, ndim + 1)``, periodic axes wrapped."""
        ranges = [np.arange(c - r, c + r + 1) for c, r in zip(self.center[:-1], self.radius)]
        ranges.append(np.arange(self.center[-1] - self.time_radius,
                                self.center[-1] + self.time_radius + 1))
        pts = np.array(list(itertools.product(*ranges)), dtype=int).reshape(-1, grid.ndim + 1)
        for i in range(grid.ndim):
            if grid.periodic[i]:
                pts[:, i] %= grid.space_points[i]
        return pts

    def box(self, grid: SpaceTimeGrid) -> list[set[int]]:
        """Per-axis index sets (wrapped), used for the intersection test."""
        return [set(np.unique(col).tolist()) for col in self.points(grid).T]

    def intersects(self, other: "Patch", grid: SpaceTimeGrid) -> bool:
        return all(a & b for a, b in zip(self.box(grid), other.box(grid)))


@dataclass
class NoiseEstimate:
    sigma2_hat: float
    N: int
    B: int
    bias_bound: float
    variance_bound: float
    lipschitz: float
    radius: float
    dimension: int

    @property
    def sigma_hat(self) -> float:
        return float(np.sqrt(self.sigma2_hat))

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                for k, v in self.__dict__.items()} | {"sigma_hat": self.sigma_hat}


@dataclass
class ConditionDiagnostic:
    M: np.ndarray
    lambda_max: float
    lambda_min: float
    ratio: float

    @property
    def condition_lower(self) -> float:
        """Lower estimate ``ratio / sqrt(K)`` of the patch condition constant."""
        return self.ratio / np.sqrt(self.M.shape[0])

    @property
    def condition_upper(self) -> float:
        return min(1.0, self.ratio * np.sqrt(self.M.shape[0]))


# --------------------------------------------------------------------------- sensors


def observation_times(grid: SpaceTimeGrid, count: int, time_radius: int, margin: int = 1,
                      include_endpoints: bool = True) -> list[int]:
    """``count`` uniformly spread time indices at which a patch (plus margin) fits.

    With ``include_endpoints`` the first/last admissible indices are used;
    otherwise the ``count`` points are interior to that range.
    """
    lo = time_radius + margin
    hi = grid.time_points - 1 - time_radius - margin
    if hi < lo:
        raise ValueError("time axis too short for the requested time radius")
    if include_endpoints:
        pts = np.linspace(lo, hi, count)
    else:
        pts = np.linspace(lo, hi, count + 2)[1:-1]
    return [int(round(v)) for v in pts]


def _space_range(grid: SpaceTimeGrid, axis: int, r: int, margin: int) -> np.ndarray:
    n = grid.space_points[axis]
    if grid.periodic[axis]:
        return np.arange(n)
    return np.arange(r + margin, n - r - margin)


def sample_sensors(grid: SpaceTimeGrid, n_sensors: int, r: int, r_t: int,
                   observation_times: Iterable[int], seed: int,
                   margin: Sequence[int] = ()) -> list[Patch]:
    """Place ``n_sensors`` distinct random spatial centers and replicate them in time.

    Returns one patch per (sensor, observation time), sensor-major.
    """
    times = list(observation_times)
    margin = tuple(margin) or (0,) * (grid.ndim + 1)
    rng = np.random.default_rng(seed)
    ranges = [_space_range(grid, i, r, margin[i]) for i in range(grid.ndim)]
    if any(len(rg) == 0 for rg in ranges):
        raise ValueError(f"sensing radius {r} does not fit the non-periodic grid")
    total = int(np.prod([len(rg) for rg in ranges]))
    if n_sensors > total:
        raise ValueError(f"cannot place {n_sensors} distinct sensors in {total} positions")
    flat = rng.choice(total, size=n_sensors, replace=False)
    centers = np.array(np.unravel_index(flat, [len(rg) for rg in ranges])).T
    patches = []
    for s, c in enumerate(centers):
        space = tuple(int(ranges[i][c[i]]) for i in range(grid.ndim))
        for k in times:
            patches.append(Patch.build(grid, space + (int(k),), r, r_t, id=len(patches),
                                       margin=margin))
    return patches


def sample_sensors_on_circle(grid: SpaceTimeGrid, n_sensors: int, circle_radius: float,
                             r: int, r_t: int, observation_times: Iterable[int], seed: int,
                             margin: Sequence[int] = ()) -> list[Patch]:
    """Sensors at random angles on a circle (radius in grid points) about the grid origin."""
    if grid.ndim != 2:
        raise ValueError("circle placement needs a 2D grid")
    times = list(observation_times)
    rng = np.random.default_rng(seed)
    origin = [int(round(-a / d)) for (a, _), d in zip(grid.space_extent, grid.dx)]
    angles = rng.uniform(0.0, 2 * np.pi, size=n_sensors)
    patches = []
    for th in angles:
        c = (origin[0] + int(round(circle_radius * np.cos(th))),
             origin[1] + int(round(circle_radius * np.sin(th))))
        for k in times:
            patches.append(Patch.build(grid, c + (int(k),), r, r_t, id=len(patches),
                                       margin=margin))
    return patches


# --------------------------------------------------------------------------- Sobolev filter


def sobolev_seminorm(sys, p_max: int | None = None) -> float:
    """Root-mean-square of the patch's spatial derivative columns.

    ``sys.sobolev`` holds ``d^alpha u`` for ``1 <= |alpha| <= P_max`` (one column
    per multi-index and field); ``sys.sobolev_orders`` their orders.
    """
    cols = getattr(sys, "sobolev", None)
    if cols is None or cols.size == 0:
        raise ValueError("system carries no derivative columns for the Sobolev semi-norm")
    if p_max is not None:
        cols = cols[:, np.asarray(sys.sobolev_orders) <= p_max]
    return float(np.sqrt(np.sum(cols**2) / cols.shape[0]))


def filter_by_sobolev(patches_with_beta: Sequence[tuple], lower: float = 1.0,
                      upper: float = 99.0) -> list:
    """Drop items whose beta lies outside the ``[lower, upper]`` percentile band.

    ``patches_with_beta`` is a sequence of ``(item, beta)``.  Percentiles are
    order statistics of the sorted betas: the lower one sits at 0-based rank
    ``floor(lower/100 * n)`` and the upper one symmetrically from the top, so
    at most ``floor(lower/100 * n)`` items fall below the band.  Items equal to a
    cut value are kept, which makes ties and short lists degrade to keeping all.
    """
    items = list(patches_with_beta)
    if not items:
        raise ValueError("no patches to filter")
    n = len(items)
    betas = np.sort(np.array([b for _, b in items], dtype=float))
    lo = betas[int(np.floor(lower / 100.0 * n))]
    hi = betas[n - 1 - int(np.floor((100.0 - upper) / 100.0 * n))]
    return [p for p, b in items if lo <= b <= hi]


# --------------------------------------------------------------------------- noise statistics


def noise_patches(grid: SpaceTimeGrid, n_patches: int = 200, radius: int = 3,
                  time_radius: int = 3) -> list[Patch]:
    """Deterministic non-overlapping boxes spread evenly over the grid.

    The grid is tiled with boxes of side ``2r+1`` (space) and ``2r_t+1`` (time)
    in row-major order; ``n_patches`` tiles at evenly spaced tile indices are
    returned (all tiles when fewer exist).
    """
    sides = [2 * radius + 1] * grid.ndim + [2 * time_radius + 1]
    counts = [n // s for n, s in zip(grid.shape, sides)]
    total = int(np.prod(counts))
    if total < 2:
        raise ValueError("grid too small for two non-overlapping noise patches")
    picks = np.unique(np.round(np.linspace(0, total - 1, min(n_patches, total))).astype(int))
    out = []
    for flat in picks:
        idx = np.unravel_index(flat, counts)
        center = tuple(int(i * s + s // 2) for i, s in zip(idx, sides))
        out.append(Patch.build(grid, center, radius, time_radius, id=len(out)))
    return out


def _default_lipschitz(traj: TrajectoryField, name: str, patches: Sequence[Patch]) -> float:
    g = traj.grid
    grads = np.gradient(traj[name], *g.dx, g.dt) if g.shape[-1] > 1 else None
    if grads is None:
        return 0.0
    mag = np.sqrt(sum(gr**2 for gr in grads))
    return float(max(mag[tuple(p.points(g).T)].max() for p in patches))


def estimate_noise_variance(traj: TrajectoryField, patches: Sequence[Patch], field: str | None = None,
                            lipschitz: float | None = None, check_disjoint: bool = True
                            ) -> NoiseEstimate:
    """Estimate the additive noise variance from centre-minus-mean deviations.

    With ``zeta_n`` the centre value minus the patch mean in patch ``n``,
    ``sigma2_hat = B * sum (zeta_n - mean zeta)^2 / ((N-1)(B-1))``.  The bias and
    variance bounds use the Lipschitz constant ``lipschitz`` (default: largest
    finite-difference gradient norm over the patches), the largest physical patch
    radius ``R`` and ``D = d + 1``.
    """
    name = field or traj.names[0]
    g = traj.grid
    N = len(patches)
    if N < 2:
        raise ValueError("noise estimation needs at least two patches")
    sizes = {p.size for p in patches}
    if len(sizes) != 1:
        raise ValueError(f"noise patches have mismatched cardinalities {sorted(sizes)}")
    B = sizes.pop()
    if B < 2:
        raise ValueError("noise patches need at least two points")
    if check_disjoint:
        boxes = [p.box(g) for p in patches]
        for i, j in itertools.combinations(range(N), 2):
            if all(a & b for a, b in zip(boxes[i], boxes[j])):
                raise ValueError(f"noise patches {patches[i].id} and {patches[j].id} intersect")
    data = traj[name]
    zeta = np.empty(N)
    for n, p in enumerate(patches):
        vals = data[tuple(p.points(g).T)]
        zeta[n] = data[tuple(np.asarray(p.center) % np.array(g.shape))] - vals.mean()
    s2 = float(B * np.sum((zeta - zeta.mean()) ** 2) / ((N - 1) * (B - 1)))

    L = _default_lipschitz(traj, name, patches) if lipschitz is None else float(lipschitz)
    R = max(max(r * d for r, d in zip(p.radius, g.dx)) if p.radius else 0.0 for p in patches)
    R = max(R, max(p.time_radius for p in patches) * g.dt)
    D = g.ndim + 1
    bias = D * N * B * L**2 * R**2 / ((N - 1) * (B - 1))
    gamma = 4 * D * L**2 * R**2
    var = 2 * s2**2 / (N - 1) + N * B * s2 * gamma / ((N - 1) ** 2 * (B - 1))
    return NoiseEstimate(s2, N, B, bias, var, L, R, D)


def variation_test(patch_values, sigma_hat, seed: int = 0) -> bool:
    """Keep a patch iff some pair of its samples differs beyond noise.

    ``patch_values`` is ``(m,)`` for one field or ``(m, n_fields)``.  A pair
    counts when ``min_j |u_j(a) - u_j(b)| > sqrt(2) * 1.644853 * sigma_j``.
    Patches with more than 200 points are tested on a fixed random subset of
    200 points.
    """
    v = np.asarray(patch_values, dtype=float)
    if v.size == 0:
        raise ValueError("empty patch")
    if v.ndim == 1:
        v = v[:, None]
    sig = np.broadcast_to(np.asarray(sigma_hat, dtype=float), (v.shape[1],))
    if np.any(sig < 0):
        raise ValueError("sigma_hat must be non-negative")
    if v.shape[0] > _MAX_PAIR_POINTS:
        idx = np.sort(np.random.default_rng(seed).choice(v.shape[0], _MAX_PAIR_POINTS,
                                                         replace=False))
        v = v[idx]
    thr = np.sqrt(2.0) * ALPHA_90 * sig
    diff = np.abs(v[:, None, :] - v[None, :, :])
    return bool(np.any(np.all(diff > thr, axis=-1)))


# --------------------------------------------------------------------------- conditioning


def condition_diagnostic(sys) -> ConditionDiagnostic:
    """Feature correlation matrix ``M = F^T F`` of a patch and its eigenvalue ratio."""
    F = np.asarray(sys.F if hasattr(sys, "F") else sys, dtype=float)
    M = F.T @ F
    M = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(M)
    lmax = float(max(ev[-1], 0.0))
    lmin = float(max(ev[0], 0.0))
    ratio = lmin / lmax if lmax > 0 else 0.0
    return ConditionDiagnostic(M, lmax, lmin, float(min(max(ratio, 0.0), 1.0)))


def identifiability_margin(diag: ConditionDiagnostic, lipschitz: float, radius: float,
                           threshold: float) -> tuple[float, bool]:
    """Compare the conservative condition estimate with ``2 L R / eps``.

    Returns ``(2 L R / eps, condition_lower > 2 L R / eps)``.
    """
    need = 2.0 * lipschitz * radius / threshold
    return need, bool(diag.condition_lower > need)


def write_patch_report(rows: Iterable[dict], path: str | Path) -> None:
    cols = ["patch_id", "center_x", "center_t", "beta", "kept_by_sobolev",
            "kept_by_variation", "condition_ratio"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)

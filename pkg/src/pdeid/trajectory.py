"""Space-time grids, trajectory containers and their on-disk formats."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "SpaceTimeGrid",
    "TrajectoryField",
    "save_trajectory",
    "load_trajectory",
    "export_csv",
    "downsample",
]

_MAGIC = b"PDEIDTRJ"
_AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform tensor grid in space and time.

    Node ``j`` on a space axis sits at ``lo + j * dx`` with
    ``dx = (hi - lo) / n``; time node ``k`` sits at ``t0 + k * dt`` with
    ``dt = (t1 - t0) / nt`` for ``k = 0 .. nt - 1``.
    """

    space_points: tuple[int, ...]
    time_points: int
    space_extent: tuple[tuple[float, float], ...]
    time_extent: tuple[float, float]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        sp = tuple(int(n) for n in self.space_points)
        ext = tuple((float(a), float(b)) for a, b in self.space_extent)
        per = tuple(bool(p) for p in self.periodic) or (True,) * len(sp)
        object.__setattr__(self, "space_points", sp)
        object.__setattr__(self, "space_extent", ext)
        object.__setattr__(self, "periodic", per)
        object.__setattr__(self, "time_points", int(self.time_points))
        object.__setattr__(
            self, "time_extent", (float(self.time_extent[0]), float(self.time_extent[1]))
        )
        if not sp or len(sp) != len(ext) or len(sp) != len(per):
            raise ValueError("space_points, space_extent and periodic must have equal length")
        if any(n < 1 for n in sp) or self.time_points < 1:
            raise ValueError("grid point counts must be positive")
        if any(b <= a for a, b in ext) or self.time_extent[1] <= self.time_extent[0]:
            raise ValueError("grid extents must have positive length")

    @property
    def ndim(self) -> int:
        return len(self.space_points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.space_points + (self.time_points,)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.space_extent, self.space_points))

    @property
    def dt(self) -> float:
        return (self.time_extent[1] - self.time_extent[0]) / self.time_points

    def axis(self, i: int) -> np.ndarray:
        a, _ = self.space_extent[i]
        return a + self.dx[i] * np.arange(self.space_points[i])

    @property
    def times(self) -> np.ndarray:
        return self.time_extent[0] + self.dt * np.arange(self.time_points)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Space coordinate arrays broadcast over the spatial grid (``ij`` indexing)."""
        return tuple(np.meshgrid(*(self.axis(i) for i in range(self.ndim)), indexing="ij"))

    def coordinates(self, index: Sequence[int]) -> tuple[float, ...]:
        """Physical ``(x.., t)`` of a grid index ``(i.., k)``; periodic axes wrap."""
        out = []
        for i in range(self.ndim):
            j = index[i] % self.space_points[i] if self.periodic[i] else index[i]
            out.append(self.space_extent[i][0] + j * self.dx[i])
        out.append(self.time_extent[0] + index[-1] * self.dt)
        return tuple(out)

    def axis_name(self, i: int) -> str:
        return _AXIS_NAMES[i]

    def to_dict(self) -> dict:
        return {
            "space_points": list(self.space_points),
            "time_points": self.time_points,
            "space_extent": [list(e) for e in self.space_extent],
            "time_extent": list(self.time_extent),
            "periodic": list(self.periodic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceTimeGrid":
        return cls(
            space_points=tuple(d["space_points"]),
            time_points=d["time_points"],
            space_extent=tuple(tuple(e) for e in d["space_extent"]),
            time_extent=tuple(d["time_extent"]),
            periodic=tuple(d.get("periodic", ())),
        )


@dataclass
class TrajectoryField:
    """Named scalar fields sampled on a :class:`SpaceTimeGrid`.

    Each array has shape ``grid.shape`` (space axes first, time last).
    """

    grid: SpaceTimeGrid
    fields: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fields:
            raise ValueError("a trajectory needs at least one field")
        for name, arr in self.fields.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != self.grid.shape:
                raise ValueError(
                    f"field {name!r} has shape {arr.shape}, grid expects {self.grid.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"field {name!r} contains non-finite values")
            self.fields[name] = arr

    @property
    def names(self) -> list[str]:
        return list(self.fields)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    def replace(self, fields: dict[str, np.ndarray], **provenance) -> "TrajectoryField":
        prov = dict(self.provenance)
        prov.update(provenance)
        return TrajectoryField(self.grid, fields, prov)

    def window(self, t_start: float, t_end: float) -> "TrajectoryField":
        """Restrict to time nodes with ``t_start <= t <= t_end``."""
        t = self.grid.times
        eps = 1e-9 * self.grid.dt
        keep = np.flatnonzero((t >= t_start - eps) & (t <= t_end + eps))
        if keep.size == 0:
            raise ValueError(f"time window [{t_start}, {t_end}] contains no grid times")
        k0, k1 = keep[0], keep[-1] + 1
        g = self.grid
        grid = SpaceTimeGrid(
            g.space_points,
            k1 - k0,
            g.space_extent,
            (g.time_extent[0] + k0 * g.dt, g.time_extent[0] + k1 * g.dt),
            g.periodic,
        )
        return TrajectoryField(grid, {n: a[..., k0:k1] for n, a in self.fields.items()},
                               dict(self.provenance))


def downsample(traj: TrajectoryField, space_stride: int | Sequence[int], time_stride: int
               ) -> TrajectoryField:
    """Strided sub-selection of grid nodes (e.g. 800x10000 -> 200x5000)."""
    g = traj.grid
    strides = (space_stride,) * g.ndim if np.isscalar(space_stride) else tuple(space_stride)
    for n, s in zip(g.space_points + (g.time_points,), strides + (time_stride,)):
        if s < 1 or n % s:
            raise ValueError(f"stride {s} does not divide axis length {n}")
    grid = SpaceTimeGrid(
        tuple(n // s for n, s in zip(g.space_points, strides)),
        g.time_points // time_stride,
        g.space_extent,
        g.time_extent,
        g.periodic,
    )
    sl = tuple(slice(None, None, s) for s in strides) + (slice(None, None, time_stride),)
    return TrajectoryField(grid, {n: a[sl].copy() for n, a in traj.fields.items()},
                           dict(traj.provenance, downsampled=list(strides) + [time_stride]))


def save_trajectory(traj: TrajectoryField, path: str | Path) -> None:
    """Write the binary container: magic, header length, JSON header, float64 arrays.

    Arrays follow the header in the order of ``header["fields"]``, each
    row-major little-endian float64 of shape ``grid.shape``.
    """
    header = {
        "format": 1,
        "grid": traj.grid.to_dict(),
        "fields": traj.names,
        "dtype": "<f8",
        "order": "C",
        "provenance": traj.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in traj.names:
            fh.write(np.ascontiguousarray(traj[name], dtype="<f8").tobytes())


def load_trajectory(path: str | Path) -> TrajectoryField:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a trajectory container")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        grid = SpaceTimeGrid.from_dict(header["grid"])
        count = int(np.prod(grid.shape))
        fields = {}
        for name in header["fields"]:
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated data for field {name!r}")
            fields[name] = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).astype(float)
    return TrajectoryField(grid, fields, header.get("provenance", {}))


def export_csv(traj: TrajectoryField, path: str | Path) -> None:
    """Long-format CSV ``x, t, <field>...`` for one-dimensional trajectories."""
    g = traj.grid
    if g.ndim != 1:
        raise ValueError("CSV export is only defined for one space dimension")
    x = g.axis(0)
    t = g.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t"] + traj.names)
        for k in range(g.time_points):
            for j in range(g.space_points[0]):
                w.writerow([repr(x[j]), repr(t[k])] + [repr(traj[n][j, k]) for n in traj.names])

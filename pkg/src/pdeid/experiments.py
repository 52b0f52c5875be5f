"""End-to-end experiment pipelines: identification trials, sweeps, dimension and trimming studies.

A trial runs: noise -> sensors -> assemble -> filter -> identify -> evaluate.
Every stochastic stage is seeded from the configuration (trial ``i`` uses
``seed + i`` for sensors and ``noise.seed + i`` for noise).
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .caslr import (coefficient_error_terms, jaccard, reconstruct_coefficients, sweep_and_score)
from .config import ConfigError, ExperimentConfig, config_hash, parse_config, set_dotted
from .exact import exact_source
from .features import FiniteDifferenceSource, assemble_patch_system
from .initial import InitialCondition
from .patches import (condition_diagnostic, estimate_noise_variance, filter_by_sobolev,
                      identifiability_margin, noise_patches, observation_times, sample_sensors,
                      sample_sensors_on_circle, sobolev_seminorm, variation_test,
                      write_patch_report)
from .solvers import EvolutionProblem, NoClosedFormError, add_noise, evaluate_exact, solve
from .spectral import count_dominant, svd_dimension_report
from .trajectory import TrajectoryField, downsample

__all__ = [
    "ExperimentReport",
    "trajectory_for",
    "run_trial",
    "run_experiment",
    "run_sweep",
    "run_dimension_study",
    "run_trim_comparison",
    "run_noise_estimate",
]

log = logging.getLogger(__name__)

_TRAJ_CACHE: dict[str, TrajectoryField] = {}
TRIAL_COLUMNS = ["trial", "seed", "status", "stage", "jaccard", "coefficient_error", "support",
                 "n_patches", "n_kept", "sigma_hat", "l_star", "error"]


def trajectory_for(problem: EvolutionProblem, prefer_exact: bool = False) -> TrajectoryField:
    """Solve ``problem`` once per process (cached by its canonical form).

    With ``prefer_exact`` closed-form solutions are sampled when available.  A
    ``downsample`` option on the problem (space strides then time stride) is
    applied after solving.
    """
    key = config_hash({"p": problem.to_dict(), "exact": prefer_exact})
    if key in _TRAJ_CACHE:
        return _TRAJ_CACHE[key]
    traj = None
    if prefer_exact and problem.kind != "circular_flow_2d":
        g = problem.grid
        try:
            x = g.axis(0)
            if problem.kind == "transport1d":
                data = evaluate_exact(problem, x[:, None], g.times[None, :])
            else:
                data = np.stack([evaluate_exact(problem, x, t) for t in g.times], axis=-1)
            traj = TrajectoryField(g, {"u": data}, {"problem": problem.to_dict(),
                                                    "solver": "closed-form"})
        except NoClosedFormError:
            traj = None
    if traj is None:
        traj = solve(problem)
    stride = problem.options.get("downsample")
    if stride:
        # solve fine, observe coarse: [space stride per axis..., time stride]
        stride = list(stride)
        traj = downsample(traj, stride[:-1], stride[-1])
    if len(_TRAJ_CACHE) > 8:
        _TRAJ_CACHE.clear()
    _TRAJ_CACHE[key] = traj
    return traj


@dataclass
class ExperimentReport:
    """Per-trial rows plus aggregates recomputable from them."""

    name: str
    rows: list[dict]
    provenance: dict
    params: dict = field(default_factory=dict)

    @property
    def completed(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "ok"]

    @property
    def all_completed(self) -> bool:
        return len(self.completed) == len(self.rows)

    @property
    def aggregates(self) -> dict:
        ok = self.completed
        out = {"trials": len(self.rows), "completed": len(ok)}
        for key in ("jaccard", "coefficient_error"):
            vals = np.array([r[key] for r in ok if r.get(key) is not None], dtype=float)
            out[f"mean_{key}"] = float(vals.mean()) if vals.size else None
            out[f"std_{key}"] = float(vals.std()) if vals.size else None
        return out

    @property
    def mean_jaccard(self) -> float:
        return self.aggregates["mean_jaccard"]

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params, "aggregates": self.aggregates,
                "provenance": self.provenance, "trials": self.rows}


# --------------------------------------------------------------------------- single trial


def _sensor_patches(cfg: ExperimentConfig, grid, halo, seed: int):
    s = cfg.sensors
    if isinstance(s.times, int):
        times = observation_times(grid, s.times, s.time_radius, margin=halo[-1],
                                  include_endpoints=s.include_endpoints)
    else:
        times = [int(k) for k in s.times]
    if s.placement == "circle":
        return sample_sensors_on_circle(grid, s.count, s.circle_radius, s.radius, s.time_radius,
                                        times, seed, margin=halo)
    return sample_sensors(grid, s.count, s.radius, s.time_radius, times, seed, margin=halo)


def _reseeded(problem: EvolutionProblem, trial: int) -> EvolutionProblem:
    """Same problem with every random initial field drawn from ``seed + trial``."""
    d = problem.to_dict()
    for ic in d["initial"].values():
        if ic["kind"] == "random_fourier":
            ic["seed"] = int(ic.get("seed", 0)) + trial
    return EvolutionProblem.from_dict(d)


def _labels(support_by_field: dict[str, list[str]]) -> set[tuple[str, str]]:
    return {(f, n) for f, names in support_by_field.items() for n in names}


def run_trial(cfg: ExperimentConfig, trial: int, traj: TrajectoryField | None = None) -> dict:
    """Run one trial; failures are captured with the name of the stage that raised."""
    seed = cfg.seed + trial
    row: dict[str, Any] = {"trial": trial, "seed": seed, "status": "ok", "stage": "",
                           "jaccard": None, "coefficient_error": None, "support": "",
                           "n_patches": 0, "n_kept": 0, "sigma_hat": "", "l_star": "",
                           "error": ""}
    artifacts: dict[str, Any] = {"patches": [], "results": {}, "tables": {}}
    stage = "solve"
    try:
        problem = cfg.problem
        dictionary = cfg.dictionary.build(problem.grid.ndim)
        if cfg.vary_initial_seed:
            problem = _reseeded(problem, trial)
            traj = None
        if traj is None:
            traj = trajectory_for(problem, prefer_exact=cfg.feature_source == "exact")
        stage = "noise"
        if cfg.feature_source == "exact":
            if cfg.noise_percent > 0:
                raise ValueError("exact features cannot be combined with noise")
            source = exact_source(problem)
            observed = traj
        else:
            observed = add_noise(traj, cfg.noise_percent, cfg.noise_seed + trial)
            source = FiniteDifferenceSource(observed, cfg.space_accuracy, cfg.time_accuracy)
        g = observed.grid

        stage = "sensors"
        fd_halo = FiniteDifferenceSource(observed, cfg.space_accuracy, cfg.time_accuracy)
        halo = fd_halo.halo(dictionary.max_order)
        patches = _sensor_patches(cfg, g, halo, seed)
        row["n_patches"] = len(patches)

        stage = "assemble"
        targets = cfg.target_fields
        systems = {t: [assemble_patch_system(source, p, dictionary, t,
                                             value_fields=dictionary.fields) for p in patches]
                   for t in targets}

        stage = "filter"
        first = systems[targets[0]]
        betas = [sobolev_seminorm(s) for s in first]
        keep_sob = [True] * len(first)
        if cfg.filters.sobolev:
            kept = set(filter_by_sobolev(list(zip(range(len(first)), betas)),
                                         cfg.filters.lower, cfg.filters.upper))
            keep_sob = [j in kept for j in range(len(first))]
        keep_var = [True] * len(first)
        sigma = {}
        if cfg.filters.variation:
            npatch = noise_patches(g, cfg.filters.noise_patches, cfg.filters.noise_radius,
                                   cfg.filters.noise_time_radius)
            for f in dictionary.fields:
                sigma[f] = estimate_noise_variance(observed, npatch, f,
                                                   cfg.filters.lipschitz).sigma_hat
            sig = [sigma[f] for f in dictionary.fields]
            keep_var = [variation_test(s.values, sig, seed=j) for j, s in enumerate(first)]
        row["sigma_hat"] = ";".join(f"{f}={v:.6g}" for f, v in sigma.items())
        keep = [a and b for a, b in zip(keep_sob, keep_var)]
        if not any(keep):
            raise ValueError("every patch was removed by the filters")
        row["n_kept"] = int(sum(keep))
        for j, s in enumerate(first):
            diag = condition_diagnostic(s)
            prow = {"patch_id": s.patch.id, "center_x": s.center_coords[0],
                    "center_t": s.center_coords[-1], "beta": betas[j],
                    "kept_by_sobolev": int(keep_sob[j]), "kept_by_variation": int(keep_var[j]),
                    "condition_ratio": diag.ratio}
            if cfg.caslr.epsilon and cfg.filters.lipschitz:
                R = max(max(r * d for r, d in zip(s.patch.radius, g.dx)), s.patch.time_radius * g.dt)
                prow["theorem_margin"] = int(identifiability_margin(
                    diag, cfg.filters.lipschitz, R, cfg.caslr.epsilon)[1])
            artifacts["patches"].append(prow)

        stage = "identify"
        found: dict[str, list[str]] = {}
        for t in targets:
            kept_sys = [s for s, k in zip(systems[t], keep) if k]
            res = sweep_and_score(kept_sys, names=dictionary.names, rho_rule=cfg.caslr.rho_rule,
                                  solver=cfg.caslr.solver, target=t)
            artifacts["results"][t] = res
            artifacts["tables"][t] = reconstruct_coefficients(res, kept_sys)
            found[t] = res.support_names
        row["support"] = ";".join(f"{t}:{'+'.join(n)}" for t, n in found.items())
        row["l_star"] = ";".join(str(artifacts["results"][t].l_star) for t in targets)

        stage = "evaluate"
        truth = cfg.truth_model()
        true_sets = {t: list(truth.get(t, {})) for t in targets}
        row["jaccard"] = jaccard(_labels(true_sets), _labels(found))
        num = den = 0.0
        for t in targets:
            n_, d_ = coefficient_error_terms(artifacts["tables"][t], truth.get(t, {}))
            num, den = num + n_, den + d_
        row["coefficient_error"] = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
    except Exception as exc:  # noqa: BLE001 - recorded per stage, experiment continues
        log.warning("trial %d failed in stage %s: %s", trial, stage, exc)
        row.update(status="failed", stage=stage, error=f"{type(exc).__name__}: {exc}")
    row["_artifacts"] = artifacts
    return row


# --------------------------------------------------------------------------- writers


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r.get(k), float)
                                                         else r[k])) for k in columns})


def _write_trial_artifacts(out: Path, row: dict) -> None:
    art = row.get("_artifacts") or {}
    d = out / "trials" / f"trial_{row['trial']:03d}"
    d.mkdir(parents=True, exist_ok=True)
    if art.get("patches"):
        write_patch_report(art["patches"], d / "patches.csv")
    for t, res in art.get("results", {}).items():
        res.save_json(d / f"result_{t}.json")
    for t, table in art.get("tables", {}).items():
        table.write_csv(d / f"coefficients_{t}.csv")


PLOT_TRIALS = '''"""Plot per-trial accuracy of experiment {name} (generated; not executed by pdeid)."""
import csv
import matplotlib.pyplot as plt

rows = [r for r in csv.DictReader(open("trials.csv")) if r["status"] == "ok"]
trials = [int(r["trial"]) for r in rows]
fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
ax[0].plot(trials, [float(r["jaccard"]) for r in rows], "o-")
ax[0].set_xlabel("trial"); ax[0].set_ylabel("Jaccard")
ax[1].semilogy(trials, [float(r["coefficient_error"]) for r in rows], "o-")
ax[1].set_xlabel("trial"); ax[1].set_ylabel("coefficient error")
fig.tight_layout()
fig.savefig("{name}_trials.png", dpi=150)
'''


def _provenance(raw: dict) -> dict:
    return {"config_hash": config_hash(raw), "version": __version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}


# --------------------------------------------------------------------------- experiments


def _pool_trial(args):
    raw, trial = args
    return run_trial(parse_config(raw), trial)


def run_experiment(config, out_dir: str | Path | None = None, jobs: int = 1,
                   seed: int | None = None, write: bool = True) -> ExperimentReport:
    """Run every trial of an identification experiment and write its report.

    ``config`` is a raw mapping or a parsed :class:`ExperimentConfig`.
    """
    raw = config.raw if isinstance(config, ExperimentConfig) else dict(config)
    if seed is not None:
        raw = set_dotted(raw, "seed", int(seed))
    cfg = parse_config(raw)
    if cfg.feature_source == "exact" and cfg.noise_percent > 0:
        raise ConfigError("features.source", "exact features cannot be combined with noise")
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_pool_trial, [(raw, i) for i in range(cfg.trials)]))
    else:
        traj = None if cfg.vary_initial_seed else trajectory_for(
            cfg.problem, prefer_exact=cfg.feature_source == "exact")
        rows = [run_trial(cfg, i, traj) for i in range(cfg.trials)]
    report = ExperimentReport(cfg.name, [], _provenance(raw))
    out = Path(out_dir or cfg.output or f"results/{cfg.name}") if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for r in rows:
            _write_trial_artifacts(out, r)
    report.rows = [{k: v for k, v in r.items() if k != "_artifacts"} for r in rows]
    if out is not None:
        _write_csv(out / "trials.csv", report.rows, TRIAL_COLUMNS)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, default=str))
        (out / f"plot_{cfg.name}.py").write_text(PLOT_TRIALS.format(name=cfg.name))
    return report


def run_sweep(config: dict, out_dir: str | Path | None = None, jobs: int = 1,
              seed: int | None = None) -> list[ExperimentReport]:
    """Run the experiment once per combination of the ``sweep`` entries."""
    raw = dict(config)
    sweep = raw.pop("sweep", {}) or {}
    base_out = Path(out_dir or raw.get("output") or f"results/{raw.get('name', 'sweep')}")
    keys = sorted(sweep)
    reports = []
    rows = []
    for values in itertools.product(*(sweep[k] for k in keys)):
        r = raw
        for k, v in zip(keys, values):
            r = set_dotted(r, k, v)
        tag = "_".join(f"{k.split('.')[-1]}{v}" for k, v in zip(keys, values)) or "base"
        rep = run_experiment(r, base_out / tag, jobs=jobs, seed=seed)
        rep.params = dict(zip(keys, values))
        reports.append(rep)
        agg = rep.aggregates
        rows.append({**rep.params, **{k: agg[k] for k in ("mean_jaccard", "std_jaccard",
                                                         "mean_coefficient_error", "completed",
                                                         "trials")}})
    base_out.mkdir(parents=True, exist_ok=True)
    _write_csv(base_out / "sweep.csv", rows, keys + ["mean_jaccard", "std_jaccard",
                                                     "mean_coefficient_error", "completed",
                                                     "trials"])
    return reports


# --------------------------------------------------------------------------- dimension study


PLOT_DIMENSION = '''"""Dominant singular value percentages (generated; not executed by pdeid)."""
import csv
import glob
import matplotlib.pyplot as plt

fig, ax = plt.subplots()
for path in sorted(glob.glob("counts_*.csv")):
    rows = list(csv.DictReader(open(path)))
    ax.loglog([float(r["threshold"]) for r in rows], [float(r["percentage"]) for r in rows],
              "o-", label=path[7:-4])
ax.set_xlabel("threshold"); ax.set_ylabel("dominant singular values (%)")
ax.legend(fontsize=7)
fig.savefig("dimension.png", dpi=150)
'''


def _with_initial(problem: EvolutionProblem, ic: InitialCondition) -> EvolutionProblem:
    d = problem.to_dict()
    d["initial"] = {"u": ic.to_dict()}
    return EvolutionProblem.from_dict(d)


def run_dimension_study(config: dict, out_dir: str | Path | None = None) -> dict[str, Any]:
    """Snapshot-matrix singular spectra per (problem, initial family, window).

    Config keys: ``problems`` (list of ``{name, problem}``), ``windows``,
    ``thresholds``, optional ``initial_families`` (names of ``square``/``hat``/
    ``int``/``bump``), ``relative`` (default true), ``exact`` (sample closed
    forms when available) and ``random_modes`` (``{modes: [..], seeds: n,
    threshold: t}``) for the random-initial sweep.
    """
    problems = config.get("problems") or []
    if not problems:
        raise ConfigError("problems", "at least one problem is required")
    out = Path(out_dir or config.get("output") or f"results/{config.get('name', 'dimension')}")
    out.mkdir(parents=True, exist_ok=True)
    thresholds = [float(t) for t in config.get("thresholds", [1e-3])]
    relative = bool(config.get("relative", True))
    exact = bool(config.get("exact", True))
    families = config.get("initial_families") or [None]
    summary: dict[str, Any] = {}
    written = []
    for entry in problems:
        name = entry["name"]
        base = EvolutionProblem.from_dict(entry["problem"])
        for fam in families:
            prob = base if fam is None else _with_initial(base, InitialCondition(fam, {}))
            traj = trajectory_for(prob, prefer_exact=exact)
            g = traj.grid
            windows = config.get("windows") or [[g.time_extent[0], g.time_extent[1]]]
            for w in windows:
                rep = svd_dimension_report(traj, (float(w[0]), float(w[1])), thresholds, relative)
                tag = f"{name}" + (f"_{fam}" if fam else "") + f"_t{w[0]}-{w[1]}"
                rep.write_csv(out / f"svd_{tag}.csv")
                pct = rep.percentages()
                _write_csv(out / f"counts_{tag}.csv",
                           [{"threshold": float(t), "count": rep.counts[t], "percentage": pct[t],
                             "n_singular_values": len(rep.singular_values)} for t in thresholds],
                           ["threshold", "count", "percentage", "n_singular_values"])
                summary[tag] = rep.counts
                written.append(f"counts_{tag}.csv")
    rnd = config.get("random_modes")
    if rnd:
        modes = list(rnd.get("modes", [1, 2, 3]))
        if len(modes) == 2 and rnd.get("range", True) and modes[1] > modes[0] + 1:
            modes = list(range(int(modes[0]), int(modes[1]) + 1))
        seeds = int(rnd.get("seeds", 20))
        thr = float(rnd.get("threshold", 1e-3))
        for entry in problems:
            name = entry["name"]
            base = EvolutionProblem.from_dict(entry["problem"])
            rows = []
            for M in modes:
                pcts = []
                for s in range(seeds):
                    ic = InitialCondition("random_fourier", {"modes": int(M), "seed": s})
                    traj = trajectory_for(_with_initial(base, ic), prefer_exact=exact)
                    sv = svd_dimension_report(traj, None, [thr], relative).singular_values
                    pcts.append(100.0 * count_dominant(sv, thr, relative) / len(sv))
                rows.append({"modes": int(M), "mean_percentage": float(np.mean(pcts)),
                             "std_percentage": float(np.std(pcts)), "seeds": seeds})
            _write_csv(out / f"random_{name}.csv", rows,
                       ["modes", "mean_percentage", "std_percentage", "seeds"])
            summary[f"random_{name}"] = rows
    (out / "plot_dimension.py").write_text(PLOT_DIMENSION)
    summary["_files"] = written
    return summary


# --------------------------------------------------------------------------- trimming study


def run_trim_comparison(config: dict, out_dir: str | Path | None = None, jobs: int = 1,
                        seed: int | None = None) -> dict[str, dict[str, float]]:
    """Identical trials with patch filtering on and off for each equation.

    Config: ``equations`` (list of ``{name, problem, noise}``) and ``common``
    (sensors, dictionary, caslr, filters, trials, seed shared by all).
    Returns ``{"with_trim": {eq: mean}, "without_trim": {eq: mean}}``.
    """
    eqs = config.get("equations") or []
    if not eqs:
        raise ConfigError("equations", "at least one equation is required")
    common = dict(config.get("common", {}))
    out = Path(out_dir or config.get("output") or f"results/{config.get('name', 'trim')}")
    table: dict[str, dict[str, float]] = {"with_trim": {}, "without_trim": {}}
    for eq in eqs:
        for variant, on in (("with_trim", True), ("without_trim", False)):
            raw = {**common, **{k: v for k, v in eq.items() if k != "name"}, "name": eq["name"]}
            filt = dict(raw.get("filters", {}) or {})
            filt.update(sobolev=on, variation=on)
            raw["filters"] = filt
            rep = run_experiment(raw, out / eq["name"] / variant, jobs=jobs, seed=seed)
            table[variant][eq["name"]] = rep.mean_jaccard
    names = [e["name"] for e in eqs]
    _write_csv(out / "trim_table.csv",
               [{"variant": v, **table[v]} for v in ("with_trim", "without_trim")],
               ["variant"] + names)
    return table


# --------------------------------------------------------------------------- noise estimate


def run_noise_estimate(config: dict, out_dir: str | Path | None = None,
                       seed: int | None = None) -> dict[str, dict]:
    """Estimate the noise variance of the configured (noisy) trajectory per field."""
    if seed is not None:
        config = set_dotted(config, "noise.seed", int(seed))
    cfg = parse_config(config)
    traj = add_noise(trajectory_for(cfg.problem), cfg.noise_percent, cfg.noise_seed)
    f = cfg.filters
    patches = noise_patches(traj.grid, f.noise_patches, f.noise_radius, f.noise_time_radius)
    out = {name: estimate_noise_variance(traj, patches, name, f.lipschitz).to_dict()
           for name in traj.names}
    for name in traj.names:
        out[name]["true_sigma"] = cfg.noise_percent / 100.0 * float(np.std(trajectory_for(cfg.problem)[name]))
    if out_dir is not None:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        (p / "noise_estimate.json").write_text(json.dumps(out, indent=2))
    return out

"""Declarative experiment configuration (YAML) with field-level validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .features import Dictionary, FeatureDescriptor, build_dictionary, central_halfwidth
from .solvers import EvolutionProblem, true_model

__all__ = [
    "ConfigError",
    "SensorSpec",
    "DictionarySpec",
    "FilterSpec",
    "CaslrSpec",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
    "set_dotted",
]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry (dotted path)."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class SensorSpec:
    count: int = 5
    radius: int = 3
    time_radius: int = 5
    times: int | list[int] = 10
    include_endpoints: bool = True
    placement: str = "uniform"
    circle_radius: float = 10.0


@dataclass
class DictionarySpec:
    fields: list[str] = field(default_factory=lambda: ["u"])
    max_derivative_order: int = 4
    max_product_terms: int = 3
    trig_terms: list[str] = field(default_factory=list)

    def build(self, ndim: int) -> Dictionary:
        trig = [FeatureDescriptor.parse(t, ndim) for t in self.trig_terms]
        return build_dictionary(self.fields, self.max_derivative_order, self.max_product_terms,
                                trig, ndim)


@dataclass
class FilterSpec:
    sobolev: bool = True
    lower: float = 1.0
    upper: float = 99.0
    variation: bool = True
    noise_patches: int = 200
    noise_radius: int = 3
    noise_time_radius: int = 3
    lipschitz: float | None = None


@dataclass
class CaslrSpec:
    rho_rule: str = "mean_0_to_K-1"
    solver: str = "gram"
    epsilon: float | None = None


@dataclass
class ExperimentConfig:
    name: str
    problem: EvolutionProblem
    seed: int = 0
    trials: int = 1
    noise_percent: float = 0.0
    noise_seed: int = 0
    sensors: SensorSpec = field(default_factory=SensorSpec)
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    feature_source: str = "fd"
    space_accuracy: int = 4
    time_accuracy: int = 2
    filters: FilterSpec = field(default_factory=FilterSpec)
    caslr: CaslrSpec = field(default_factory=CaslrSpec)
    truth: dict[str, dict[str, str]] | None = None
    targets: list[str] | None = None
    output: str | None = None
    sweep: dict[str, list] = field(default_factory=dict)
    vary_initial_seed: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def target_fields(self) -> list[str]:
        return list(self.targets) if self.targets else list(self.problem.fields)

    def truth_model(self) -> dict[str, dict[str, Any]]:
        if self.truth is not None:
            return self.truth
        return {f: {k: v for k, v in terms.items()} for f, terms in true_model(self.problem).items()}


def _get(d: dict, key: str, default, path: str, typ=None):
    v = d.get(key, default)
    if typ is not None and v is not None:
        try:
            v = typ(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.{key}" if path else key, f"expected {typ.__name__}: {exc}")
    return v


def set_dotted(d: dict, key: str, value) -> dict:
    """Copy of ``d`` with ``d[a][b]... = value`` for ``key = "a.b..."``."""
    out = copy.deepcopy(d)
    cur = out
    parts = key.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate and convert a raw mapping (as loaded from YAML)."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    if "problem" not in raw:
        raise ConfigError("problem", "missing")
    try:
        problem = EvolutionProblem.from_dict(raw["problem"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("problem", str(exc)) from exc
    g = problem.grid

    trials = _get(raw, "trials", 1, "", int)
    if trials < 1:
        raise ConfigError("trials", "must be at least 1")
    noise = raw.get("noise", {}) or {}
    percent = _get(noise, "percent", 0.0, "noise", float)
    if percent < 0:
        raise ConfigError("noise.percent", "must be non-negative")

    s = raw.get("sensors", {}) or {}
    sensors = SensorSpec(
        count=_get(s, "count", 5, "sensors", int),
        radius=_get(s, "radius", 3, "sensors", int),
        time_radius=_get(s, "time_radius", 5, "sensors", int),
        times=s.get("times", 10),
        include_endpoints=bool(s.get("include_endpoints", True)),
        placement=str(s.get("placement", "uniform")),
        circle_radius=_get(s, "circle_radius", 10.0, "sensors", float),
    )
    if sensors.count < 1:
        raise ConfigError("sensors.count", "must be at least 1")
    if sensors.radius < 0 or sensors.time_radius < 0:
        raise ConfigError("sensors.radius", "radii must be non-negative")
    if sensors.placement not in ("uniform", "circle"):
        raise ConfigError("sensors.placement", f"unknown placement {sensors.placement!r}")

    dct = raw.get("dictionary", {}) or {}
    dspec = DictionarySpec(
        fields=list(dct.get("fields", list(problem.fields))),
        max_derivative_order=_get(dct, "max_derivative_order", 4, "dictionary", int),
        max_product_terms=_get(dct, "max_product_terms", 3, "dictionary", int),
        trig_terms=list(dct.get("trig_terms", [])),
    )
    try:
        dictionary = dspec.build(g.ndim)
    except ValueError as exc:
        raise ConfigError("dictionary", str(exc)) from exc
    unknown = set(dictionary.fields) - set(problem.fields)
    if unknown:
        raise ConfigError("dictionary.fields", f"fields {sorted(unknown)} are not produced by the problem")

    feats = raw.get("features", {}) or {}
    source = str(feats.get("source", "fd"))
    if source not in ("fd", "exact"):
        raise ConfigError("features.source", f"expected 'fd' or 'exact', got {source!r}")
    space_acc = _get(feats, "space_accuracy", 4, "features", int)
    time_acc = _get(feats, "time_accuracy", 2, "features", int)

    # patch geometry must fit the grid including derivative stencils
    halo = max((central_halfwidth(p, space_acc) for p in range(1, dictionary.max_order + 1)),
               default=0)
    for i in range(g.ndim):
        n = g.space_points[i]
        need = 2 * sensors.radius + 1 + (0 if g.periodic[i] else 2 * halo)
        if need > n:
            raise ConfigError("sensors.radius",
                              f"patch width {need} (with stencil clearance) exceeds the "
                              f"{n} points of axis {g.axis_name(i)}")
    t_need = 2 * sensors.time_radius + 1 + 2 * central_halfwidth(1, time_acc)
    if t_need > g.time_points:
        raise ConfigError("sensors.time_radius",
                          f"patch duration {t_need} exceeds the {g.time_points} time points")

    f = raw.get("filters", {}) or {}
    filters = FilterSpec(
        sobolev=bool(f.get("sobolev", True)),
        lower=_get(f, "lower", 1.0, "filters", float),
        upper=_get(f, "upper", 99.0, "filters", float),
        variation=bool(f.get("variation", True)),
        noise_patches=_get(f, "noise_patches", 200, "filters", int),
        noise_radius=_get(f, "noise_radius", 3, "filters", int),
        noise_time_radius=_get(f, "noise_time_radius", 3, "filters", int),
        lipschitz=_get(f, "lipschitz", None, "filters", float),
    )
    if not 0 <= filters.lower <= filters.upper <= 100:
        raise ConfigError("filters.lower", "percentiles must satisfy 0 <= lower <= upper <= 100")

    c = raw.get("caslr", {}) or {}
    caslr = CaslrSpec(rho_rule=str(c.get("rho_rule", "mean_0_to_K-1")),
                      solver=str(c.get("solver", "gram")),
                      epsilon=_get(c, "epsilon", None, "caslr", float))
    if caslr.rho_rule not in ("mean_0_to_K-1", "mean_1_to_K"):
        raise ConfigError("caslr.rho_rule", f"unknown rule {caslr.rho_rule!r}")
    if caslr.solver not in ("gram", "svd"):
        raise ConfigError("caslr.solver", f"unknown solver {caslr.solver!r}")

    targets = raw.get("targets")
    if targets is not None:
        bad = set(targets) - set(problem.fields)
        if bad:
            raise ConfigError("targets", f"unknown fields {sorted(bad)}")
    truth = raw.get("truth")
    if truth is not None and not isinstance(truth, dict):
        raise ConfigError("truth", "expected a mapping field -> {term: coefficient}")
    sweep = raw.get("sweep", {}) or {}
    if not isinstance(sweep, dict) or any(not isinstance(v, list) or not v for v in sweep.values()):
        raise ConfigError("sweep", "expected a mapping of dotted keys to non-empty lists")

    return ExperimentConfig(
        name=str(raw.get("name", problem.name or problem.kind)),
        problem=problem,
        seed=_get(raw, "seed", 0, "", int),
        trials=trials,
        noise_percent=percent,
        noise_seed=_get(noise, "seed", 0, "noise", int),
        sensors=sensors,
        dictionary=dspec,
        feature_source=source,
        space_accuracy=space_acc,
        time_accuracy=time_acc,
        filters=filters,
        caslr=caslr,
        truth=truth,
        targets=list(targets) if targets else None,
        output=raw.get("output"),
        sweep=sweep,
        vary_initial_seed=bool(raw.get("vary_initial_seed", False)),
        raw=copy.deepcopy(raw),
    )


def load_config(path: str | Path) -> dict:
    """Read a YAML file into a raw mapping (validated later by the runner)."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"{path} does not contain a mapping")
    return data


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a raw configuration."""
    return hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode()).hexdigest()

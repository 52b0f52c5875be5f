"""Consistent sparse local regression: group subspace pursuit, model score, metrics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .expr import Expression

__all__ = [
    "CandidateModel",
    "IdentificationResult",
    "CoefficientTable",
    "ErrorValue",
    "GroupPool",
    "lstsq_min_norm",
    "group_subspace_pursuit",
    "exhaustive_search",
    "sweep_and_score",
    "reconstruct_coefficients",
    "jaccard",
    "coefficient_error",
    "coefficient_error_terms",
]

log = logging.getLogger(__name__)

RCOND = 1e-10
MAX_ITER = 20
RHO_RULES = ("mean_0_to_K-1", "mean_1_to_K")
_EPS = np.finfo(float).eps


# --------------------------------------------------------------------------- least squares


def lstsq_min_norm(A: np.ndarray, b: np.ndarray, rcond: float = RCOND):
    """Minimum-norm least squares ``A x ~ b`` via SVD, batched over leading axes.

    Singular values at or below ``rcond * s_max`` are treated as zero.  Returns
    ``(x, residual_sq, rank_deficient)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape[-1] == 0:
        res = np.sum(b**2, axis=-1)
        return np.zeros(A.shape[:-2] + (0,)), res, np.zeros(A.shape[:-2], dtype=bool)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    smax = s[..., :1]
    keep = s > rcond * smax
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    coef = np.einsum("...ki,...k->...i", U, b) * inv
    x = np.einsum("...ij,...i->...j", Vt, coef)
    r = b - np.einsum("...ij,...j->...i", A, x)
    deficient = keep.sum(axis=-1) < A.shape[-1]
    return x, np.sum(r**2, axis=-1), deficient


def _gram_solve(G: np.ndarray, h: np.ndarray, rcond: float = RCOND, flag: bool = False):
    """Batched restricted normal equations ``G c = h`` (``G`` is ``(J, s, s)``).

    Columns are Jacobi-scaled per patch and a ridge at the numerical floor
    ``max(rcond^2, 10 s eps)`` regularizes singular blocks, which approximates the
    minimum-norm solution.  With ``flag`` the blocks whose Cholesky pivots fall
    below that floor are reported as rank deficient.  Returns ``(c, deficient)``.
    """
    J, s, _ = G.shape
    if s == 0:
        return np.zeros((J, 0)), np.zeros(J, dtype=bool)
    d = np.einsum("jii->ji", G)
    dmax = d.max(axis=1, keepdims=True)
    zero = d <= _EPS * np.where(dmax > 0, dmax, 1.0)
    sd = np.sqrt(np.where(zero, 1.0, d))
    A = G / (sd[:, :, None] * sd[:, None, :])
    A = np.where(zero[:, :, None] | zero[:, None, :], 0.0, A)
    idx = np.arange(s)
    A[:, idx, idx] = 1.0
    y = np.where(zero, 0.0, h / sd)
    floor = max(rcond**2, 10 * s * _EPS)
    deficient = zero.any(axis=1)
    if flag:
        try:
            piv = np.einsum("jii->ji", np.linalg.cholesky(A)) ** 2
            deficient |= piv.min(axis=1) < floor
            flag = False
        except np.linalg.LinAlgError:
            pass
    if flag:
        for j in range(J):
            try:
                piv = np.diag(np.linalg.cholesky(A[j])) ** 2
                deficient[j] |= bool(piv.min() < floor)
            except np.linalg.LinAlgError:
                deficient[j] = True
    A[:, idx, idx] += floor
    c = np.linalg.solve(A, y[..., None])[..., 0]
    return c / sd, deficient


class GroupPool:
    """Pooled per-patch regression data in Gram form for fast restricted solves.

    Columns are normalized by their pooled 2-norm across all patches; every
    quantity returned to callers is mapped back to physical units.
    """

    def __init__(self, systems: Sequence, rcond: float = RCOND, solver: str = "gram"):
        if not systems:
            raise ValueError("at least one patch system is required")
        Ks = {s.F.shape[1] for s in systems}
        if len(Ks) != 1:
            raise ValueError("patch systems have different dictionary sizes")
        if any(s.F.shape[0] == 0 for s in systems):
            raise ValueError("empty patch system")
        if solver not in ("gram", "svd"):
            raise ValueError(f"unknown solver {solver!r}")
        self.K = Ks.pop()
        self.J = len(systems)
        self.rcond = rcond
        self.solver = solver
        sq = sum(np.sum(np.asarray(s.F, dtype=float) ** 2, axis=0) for s in systems)
        self.scale = np.where(sq > 0, np.sqrt(sq), 1.0)
        self.F = [np.asarray(s.F, dtype=float) / self.scale for s in systems]
        self.b = [np.asarray(s.target, dtype=float) for s in systems]
        self.G = np.stack([F.T @ F for F in self.F])
        self.h = np.stack([F.T @ b for F, b in zip(self.F, self.b)])
        self.bb = np.array([b @ b for b in self.b])
        self.colnorm = np.sqrt(np.einsum("jkk->jk", self.G))
        self.E0 = float(self.bb.sum())
        self._cache: dict = {}
        self._by_rows: dict[int, list[int]] = {}
        for j, F in enumerate(self.F):
            self._by_rows.setdefault(F.shape[0], []).append(j)

    def solve(self, support: tuple[int, ...], flag: bool = False):
        """Per-patch coefficients (normalized units), per-patch errors, deficiency flags."""
        support = tuple(sorted(support))
        if not flag and support in self._cache:
            return self._cache[support]
        S = np.array(support, dtype=int)
        if self.solver == "gram":
            Gs = self.G[:, S][:, :, S]
            hs = self.h[:, S]
            c, deficient = _gram_solve(Gs, hs, self.rcond, flag)
            err = np.maximum(self.bb - np.einsum("js,js->j", hs, c), 0.0)
        else:
            c = np.zeros((self.J, len(S)))
            err = np.zeros(self.J)
            deficient = np.zeros(self.J, dtype=bool)
            for rows, idx in self._by_rows.items():
                A = np.stack([self.F[j][:, S] for j in idx])
                b = np.stack([self.b[j] for j in idx])
                x, r, dfc = lstsq_min_norm(A, b, self.rcond)
                c[idx], err[idx], deficient[idx] = x, r, dfc
        out = (c, err, deficient)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[support] = out
        return out

    def correlations(self, support: tuple[int, ...], c: np.ndarray) -> np.ndarray:
        """Group scores ``sqrt(sum_j (<r_j, F_j[:,k]> / ||F_j[:,k]||)^2)`` for every ``k``."""
        S = np.array(sorted(support), dtype=int)
        corr = self.h.copy()
        if len(S):
            corr -= np.einsum("jks,js->jk", self.G[:, :, S], c)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(self.colnorm > 0, corr / np.where(self.colnorm > 0, self.colnorm, 1.0), 0.0)
        return np.sqrt(np.sum(q**2, axis=0))

    def energies(self, support: tuple[int, ...], c: np.ndarray) -> np.ndarray:
        S = np.array(sorted(support), dtype=int)
        return np.sum(c**2 * self.colnorm[:, S] ** 2, axis=0)

    def physical(self, support: tuple[int, ...], c: np.ndarray) -> np.ndarray:
        return c / self.scale[np.array(sorted(support), dtype=int)]


def _top(scores: np.ndarray, count: int, exclude=()) -> list[int]:
    """Indices of the ``count`` largest scores, ties to the lowest index."""
    ex = set(exclude)
    order = sorted((k for k in range(len(scores)) if k not in ex), key=lambda k: (-scores[k], k))
    return order[:count]


# --------------------------------------------------------------------------- models


@dataclass
class CandidateModel:
    """Best support found at sparsity ``l`` with per-patch coefficients (physical units)."""

    l: int
    support: tuple[int, ...]
    coefficients: np.ndarray
    global_error: float
    score: float = float("nan")
    rank_deficient: tuple[int, ...] = ()
    iterations: int = 0

    def group_l0(self) -> int:
        """Number of support groups (rows of the stacked coefficients) kept by the model."""
        return len(self.support)

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        return {
            "l": self.l,
            "support": [names[k] if names else k for k in self.support],
            "global_error": self.global_error,
            "score": self.score,
            "rank_deficient_patches": list(self.rank_deficient),
        }


def _model(pool: GroupPool, support, iterations=0) -> CandidateModel:
    support = tuple(sorted(support))
    c, err, dfc = pool.solve(support, flag=True)
    return CandidateModel(len(support), support, pool.physical(support, c), float(err.sum()),
                          rank_deficient=tuple(int(j) for j in np.flatnonzero(dfc)),
                          iterations=iterations)


def _pursue(pool: GroupPool, l: int, start: tuple[int, ...], max_iter: int) -> CandidateModel:
    T = tuple(sorted(start))
    c, err, _ = pool.solve(T)
    best_T, best_err = T, float(err.sum())
    it = 0
    for it in range(1, max_iter + 1):
        scores = pool.correlations(T, c)
        merged = tuple(sorted(set(T) | set(_top(scores, l, exclude=T))))
        cm, _, _ = pool.solve(merged)
        energy = pool.energies(merged, cm)
        ranked = sorted(range(len(merged)), key=lambda i: (-energy[i], merged[i]))
        T_new = tuple(sorted(merged[i] for i in ranked[:l]))
        c_new, err_new, _ = pool.solve(T_new)
        e_new = float(err_new.sum())
        if T_new == T or e_new >= best_err:
            break
        T, c, best_T, best_err = T_new, c_new, T_new, e_new
    return _model(pool, best_T, it)


def group_subspace_pursuit(systems, l: int, warm_start: Sequence[Sequence[int]] = (),
                           max_iter: int = MAX_ITER, pool: GroupPool | None = None,
                           solver: str = "gram"):
    """Group subspace pursuit at sparsity ``l``.

    Each start support (the correlation top-``l`` plus any ``warm_start`` sets of
    size ``l``) is refined by expand-solve-prune cycles until the support is
    stable, the error stops decreasing, or ``max_iter`` cycles; the lowest-error
    result wins (ties to the first start).

    Returns ``(support, coefficients, global_error)`` where ``coefficients`` is
    ``(n_patches, l)`` in physical units; use :func:`pursuit_model` for the full
    :class:`CandidateModel`.
    """
    m = pursuit_model(systems, l, warm_start, max_iter, pool, solver)
    return m.support, m.coefficients, m.global_error


def pursuit_model(systems, l: int, warm_start=(), max_iter: int = MAX_ITER,
                  pool: GroupPool | None = None, solver: str = "gram") -> CandidateModel:
    pool = pool or GroupPool(systems, solver=solver)
    if not 1 <= l <= pool.K - 1 and not (l == pool.K == 1):
        raise ValueError(f"sparsity level {l} outside 1..{pool.K - 1}")
    zero = np.zeros((pool.J, 0))
    starts = [tuple(sorted(_top(pool.correlations((), zero), l)))]
    for w in warm_start:
        w = tuple(sorted(int(k) for k in w))
        if len(w) != l or len(set(w)) != l:
            raise ValueError(f"warm start {w} does not have {l} distinct indices")
        if w not in starts:
            starts.append(w)
    best = None
    for s in starts:
        m = _pursue(pool, l, s, max_iter)
        if best is None or m.global_error < best.global_error:
            best = m
    return best


def exhaustive_search(systems, l: int, solver: str = "svd") -> CandidateModel:
    """Best support of size ``l`` over all ``C(K, l)`` candidates (reference oracle)."""
    import itertools

    pool = GroupPool(systems, solver=solver)
    best = None
    for S in itertools.combinations(range(pool.K), l):
        m = _model(pool, S)
        if best is None or m.global_error < best.global_error:
            best = m
    return best


# --------------------------------------------------------------------------- sweep


@dataclass
class IdentificationResult:
    """Outcome of the sparsity sweep and model-score selection."""

    l_star: int
    support: tuple[int, ...]
    coefficients: np.ndarray
    rho: float
    rho_rule: str
    E0: float
    candidates: list[CandidateModel]
    names: list[str] | None = None
    patch_ids: list[int] = field(default_factory=list)
    patch_centers: list[tuple[float, ...]] = field(default_factory=list)
    target: str = "u"

    @property
    def trace(self) -> list[tuple[int, float, float]]:
        return [(m.l, m.global_error, m.score) for m in self.candidates]

    @property
    def chosen(self) -> CandidateModel:
        return self.candidates[self.l_star - 1]

    @property
    def support_names(self) -> list[str]:
        return [self.names[k] for k in self.support] if self.names else [str(k) for k in self.support]

    @property
    def rank_deficient(self) -> bool:
        return bool(self.chosen.rank_deficient)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "l_star": self.l_star,
            "support": self.support_names,
            "rho": self.rho,
            "rho_rule": self.rho_rule,
            "E0": self.E0,
            "trace": [{"l": l, "error": e, "score": s} for l, e, s in self.trace],
            "coefficients": [
                {"patch_id": pid, "center": list(c), **{n: float(v) for n, v in
                                                        zip(self.support_names, row)}}
                for pid, c, row in zip(self.patch_ids, self.patch_centers, self.coefficients)],
            "rank_deficient_patches": list(self.chosen.rank_deficient),
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def model_score(error: float, l: int, K: int, rho: float) -> float:
    """``S^l = E^l + rho * l / K``."""
    return error + rho * l / K


def sweep_and_score(systems, K: int | None = None, rho_rule: str = "mean_0_to_K-1",
                    rho: float | None = None, names: Sequence[str] | None = None,
                    solver: str = "gram", max_iter: int = MAX_ITER,
                    target: str | None = None) -> IdentificationResult:
    """Run the pursuit for ``l = 1..K-1`` with warm starts and pick ``argmin S^l``.

    ``rho`` defaults to the mean error over ``l = 0..K-1`` (``E^0 = sum ||u_t||^2``);
    ``rho_rule="mean_1_to_K"`` averages ``l = 1..K`` instead, with ``E^K`` from the
    full dictionary.  An explicit ``rho`` overrides both rules.
    """
    if rho_rule not in RHO_RULES:
        raise ValueError(f"unknown rho rule {rho_rule!r}; expected one of {RHO_RULES}")
    pool = GroupPool(systems, solver=solver)
    K = pool.K if K is None else int(K)
    if K != pool.K:
        raise ValueError(f"K={K} does not match the systems' dictionary size {pool.K}")
    if K < 2:
        raise ValueError("the sweep needs a dictionary with at least two features")
    models: list[CandidateModel] = []
    prev: tuple[int, ...] = ()
    for l in range(1, K):
        warm = []
        if prev:
            cp, _, _ = pool.solve(prev)
            extra = _top(pool.correlations(prev, cp), 1, exclude=prev)
            warm.append(prev + tuple(extra))
        m = pursuit_model(systems, l, warm, max_iter, pool)
        if models and m.global_error > models[-1].global_error:
            # numerical noise only; the warm start makes this unreachable in exact arithmetic
            m = _model(pool, warm[0]) if warm else m
        models.append(m)
        prev = m.support
    errors = np.array([m.global_error for m in models])
    if rho is None:
        if rho_rule == "mean_0_to_K-1":
            rho = float(np.mean(np.concatenate([[pool.E0], errors])))
        else:
            full = _model(pool, tuple(range(K)))
            rho = float(np.mean(np.concatenate([errors, [full.global_error]])))
    for m in models:
        m.score = model_score(m.global_error, m.l, K, rho)
    scores = np.array([m.score for m in models])
    l_star = int(np.flatnonzero(scores == scores.min())[0]) + 1
    chosen = models[l_star - 1]
    ids = [getattr(s.patch, "id", j) if hasattr(s, "patch") else j for j, s in enumerate(systems)]
    centers = [tuple(getattr(s, "_grid_center", ())) for s in systems]
    return IdentificationResult(l_star, chosen.support, chosen.coefficients, float(rho), rho_rule,
                                pool.E0, models, list(names) if names else None, ids, centers,
                                target or getattr(systems[0], "field", "u"))


# --------------------------------------------------------------------------- reconstruction


@dataclass
class CoefficientTable:
    """Per-patch coefficients on a fixed support, in physical units."""

    support: tuple[int, ...]
    names: list[str]
    patch_ids: list[int]
    centers: list[tuple[float, ...]]
    values: np.ndarray
    rank_deficient: list[bool]

    def as_dicts(self) -> list[dict[str, float]]:
        return [dict(zip(self.names, row)) for row in self.values]

    def write_csv(self, path: str | Path) -> None:
        ndim = len(self.centers[0]) if self.centers else 0
        axes = (["x", "y", "z"][: ndim - 1] + ["t"]) if ndim else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patch_id"] + [f"center_{a}" for a in axes] + list(self.names)
                       + ["rank_deficient"])
            for pid, c, row, rd in zip(self.patch_ids, self.centers, self.values,
                                       self.rank_deficient):
                w.writerow([pid] + [repr(float(v)) for v in c] + [repr(float(v)) for v in row]
                           + [int(rd)])


def reconstruct_coefficients(result, systems, rcond: float = RCOND) -> CoefficientTable:
    """Unrestricted per-patch least squares on the chosen support (SVD, min-norm)."""
    support = tuple(result.support if hasattr(result, "support") else result)
    if not support:
        raise ValueError("result has an empty support")
    S = np.array(support, dtype=int)
    vals = np.zeros((len(systems), len(S)))
    deficient = []
    for j, s in enumerate(systems):
        F = np.asarray(s.F, dtype=float)[:, S]
        scale = np.linalg.norm(F, axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        x, _, dfc = lstsq_min_norm(F / scale, np.asarray(s.target, dtype=float), rcond)
        vals[j] = x / scale
        deficient.append(bool(dfc))
        if dfc:
            log.warning("patch %s: rank-deficient system on the chosen support",
                        getattr(getattr(s, "patch", None), "id", j))
    names = getattr(result, "names", None)
    names = [names[k] for k in support] if names else [str(k) for k in support]
    ids = [getattr(getattr(s, "patch", None), "id", j) for j, s in enumerate(systems)]
    centers = [tuple(getattr(s, "_grid_center", ())) for s in systems]
    return CoefficientTable(support, names, ids, centers, vals, deficient)


# --------------------------------------------------------------------------- metrics


def jaccard(true_support, found_support) -> float:
    """``|A & B| / |A | B|`` with ``jaccard(set(), set()) = 1``."""
    a, b = set(true_support), set(found_support)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


class ErrorValue(float):
    """A float carrying whether it is relative (normal) or absolute (zero truth)."""

    relative: bool = True

    def __new__(cls, value: float, relative: bool = True):
        obj = super().__new__(cls, value)
        obj.relative = relative
        return obj


def _evaluate_truth(expr, center: Sequence[float]) -> float:
    e = expr if isinstance(expr, Expression) else Expression(expr)
    if len(center) == 2:
        return float(e(x=center[0], t=center[1]))
    if len(center) == 3:
        return float(e(x=center[0], y=center[1], t=center[2]))
    raise ValueError(f"unsupported center {center}")


def coefficient_error_terms(table: CoefficientTable, truth: Mapping[str, object]
                            ) -> tuple[float, float]:
    """Squared-error numerator and squared-truth denominator of :func:`coefficient_error`."""
    names = list(dict.fromkeys(list(truth) + list(table.names)))
    num = den = 0.0
    for center, row in zip(table.centers, table.values):
        found = dict(zip(table.names, row))
        for n in names:
            c_true = _evaluate_truth(truth[n], center) if n in truth else 0.0
            num += (float(found.get(n, 0.0)) - c_true) ** 2
            den += c_true**2
    return num, den


def coefficient_error(table: CoefficientTable, truth: Mapping[str, object]) -> ErrorValue:
    """Relative l2 error of coefficients over all patch centers.

    Features on either support contribute; a feature missing from one side is
    counted as zero there.  When the truth is identically zero the absolute
    error is returned with ``relative = False``.
    """
    num, den = coefficient_error_terms(table, truth)
    if den == 0.0:
        log.warning("true coefficients vanish at every patch center; reporting absolute error")
        return ErrorValue(np.sqrt(num), relative=False)
    return ErrorValue(np.sqrt(num / den), relative=True)

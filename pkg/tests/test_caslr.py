import itertools
import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdeid.caslr import (CoefficientTable, GroupPool, coefficient_error, exhaustive_search,
                         group_subspace_pursuit, jaccard, lstsq_min_norm, model_score,
                         pursuit_model, reconstruct_coefficients, sweep_and_score)


def planted(K=8, J=3, m=40, support=(1, 4), noise=0.0, seed=0):
    """Per-patch systems ``b_j = F_j[:, S] c_j`` with patch-dependent coefficients."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(J):
        F = rng.standard_normal((m, K))
        c = rng.uniform(1.0, 2.0, len(support)) * rng.choice([-1, 1], len(support))
        b = F[:, list(support)] @ c + noise * rng.standard_normal(m)
        s = SimpleNamespace(F=F, target=b, patch=SimpleNamespace(id=j), field="u")
        s._grid_center = (0.1 * j, 0.5)
        out.append(s)
    return out


def test_lstsq_min_norm_matches_numpy():
    rng = np.random.default_rng(1)
    A, b = rng.standard_normal((12, 4)), rng.standard_normal(12)
    x, res, dfc = lstsq_min_norm(A, b)
    np.testing.assert_allclose(x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-12)
    assert res == pytest.approx(np.sum((A @ x - b) ** 2))
    assert not dfc


def test_lstsq_min_norm_rank_deficient_gives_min_norm():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    x, _, dfc = lstsq_min_norm(A, np.array([2.0, 4.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)
    assert dfc


@pytest.mark.parametrize("solver", ["gram", "svd"])
def test_pool_solve_matches_per_patch_lstsq(solver):
    systems = planted(noise=0.3, seed=2)
    pool = GroupPool(systems, solver=solver)
    S = (0, 3, 5)
    c, err, _ = pool.solve(S)
    phys = pool.physical(S, c)
    total = 0.0
    for j, s in enumerate(systems):
        x = np.linalg.lstsq(s.F[:, S], s.target, rcond=None)[0]
        np.testing.assert_allclose(phys[j], x, rtol=1e-7, atol=1e-9)
        total += np.sum((s.F[:, S] @ x - s.target) ** 2)
    assert err.sum() == pytest.approx(total, rel=1e-8)


def test_pool_rejects_inconsistent_systems():
    a = planted(K=5)[0]
    b = planted(K=6)[0]
    with pytest.raises(ValueError):
        GroupPool([a, b])
    with pytest.raises(ValueError):
        GroupPool([])


def test_pursuit_recovers_planted_support():
    systems = planted(K=12, J=4, support=(2, 7, 9), seed=5)
    S, coef, err = group_subspace_pursuit(systems, 3)
    assert S == (2, 7, 9)
    assert coef.shape == (4, 3)
    E0 = sum(s.target @ s.target for s in systems)
    assert err < 1e-12 * E0


def test_pursuit_sparsity_out_of_range():
    with pytest.raises(ValueError):
        pursuit_model(planted(K=5), 5)


def test_pursuit_warm_start_validation():
    with pytest.raises(ValueError):
        pursuit_model(planted(K=6), 2, warm_start=[(1, 1)])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), l=st.integers(1, 5))
def test_pursuit_never_beats_exhaustive(seed, l):
    systems = planted(K=7, J=3, m=15, support=(0, 3), noise=0.5, seed=seed)
    best = exhaustive_search(systems, l)
    gsp = pursuit_model(systems, l)
    assert gsp.global_error >= best.global_error * (1 - 1e-9)


def test_exhaustive_search_enumerates_all_supports():
    systems = planted(K=5, m=10, support=(1,), noise=1.0, seed=9)
    best = exhaustive_search(systems, 2)
    errs = {S: sum(np.linalg.lstsq(s.F[:, S], s.target, rcond=None)[1].sum() for s in systems)
            for S in itertools.combinations(range(5), 2)}
    assert best.support == min(errs, key=errs.get)
    assert best.global_error == pytest.approx(min(errs.values()), rel=1e-8)


def test_model_score_arithmetic():
    assert model_score(0.4, 2, 10, 1.0) == pytest.approx(0.6)


def test_sweep_selects_true_sparsity_and_rho_rule():
    systems = planted(K=8, J=3, support=(1, 4), seed=3)
    res = sweep_and_score(systems, names=[f"f{k}" for k in range(8)])
    assert res.l_star == 2
    assert res.support == (1, 4)
    errs = [e for _, e, _ in res.trace]
    assert len(errs) == 7
    assert res.rho == pytest.approx(np.mean([res.E0] + errs))
    assert all(a >= b - 1e-9 * res.E0 for a, b in zip(errs, errs[1:]))


def test_sweep_explicit_rho_and_other_rule():
    systems = planted(K=6, support=(0,), seed=4)
    a = sweep_and_score(systems, rho=0.0)
    assert a.rho == 0.0
    b = sweep_and_score(systems, rho_rule="mean_1_to_K")
    assert b.rho_rule == "mean_1_to_K"
    with pytest.raises(ValueError):
        sweep_and_score(systems, rho_rule="median")
    with pytest.raises(ValueError):
        sweep_and_score(systems, K=7)


def test_identification_result_json(tmp_path):
    systems = planted(K=6, support=(2,), seed=6)
    res = sweep_and_score(systems, names=list("abcdef"))
    path = tmp_path / "r.json"
    res.save_json(path)
    data = json.loads(path.read_text())
    assert data["support"] == ["c"]
    assert [row["l"] for row in data["trace"]] == [1, 2, 3, 4, 5]


def test_reconstruct_coefficients_recovers_planted_values():
    systems = planted(K=8, support=(1, 4), seed=7)
    res = sweep_and_score(systems, names=[f"f{k}" for k in range(8)])
    table = reconstruct_coefficients(res, systems)
    for s, row in zip(systems, table.values):
        np.testing.assert_allclose(s.F[:, [1, 4]] @ row, s.target, atol=1e-10)
    assert table.names == ["f1", "f4"]
    assert not any(table.rank_deficient)


@pytest.mark.parametrize("a, b, expected", [
    ({1, 2}, {2, 3}, 1 / 3),
    ({1, 2}, {1, 2}, 1.0),
    (set(), set(), 1.0),
    ({1}, set(), 0.0),
])
def test_jaccard(a, b, expected):
    assert jaccard(a, b) == pytest.approx(expected)


def _table(values, names, centers):
    n = len(centers)
    return CoefficientTable(tuple(range(len(names))), names, list(range(n)), centers,
                            np.array(values, dtype=float), [False] * n)


def test_coefficient_error_relative():
    t = _table([[1.8]], ["u_x"], [(0.0, 0.0)])
    assert coefficient_error(t, {"u_x": "2"}) == pytest.approx(0.1)


def test_coefficient_error_counts_spurious_and_missing_terms():
    t = _table([[2.0, 1.0]], ["u_x", "u_xx"], [(0.0, 0.0)])
    e = coefficient_error(t, {"u_x": "2", "u": "1"})
    assert e == pytest.approx(np.sqrt(2.0) / np.sqrt(5.0))
    assert e.relative


def test_coefficient_error_uses_centers():
    t = _table([[1.0], [3.0]], ["u_x"], [(0.0, 0.0), (1.0, 0.0)])
    assert coefficient_error(t, {"u_x": "1 + 2*x"}) == pytest.approx(0.0, abs=1e-12)


def test_coefficient_error_zero_truth_is_absolute():
    t = _table([[0.5]], ["u"], [(0.0, 0.0)])
    e = coefficient_error(t, {})
    assert e == pytest.approx(0.5) and not e.relative

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdeid.features import AnalyticSource, assemble_patch_system, build_dictionary
from pdeid.patches import (ALPHA_90, Patch, condition_diagnostic, estimate_noise_variance,
                           filter_by_sobolev, identifiability_margin, noise_patches,
                           observation_times, sample_sensors, sample_sensors_on_circle,
                           sobolev_seminorm, variation_test, write_patch_report)
from pdeid.trajectory import SpaceTimeGrid, TrajectoryField


def _grid(n=100, nt=200, periodic=True):
    return SpaceTimeGrid((n,), nt, ((-1.0, 1.0),), (0.0, 1.0), (periodic,))


def test_patch_size_and_periodic_wrap():
    g = _grid(20, 50)
    p = Patch.build(g, (1, 10), 3, 2)
    assert p.size == 7 * 5
    pts = p.points(g)
    assert pts.shape == (35, 2)
    assert set(pts[:, 0]) == {18, 19, 0, 1, 2, 3, 4}


@pytest.mark.parametrize("center, radius, r_t", [
    ((1, 10), 3, 2),   # crosses the left edge of a bounded axis
    ((10, 1), 3, 2),   # crosses t = 0
    ((10, 48), 3, 2),  # crosses the last time index
])
def test_patch_build_rejects_out_of_range(center, radius, r_t):
    g = _grid(20, 50, periodic=False)
    with pytest.raises(ValueError):
        Patch.build(g, center, radius, r_t)


def test_patch_rejects_width_beyond_periodic_axis():
    with pytest.raises(ValueError):
        Patch.build(_grid(6, 50), (0, 10), 3, 1)


def test_patch_intersection():
    g = _grid(20, 50)
    a = Patch.build(g, (0, 10), 2, 2)
    assert a.intersects(Patch.build(g, (19, 12), 2, 2), g)
    assert not a.intersects(Patch.build(g, (10, 10), 2, 2), g)
    assert not a.intersects(Patch.build(g, (0, 20), 2, 2), g)


@pytest.mark.parametrize("include, expected", [(True, [6, 100, 193]), (False, [53, 100, 146])])
def test_observation_times_endpoint_conventions(include, expected):
    assert observation_times(_grid(), 3, 5, margin=1, include_endpoints=include) == expected


def test_observation_times_too_short():
    with pytest.raises(ValueError):
        observation_times(_grid(nt=10), 2, 5)


def test_sample_sensors_deterministic_and_sensor_major():
    g = _grid()
    times = observation_times(g, 4, 5)
    a = sample_sensors(g, 5, 3, 5, times, seed=11)
    b = sample_sensors(g, 5, 3, 5, times, seed=11)
    assert [p.center for p in a] == [p.center for p in b]
    assert len(a) == 20
    assert [p.center[-1] for p in a[:4]] == times
    assert len({p.center[0] for p in a}) == 5
    assert [p.id for p in a] == list(range(20))


def test_sample_sensors_respects_bounded_margin():
    g = _grid(30, 100, periodic=False)
    for p in sample_sensors(g, 10, 3, 5, [50], seed=0, margin=(2, 1)):
        assert 5 <= p.center[0] <= 24


def test_sample_sensors_too_many():
    with pytest.raises(ValueError):
        sample_sensors(_grid(10, 50), 11, 1, 1, [10], seed=0)


def test_sensors_on_circle_lie_on_circle():
    g = SpaceTimeGrid((64, 64), 40, ((-1, 1), (-1, 1)), (0, 1), (True, True))
    ps = sample_sensors_on_circle(g, 6, 10.0, 2, 2, [20], seed=3)
    for p in ps:
        r = np.hypot(p.center[0] - 32, p.center[1] - 32)
        assert abs(r - 10) <= 1.0


def _sin_system(p_max):
    g = SpaceTimeGrid((64,), 50, ((0.0, 2 * np.pi),), (0.0, 1.0), (True,))

    def space(f, a, xs, t):
        return np.sin(xs[0] + a[0] * np.pi / 2)

    src = AnalyticSource(g, space, lambda f, xs, t: np.zeros_like(xs[0]))
    d = build_dictionary(["u"], p_max, 1)
    return assemble_patch_system(src, Patch.build(g, (10, 20), 4, 3), d)


@pytest.mark.parametrize("p_max, beta", [(2, 1.0), (4, np.sqrt(2.0))])
def test_sobolev_seminorm_of_sine(p_max, beta):
    # sin' ^2 + sin''^2 = 1 pointwise, so the RMS is exact
    assert sobolev_seminorm(_sin_system(p_max)) == pytest.approx(beta, rel=1e-12)


def test_sobolev_seminorm_order_cap():
    assert sobolev_seminorm(_sin_system(4), p_max=2) == pytest.approx(1.0, rel=1e-12)


def test_filter_by_sobolev_drops_extremes():
    items = [(i, float(i)) for i in range(200)]
    kept = filter_by_sobolev(items, 1, 99)
    assert kept == list(range(2, 198))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=60))
def test_filter_by_sobolev_keeps_median_band(betas):
    kept = filter_by_sobolev(list(enumerate(betas)), 1, 99)
    n = len(betas)
    assert len(kept) >= n - 2 * int(np.floor(0.01 * n))
    assert kept == sorted(kept)


def test_filter_by_sobolev_empty():
    with pytest.raises(ValueError):
        filter_by_sobolev([])


@pytest.mark.parametrize("values, sigma, keep", [
    ([0.0, 10.0], 0.1, True),
    ([0.0, 0.2], 0.1, False),
    ([1.0, 1.0, 1.0], 0.0, False),
    ([0.0, 0.01], 0.0, True),
])
def test_variation_test(values, sigma, keep):
    assert variation_test(values, sigma) is keep


def test_variation_test_threshold_edge():
    thr = np.sqrt(2) * ALPHA_90 * 0.1
    assert variation_test([0.0, thr * 1.001], 0.1)
    assert not variation_test([0.0, thr * 0.999], 0.1)


def test_variation_test_multifield_needs_all_fields():
    v = np.array([[0.0, 0.0], [5.0, 0.01]])
    assert not variation_test(v, [0.1, 0.1])
    assert variation_test(v, [0.1, 0.0])


def _constant_noisy(sigma, seed, n=140, nt=70):
    g = SpaceTimeGrid((n,), nt, ((0.0, 1.0),), (0.0, 1.0), (True,))
    u = 3.0 + sigma * np.random.default_rng(seed).standard_normal(g.shape)
    return TrajectoryField(g, {"u": u})


def test_noise_patches_disjoint_and_counted():
    g = _constant_noisy(0.1, 0).grid
    ps = noise_patches(g, 200, 3, 3)
    assert len(ps) == 200
    assert {p.size for p in ps} == {49}
    assert not any(ps[i].intersects(ps[i + 1], g) for i in range(len(ps) - 1))


def test_noise_estimator_unbiased_on_constant_field():
    g = _constant_noisy(0.1, 0).grid
    ps = noise_patches(g, 200, 3, 3)
    est = [estimate_noise_variance(_constant_noisy(0.1, s), ps, lipschitz=0.0).sigma2_hat
           for s in range(200)]
    assert np.mean(est) == pytest.approx(0.01, rel=0.03)
    assert np.var(est) <= 1.3 * 2 * 0.01**2 / 199


def test_noise_estimator_bias_bound_on_smooth_field():
    g = SpaceTimeGrid((140,), 70, ((0.0, 1.0),), (0.0, 1.0), (True,))
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    traj = TrajectoryField(g, {"u": np.sin(2 * np.pi * x) * np.cos(t)})
    est = estimate_noise_variance(traj, noise_patches(g, 200, 3, 3))
    assert est.sigma2_hat <= est.bias_bound
    assert est.N == 200 and est.B == 49 and est.dimension == 2


def test_noise_estimator_rejects_overlap_and_mismatch():
    traj = _constant_noisy(0.1, 0)
    g = traj.grid
    with pytest.raises(ValueError, match="intersect"):
        estimate_noise_variance(traj, [Patch.build(g, (10, 10), 3, 3),
                                       Patch.build(g, (12, 10), 3, 3, id=1)])
    with pytest.raises(ValueError, match="cardinalities"):
        estimate_noise_variance(traj, [Patch.build(g, (10, 10), 3, 3),
                                       Patch.build(g, (50, 10), 2, 3, id=1)])


def test_condition_diagnostic_orthonormal_columns():
    F = np.eye(6)[:, :3]
    d = condition_diagnostic(F)
    assert d.ratio == pytest.approx(1.0)
    assert d.condition_lower == pytest.approx(1 / np.sqrt(3))
    need, ok = identifiability_margin(d, lipschitz=1.0, radius=0.1, threshold=1.0)
    assert need == pytest.approx(0.2) and ok


def test_condition_diagnostic_collinear():
    F = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    assert condition_diagnostic(F).ratio == pytest.approx(0.0, abs=1e-12)


def test_write_patch_report(tmp_path):
    path = tmp_path / "p.csv"
    write_patch_report([{"patch_id": 0, "beta": 1.5, "extra": "x"}], path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["patch_id"] == "0" and rows[0]["beta"] == "1.5"
    assert "extra" not in rows[0]

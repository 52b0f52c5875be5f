import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdeid.features import AnalyticSource, build_dictionary
from pdeid.spectral import (count_dominant, feature_conditioning, identify_constant_coeff,
                            required_mode_count, svd_dimension_report)
from pdeid.trajectory import SpaceTimeGrid, TrajectoryField

N = 64
X = 2 * np.pi * np.arange(N) / N
AMPS = {1: 1.0, 2: 0.7, 3: 0.5, 4: 0.3, 5: 0.2}


def evolve(t, diffusion=0.0, speed=0.0):
    """Exact Fourier evolution of ``u_t = diffusion u_xx + speed u_x`` for five modes."""
    return sum(a * np.exp(-diffusion * k**2 * t) * np.cos(k * (X + speed * t))
               for k, a in AMPS.items())


@pytest.mark.parametrize("diffusion, speed, expected", [
    (4.0, 0.0, {(0,): 0.0, (1,): 0.0, (2,): 4.0}),
    (0.0, 2.0, {(0,): 0.0, (1,): 2.0, (2,): 0.0}),
    (0.0, 0.0, {(0,): 0.0, (1,): 0.0, (2,): 0.0}),
    (0.5, -1.0, {(0,): 0.0, (1,): -1.0, (2,): 0.5}),
])
def test_two_snapshot_recovery(diffusion, speed, expected):
    dt = 0.01
    res = identify_constant_coeff(evolve(0.0, diffusion, speed), evolve(dt, diffusion, speed), dt,
                                  order=2)
    assert len(res.modes) == 5
    for a, v in expected.items():
        assert res.coefficients[a] == pytest.approx(v, abs=1e-8)
    assert not res.rank_deficient


def test_p_convention_scaling():
    res = identify_constant_coeff(evolve(0.0, 4.0), evolve(0.01, 4.0), 0.01, order=2)
    assert res.p[(2,)] == pytest.approx(-np.sqrt(2 * np.pi) * 4.0, rel=1e-9)
    assert res.by_name()["u_xx"] == pytest.approx(4.0, rel=1e-9)


def test_explicit_modes_and_too_few():
    u1, u2 = evolve(0.0, 1.0), evolve(0.01, 1.0)
    res = identify_constant_coeff(u1, u2, 0.01, order=2, modes=[1, 2, 3])
    assert res.coefficients[(2,)] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError, match="needs at least"):
        identify_constant_coeff(u1, u2, 0.01, order=2, modes=[1])


def test_phase_guard():
    with pytest.raises(ValueError, match="phase"):
        # mode 1 rotates by exactly pi between the snapshots
        c = np.pi / 0.01
        identify_constant_coeff(evolve(0.0, speed=c), evolve(0.01, speed=c), 0.01, order=1,
                                modes=[1])


@pytest.mark.parametrize("n, d, need", [(1, 1, 1), (2, 1, 2), (3, 1, 2), (4, 1, 3), (2, 2, 4)])
def test_required_mode_count(n, d, need):
    assert required_mode_count(n, d) == need


def test_count_dominant():
    s = np.array([1.0, 0.5, 1e-2, 1e-4])
    assert count_dominant(s, 1e-3) == 3
    assert count_dominant(s, 0) == 4
    assert count_dominant(s * 10, 1e-3, relative=False) == 3
    assert count_dominant(s * 10, 9e-4, relative=False) == 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-12, 1e3), min_size=1, max_size=20), st.floats(0, 1))
def test_count_dominant_monotone_in_threshold(vals, th):
    s = np.sort(np.array(vals))[::-1]
    assert count_dominant(s, th) >= count_dominant(s, min(1.0, th * 2 + 1e-6))
    assert count_dominant(s, 0) == len(s)


def _traj(kind, nt=200):
    g = SpaceTimeGrid((N,), nt, ((0.0, 2 * np.pi),), (0.0, 2.0), (True,))
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    if kind == "transport":
        u = np.sin(x + t)
    else:
        u = np.exp(-t) * np.sin(x)
    return TrajectoryField(g, {"u": u})


@pytest.mark.parametrize("kind, count", [("transport", 2), ("heat", 1)])
def test_single_mode_dimension(kind, count):
    rep = svd_dimension_report(_traj(kind), thresholds=(1e-3,))
    assert rep.counts[1e-3] == count


def test_half_open_window_and_matrix_input(tmp_path):
    traj = _traj("heat", nt=200)
    rep = svd_dimension_report(traj, time_window=(0.0, 1.0))
    assert rep.shape == (N, 100)
    mat = svd_dimension_report(np.eye(5), time_window=(1, 4), thresholds=(0, 0.5))
    assert mat.shape == (5, 3)
    assert mat.counts == {0.0: 3, 0.5: 3}
    assert mat.percentages()[0.0] == pytest.approx(100.0)
    mat.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["index", "singular_value", "cumulative_energy"]
    assert float(rows[-1][2]) == pytest.approx(1.0)


def test_empty_window_raises():
    with pytest.raises(ValueError):
        svd_dimension_report(_traj("heat"), time_window=(5.0, 6.0))


def test_feature_conditioning_detects_dependence():
    g = SpaceTimeGrid((N,), 10, ((0.0, 2 * np.pi),), (0.0, 1.0), (True,))

    def space(f, a, xs, t):
        return np.sin(xs[0] + a[0] * np.pi / 2)

    src = AnalyticSource(g, space, lambda f, xs, t: 0 * xs[0])
    d = build_dictionary(["u"], 3, 1)
    pts = np.array([[i, 0] for i in range(N)])
    # sin'' = -sin, so the derivative family of one mode spans two dimensions
    assert feature_conditioning(src, d, pts).numerical_rank() == 2
    with pytest.raises(ValueError):
        feature_conditioning(src, build_dictionary(["u"], 1, 2), pts)

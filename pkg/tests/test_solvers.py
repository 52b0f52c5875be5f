import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdeid.exact import exact_source
from pdeid.initial import InitialCondition, fourier_series, make_initial, random_fourier_coefficients
from pdeid.solvers import (EvolutionProblem, NoClosedFormError, add_noise, evaluate_exact, solve,
                           true_model)
from pdeid.trajectory import (SpaceTimeGrid, TrajectoryField, downsample, export_csv,
                              load_trajectory, save_trajectory)


def grid(n=128, nt=200, lo=-1.0, hi=1.0, t1=0.5):
    return SpaceTimeGrid((n,), nt, ((lo, hi),), (0.0, t1), (True,))


def exact_matrix(problem):
    g = problem.grid
    return np.stack([evaluate_exact(problem, g.axis(0), t) for t in g.times], axis=1)


@pytest.mark.parametrize("kind, coef", [
    ("transport1d", {"speed": "2"}),
    ("transport1d", {"speed": "-0.7"}),
    ("heat1d", {"diffusivity": "0.05"}),
])
def test_linear_solver_matches_closed_form(kind, coef):
    p = EvolutionProblem(kind, grid(), InitialCondition("random_fourier", {"modes": 4, "seed": 3}),
                         coef)
    np.testing.assert_allclose(solve(p)["u"], exact_matrix(p), atol=1e-10)


def test_variable_speed_transport_conserves_along_characteristics():
    # u_t = c(t) u_x with c(t) = 1 + t has solution u0(x + t + t^2/2)
    g = grid(t1=0.4)
    p = EvolutionProblem("transport1d", g, InitialCondition("custom_closed_form",
                                                            {"expr": "sin(pi*x)"}),
                         {"speed": "1 + t"})
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    np.testing.assert_allclose(solve(p)["u"], np.sin(np.pi * (x + t + t**2 / 2)), atol=1e-9)


def test_kdv_soliton():
    # u_t = -6 u u_x - u_xxx carries sech^2 solitons at speed c
    c = 1.0
    g = SpaceTimeGrid((256,), 101, ((-20.0, 20.0),), (0.0, 2.0), (True,))
    expr = f"{c / 2}/cosh({np.sqrt(c) / 2}*x)**2"
    p = EvolutionProblem("kdv1d", g, InitialCondition("custom_closed_form", {"expr": expr}),
                         {"advection": "-6", "dispersion": "-1"})
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    want = c / 2 / np.cosh(np.sqrt(c) / 2 * (x - c * t)) ** 2
    np.testing.assert_allclose(solve(p)["u"], want, atol=1e-6)


def test_schrodinger_plane_wave():
    # psi = exp(i (k x + (k^2/2 + V) t)) solves psi_t = -(i/2) psi_xx + i V psi
    k, V = np.pi, -3.0
    g = grid(64, 101, t1=0.5)
    p = EvolutionProblem(
        "schrodinger1d_system", g,
        {"u": InitialCondition("custom_closed_form", {"expr": "cos(pi*x)"}),
         "v": InitialCondition("custom_closed_form", {"expr": "sin(pi*x)"})},
        {"potential": str(V)})
    tr = solve(p)
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    ph = k * x + (k**2 / 2 + V) * t
    np.testing.assert_allclose(tr["u"], np.cos(ph), atol=1e-9)
    np.testing.assert_allclose(tr["v"], np.sin(ph), atol=1e-9)


def test_burgers_matches_characteristics_before_shock():
    # the compact bump has a slowly decaying spectrum, so the grid must be fine
    g = SpaceTimeGrid((1024,), 121, ((-8.0, 8.0),), (0.0, 0.6), (True,))
    p = EvolutionProblem("burgers1d", g, InitialCondition("bump", {}), {"advection": "1.1"})
    tr = solve(p)
    src = exact_source(p)
    k = np.arange(0, g.time_points, 20)
    pts = np.array([(i, j) for j in k for i in range(g.space_points[0])])
    exact = src.space("u", (0,), pts).reshape(len(k), -1).T
    np.testing.assert_allclose(tr["u"][:, k], exact, atol=5e-6)


def test_circular_flow_rotates_initial_data():
    g = SpaceTimeGrid((32, 32), 8, ((-1, 1), (-1, 1)), (0.0, np.pi), (True, True))
    p = EvolutionProblem("circular_flow_2d", g,
                         InitialCondition("custom_closed_form", {"expr": "x"}), {})
    u = solve(p)["u"]
    xx, yy = g.mesh()
    for k, t in enumerate(g.times):
        np.testing.assert_allclose(u[..., k], xx * np.cos(t) - yy * np.sin(t), atol=1e-12)


def test_no_closed_form():
    p = EvolutionProblem("heat1d", grid(), InitialCondition("bump", {}), {"diffusivity": "0.1"})
    with pytest.raises(NoClosedFormError):
        evaluate_exact(p, grid().axis(0), 0.1)


@pytest.mark.parametrize("kind, coef, terms", [
    ("transport1d", {"speed": "2"}, {"u": {"u_x"}}),
    ("kdv1d", {"advection": "1", "dispersion": "2"}, {"u": {"u*u_x", "u_xxx"}}),
    ("schrodinger1d_system", {"potential": "1"}, {"u": {"v_xx", "v"}, "v": {"u_xx", "u"}}),
])
def test_true_model_terms(kind, coef, terms):
    ic = InitialCondition("bump", {})
    p = EvolutionProblem(kind, grid(), {"u": ic, "v": ic}, coef)
    assert {f: set(m) for f, m in true_model(p).items()} == terms


def test_problem_validation():
    ic = InitialCondition("bump", {})
    with pytest.raises(ValueError):
        EvolutionProblem("transport1d", grid(), ic, {})
    with pytest.raises(ValueError):
        EvolutionProblem("wave", grid(), ic, {"speed": "1"})
    with pytest.raises(ValueError):
        EvolutionProblem("circular_flow_2d", grid(), ic, {})


def test_problem_dict_roundtrip():
    p = EvolutionProblem("heat1d", grid(), InitialCondition("random_fourier", {"modes": 2, "seed": 1}),
                         {"diffusivity": "0.5 + 0.1*x"}, name="h")
    q = EvolutionProblem.from_dict(p.to_dict())
    assert q.to_dict() == p.to_dict()


def test_add_noise_level_and_determinism():
    p = EvolutionProblem("transport1d", grid(), InitialCondition("random_fourier",
                                                                 {"modes": 3, "seed": 0}),
                         {"speed": "1"})
    tr = solve(p)
    a, b = add_noise(tr, 5.0, 7), add_noise(tr, 5.0, 7)
    np.testing.assert_array_equal(a["u"], b["u"])
    resid = a["u"] - tr["u"]
    assert np.std(resid) == pytest.approx(0.05 * np.std(tr["u"]), rel=0.02)
    np.testing.assert_array_equal(add_noise(tr, 0.0, 1)["u"], tr["u"])
    with pytest.raises(ValueError):
        add_noise(tr, -1.0, 0)


@settings(max_examples=20, deadline=None)
@given(modes=st.integers(1, 10), seed=st.integers(0, 10**6))
def test_random_fourier_is_seeded_and_band_limited(modes, seed):
    g = grid(64, 2)
    ic = InitialCondition("random_fourier", {"modes": modes, "seed": seed})
    u = make_initial(ic, g)
    np.testing.assert_array_equal(u, make_initial(ic, g))
    spec = np.abs(np.fft.rfft(u))
    assert np.all(spec[modes + 1:] < 1e-10 * max(spec.max(), 1.0))
    assert random_fourier_coefficients(modes, seed).shape[0] == 2 * modes + 1
    np.testing.assert_allclose(fourier_series(ic, g)(g.axis(0)), u, atol=1e-12)


def test_trajectory_io_roundtrip(tmp_path):
    g = grid(16, 10)
    x, t = np.meshgrid(g.axis(0), g.times, indexing="ij")
    tr = TrajectoryField(g, {"u": np.sin(np.pi * x) * t}, {"note": "x"})
    save_trajectory(tr, tmp_path / "a.bin")
    back = load_trajectory(tmp_path / "a.bin")
    np.testing.assert_array_equal(back["u"], tr["u"])
    assert back.grid == g
    export_csv(tr, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + 16 * 10


def test_downsample_and_window():
    g = grid(16, 10)
    tr = TrajectoryField(g, {"u": np.arange(160.0).reshape(16, 10)})
    d = downsample(tr, 4, 2)
    assert d.grid.shape == (4, 5)
    assert d.grid.dx[0] == pytest.approx(4 * g.dx[0])
    assert d.grid.dt == pytest.approx(2 * g.dt)
    np.testing.assert_array_equal(d["u"], tr["u"][::4, ::2])
    w = tr.window(0.1, 0.3)
    assert w.grid.time_points == 5
    np.testing.assert_array_equal(w["u"], tr["u"][:, 2:7])


def test_trajectory_rejects_nan_and_shape():
    g = grid(4, 3)
    with pytest.raises(ValueError):
        TrajectoryField(g, {"u": np.full((4, 3), np.nan)})
    with pytest.raises(ValueError):
        TrajectoryField(g, {"u": np.zeros((3, 4))})

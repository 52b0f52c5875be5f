import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdeid.features import (AnalyticSource, FeatureDescriptor, FiniteDifferenceSource,
                            assemble_patch_system, build_dictionary, central_halfwidth,
                            evaluate_features, fd_derivative, fornberg_weights)
from pdeid.patches import Patch
from pdeid.trajectory import SpaceTimeGrid, TrajectoryField

TRIG = ["sin(u)", "cos(u)", "sin(u_x)", "cos(u_x)"]


@pytest.mark.parametrize("fields, order, products, trig, ndim, K", [
    (["u"], 4, 3, TRIG, 1, 59),
    (["u", "v"], 3, 2, [], 1, 44),
    (["u"], 2, 2, [], 2, 27),
    (["u"], 1, 1, [], 1, 2),
])
def test_dictionary_cardinality(fields, order, products, trig, ndim, K):
    assert build_dictionary(fields, order, products, trig, ndim).K == K


def test_dictionary_order_and_lookup():
    d = build_dictionary(["u"], 4, 3, TRIG)
    assert d.names[:5] == ["u", "u_x", "u_xx", "u_xxx", "u_xxxx"]
    assert d.names[-4:] == TRIG
    assert d.index("u*u_x") == 6
    assert d.index(FeatureDescriptor.parse("u_xx")) == 2


def test_dictionary_json_roundtrip():
    d = build_dictionary(["u", "v"], 2, 2, ["sin(u)"])
    d2 = type(d).from_json(d.to_json())
    assert d2.names == d.names


@pytest.mark.parametrize("bad", [dict(field_names=[]), dict(max_derivative_order=-1),
                                 dict(max_product_terms=0)])
def test_dictionary_rejects_bad_arguments(bad):
    kw = dict(field_names=["u"], max_derivative_order=2, max_product_terms=2) | bad
    with pytest.raises(ValueError):
        build_dictionary(**kw)


@pytest.mark.parametrize("offsets, order, expected", [
    ((-1.0, 0.0, 1.0), 1, [-0.5, 0.0, 0.5]),
    ((-1.0, 0.0, 1.0), 2, [1.0, -2.0, 1.0]),
    ((-2.0, -1.0, 0.0, 1.0, 2.0), 1, [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12]),
    ((-2.0, -1.0, 0.0, 1.0, 2.0), 2, [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12]),
    ((0.0, 1.0, 2.0), 1, [-1.5, 2.0, -0.5]),
])
def test_fornberg_weights_textbook(offsets, order, expected):
    np.testing.assert_allclose(fornberg_weights(offsets, order), expected, atol=1e-13)


def test_central_halfwidth():
    assert central_halfwidth(1, 4) == 2
    assert central_halfwidth(2, 4) == 2
    assert central_halfwidth(4, 4) == 3
    assert central_halfwidth(1, 2) == 1


def _xt(g):
    return np.meshgrid(g.axis(0), g.times, indexing="ij")


def _grid(n, nt=8):
    return SpaceTimeGrid((n,), nt, ((0.0, 2 * np.pi),), (0.0, 1.0), (True,))


def _sin_field(n, nt=8):
    g = _grid(n, nt)
    x, t = _xt(g)
    return g, np.sin(x + t)


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_fd_fourth_order_convergence(order):
    errs = []
    for n in (32, 64):
        g, f = _sin_field(n)
        x, t = _xt(g)
        exact = np.sin(x + t + order * np.pi / 2)
        errs.append(np.abs(fd_derivative(f, g, 0, order) - exact).max())
    rate = np.log2(errs[0] / errs[1])
    assert 3.6 < rate < 4.6


def test_fd_time_second_order():
    errs = []
    for nt in (100, 200):
        g = SpaceTimeGrid((16,), nt, ((0.0, 2 * np.pi),), (0.0, 1.0), (True,))
        x, t = _xt(g)
        d = fd_derivative(np.sin(x + t), g, 1, 1)
        errs.append(np.abs(d - np.cos(x + t))[:, 1:-1].max())
    assert 1.8 < np.log2(errs[0] / errs[1]) < 2.2


def test_fd_nonperiodic_one_sided_ends():
    g = SpaceTimeGrid((41,), 4, ((0.0, 1.0),), (0.0, 1.0), (False,))
    x, t = _xt(g)
    f = x**3
    np.testing.assert_allclose(fd_derivative(f, g, 0, 1), 3 * x**2, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), order=st.integers(1, 4),
       seed=st.integers(0, 2**31 - 1))
def test_fd_is_linear(a, b, order, seed):
    g = _grid(24, 6)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal((2,) + g.shape)
    lhs = fd_derivative(a * f + b * h, g, 0, order)
    rhs = a * fd_derivative(f, g, 0, order) + b * fd_derivative(h, g, 0, order)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8 * (1 + abs(a) + abs(b)) * 24**order)


@settings(max_examples=30, deadline=None)
@given(shift=st.integers(-30, 30), order=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_fd_commutes_with_periodic_shift(shift, order, seed):
    g = _grid(24, 6)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    a = fd_derivative(np.roll(f, shift, axis=0), g, 0, order)
    b = np.roll(fd_derivative(f, g, 0, order), shift, axis=0)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_fd_rejects_order_zero():
    g, f = _sin_field(16)
    with pytest.raises(ValueError):
        fd_derivative(f, g, 0, 0)


def _transport_sources(n=64, nt=200, c=1.5):
    g = SpaceTimeGrid((n,), nt, ((0.0, 2 * np.pi),), (0.0, 1.0), (True,))
    x, t = _xt(g)
    traj = TrajectoryField(g, {"u": np.sin(x + c * t)})

    def space(f, a, xs, tt):
        return np.sin(xs[0] + c * tt + a[0] * np.pi / 2)

    def time(f, xs, tt):
        return c * np.cos(xs[0] + c * tt)

    return g, FiniteDifferenceSource(traj), AnalyticSource(g, space, time)


def test_fd_and_analytic_features_agree():
    g, fd, an = _transport_sources()
    d = build_dictionary(["u"], 2, 2, ["sin(u)"])
    patch = Patch.build(g, (10, 100), 3, 5)
    pts = patch.points(g)
    np.testing.assert_allclose(evaluate_features(fd, d, pts), evaluate_features(an, d, pts),
                               atol=2e-4)


def test_assemble_patch_system_shapes_and_target():
    g, fd, an = _transport_sources()
    d = build_dictionary(["u"], 3, 2)
    patch = Patch.build(g, (5, 50), 3, 5, id=7)
    s = assemble_patch_system(an, patch, d)
    assert s.F.shape == (patch.size, d.K)
    assert s.target.shape == (patch.size,)
    assert s.id == 7
    # transport u_t = c u_x holds exactly on the analytic columns
    np.testing.assert_allclose(s.target, 1.5 * s.F[:, d.index("u_x")], atol=1e-12)
    assert s.sobolev.shape == (patch.size, 3)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vortexlayers.geometry import (ChartError, FrameDegeneracyError, TubularChart, chart_point,
                                   check_no_self_intersection, circle, curve_from_json,
                                   curve_from_samples, ellipse, frame, max_tube_radius,
                                   reparametrize_arclength, tubular_coordinates)

R = 1 / (2 * np.pi)


def perturbed_circle(delta):
    raw = curve_from_json({"x": {"cos": [0, R, 0, delta]}, "y": {"sin": [0, R, 0, -delta]}})
    return reparametrize_arclength(raw, n_fit=128)


def ellipse_perimeter(a, b, m=20000):
    t = np.arange(m) / m * 2 * np.pi
    return np.mean(np.hypot(a * np.sin(t), b * np.cos(t))) * 2 * np.pi


def test_circle_is_unit_speed_and_counterclockwise(unit_circle):
    d1 = unit_circle.on_grid(64)[1]
    np.testing.assert_allclose(np.hypot(*d1), 1.0, atol=1e-12)
    assert unit_circle.signed_area() > 0


def test_circle_reparametrization_is_fixed_point(unit_circle):
    again = reparametrize_arclength(unit_circle, n_fit=64)
    s = np.linspace(0, 1, 17)
    np.testing.assert_allclose(again.evaluate(s), unit_circle.evaluate(s), atol=1e-10)


def test_ellipse_unit_speed_and_scale():
    a, b = 0.2, 0.1
    e = ellipse(a, b)
    g = e.on_grid(256)
    np.testing.assert_allclose(np.hypot(*g[1]), 1.0, atol=1e-8)
    perim = ellipse_perimeter(a, b)
    assert np.isclose(np.max(g[0, 0]), a / perim, rtol=1e-8)
    assert np.isclose(np.max(g[0, 1]), b / perim, rtol=1e-6)


def test_reparametrize_nonuniform_circle():
    n = 256
    t = np.arange(n) / n
    u = t + 0.1 * np.sin(2 * np.pi * t)
    raw = curve_from_samples(np.stack([R * np.cos(2 * np.pi * u), R * np.sin(2 * np.pi * u)]))
    c = reparametrize_arclength(raw, n_fit=n)
    np.testing.assert_allclose(np.hypot(*c.on_grid(n)[1]), 1.0, atol=1e-8)
    np.testing.assert_allclose(np.hypot(*c.on_grid(n)[0]), R, atol=1e-10)


def test_clockwise_input_is_reoriented():
    raw = curve_from_json({"x": {"cos": [0, R]}, "y": {"sin": [0, -R]}})
    assert reparametrize_arclength(raw, n_fit=64).signed_area() > 0


def test_inward_normal_points_inside(unit_circle):
    s = np.linspace(0, 1, 9)
    f = frame(unit_circle, s, 0.0)
    inward = -unit_circle.evaluate(s) / R
    np.testing.assert_allclose(f.e_n, inward, atol=1e-12)


def test_circle_frame_at_zero_offset(unit_circle):
    s = np.linspace(0, 1, 13)
    f = frame(unit_circle, s, 0.0)
    np.testing.assert_allclose(f.e_s, unit_circle.evaluate(s, 1), atol=1e-12)
    np.testing.assert_allclose(f.kappa, unit_circle.evaluate(s, 2), atol=1e-12)


@pytest.mark.parametrize("n", [-0.05, 0.03, 0.06])
def test_circle_frame_closed_form(unit_circle, n):
    s = np.linspace(0, 1, 11)
    f = frame(unit_circle, s, n)
    c = 1 - 2 * np.pi * n
    np.testing.assert_allclose(f.e_s, c * unit_circle.evaluate(s, 1), atol=1e-12)
    radial = np.stack([np.cos(2 * np.pi * s), np.sin(2 * np.pi * s)])
    np.testing.assert_allclose(f.kappa, -2 * np.pi * radial / c, atol=1e-10)
    assert np.max(np.abs((f.kappa * f.e_s).sum(axis=0))) < 1e-10


def test_kappa_matches_finite_differences():
    e = ellipse(0.2, 0.12, n_modes=128)
    s = np.linspace(0, 1, 7, endpoint=False)
    n, h = 0.01, 1e-5

    def v(ss):
        es = frame(e, ss, n).e_s
        return es / (es ** 2).sum(axis=0)
    fd = (v(s + h) - v(s - h)) / (2 * h)
    np.testing.assert_allclose(frame(e, s, n).kappa, fd, atol=1e-6 * np.max(np.abs(fd)))


@settings(max_examples=30)
@given(st.floats(0, 1), st.floats(-0.01, 0.01))
def test_frame_orthogonality(s, n):
    e = ellipse(0.2, 0.12, n_modes=128)
    f = frame(e, np.array([s]), n)
    assert abs((f.e_s * f.e_n).sum()) < 1e-10
    assert abs(np.hypot(*f.e_n[:, 0]) - 1) < 1e-8


def test_frame_degeneracy_raises(unit_circle):
    with pytest.raises(FrameDegeneracyError):
        frame(unit_circle, np.array([0.0]), 0.12)


def test_chart_point_examples(unit_circle):
    np.testing.assert_allclose(chart_point(unit_circle, 0.3, 0.0), unit_circle.evaluate(0.3))
    np.testing.assert_allclose(chart_point(unit_circle, 0.0, 0.05), [R - 0.05, 0.0], atol=1e-14)


def test_tubular_coordinates_examples(unit_circle):
    chart = TubularChart.for_curve(unit_circle)
    s, n = tubular_coordinates(chart, unit_circle.evaluate(0.3))
    assert np.isclose(s, 0.3, atol=1e-12) and abs(n) < 1e-12
    th = 2.1
    s, n = tubular_coordinates(chart, 0.7 * R * np.array([np.cos(th), np.sin(th)]))
    assert np.isclose(s, th / (2 * np.pi), atol=1e-12)
    assert np.isclose(n, 0.3 * R, atol=1e-12)
    with pytest.raises(ChartError):
        tubular_coordinates(chart, np.array([3 * R, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.floats(-0.9, 0.9))
def test_chart_round_trip(s, frac):
    e = ellipse(0.2, 0.12, n_modes=128)
    chart = TubularChart.for_curve(e)
    n = frac * chart.max_radius
    s2, n2 = tubular_coordinates(chart, chart_point(chart, s, n))
    assert min(abs(s2 - s), 1 - abs(s2 - s)) < 1e-9
    assert abs(n2 - n) < 1e-9


def test_circle_self_intersection_margin(unit_circle):
    ok, margin = check_no_self_intersection(unit_circle, 0.0, 0.1)
    assert ok
    assert np.isclose(margin, (np.sin(0.1 * np.pi) / np.pi) ** 2, rtol=1e-10)


def test_figure_eight_fails():
    fig8 = curve_from_json({"x": {"cos": [0, 0.2]}, "y": {"sin": [0, 0, 0.1]}})
    ok, margin = check_no_self_intersection(fig8, 0.0, 0.1)
    assert not ok


def test_self_intersection_margin_decreases_with_rho():
    e = ellipse(0.2, 0.12, n_modes=128, rho0=0.1)
    margins = [check_no_self_intersection(e, r, 0.1)[1] for r in (0.0, 0.02, 0.04, 0.06)]
    assert all(a >= b for a, b in zip(margins, margins[1:]))
    assert margins[-1] > 0


def test_circle_tube_radius(unit_circle):
    assert np.isclose(max_tube_radius(unit_circle), 0.9 * R, rtol=1e-10)


def test_ellipse_tube_radius_curvature_bound():
    a, b = 0.2, 0.1
    e = ellipse(a, b)
    p = ellipse_perimeter(a, b)
    kmax = (a / p) / (b / p) ** 2
    r = max_tube_radius(e)
    assert np.isclose(r, 0.9 / kmax, rtol=1e-3)
    chart = TubularChart(e, r)
    for s in np.linspace(0, 1, 40, endpoint=False):
        for n in (-0.99 * r, 0.99 * r):
            s2, n2 = tubular_coordinates(chart, chart_point(e, s, n))
            assert abs(n2 - n) < 1e-9


def test_tube_radius_grows_as_perturbation_flattens():
    radii = [max_tube_radius(perturbed_circle(d)) for d in (0.01, 0.005, 0.002, 0.0)]
    assert all(a < b for a, b in zip(radii, radii[1:]))
    assert np.isclose(radii[-1], 0.9 * R, rtol=1e-8)

import functools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import perturbed_density
from vortexlayers.dynamics import (CFLError, EvolutionConfig, LayeredDynamics, ReferenceDynamics,
                                   ReferenceState, SupportError, admissibility_residual,
                                   assemble_velocity, build_initial_state, integrate,
                                   kernel_config, layer_nodes, project_components,
                                   reference_rhs, rhs, rk4_step, write_checkpoint,
                                   write_diagnostics)
from vortexlayers.geometry import ellipse, frame
from vortexlayers.spectral import SpectralField

R = 1 / (2 * np.pi)


def annulus(curve, n=64, eps=0.05, n_layers=8):
    nodes, wts = layer_nodes(n_layers)
    chi = np.where(np.abs(nodes) < 0.5, 1.0, 0.0)
    chi /= np.sum(wts * chi)
    return build_initial_state(curve, np.zeros(n), chi[:, None] * np.ones((1, n)), eps, nodes, wts)


def test_layer_nodes_midpoint():
    nodes, wts = layer_nodes(8)
    np.testing.assert_allclose(nodes, [-0.875, -0.625, -0.375, -0.125, 0.125, 0.375, 0.625, 0.875])
    assert np.isclose(wts.sum(), 2.0)


def test_initial_state_concentric(unit_circle):
    w = annulus(unit_circle)
    np.testing.assert_allclose(w.w1, 0.05 * w.l_nodes[:, None] * np.ones((1, 64)))
    assert np.all(w.w3 == 0)
    assert admissibility_residual(w) <= 1e-12


def test_initial_state_shared_wiggle(unit_circle):
    n, eps = 32, 0.04
    s = np.arange(n) / n
    eta = 0.05 * np.cos(2 * np.pi * s)
    nodes, wts = layer_nodes(8)
    w = build_initial_state(unit_circle, eta, lambda l, s: np.where(np.abs(l) < 0.5, 1.0, 0.0) + 0 * s,
                            eps, nodes, wts)
    np.testing.assert_allclose(w.w1 - w.w1[0], eps * (nodes - nodes[0])[:, None] * np.ones((1, n)), atol=1e-15)
    assert np.all(w.w3 == 0)
    assert np.all(w.w4[np.abs(nodes) >= 0.5] == 0)
    assert admissibility_residual(w) <= 1e-12


def test_initial_state_rejects_wide_support(unit_circle):
    nodes, wts = layer_nodes(8)
    with pytest.raises(SupportError):
        build_initial_state(unit_circle, np.zeros(16), np.ones((8, 16)), 0.05, nodes, wts)


def test_admissibility_linear_response(unit_circle):
    w = annulus(unit_circle, n=32, eps=0.04)
    gap = w.l_nodes[1] - w.l_nodes[0]
    w3 = w.w3.copy()
    w3[3] += 1e-3
    res = admissibility_residual(w.advance((w.w1, w3, w.w4), 0.0))
    assert np.isclose(res, 0.04 * 1e-3 * gap, rtol=1e-6)


@settings(max_examples=25)
@given(st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3))
def test_admissibility_invariant_under_common_shift(coef):
    from vortexlayers.geometry import circle
    w = annulus(circle(), n=32, eps=0.04)
    s = np.arange(32) / 32
    rng = np.random.default_rng(0)
    w = w.advance((w.w1 + 1e-4 * rng.standard_normal(w.w1.shape), w.w3, w.w4), 0.0)
    f = coef[0] + coef[1] * np.cos(2 * np.pi * s) + coef[2] * np.sin(4 * np.pi * s)
    shift = w.epsilon * (w.l_nodes - w.l_nodes[0])[:, None] * f[None, :]
    moved = w.advance((w.w1 + shift, w.w3 + f[None, :], w.w4), 0.0)
    assert np.isclose(admissibility_residual(moved), admissibility_residual(w), rtol=1e-9, atol=1e-15)


def test_uniform_annulus_velocity_is_ring_superposition(unit_circle):
    w = annulus(unit_circle)
    U = assemble_velocity(w, kernel_config(w))
    circ = w.l_weights * w.w4[:, 0]
    tang = unit_circle.on_grid(64)[1]
    for i, nu in enumerate(w.w1[:, 0]):
        enclosed = circ[w.w1[:, 0] > nu].sum() + 0.5 * circ[i]
        np.testing.assert_allclose(U[i], tang * enclosed / (2 * np.pi * (R - nu)), atol=1e-11)


def test_zero_density_gives_zero_velocity(unit_circle):
    w = annulus(unit_circle)
    w = w.advance((w.w1, w.w3, np.zeros_like(w.w4)), 0.0)
    assert np.all(assemble_velocity(w, kernel_config(w)) == 0)


def test_antisymmetric_rings_cancel_outside(unit_circle):
    w = annulus(unit_circle)
    w4 = np.zeros_like(w.w4)
    w4[2], w4[5] = 1.0, -1.0
    w = w.advance((w.w1, w.w3, w4), 0.0)
    U = assemble_velocity(w, kernel_config(w))
    # outermost and innermost layers lie outside / inside both rings
    assert np.max(np.abs(U[0])) < 1e-12
    assert np.max(np.abs(U[-1])) < 1e-12
    assert np.max(np.abs(U[3])) > 0.1


def test_components_on_circle(unit_circle):
    n = 16
    t = unit_circle.on_grid(n)[1]
    un, us, _ = project_components(0.7 * t, unit_circle, np.zeros(n))
    assert np.max(np.abs(un)) < 1e-14
    np.testing.assert_allclose(us, 0.7)
    nu = np.full(n, 0.03)
    e_s = (1 - 2 * np.pi * 0.03) * t
    _, us, _ = project_components(e_s, unit_circle, nu)
    np.testing.assert_allclose(us, 1.0)


@functools.lru_cache
def shared_ellipse():
    return ellipse(0.2, 0.12)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31), st.floats(-0.03, 0.03))
def test_components_recompose(seed, nu0):
    e = shared_ellipse()
    n = 16
    s = np.arange(n) / n
    U = np.random.default_rng(seed).standard_normal((2, n))
    nu = np.full(n, nu0)
    un, us, _ = project_components(U, e, nu)
    f = frame(e, s, nu)
    np.testing.assert_allclose(us * f.e_s + un * f.e_n, U, atol=1e-12)


def test_steady_annulus_rhs(unit_circle):
    w = annulus(unit_circle)
    for f in rhs(w, kernel_config(w)):
        assert np.max(np.abs(f)) < 1e-8


def test_rhs_matches_time_difference(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    dyn = LayeredDynamics(kernel_config(w), 0.0)
    f1 = dyn(w)[0]
    errs = []
    for h in (2e-3, 1e-3):
        fwd = rk4_step(w, dyn, h).w1
        bwd = rk4_step(w, dyn, -h).w1
        errs.append(np.max(np.abs((fwd - bwd) / (2 * h) - f1)))
    assert errs[1] < errs[0] / 3.5
    assert errs[1] < 1e-4


def test_reference_rhs_circle(unit_circle):
    n = 32
    ref = ReferenceState(unit_circle, SpectralField.from_values(np.zeros(n)),
                         SpectralField.from_values(np.ones(n)))
    for f in reference_rhs(ref):
        assert np.max(np.abs(f)) < 1e-13
    ref0 = ReferenceState(unit_circle, ref.nu0, SpectralField.from_values(np.zeros(n)))
    for f in reference_rhs(ref0):
        assert np.all(f == 0)


def test_reference_circulation_rate_vanishes(unit_circle):
    n = 64
    s = np.arange(n) / n
    ref = ReferenceState(unit_circle, SpectralField.from_values(0.01 * np.sin(2 * np.pi * s)),
                         SpectralField.from_values(perturbed_density(s)))
    _, dvarpi = reference_rhs(ref)
    assert abs(np.mean(dvarpi)) < 1e-14


def test_rk4_zero_step_identity(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    assert rk4_step(w, lambda st: None, 0.0) is w


def test_steady_annulus_integrate(unit_circle):
    w = annulus(unit_circle)
    traj = integrate(w, LayeredDynamics(kernel_config(w)), EvolutionConfig(t_end=0.1))
    assert not traj.halted
    for a, b in zip(traj.final.fields(), w.fields()):
        assert np.max(np.abs(a - b)) < 1e-7


def test_reference_order_four(unit_circle):
    n = 64
    s = np.arange(n) / n
    ref = ReferenceState(unit_circle, SpectralField.from_values(np.zeros(n)),
                         SpectralField.from_values(perturbed_density(s)))
    dyn = ReferenceDynamics(filter_threshold=0.0)
    finals = [integrate(ref, dyn, EvolutionConfig(t_end=0.04, dt=dt, filter_threshold=0.0)).final
              for dt in (0.004, 0.002, 0.001)]
    d = [max(np.max(np.abs(a - b)) for a, b in zip(x.fields(), y.fields()))
         for x, y in zip(finals, finals[1:])]
    assert abs(np.log2(d[0] / d[1]) - 4) < 0.3


def test_output_times_are_hit(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    traj = integrate(w, LayeredDynamics(kernel_config(w)),
                     EvolutionConfig(t_end=0.01, output_times=(0.0037,)))
    traj.at(0.0037)
    assert traj.final.time == 0.01


def test_cfl_violation_raises_before_stepping(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    with pytest.raises(CFLError):
        integrate(w, LayeredDynamics(kernel_config(w)), EvolutionConfig(t_end=0.1, dt=0.05))


def test_guard_halts_with_prefix(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    traj = integrate(w, LayeredDynamics(kernel_config(w)), EvolutionConfig(t_end=0.02, residual_cap=1e-9))
    assert traj.halted and "admissibility" in traj.reason
    assert len(traj.states) == 2


def test_projection_switch_restores_coupling(perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    cfg = EvolutionConfig(t_end=0.01, project=True)
    traj = integrate(w, LayeredDynamics(kernel_config(w)), cfg)
    assert max(d.values["admissibility"] for d in traj.diagnostics) < 1e-15


def test_checkpoint_files(tmp_path, perturbed_spec):
    w = perturbed_spec.layered_state(0.04)
    traj = integrate(w, LayeredDynamics(kernel_config(w)), EvolutionConfig(t_end=0.004))
    write_checkpoint(traj.final, tmp_path / "final", "abc")
    write_diagnostics(traj, tmp_path / "diag.csv", "abc")
    lines = (tmp_path / "final.csv").read_text().splitlines()
    assert lines[0] == "# config_sha256=abc"
    assert lines[1] == "layer,l,s,w1,w3,w4"
    assert len(lines) == 2 + 8 * w.n_points
    row = lines[2].split(",")
    assert float(row[3]) == traj.final.w1[0, 0]
    assert (tmp_path / "final.json").exists()
    assert (tmp_path / "diag.csv").read_text().splitlines()[1].startswith("time,dt,max_speed")

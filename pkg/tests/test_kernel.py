import numpy as np
import pytest

from elapsed_stability.errors import DomainError, StepTooLargeError
from elapsed_stability.firing import refractory_as_custom
from elapsed_stability.kernel import (VolterraProblem, align_step, build_G, kernel_h0, laplace_h0_general,
                                      laplace_h0_refractory, solve_volterra)


def _grid(T, dt):
    return np.linspace(0.0, T, int(round(T / dt)) + 1)


def test_volterra_no_memory():
    t = _grid(5, 0.1)
    u = solve_volterra(VolterraProblem(np.ones_like(t), np.zeros_like(t), 0.0, 0.0, 0.1, 5)).values
    assert np.allclose(u, 1.0)


def test_volterra_delay_recursion():
    t = _grid(4, 0.25)
    u = solve_volterra(VolterraProblem(np.ones_like(t), np.zeros_like(t), 0.5, 1.0, 0.25, 4)).values
    expected = [1 + sum(0.5 ** j for j in range(1, int(np.floor(x + 1e-9)) + 1)) for x in t]
    assert np.allclose(u, expected)


def _exp_case_error(dt, T=5.0):
    t = _grid(T, dt)
    e = np.exp(-t)
    u = solve_volterra(VolterraProblem(e, e, 0.0, 0.0, dt, T)).values
    return np.max(np.abs(u - 1.0))


def test_volterra_exponential_closed_form():
    assert _exp_case_error(1e-3) <= 1e-4


def test_volterra_second_order():
    coarse, fine = _exp_case_error(0.02), _exp_case_error(0.01)
    assert coarse / fine >= 3.5


def test_volterra_rejects_misaligned_delay():
    t = _grid(1, 0.1)
    with pytest.raises(DomainError):
        VolterraProblem(t, t, 0.5, 0.25, 0.1, 1.0)


def test_volterra_step_too_large():
    t = _grid(1, 0.5)
    with pytest.raises(StepTooLargeError):
        solve_volterra(VolterraProblem(t, np.full_like(t, 5.0), 0.0, 0.0, 0.5, 1.0))


def test_align_step_refines():
    assert align_step(0.05, 0.01)[1:] == (5, pytest.approx(0.05))
    dt, m, d = align_step(0.033, 0.01)
    assert m == 4 and dt == pytest.approx(0.00825) and d == 0.033


def test_measure_G(satquad, satquad_state, constant, constant_state):
    G = build_G(satquad, satquad_state)
    assert G.atom_at_zero == pytest.approx(0.8500, abs=1e-3)
    assert G.density_mass() == pytest.approx(-G.atom_at_zero, abs=1e-4)
    G0 = build_G(constant, constant_state)
    assert G0.atom_at_zero == 0.0 and G0.density_mass() == 0.0


def test_measure_G_atom_is_A_star(sigmoid12, sigmoid12_states):
    middle = sigmoid12_states[1]
    assert build_G(sigmoid12, middle).atom_at_zero == middle.A_star


def test_kernel_vanishes_for_constant_rate(constant, constant_state):
    k = kernel_h0(constant, constant_state)
    assert np.all(k.values == 0) and k.l1_partial == 0


@pytest.fixture(scope="module")
def satquad_kernel(satquad, satquad_state):
    return kernel_h0(satquad, satquad_state)


def test_kernel_integral(satquad_kernel, satquad_state):
    expected = satquad_state.slope_inv_I - satquad_state.A_star
    assert satquad_kernel.laplace(0.0).real == pytest.approx(expected, abs=2e-3)
    assert expected == pytest.approx(0.4481 - 0.8500, abs=2e-3)


def test_kernel_decays(satquad_kernel):
    assert satquad_kernel.decaying and satquad_kernel.decay_rate_fit > 0
    assert np.isfinite(satquad_kernel.l1_tail_bound)
    assert satquad_kernel.fit_residual <= 0.1


@pytest.mark.parametrize("z", [0.0, 1.0, 1 + 3j])
def test_kernel_transform_consistency(satquad, satquad_state, satquad_kernel, z):
    expected = laplace_h0_general(satquad, satquad_state, z) - satquad_state.A_star
    assert abs(satquad_kernel.laplace(z) - expected) <= 2e-3


def test_kernel_transform_at_one_matches_closed_form(satquad_state, satquad_kernel):
    expected = laplace_h0_refractory(satquad_state, 1.0) - satquad_state.A_star
    assert abs(satquad_kernel.laplace(1.0) - expected) <= 1e-4


def test_kernel_rejects_coarse_step(satquad, satquad_state):
    with pytest.raises(DomainError):
        kernel_h0(satquad, satquad_state, delta_t=0.2)


def test_refractory_transform_special_values(satquad_state, constant_state):
    assert laplace_h0_refractory(satquad_state, 0.0) == pytest.approx(0.4481, abs=1e-4)
    assert laplace_h0_refractory(satquad_state, 0.0) == pytest.approx(satquad_state.slope_inv_I, abs=1e-6)
    assert abs(laplace_h0_refractory(satquad_state, 1e6) - satquad_state.A_star) < 1e-6
    assert laplace_h0_refractory(constant_state, 2 + 1j) == 0


def test_refractory_transform_continuous_near_zero(satquad_state):
    for eps in (1e-9, 5e-8, 3e-5, 2e-4):
        for z in (eps, 1j * eps, eps * (1 + 1j)):
            direct = satquad_state.A_star * z / (z + satquad_state.phi_at_r * (1 - np.exp(-z)))
            assert abs(laplace_h0_refractory(satquad_state, z) - direct) <= 1e-7


def test_general_transform_matches_closed_form(satquad, satquad_state):
    z = 0.3 + 2j
    assert abs(laplace_h0_general(satquad, satquad_state, z) - laplace_h0_refractory(satquad_state, z)) <= 1e-8
    assert laplace_h0_general(satquad, satquad_state, 0.0) == pytest.approx(satquad_state.slope_inv_I, abs=1e-6)


def test_general_transform_custom_model(satquad, satquad_state):
    custom = refractory_as_custom(satquad)
    z = np.array([0.5, 0.1 + 4j, -0.2 + 1j])
    got = laplace_h0_general(custom, satquad_state, z)
    assert np.allclose(got, laplace_h0_refractory(satquad_state, z), atol=1e-6)


def test_general_transform_domain(satquad, satquad_state, constant, constant_state):
    with pytest.raises(DomainError):
        laplace_h0_general(satquad, satquad_state, -0.5 + 1j)
    assert laplace_h0_general(constant, constant_state, 0.4 + 3j) == 0

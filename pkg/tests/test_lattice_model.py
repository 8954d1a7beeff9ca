import math

import numpy as np
import pytest

from kam.decay_spaces import DecayFunction
from kam.errors import DegenerateParameter
from kam.lattice_model import LatticeModel, action_change, loop_action, symplectic_form
from schemas import CouplingPotential, ModelConfig


def _random_points(model, rng, n):
    q = rng.uniform(-0.5, 0.5, size=(n, model.S))
    q[:, model.S // 2] += math.pi + rng.uniform(-1.0, 1.0, size=n)
    p = rng.uniform(-0.5, 0.5, size=(n, model.S))
    return np.concatenate([q, p], axis=-1)


def test_map_is_symplectic_on_a_coupled_window(rng):
    model = LatticeModel.from_config(ModelConfig(window_radius=16, epsilon=0.02))
    J = symplectic_form(model.S)
    DF = model.jacobian(_random_points(model, rng, 100))
    defect = np.swapaxes(DF, -1, -2) @ J @ DF - J
    assert np.abs(defect).max() <= 1e-12


def test_jacobian_matches_finite_differences(rng):
    model = LatticeModel.from_config(ModelConfig(window_radius=3, epsilon=0.05))
    x = _random_points(model, rng, 1)[0]
    DF = model.jacobian(x)
    h = 1e-6
    for j in range(2 * model.S):
        e = np.zeros_like(x)
        e[j] = h
        column = (model.map_F(x + e) - model.map_F(x - e)) / (2 * h)
        np.testing.assert_allclose(DF[:, j], column, atol=1e-7)


def test_batched_map_agrees_with_single_points(rng):
    model = LatticeModel.from_config(ModelConfig(window_radius=2, epsilon=0.1))
    X = _random_points(model, rng, 4)
    batched = model.map_F(X)
    for x, y in zip(X, batched):
        np.testing.assert_allclose(model.map_F(x), y, rtol=0, atol=1e-14)


def test_background_is_a_fixed_point():
    model = LatticeModel.from_config(ModelConfig(window_radius=3, epsilon=0.02))
    x = np.zeros(2 * model.S)
    np.testing.assert_array_equal(model.map_F(x), x)


def test_polynomial_coupling_reduces_to_the_default_harmonic_one(rng):
    harmonic = LatticeModel.from_config(ModelConfig(window_radius=2, epsilon=0.03, gamma=1.0))
    explicit = LatticeModel.from_config(ModelConfig(
        window_radius=2, epsilon=0.03,
        coupling_potentials=[CouplingPotential(range=1, coefficients=[0.5])]))
    x = _random_points(harmonic, rng, 3)
    np.testing.assert_allclose(harmonic.map_F(x), explicit.map_F(x), atol=1e-14)


def test_small_libration_rotation_number_matches_the_linearization():
    model = LatticeModel.from_config(ModelConfig(window_radius=1, step=0.05, substeps=10))
    x0 = np.zeros(2 * model.S)
    x0[1] = math.pi + 1e-3
    rot = model.rotation_number(x0, 3000, center=[0])
    assert rot == pytest.approx(0.5 / (2 * math.pi), abs=5e-4)


def test_background_is_hyperbolic_for_the_pendulum():
    model = LatticeModel.from_config(ModelConfig(window_radius=1))
    M, vals, _ = model.onsite_multipliers()
    assert abs(vals[0]) < 1 < abs(vals[1])
    assert vals[0] * vals[1] == pytest.approx(1.0)
    assert np.linalg.det(M) == pytest.approx(1.0)


def test_elliptic_background_is_rejected():
    with pytest.raises(ValueError):
        ModelConfig(onsite=[0.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        ModelConfig(onsite=[0.0, 0.1, -0.5])


def test_double_well_elliptic_point():
    model = LatticeModel.from_config(ModelConfig(onsite=[0.0, 0.0, -0.5, 0.0, 0.25], window_radius=1))
    assert model.elliptic_point == pytest.approx(1.0)
    assert LatticeModel.from_config(ModelConfig(window_radius=1)).elliptic_point == pytest.approx(math.pi)


def test_zero_counterterm_is_the_identity(rng):
    model = LatticeModel.from_config(ModelConfig(window_radius=2, epsilon=0.02))
    x = _random_points(model, rng, 5)
    np.testing.assert_array_equal(model.family_F_lambda([[0]], np.zeros(1), x), model.map_F(x))


@pytest.mark.parametrize("counterterm", ["action", "momentum"])
def test_counterterm_derivative_matches_finite_differences(rng, counterterm):
    model = LatticeModel.from_config(ModelConfig(window_radius=2, epsilon=0.02, counterterm=counterterm))
    x = _random_points(model, rng, 1)[0]
    lam = np.array([0.01])
    _, DF, dlam = model.family_with_derivatives([[0]], lam, x)
    h = 1e-6
    column = (model.family_F_lambda([[0]], lam + h, x) - model.family_F_lambda([[0]], lam - h, x)) / (2 * h)
    np.testing.assert_allclose(dlam[:, 0], column, atol=1e-7)
    J = symplectic_form(model.S)
    assert np.abs(DF.T @ J @ DF - J).max() <= 1e-11


def test_action_counterterm_moves_the_action_by_lambda():
    model = LatticeModel.from_config(ModelConfig(window_radius=1))
    t = 2 * math.pi * np.arange(4000) / 4000
    loop = np.zeros((t.size, 2 * model.S))
    loop[:, 1] = math.pi + 0.8 * np.cos(t)
    loop[:, model.S + 1] = -0.8 * np.sin(t)
    assert action_change(model, [[0]], np.array([0.01]), loop) == pytest.approx(0.01, abs=1e-5)


def test_action_counterterm_is_undefined_at_the_elliptic_point():
    model = LatticeModel.from_config(ModelConfig(window_radius=1))
    x = np.zeros(2 * model.S)
    x[1] = math.pi
    with pytest.raises(DegenerateParameter):
        model.counterterm([[0]], np.array([0.1]), x)


def test_counterterm_needs_one_entry_per_center():
    model = LatticeModel.from_config(ModelConfig(window_radius=1))
    with pytest.raises(ValueError):
        model.counterterm([[0]], np.zeros(2), np.zeros(2 * model.S))


def test_loop_action_of_a_circle():
    t = 2 * math.pi * np.arange(2000) / 2000
    assert loop_action(np.cos(t), -np.sin(t)) == pytest.approx(math.pi, rel=1e-5)


def test_flow_conserves_energy_and_is_symplectic():
    model = LatticeModel.from_config(ModelConfig(window_radius=1, epsilon=0.05))
    x0 = np.zeros(2 * model.S)
    x0[1] = math.pi + 1.0
    x1, DS = model.flow(x0, 3.0, variational=True)
    assert model.energy(x1) == pytest.approx(model.energy(x0), abs=1e-9)
    J = symplectic_form(model.S)
    assert np.abs(DS.T @ J @ DS - J).max() <= 1e-8


def test_flow_rejects_times_beyond_the_horizon():
    model = LatticeModel.from_config(ModelConfig(window_radius=1, flow_horizon=10.0))
    with pytest.raises(ValueError):
        model.flow(np.zeros(2 * model.S), 11.0)


def test_jacobian_decays_off_the_diagonal():
    model = LatticeModel.from_config(ModelConfig(window_radius=8, epsilon=0.02))
    gamma = DecayFunction(2.0, 0.5, 0.05, 1)
    x = np.zeros(2 * model.S)
    assert np.isfinite(model.jacobian_decay(x, gamma))
    assert model.interaction_bound(gamma) == pytest.approx(1.0 / (0.05 * math.exp(-0.5)))


def test_window_lookup_rejects_outside_sites():
    model = LatticeModel.from_config(ModelConfig(window_radius=2))
    with pytest.raises(ValueError):
        model.index_of([[5]])


def test_interaction_bound_is_checked_when_building_from_config():
    gamma = DecayFunction(2.0, 0.5, 0.05, 1)
    bound = 1.0 / (0.05 * math.exp(-0.5))
    model = LatticeModel.from_config(ModelConfig(window_radius=2, interaction_limit=2 * bound), gamma)
    assert model.S == 5
    with pytest.raises(ValueError, match="interaction_limit"):
        LatticeModel.from_config(ModelConfig(window_radius=2, interaction_limit=0.5 * bound), gamma)


def test_flow_composes_as_a_one_parameter_group():
    model = LatticeModel.from_config(ModelConfig(window_radius=1, epsilon=0.05))
    x0 = np.zeros(2 * model.S)
    x0[1] = math.pi + 1.0
    x0[model.S + 1] = 0.2
    two_legs = model.flow(model.flow(x0, 0.7), 1.3)
    np.testing.assert_allclose(two_legs, model.flow(x0, 2.0), atol=1e-9)
    np.testing.assert_allclose(model.flow(model.flow(x0, 2.0), -2.0), x0, atol=1e-9)


def test_map_commutes_with_lattice_translations(rng):
    model = LatticeModel.from_config(ModelConfig(window_radius=20, epsilon=0.02))
    S, c, m = model.S, model.S // 2, 3
    x = np.zeros(2 * S)
    x[c - 3:c + 4] = rng.uniform(-1.0, 1.0, size=7)
    x[c] += math.pi
    x[S + c - 3:S + c + 4] = rng.uniform(-0.5, 0.5, size=7)

    def shift(y):
        return np.concatenate([np.roll(y[:S], -m), np.roll(y[S:], -m)])

    interior = np.r_[c - 6:c + 7, S + c - 6:S + c + 7]
    np.testing.assert_allclose(model.map_F(shift(x))[interior], shift(model.map_F(x))[interior],
                               rtol=0, atol=1e-13)

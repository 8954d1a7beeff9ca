import math

import numpy as np
import pytest

from kam.embedding import align_phase, evaluate_grid, is_real, like
from kam.errors import DegenerateParameter, FrequencyNotAttainable, NoConvergence, ResonantMode
from kam.kam_step import (center_geometry, direct_newton_oracle, invariance_error,
                          libration_amplitude, linearized_residual, make_state, newton_correction,
                          newton_step, reducibility_defect, refresh_bundle, single_site_guess, solve)
from kam.lattice_model import LatticeModel
from schemas import ModelConfig, SolverConfig

from conftest import OMEGA


def test_make_state_validates_shapes(guess):
    with pytest.raises(ValueError):
        make_state(guess, [OMEGA, OMEGA])
    with pytest.raises(ValueError):
        make_state(guess, OMEGA, lam=np.zeros(2))
    state = make_state(guess, OMEGA)
    assert state.lam.shape == (1,) and state.iterations == 0
    assert math.isnan(state.error)


def test_guess_is_real_and_close_to_invariant(model, guess):
    assert is_real(guess)
    _, norms = invariance_error(model, make_state(guess, OMEGA))
    assert norms.sup < 1e-2


def test_libration_amplitude_range(model):
    a = libration_amplitude(model, OMEGA)
    assert 0.0 < a < math.pi
    with pytest.raises(FrequencyNotAttainable):
        libration_amplitude(model, 0.2)


def test_single_breather_converges(breather, solver):
    assert breather.error < solver.tol
    assert breather.iterations <= 8
    assert float(np.abs(breather.lam).max()) <= 1e-9
    errors = [r.error_sup for r in breather.history]
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_last_steps_converge_quadratically(breather):
    e1, e2, e3 = [r.error_sup for r in breather.history[-3:]]
    assert (math.log(e3) - math.log(e2)) / (math.log(e2) - math.log(e1)) >= 1.7


def test_counterterm_stays_of_the_order_of_the_previous_error(breather):
    history = breather.history
    for previous, current in zip(history, history[1:]):
        assert current.lam_norm <= 3 * previous.error_sup + 1e-13
    # a single frequency carries no isotropy obstruction
    assert all(r.isotropy <= 1e-12 for r in history)


def test_isotropy_at_convergence(model, breather):
    geometry = center_geometry(model, breather)
    assert float(np.abs(geometry.L).max()) <= 1e-8
    assert geometry.inverse_defect <= 1e-6
    assert breather.history[-1].isotropy <= 1e-8


def test_reducibility_at_convergence(model, breather):
    defect, lower_gap = reducibility_defect(model, breather)
    assert defect <= 1e-7
    assert lower_gap <= 1e-7


def test_nondegeneracy_constants_are_recorded(breather):
    last = breather.history[-1]
    assert np.isfinite(last.N_norm) and np.isfinite(last.avgA_inv) and np.isfinite(last.avgQ_inv)
    assert last.mu1 < 1 and last.mu2 < 1


def test_infinite_tolerance_returns_the_input(model, guess, solver):
    state = make_state(guess, OMEGA)
    assert solve(model, state, solver, tol=math.inf) is state


def test_weighted_stop_needs_a_decay_function(model, guess, solver):
    weighted = solver.model_copy(update={"stop_norm": "weighted"})
    with pytest.raises(ValueError):
        solve(model, make_state(guess, OMEGA), weighted)


def test_iteration_budget_raises_with_history(model, guess, solver):
    with pytest.raises(NoConvergence) as err:
        solve(model, make_state(guess, OMEGA), solver, max_iter=0)
    assert len(err.value.history) == 1
    assert err.value.last_good is not None


def test_resonant_frequency_is_rejected_before_solving(model, guess, solver):
    with pytest.raises(ResonantMode):
        solve(model, make_state(guess, 0.5), solver)


def test_quasi_newton_step_solves_the_linearized_equation(model, guess, solver):
    state = refresh_bundle(model, make_state(guess, OMEGA), solver)
    E, norms = invariance_error(model, state)
    delta, Lam, geometry = newton_correction(model, state, solver, E)
    assert linearized_residual(geometry, state, delta, Lam, E) <= 0.1 * norms.sup


@pytest.fixture(scope="module")
def five_sites():
    """Converged breather on a 5-site window and the guess it was solved from."""
    model = LatticeModel.from_config(ModelConfig(window_radius=2))
    solver = SolverConfig(kmax=16, tol=1e-9)
    K0 = single_site_guess(model, OMEGA, [0], solver.kmax, solver.dealias)
    exact = solve(model, make_state(K0, OMEGA), solver)
    return model, solver, exact, K0


def _between(exact, K0, s):
    """State on the segment from the converged torus towards (and past) the guess."""
    K = exact.K.with_coeffs(exact.K.coeffs + s * (K0.coeffs - exact.K.coeffs))
    return make_state(K, OMEGA)


def test_structured_step_matches_the_dense_solve_up_to_a_phase(five_sites):
    model, solver, exact, K0 = five_sites
    state = refresh_bundle(model, _between(exact, K0, 1.0 / 3.0), solver)
    E, norms = invariance_error(model, state)
    assert 1e-5 <= norms.sup <= 1e-3
    delta, Lam, geometry = newton_correction(model, state, solver, E)
    dense, dense_Lam = direct_newton_oracle(model, state, E=E)
    diff = (delta - dense).reshape(-1)
    DK = geometry.DK.reshape(-1, state.l)
    alpha, *_ = np.linalg.lstsq(DK, diff, rcond=None)
    assert np.abs(diff - DK @ alpha).max() <= 1e-6
    np.testing.assert_allclose(Lam, dense_Lam, atol=1e-6)


def test_newton_steps_are_quadratic(five_sites):
    model, solver, exact, K0 = five_sites
    before, dense_after, structured_after = [], [], []
    for s in (4.0, 2.0, 1.0):
        state = refresh_bundle(model, _between(exact, K0, s), solver)
        E, norms = invariance_error(model, state)
        before.append(norms.sup)
        delta, Lam = direct_newton_oracle(model, state, E=E)
        moved = make_state(like(state.K, evaluate_grid(state.K) + delta), OMEGA, state.lam + Lam)
        dense_after.append(invariance_error(model, moved)[1].sup)
        structured_after.append(invariance_error(model, newton_step(model, state, solver, E))[1].sup)
    assert all(a < b for a, b in zip(before[1:], before))
    for after in (dense_after, structured_after):
        slope = np.polyfit(np.log(before), np.log(after), 1)[0]
        assert 1.7 <= slope <= 2.3


def test_truncation_floor_above_tol_is_reported_as_stagnation(model):
    solver = SolverConfig(kmax=16, max_iter=12, tol=1e-11)
    K0 = single_site_guess(model, OMEGA, [0], solver.kmax, solver.dealias)
    with pytest.raises(NoConvergence, match="stagnated") as err:
        solve(model, make_state(K0, OMEGA), solver)
    errors = [r.error_sup for r in err.value.history]
    assert min(errors) < 1e-8
    assert len(errors) < solver.max_iter + 1


def test_direct_oracle_refuses_large_systems(model, guess):
    with pytest.raises(ValueError):
        direct_newton_oracle(model, make_state(guess, OMEGA), max_unknowns=100)


def test_momentum_counterterm_has_no_lever_on_a_libration(guess):
    model = LatticeModel.from_config(ModelConfig(window_radius=4, counterterm="momentum"))
    solver = SolverConfig(kmax=16, max_iter=4)
    with pytest.raises((DegenerateParameter, NoConvergence)):
        solve(model, make_state(guess, OMEGA), solver)


def _smoothly_perturbed(K, rng, size=1e-3):
    values = evaluate_grid(K)
    theta = np.arange(K.grid_size) / K.grid_size
    c, S = K.site_index([0]), K.n_sites
    for j in (c, S + c):
        a, b, offset = rng.uniform(-1.0, 1.0, size=3)
        values[:, j] += size * (a * np.cos(2 * np.pi * theta) + b * np.sin(2 * np.pi * theta) + offset)
    return like(K, values)


def test_perturbed_guesses_reach_the_same_torus(model, solver, guess):
    starts = [_smoothly_perturbed(guess, np.random.default_rng(seed)) for seed in (1, 2)]
    first, second = (solve(model, make_state(K, OMEGA), solver) for K in starts)
    _, distance = align_phase(first.K, second.K)
    assert distance <= 1e-8

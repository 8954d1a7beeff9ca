import numpy as np
import pytest

from kam.errors import ContractionFailure
from kam.kam_step import make_state
from kam.splitting import (build_cocycle, graph_refine, initial_splitting, invariance_defect,
                           measure_rates, project, symplectic_orthogonality)

from conftest import OMEGA


def test_initial_splitting_ranks(model, guess):
    bundle = initial_splitting(model, guess)
    S = model.S
    assert bundle.ranks == (S - 1, 2, S - 1)
    assert bundle.grid_size == guess.grid_size


def test_projections_add_up_to_the_identity(breather, rng):
    bundle = breather.bundle
    n = bundle.Ps.shape[-1]
    np.testing.assert_allclose(bundle.Ps + bundle.Pc + bundle.Pu, np.broadcast_to(np.eye(n), bundle.Ps.shape),
                               atol=1e-10)
    G = rng.standard_normal(bundle.Ps.shape[:-1])
    np.testing.assert_allclose(sum(project(bundle, G)), G, atol=1e-10)


def test_uncoupled_splitting_is_already_invariant(model, guess):
    cocycle = build_cocycle(model, guess, np.zeros(1), [OMEGA])
    bundle = graph_refine(initial_splitting(model, guess), cocycle)
    assert bundle.defect <= 1e-9
    assert bundle.npower == 1


def test_backward_cocycle_inverts_the_step_behind(model, guess):
    cocycle = build_cocycle(model, guess, np.zeros(1), [OMEGA])
    n = cocycle.phase_dim
    product = cocycle.backward() @ cocycle.behind
    np.testing.assert_allclose(product, np.broadcast_to(np.eye(n), product.shape), atol=1e-10)


def test_refined_splitting_of_the_breather(model, breather):
    bundle = breather.bundle
    cocycle = build_cocycle(model, breather.K, breather.lam, breather.omega)
    assert max(invariance_defect(bundle, cocycle).values()) <= 1e-9
    assert symplectic_orthogonality(bundle) <= 1e-8
    assert bundle.rates is not None and bundle.rates.dominated
    assert bundle.rates.mu1 < 1 and bundle.rates.mu2 < 1


def test_coupled_window_refines_with_small_defect(model, breather, solver):
    coupled = model.with_epsilon(0.02)
    cocycle = build_cocycle(coupled, breather.K, breather.lam, breather.omega)
    bundle = graph_refine(breather.bundle, cocycle, solver.graph_tol)
    assert bundle.defect <= 1e-9
    rates = measure_rates(bundle, cocycle, 30)
    assert rates.mu1 * rates.mu3 < 1 and rates.mu2 * rates.mu3 < 1
    assert rates.C_h >= 1.0


def test_graph_transform_reports_stalls(model, guess):
    coupled = model.with_epsilon(0.05)
    cocycle = build_cocycle(coupled, guess, np.zeros(1), [OMEGA])
    with pytest.raises(ContractionFailure) as err:
        graph_refine(initial_splitting(coupled, guess), cocycle, tol=1e-30, max_sweeps=1, npower_max=1)
    assert len(err.value.history) == 1

import math

import numpy as np
import pytest

from kam.cohomology import (apply_difference, apply_directional, assert_nonresonant, check_sequence,
                            measure_diophantine, solve_difference, solve_difference_grid,
                            solve_directional)
from kam.embedding import from_modes, to_modes
from kam.errors import NonzeroAverage, ResonantMode
from schemas import GOLDEN, SILVER


def _zero_mean_modes(rng, kmax, M):
    hat = np.zeros(M, dtype=complex)
    ks = np.arange(1, kmax + 1)
    coeffs = rng.standard_normal(kmax) + 1j * rng.standard_normal(kmax)
    hat[ks] = coeffs
    hat[-ks] = np.conj(coeffs)
    return hat[:, None]


def test_golden_mean_is_diophantine():
    report = measure_diophantine(GOLDEN, 1.0, 200)
    assert math.isfinite(report.kappa)
    assert not report.resonant
    assert sum(abs(k) for k in report.worst_mode) <= 200


def test_rational_frequency_is_resonant():
    report = measure_diophantine(0.25, 1.0, 10)
    assert report.resonant
    assert report.worst_mode == (4,)


def test_pair_truncations():
    reports = check_sequence([GOLDEN, SILVER], [2.0, 3.0], [200, 200])
    assert all(math.isfinite(r.kappa) for r in reports)
    resonant = check_sequence([GOLDEN, GOLDEN], [2.0, 3.0], [50, 50])
    assert resonant[1].resonant
    assert sorted(map(abs, resonant[1].worst_mode)) == [1, 1]


def test_single_entry_sequence_matches_the_plain_scan():
    (report,) = check_sequence([GOLDEN], [2.0], [100])
    assert report.kappa == measure_diophantine(GOLDEN, 2.0, 100).kappa


def test_sequence_needs_large_enough_exponents():
    with pytest.raises(ValueError):
        check_sequence([GOLDEN, SILVER], [2.0, 2.0], [50, 50])
    with pytest.raises(ValueError):
        check_sequence([GOLDEN], [2.0, 3.0], [50])


def test_flow_flavor_uses_the_plain_product():
    report = measure_diophantine([1.0, -GOLDEN], 2.0, 30, flavor="flow")
    assert math.isfinite(report.kappa)
    assert report.flavor == "flow"


def test_difference_equation_round_trip(rng):
    M = 2 * 2 * 256 + 1
    for _ in range(100):
        hat = _zero_mean_modes(rng, 256, M)
        v = solve_difference(hat, GOLDEN, 1)
        residual = apply_difference(v, GOLDEN, 1) - hat
        assert np.abs(residual).max() <= 1e-12 * np.abs(hat).max()


def test_directional_equation_round_trip(rng):
    M = 129
    hat = _zero_mean_modes(rng, 64, M)
    v = solve_directional(hat, [GOLDEN], 1)
    np.testing.assert_allclose(apply_directional(v, [GOLDEN], 1), hat, atol=1e-12)


def test_solution_is_linear(rng):
    M = 101
    h1, h2 = _zero_mean_modes(rng, 50, M), _zero_mean_modes(rng, 50, M)
    lhs = solve_difference(2.0 * h1 - 3.0 * h2, GOLDEN, 1)
    rhs = 2.0 * solve_difference(h1, GOLDEN, 1) - 3.0 * solve_difference(h2, GOLDEN, 1)
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(lhs).max()


def test_grid_solution_satisfies_the_equation(rng):
    M = 65
    values = from_modes(_zero_mean_modes(rng, 16, M), 1)
    v = solve_difference_grid(values, GOLDEN * 0.1, 1)
    shifted = from_modes(apply_difference(to_modes(v, 1), GOLDEN * 0.1, 1), 1)
    np.testing.assert_allclose(shifted, values, atol=1e-10)
    assert abs(v.mean()) <= 1e-14


def test_nonzero_average_is_rejected():
    hat = np.zeros((17, 1), dtype=complex)
    hat[0] = 1e-6
    with pytest.raises(NonzeroAverage) as err:
        solve_difference(hat, GOLDEN, 1)
    assert err.value.average == pytest.approx(1e-6)


def test_resonant_grid_mode_is_reported():
    with pytest.raises(ResonantMode) as err:
        assert_nonresonant(0.5, 9, 1)
    assert err.value.mode[0] % 2 == 0 and err.value.divisor < 1e-13


def test_two_dimensional_divisors():
    assert_nonresonant([GOLDEN, SILVER], 17, 2)
    with pytest.raises(ResonantMode):
        assert_nonresonant([GOLDEN, GOLDEN], 17, 2)

from fractions import Fraction

import numpy as np
import pytest

from msm2.errors import ConfigurationError, NoSupportError
from msm2.models import ChainInitialization, FirstOrderMatrix, TransitionTensor, lift_to_pairs
from msm2.services.ck import (
    first_order_n_step,
    n_step_distribution,
    n_step_with_loss,
    occupation_curve,
    prediction_curve,
    state_occupation,
)
from msm2.services.sim import simulate_cohort


def enumerate_paths(P, h, j, n):
    """Sum over every path h, j, x_1 .. x_{n+1} of the product of tensor entries."""
    m = P.shape[0]
    paths = np.indices((m,) * (n + 1)).reshape(n + 1, -1).T
    prev = np.full(len(paths), h)
    cur = np.full(len(paths), j)
    prob = np.ones(len(paths))
    for step in range(n + 1):
        nxt = paths[:, step]
        prob *= P[prev, cur, nxt]
        prev, cur = cur, nxt
    return np.bincount(paths[:, -1], weights=prob, minlength=m)


def trace_term(P, a, b, l):
    """Tr(P_ab. * P_(b) . P^(l)), with P^(l) the l-columns of all matrices side by side"""
    columns = P[:, :, l].T
    return np.trace((P[a, b][:, None] * P[b]) @ columns)


def closed_form(P, h, j, l, n):
    m = P.shape[0]
    if n == 1:
        return P[h, j] @ P[j, :, l]
    if n == 2:
        return trace_term(P, h, j, l)
    if n == 3:
        return sum(P[h, j, k1] * trace_term(P, j, k1, l) for k1 in range(m))
    if n == 4:
        return sum(
            P[h, j, k2] * P[j, k2, k1] * trace_term(P, k2, k1, l)
            for k2 in range(m)
            for k1 in range(m)
        )
    raise ValueError(n)


def test_matches_path_enumeration(random_tensors):
    """n-step distributions equal exhaustive path sums for n <= 8"""
    for tensor in random_tensors:
        m = tensor.m
        P = np.asarray(tensor.values)
        for h in range(m):
            for j in range(m):
                for n in range(1, 9):
                    expected = enumerate_paths(P, h, j, n)
                    actual = n_step_distribution(tensor, h + 1, j + 1, n)
                    np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12)


def test_matches_trace_expressions(random_tensors):
    """n = 1..4 agree with the closed-form trace sums"""
    for tensor in random_tensors:
        m = tensor.m
        P = np.asarray(tensor.values)
        for h in range(m):
            for j in range(m):
                for n in range(1, 5):
                    actual = n_step_distribution(tensor, h + 1, j + 1, n)
                    expected = [closed_form(P, h, j, l, n) for l in range(m)]
                    np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12)


def test_matches_lifted_chain_powers(random_tensors, uniform_init):
    for tensor in random_tensors:
        m = tensor.m
        lifted = lift_to_pairs(tensor, uniform_init(m))
        L = lifted.matrix.values
        for h in range(1, m + 1):
            for j in range(1, m + 1):
                start = np.zeros(m * m)
                start[lifted.pair_index(h, j)] = 1.0
                for n in range(1, 9):
                    pairs = start @ np.linalg.matrix_power(L, n + 1)
                    expected = pairs.reshape(m, m).sum(axis=0)
                    np.testing.assert_allclose(n_step_distribution(tensor, h, j, n), expected, rtol=0, atol=1e-12)


def test_distribution_sums_to_one(random_tensors):
    for tensor in random_tensors[:10]:
        dist = n_step_distribution(tensor, 1, 2, 5)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(dist >= 0.0)


def printed_partial_tensor():
    """The NSP and SP matrices of the hospital illustration; every other pair undefined"""
    values = np.zeros((7, 7, 7))
    support = np.zeros((7, 7), dtype=bool)
    rows = {
        (1, 1): {1: Fraction(8919, 10577), 2: Fraction(257, 10577), 6: Fraction(1369, 10577), 7: Fraction(32, 10577)},
        (1, 2): {2: Fraction(253, 411), 3: Fraction(3, 411), 4: Fraction(92, 411), 5: Fraction(62, 411), 7: Fraction(1, 411)},
        (1, 6): {6: Fraction(1)},
        (1, 7): {7: Fraction(1)},
        (2, 2): {2: Fraction(2307, 2668), 3: Fraction(220, 2668), 4: Fraction(68, 2668), 5: Fraction(49, 2668), 7: Fraction(24, 2668)},
        (2, 3): {3: Fraction(207, 223), 6: Fraction(16, 223)},
        (2, 4): {3: Fraction(6, 214), 4: Fraction(159, 214), 5: Fraction(45, 214), 7: Fraction(4, 214)},
        (2, 5): {3: Fraction(3, 166), 5: Fraction(160, 166), 7: Fraction(3, 166)},
        (2, 7): {7: Fraction(1)},
    }
    for (h, j), row in rows.items():
        support[h - 1, j - 1] = True
        for k, p in row.items():
            values[h - 1, j - 1, k - 1] = float(p)
    return TransitionTensor(values=values, support=support)


def test_printed_matrices_two_step_prediction():
    """P(X4 = NIMV | X2 = SP, X1 = NSP) from the printed NSP and SP matrices"""
    expected = Fraction(253, 411) * Fraction(68, 2668) + Fraction(92, 411) * Fraction(159, 214)
    assert float(expected) == pytest.approx(0.182002, abs=1e-6)

    dist = n_step_distribution(printed_partial_tensor(), 1, 2, 1)
    assert dist[3] == pytest.approx(float(expected), abs=1e-12)
    assert dist[3] == pytest.approx(0.1820, abs=1e-4)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_lost_mass_on_unsupported_pairs():
    """Three steps from (NSP, SP) reach pairs the partial tensor leaves undefined"""
    dist, lost = n_step_with_loss(printed_partial_tensor(), 1, 2, 2)
    assert lost > 0.0
    assert dist.sum() + lost == pytest.approx(1.0, abs=1e-12)


def test_unsupported_start_pair_raises():
    with pytest.raises(NoSupportError):
        n_step_distribution(printed_partial_tensor(), 3, 3, 1)


def test_invalid_n_raises(random_tensors):
    with pytest.raises(ConfigurationError):
        n_step_distribution(random_tensors[0], 1, 1, 0)


def test_deterministic_cycle():
    """1 -> 2 -> 3 -> 1 deterministically whatever the previous state"""
    values = np.zeros((3, 3, 3))
    for h in range(3):
        for j in range(3):
            values[h, j, (j + 1) % 3] = 1.0
    tensor = TransitionTensor(values=values, support=np.ones((3, 3), dtype=bool))
    # X_s = 1, X_{s+1} = 2: X_{s+2+n} = state (2 + n + 1) mod 3
    for n in range(1, 7):
        dist = n_step_distribution(tensor, 1, 2, n)
        expected = np.zeros(3)
        expected[(1 + n + 1) % 3] = 1.0
        np.testing.assert_array_equal(dist, expected)


def test_prediction_curve_matches_point_queries(random_tensors):
    tensor = random_tensors[2]
    curve = prediction_curve(tensor, 2, 1, 3, 6)
    assert curve.horizon == 6
    assert len(curve.values) == 6
    for n, value in enumerate(curve.values, start=1):
        assert value == pytest.approx(n_step_distribution(tensor, 2, 1, n)[2], abs=1e-12)


def test_empty_prediction_curve(random_tensors):
    curve = prediction_curve(random_tensors[0], 1, 1, 1, 0)
    assert curve.values == ()


def test_first_order_power():
    matrix = FirstOrderMatrix(values=[[0.9, 0.1], [0.0, 1.0]])
    assert np.array_equal(first_order_n_step(matrix, 0).values, np.eye(2))
    np.testing.assert_allclose(first_order_n_step(matrix, 2).values, [[0.81, 0.19], [0.0, 1.0]], atol=1e-15)


def test_state_occupation_first_days(random_tensors):
    tensor = random_tensors[1]
    m = tensor.m
    rng = np.random.default_rng(3)
    init = ChainInitialization(
        initial_dist=rng.dirichlet(np.ones(m)),
        first_step=FirstOrderMatrix(values=rng.dirichlet(np.ones(m), size=m)),
    )
    np.testing.assert_array_equal(state_occupation(tensor, init, 1), init.initial_dist)
    np.testing.assert_allclose(state_occupation(tensor, init, 2), init.initial_dist @ init.first_step.values, atol=1e-15)

    lifted = lift_to_pairs(tensor, init)
    for t in range(3, 8):
        pairs = lifted.initial @ np.linalg.matrix_power(lifted.matrix.values, t - 2)
        expected = pairs.reshape(m, m).sum(axis=0)
        np.testing.assert_allclose(state_occupation(tensor, init, t), expected, atol=1e-12)
        assert state_occupation(tensor, init, t).sum() == pytest.approx(1.0, abs=1e-12)

    curve = occupation_curve(tensor, init, 7)
    assert curve.shape == (7, m)
    np.testing.assert_allclose(curve[6], state_occupation(tensor, init, 7), atol=1e-15)


def test_occupation_of_absorbing_start():
    values = np.zeros((2, 2, 2))
    values[:, 0, :] = 0.5
    values[:, 1, 1] = 1.0
    tensor = TransitionTensor(values=values, support=np.ones((2, 2), dtype=bool))
    init = ChainInitialization(initial_dist=[0.0, 1.0], first_step=FirstOrderMatrix(values=[[0.5, 0.5], [0.0, 1.0]]))
    for t in range(1, 6):
        np.testing.assert_array_equal(state_occupation(tensor, init, t), [0.0, 1.0])


@pytest.mark.slow
def test_state_occupation_matches_simulated_frequencies(four_state_config):
    n = 20000
    config = four_state_config(n_subjects=n, seed=41)
    cohort = simulate_cohort(config)
    for t in range(1, 11):
        frequencies = np.zeros(4)
        for trajectory in cohort:
            state = trajectory.state_on(t)
            # simulation stops at absorption
            frequencies[(state or trajectory.states[-1]) - 1] += 1
        frequencies /= n
        expected = state_occupation(config.tensor, config.init, t)
        tolerance = 4 * np.sqrt(expected * (1 - expected) / n) + 1e-12
        assert (np.abs(frequencies - expected) <= tolerance).all(), t

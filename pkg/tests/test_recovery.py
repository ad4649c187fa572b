import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_separable
from mabs.core import SeparationParams, build_design_matrix, mixture, unit_labels
from mabs.exceptions import CapacityError, RecoveryError
from mabs.recovery import constrained_decode, decode_rows, recover


def test_binary_ordering_example():
    Y = np.array([[0.0], [0.3], [0.7], [1.0]])
    res = recover(Y, [0, 1], 2, SeparationParams(0.3, 1.0))
    np.testing.assert_allclose(res.weights, [[0.3], [0.7]])
    np.testing.assert_array_equal(res.labels, [0, 2, 1, 3])
    assert res.certified and res.residual == 0.0


def test_binary_ordering_perturbed():
    Y = np.array([[0.0], [0.3], [0.7], [1.0]])
    noisy = Y + np.array([[0.01], [-0.01], [0.01], [-0.01]])
    params = SeparationParams(0.3, 1.0, epsilon=0.02)
    assert params.epsilon < params.epsilon_bound([0, 1], 2, 1)
    res = recover(noisy, [0, 1], 2, params)
    np.testing.assert_array_equal(res.labels, [0, 2, 1, 3])
    assert np.max(np.abs(res.weights - [[0.3], [0.7]])) < 0.02
    assert res.certified


def test_equal_weights_fail():
    Y = np.array([[0.0], [0.5], [0.5], [1.0]])
    with pytest.raises(RecoveryError) as info:
        recover(Y, [0, 1], 2, SeparationParams(0.05, 1.0))
    assert np.isfinite(info.value.best_residual) or info.value.best_candidate is None


def test_decode_examples():
    W = np.array([[0.3], [0.7]])
    labels, res = decode_rows([[0.65]], W, [0, 1])
    assert labels[0] == 1 and res[0] == pytest.approx(0.05)
    labels, res = decode_rows([[0.5]], W, [0, 1])
    assert labels[0] == 1  # equidistant to 0.3 (index 2) and 0.7 (index 1)
    D = build_design_matrix([0, 1, 2], 2)
    z = np.array([0, 4, 8, 3, 1, 7])
    W = np.array([[0.2, 0.35], [0.8, 0.65]])
    labels, res = decode_rows(mixture(z, W, D), W, [0, 1, 2])
    np.testing.assert_array_equal(labels, z)
    assert np.all(res == 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5))
def test_decode_residual_lipschitz(seed, eta):
    rng = np.random.default_rng(seed)
    W = rng.dirichlet([1, 1, 1], size=2).T
    Y = rng.random((5, 2))
    _, r0 = decode_rows(Y, W, [0, 1, 2])
    step = rng.normal(size=2)
    Y2 = Y.copy()
    Y2[2] += eta * step / np.linalg.norm(step)
    _, r1 = decode_rows(Y2, W, [0, 1, 2])
    assert abs(r1[2] - r0[2]) <= eta + 1e-12
    np.testing.assert_array_equal(np.delete(r0, 2), np.delete(r1, 2))


def test_constrained_decode_forces_units():
    D = build_design_matrix([0, 1], 2)
    W = np.array([[0.3], [0.7]])
    Y = np.array([[0.0], [0.05], [1.0], [0.96]])
    units = unit_labels([0, 1], 2)
    labels, cost = constrained_decode(Y, W, D, units, 1)
    counts = [(labels == u).sum() for u in units]
    assert min(counts) >= 1
    # brute force over all labelings with the count constraint
    best = np.inf
    for code in np.ndindex(*(4,) * 4):
        z = np.array(code)
        if all((z == u).sum() >= 1 for u in units):
            best = min(best, float(np.sum((Y - D[z] @ W) ** 2)))
    assert cost == pytest.approx(best, abs=1e-12)
    with pytest.raises(CapacityError):
        constrained_decode(Y, W, D, units, 3)


@pytest.mark.parametrize("values", [[0, 1], [0, 1, 2]])
@pytest.mark.parametrize("m, M", [(2, 1), (2, 3), (3, 2)])
def test_roundtrip_and_stability(values, m, M):
    rng = np.random.default_rng(7 * m + M + len(values))
    for _ in range(10):
        W, z, G, params = random_separable(rng, values, m, M, n=int(rng.integers(m, 40)))
        res = recover(G, values, m, params)
        np.testing.assert_array_equal(res.labels, z)
        assert np.max(np.abs(res.weights - W)) < 1e-10
        assert res.certified

        eps = 0.5 * params.epsilon_bound(values, m, M)
        step = rng.normal(size=G.shape)
        step *= rng.uniform(0, 1, (len(G), 1)) * eps / np.linalg.norm(step, axis=1, keepdims=True)
        noisy_params = SeparationParams(params.delta, params.lam, eps)
        res = recover(G + step * 0.999, values, m, noisy_params)
        np.testing.assert_array_equal(res.labels, z)
        assert np.max(np.linalg.norm(res.weights - W, axis=1)) < eps
        # unit rows are averaged, other rows inherit up to m*a_k*eps from the weights
        assert res.certified and res.residual < (1 + m * max(values)) * eps


def test_uncertified_outside_contract():
    Y = np.array([[0.0], [0.3], [0.7], [1.0]])
    params = SeparationParams(0.3, 1.0, epsilon=0.11)
    assert params.epsilon > params.epsilon_bound([0, 1], 2, 1)
    res = recover(Y, [0, 1], 2, params)
    assert not res.certified
    with pytest.raises(RecoveryError):
        recover(Y, [0, 1], 2, SeparationParams(0.3, 1.0, epsilon=0.2))

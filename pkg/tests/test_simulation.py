import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mabs.constructions import asb_limit_constants
from mabs.core import (
    asb,
    build_design_matrix,
    is_delta_separable,
    lambda_separation,
    required_unit_count,
    unit_labels,
    wsb,
)
from mabs.exceptions import DeltaTooLargeError, InfeasibleConfigError, ValidationError
from mabs.simulation import (
    CSV_COLUMNS,
    GridPoint,
    SweepConfig,
    fit_decay,
    run_sweep,
    sample_assignment,
    sample_weights_separable,
    sample_weights_uniform,
    simulate_instance,
    write_sweep_csv,
)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_uniform_weights_domain(m, M, seed):
    W = sample_weights_uniform(m, M, seed)
    assert W.shape == (m, M) and W.min() >= 0
    np.testing.assert_allclose(W.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(np.diff(np.linalg.norm(W, axis=1)) > 0)


def test_uniform_weights_marginal():
    rng = np.random.default_rng(0)
    t = np.array([sample_weights_uniform(2, 1, rng)[0, 0] for _ in range(5000)])
    assert stats.kstest(t, stats.uniform(0, 0.5).cdf).pvalue > 0.01


def test_uniform_weights_seeded():
    np.testing.assert_array_equal(sample_weights_uniform(3, 4, 7), sample_weights_uniform(3, 4, 7))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 3), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_assignment_plants_units(m, M, seed):
    lam = 1.0 / M
    need = required_unit_count(M, lam)
    n = m * need + seed % 7
    z = sample_assignment(n, m, M, lam, [0, 1], seed)
    assert lambda_separation(z, m, M, lam, build_design_matrix([0, 1], m))
    for u in unit_labels([0, 1], m):
        assert np.sum(z == u) >= need


def test_assignment_exact_block():
    z = sample_assignment(6, 2, 3, 1.0, [0, 1, 2], 1)
    assert sorted(z.tolist()) == sorted(np.repeat(unit_labels([0, 1, 2], 2), 3).tolist())
    with pytest.raises(InfeasibleConfigError):
        sample_assignment(5, 2, 3, 1.0, [0, 1], 0)


def test_unit_counts_many_draws():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        z = sample_assignment(20, 2, 4, 0.5, [0, 1], rng)
        assert np.sum(z == 1) >= 2 and np.sum(z == 2) >= 2


def test_simulate_noiseless_and_noise():
    p = GridPoint((0.0, 1.0), 2, 50, 4, 0.0, 0.02, 0.25)
    inst = simulate_instance(p, 3)
    np.testing.assert_array_equal(inst.Y, inst.G)
    assert is_delta_separable(inst.weights, inst.labels, inst.params, inst.alphabet).passed

    p = GridPoint((0.0, 1.0, 2.0), 2, 200, 6, 0.3, 0.02, 1 / 6)
    inst = simulate_instance(p, 4)
    Z = inst.Y - inst.G
    se = 3 / np.sqrt(Z.size)
    assert abs(Z.mean()) < 3 * 0.3 * se
    assert abs(Z.std() - 0.3) < 0.3 * 3 * se * np.sqrt(2)
    assert is_delta_separable(inst.weights, inst.labels, inst.params, inst.alphabet).passed


def test_simulate_delta_too_large():
    with pytest.raises(DeltaTooLargeError) as info:
        simulate_instance(GridPoint((0.0, 1.0), 2, 10, 2, 0.1, 5.0, 0.5), 0)
    assert info.value.acceptance_rate == 0.0


def test_separable_sampler_fallback():
    W, drawn = sample_weights_separable(2, 2, 5.0, [0, 1], 0, max_draws=50, strict=False)
    assert drawn == 50 and W.shape == (2, 2)
    W, drawn = sample_weights_separable(2, 2, 0.01, [0, 1], 0)
    assert drawn >= 1 and min(asb(W, [0, 1]), wsb(W, [0, 1])) >= 0.01


def test_sweep_zero_noise():
    cfg = SweepConfig(n=[10], M=[2], sigma=[0.0], replicates=2, restarts=2)
    (rec,) = run_sweep(cfg)
    # exact up to rounding in the weight fit
    assert np.all(rec.class_err == 0)
    assert np.all(rec.pred_err <= 1e-20) and np.all(rec.est_err <= 1e-20)
    assert rec.aggregates["pred_err"]["mean"] <= 1e-20


def test_sweep_prefix_reproducible(tmp_path):
    base = dict(n=[12], M=[1, 3], sigma=[0.3], replicates=2, restarts=2, master_seed=5)
    a = run_sweep(SweepConfig(**base))
    b = run_sweep(SweepConfig(**{**base, "replicates": 4}))
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.pred_err, rb.pred_err[:2])
        np.testing.assert_array_equal(ra.est_err, rb.est_err[:2])
        assert ra.seeds == rb.seeds[:2]
        assert ra.aggregates["pred_err"]["mean"] == pytest.approx(np.mean(ra.pred_err))

    out = tmp_path / "a.csv"
    write_sweep_csv(a, out)
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 1 + 4


def test_sweep_workers_identical(tmp_path):
    cfg = dict(n=[10], M=[2], sigma=[0.2], replicates=3, restarts=2, master_seed=1)
    p1, p2 = tmp_path / "1.csv", tmp_path / "2.csv"
    run_sweep(SweepConfig(**cfg, out=str(p1)), workers=1)
    run_sweep(SweepConfig(**cfg, out=str(p2)), workers=2)
    assert p1.read_bytes() == p2.read_bytes()


def test_sweep_config_validation():
    with pytest.raises(InfeasibleConfigError):
        SweepConfig(replicates=0)
    with pytest.raises(InfeasibleConfigError):
        SweepConfig(n=[3], M=[4], lam=1.0)
    with pytest.raises(InfeasibleConfigError):
        SweepConfig.from_dict({"bogus": 1})
    cfg = SweepConfig.from_dict({"lambda": 0.5, "seed": 3, "M": 2})
    assert cfg.lam == 0.5 and cfg.master_seed == 3 and cfg.M == [2]


def test_fit_decay_examples():
    x = np.arange(1.0, 6.0)
    s, _, r2 = fit_decay(np.c_[x, np.exp(-2 * x)])
    assert s == pytest.approx(-2, abs=1e-9) and r2 == pytest.approx(1.0)
    s, _, _ = fit_decay(np.c_[x, 5 / x], model="power")
    assert s == pytest.approx(-1, abs=1e-9)
    s, _, r2 = fit_decay(np.c_[x, np.full(5, 3.0)])
    assert s == pytest.approx(0, abs=1e-12) and r2 == 1.0
    with pytest.raises(ValidationError):
        fit_decay([[1, 1], [2, 0], [3, 1]])
    with pytest.raises(ValidationError):
        fit_decay([[1, 1], [2, 1]])


@pytest.mark.slow
def test_asb_limit_band_grows_with_M():
    lim = asb_limit_constants([0, 1], 2)
    rng = np.random.default_rng(8)
    frac = {}
    for M in (50, 200, 800):
        vals = np.array([asb(sample_weights_uniform(2, M, rng), [0, 1]) for _ in range(200)])
        frac[M] = np.mean((vals > lim.c_lower) & (vals < lim.C_upper))
    assert frac[800] >= 0.95

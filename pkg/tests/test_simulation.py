"""Simulation-layer tests: error models, recursion replay, perturbations."""

import numpy as np
import pytest
from scipy import stats

from netar.errors import DataError
from netar.model import NarSpec, banded_weights, build_design, flatten
from netar.simulation import (
    FactorGaussian,
    GaussianIid,
    MisspecPerturbation,
    SarGaussian,
    SimConfig,
    StudentT,
    gen_errors,
    perturb_weights,
    replicate_rng,
    rng_from_seed,
    simulate,
)


def small_spec(n=6, q1=2, q2=1, p=2, seed=0):
    rng = np.random.default_rng(seed)
    w = banded_weights(n, 2)
    return NarSpec(
        a=rng.uniform(-0.25, 0.25, (q1, n)),
        b=rng.uniform(-0.2, 0.2, (q2, n)),
        gamma=rng.normal(size=(n, p)) * 0.5,
        w=w,
    )


def test_replay_identity_machine_precision():
    spec = small_spec()
    model = SarGaussian(0.4, banded_weights(6, 1))
    res = simulate(spec, model, SimConfig(t_len=80, burn_in=50, seed=9))
    beta = flatten(spec).values
    q = spec.q
    for t in range(q, 80):
        hist = res.x[t - q : t][::-1]  # most recent lag first
        z = build_design(hist, res.y[t - 1], spec.w).z
        np.testing.assert_allclose(z @ beta + res.errors[t], res.x[t], atol=1e-12)


def test_seed_reproducibility_and_divergence():
    spec = small_spec()
    model = GaussianIid(6)
    r1 = simulate(spec, model, SimConfig(t_len=40, seed=123))
    r2 = simulate(spec, model, SimConfig(t_len=40, seed=123))
    r3 = simulate(spec, model, SimConfig(t_len=40, seed=124))
    assert np.array_equal(r1.x, r2.x)
    assert np.array_equal(r1.y, r2.y)
    assert np.array_equal(r1.errors, r2.errors)
    assert not np.array_equal(r1.x, r3.x)


def test_replicate_streams_match_spawn():
    children = np.random.SeedSequence(5).spawn(4)
    direct = np.random.Generator(np.random.Philox(children[3]))
    via_key = replicate_rng(5, 3)
    assert np.array_equal(direct.integers(0, 2**63, 8), via_key.integers(0, 2**63, 8))


def test_unstable_spec_rejected():
    w = banded_weights(4, 1)
    spec = NarSpec(a=[[0.9] * 4], b=[[0.5] * 4], gamma=np.zeros((4, 0)), w=w)
    with pytest.raises(DataError):
        simulate(spec, GaussianIid(4), SimConfig(t_len=10))
    res = simulate(
        spec, GaussianIid(4), SimConfig(t_len=10, burn_in=0, allow_unstable=True)
    )
    assert res.x.shape == (10, 4)


def test_sar_covariance_closed_form():
    phi = banded_weights(5, 1)
    m = SarGaussian(0.5, phi, sigma_u2=2.0)
    s = np.eye(5) - 0.5 * phi
    sinv = np.linalg.inv(s)
    np.testing.assert_allclose(m.covariance(), 2.0 * sinv @ sinv.T, atol=1e-12)
    eps = gen_errors(m, 200_000, seed=1)
    emp = eps.T @ eps / eps.shape[0]
    rel = np.linalg.norm(emp - m.covariance()) / np.linalg.norm(m.covariance())
    assert rel < 0.01


def test_factor_covariance_closed_form():
    rng = np.random.default_rng(2)
    lam = rng.uniform(0, 1, (6, 2))
    m = FactorGaussian(lam, sigma2=0.5)
    np.testing.assert_allclose(m.covariance(), lam @ lam.T + 0.5 * np.eye(6))
    eps = gen_errors(m, 150_000, seed=2)
    emp = eps.T @ eps / eps.shape[0]
    rel = np.linalg.norm(emp - m.covariance()) / np.linalg.norm(m.covariance())
    assert rel < 0.015


def test_sample_covariance_error_rate():
    # relative error of the sample covariance should roughly halve
    # when the sample length quadruples
    phi = banded_weights(8, 2)
    m = SarGaussian(0.5, phi)
    cov = m.covariance()

    def rel_err(t_len, seed):
        eps = gen_errors(m, t_len, seed=seed)
        emp = eps.T @ eps / t_len
        return np.linalg.norm(emp - cov) / np.linalg.norm(cov)

    e1 = rel_err(25_000, seed=42)
    e2 = rel_err(100_000, seed=43)
    assert e2 < 0.7 * e1


def test_student_t_scale_convention():
    phi = banded_weights(4, 1)
    s = np.eye(4) - 0.5 * phi
    sinv = np.linalg.inv(s)
    scale = sinv @ sinv.T
    m = StudentT(4.0, scale)
    np.testing.assert_allclose(m.covariance(), 2.0 * scale)
    with pytest.raises(DataError):
        StudentT(2.0, scale)


def test_student_t_high_dof_is_gaussian():
    m = StudentT(200.0, np.eye(3) * 1.7)
    eps = gen_errors(m, 20_000, seed=5)
    sd = np.sqrt(1.7 * 200.0 / 198.0)
    # marginal of one coordinate against the matched normal
    res = stats.kstest(eps[:, 1], "norm", args=(0.0, sd))
    assert res.pvalue > 0.05


def test_student_t_heavy_tail_kurtosis():
    m = StudentT(6.0, np.eye(2))
    eps = gen_errors(m, 300_000, seed=6)
    # t(6) excess kurtosis is 3
    k = stats.kurtosis(eps[:, 0])
    assert 2.0 < k < 4.5


def test_stationary_covariance_order_one():
    n = 3
    w = banded_weights(n, 1)
    spec = NarSpec(
        a=[[0.3, -0.2, 0.25]], b=[[0.2, 0.3, -0.1]], gamma=np.zeros((n, 0)), w=w
    )
    g = np.diag(spec.a[0]) + np.diag(spec.b[0]) @ w
    sig = np.eye(n)
    vec = np.linalg.solve(np.eye(n * n) - np.kron(g, g), sig.ravel())
    target = vec.reshape(n, n)
    res = simulate(spec, GaussianIid(n), SimConfig(t_len=400_000, burn_in=300, seed=8))
    emp = res.x.T @ res.x / res.x.shape[0]
    rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
    assert rel < 0.02


def test_covariates_enter_with_one_period_delay():
    # gamma large on one covariate; X_t correlates with y[t-1], not y[t]
    n = 4
    spec = NarSpec(
        a=[[0.0] * n],
        b=[[0.0] * n],
        gamma=np.full((n, 1), 2.0),
        w=banded_weights(n, 1),
    )
    res = simulate(spec, GaussianIid(n, sigma2=0.01), SimConfig(t_len=5000, seed=11))
    lagged = np.mean(res.x[1:, 0] * res.y[:-1, 0, 0])
    same = np.mean(res.x[1:, 0] * res.y[1:, 0, 0])
    assert lagged > 1.5
    assert abs(same) < 0.2


def test_gen_errors_validation():
    with pytest.raises(DataError):
        gen_errors(GaussianIid(3), 0)
    with pytest.raises(DataError):
        SarGaussian(1.0, banded_weights(3, 1))
    with pytest.raises(DataError):
        GaussianIid(3, sigma2=-1.0)


def test_simulate_checks_model_size():
    spec = small_spec(n=6)
    with pytest.raises(DataError):
        simulate(spec, GaussianIid(5), SimConfig(t_len=10))


def test_perturb_weights_exact_norm():
    w = banded_weights(10, 2)
    wm, pert = perturb_weights(w, 0.05, preserve_row_sums=True, seed=3)
    assert isinstance(pert, MisspecPerturbation)
    np.testing.assert_allclose(np.abs(pert.pi).sum(axis=1).max(), 0.05, rtol=1e-12)
    np.testing.assert_allclose(np.diag(pert.pi), 0.0)
    np.testing.assert_allclose(wm.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(wm - w, pert.pi)

    wm2, pert2 = perturb_weights(w, 0.05, preserve_row_sums=False, seed=3)
    np.testing.assert_allclose(np.abs(pert2.pi).sum(axis=1).max(), 0.05, rtol=1e-12)
    assert not np.allclose(wm2.sum(axis=1), 1.0, atol=1e-6)


def test_perturb_weights_zero_target():
    w = banded_weights(6, 1)
    wm, pert = perturb_weights(w, 0.0, seed=4)
    np.testing.assert_array_equal(wm, w)
    assert pert.inf_norm == 0.0


def test_perturb_weights_reproducible():
    w = banded_weights(8, 3)
    w1, _ = perturb_weights(w, 0.1, seed=9)
    w2, _ = perturb_weights(w, 0.1, seed=9)
    w3, _ = perturb_weights(w, 0.1, seed=10)
    assert np.array_equal(w1, w2)
    assert not np.array_equal(w1, w3)

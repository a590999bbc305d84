import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amdgp import kernels
from amdgp.ep import VirtualDerivativeSet
from amdgp.errors import InvalidArgumentError, NumericalError
from amdgp.gp import (GPModel, OptimConfig, _joint_block_grads, _joint_grads_dot,
                      build_joint_covariance, fit_hyperparameters, fit_hyperparameters_all,
                      log_marginal_likelihood, log_marginal_likelihood_and_grad, predict,
                      stable_cholesky)
from amdgp.kernels import KernelFamily, KernelSpec

SE1 = KernelSpec(KernelFamily.SE, 1.0, [1.0])


def se_model(sf2=1.0, ell=(1.0,), noise=0.1):
    return GPModel(KernelSpec(KernelFamily.SE, sf2, list(ell)), noise)


# -- types and numerics ------------------------------------------------------


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        GPModel(SE1, 0.0)
    with pytest.raises(InvalidArgumentError):
        GPModel(SE1, 0.1, jitter=-1.0)
    m = GPModel.from_log_params("se+linear", np.zeros(6), 2)
    np.testing.assert_allclose(m.log_params(), np.zeros(6))
    assert m.param_names()[-1] == "log_noise_variance"


def test_stable_cholesky_escalates_and_fails():
    A = np.ones((3, 3))  # rank one
    L, used = stable_cholesky(A)
    assert used == pytest.approx(1e-8)
    np.testing.assert_allclose(L @ L.T, A + used * np.eye(3), atol=1e-12)
    with pytest.raises(NumericalError) as err:
        stable_cholesky(-np.eye(2))
    assert err.value.jitter == pytest.approx(1e-2)


# -- joint covariance --------------------------------------------------------


def test_joint_covariance_without_derivatives_is_gram():
    X = np.random.default_rng(0).normal(size=(4, 2))
    spec = KernelSpec(KernelFamily.SE, 1.2, [0.8, 1.5])
    joint = build_joint_covariance(spec, X, None)
    np.testing.assert_array_equal(joint.assembled, kernels.gram(spec, X, X))
    empty = VirtualDerivativeSet(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0))
    np.testing.assert_array_equal(build_joint_covariance(spec, X, empty).assembled, joint.K_ff)


def test_joint_covariance_single_point_is_identity():
    virt = VirtualDerivativeSet([[0.0]], [0], [1])
    joint = build_joint_covariance(SE1, [[0.0]], virt)
    np.testing.assert_allclose(joint.assembled, np.eye(2), atol=1e-15)


def test_joint_covariance_blocks_and_symmetry():
    rng = np.random.default_rng(1)
    spec = KernelSpec(KernelFamily.SUM, 1.1, [0.9, 1.4], [0.3, 0.6])
    X = rng.normal(size=(5, 2))
    virt = VirtualDerivativeSet(rng.normal(size=(3, 2)), [0, 1, 1], [1, -1, 1])
    joint = build_joint_covariance(spec, X, virt)
    A = joint.assembled
    assert A.shape == (8, 8)
    np.testing.assert_allclose(A, A.T, atol=1e-14)
    # cross block: derivative with respect to the virtual point's coordinate
    i, j = 2, 1
    h = 1e-6
    e = np.zeros(2)
    e[virt.dims[j]] = h
    fd = (kernels.eval(spec, X[i], virt.locations[j] + e)
          - kernels.eval(spec, X[i], virt.locations[j] - e)) / (2 * h)
    assert A[i, 5 + j] == pytest.approx(fd, rel=1e-6)
    assert A[5, 7] == pytest.approx(kernels.eval_dx1_dx2(spec, virt.locations[0],
                                                          virt.locations[2], 0, 1))
    np.linalg.cholesky(A + joint.jitter * np.eye(8))


def test_joint_gradient_contraction_matches_tensor():
    rng = np.random.default_rng(2)
    spec = KernelSpec(KernelFamily.SUM, 0.8, [1.2, 0.7], [0.4, 1.1])
    X = rng.normal(size=(6, 2))
    virt = VirtualDerivativeSet(rng.normal(size=(4, 2)), [0, 1, 0, 1], 1)
    W = rng.normal(size=(10, 10))
    W = W + W.T
    dff, dfd, ddd = _joint_block_grads(spec, X, virt)
    ref = (np.einsum("pij,ij->p", dff, W[:6, :6]) + 2 * np.einsum("pij,ij->p", dfd, W[:6, 6:])
           + np.einsum("pij,ij->p", ddd, W[6:, 6:]))
    np.testing.assert_allclose(_joint_grads_dot(spec, X, virt, W), ref, atol=1e-11)


# -- marginal likelihood -----------------------------------------------------


def test_lml_scalar_example():
    m = GPModel(SE1, 1.0)
    assert log_marginal_likelihood(m, [[0.0]], [0.0]) == pytest.approx(-0.5 * np.log(4 * np.pi))
    assert log_marginal_likelihood(m, [[0.0]], [0.0]) == pytest.approx(-1.2655, abs=1e-4)


def test_lml_matches_explicit_two_by_two():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = se_model(rng.uniform(0.5, 2), [rng.uniform(0.5, 2)], rng.uniform(0.05, 1))
        X = rng.normal(size=(2, 1))
        y = rng.normal(size=2)
        C = kernels.gram(m.kernel, X, X) + m.noise_variance * np.eye(2)
        (a, b), (_, d) = C
        det = a * d - b * b
        inv = np.array([[d, -b], [-b, a]]) / det
        ref = -0.5 * y @ inv @ y - 0.5 * np.log(det) - np.log(2 * np.pi)
        assert abs(log_marginal_likelihood(m, X, y) - ref) < 1e-10


def test_lml_zero_targets():
    m = se_model(noise=0.3)
    X = np.linspace(-1, 1, 4)[:, None]
    C = kernels.gram(m.kernel, X, X) + 0.3 * np.eye(4)
    ref = -0.5 * np.linalg.slogdet(C)[1] - 2 * np.log(2 * np.pi)
    assert log_marginal_likelihood(m, X, np.zeros(4)) == pytest.approx(ref, rel=1e-12)


def test_lml_monte_carlo():
    rng = np.random.default_rng(4)
    for N in (1, 2, 3):
        m = se_model(1.0, [0.8], 0.5)
        X = rng.normal(size=(N, 1))
        y = rng.normal(size=N)
        K = kernels.gram(m.kernel, X, X)
        f = rng.multivariate_normal(np.zeros(N), K, size=200_000, method="eigh")
        r = y - f
        lik = np.exp(-0.5 * np.sum(r * r, 1) / 0.5) / (2 * np.pi * 0.5) ** (N / 2)
        est, se = lik.mean(), lik.std() / np.sqrt(lik.size)
        assert abs(np.exp(log_marginal_likelihood(m, X, y)) - est) < 3 * se


@pytest.mark.parametrize("family", ["se", "linear", "se+linear"])
def test_lml_gradient_finite_difference(family):
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(10):
        D = int(rng.integers(1, 3))
        n = len(OptimConfig().bounds(family, D))
        m = GPModel.from_log_params(family, rng.uniform(-1, 0.5, n), D)
        X = rng.normal(size=(8, D))
        y = rng.normal(size=8)
        _, g = log_marginal_likelihood_and_grad(m, X, y)
        theta = m.log_params()
        for p in range(n):
            tp, tm = theta.copy(), theta.copy()
            tp[p] += h
            tm[p] -= h
            fd = (log_marginal_likelihood(GPModel.from_log_params(family, tp, D), X, y)
                  - log_marginal_likelihood(GPModel.from_log_params(family, tm, D), X, y)) / (2 * h)
            assert abs(g[p] - fd) <= 1e-4 * max(abs(fd), 1e-2)


def test_lml_input_errors():
    m = se_model()
    with pytest.raises(InvalidArgumentError):
        log_marginal_likelihood(m, np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        log_marginal_likelihood(m, np.zeros((0, 1)), np.zeros(0))


# -- hyperparameter fitting --------------------------------------------------


def draw_se(seed, N=60, ell=1.0, sf2=1.0, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, size=(N, 1))
    K = kernels.gram(KernelSpec(KernelFamily.SE, sf2, [ell]), X, X)
    f = np.linalg.cholesky(K + 1e-10 * np.eye(N)) @ rng.normal(size=N)
    return X, f + np.sqrt(noise) * rng.normal(size=N)


def test_recovers_known_hyperparameters():
    truth = np.log([1.0, 1.0, 0.1])
    est = np.array([fit_hyperparameters(*draw_se(s), "se", OptimConfig(restarts=3, seed=s))
                    .log_params() for s in range(20)])
    assert np.all(np.abs(np.median(est, 0) - truth) < 0.5)


def test_constant_targets_do_not_crash():
    X = np.linspace(-2, 2, 20)[:, None]
    cfg = OptimConfig(restarts=2)
    m = fit_hyperparameters(X, np.full(20, 0.3), "se", cfg)
    assert np.all(np.isfinite(m.log_params()))
    assert np.log(m.kernel.signal_variance) < 0


def test_fit_is_deterministic_and_ordered():
    X, y = draw_se(7, N=30)
    cfg = OptimConfig(restarts=4, seed=3)
    a = fit_hyperparameters(X, y, "se+linear", cfg)
    b = fit_hyperparameters(X, y, "se+linear", cfg)
    np.testing.assert_array_equal(a.log_params(), b.log_params())
    optima = fit_hyperparameters_all(X, y, "se+linear", cfg)
    energies = [e for e, _ in optima]
    assert energies == sorted(energies)
    assert energies[0] == pytest.approx(-log_marginal_likelihood(a, X, y))
    np.testing.assert_array_equal(optima[0][1].log_params(), a.log_params())


def test_fit_needs_two_points():
    with pytest.raises(InvalidArgumentError):
        fit_hyperparameters([[0.0]], [1.0])


# -- prediction --------------------------------------------------------------


def test_predict_scalar_example():
    m = GPModel(KernelSpec(KernelFamily.SE, 1.0, [1.0]), 1.0)
    pred = predict(m, [[0.0]], [2.0], [[0.0]])
    assert pred.mean[0] == pytest.approx(1.0)
    assert pred.variance[0] == pytest.approx(0.5)


def test_predict_interpolates_in_small_noise_limit():
    X = np.array([[-1.0], [0.0], [1.5]])
    y = np.array([0.3, -0.7, 1.1])
    m = GPModel(SE1, 1e-12)
    pred = predict(m, X, y, X[1:2])
    assert abs(pred.mean[0] - y[1]) < 1e-4


def test_predict_empty_and_paths_agree():
    rng = np.random.default_rng(8)
    m = GPModel(KernelSpec(KernelFamily.SUM, 1.0, [0.7, 1.2], [0.2, 0.5]), 0.1)
    X, Xs = rng.normal(size=(10, 2)), rng.normal(size=(6, 2))
    y = rng.normal(size=10)
    assert len(predict(m, X, y, np.zeros((0, 2)))) == 0
    full = predict(m, X, y, Xs)
    diag = predict(m, X, y, Xs, full_cov=False)
    np.testing.assert_allclose(diag.mean, full.mean, atol=1e-12)
    np.testing.assert_allclose(diag.variance, full.variance, atol=1e-10)
    np.testing.assert_array_equal(full.covariance, full.covariance.T)
    assert np.all(full.variance >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_predictive_covariance_valid(N, L, seed):
    rng = np.random.default_rng(seed)
    m = se_model(rng.uniform(0.2, 3), [rng.uniform(0.2, 3)], rng.uniform(1e-4, 1))
    pred = predict(m, rng.normal(size=(N, 1)), rng.normal(size=N), rng.normal(size=(L, 1)))
    np.testing.assert_allclose(pred.covariance, pred.covariance.T, atol=1e-14)
    assert np.all(pred.variance >= -1e-12)

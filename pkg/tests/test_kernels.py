import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from amdgp import kernels
from amdgp.errors import InvalidArgumentError
from amdgp.kernels import KernelFamily, KernelSpec

FAMILIES = ["se", "linear", "se+linear"]


def random_spec(rng, family, dim):
    fam = KernelFamily.parse(family)
    n = (1 + dim) * fam.has_se + dim * fam.has_linear
    return KernelSpec.from_log_params(family, rng.uniform(-1.0, 1.0, n), dim)


def rel_err(a, b, floor=1e-3):
    return abs(a - b) / max(abs(b), floor)


# -- examples ----------------------------------------------------------------


def test_se_at_coincident_points_is_signal_variance():
    spec = KernelSpec(KernelFamily.SE, 1.0, [1.0])
    assert kernels.eval(spec, [0.0], [0.0]) == 1.0


def test_se_unit_distance():
    spec = KernelSpec(KernelFamily.SE, 1.0, [1.0])
    assert kernels.eval(spec, [0.0], [1.0]) == pytest.approx(np.exp(-0.5), rel=1e-14)


def test_sum_kernel_at_origin():
    spec = KernelSpec(KernelFamily.SUM, 0.7, [1.3], [1.0])
    assert kernels.eval(spec, [0.0], [0.0]) == pytest.approx(0.7)


def test_se_derivative_vanishes_at_coincidence():
    spec = KernelSpec(KernelFamily.SE, 2.3, [0.4, 1.7])
    x = np.array([0.3, -1.2])
    assert kernels.eval_dx1(spec, x, x, 0) == 0.0
    assert kernels.eval_dx1(spec, x, x, 1) == 0.0


def test_se_derivative_matches_central_difference():
    spec = KernelSpec(KernelFamily.SE, 1.0, [1.0])
    h = 1e-5
    fd = (kernels.eval(spec, [h], [1.0]) - kernels.eval(spec, [-h], [1.0])) / (2 * h)
    assert rel_err(kernels.eval_dx1(spec, [0.0], [1.0], 0), fd) < 1e-6


def test_linear_derivative_is_independent_of_first_argument():
    spec = KernelSpec(KernelFamily.LINEAR, linear_variances=[0.6, 2.0])
    x2 = np.array([1.5, -0.5])
    for x1 in ([0.0, 0.0], [3.0, -7.0]):
        assert kernels.eval_dx1(spec, x1, x2, 0) == pytest.approx(0.6 * 1.5)
        assert kernels.eval_dx1(spec, x1, x2, 1) == pytest.approx(2.0 * -0.5)


def test_second_derivative_examples():
    se = KernelSpec(KernelFamily.SE, 1.0, [1.0, 1.0])
    x = np.array([0.2, 0.9])
    assert kernels.eval_dx1_dx2(se, x, x, 0, 0) == pytest.approx(1.0)
    assert kernels.eval_dx1_dx2(se, x, x, 0, 1) == 0.0
    lin = KernelSpec(KernelFamily.LINEAR, linear_variances=[0.3, 0.8])
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, b = rng.normal(size=(2, 2))
        assert kernels.eval_dx1_dx2(lin, a, b, 0, 0) == pytest.approx(0.3)
        assert kernels.eval_dx1_dx2(lin, a, b, 0, 1) == 0.0


def test_dimension_and_index_errors():
    spec = KernelSpec(KernelFamily.SE, 1.0, [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        kernels.eval(spec, [0.0], [0.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        kernels.eval_dx1(spec, [0.0, 0.0], [0.0, 1.0], 2)
    with pytest.raises(InvalidArgumentError):
        kernels.eval_dx1_dx2(spec, [0.0, 0.0], [0.0, 1.0], 0, -1)


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        KernelSpec(KernelFamily.SE, -1.0, [1.0])
    with pytest.raises(InvalidArgumentError):
        KernelSpec(KernelFamily.SE, 1.0, [0.0])
    with pytest.raises(InvalidArgumentError):
        KernelSpec(KernelFamily.SUM, 1.0, [1.0, 1.0], [1.0])
    # zero linear variance is allowed
    KernelSpec(KernelFamily.LINEAR, linear_variances=[0.0])


def test_log_params_roundtrip():
    rng = np.random.default_rng(4)
    for family in FAMILIES:
        spec = random_spec(rng, family, 3)
        again = KernelSpec.from_log_params(family, spec.log_params(), 3)
        np.testing.assert_allclose(again.log_params(), spec.log_params(), rtol=1e-14)
        assert len(spec.param_names()) == spec.n_params


# -- finite-difference oracles, >= 100 draws per family ----------------------


@pytest.mark.parametrize("family", FAMILIES)
def test_first_derivative_finite_difference(family):
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(120):
        D = int(rng.integers(1, 4))
        spec = random_spec(rng, family, D)
        x1, x2 = rng.normal(size=(2, D))
        g = int(rng.integers(D))
        e = np.zeros(D)
        e[g] = h
        fd = (kernels.eval(spec, x1 + e, x2) - kernels.eval(spec, x1 - e, x2)) / (2 * h)
        assert rel_err(kernels.eval_dx1(spec, x1, x2, g), fd) < 1e-5


@pytest.mark.parametrize("family", FAMILIES)
def test_second_derivative_nested_finite_difference(family):
    rng = np.random.default_rng(12)
    h = 1e-5
    for _ in range(120):
        D = int(rng.integers(1, 4))
        spec = random_spec(rng, family, D)
        x1, x2 = rng.normal(size=(2, D))
        g, hh = (int(v) for v in rng.integers(D, size=2))
        e = np.zeros(D)
        e[hh] = h
        fd = (kernels.eval_dx1(spec, x1, x2 + e, g) - kernels.eval_dx1(spec, x1, x2 - e, g)) / (2 * h)
        assert rel_err(kernels.eval_dx1_dx2(spec, x1, x2, g, hh), fd) < 1e-4


@pytest.mark.parametrize("family", FAMILIES)
def test_hyperparameter_gradients_finite_difference(family):
    rng = np.random.default_rng(13)
    h = 1e-6
    for _ in range(100):
        D = int(rng.integers(1, 3))
        spec = random_spec(rng, family, D)
        A = rng.normal(size=(3, D))
        B = rng.normal(size=(2, D))
        ga = rng.integers(D, size=3)
        gb = rng.integers(D, size=2)
        theta = spec.log_params()
        blocks = [
            (kernels.gram_grads(spec, A, B), lambda s: kernels.gram(s, A, B)),
            (kernels.gram_dx1_grads(spec, A, ga, B), lambda s: kernels.gram_dx1(s, A, ga, B)),
            (kernels.gram_dx1_dx2_grads(spec, A, ga, B, gb),
             lambda s: kernels.gram_dx1_dx2(s, A, ga, B, gb)),
        ]
        for analytic, fn in blocks:
            for p in range(len(theta)):
                tp, tm = theta.copy(), theta.copy()
                tp[p] += h
                tm[p] -= h
                fd = (fn(KernelSpec.from_log_params(family, tp, D))
                      - fn(KernelSpec.from_log_params(family, tm, D))) / (2 * h)
                np.testing.assert_allclose(analytic[p], fd, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_contractions_match_tensors(family):
    rng = np.random.default_rng(14)
    for _ in range(20):
        D = int(rng.integers(1, 4))
        spec = random_spec(rng, family, D)
        A = rng.normal(size=(6, D))
        B = rng.normal(size=(4, D))
        ga = rng.integers(D, size=6)
        gb = rng.integers(D, size=4)
        W = rng.normal(size=(6, 4))
        np.testing.assert_allclose(
            kernels.gram_grads_dot(spec, A, B, W),
            np.einsum("pij,ij->p", kernels.gram_grads(spec, A, B), W), atol=1e-12)
        np.testing.assert_allclose(
            kernels.gram_dx1_grads_dot(spec, A, ga, B, W),
            np.einsum("pij,ij->p", kernels.gram_dx1_grads(spec, A, ga, B), W), atol=1e-12)
        np.testing.assert_allclose(
            kernels.gram_dx1_dx2_grads_dot(spec, A, ga, B, gb, W),
            np.einsum("pij,ij->p", kernels.gram_dx1_dx2_grads(spec, A, ga, B, gb), W),
            atol=1e-12)


# -- symbolic oracle ---------------------------------------------------------


def test_symbolic_oracle_two_dimensional_sum_kernel():
    a0, a1, b0, b1 = sp.symbols("a0 a1 b0 b1", real=True)
    s2, l0, l1, c0, c1 = sp.Rational(13, 10), sp.Rational(7, 10), sp.Rational(9, 5), \
        sp.Rational(1, 4), sp.Rational(3, 2)
    k = (s2 * sp.exp(-((a0 - b0) ** 2 / l0 ** 2 + (a1 - b1) ** 2 / l1 ** 2) / 2)
         + c0 * a0 * b0 + c1 * a1 * b1)
    spec = KernelSpec(KernelFamily.SUM, 1.3, [0.7, 1.8], [0.25, 1.5])
    a_sym, b_sym = (a0, a1), (b0, b1)
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b = rng.normal(size=(2, 2))
        subs = dict(zip(a_sym + b_sym, map(float, np.r_[a, b])))
        assert kernels.eval(spec, a, b) == pytest.approx(float(k.subs(subs)), rel=1e-12)
        for g in range(2):
            dk = sp.diff(k, a_sym[g])
            assert kernels.eval_dx1(spec, a, b, g) == pytest.approx(
                float(dk.subs(subs)), rel=1e-10, abs=1e-14)
            for h in range(2):
                d2k = sp.diff(dk, b_sym[h])
                assert kernels.eval_dx1_dx2(spec, a, b, g, h) == pytest.approx(
                    float(d2k.subs(subs)), rel=1e-10, abs=1e-14)


# -- properties ---------------------------------------------------------------

finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(FAMILIES), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_symmetry(family, D, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, family, D)
    x1, x2 = rng.normal(size=(2, D))
    assert kernels.eval(spec, x1, x2) == kernels.eval(spec, x2, x1)
    g, h = (int(v) for v in rng.integers(D, size=2))
    assert kernels.eval_dx1_dx2(spec, x1, x2, g, h) == pytest.approx(
        kernels.eval_dx1_dx2(spec, x2, x1, h, g), rel=1e-12, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["se", "se+linear"]), st.integers(1, 3), st.integers(2, 12),
       st.integers(0, 2**31 - 1))
def test_gram_positive_definite_with_small_jitter(family, D, n, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, family, D)
    # distinct points, separated relative to the lengthscales
    X = rng.uniform(-3, 3, size=(n, D))
    X += np.arange(n)[:, None] * spec.lengthscales
    K = kernels.gram(spec, X, X) + 1e-8 * spec.signal_variance * np.eye(n)
    np.linalg.cholesky(K)

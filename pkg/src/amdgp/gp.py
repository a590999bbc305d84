"""Plain Gaussian-process regression with optional derivative blocks.

The log marginal likelihood gradient with respect to the log-hyperparameters
is computed analytically; :func:`fit_hyperparameters` uses it with L-BFGS-B.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from . import kernels
from .errors import InvalidArgumentError, NumericalError, OptimizationError
from .kernels import KernelFamily, KernelSpec

__all__ = [
    "GPModel",
    "JointCovariance",
    "PredictiveDistribution",
    "OptimConfig",
    "stable_cholesky",
    "build_joint_covariance",
    "log_marginal_likelihood",
    "log_marginal_likelihood_and_grad",
    "fit_hyperparameters",
    "fit_hyperparameters_all",
    "predict",
]

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

# jitter escalation, relative to the mean diagonal
JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True, eq=False)
class GPModel:
    kernel: KernelSpec
    noise_variance: float
    jitter: float = 0.0

    def __post_init__(self):
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise InvalidArgumentError("noise_variance must be positive")
        if not self.jitter >= 0:
            raise InvalidArgumentError("jitter must be non-negative")

    def log_params(self) -> np.ndarray:
        return np.append(self.kernel.log_params(), np.log(self.noise_variance))

    @classmethod
    def from_log_params(cls, family, theta, dim: int, jitter: float = 0.0) -> "GPModel":
        theta = np.asarray(theta, dtype=float)
        kernel = KernelSpec.from_log_params(family, theta[:-1], dim)
        return cls(kernel, float(np.exp(theta[-1])), jitter)

    def param_names(self) -> list[str]:
        return self.kernel.param_names() + ["log_noise_variance"]

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(),
                "noise_variance": self.noise_variance,
                "jitter": self.jitter}


@dataclass(frozen=True, eq=False)
class JointCovariance:
    """Prior covariance of ``(f(X), f'(X_m))``.

    ``jitter`` is the diagonal term that was added to every block diagonal
    so that ``assembled`` factorizes.
    """

    K_ff: np.ndarray
    K_fd: np.ndarray
    K_dd: np.ndarray
    jitter: float = 0.0
    assembled: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "assembled",
                           np.block([[self.K_ff, self.K_fd], [self.K_fd.T, self.K_dd]]))


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def __len__(self):
        return self.mean.shape[0]


def stable_cholesky(A, jitter: float = 0.0, what: str = "matrix"):
    """Lower Cholesky factor of ``A + j I`` with escalating jitter.

    The first attempt uses ``jitter``.  On failure ``j`` starts at
    ``1e-8 * mean(diag(A))`` and grows tenfold up to ``1e-2 * mean(diag(A))``.

    Returns
    -------
    L : ndarray
    used_jitter : float

    Raises
    ------
    NumericalError
        If every attempt fails.  ``err.jitter`` holds the last jitter tried.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} contains non-finite entries", jitter)
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        scale = 1.0
    attempts = [jitter]
    j = JITTER_START * scale
    while j <= JITTER_MAX * scale * (1 + 1e-12):
        if j > jitter:
            attempts.append(j)
        j *= 10.0
    eye = np.eye(n)
    for j in attempts:
        try:
            L = linalg.cholesky(A + j * eye if j else A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if j > jitter:
            log.debug("%s needed jitter %.3g", what, j)
        return L, j
    raise NumericalError(
        f"{what} is not positive definite even with jitter {attempts[-1]:.3g}", attempts[-1])


def _check_inputs(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidArgumentError(f"X must be an N x D matrix, got shape {X.shape}")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise InvalidArgumentError(
            f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    return X, y


def _joint_blocks(kernel: KernelSpec, X, virt):
    K_ff = kernels.gram(kernel, X, X)
    if virt is None or virt.M == 0:
        return K_ff, np.zeros((X.shape[0], 0)), np.zeros((0, 0))
    Xm, dm = virt.locations, virt.dims
    K_fd = kernels.gram_dx1(kernel, Xm, dm, X).T
    K_dd = kernels.gram_dx1_dx2(kernel, Xm, dm, Xm, dm)
    K_dd = 0.5 * (K_dd + K_dd.T)
    return K_ff, K_fd, K_dd


def _joint_grads_dot(kernel: KernelSpec, X, virt, W) -> np.ndarray:
    """``sum(W * dK_joint / dtheta_p)`` for symmetric joint weights ``W``."""
    N = X.shape[0]
    out = kernels.gram_grads_dot(kernel, X, X, W[:N, :N])
    if virt is None or virt.M == 0:
        return out
    Xm, dm = virt.locations, virt.dims
    out += 2.0 * kernels.gram_dx1_grads_dot(kernel, Xm, dm, X, W[N:, :N])
    out += kernels.gram_dx1_dx2_grads_dot(kernel, Xm, dm, Xm, dm, W[N:, N:])
    return out


def _joint_block_grads(kernel: KernelSpec, X, virt):
    dff = kernels.gram_grads(kernel, X, X)
    if virt is None or virt.M == 0:
        return dff, None, None
    Xm, dm = virt.locations, virt.dims
    dfd = np.swapaxes(kernels.gram_dx1_grads(kernel, Xm, dm, X), 1, 2)
    ddd = kernels.gram_dx1_dx2_grads(kernel, Xm, dm, Xm, dm)
    return dff, dfd, ddd


def build_joint_covariance(kernel: KernelSpec, X, virt=None, jitter: float = 0.0) -> JointCovariance:
    """Assemble the joint prior covariance of latent values and derivatives.

    Parameters
    ----------
    kernel : KernelSpec
    X : ndarray, shape (N, D)
    virt : VirtualDerivativeSet or None
        Locations and dimensions of the derivative latents.  ``None`` or an
        empty set gives ``assembled == K_ff``.
    jitter : float
        Initial diagonal stabilizer; escalated if the assembled matrix does
        not factorize.
    """
    X = _check_inputs(X)
    if X.shape[1] != kernel.dim:
        raise InvalidArgumentError(f"X has {X.shape[1]} columns, kernel expects {kernel.dim}")
    if virt is not None and virt.M and virt.locations.shape[1] != kernel.dim:
        raise InvalidArgumentError("virtual locations have the wrong dimension")
    K_ff, K_fd, K_dd = _joint_blocks(kernel, X, virt)
    joint = JointCovariance(K_ff, K_fd, K_dd)
    _, used = stable_cholesky(joint.assembled, jitter, "joint covariance")
    if used:
        joint = JointCovariance(K_ff + used * np.eye(K_ff.shape[0]), K_fd,
                                K_dd + used * np.eye(K_dd.shape[0]), used)
    return joint


def log_marginal_likelihood(model: GPModel, X, y) -> float:
    """``log N(y | 0, K + sigma^2 I)``; the energy is its negation."""
    return log_marginal_likelihood_and_grad(model, X, y, grad=False)


def log_marginal_likelihood_and_grad(model: GPModel, X, y, grad: bool = True):
    """Log marginal likelihood and, optionally, its gradient.

    The gradient is taken with respect to ``model.log_params()``
    (kernel log-parameters followed by the log noise variance).
    """
    X, y = _check_inputs(X, y)
    N = X.shape[0]
    if N < 1:
        raise InvalidArgumentError("need at least one observation")
    K = kernels.gram(model.kernel, X, X)
    Ky = K + model.noise_variance * np.eye(N)
    L, _ = stable_cholesky(Ky, model.jitter, "K + noise")
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * N * LOG_2PI
    if not grad:
        return float(lml)
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(N), check_finite=False)
    g = 0.5 * kernels.gram_grads_dot(model.kernel, X, X, W)
    g_noise = 0.5 * model.noise_variance * np.trace(W)
    return float(lml), np.append(g, g_noise)


@dataclass(frozen=True)
class OptimConfig:
    """Multi-start L-BFGS-B settings for hyperparameter point estimates.

    Bounds apply to log-parameters on normalized data.
    """

    restarts: int = 5
    seed: int = 0
    maxiter: int = 200
    log_signal_bounds: tuple = (-3.0, 3.0)
    log_lengthscale_bounds: tuple = (-3.0, 3.0)
    log_linear_bounds: tuple = (-8.0, 2.0)
    log_noise_bounds: tuple = (-6.0, 2.0)

    def bounds(self, family, dim: int) -> list[tuple]:
        family = KernelFamily.parse(family)
        b = []
        if family.has_se:
            b.append(tuple(self.log_signal_bounds))
            b += [tuple(self.log_lengthscale_bounds)] * dim
        if family.has_linear:
            b += [tuple(self.log_linear_bounds)] * dim
        b.append(tuple(self.log_noise_bounds))
        return b

    def default_start(self, family, dim: int) -> np.ndarray:
        family = KernelFamily.parse(family)
        x = []
        if family.has_se:
            x += [0.0] + [0.0] * dim
        if family.has_linear:
            x += [np.log(0.1)] * dim
        x.append(np.log(0.1))
        lo, hi = np.array(self.bounds(family, dim)).T
        return np.clip(np.array(x), lo, hi)


_FAILED = 1e10


def _minimize_from(fun, x0, bounds, maxiter):
    return optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                             options={"maxiter": maxiter, "ftol": 1e-10, "gtol": 1e-6})


def fit_hyperparameters(X, y, kernel_family="se", config: OptimConfig | None = None,
                        jitter: float = 0.0) -> GPModel:
    """Point estimate of the hyperparameters by maximizing the marginal likelihood.

    Restart 0 starts from ``config.default_start``; the others start from
    points drawn uniformly inside the bounds with ``config.seed``.  The best
    local optimum is returned, ties going to the lowest restart index.

    Raises
    ------
    OptimizationError
        If no restart produces a finite objective.
    """
    return fit_hyperparameters_all(X, y, kernel_family, config, jitter)[0][1]


def fit_hyperparameters_all(X, y, kernel_family="se", config: OptimConfig | None = None,
                            jitter: float = 0.0) -> list[tuple[float, GPModel]]:
    """Every distinct restart optimum as ``(energy, model)``, best first.

    Same restarts as :func:`fit_hyperparameters`; optima whose
    log-parameters agree within 1e-4 are merged.
    """
    config = config or OptimConfig()
    X, y = _check_inputs(X, y)
    if X.shape[0] < 2:
        raise InvalidArgumentError("need at least two observations to fit hyperparameters")
    family = KernelFamily.parse(kernel_family)
    D = X.shape[1]
    bounds = config.bounds(family, D)
    lo, hi = np.array(bounds).T
    rng = np.random.default_rng(config.seed)
    starts = [config.default_start(family, D)]
    starts += [rng.uniform(lo, hi) for _ in range(max(config.restarts, 1) - 1)]

    def objective(theta):
        try:
            model = GPModel.from_log_params(family, theta, D, jitter)
            lml, g = log_marginal_likelihood_and_grad(model, X, y)
        except (NumericalError, InvalidArgumentError):
            return _FAILED, np.zeros_like(theta)
        if not np.isfinite(lml) or not np.all(np.isfinite(g)):
            return _FAILED, np.zeros_like(theta)
        return -lml, -g

    found = []
    for k, x0 in enumerate(starts):
        try:
            res = _minimize_from(objective, x0, bounds, config.maxiter)
        except (ValueError, FloatingPointError) as err:
            log.debug("restart %d failed: %s", k, err)
            continue
        if not np.isfinite(res.fun) or res.fun >= _FAILED:
            continue
        theta = np.clip(res.x, lo, hi)
        if any(np.max(np.abs(theta - t)) < 1e-4 for _, _, t in found):
            continue
        found.append((float(res.fun), k, theta))
    if not found:
        raise OptimizationError("all hyperparameter restarts failed")
    found.sort(key=lambda item: item[:2])
    return [(e, GPModel.from_log_params(family, t, D, jitter)) for e, _, t in found]


def predict(model: GPModel, X, y, Xstar, full_cov: bool = True) -> PredictiveDistribution:
    """Gaussian conditional of ``f(Xstar)`` given noisy observations ``y``.

    With ``full_cov=False`` only the diagonal is computed; the returned
    covariance is then a diagonal matrix.
    """
    X, y = _check_inputs(X, y)
    if X.shape[0] == 0:
        raise InvalidArgumentError("empty training set")
    Xstar = _check_inputs(Xstar) if np.size(Xstar) else np.zeros((0, X.shape[1]))
    if Xstar.shape[1] != X.shape[1]:
        raise InvalidArgumentError("Xstar has the wrong number of columns")
    L_count = Xstar.shape[0]
    if L_count == 0:
        return PredictiveDistribution(np.zeros(0), np.zeros((0, 0)))
    K = kernels.gram(model.kernel, X, X)
    Lc, _ = stable_cholesky(K + model.noise_variance * np.eye(X.shape[0]), model.jitter,
                            "K + noise")
    Ks = kernels.gram(model.kernel, Xstar, X)
    mean = Ks @ linalg.cho_solve((Lc, True), y, check_finite=False)
    V = linalg.solve_triangular(Lc, Ks.T, lower=True, check_finite=False)
    if full_cov:
        cov = kernels.gram(model.kernel, Xstar, Xstar) - V.T @ V
        cov = 0.5 * (cov + cov.T)
    else:
        kss = np.array([kernels.eval(model.kernel, x, x) for x in Xstar])
        cov = np.diag(kss - np.sum(V * V, axis=0))
    return PredictiveDistribution(mean, cov)

"""Expectation propagation for GP regression with virtual derivative signs.

Each virtual observation asserts ``sign_i * df/dx_{d_i}(x_i) > 0`` through
the probit likelihood ``Phi(sign_i * f'_i / nu)``.  The Gaussian observation
sites for ``y`` are exact, so they are absorbed analytically: the prior of
the derivative latents is first conditioned on ``y``, and EP iterates only
over the M probit sites of that conditional.  This has the same fixed point
and the same normalizer as running EP on the full ``(f, f')`` joint with the
``y`` sites frozen at ``(y, sigma^2)``.

Energies are ``-log Z_EP`` including every ``2 pi`` factor, i.e. the
quantity a brute-force integral of prior x Gaussian likelihood x probit
approximates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.linalg.blas import dger as _dger
from scipy.special import log_ndtr

from .errors import InvalidArgumentError, NumericalError
from .gp import (
    LOG_2PI,
    GPModel,
    OptimConfig,
    PredictiveDistribution,
    _check_inputs,
    _joint_grads_dot,
    _joint_blocks,
    stable_cholesky,
)
from . import kernels

__all__ = [
    "VirtualDerivativeSet",
    "EPConfig",
    "EPState",
    "probit_tilted_moments",
    "ep_fit",
    "ep_energy",
    "ep_energy_and_grad",
    "ep_predict",
    "fit_monotone",
]

log = logging.getLogger(__name__)

DEFAULT_NU = 1e-6


@dataclass(frozen=True, eq=False)
class VirtualDerivativeSet:
    """Locations, target dimensions and signs of virtual derivative observations."""

    locations: np.ndarray
    dims: np.ndarray
    signs: np.ndarray
    nu: float = DEFAULT_NU

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float, ndmin=2)
        if loc.size == 0:
            loc = loc.reshape(0, loc.shape[-1] if loc.ndim == 2 else 0)
        M = loc.shape[0]
        dims = np.asarray(self.dims)
        if dims.ndim == 0:
            dims = np.full(M, int(dims))
        signs = np.asarray(self.signs, dtype=float)
        if signs.ndim == 0:
            signs = np.full(M, float(signs))
        if dims.shape != (M,) or signs.shape != (M,):
            raise InvalidArgumentError("dims and signs must have one entry per location")
        if M and (np.any(dims != np.round(dims)) or np.any(dims < 0)
                  or np.any(dims >= loc.shape[1])):
            raise InvalidArgumentError(f"dims must lie in [0, {loc.shape[1]})")
        if not np.all(np.isin(signs, (-1.0, 1.0))):
            raise InvalidArgumentError("signs must be +1 or -1")
        if not (self.nu > 0 and np.isfinite(self.nu)):
            raise InvalidArgumentError("nu must be positive")
        for name, arr in (("locations", loc), ("dims", dims.astype(int)), ("signs", signs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def M(self) -> int:
        return self.locations.shape[0]

    def with_signs(self, signs) -> "VirtualDerivativeSet":
        return VirtualDerivativeSet(self.locations, self.dims, signs, self.nu)

    def permuted(self, order) -> "VirtualDerivativeSet":
        order = np.asarray(order)
        return VirtualDerivativeSet(self.locations[order], self.dims[order],
                                    self.signs[order], self.nu)

    def concat(self, other: "VirtualDerivativeSet") -> "VirtualDerivativeSet":
        return VirtualDerivativeSet(np.vstack([self.locations, other.locations]),
                                    np.concatenate([self.dims, other.dims]),
                                    np.concatenate([self.signs, other.signs]), self.nu)


@dataclass(frozen=True)
class EPConfig:
    """EP schedule and monotone-model fitting options.

    ``damping`` is the step size on the site natural parameters (1 means no
    damping).  ``tol`` bounds the largest absolute change of a site natural
    parameter over one sweep.  ``starts`` is how many candidate starting
    models (ranked by their EP energy) :func:`fit_monotone` optimizes from.
    """

    damping: float = 0.8
    tol: float = 1e-6
    max_sweeps: int = 200
    optimize_hyperparameters: bool = True
    maxiter: int = 100
    starts: int = 1

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise InvalidArgumentError("damping must lie in (0, 1]")
        if not self.tol > 0 or self.max_sweeps < 1:
            raise InvalidArgumentError("tol must be positive and max_sweeps >= 1")
        if self.starts < 1:
            raise InvalidArgumentError("starts must be at least 1")


@dataclass(frozen=True, eq=False)
class EPState:
    """Converged (or flagged) EP approximation.

    Site ``i`` is ``Z_i N(f'_i | mu_i, s2_i)`` with natural parameters
    ``site_tau = 1 / s2_i`` and ``site_nu = mu_i / s2_i``.  The posterior
    moments cover the joint vector ``(f(X), f'(X_m))``.
    """

    site_tau: np.ndarray
    site_nu: np.ndarray
    site_log_norms: np.ndarray
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    converged: bool
    n_sweeps: int
    n_skipped: int
    energy: float

    @property
    def site_variances(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / np.maximum(self.site_tau, 1e-300)

    @property
    def site_means(self) -> np.ndarray:
        return self.site_nu * self.site_variances

    @property
    def M(self) -> int:
        return self.site_tau.shape[0]

    def derivative_moments(self):
        """Posterior mean and variance of the derivative latents."""
        M = self.M
        mean = self.posterior_mean[-M:]
        var = np.diag(self.posterior_cov)[-M:]
        return mean.copy(), var.copy()

    def diagnostics(self) -> dict:
        return {"converged": bool(self.converged), "sweeps": int(self.n_sweeps),
                "skipped_updates": int(self.n_skipped)}


def probit_tilted_moments(mean, var, sign, nu):
    """Moments of ``N(f | mean, var) * Phi(sign * f / nu)``.

    Returns ``(log Z, mean_hat, var_hat)`` of the tilted distribution.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    s2 = nu * nu + var
    denom = np.sqrt(s2)
    z = sign * mean / denom
    log_z = log_ndtr(z)
    ratio = np.exp(-0.5 * z * z - 0.5 * LOG_2PI - log_z)
    mean_hat = mean + sign * var * ratio / denom
    var_hat = var - var * var * ratio * (z + ratio) / s2
    return log_z, mean_hat, var_hat


# -- reduced (derivative-only) problem ------------------------------------


@dataclass
class _Conditioned:
    log_py: float
    m: np.ndarray
    C: np.ndarray


def _condition_on_y(model: GPModel, X, y, virt) -> _Conditioned:
    """Prior of the derivative latents given ``y``; also returns ``log p(y)``."""
    K_ff, K_fd, K_dd = _joint_blocks(model.kernel, X, virt)
    N = X.shape[0]
    M = virt.M
    Ky = K_ff + (model.noise_variance + model.jitter) * np.eye(N)
    L, _ = stable_cholesky(Ky, 0.0, "K + noise")
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    log_py = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * N * LOG_2PI
    V = linalg.solve_triangular(L, K_fd, lower=True, check_finite=False)
    C = K_dd + model.jitter * np.eye(M) - V.T @ V
    C = 0.5 * (C + C.T)
    return _Conditioned(float(log_py), K_fd.T @ alpha, C)


@dataclass
class _Posterior:
    Sigma: np.ndarray
    mu: np.ndarray
    half_logdet_B: float
    u: np.ndarray


def _posterior(C, m, tau, nut) -> _Posterior:
    s = np.sqrt(tau)
    M = m.shape[0]
    B = np.eye(M) + s[:, None] * C * s[None, :]
    L, _ = stable_cholesky(B, 0.0, "EP site matrix")
    V = linalg.solve_triangular(L, s[:, None] * C, lower=True, check_finite=False)
    Sigma = C - V.T @ V
    Sigma = 0.5 * (Sigma + Sigma.T)
    u = nut - tau * m
    mu = m + Sigma @ u
    return _Posterior(Sigma, mu, float(np.sum(np.log(np.diag(L)))), u)


@dataclass
class _Result:
    cond: _Conditioned
    post: _Posterior
    tau: np.ndarray
    nut: np.ndarray
    log_z_red: float
    site_log_norms: np.ndarray
    converged: bool
    sweeps: int
    skipped: int

    @property
    def energy(self) -> float:
        return -(self.cond.log_py + self.log_z_red)


def _site_terms(post: _Posterior, tau, nut, signs, nu):
    """Cavity-based log normalizers of the probit sites at the current posterior."""
    d = np.diag(post.Sigma)
    tau_c = 1.0 / d - tau
    if np.any(tau_c <= 0):
        raise NumericalError("negative cavity variance in the final EP posterior")
    var_c = 1.0 / tau_c
    mean_c = (post.mu / d - nut) * var_c
    log_zhat = log_ndtr(signs * mean_c / np.sqrt(nu * nu + var_c))
    q = 1.0 + tau * var_c
    # log of the scale constant of exp(-tau f^2 / 2 + nut f); stable as tau -> 0
    log_c = (log_zhat + 0.5 * np.log(q)
             + (tau * mean_c ** 2 - 2.0 * mean_c * nut - nut ** 2 * var_c) / (2.0 * q))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        s2 = 1.0 / tau
        site_mu = nut * s2
        log_ztilde = (log_zhat + 0.5 * LOG_2PI + 0.5 * np.log(var_c + s2)
                      + (mean_c - site_mu) ** 2 / (2.0 * (var_c + s2)))
    return log_c, log_ztilde


def _log_z_reduced(cond: _Conditioned, post: _Posterior, tau, nut, signs, nu):
    log_c, log_ztilde = _site_terms(post, tau, nut, signs, nu)
    m = cond.m
    val = (-0.5 * m @ (tau * m) + nut @ m - post.half_logdet_B
           + 0.5 * post.u @ (post.mu - m) + np.sum(log_c))
    return float(val), log_ztilde


def _run_ep(model: GPModel, X, y, virt, config: EPConfig, init=None) -> _Result:
    cond = _condition_on_y(model, X, y, virt)
    M = virt.M
    signs, nu = virt.signs, virt.nu
    if init is not None:
        tau = np.array(init[0], dtype=float)
        nut = np.array(init[1], dtype=float)
    else:
        tau = np.zeros(M)
        nut = np.zeros(M)
    post = _posterior(cond.C, cond.m, tau, nut)
    Sigma, mu = post.Sigma.copy(), post.mu.copy()
    damp = np.full(M, config.damping)
    skipped = 0
    converged = False
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        tau_old, nut_old = tau.copy(), nut.copy()
        for i in range(M):
            s2 = Sigma[i, i]
            tau_c = 1.0 / s2 - tau[i]
            nu_c = mu[i] / s2 - nut[i]
            if not (tau_c > 0 and np.isfinite(tau_c)):
                skipped += 1
                damp[i] *= 0.5
                continue
            var_c = 1.0 / tau_c
            _, mean_hat, var_hat = probit_tilted_moments(nu_c * var_c, var_c, signs[i], nu)
            if not (var_hat > 0 and np.isfinite(mean_hat)):
                skipped += 1
                damp[i] *= 0.5
                continue
            new_tau = max(1.0 / var_hat - tau_c, 0.0)
            new_nu = mean_hat / var_hat - nu_c
            dt = damp[i] * (new_tau - tau[i])
            dn = damp[i] * (new_nu - nut[i])
            denom = 1.0 + dt * s2
            if not denom > 0:
                skipped += 1
                damp[i] *= 0.5
                continue
            col = Sigma[:, i].copy()
            mu_i = mu[i]
            # in-place symmetric rank-1 update on the Fortran view
            _dger(-dt / denom, col, col, a=Sigma.T, overwrite_a=True)
            mu += col * ((dn - dt * mu_i) / denom)
            tau[i] += dt
            nut[i] += dn
        post = _posterior(cond.C, cond.m, tau, nut)
        Sigma, mu = post.Sigma.copy(), post.mu.copy()
        if not (np.all(np.isfinite(Sigma)) and np.all(np.isfinite(mu))
                and np.all(np.isfinite(tau)) and np.all(np.isfinite(nut))):
            raise NumericalError("EP produced non-finite posterior moments")
        change = max(np.max(np.abs(tau - tau_old), initial=0.0),
                     np.max(np.abs(nut - nut_old), initial=0.0))
        if change < config.tol:
            converged = True
            break
    log_z_red, log_ztilde = _log_z_reduced(cond, post, tau, nut, signs, nu)
    if not np.isfinite(log_z_red):
        raise NumericalError("EP marginal likelihood is not finite")
    if not converged:
        log.debug("EP did not converge in %d sweeps", config.max_sweeps)
    return _Result(cond, post, tau, nut, log_z_red, log_ztilde, converged, sweep, skipped)


# -- joint quantities ---------------------------------------------------------


def _joint_natural(model: GPModel, y, tau, nut):
    N = y.shape[0]
    T = np.concatenate([np.full(N, 1.0 / model.noise_variance), tau])
    H = np.concatenate([y / model.noise_variance, nut])
    return T, H


def _joint_factor(model: GPModel, X, virt, T):
    K_ff, K_fd, K_dd = _joint_blocks(model.kernel, X, virt)
    K = np.block([[K_ff, K_fd], [K_fd.T, K_dd]])
    K[np.diag_indices_from(K)] += model.jitter
    s = np.sqrt(T)
    B = np.eye(K.shape[0]) + s[:, None] * K * s[None, :]
    L, _ = stable_cholesky(B, 0.0, "joint EP site matrix")
    return K, s, L


def _joint_posterior(model: GPModel, X, y, virt, tau, nut):
    T, H = _joint_natural(model, y, tau, nut)
    K, s, L = _joint_factor(model, X, virt, T)
    V = linalg.solve_triangular(L, s[:, None] * K, lower=True, check_finite=False)
    Sigma = K - V.T @ V
    Sigma = 0.5 * (Sigma + Sigma.T)
    return Sigma @ H, Sigma


def _energy_grad(model: GPModel, X, y, virt, tau, nut) -> np.ndarray:
    """Gradient of ``-log Z_EP`` with respect to ``model.log_params()``.

    At an EP fixed point the normalizer is stationary in the site
    parameters, so only the explicit dependence through the prior
    covariance and the noise variance contributes.
    """
    T, H = _joint_natural(model, y, tau, nut)
    K, s, L = _joint_factor(model, X, virt, T)
    n = K.shape[0]
    N = X.shape[0]
    Binv = linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    Ainv = s[:, None] * Binv * s[None, :]
    b = H - Ainv @ (K @ H)
    W = np.outer(b, b) - Ainv
    g = _joint_grads_dot(model.kernel, X, virt, W)
    g_noise = model.noise_variance * np.trace(W[:N, :N])
    return -0.5 * np.append(g, g_noise)


def _validate(model, X, y, virt):
    X, y = _check_inputs(X, y)
    if virt.M < 1:
        raise InvalidArgumentError("EP needs at least one virtual derivative observation")
    if X.shape[1] != model.kernel.dim or virt.locations.shape[1] != model.kernel.dim:
        raise InvalidArgumentError("input dimension does not match the kernel")
    return X, y


def ep_fit(model: GPModel, X, y, virt: VirtualDerivativeSet, config: EPConfig | None = None,
           init=None) -> EPState:
    """Run EP for the monotone model with fixed hyperparameters.

    Parameters
    ----------
    init : tuple of arrays, optional
        ``(site_tau, site_nu)`` to warm-start from.

    Returns
    -------
    EPState
        ``converged`` is False if ``config.max_sweeps`` was reached; the
        state is still usable.
    """
    config = config or EPConfig()
    X, y = _validate(model, X, y, virt)
    res = _run_ep(model, X, y, virt, config, init)
    mean, cov = _joint_posterior(model, X, y, virt, res.tau, res.nut)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalError("joint EP posterior is not finite")
    for a in (res.tau, res.nut, res.site_log_norms, mean, cov):
        a.setflags(write=False)
    return EPState(res.tau, res.nut, res.site_log_norms, mean, cov,
                   res.converged, res.sweeps, res.skipped, res.energy)


def ep_energy(state: EPState, model: GPModel, X, y, virt: VirtualDerivativeSet) -> float:
    """``-log Z_EP`` re-evaluated from the sites stored in ``state``."""
    X, y = _validate(model, X, y, virt)
    if not state.converged:
        log.warning("energy requested for an unconverged EP state")
    cond = _condition_on_y(model, X, y, virt)
    tau = np.asarray(state.site_tau, dtype=float)
    nut = np.asarray(state.site_nu, dtype=float)
    post = _posterior(cond.C, cond.m, tau, nut)
    log_z_red, _ = _log_z_reduced(cond, post, tau, nut, virt.signs, virt.nu)
    return -(cond.log_py + log_z_red)


def ep_energy_and_grad(model: GPModel, X, y, virt: VirtualDerivativeSet,
                       config: EPConfig | None = None, init=None):
    """EP energy, its gradient in log-hyperparameters, and the sites used.

    Returns ``(energy, grad, (site_tau, site_nu), converged)``.
    """
    config = config or EPConfig()
    X, y = _validate(model, X, y, virt)
    res = _run_ep(model, X, y, virt, config, init)
    grad = _energy_grad(model, X, y, virt, res.tau, res.nut)
    return res.energy, grad, (res.tau, res.nut), res.converged


def ep_predict(state: EPState, model: GPModel, X, y, virt: VirtualDerivativeSet,
               Xstar, full_cov: bool = True) -> PredictiveDistribution:
    """Predictive distribution of the latent ``f(Xstar)`` under the EP posterior."""
    X, y = _validate(model, X, y, virt)
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.size == 0:
        return PredictiveDistribution(np.zeros(0), np.zeros((0, 0)))
    Xstar = _check_inputs(Xstar)
    if Xstar.shape[1] != X.shape[1]:
        raise InvalidArgumentError("Xstar has the wrong number of columns")
    T, H = _joint_natural(model, y, np.asarray(state.site_tau), np.asarray(state.site_nu))
    K, s, L = _joint_factor(model, X, virt, T)
    Ks = np.hstack([kernels.gram(model.kernel, Xstar, X),
                    kernels.gram_dx1(model.kernel, virt.locations, virt.dims, Xstar).T])
    z = s * linalg.cho_solve((L, True), s * (K @ H), check_finite=False)
    mean = Ks @ (H - z)
    V = linalg.solve_triangular(L, s[:, None] * Ks.T, lower=True, check_finite=False)
    if full_cov:
        cov = kernels.gram(model.kernel, Xstar, Xstar) - V.T @ V
        cov = 0.5 * (cov + cov.T)
    else:
        kss = np.array([kernels.eval(model.kernel, x, x) for x in Xstar])
        cov = np.diag(kss - np.sum(V * V, axis=0))
    return PredictiveDistribution(mean, cov)


_FAILED = 1e10


def fit_monotone(X, y, virt: VirtualDerivativeSet, base_model,
                 config: EPConfig | None = None, optim: OptimConfig | None = None):
    """Fit the monotone model, returning ``(model, state)``.

    With ``config.optimize_hyperparameters`` the EP energy is minimized over
    the log-hyperparameters with L-BFGS-B, warm-starting each EP run from the
    previous sites.  ``base_model`` is a GPModel or a sequence of candidate
    starting models (e.g. the plain-GP restart optima); candidates are ranked
    by their EP energy and the best ``config.starts`` are optimized.  Without
    hyperparameter optimization the best-ranked candidate is used as is.
    """
    config = config or EPConfig()
    optim = optim or OptimConfig()
    candidates = [base_model] if isinstance(base_model, GPModel) else list(base_model)
    if not candidates:
        raise InvalidArgumentError("no starting model given")
    X, y = _validate(candidates[0], X, y, virt)
    if len(candidates) > 1:
        candidates = _rank_candidates(candidates, X, y, virt, config)
    if not config.optimize_hyperparameters:
        return candidates[0], ep_fit(candidates[0], X, y, virt, config)
    best, last_err = None, None
    for cand in candidates[:config.starts]:
        try:
            fit = _optimize_monotone(X, y, virt, cand, config, optim)
        except NumericalError as err:
            last_err = err
            continue
        if best is None or fit[1].energy < best[1].energy:
            best = fit
    if best is None:
        raise last_err
    return best


def _rank_candidates(candidates, X, y, virt, config):
    scored = []
    for k, cand in enumerate(candidates):
        try:
            e = ep_fit(cand, X, y, virt, config).energy
        except NumericalError:
            e = np.inf
        scored.append((e if np.isfinite(e) else np.inf, k))
    scored.sort()
    return [candidates[k] for _, k in scored]


def _optimize_monotone(X, y, virt, base_model, config, optim):
    family = base_model.kernel.family
    D = X.shape[1]
    jitter = base_model.jitter
    bounds = optim.bounds(family, D)
    lo, hi = np.array(bounds).T
    theta0 = np.clip(base_model.log_params(), lo, hi)
    sites = {"init": None}
    best = {"f": np.inf, "theta": theta0, "sites": None}

    def objective(theta):
        try:
            model = GPModel.from_log_params(family, theta, D, jitter)
            e, g, st, _ = ep_energy_and_grad(model, X, y, virt, config, sites["init"])
        except (NumericalError, InvalidArgumentError):
            return _FAILED, np.zeros_like(theta)
        if not (np.isfinite(e) and np.all(np.isfinite(g))):
            return _FAILED, np.zeros_like(theta)
        sites["init"] = st
        if e < best["f"]:
            best.update(f=e, theta=np.array(theta), sites=st)
        return e, g

    optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"maxiter": config.maxiter, "ftol": 1e-9, "gtol": 1e-5})
    if best["sites"] is None:
        raise NumericalError("EP failed at every evaluated hyperparameter setting")
    model = GPModel.from_log_params(family, best["theta"], D, jitter)
    return model, ep_fit(model, X, y, virt, config, init=best["sites"])

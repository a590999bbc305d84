"""Independent reference computations for the EP tests.

Everything here is built from the scalar kernel functions and dense linear
algebra, without going through the package's block assembly or EP code.
"""

import numpy as np
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from amdgp import kernels


def joint_prior(spec, X, virt):
    """Joint covariance of (f(X), f'(X_m)) built entry by entry."""
    N, M = len(X), virt.M
    Z = [("f", x, None) for x in X] + [("d", x, g) for x, g in zip(virt.locations, virt.dims)]
    K = np.empty((N + M, N + M))
    for i, (ti, xi, gi) in enumerate(Z):
        for j, (tj, xj, gj) in enumerate(Z):
            if ti == "f" and tj == "f":
                K[i, j] = kernels.eval(spec, xi, xj)
            elif ti == "d" and tj == "f":
                K[i, j] = kernels.eval_dx1(spec, xi, xj, gi)
            elif ti == "f" and tj == "d":
                K[i, j] = kernels.eval_dx1(spec, xj, xi, gj)
            else:
                K[i, j] = kernels.eval_dx1_dx2(spec, xi, xj, gi, gj)
    return K


def derivative_given_y(model, X, y, virt):
    """Gaussian prior of the derivative latents conditioned on y, and log p(y)."""
    N = len(X)
    K = joint_prior(model.kernel, X, virt)
    Ky = K[:N, :N] + model.noise_variance * np.eye(N)
    A = np.linalg.solve(Ky, K[:N, N:]).T
    m = A @ y
    C = K[N:, N:] - A @ K[:N, N:]
    log_py = multivariate_normal.logpdf(y, np.zeros(N), Ky)
    return m, C, log_py


def gaussian_joint_posterior(model, X, y, virt):
    N = len(X)
    K = joint_prior(model.kernel, X, virt)
    Ky = K[:N, :N] + model.noise_variance * np.eye(N)
    A = np.linalg.solve(Ky, K[:N, :]).T
    return A @ y, K - A @ K[:N, :]


def quadrature_oracle(m, c, sign, nu):
    """log Z and the moments of N(t | m, c) Phi(sign t / nu) by 1-D quadrature."""
    sd = np.sqrt(c)
    lo, hi = m - 12 * sd, m + 12 * sd

    def w(t):
        return norm.pdf(t, m, sd) * norm.cdf(sign * t / nu)

    pts = [0.0] if lo < 0 < hi else None
    Z = integrate.quad(w, lo, hi, points=pts, epsabs=0, epsrel=1e-11, limit=200)[0]
    m1 = integrate.quad(lambda t: t * w(t), lo, hi, points=pts, epsabs=0,
                        epsrel=1e-11, limit=200)[0] / Z
    m2 = integrate.quad(lambda t: t * t * w(t), lo, hi, points=pts, epsabs=0,
                        epsrel=1e-11, limit=200)[0] / Z
    return np.log(Z), m1, m2 - m1 * m1

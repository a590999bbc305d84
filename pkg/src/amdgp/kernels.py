"""Covariance functions with analytic input derivatives.

Three families are supported: squared exponential with one lengthscale per
input dimension (ARD), a linear kernel ``sum_d c_d x1_d x2_d`` and their sum.
Every family provides

* the value ``k(x1, x2)``,
* ``dk/dx1_g`` -- covariance between a derivative observation and a
  function value,
* ``d2k/dx1_g dx2_h`` -- covariance between two derivative observations,

both as scalar functions and as vectorized Gram blocks, plus the gradients
of those blocks with respect to the log-hyperparameters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "eval",
    "eval_dx1",
    "eval_dx1_dx2",
    "gram",
    "gram_dx1",
    "gram_dx1_dx2",
    "gram_grads",
    "gram_dx1_grads",
    "gram_dx1_dx2_grads",
    "gram_grads_dot",
    "gram_dx1_grads_dot",
    "gram_dx1_dx2_grads_dot",
]


class KernelFamily(str, enum.Enum):
    SE = "se"
    LINEAR = "linear"
    SUM = "se+linear"

    @classmethod
    def parse(cls, value) -> "KernelFamily":
        if isinstance(value, cls):
            return value
        aliases = {
            "se": cls.SE,
            "squared_exponential": cls.SE,
            "squaredexponential": cls.SE,
            "linear": cls.LINEAR,
            "se+linear": cls.SUM,
            "sum": cls.SUM,
            "se_linear": cls.SUM,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidArgumentError(
                f"unknown kernel family {value!r}; expected one of "
                f"{sorted(aliases)}") from None

    @property
    def has_se(self) -> bool:
        return self in (KernelFamily.SE, KernelFamily.SUM)

    @property
    def has_linear(self) -> bool:
        return self in (KernelFamily.LINEAR, KernelFamily.SUM)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, ndmin=1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Immutable kernel family plus hyperparameters.

    Parameters
    ----------
    family : KernelFamily or str
    signal_variance : float
        SE amplitude ``sigma_f^2``.  Ignored by the pure linear family.
    lengthscales : array_like, shape (D,)
        SE lengthscales.  Required for ``se`` and ``se+linear``.
    linear_variances : array_like, shape (D,)
        Per-dimension coefficients of the linear kernel.  Required for
        ``linear`` and ``se+linear``; zeros are allowed.
    """

    family: KernelFamily
    signal_variance: float = 1.0
    lengthscales: np.ndarray | None = None
    linear_variances: np.ndarray | None = None
    dim: int = field(init=False)

    def __post_init__(self):
        family = KernelFamily.parse(self.family)
        object.__setattr__(self, "family", family)
        dims = []
        if family.has_se:
            if self.lengthscales is None:
                raise InvalidArgumentError(f"{family.value} kernel needs lengthscales")
            ell = _frozen(self.lengthscales)
            if ell.ndim != 1 or not np.all(ell > 0) or not np.all(np.isfinite(ell)):
                raise InvalidArgumentError("lengthscales must be a vector of positive reals")
            if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
                raise InvalidArgumentError("signal_variance must be positive")
            object.__setattr__(self, "lengthscales", ell)
            object.__setattr__(self, "signal_variance", float(self.signal_variance))
            dims.append(ell.size)
        else:
            object.__setattr__(self, "lengthscales", None)
        if family.has_linear:
            if self.linear_variances is None:
                raise InvalidArgumentError(f"{family.value} kernel needs linear_variances")
            c = _frozen(self.linear_variances)
            if c.ndim != 1 or not np.all(c >= 0) or not np.all(np.isfinite(c)):
                raise InvalidArgumentError("linear_variances must be non-negative")
            object.__setattr__(self, "linear_variances", c)
            dims.append(c.size)
        else:
            object.__setattr__(self, "linear_variances", None)
        if len(set(dims)) != 1:
            raise InvalidArgumentError(
                "lengthscales and linear_variances must have the same length")
        object.__setattr__(self, "dim", dims[0])

    # -- log-space parameterization ---------------------------------------

    @property
    def n_params(self) -> int:
        n = 0
        if self.family.has_se:
            n += 1 + self.dim
        if self.family.has_linear:
            n += self.dim
        return n

    def log_params(self) -> np.ndarray:
        """Hyperparameters in log space.

        Order: ``[log sigma_f^2, log ell_1..D]`` for the SE part followed by
        ``[log c_1..D]`` for the linear part.
        """
        parts = []
        if self.family.has_se:
            parts.append([np.log(self.signal_variance)])
            parts.append(np.log(self.lengthscales))
        if self.family.has_linear:
            with np.errstate(divide="ignore"):
                parts.append(np.log(self.linear_variances))
        return np.concatenate(parts)

    @classmethod
    def from_log_params(cls, family, theta, dim: int) -> "KernelSpec":
        family = KernelFamily.parse(family)
        theta = np.asarray(theta, dtype=float)
        kw = {}
        i = 0
        if family.has_se:
            kw["signal_variance"] = float(np.exp(theta[0]))
            kw["lengthscales"] = np.exp(theta[1:1 + dim])
            i = 1 + dim
        if family.has_linear:
            kw["linear_variances"] = np.exp(theta[i:i + dim])
            i += dim
        if i != theta.size:
            raise InvalidArgumentError(
                f"expected {i} log-parameters for {family.value} in {dim}-D, got {theta.size}")
        return cls(family, **kw)

    def param_names(self) -> list[str]:
        names = []
        if self.family.has_se:
            names.append("log_signal_variance")
            names += [f"log_lengthscale_{d}" for d in range(self.dim)]
        if self.family.has_linear:
            names += [f"log_linear_variance_{d}" for d in range(self.dim)]
        return names

    def to_dict(self) -> dict:
        out = {"family": self.family.value}
        if self.family.has_se:
            out["signal_variance"] = self.signal_variance
            out["lengthscales"] = self.lengthscales.tolist()
        if self.family.has_linear:
            out["linear_variances"] = self.linear_variances.tolist()
        return out


# -- input validation ------------------------------------------------------


def _points(spec: KernelSpec, A, name="x") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != spec.dim:
        raise InvalidArgumentError(
            f"{name} must have {spec.dim} columns, got shape {np.shape(A)}")
    return A


def _dims(spec: KernelSpec, g, n: int, name="g") -> np.ndarray:
    g = np.asarray(g)
    if g.ndim == 0:
        g = np.full(n, int(g))
    if g.shape != (n,):
        raise InvalidArgumentError(f"{name} must have {n} entries, got shape {g.shape}")
    if not np.issubdtype(g.dtype, np.integer):
        if not np.all(g == np.round(g)):
            raise InvalidArgumentError(f"{name} must hold integer dimension indices")
        g = g.astype(int)
    if np.any(g < 0) or np.any(g >= spec.dim):
        raise InvalidArgumentError(f"{name} out of range [0, {spec.dim})")
    return g


# -- Gram blocks -----------------------------------------------------------


def _se_core(spec, A, B):
    R = A[:, None, :] - B[None, :, :]
    inv_ell2 = 1.0 / spec.lengthscales ** 2
    K = spec.signal_variance * np.exp(-0.5 * np.einsum("ijd,d->ij", R * R, inv_ell2))
    return R, K, inv_ell2


def _se_values(spec, A, B):
    # SE Gram matrix without the (n1, n2, D) difference tensor
    inv_ell = 1.0 / spec.lengthscales
    As = A * inv_ell
    Bs = B * inv_ell
    d2 = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    return spec.signal_variance * np.exp(-0.5 * np.maximum(d2, 0.0)), inv_ell * inv_ell


def _diff_along(A, g, B, h=None):
    # r[i, j] = A[i, g_i] - B[j, g_i]  (or with dimension h_j per column)
    if h is None:
        return A[np.arange(A.shape[0]), g][:, None] - B[:, g].T
    return A[:, h] - B[np.arange(B.shape[0]), h][None, :]


def _sq_contract(A, B, V):
    # sum_ij V_ij (A_ie - B_je)^2 for every dimension e
    return (V.sum(1) @ (A * A) + V.sum(0) @ (B * B)
            - 2.0 * np.einsum("ie,ie->e", A, V @ B))


def _take_dim(R, g, axis_len_other, rows=True):
    # R[i, j, g_i] for rows=True, R[i, j, h_j] otherwise
    if rows:
        return np.take_along_axis(R, g[:, None, None].repeat(axis_len_other, 1), 2)[..., 0]
    return np.take_along_axis(R, g[None, :, None].repeat(axis_len_other, 0), 2)[..., 0]


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """``K[i, j] = k(A[i], B[j])``."""
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    K = np.zeros((A.shape[0], B.shape[0]))
    if spec.family.has_se:
        K += _se_values(spec, A, B)[0]
    if spec.family.has_linear:
        r = np.sqrt(spec.linear_variances)  # scaling both sides keeps K exactly symmetric
        K += (A * r) @ (B * r).T
    return K


def gram_dx1(spec: KernelSpec, A, dims_a, B) -> np.ndarray:
    """``G[i, j] = dk(a, B[j]) / da_{g_i}`` evaluated at ``a = A[i]``.

    Equals ``cov(df(A[i])/dx_{g_i}, f(B[j]))``.
    """
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    G = np.zeros((A.shape[0], B.shape[0]))
    if spec.family.has_se:
        K, inv_ell2 = _se_values(spec, A, B)
        G -= K * _diff_along(A, g, B) * inv_ell2[g][:, None]
    if spec.family.has_linear:
        G += spec.linear_variances[g][:, None] * B[:, g].T
    return G


def gram_dx1_dx2(spec: KernelSpec, A, dims_a, B, dims_b) -> np.ndarray:
    """``H[i, j] = d2k(a, b) / da_{g_i} db_{h_j}`` at ``(A[i], B[j])``."""
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    h = _dims(spec, dims_b, B.shape[0], "dims_b")
    same = g[:, None] == h[None, :]
    H = np.zeros((A.shape[0], B.shape[0]))
    if spec.family.has_se:
        K, inv_ell2 = _se_values(spec, A, B)
        Rg = _diff_along(A, g, B) * inv_ell2[g][:, None]
        Rh = _diff_along(A, None, B, h) * inv_ell2[h][None, :]
        H += K * (same * inv_ell2[g][:, None] - Rg * Rh)
    if spec.family.has_linear:
        H += same * spec.linear_variances[g][:, None]
    return H


# -- gradients with respect to log-hyperparameters -------------------------
#
# Each function returns an array of shape (P, n1, n2) ordered like
# KernelSpec.log_params().


def gram_grads(spec: KernelSpec, A, B) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    out = np.zeros((spec.n_params, A.shape[0], B.shape[0]))
    p = 0
    if spec.family.has_se:
        R, K, inv_ell2 = _se_core(spec, A, B)
        out[0] = K
        out[1:1 + spec.dim] = np.moveaxis(R * R * inv_ell2, 2, 0) * K
        p = 1 + spec.dim
    if spec.family.has_linear:
        c = spec.linear_variances
        out[p:p + spec.dim] = c[:, None, None] * A.T[:, :, None] * B.T[:, None, :]
    return out


def gram_dx1_grads(spec: KernelSpec, A, dims_a, B) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    out = np.zeros((spec.n_params, A.shape[0], B.shape[0]))
    p = 0
    if spec.family.has_se:
        R, K, inv_ell2 = _se_core(spec, A, B)
        Rg = _take_dim(R, g, B.shape[0], rows=True)
        G = -K * Rg * inv_ell2[g][:, None]
        W = np.moveaxis(R * R * inv_ell2, 2, 0)  # (D, n1, n2)
        out[0] = G
        onehot = (g[None, :] == np.arange(spec.dim)[:, None])  # (D, n1)
        out[1:1 + spec.dim] = G[None] * (W - 2.0 * onehot[:, :, None])
        p = 1 + spec.dim
    if spec.family.has_linear:
        c = spec.linear_variances
        for e in range(spec.dim):
            rows = g == e
            out[p + e, rows, :] = c[e] * B[:, e][None, :]
    return out


def gram_dx1_dx2_grads(spec: KernelSpec, A, dims_a, B, dims_b) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    h = _dims(spec, dims_b, B.shape[0], "dims_b")
    same = g[:, None] == h[None, :]
    out = np.zeros((spec.n_params, A.shape[0], B.shape[0]))
    p = 0
    if spec.family.has_se:
        R, K, inv_ell2 = _se_core(spec, A, B)
        Rg = _take_dim(R, g, B.shape[0], rows=True) * inv_ell2[g][:, None]
        Rh = _take_dim(R, h, A.shape[0], rows=False) * inv_ell2[h][None, :]
        H = K * (same * inv_ell2[g][:, None] - Rg * Rh)
        W = np.moveaxis(R * R * inv_ell2, 2, 0)
        out[0] = H
        e = np.arange(spec.dim)
        ge = (g[None, :] == e[:, None])[:, :, None].astype(float)  # (D, n1, 1)
        he = (h[None, :] == e[:, None])[:, None, :].astype(float)  # (D, 1, n2)
        out[1:1 + spec.dim] = (
            H[None] * W
            + K[None] * (-2.0 * (same * inv_ell2[g][:, None])[None] * ge
                         + 2.0 * (Rg * Rh)[None] * (ge + he))
        )
        p = 1 + spec.dim
    if spec.family.has_linear:
        c = spec.linear_variances
        for e in range(spec.dim):
            out[p + e] = c[e] * (same & (g[:, None] == e))
    return out


# -- gradient contractions -------------------------------------------------
#
# ``*_grads_dot(..., W)`` equals ``np.einsum("pij,ij->p", *_grads(...), W)``
# but never forms the (P, n1, n2) tensor.


def gram_grads_dot(spec: KernelSpec, A, B, W) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    W = np.asarray(W, dtype=float)
    out = np.zeros(spec.n_params)
    p = 0
    if spec.family.has_se:
        K, inv_ell2 = _se_values(spec, A, B)
        V = W * K
        out[0] = V.sum()
        out[1:1 + spec.dim] = _sq_contract(A, B, V) * inv_ell2
        p = 1 + spec.dim
    if spec.family.has_linear:
        out[p:p + spec.dim] = spec.linear_variances * np.einsum("ie,ie->e", A, W @ B)
    return out


def gram_dx1_grads_dot(spec: KernelSpec, A, dims_a, B, W) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    W = np.asarray(W, dtype=float)
    D = spec.dim
    out = np.zeros(spec.n_params)
    p = 0
    if spec.family.has_se:
        K, inv_ell2 = _se_values(spec, A, B)
        V = -W * K * _diff_along(A, g, B) * inv_ell2[g][:, None]
        out[0] = V.sum()
        out[1:1 + D] = (_sq_contract(A, B, V) * inv_ell2
                        - 2.0 * np.bincount(g, weights=V.sum(1), minlength=D))
        p = 1 + D
    if spec.family.has_linear:
        rows = (W @ B)[np.arange(A.shape[0]), g]
        out[p:p + D] = spec.linear_variances * np.bincount(g, weights=rows, minlength=D)
    return out


def gram_dx1_dx2_grads_dot(spec: KernelSpec, A, dims_a, B, dims_b, W) -> np.ndarray:
    A = _points(spec, A, "A")
    B = _points(spec, B, "B")
    g = _dims(spec, dims_a, A.shape[0], "dims_a")
    h = _dims(spec, dims_b, B.shape[0], "dims_b")
    W = np.asarray(W, dtype=float)
    D = spec.dim
    same = g[:, None] == h[None, :]
    out = np.zeros(spec.n_params)
    p = 0
    if spec.family.has_se:
        K, inv_ell2 = _se_values(spec, A, B)
        Rg = _diff_along(A, g, B) * inv_ell2[g][:, None]
        Rh = _diff_along(A, None, B, h) * inv_ell2[h][None, :]
        WK = W * K
        V = WK * (same * inv_ell2[g][:, None] - Rg * Rh)
        Q = WK * same * inv_ell2[g][:, None]
        P = WK * Rg * Rh
        out[0] = V.sum()
        out[1:1 + D] = (_sq_contract(A, B, V) * inv_ell2
                        - 2.0 * np.bincount(g, weights=Q.sum(1), minlength=D)
                        + 2.0 * np.bincount(g, weights=P.sum(1), minlength=D)
                        + 2.0 * np.bincount(h, weights=P.sum(0), minlength=D))
        p = 1 + D
    if spec.family.has_linear:
        out[p:p + D] = spec.linear_variances * np.bincount(
            g, weights=(W * same).sum(1), minlength=D)
    return out


# -- scalar API --------------------------------------------------------------


def eval(spec: KernelSpec, x1, x2) -> float:  # noqa: A001 - mirrors k(x1, x2)
    """Kernel value ``k(x1, x2)`` for two D-vectors."""
    return float(gram(spec, _vector(spec, x1), _vector(spec, x2))[0, 0])


def eval_dx1(spec: KernelSpec, x1, x2, g: int) -> float:
    """``dk/dx1_g`` at ``(x1, x2)``."""
    return float(gram_dx1(spec, _vector(spec, x1), _index(spec, g), _vector(spec, x2))[0, 0])


def eval_dx1_dx2(spec: KernelSpec, x1, x2, g: int, h: int) -> float:
    """``d2k/dx1_g dx2_h`` at ``(x1, x2)``."""
    return float(gram_dx1_dx2(spec, _vector(spec, x1), _index(spec, g),
                              _vector(spec, x2), _index(spec, h))[0, 0])


def _vector(spec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape != (spec.dim,):
        raise InvalidArgumentError(f"expected a {spec.dim}-vector, got shape {x.shape}")
    return x[None, :]


def _index(spec, g) -> int:
    if isinstance(g, (bool, np.bool_)) or int(g) != g:
        raise InvalidArgumentError(f"dimension index must be an integer, got {g!r}")
    g = int(g)
    if not 0 <= g < spec.dim:
        raise InvalidArgumentError(f"dimension index {g} out of range [0, {spec.dim})")
    return g

"""Synthetic data, normalization, CSV ingestion and predictive evaluation."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NumericalError
from .gp import LOG_2PI, PredictiveDistribution

__all__ = [
    "FunctionFamily",
    "SyntheticSpec",
    "SyntheticData",
    "NormalizationInfo",
    "generate",
    "normalize",
    "lppd",
    "edge_indices",
    "edge_subset",
    "load_csv",
    "save_csv",
]


class FunctionFamily(str, enum.Enum):
    LINEAR = "linear"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class SyntheticSpec:
    """One-dimensional synthetic problem ``y = f(x) + noise``, ``x ~ N(0, 1)``.

    ``linear`` is ``f(x) = a x`` with ``a`` in {-1, 0, 1}; ``sigmoid`` is
    ``f(x) = 1 / (1 + exp(-a x))`` with ``a > 0``.  ``snr`` is the fraction of
    the raw output variance explained by ``f``.  For ``a = 0`` the noise
    variance is fixed at 1 and ``snr`` is ignored.
    """

    family: FunctionFamily
    a: float
    n: int
    snr: float
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", FunctionFamily(str(self.family).lower()
                                                              if not isinstance(self.family, FunctionFamily)
                                                              else self.family))
        except ValueError:
            raise InvalidArgumentError(f"unknown function family {self.family!r}") from None
        if self.family is FunctionFamily.LINEAR and self.a not in (-1, 0, 1):
            raise InvalidArgumentError("linear family needs a in {-1, 0, 1}")
        if self.family is FunctionFamily.SIGMOID and not self.a > 0:
            raise InvalidArgumentError("sigmoid family needs a > 0")
        if int(self.n) != self.n or self.n < 3:
            raise InvalidArgumentError("n must be an integer >= 3")
        if self.a != 0 and not 0 < self.snr < 1:
            raise InvalidArgumentError("snr must lie in (0, 1)")

    @property
    def truth(self) -> int:
        if self.family is FunctionFamily.SIGMOID:
            return 1
        return int(np.sign(self.a))

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is FunctionFamily.LINEAR:
            return self.a * x
        return 1.0 / (1.0 + np.exp(-self.a * x))

    def label(self) -> str:
        return f"{self.family.value}(a={self.a:g})"


@dataclass(frozen=True, eq=False)
class NormalizationInfo:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def apply_X(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def apply_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def denormalize_X(self, Xn):
        return np.asarray(Xn, dtype=float) * self.x_std + self.x_mean

    def denormalize_y(self, yn):
        return np.asarray(yn, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}


def normalize(X, y, names=None):
    """Scale every column of ``X`` and ``y`` to zero mean and unit variance.

    Raises
    ------
    InvalidArgumentError
        If a column of ``X`` or ``y`` is constant.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    for j, s in enumerate(x_std):
        if not s > 0:
            name = names[j] if names is not None else j
            raise InvalidArgumentError(f"column {name!r} is constant")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not y_std > 0:
        raise InvalidArgumentError("target is constant")
    info = NormalizationInfo(x_mean, x_std, y_mean, y_std)
    return info.apply_X(X), info.apply_y(y), info


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """Normalized training (and optional test) data plus raw-scale details."""

    X: np.ndarray
    y: np.ndarray
    truth: int
    info: NormalizationInfo
    noise_variance: float
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None
    raw_signal: np.ndarray | None = None
    raw_y: np.ndarray | None = None


def generate(spec: SyntheticSpec, n_test: int = 0) -> SyntheticData:
    """Draw a synthetic data set.

    The training noise is made exactly orthogonal to the centred signal and
    scaled so that the sample variance ratio ``var(f) / var(y)`` equals
    ``spec.snr``.  Test data (if requested) come from the same distribution
    with ordinary Gaussian noise of the same variance and are normalized with
    the training statistics.
    """
    if n_test < 0:
        raise InvalidArgumentError("n_test must be non-negative")
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal(spec.n)
    z = rng.standard_normal(spec.n)
    signal = spec.f(x)
    if spec.family is FunctionFamily.LINEAR and spec.a == 0:
        noise_var = 1.0
        noise = z
    else:
        var_f = float(np.var(signal))
        noise_var = var_f * (1.0 - spec.snr) / spec.snr
        basis = np.column_stack([np.ones(spec.n), signal - signal.mean()])
        resid = z - basis @ np.linalg.lstsq(basis, z, rcond=None)[0]
        noise = resid * np.sqrt(noise_var / np.var(resid))
    y_raw = signal + noise
    Xn, yn, info = normalize(x[:, None], y_raw)
    X_test = y_test = None
    if n_test:
        xt = rng.standard_normal(n_test)
        yt = spec.f(xt) + np.sqrt(noise_var) * rng.standard_normal(n_test)
        X_test = info.apply_X(xt[:, None])
        y_test = info.apply_y(yt)
    return SyntheticData(Xn, yn, spec.truth, info, noise_var, X_test, y_test, signal, y_raw)


def lppd(pred: PredictiveDistribution, noise_variance: float, y_test) -> float:
    """Log pointwise predictive density for Gaussian observation noise.

    ``sum_i log N(y_i | mean_i, var_i + noise_variance)``.
    """
    y_test = np.asarray(y_test, dtype=float).ravel()
    if y_test.shape[0] != pred.mean.shape[0]:
        raise InvalidArgumentError("y_test and the predictive distribution differ in length")
    v = pred.variance + noise_variance
    if np.any(~(v > 0)):
        raise NumericalError("non-positive predictive variance")
    r = y_test - pred.mean
    return float(np.sum(-0.5 * (LOG_2PI + np.log(v) + r * r / v)))


def edge_indices(X, fraction: float) -> np.ndarray:
    """Indices of the ``ceil(fraction * L)`` rows farthest from the column mean.

    Ties go to the lower index.  Returned in ascending index order.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not 0 < fraction < 1:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    L = X.shape[0]
    count = min(L, math.ceil(round(fraction * L, 9)))
    dist = np.linalg.norm(X - X.mean(axis=0), axis=1)
    order = np.lexsort((np.arange(L), -dist))
    return np.sort(order[:count])


def edge_subset(X, y, fraction: float = 0.2):
    """Rows of ``(X, y)`` selected by :func:`edge_indices`."""
    idx = edge_indices(X, fraction)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X[idx], np.asarray(y, dtype=float).ravel()[idx]


# -- CSV ------------------------------------------------------------------


def _split(line: str, comma: bool) -> list[str]:
    if comma:
        return [c.strip() for c in next(csv.reader([line]))]
    return line.split()


def load_csv(path, target_column=-1, header: bool = True):
    """Read a numeric table; the delimiter (comma or whitespace) is detected
    from the first line.

    Parameters
    ----------
    target_column : str or int
        Column name (requires ``header``) or position; negative positions
        count from the end.

    Returns
    -------
    X : ndarray, shape (N, D)
        All non-target columns in file order.
    y : ndarray, shape (N,)
    names : list of str
        Names of the columns of ``X`` (``x0, x1, ...`` without a header).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        lines = [(i + 1, ln.rstrip("\r\n")) for i, ln in enumerate(fh)]
    lines = [(i, ln) for i, ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InvalidArgumentError(f"{path}: empty file")
    comma = "," in lines[0][1]
    rows = [(i, _split(ln, comma)) for i, ln in lines]
    if header:
        _, names = rows[0]
        rows = rows[1:]
    else:
        names = [f"x{j}" for j in range(len(rows[0][1]))]
    width = len(names)
    if isinstance(target_column, str) and not target_column.lstrip("-").isdigit():
        if target_column not in names:
            raise InvalidArgumentError(f"{path}: target column {target_column!r} not found")
        t = names.index(target_column)
    else:
        t = int(target_column)
        if not -width <= t < width:
            raise InvalidArgumentError(f"{path}: target column {t} out of range")
        t %= width
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    data = np.empty((len(rows), width))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise InvalidArgumentError(
                f"{path}: line {lineno} has {len(cells)} fields, expected {width}")
        for j, cell in enumerate(cells):
            try:
                data[r, j] = float(cell)
            except ValueError:
                what = "missing value" if not cell else f"non-numeric value {cell!r}"
                raise InvalidArgumentError(
                    f"{path}: line {lineno}, column {j + 1} ({names[j]!r}): {what}") from None
            if not np.isfinite(data[r, j]):
                raise InvalidArgumentError(
                    f"{path}: line {lineno}, column {j + 1} ({names[j]!r}): missing value")
    keep = [j for j in range(width) if j != t]
    return data[:, keep], data[:, t], [names[j] for j in keep]


def save_csv(path, X, y, names=None, target_name="y", delimiter=","):
    """Write ``X`` and ``y`` in the dialect read by :func:`load_csv`."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    sep = "\t" if delimiter in ("\t", " ", "whitespace") else delimiter
    with open(path, "w", newline="") as fh:
        fh.write(sep.join(names + [target_name]) + "\n")
        for row, t in zip(X, np.asarray(y, dtype=float).ravel()):
            fh.write(sep.join(repr(float(v)) for v in (*row, t)) + "\n")

"""Automatic monotonicity detection by energy comparison.

For every input dimension the plain GP energy is compared with the EP
energies of two monotone models (all virtual signs +1, all -1) placed on
that dimension alone.  Dimension ``i`` is declared increasing when

    E_mon+ <= E_plain - p1 * (N/2) log 2 pi   and
    E_mon- >  E_plain - p2 * (N/2) log 2 pi,

and symmetrically for decreasing.

Energy convention
-----------------
``ep.ep_energy`` returns the full ``-log Z_EP``.  The thresholds above are
stated for a monotone-model energy that omits the ``2 pi`` normalizers of
the N exact Gaussian observation sites, which is ``(N/2) log 2 pi`` below
the full value.  :func:`gaussian_site_offset` is that constant and
``MonotonicityReport`` stores both conventions, so a data set that agrees
with the assumed direction gives ``E_mon ~= E_plain - (N/2) log 2 pi``.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ep import DEFAULT_NU, EPConfig, VirtualDerivativeSet, fit_monotone
from .errors import AMDError, InvalidArgumentError
from .gp import LOG_2PI, GPModel, OptimConfig, _check_inputs, fit_hyperparameters_all, log_marginal_likelihood
from .kernels import KernelFamily

__all__ = [
    "Placement",
    "AMDConfig",
    "DimensionResult",
    "MonotonicityReport",
    "RobustnessRecord",
    "gaussian_site_offset",
    "decide_direction",
    "place_virtual_points",
    "fit_plain",
    "fit_dimension",
    "amd_detect",
    "p1_upper_limit",
    "p2_lower_limit",
    "robustness_region",
]

log = logging.getLogger(__name__)


class Placement(str, enum.Enum):
    GRID_1D = "grid"
    UNIFORM_RANDOM = "uniform"
    SUBSAMPLE_TRAINING = "subsample"

    @classmethod
    def parse(cls, value):
        if value is None or isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "_")
        for p in cls:
            if v in (p.value, p.name.lower(), p.name.lower().replace("_", "")):
                return p
        raise InvalidArgumentError(f"unknown placement {value!r}")


def gaussian_site_offset(n: int) -> float:
    """``(n/2) log 2 pi``: the normalizer of n exact Gaussian sites."""
    return 0.5 * n * LOG_2PI


@dataclass(frozen=True)
class AMDConfig:
    """Detection settings.

    ``m_count`` is the number of virtual points per dimension: ``None`` for
    ``max(1, round(N/3))``, an int for a fixed count, or a float in (0, 1)
    for a fraction of N.  ``placement=None`` picks a grid in 1-D and uniform
    random points in the bounding box otherwise.
    """

    p1: float = 0.99
    p2: float = 0.5
    m_count: int | float | None = None
    placement: Placement | None = None
    seed: int = 0
    kernel: KernelFamily = KernelFamily.SE
    nu: float = DEFAULT_NU
    ep: EPConfig = field(default_factory=EPConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        object.__setattr__(self, "kernel", KernelFamily.parse(self.kernel))
        object.__setattr__(self, "placement", Placement.parse(self.placement))
        if not (self.p1 <= 1 and self.p2 <= 1):
            raise InvalidArgumentError("p1 and p2 must be <= 1")
        if not self.p1 > self.p2:
            raise InvalidArgumentError("p1 must be greater than p2")
        m = self.m_count
        if m is not None:
            if isinstance(m, float) and not m.is_integer():
                if not 0 < m < 1:
                    raise InvalidArgumentError("fractional m_count must lie in (0, 1)")
            elif int(m) < 1:
                raise InvalidArgumentError("m_count must be positive")

    def resolve_m(self, n: int) -> int:
        m = self.m_count
        if m is None:
            return max(1, round(n / 3))
        if isinstance(m, float) and not m.is_integer():
            return max(1, round(m * n))
        return int(m)

    def resolve_placement(self, dim: int) -> Placement:
        if self.placement is not None:
            return self.placement
        return Placement.GRID_1D if dim == 1 else Placement.UNIFORM_RANDOM

    def to_dict(self) -> dict:
        return {
            "p1": self.p1, "p2": self.p2, "m_count": self.m_count,
            "placement": None if self.placement is None else self.placement.value,
            "seed": self.seed, "kernel": self.kernel.value, "nu": self.nu,
            "ep": vars(self.ep).copy(), "optim": {k: (list(v) if isinstance(v, tuple) else v)
                                                  for k, v in vars(self.optim).items()},
        }


def decide_direction(e_plus: float, e_minus: float, bl1: float, bl2: float) -> int:
    """Algorithm-1 verdict from the two monotone energies and the baselines."""
    if e_plus <= bl1 and e_minus > bl2:
        return 1
    if e_minus <= bl1 and e_plus > bl2:
        return -1
    return 0


def place_virtual_points(X, dim: int, M: int, placement=Placement.GRID_1D, seed=0,
                         nu: float = DEFAULT_NU) -> VirtualDerivativeSet:
    """Virtual derivative locations for dimension ``dim`` (signs all +1).

    ``grid`` (1-D only) spaces M points evenly over ``[min X, max X]``;
    ``uniform`` draws them uniformly in the bounding box of X; ``subsample``
    picks M distinct training rows.
    """
    X = _check_inputs(X)
    N, D = X.shape
    placement = Placement.parse(placement)
    if not 0 <= dim < D:
        raise InvalidArgumentError(f"dimension {dim} out of range [0, {D})")
    if int(M) != M or M < 1:
        raise InvalidArgumentError("M must be a positive integer")
    M = int(M)
    rng = np.random.default_rng(seed)
    if placement is Placement.GRID_1D:
        if D != 1:
            raise InvalidArgumentError("grid placement is only available for 1-D inputs")
        locs = np.linspace(X[:, 0].min(), X[:, 0].max(), M)[:, None]
    elif placement is Placement.UNIFORM_RANDOM:
        locs = rng.uniform(X.min(axis=0), X.max(axis=0), size=(M, D))
    else:
        if M > N:
            raise InvalidArgumentError(f"cannot subsample {M} rows from {N}")
        locs = X[rng.choice(N, size=M, replace=False)]
    return VirtualDerivativeSet(locs, np.full(M, dim), np.ones(M), nu)


@dataclass(eq=False)
class SignFit:
    model: GPModel
    state: object
    virt: VirtualDerivativeSet
    energy_exact: float


@dataclass(eq=False)
class DimensionResult:
    dim: int
    name: str
    direction: int
    energy_plus: float
    energy_minus: float
    energy_plus_exact: float
    energy_minus_exact: float
    diagnostics: dict
    error: str | None = None
    fits: dict = field(default_factory=dict, repr=False)

    def energy(self, sign: int) -> float:
        return self.energy_plus if sign > 0 else self.energy_minus

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "name": self.name, "direction": self.direction,
            "E_mon_plus": self.energy_plus, "E_mon_minus": self.energy_minus,
            "E_mon_plus_exact": self.energy_plus_exact,
            "E_mon_minus_exact": self.energy_minus_exact,
            "diagnostics": self.diagnostics, "error": self.error,
        }


@dataclass(eq=False)
class MonotonicityReport:
    directions: np.ndarray
    n: int
    p1: float
    p2: float
    energy_plain: float
    offset: float
    dims: list
    diagnostics: dict
    plain_model: GPModel | None = field(default=None, repr=False)

    @property
    def e_bl1(self) -> float:
        return self.energy_plain - self.p1 * self.offset

    @property
    def e_bl2(self) -> float:
        return self.energy_plain - self.p2 * self.offset

    def recompute_directions(self, p1=None, p2=None) -> np.ndarray:
        """Directions implied by the stored energies, optionally for other (p1, p2)."""
        p1 = self.p1 if p1 is None else p1
        p2 = self.p2 if p2 is None else p2
        bl1 = self.energy_plain - p1 * self.offset
        bl2 = self.energy_plain - p2 * self.offset
        return np.array([decide_direction(d.energy_plus, d.energy_minus, bl1, bl2)
                         for d in self.dims], dtype=int)

    def summary_lines(self) -> list[str]:
        sym = {1: "+1", 0: "0", -1: "-1"}
        return [f"{d.name}: {sym[d.direction]}"
                + (f"  (error: {d.error})" if d.error else "") for d in self.dims]

    def to_dict(self) -> dict:
        return {
            "directions": [int(v) for v in self.directions],
            "names": [d.name for d in self.dims],
            "N": self.n, "p1": self.p1, "p2": self.p2,
            "E_plain": self.energy_plain, "offset": self.offset,
            "E_bl1": self.e_bl1, "E_bl2": self.e_bl2,
            "dimensions": [d.to_dict() for d in self.dims],
            "diagnostics": self.diagnostics,
        }


def _warn_if_unnormalized(X, y):
    if (np.max(np.abs(X.mean(axis=0))) > 0.1 or np.max(np.abs(X.std(axis=0) - 1)) > 0.1
            or abs(y.mean()) > 0.1 or abs(y.std() - 1) > 0.1):
        warnings.warn("data do not look normalized; hyperparameter bounds assume "
                      "zero-mean unit-variance columns", stacklevel=3)


def fit_plain(X, y, config: AMDConfig):
    """Plain GP point estimate.

    Returns ``(model, energy, candidates)``: the best restart optimum, its
    exact energy, and all distinct restart optima (best first), which seed
    the monotone fits.
    """
    found = fit_hyperparameters_all(X, y, config.kernel, config.optim)
    model = found[0][1]
    return model, -log_marginal_likelihood(model, X, y), [m for _, m in found]


def _fit_sign(X, y, virt, base_model, config) -> SignFit:
    model, state = fit_monotone(X, y, virt, base_model, config.ep, config.optim)
    return SignFit(model, state, virt, state.energy)


def fit_dimension(X, y, dim: int, base_model, energy_plain: float,
                  config: AMDConfig, name: str | None = None, signs=(1, -1)) -> DimensionResult:
    """Fit the monotone models of one dimension and apply the decision rule.

    ``base_model`` is the plain GP fit or a list of candidate starting
    models (see :func:`ep.fit_monotone`).  EP or optimization failures give
    direction 0 and an ``error`` entry.
    """
    X, y = _check_inputs(X, y)
    N, D = X.shape
    offset = gaussian_site_offset(N)
    M = config.resolve_m(N)
    placement = config.resolve_placement(D)
    seed = [int(config.seed), int(dim)]
    diag = {"placement": placement.value, "M": M, "placement_seed": seed,
            "n_monotone_fits": 0}
    name = name if name is not None else f"x{dim}"
    energies = {1: np.inf, -1: np.inf}
    exact = {1: np.inf, -1: np.inf}
    fits = {}
    error = None
    try:
        base = place_virtual_points(X, dim, M, placement, seed, config.nu)
        for s in signs:
            diag["n_monotone_fits"] += 1
            fit = _fit_sign(X, y, base.with_signs(float(s)), base_model, config)
            fits[s] = fit
            exact[s] = fit.energy_exact
            energies[s] = fit.energy_exact - offset
            key = "plus" if s > 0 else "minus"
            diag[f"ep_{key}"] = fit.state.diagnostics()
            diag[f"model_{key}"] = fit.model.to_dict()
    except (AMDError, np.linalg.LinAlgError, FloatingPointError) as err:
        error = f"{type(err).__name__}: {err}"
        log.warning("dimension %s: %s", name, error)
    bl1 = energy_plain - config.p1 * offset
    bl2 = energy_plain - config.p2 * offset
    direction = 0 if error else decide_direction(energies[1], energies[-1], bl1, bl2)
    finite = [e for e in energies.values() if np.isfinite(e)]
    if finite:
        # distance of the better monotone energy from E_plain - (N/2) log 2 pi
        diag["offset_discrepancy"] = float(min(finite) - (energy_plain - offset))
    return DimensionResult(dim, name, direction, float(energies[1]), float(energies[-1]),
                           float(exact[1]), float(exact[-1]), diag, error, fits)


def amd_detect(X, y, config: AMDConfig | None = None, names=None, jobs: int = 1,
               keep_fits: bool = False) -> MonotonicityReport:
    """Detect increasing / decreasing / non-monotone input dimensions.

    One plain GP fit provides the baselines; each dimension then gets two
    monotone fits (signs +1 and -1).  Dimensions run in index order, or on a
    ``jobs``-sized worker pool with results assembled in index order.
    """
    config = config or AMDConfig()
    X, y = _check_inputs(X, y)
    N, D = X.shape
    if N < 3:
        raise InvalidArgumentError("need at least three observations")
    _warn_if_unnormalized(X, y)
    names = list(names) if names is not None else [f"x{d}" for d in range(D)]
    if len(names) != D:
        raise InvalidArgumentError("names must have one entry per column")
    base_model, e_plain, starts = fit_plain(X, y, config)
    if jobs == 1 or D == 1:
        dims = [fit_dimension(X, y, d, starts, e_plain, config, names[d]) for d in range(D)]
    else:
        from joblib import Parallel, delayed
        dims = Parallel(n_jobs=jobs)(
            delayed(fit_dimension)(X, y, d, starts, e_plain, config, names[d])
            for d in range(D))
    if not keep_fits:
        for d in dims:
            d.fits = {}
    offset = gaussian_site_offset(N)
    diagnostics = {
        "n_plain_fits": 1,
        "n_plain_optima": len(starts),
        "n_monotone_fits": int(sum(d.diagnostics["n_monotone_fits"] for d in dims)),
        "plain_model": base_model.to_dict(),
        "config": config.to_dict(),
    }
    report = MonotonicityReport(np.array([d.direction for d in dims], dtype=int), N,
                                config.p1, config.p2, float(e_plain), offset, dims,
                                diagnostics, base_model)
    return report


def _limit(e_plain, e_mon, n):
    return float((e_plain - e_mon) / gaussian_site_offset(n))


def p1_upper_limit(X, y, dim: int, sign: int, config: AMDConfig | None = None) -> float:
    """Largest ``p1`` for which the ``sign`` assumption passes its energy test."""
    config = config or AMDConfig()
    X, y = _check_inputs(X, y)
    _, e_plain, starts = fit_plain(X, y, config)
    res = fit_dimension(X, y, dim, starts, e_plain, config, signs=(int(sign),))
    if res.error:
        raise AMDError(res.error)
    return _limit(e_plain, res.energy(sign), X.shape[0])


def p2_lower_limit(X, y, dim: int, sign: int, config: AMDConfig | None = None) -> float:
    """``p2`` must exceed this value to reject the opposite of ``sign``."""
    return p1_upper_limit(X, y, dim, -int(sign), config)


@dataclass(frozen=True)
class RobustnessRecord:
    """Region of (p1, p2) in which a dimension is detected as monotone.

    For direction ``s`` the region is ``p2_limit < p2 < p1 <= min(p1_limit, 1)``.
    """

    dim: int
    name: str
    direction_if_detected: int
    p1_limit: float
    p2_limit: float
    limit_plus: float
    limit_minus: float

    @property
    def p1_width(self) -> float:
        if self.direction_if_detected == 0:
            return 0.0
        return max(0.0, min(self.p1_limit, 1.0) - self.p2_limit)

    def contains(self, p1: float, p2: float) -> bool:
        return (self.direction_if_detected != 0 and p2 < p1
                and p1 <= min(self.p1_limit, 1.0) and p2 > self.p2_limit)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "name": self.name,
                "direction_if_detected": self.direction_if_detected,
                "p1_limit": self.p1_limit, "p2_limit": self.p2_limit,
                "p1_width": self.p1_width,
                "limit_plus": self.limit_plus, "limit_minus": self.limit_minus}


def robustness_from_report(report: MonotonicityReport) -> list[RobustnessRecord]:
    out = []
    for d in report.dims:
        lp = _limit(report.energy_plain, d.energy_plus, report.n)
        lm = _limit(report.energy_plain, d.energy_minus, report.n)
        if d.error or not (np.isfinite(lp) and np.isfinite(lm)):
            out.append(RobustnessRecord(d.dim, d.name, 0, lp, lm, lp, lm))
            continue
        if lm < min(lp, 1.0):
            rec = RobustnessRecord(d.dim, d.name, 1, lp, lm, lp, lm)
        elif lp < min(lm, 1.0):
            rec = RobustnessRecord(d.dim, d.name, -1, lm, lp, lp, lm)
        else:
            rec = RobustnessRecord(d.dim, d.name, 0, max(lp, lm), min(lp, lm), lp, lm)
        out.append(rec)
    return out


def robustness_region(X, y, config: AMDConfig | None = None, names=None, jobs: int = 1):
    """Per-dimension detection regions in the (p1, p2) plane.

    Returns ``(records, report)``; the report holds the energies the
    regions were derived from.
    """
    report = amd_detect(X, y, config, names, jobs)
    return robustness_from_report(report), report

"""Per-repetition synthetic experiments shared by the CLI and the tests.

Each function draws one data set from a seed and returns a flat dict, so
sweeps are plain loops (or a worker pool) over ``(cell, repetition)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amd import AMDConfig, amd_detect, gaussian_site_offset
from .data import SyntheticSpec, edge_indices, generate, lppd
from .ep import ep_predict
from .errors import NumericalError
from .gp import predict

__all__ = ["Cell", "parse_function", "rep_seed", "p1_limit_rep", "lppd_rep", "summarize"]


@dataclass(frozen=True)
class Cell:
    """One synthetic setting of a sweep."""

    family: str
    a: float
    n: int
    snr: float

    def spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(self.family, self.a, self.n, self.snr, seed)

    def key(self) -> tuple:
        return (self.family, self.a, self.n, self.snr)


def parse_function(text: str) -> tuple[str, float]:
    """``"sigmoid:2"`` -> ``("sigmoid", 2.0)``; a bare family means ``a = 1``."""
    family, _, a = text.partition(":")
    return family.strip().lower(), float(a) if a else 1.0


def rep_seed(master: int, rep: int) -> int:
    return int(master) + int(rep)


def _limits(report):
    d = report.dims[0]
    off = gaussian_site_offset(report.n)
    return (float((report.energy_plain - d.energy_plus) / off),
            float((report.energy_plain - d.energy_minus) / off))


def p1_limit_rep(cell: Cell, seed: int, config: AMDConfig) -> dict:
    """Detection and p1 / p2 limits on one synthetic draw.

    ``p1_limit`` refers to the true direction (the increasing one for the
    zero function) and ``p2_limit`` to its opposite.
    """
    spec = cell.spec(seed)
    data = generate(spec)
    report = amd_detect(data.X, data.y, config)
    lim_plus, lim_minus = _limits(report)
    truth = spec.truth
    p1, p2 = (lim_minus, lim_plus) if truth < 0 else (lim_plus, lim_minus)
    return {"family": cell.family, "a": cell.a, "n": cell.n, "snr": cell.snr,
            "seed": seed, "truth": truth, "direction": int(report.directions[0]),
            "p1_limit": p1, "p2_limit": p2,
            "limit_plus": lim_plus, "limit_minus": lim_minus}


def lppd_rep(cell: Cell, seed: int, config: AMDConfig, n_test: int | None = None,
             edge_fraction: float = 0.2, positive_only: bool = False) -> dict:
    """Edge-subset lppd of the plain, monotone and AMD-selected models.

    The monotone model assumes the true direction (increasing for the zero
    function).  The AMD model is the monotone fit of the detected direction,
    or the plain GP when nothing is detected; with ``positive_only`` only an
    increasing detection switches away from the plain GP.
    """
    spec = cell.spec(seed)
    data = generate(spec, n_test=cell.n if n_test is None else n_test)
    X, y = data.X, data.y
    edge = edge_indices(data.X_test, edge_fraction)
    Xe, ye = data.X_test[edge], data.y_test[edge]

    report = amd_detect(X, y, config, keep_fits=True)
    dim = report.dims[0]
    if dim.error:
        raise NumericalError(dim.error)
    plain = report.plain_model
    scores: dict = {"plain": lppd(predict(plain, X, y, Xe, full_cov=False), plain.noise_variance, ye)}
    for s, fit in dim.fits.items():
        pred = ep_predict(fit.state, fit.model, X, y, fit.virt, Xe, full_cov=False)
        scores[s] = lppd(pred, fit.model.noise_variance, ye)

    mono_sign = -1 if spec.truth < 0 else 1
    direction = int(report.directions[0])
    chosen = direction if direction != 0 and not (positive_only and direction < 0) else 0
    amd_score = scores[chosen] if chosen else scores["plain"]
    return {"family": cell.family, "a": cell.a, "n": cell.n, "snr": cell.snr,
            "seed": seed, "truth": spec.truth, "direction": direction,
            "amd_model": {1: "mono+", -1: "mono-", 0: "plain"}[chosen],
            "n_edge": int(len(edge)),
            "lppd_plain": scores["plain"], "lppd_mono": scores[mono_sign],
            "lppd_amd": amd_score,
            "delta_mono": scores[mono_sign] - scores["plain"],
            "delta_amd": amd_score - scores["plain"]}


def summarize(rows, value: str, keys=("family", "a", "n", "snr")) -> list[dict]:
    """Median and 5% / 95% quantiles of ``value`` per cell, in first-seen order."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    out = []
    for key, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        q05, med, q95 = np.quantile(v, [0.05, 0.5, 0.95])
        out.append({**dict(zip(keys, key)), "reps": len(v), "value": value,
                    "median": float(med), "q05": float(q05), "q95": float(q95)})
    return out

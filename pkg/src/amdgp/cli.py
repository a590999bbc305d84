"""Command-line interface.

Subcommands: ``detect``, ``synth``, ``sweep-p1``, ``lppd-compare`` and
``robustness``.  Settings come from built-in defaults, then an optional
``--config`` file, then explicit flags.  The config file may be a JSON object
of option names, a JSON report written by this tool (its ``"config"`` entry is
used) or a CSV written by this tool (its ``# config:`` first line is used).

Exit codes: 0 success, 1 numerical or convergence failure, 2 usage or I/O
error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .amd import AMDConfig, amd_detect, robustness_from_report
from .data import SyntheticSpec, generate, load_csv, normalize, save_csv
from .ep import EPConfig
from .errors import AMDError, InvalidArgumentError, NumericalError, OptimizationError
from .experiments import Cell, lppd_rep, p1_limit_rep, parse_function, rep_seed, summarize
from .gp import OptimConfig

log = logging.getLogger("amdgp")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

_MODEL_DEFAULTS = {
    "p1": 0.99, "p2": 0.5, "m_count": None, "placement": None, "kernel": "se",
    "seed": 0, "nu": 1e-6, "restarts": 5, "damping": 0.8, "ep_tol": 1e-6,
    "max_sweeps": 200, "starts": 1, "fixed_hyperparameters": False,
}
_DATA_DEFAULTS = {"data": None, "target": "-1", "no_header": False, "normalize": True}
_GRID_DEFAULTS = {"functions": ["linear:1", "sigmoid:1"], "n": [30], "snr": [0.9], "reps": 200}

DEFAULTS = {
    "detect": {**_MODEL_DEFAULTS, **_DATA_DEFAULTS, "output": None, "jobs": 1},
    "robustness": {**_MODEL_DEFAULTS, **_DATA_DEFAULTS, "output": None, "jobs": 1},
    "synth": {"family": "linear", "a": 1.0, "n": 30, "snr": 0.9, "seed": 0, "n_test": 0,
              "output": None, "test_output": None, "raw": False},
    "sweep-p1": {**_MODEL_DEFAULTS, **_GRID_DEFAULTS, "output": None, "summary": None,
                 "jobs": 1},
    "lppd-compare": {**_MODEL_DEFAULTS, **_GRID_DEFAULTS, "reps": 200, "n_test": None,
                     "edge_fraction": 0.2, "positive_only": False, "output": None,
                     "summary": None, "jobs": 1},
}
# keys that describe where results go rather than what is computed
_NOT_ECHOED = {"output", "summary", "test_output", "jobs", "config", "dry_run", "verbose"}


class UsageError(Exception):
    pass


# -- argument parsing ------------------------------------------------------


def _model_args(p):
    g = p.add_argument_group("detection")
    g.add_argument("--p1", type=float, help="acceptance coefficient (default 0.99)")
    g.add_argument("--p2", type=float, help="opposite-direction coefficient (default 0.5)")
    g.add_argument("--m-count", dest="m_count", type=_m_count,
                   help="virtual points per dimension: an integer, or a fraction of N "
                        "(default round(N/3))")
    g.add_argument("--placement", choices=["grid", "uniform", "subsample"],
                   help="virtual point placement (default grid in 1-D, uniform otherwise)")
    g.add_argument("--kernel", choices=["se", "linear", "se+linear"], help="covariance function")
    g.add_argument("--seed", type=int, help="seed for placement, restarts and data")
    g.add_argument("--nu", type=float, help="probit steepness of the virtual observations")
    g.add_argument("--restarts", type=int, help="plain GP optimizer restarts (default 5)")
    g.add_argument("--damping", type=float, help="EP damping (default 0.8)")
    g.add_argument("--ep-tol", dest="ep_tol", type=float, help="EP convergence tolerance")
    g.add_argument("--max-sweeps", dest="max_sweeps", type=int, help="EP sweep limit")
    g.add_argument("--starts", type=int,
                   help="plain-GP optima the monotone optimizer starts from (default 1)")
    g.add_argument("--fixed-hyperparameters", dest="fixed_hyperparameters",
                   action="store_true", help="reuse plain-GP hyperparameters for monotone fits")


def _data_args(p):
    p.add_argument("data", nargs="?", help="CSV or whitespace-delimited table")
    p.add_argument("--target", help="target column name or position (default: last)")
    p.add_argument("--no-header", dest="no_header", action="store_true",
                   help="the first row holds data")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="use the columns as given")


def _grid_args(p):
    p.add_argument("--functions", nargs="+",
                   help="function families as family[:a], e.g. linear:1 sigmoid:2")
    p.add_argument("--n", type=int, nargs="+", help="training set sizes")
    p.add_argument("--snr", type=float, nargs="+", help="signal variance fractions")
    p.add_argument("--reps", type=int, help="repetitions per cell (default 200)")


def _common_args(p, jobs=True):
    p.add_argument("--config", help="JSON config, or a JSON/CSV output of an earlier run")
    p.add_argument("--output", "-o", help="output file")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--dry-run", dest="dry_run", action="store_true",
                       help="validate the configuration and print the planned fit count")
    p.add_argument("--verbose", "-v", action="store_true")


def _m_count(text):
    v = float(text)
    if v.is_integer() and "." not in text:
        return int(v)
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amdgp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("detect", argument_default=S,
                       help="detect monotone input dimensions of a data set")
    _data_args(p)
    _model_args(p)
    _common_args(p)

    p = sub.add_parser("robustness", argument_default=S,
                       help="(p1, p2) regions in which each dimension is detected")
    _data_args(p)
    _model_args(p)
    _common_args(p)

    p = sub.add_parser("synth", argument_default=S, help="write a synthetic data set")
    p.add_argument("--family", choices=["linear", "sigmoid"])
    p.add_argument("--a", type=float, help="slope or steepness")
    p.add_argument("--n", type=int, help="training samples")
    p.add_argument("--snr", type=float, help="signal variance fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-test", dest="n_test", type=int, help="test samples (default 0)")
    p.add_argument("--test-output", dest="test_output", help="file for the test samples")
    p.add_argument("--raw", action="store_true", help="write unnormalized values")
    _common_args(p, jobs=False)

    p = sub.add_parser("sweep-p1", argument_default=S,
                       help="distribution of the p1 upper limit over synthetic draws")
    _grid_args(p)
    _model_args(p)
    p.add_argument("--summary", help="CSV file for per-cell median and 5%%/95%% quantiles")
    _common_args(p)

    p = sub.add_parser("lppd-compare", argument_default=S,
                       help="edge lppd of plain, monotone and AMD-selected GPs")
    _grid_args(p)
    _model_args(p)
    p.add_argument("--n-test", dest="n_test", type=int, help="test samples (default N)")
    p.add_argument("--edge-fraction", dest="edge_fraction", type=float,
                   help="outermost fraction of the test set scored (default 0.2)")
    p.add_argument("--positive-only", dest="positive_only", action="store_true",
                   help="AMD may only switch to the increasing model")
    p.add_argument("--summary", help="CSV file for per-cell medians and quantiles")
    _common_args(p)
    return parser


# -- configuration ---------------------------------------------------------


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err.strerror}") from None
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    try:
        if first.startswith("#"):
            body = first.lstrip("#").strip()
            if not body.startswith("config:"):
                raise UsageError(f"{path}: first line is not a '# config:' line")
            cfg = json.loads(body[len("config:"):])
        else:
            cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: invalid JSON ({err.msg})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    if isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]
    return cfg


def resolve_config(command: str, explicit: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if explicit.get("config"):
        loaded = read_config_file(explicit["config"])
        loaded.pop("command", None)
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in explicit.items() if k in cfg})
    return cfg


def echo(command: str, cfg: dict) -> dict:
    """The part of the config that determines the results."""
    return {"command": command, **{k: v for k, v in cfg.items() if k not in _NOT_ECHOED}}


def amd_config(cfg: dict) -> AMDConfig:
    try:
        return AMDConfig(
            p1=float(cfg["p1"]), p2=float(cfg["p2"]), m_count=cfg["m_count"],
            placement=cfg["placement"], seed=int(cfg["seed"]), kernel=cfg["kernel"],
            nu=float(cfg["nu"]),
            ep=EPConfig(damping=float(cfg["damping"]), tol=float(cfg["ep_tol"]),
                        max_sweeps=int(cfg["max_sweeps"]), starts=int(cfg["starts"]),
                        optimize_hyperparameters=not cfg["fixed_hyperparameters"]),
            optim=OptimConfig(restarts=int(cfg["restarts"]), seed=int(cfg["seed"])),
        )
    except (TypeError, KeyError) as err:
        raise UsageError(f"invalid detection settings: {err}") from None


def _cells(cfg) -> list[Cell]:
    cells = []
    for fn in cfg["functions"]:
        try:
            family, a = parse_function(fn)
        except ValueError:
            raise UsageError(f"cannot parse function {fn!r}; expected family[:a]") from None
        for n in cfg["n"]:
            for snr in cfg["snr"]:
                cell = Cell(family, a, int(n), float(snr))
                cell.spec(0)  # validates the combination
                cells.append(cell)
    if int(cfg["reps"]) < 1:
        raise UsageError("reps must be positive")
    return cells


# -- output helpers --------------------------------------------------------


def _metadata() -> dict:
    return {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "version": __version__}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, payload: dict):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as err:
        raise UsageError(f"cannot write {path}: {err.strerror}") from None


def write_rows(path, rows: list[dict], config: dict):
    """CSV with a ``# config:`` first line; ``path`` None or ``-`` is stdout."""
    fields = list(rows[0]) if rows else []
    fh = sys.stdout if path in (None, "-") else None
    try:
        if fh is None:
            fh = open(path, "w", newline="")
        fh.write("# config: " + json.dumps(_jsonable(config), sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})
    except OSError as err:
        raise UsageError(f"cannot write {path}: {err.strerror}") from None
    finally:
        if fh is not None and fh is not sys.stdout:
            fh.close()


def _load_data(cfg):
    if not cfg.get("data"):
        raise UsageError("a data file is required")
    target = cfg["target"]
    target = int(target) if str(target).lstrip("-").isdigit() else target
    X, y, names = load_csv(cfg["data"], target, header=not cfg["no_header"])
    if cfg["normalize"]:
        X, y, _ = normalize(X, y, names)
    return X, y, names


def _run_pool(fn, tasks, jobs):
    if jobs == 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(delayed(fn)(*t) for t in tasks)


# -- subcommands -----------------------------------------------------------


def cmd_detect(cfg, dry_run=False):
    X, y, names = _load_data(cfg)
    config = amd_config(cfg)
    D = X.shape[1]
    if dry_run:
        print(f"planned fits: {2 * D + 1} (1 plain + {2 * D} monotone) on N={X.shape[0]}, D={D}")
        return EXIT_OK
    t0 = time.perf_counter()
    report = amd_detect(X, y, config, names=names, jobs=int(cfg["jobs"]))
    for line in report.summary_lines():
        print(line)
    if cfg["output"]:
        meta = _metadata()
        meta["elapsed_seconds"] = time.perf_counter() - t0
        write_json(cfg["output"], {"config": echo("detect", cfg), "report": report.to_dict(),
                                   "metadata": meta})
    return EXIT_OK


def cmd_robustness(cfg, dry_run=False):
    X, y, names = _load_data(cfg)
    config = amd_config(cfg)
    D = X.shape[1]
    if dry_run:
        print(f"planned fits: {2 * D + 1} (1 plain + {2 * D} monotone) on N={X.shape[0]}, D={D}")
        return EXIT_OK
    report = amd_detect(X, y, config, names=names, jobs=int(cfg["jobs"]))
    records = robustness_from_report(report)
    rows = [r.to_dict() for r in records]
    for r in rows:
        print(f"{r['name']}: direction {r['direction_if_detected']:+d}  "
              f"p1 <= {r['p1_limit']:.4f}  p2 > {r['p2_limit']:.4f}  width {r['p1_width']:.4f}")
    out = cfg["output"]
    if out and str(out).endswith(".json"):
        write_json(out, {"config": echo("robustness", cfg), "regions": rows,
                         "report": report.to_dict(), "metadata": _metadata()})
    elif out:
        write_rows(out, rows, echo("robustness", cfg))
    return EXIT_OK


def cmd_synth(cfg, dry_run=False):
    spec = SyntheticSpec(cfg["family"], float(cfg["a"]), int(cfg["n"]), float(cfg["snr"]),
                         int(cfg["seed"]))
    data = generate(spec, n_test=int(cfg["n_test"]))
    if cfg["raw"]:
        X, y = data.info.denormalize_X(data.X), data.info.denormalize_y(data.y)
    else:
        X, y = data.X, data.y
    _save_with_config(cfg["output"], X, y, echo("synth", cfg))
    if data.X_test is not None:
        Xt, yt = data.X_test, data.y_test
        if cfg["raw"]:
            Xt, yt = data.info.denormalize_X(Xt), data.info.denormalize_y(yt)
        if cfg["test_output"]:
            _save_with_config(cfg["test_output"], Xt, yt, echo("synth", cfg))
        else:
            log.warning("test samples generated but --test-output not given; not written")
    return EXIT_OK


def _save_with_config(path, X, y, config):
    header = "# config: " + json.dumps(_jsonable(config), sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(header + "x0,y\n")
        for xi, yi in zip(X[:, 0] if X.ndim == 2 else X, y):
            sys.stdout.write(f"{float(xi)!r},{float(yi)!r}\n")
        return
    try:
        save_csv(path, X, y)
        body = Path(path).read_text()
        Path(path).write_text(header + body)
    except OSError as err:
        raise UsageError(f"cannot write {path}: {err.strerror}") from None


def _sweep(cfg, dry_run, fn, value, label, **extra):
    cells = _cells(cfg)
    config = amd_config(cfg)
    reps = int(cfg["reps"])
    if dry_run:
        print(f"planned fits: {len(cells) * reps * 3} ({len(cells)} cells x {reps} reps x 3)")
        return EXIT_OK
    keys = [(cell, r) for cell in cells for r in range(reps)]
    tasks = [(cell, rep_seed(cfg["seed"], r), config) for cell, r in keys]
    results = _run_pool(_Call(fn, extra), tasks, int(cfg["jobs"]))
    rows = [{"rep": r, **res} for (_, r), res in zip(keys, results)]
    conf = echo(label, cfg)
    if cfg["output"]:
        write_rows(cfg["output"], rows, conf)
    summaries = [s for v in value for s in summarize(rows, v)]
    for s in summaries:
        print(f"{s['family']}(a={s['a']:g}) N={s['n']} snr={s['snr']:g} {s['value']}: "
              f"median {s['median']:.4f}  [{s['q05']:.4f}, {s['q95']:.4f}]  reps {s['reps']}")
    if cfg["summary"]:
        write_rows(cfg["summary"], summaries, conf)
    return EXIT_OK


class _Call:
    # picklable partial for the worker pool
    def __init__(self, fn, extra):
        self.fn, self.extra = fn, extra

    def __call__(self, cell, seed, config):
        return self.fn(cell, seed, config, **self.extra)


def cmd_sweep_p1(cfg, dry_run=False):
    return _sweep(cfg, dry_run, p1_limit_rep, ["p1_limit"], "sweep-p1")


def cmd_lppd_compare(cfg, dry_run=False):
    if not 0 < float(cfg["edge_fraction"]) < 1:
        raise UsageError("edge-fraction must lie in (0, 1)")
    return _sweep(cfg, dry_run, lppd_rep, ["delta_mono", "delta_amd"], "lppd-compare",
                  n_test=cfg["n_test"], edge_fraction=float(cfg["edge_fraction"]),
                  positive_only=bool(cfg["positive_only"]))


COMMANDS = {
    "detect": cmd_detect,
    "robustness": cmd_robustness,
    "synth": cmd_synth,
    "sweep-p1": cmd_sweep_p1,
    "lppd-compare": cmd_lppd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    explicit = vars(args).copy()
    command = explicit.pop("command")
    dry_run = explicit.pop("dry_run", False)
    logging.basicConfig(level=logging.INFO if explicit.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(command, explicit)
        return COMMANDS[command](cfg, dry_run)
    except (UsageError, InvalidArgumentError, OSError) as err:
        print(f"amdgp {command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, OptimizationError, AMDError, np.linalg.LinAlgError) as err:
        print(f"amdgp {command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

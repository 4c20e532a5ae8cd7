"""Command-line front end.

Every subcommand resolves its options from built-in defaults, then an
optional flat TOML file (``--config``), then explicit flags, and embeds the
resolved options in its output so a run can be repeated exactly. Outputs
carry no timestamps; identical inputs give byte-identical files.

Exit codes: 0 success, 2 usage, 3 input/output, 4 configuration,
5 numerical failure. Errors and warnings go to stderr as one JSON object
per line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import EstimationError, all_baselines, maff_logistic, maff_or_table, maff_power_logistic, maff_rr_table
from .data import DataError, read_survey_csv, summarize, write_survey_csv
from .gmodel import g1_basis, g2_basis
from .kernels import KernelError, estimate_dispersion, kernel_from_name, read_false_negative_csv, read_wbc_csv
from .likelihood import FitConfig, InfeasibleSupportError, fit
from .resampling import BootstrapError, bootstrap_se
from .sensitivity import SensitivityParams, sensitivity_fit, sensitivity_grid
from .simulate import ScenarioConfig, generate_dataset

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = ["run", "main", "EXIT_OK", "EXIT_USAGE", "EXIT_IO", "EXIT_CONFIG", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4, 5

UPPER_BOUND_NOTE = "fever killing above 50% is considered implausible; read 50% as an upper bound"


class CliError(Exception):
    code = 1
    kind = "error"


class UsageError(CliError):
    code, kind = EXIT_USAGE, "usage"


class InputError(CliError):
    code, kind = EXIT_IO, "io"


class ConfigError(CliError):
    code, kind = EXIT_CONFIG, "config"


class NumericalError(CliError):
    code, kind = EXIT_NUMERICAL, "numerical"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(v):
    if isinstance(v, (bool, np.bool_)):
        return v
    raise ValueError(f"expected true/false, got {v!r}")


def _opt_float(v):
    return None if v is None else float(v)


# name -> (default, coercion, help)
COMMON = {
    "seed": (0, int, "random seed"),
    "threads": (None, int, "worker threads (default: number of CPUs)"),
}
FIT = {
    "kernel": ("poisson", str, "measurement model: exact, poisson (m1), negbin (m2), wbc-negbin (m3)"),
    "dispersion": (6.0, float, "negative-binomial dispersion r"),
    "wbc_csv": (None, str, "CSV 'wbc,prob' replacing the default WBC distribution"),
    "beta": (1.0, float, "fraction of parasites surviving a non-malarial fever"),
    "c0": (1.0, float, "penalty constant; 0 gives the unpenalized fit"),
    "k": (101, int, "number of grid points"),
    "grid_max": (None, _opt_float, "upper grid limit in parasites/ul (default: from data)"),
    "grid_expand": (1.2, float, "grid reaches this multiple of the largest observation"),
    "m1": (4, int, "spline df for g1"),
    "m2": (3, int, "spline df for g2"),
    "multistart": (False, _bool, "restart from several initial mixing proportions"),
    "maxiter": (2000, int, "optimizer iteration cap"),
    "gtol": (1e-6, float, "optimizer gradient tolerance"),
}
BOOT = {
    "bootstrap": (0, int, "bootstrap replicates for standard errors (0 = none)"),
    "bootstrap_csv": (None, str, "write bootstrap replicate estimates to this CSV"),
}
SWEEP = {
    "kernels": ("m1,m2,m3", str, "comma-separated kernels to sweep"),
    "killing_max": (0.95, float, "largest assumed fever-killing fraction 1 - beta"),
    "killing_step": (0.05, float, "step of the fever-killing sequence"),
}
SENS = {
    "delta1_max": (1.0 / 40000.0, float, "largest tilt delta1 (per parasite/ul)"),
    "tau_max": (1.06, float, "largest probability ratio tau"),
    "steps": (5, int, "grid points per axis"),
}
SIM = {
    "scenario": ("expfamily", str, "expfamily or nonexpfamily"),
    "n": (1000, int, "number of children"),
    "q": (0.8, float, "zero-density mass of g1"),
    "beta": (1.0, float, "fraction of parasites surviving a non-malarial fever"),
    "kernel": ("poisson", str, "measurement model"),
    "dispersion": (6.0, float, "negative-binomial dispersion r"),
    "mu1": (200.0, float, "g1 truncated-normal location"),
    "sigma1": (200.0, float, "g1 truncated-normal scale"),
    "mu2": (600.0, float, "g2 truncated-normal location"),
    "sigma2": (600.0, float, "g2 truncated-normal scale"),
    "q1": (1.0 / 8.0, float, "nonexpfamily: zero mass of g1"),
    "q2": (0.7, float, "nonexpfamily: truncated-normal share"),
    "prevalence": (0.1, float, "target fever prevalence"),
    "maff": (0.5, float, "target attributable fraction"),
    "truth": (None, str, "ground-truth JSON path (default: truth.json next to the output)"),
}
DISP = {
    "scale": (40.0, float, "parasites/ul per counted parasite"),
    "r_min": (0.1, float, "lower search bound for r"),
    "r_max": (1e4, float, "upper search bound for r"),
}

COMMANDS = {
    "summary": ({}, "2x2 table of fever by zero / positive density"),
    "fit": ({**FIT, **BOOT}, "fit the g-model and report the attributable fraction as JSON"),
    "baselines": ({**BOOT}, "classical estimators as a CSV table"),
    "sweep-beta": ({k: v for k, v in FIT.items() if k not in ("beta", "kernel")} | SWEEP,
                   "attributable fraction over a sequence of fever-killing sizes"),
    "simulate": (SIM, "write a synthetic survey CSV and its ground truth"),
    "sensitivity": ({**FIT, **SENS, **BOOT}, "(delta1, tau) sensitivity grid as CSV"),
    "dispersion": (DISP, "negative-binomial dispersion from false-negative slide counts"),
}
# options that do not change results and are left out of embedded configs
NOT_EMBEDDED = {"threads"}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maff", description="Malaria-attributable fever fraction estimation.")
    parser.add_argument("--version", action="version", version=f"maff {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (opts, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        if name != "simulate":
            p.add_argument("input", help="input CSV")
        p.add_argument("-o", "--output", default="-", required=(name == "simulate"),
                       help="output file ('-' for stdout)")
        p.add_argument("--config", help="flat TOML file of option values; flags take precedence")
        if name in ("fit", "sensitivity"):
            p.add_argument("--dump-basis", help="write the spline basis matrices to this CSV")
            p.add_argument("--dump-densities", help="write fitted g1, g2 masses to this CSV")
        for key, (default, _, help_) in {**COMMON, **opts}.items():
            if key == "multistart":
                p.add_argument(_flag(key), action="store_true", default=argparse.SUPPRESS, help=help_)
            else:
                shown = help_ if default is None or "default" in help_ else f"{help_} (default: {default})"
                p.add_argument(_flag(key), default=argparse.SUPPRESS, help=shown)
    return parser


def resolve_options(command: str, flags: dict, config_path: str | None) -> dict:
    """Defaults, then TOML file, then flags; values coerced and checked."""
    table = {**COMMON, **COMMANDS[command][0]}
    values = {k: v[0] for k, v in table.items()}
    if config_path:
        try:
            with open(config_path, "rb") as fh:
                loaded = tomllib.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(table))
        if unknown:
            raise ConfigError(f"{config_path}: unknown keys for '{command}': {', '.join(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in flags.items() if k in table})
    out = {}
    for key, val in values.items():
        conv = table[key][1]
        try:
            out[key] = None if val is None else conv(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"option {key}: {exc}") from None
    if out["threads"] is None:
        out["threads"] = os.cpu_count() or 1
    if out["threads"] < 1:
        raise ConfigError("threads must be positive")
    return out


# --- helpers -----------------------------------------------------------------------


def _load_survey(path):
    try:
        return read_survey_csv(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except DataError as exc:
        raise InputError(f"{path}: {exc}") from None


def _kernel(opts, name=None):
    wbc = None
    if opts.get("wbc_csv"):
        try:
            wbc = read_wbc_csv(opts["wbc_csv"])
        except OSError as exc:
            raise InputError(f"cannot read {opts['wbc_csv']}: {exc}") from None
    return kernel_from_name(name or opts["kernel"], r=opts["dispersion"], wbc=wbc)


def _fit_config(opts, **override) -> FitConfig:
    kw = dict(k=opts["k"], grid_max=opts["grid_max"], grid_expand=opts["grid_expand"],
              m1=opts["m1"], m2=opts["m2"], c0=opts["c0"], multistart=opts["multistart"],
              maxiter=opts["maxiter"], gtol=opts["gtol"], seed=opts["seed"])
    if "kernel" in opts:
        kw["kernel"] = _kernel(opts)
    if "beta" in opts:
        kw["beta"] = opts["beta"]
    kw.update(override)
    return FitConfig(**kw)


def _embedded(command, opts, extra=None):
    cfg = {k: v for k, v in opts.items() if k not in NOT_EMBEDDED}
    out = {"command": command, "version": __version__, "options": cfg}
    if extra:
        out.update(extra)
    return out


def _header_lines(meta) -> list[str]:
    return [f"maff {meta['version']} {meta['command']}", "config: " + json.dumps(meta, sort_keys=True)]


def _header(meta) -> str:
    return "".join(f"# {line}\n" for line in _header_lines(meta))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _csv_text(header, rows, columns) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None


def _diag(level, kind, message, **extra):
    sys.stderr.write(json.dumps({"level": level, "kind": kind, "message": message, **extra}, sort_keys=True) + "\n")


def _bootstrap(dataset, estimator, opts, label):
    try:
        return bootstrap_se(dataset, estimator, opts["bootstrap"], opts["seed"], opts["threads"])
    except BootstrapError as exc:
        _diag("warning", "numerical", f"{label}: {exc}")
        return exc.result


def _boot_rows(name, res):
    return [{"estimator": name, "replicate": i, "estimate": float(v)} for i, v in enumerate(res.replicates)]


def _maybe_dump_boot(opts, meta, rows):
    if opts.get("bootstrap_csv"):
        _write(opts["bootstrap_csv"], _csv_text(_header(meta), rows, ["estimator", "replicate", "estimate"]))


def _converged_maff(fitter):
    def est(d):
        r = fitter(d)
        return r.maff_hat if r.converged else float("nan")
    return est


def _dump_basis(path, grid, cfg, meta):
    Q1 = g1_basis(grid, cfg.m1).entries
    Q2 = g2_basis(grid, cfg.m2).entries
    cols = ["grid_value", "scaled_value"] + [f"q1_{i + 1}" for i in range(cfg.m1)] + [f"q2_{i + 1}" for i in range(cfg.m2)]
    rows = []
    for j in range(grid.k):
        vals = [float(grid.values[j]), float(grid.scaled[j]), *map(float, Q1[j]), *map(float, Q2[j])]
        rows.append(dict(zip(cols, vals)))
    _write(path, _csv_text(_header(meta), rows, cols))


def _dump_densities(path, result, meta):
    rows = [{"component": "g1", "grid_value": float(d), "mass": float(m)} for d, m in zip(result.grid, result.g1)]
    rows += [{"component": "g2", "grid_value": float(result.beta * d), "mass": float(m)}
             for d, m in zip(result.grid, result.g2)]
    _write(path, _csv_text(_header(meta), rows, ["component", "grid_value", "mass"]))


# --- subcommands -------------------------------------------------------------------


def cmd_summary(args, opts):
    ds = _load_survey(args.input)
    s = summarize(ds)
    meta = _embedded("summary", opts, {"input": args.input})
    rows = [
        {"group": "afebrile", "zero": s.n_a0, "positive": s.n_a1, "total": s.n_afebrile,
         "positive_share": s.n_a1 / s.n_afebrile if s.n_afebrile else float("nan")},
        {"group": "febrile", "zero": s.n_f0, "positive": s.n_f1, "total": s.n_febrile,
         "positive_share": s.n_f1 / s.n_febrile if s.n_febrile else float("nan")},
        {"group": "total", "zero": s.n_a0 + s.n_f0, "positive": s.n_a1 + s.n_f1, "total": s.n,
         "positive_share": (s.n_a1 + s.n_f1) / s.n},
    ]
    _write(args.output, _csv_text(_header(meta), rows, ["group", "zero", "positive", "total", "positive_share"]))


def _run_fit(args, opts, sensitivity=None):
    ds = _load_survey(args.input)
    cfg = _fit_config(opts)
    grid = cfg.grid_for(ds)
    if sensitivity is None:
        fitter = lambda d: fit(d, cfg, grid)  # noqa: E731
    else:
        fitter = lambda d: sensitivity_fit(d, cfg, sensitivity, grid)  # noqa: E731
    try:
        result = fitter(ds)
    except InfeasibleSupportError as exc:
        raise NumericalError(str(exc)) from None
    if not result.converged:
        _diag("warning", "numerical", "optimizer did not converge", message_detail=result.message)
    return ds, cfg, grid, fitter, result


def cmd_fit(args, opts):
    ds, cfg, grid, fitter, result = _run_fit(args, opts)
    meta = _embedded("fit", opts, {"input": args.input, "fit_config": cfg.to_dict()})
    out = {**meta, "n": ds.n, "result": result.to_dict()}
    if opts["bootstrap"]:
        boot = _bootstrap(ds, _converged_maff(fitter), opts, "fit")
        out["bootstrap"] = boot.to_dict()
        _maybe_dump_boot(opts, meta, _boot_rows("gmodel", boot))
    if args.dump_basis:
        _dump_basis(args.dump_basis, grid, cfg, meta)
    if args.dump_densities:
        _dump_densities(args.dump_densities, result, meta)
    _write(args.output, json.dumps(out, indent=2, sort_keys=True) + "\n")


BASELINE_FUNCS = {
    "RR": lambda d: maff_rr_table(summarize(d)).estimate,
    "OR": lambda d: maff_or_table(summarize(d)).estimate,
    "L": lambda d: maff_logistic(d).estimate,
    "P": lambda d: maff_power_logistic(d).estimate,
}


def cmd_baselines(args, opts):
    ds = _load_survey(args.input)
    meta = _embedded("baselines", opts, {"input": args.input})
    rows, boot_rows = [], []
    for est in all_baselines(ds):
        row = {"estimator": est.name, "estimate": float(est.estimate),
               "out_of_range": bool(np.isfinite(est.estimate) and est.out_of_range),
               "se": float("nan"), "failures": 0, "error": est.details.get("error", "")}
        if opts["bootstrap"] and np.isfinite(est.estimate):
            boot = _bootstrap(ds, BASELINE_FUNCS[est.name], opts, est.name)
            row["se"], row["failures"] = boot.se, boot.failures
            boot_rows += _boot_rows(est.name, boot)
        rows.append(row)
    _maybe_dump_boot(opts, meta, boot_rows)
    _write(args.output, _csv_text(_header(meta), rows,
                                  ["estimator", "estimate", "out_of_range", "se", "failures", "error"]))


def _killing_sequence(opts):
    step, top = opts["killing_step"], opts["killing_max"]
    if not 0 < step <= 1 or not 0 <= top < 1:
        raise ConfigError("need 0 < killing_step <= 1 and 0 <= killing_max < 1")
    n = int(math.floor(top / step + 1e-9))
    return [round(i * step, 10) for i in range(n + 1)]


def cmd_sweep_beta(args, opts):
    ds = _load_survey(args.input)
    names = [s.strip() for s in opts["kernels"].split(",") if s.strip()]
    if not names:
        raise ConfigError("no kernels to sweep")
    kernels = {name: _kernel(opts, name) for name in names}
    killing = _killing_sequence(opts)
    jobs = [(name, kill) for kill in killing for name in names]

    def one(job):
        name, kill = job
        cfg = _fit_config(opts, kernel=kernels[name], beta=1.0 - kill)
        try:
            r = fit(ds, cfg)
            return r.maff_hat, r.converged
        except InfeasibleSupportError:
            return float("nan"), False

    if opts["threads"] > 1:
        with ThreadPoolExecutor(max_workers=opts["threads"]) as pool:
            results = dict(zip(jobs, pool.map(one, jobs)))
    else:
        results = {job: one(job) for job in jobs}
    cols = ["fever_killing", "beta"]
    for name in names:
        cols += [f"maff_{name}", f"converged_{name}"]
    rows = []
    for kill in killing:
        row = {"fever_killing": kill, "beta": round(1.0 - kill, 10)}
        for name in names:
            row[f"maff_{name}"], row[f"converged_{name}"] = results[(name, kill)]
        rows.append(row)
    meta = _embedded("sweep-beta", opts, {"input": args.input, "note": UPPER_BOUND_NOTE})
    header = _header(meta) + f"# note: {UPPER_BOUND_NOTE}\n"
    _write(args.output, _csv_text(header, rows, cols))


def cmd_sensitivity(args, opts):
    ds = _load_survey(args.input)
    cfg = _fit_config(opts)
    if opts["steps"] < 1 or opts["delta1_max"] < 0 or opts["tau_max"] < 1:
        raise ConfigError("need steps >= 1, delta1_max >= 0 and tau_max >= 1")
    cells = sensitivity_grid(ds, cfg, (0.0, opts["delta1_max"]), (1.0, opts["tau_max"]),
                             opts["steps"], threads=opts["threads"])
    meta = _embedded("sensitivity", opts, {"input": args.input, "fit_config": cfg.to_dict()})
    rows = [c.as_row() for c in cells]
    cols = ["delta1", "delta1_scaled", "tau", "maff", "converged", "infeasible", "error"]
    if opts["bootstrap"]:
        grid = cfg.grid_for(ds)
        boot_rows = []
        for row in rows:
            params = SensitivityParams(row["delta1"], row["tau"])
            est = _converged_maff(lambda d, p=params: sensitivity_fit(d, cfg, p, grid))
            boot = _bootstrap(ds, est, opts, f"cell delta1={row['delta1']!r} tau={row['tau']!r}")
            row["se"] = boot.se
            boot_rows += [{**b, "estimator": f"{row['delta1']!r}:{row['tau']!r}"} for b in _boot_rows("", boot)]
        cols.append("se")
        _maybe_dump_boot(opts, meta, boot_rows)
    if args.dump_basis or args.dump_densities:
        _, _, grid, _, result = _run_fit(args, opts)
        if args.dump_basis:
            _dump_basis(args.dump_basis, grid, cfg, meta)
        if args.dump_densities:
            _dump_densities(args.dump_densities, result, meta)
    for c in cells:
        if c.error:
            _diag("warning", "numerical", f"cell delta1={c.delta1!r} tau={c.tau!r} failed: {c.error}")
    _write(args.output, _csv_text(_header(meta), rows, cols))


def cmd_simulate(args, opts):
    kernel = kernel_from_name(opts["kernel"], r=opts["dispersion"])
    keys = ("scenario", "n", "q", "beta", "mu1", "sigma1", "mu2", "sigma2", "q1", "q2", "prevalence", "maff", "seed")
    config = ScenarioConfig(kernel=kernel, **{k: opts[k] for k in keys})
    dataset, truth = generate_dataset(config)
    truth_path = opts["truth"] or str(Path(args.output).with_name("truth.json"))
    meta = _embedded("simulate", opts, {"scenario_config": config.to_dict()})
    buf = io.StringIO()
    write_survey_csv(dataset, buf, header_comment="\n".join(_header_lines(meta)))
    _write(args.output, buf.getvalue())
    _write(truth_path, json.dumps({**meta, "truth": truth.to_dict()}, indent=2, sort_keys=True) + "\n")


def cmd_dispersion(args, opts):
    try:
        records = read_false_negative_csv(args.input)
    except FileNotFoundError:
        raise InputError(f"no such file: {args.input}") from None
    except (OSError, IndexError) as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from None
    est = estimate_dispersion(records, scale=opts["scale"], bounds=(opts["r_min"], opts["r_max"]))
    if est.at_bound:
        _diag("warning", "numerical", "dispersion estimate is at a search bound", r=est.r)
    out = {**_embedded("dispersion", opts, {"input": args.input}),
           "r_hat": est.r, "loglik": est.loglik, "n_records": est.n_records,
           "at_bound": est.at_bound, "bounds": list(est.bounds)}
    _write(args.output, json.dumps(out, indent=2, sort_keys=True) + "\n")


HANDLERS = {
    "summary": cmd_summary,
    "fit": cmd_fit,
    "baselines": cmd_baselines,
    "sweep-beta": cmd_sweep_beta,
    "simulate": cmd_simulate,
    "sensitivity": cmd_sensitivity,
    "dispersion": cmd_dispersion,
}


def run(argv=None) -> int:
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _diag("error", exc.kind, str(exc), exit_code=exc.code)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        opts = resolve_options(args.command, vars(args), args.config)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            HANDLERS[args.command](args, opts)
        for w in caught:
            _diag("warning", "input", str(w.message))
        return EXIT_OK
    except CliError as exc:
        err = exc
    except (KernelError, EstimationError) as exc:
        err = ConfigError(str(exc)) if isinstance(exc, KernelError) else NumericalError(str(exc))
    except DataError as exc:
        err = InputError(str(exc))
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        err = NumericalError(f"{type(exc).__name__}: {exc}")
    except ValueError as exc:
        err = ConfigError(str(exc))
    _diag("error", err.kind, str(err), exit_code=err.code)
    return err.code


def main() -> None:
    sys.exit(run())

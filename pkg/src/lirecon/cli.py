"""Command-line entry point.

Every run writes its outputs plus ``manifest.json`` into ``--out``. Exit
codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .de import DeError, DeSettings
from .ecm import reference_parameters
from .fit import (DEFAULT_FIT_CYCLES, FitObjectiveSpec, default_ecm_bounds, fit_ecm, fit_relaxation,
                  fitted_parameters, read_fit_config, write_fit_config, write_fit_report)
from .io import file_digest, read_manifest, read_params_file, write_manifest
from .life.cv import (CvError, default_grid, kde_life_distribution, nested_cv, parse_grid,
                      write_cv_report)
from .life.data import DataError, parse_cycling_csv, parse_cycling_dir, write_cycling_dir
from .life.features import cycle_life_label, dqdv
from .life.models import KINDS
from .protocol import parse_protocol_file, reconditioning_protocol
from .recovery import (TARGETS, fit_recovery_regression, importance_ranking, parse_recovery_csv,
                       shipped_recovery_records, write_metrics_report, write_regression_report,
                       write_shap_report)
from .simulate import (IntegrationSettings, SimulationError, SimulationTrace,
                       extract_cycle_capacities, run_protocol)
from .synthetic import SyntheticFleetSpec, gen_synthetic_fleet, read_fleet_spec, write_fleet_spec

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
DEFAULT_SEED = 0


class NumericalFailure(RuntimeError):
    pass


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(a, out: Path):
    params = read_params_file(a.params) if a.params else reference_parameters()
    protocol = parse_protocol_file(a.protocol) if a.protocol else reconditioning_protocol()
    settings = IntegrationSettings(method=a.method, rtol=a.rtol, atol=a.atol)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            trace = run_protocol(params, params.initial_state(), protocol, settings,
                                 a.max_repetitions)
    except SimulationError as exc:
        if exc.partial is not None:
            exc.partial.to_csv(out / "trace_partial.csv")
        raise NumericalFailure(str(exc)) from None
    trace.to_csv(out / "trace.csv")
    with open(out / "capacities.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle_index", "charge_Ah", "discharge_Ah"])
        for c, cap in sorted(extract_cycle_capacities(trace).items()):
            w.writerow([c, "" if cap.charge_ah is None else repr(cap.charge_ah),
                        "" if cap.discharge_ah is None else repr(cap.discharge_ah)])
    total = trace.total_lithium
    (out / "summary.txt").write_text(
        f"rows {len(trace)}\nduration_s {float(trace.t[-1] - trace.t[0])!r}\n"
        f"total_lithium_drift_Ah {float(total[-1] - total[0])!r}\n")


def cmd_fit_ecm(a, out: Path):
    ref = SimulationTrace.from_csv(a.ref)
    protocol = parse_protocol_file(a.protocol) if a.protocol else reconditioning_protocol()
    if a.bounds:
        bounds, settings = read_fit_config(a.bounds)
    else:
        bounds, settings = default_ecm_bounds(), DeSettings()
    settings = replace(settings, seed=a.seed)
    cycles = tuple(int(c) for c in a.cycles.split(",")) if a.cycles else DEFAULT_FIT_CYCLES
    spec = FitObjectiveSpec(protocol, ref, cycles, a.max_repetitions)
    try:
        res = fit_ecm(spec, bounds, settings)
    except DeError as exc:
        raise NumericalFailure(str(exc)) from None
    write_fit_config(out / "fit_config.ini", bounds, settings)
    write_fit_report(out, res, fitted_parameters(res, spec))
    (out / "summary.txt").write_text(
        f"loss_V2 {res.loss!r}\ngenerations {res.generations}\nevaluations {res.evaluations}\n"
        f"converged {res.converged}\n")


def cmd_fit_relaxation(a, out: Path):
    rows = _read_pairs(a.input, ("rest_h", "capacity_Ah"))
    fit = fit_relaxation(rows)
    with open(out / "relaxation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_Ah", "b", "tau_h", "loss_Ah2", "tau_identified"])
        w.writerow([repr(fit.a), repr(fit.b), repr(fit.tau), repr(fit.loss), int(fit.tau_identified)])


def _read_pairs(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = [h.strip() for h in next(reader, [])]
        if tuple(head) != header:
            raise DataError(f"{path}: header must be {list(header)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: expected two numbers") from None
    return rows


def _load_cycling(path):
    p = Path(path)
    return parse_cycling_dir(p) if p.is_dir() else parse_cycling_csv(p)


def cmd_predict_life(a, out: Path):
    ds = _load_cycling(a.data)
    kinds = [k.strip().lower() for k in a.model.split(",")]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise CvError(f"unknown model(s) {bad}; expected {KINDS}")
    grid = parse_grid(a.grid) if a.grid else default_grid()
    reports = [nested_cv(ds, k, grid, a.outer, a.inner, a.seed) for k in kinds]
    write_cv_report(reports, out)
    lives = []
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "current_A", "cycle_life", "censored", "last_cycle"])
        for cell in ds.cells:
            lab = cycle_life_label(cell.discharge_capacities())
            w.writerow([cell.cell_id, repr(cell.current_a), "" if lab.censored else lab.cycle,
                        int(lab.censored), lab.last_cycle])
            if not lab.censored:
                lives.append(lab.cycle)
    if len(lives) >= 2:
        grid_x, dens = kde_life_distribution(lives, a.bandwidth)
        with open(out / "kde.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle_life", "density"])
            for x, d in zip(grid_x, dens):
                w.writerow([repr(float(x)), repr(float(d))])
    with open(out / "excluded.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "fold", "cell_id", "reason"])
        for rep in reports:
            for cid, why in rep.excluded:
                w.writerow([rep.kind, "", cid, why])
            for f in rep.folds:
                for cid, why in f.test_excluded:
                    w.writerow([rep.kind, f.fold, cid, why])


def _records(path):
    return parse_recovery_csv(path) if path else shipped_recovery_records()


def cmd_recovery_stats(a, out: Path):
    recs = _records(a.input)
    write_metrics_report(recs, out)
    write_regression_report(fit_recovery_regression(recs, a.target), out)


def cmd_shap(a, out: Path):
    recs = _records(a.input)
    imp = importance_ranking(recs, a.target)
    write_shap_report(imp, recs, a.target, out)


def cmd_dqdv(a, out: Path):
    ds = _load_cycling(a.data)
    cells = [ds.cell(a.cell)] if a.cell else list(ds.cells)
    cycles = [int(c) for c in a.cycles.split(",")]
    with open(out / "dqdv.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "cycle_index", "voltage_V", "dQdV_Ah_per_V"])
        for cell in cells:
            for c in cycles:
                v, d = dqdv(cell.curve(c), a.window)
                for vi, di in zip(v, d):
                    w.writerow([cell.cell_id, c, repr(float(vi)), repr(float(di))])


def cmd_gen_synthetic(a, out: Path):
    spec = read_fleet_spec(a.spec) if a.spec else SyntheticFleetSpec()
    if a.seed is not None:
        spec = replace(spec, seed=a.seed)
    ds = gen_synthetic_fleet(spec)
    write_cycling_dir(ds, out / "cells")
    write_fleet_spec(spec, out / "fleet_spec.ini")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-ecm": cmd_fit_ecm,
    "fit-relaxation": cmd_fit_relaxation,
    "predict-life": cmd_predict_life,
    "recovery-stats": cmd_recovery_stats,
    "shap": cmd_shap,
    "dqdv": cmd_dqdv,
    "gen-synthetic": cmd_gen_synthetic,
}

# arguments naming input files, recorded with digests in the manifest
INPUT_ARGS = ("params", "protocol", "ref", "bounds", "input", "data", "spec")


def build_parser():
    p = argparse.ArgumentParser(prog="lirecon", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=DEFAULT_SEED)
        return s

    s = add("simulate", "run a protocol through the two-sub-cell ECM")
    s.add_argument("--params", help="INI [ecm] file (default: reference fit)")
    s.add_argument("--protocol", help="protocol file (default: shipped reconditioning chain)")
    s.add_argument("--max-repetitions", type=int, default=None)
    s.add_argument("--method", choices=("explicit", "stiff"), default="explicit")
    s.add_argument("--rtol", type=float, default=1e-8)
    s.add_argument("--atol", type=float, default=1e-10)

    s = add("fit-ecm", "fit the nine ECM parameters to a reference trace by DE")
    s.add_argument("--ref", required=True, help="reference trace CSV")
    s.add_argument("--bounds", help="INI bounds/DE settings file")
    s.add_argument("--protocol")
    s.add_argument("--cycles", help="comma-separated cycles in the loss")
    s.add_argument("--max-repetitions", type=int, default=3)

    s = add("fit-relaxation", "fit y = a (1 - b exp(-x/tau)) to rest-recovery data")
    s.add_argument("--in", dest="input", required=True, help="CSV rest_h,capacity_Ah")

    s = add("predict-life", "nested-CV cycle-life prediction")
    s.add_argument("--data", required=True, help="cycling CSV file or directory")
    s.add_argument("--model", default="lr,gpr,gbr", help="comma list of lr, gpr, gbr")
    s.add_argument("--grid", help="'5:40:5,45:80:5' or '10-50;20-60'")
    s.add_argument("--outer", type=int, default=5)
    s.add_argument("--inner", type=int, default=5)
    s.add_argument("--bandwidth", type=float, default=50.0, help="KDE bandwidth, cycles")

    s = add("recovery-stats", "recovery metrics, discrepancies and regression")
    s.add_argument("--in", dest="input", help="recovery CSV (default: shipped cells)")
    s.add_argument("--target", choices=TARGETS, default="r1")

    s = add("shap", "exact Shapley importance of the recovery regression")
    s.add_argument("--in", dest="input", help="recovery CSV (default: shipped cells)")
    s.add_argument("--target", choices=TARGETS, default="r1")

    s = add("dqdv", "differential capacity curves")
    s.add_argument("--data", required=True)
    s.add_argument("--cell")
    s.add_argument("--cycles", default="10,50")
    s.add_argument("--window", type=int, default=9)

    s = add("gen-synthetic", "generate a synthetic cycling fleet")
    s.add_argument("--spec", help="INI [fleet] file (default: 62-cell fleet)")
    s.set_defaults(seed=None)  # the spec file's seed unless given

    s = sub.add_parser("replay", help="rerun a manifest into a new output directory")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    return p


def _run(command, args: dict, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    inputs = {k: args[k] for k in INPUT_ARGS if args.get(k)}
    for k, v in inputs.items():
        if not Path(v).exists():
            raise FileNotFoundError(f"--{k}: {v} does not exist")
    COMMANDS[command](argparse.Namespace(**args), out)
    write_manifest(out, command, args, inputs, __version__)


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        if a.command == "replay":
            doc = read_manifest(a.manifest)
            if doc["command"] not in COMMANDS:
                raise ValueError(f"manifest names unknown command {doc['command']!r}")
            for k, entry in doc.get("inputs", {}).items():
                if file_digest(entry["path"]) != entry["sha256"]:
                    raise ValueError(f"input {k} ({entry['path']}) changed since the manifest")
            _run(doc["command"], doc["args"], Path(a.out))
        else:
            args = {k: v for k, v in vars(a).items() if k not in ("out", "command")}
            _run(a.command, args, Path(a.out))
    except NumericalFailure as exc:
        print(f"lirecon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SimulationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"lirecon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        print(f"lirecon: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

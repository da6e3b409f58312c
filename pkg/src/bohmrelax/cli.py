"""Command-line entry point: ``bohmrelax <subcommand> [options]``.

Configuration files are INI with sections [physics], [run], [integrator]
and [sweep]; any flag given on the command line overrides the file.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coarse import load_hseries_csv
from .ensemble import EQUILIBRIUM, NONEQUILIBRIUM, export_csv, load_snapshots
from .fitting import (EXP_DECAY, EXP_MODES, INV_EPSILON, POLY5, fit_exp_decay, fit_report,
                      fit_tau_beta, fit_tau_epsilon, fit_tau_modes, save_fit_csv)
from .guidance import IntegratorConfig
from .modes import PhysicalParams
from .sweeps import DESK_CAP, RunConfig, SweepSpec, emit_plots, equivariance_check, run_single, \
    run_sweep

log = logging.getLogger("bohmrelax")

SWEEP_DEFAULTS = {
    "epsilon": (0.5, 0.25, 0.2, 0.125, 0.1),
    "modes": tuple(range(4, 16)),
    "beta": (0.02, 0.04, 0.06, 0.08, 0.10),
}
SCALES = {"full": None, "desk": DESK_CAP}


def _read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not cp.read(path):
            raise FileNotFoundError(f"config file {path} not found")
    for section in ("physics", "run", "integrator", "sweep"):
        if not cp.has_section(section):
            cp.add_section(section)
    return cp


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def build_run_config(args, cp: configparser.ConfigParser) -> RunConfig:
    phys, run, integ = cp["physics"], cp["run"], cp["integrator"]

    def pick(flag, section, key, conv, default):
        val = getattr(args, flag, None)
        if val is not None:
            return val
        return conv(section[key]) if key in section else default

    beta = pick("beta", phys, "beta", float, 0.1)
    if isinstance(beta, (list, tuple)):
        beta = beta[0]
    params = PhysicalParams(m=phys.getfloat("m", 1.0), omega=phys.getfloat("omega", 1.0),
                            beta=float(beta))
    integrator = IntegratorConfig(
        tol_start=integ.getfloat("tol_start", 1e-5),
        tol_floor=integ.getfloat("tol_floor", 1e-15),
        ladder_cutoff=integ.getfloat("ladder_cutoff", 0.0025),
        max_step=integ.getfloat("max_step", float("inf")),
    )
    scale = pick("scale", run, "scale", str, "desk")
    cap = pick("cap", run, "cap", int, SCALES[scale])
    modes = pick("modes", run, "modes", int, 15)
    eps = pick("epsilon", run, "epsilon", float, 0.2)
    if isinstance(modes, (list, tuple)):
        modes = modes[0]
    if isinstance(eps, (list, tuple)):
        eps = eps[0]
    return RunConfig(
        params=params,
        M=int(modes),
        preset_count=pick("presets", run, "presets", int, 10),
        epsilon=float(eps),
        master_seed=pick("seed", run, "seed", int, 0),
        n_particles=pick("particles", run, "particles", int, None),
        n_cap=cap,
        sampler=run.get("sampler", NONEQUILIBRIUM),
        n_output_times=run.getint("output_times", 50),
        integrator=integrator,
        output_dir=pick("out", run, "out", str, None),
        keep_snapshots=not getattr(args, "no_snapshots", False),
        backend=pick("backend", run, "backend", str, None),
    )


def _add_common(p: argparse.ArgumentParser, sweep_axis: str | None = None) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--particles", type=int, help="particles per preset (default: ratio rule)")
    p.add_argument("--presets", type=int, help="number of presets to average (default 10)")
    p.add_argument("--scale", choices=sorted(SCALES),
                   help="full: ratio rule, uncapped; desk: capped N")
    p.add_argument("--cap", type=int, help="particle cap for the ratio rule")
    p.add_argument("--backend", choices=["numba", "numpy"], help="kernel implementation")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-snapshots", action="store_true", help="do not store position snapshots")
    many = {"nargs": "+"}
    p.add_argument("--epsilon", type=float, **(many if sweep_axis == "epsilon" else {}),
                   help="coarse-graining length" + (" grid" if sweep_axis == "epsilon" else ""))
    p.add_argument("--beta", type=float, **(many if sweep_axis == "beta" else {}),
                   help="coupling strength" + (" grid" if sweep_axis == "beta" else ""))
    p.add_argument("--modes", type=int, **(many if sweep_axis == "modes" else {}),
                   help="number of modes M" + (" grid" if sweep_axis == "modes" else ""))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bohmrelax", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("run", help="preset-averaged relaxation run"))
    for axis in ("epsilon", "modes", "beta"):
        _add_common(sub.add_parser(f"sweep-{axis}", help=f"sweep over {axis}"), axis)
    _add_common(sub.add_parser("equivariance", help="equilibrium-sampled control run"))

    p = sub.add_parser("fit", help="fit a saved H series or sweep table")
    p.add_argument("input", help="hseries CSV or sweep_table.csv")
    p.add_argument("--family", choices=[EXP_DECAY, INV_EPSILON, EXP_MODES, POLY5])
    p.add_argument("--out", help="directory for fit CSV and report")

    p = sub.add_parser("plot", help="figure CSV, script and SVG for a run or sweep directory")
    p.add_argument("directory")

    p = sub.add_parser("export-csv", help="snapshot file to CSV (t, particle_id, x_a, x_b)")
    p.add_argument("snapshots")
    p.add_argument("--out", required=True, help="CSV path")
    return parser


def _cmd_fit(args) -> int:
    path = Path(args.input)
    rows = list(csv.reader(line for line in open(path) if not line.startswith("#")))
    header, body = rows[0], rows[1:]
    if header[:2] == ["t", "H"]:
        hs = load_hseries_csv(path)
        fit = fit_exp_decay(hs.times, hs.h_values, hs.noise_floor)
    else:
        axis = header[0]
        family = args.family or {"epsilon": INV_EPSILON, "modes": EXP_MODES, "beta": POLY5}[axis]
        ok = [r for r in body if r[header.index("status")] == "ok"]
        x = np.array([float(r[0]) for r in ok])
        y = np.array([float(r[header.index("tau")]) for r in ok])
        fitter = {INV_EPSILON: fit_tau_epsilon, EXP_MODES: fit_tau_modes, POLY5: fit_tau_beta,
                  EXP_DECAY: fit_exp_decay}[family]
        fit = fitter(x, y)
    sys.stdout.write(fit_report(fit))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_fit_csv(out / f"fit_{fit.family}.csv", fit)
        (out / "fit_report.txt").write_text(fit_report(fit))
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "plot":
            for f in emit_plots(args.directory):
                print(f)
            return 0
        if args.command == "export-csv":
            export_csv(args.out, load_snapshots(args.snapshots))
            return 0

        cp = _read_config(args.config)
        cfg = build_run_config(args, cp)
        if args.command == "run":
            res = run_single(cfg)
            print(f"N = {cfg.n_effective}  presets = {cfg.preset_count}  tau = {res.tau:.6g}")
            if res.fit is not None:
                sys.stdout.write(fit_report(res.fit))
            return 0
        if args.command == "equivariance":
            report = equivariance_check(cfg, sampler=cp["run"].get("sampler", EQUILIBRIUM))
            print(json.dumps(report, indent=2, sort_keys=True))
            return 0 if report["passed"] else 1
        axis = args.command.split("-", 1)[1]
        values = getattr(args, axis)
        if values is None and "values" in cp["sweep"]:
            values = _floats(cp["sweep"]["values"])
        values = tuple(values or SWEEP_DEFAULTS[axis])
        if axis == "modes":
            values = tuple(int(v) for v in values)
        res = run_sweep(SweepSpec(axis, values, cfg))
        for row in res.rows:
            print(f"{axis}={row[axis]:<8g} tau={row['tau']:<10.5g} +/- {row['tau_ci95']:<9.3g} "
                  f"N={row['N']} {row['status']}")
        print(f"spearman = {res.spearman:.4f}")
        if res.fit is not None:
            sys.stdout.write(fit_report(res.fit))
        else:
            print(f"fit not applied: {res.fit_error}")
        return 0
    except (ValueError, RuntimeError, ArithmeticError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line front end.

Usage::

    egp-topopt mbb --nx 60 --ny 20 --method egp
    egp-topopt inverter --nx 40 --ny 40
    egp-topopt cantilever3d --nx 24 --ny 8 --nz 4 --compare
    egp-topopt custom run.ini --delta 0.2

Each run writes ``<name>_<method>.csv``, a PGM image (2D) or VTK volume (3D)
and ``<name>_<method>_manifest.ini`` into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

from . import io
from .config import ConfigError, build_problem, describe, load_config, merge
from .estimators import ESTIMATORS
from .fea import FeaError
from .model import ObjectiveKind
from .optimizer import SuppressionError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--method", choices=sorted(ESTIMATORS),
                   help="optimizer (default: egp, or the config file's choice)")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("-f", "--volume-fraction", type=float, dest="volume_fraction")
    p.add_argument("--penal", type=float, help="SIMP penalization exponent")
    p.add_argument("--density-radius", type=float)
    p.add_argument("--sensitivity-radius", type=float)
    p.add_argument("--density-filter", choices=("gaussian", "hat", "none"))
    p.add_argument("--sensitivity-filter", choices=("gaussian", "hat", "close", "none"))
    p.add_argument("--delta", type=float, help="grey suppression thresholds (both)")
    p.add_argument("--clip", type=float, dest="clip_multiplier",
                   help="clip threshold as a multiple of the mean |gradient|")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float, help="stop when max |dx| falls below this")
    p.add_argument("--move-limit", type=float, help="OC move limit")
    p.add_argument("-o", "--out", type=Path, default=Path("results"),
                   help="output directory (default: ./results)")
    p.add_argument("--timing", action="store_true",
                   help="write wall-clock columns to the CSV (otherwise zeros, "
                        "so repeated runs are byte-identical)")
    p.add_argument("--compare", action="store_true",
                   help="run both EGP and OC and write an update-time comparison")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="egp-topopt",
        description="Density-based topology optimization with efficient gradient "
                    "projection or optimality criteria.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mbb", parents=[common], help="half MBB beam (default 60x20)")
    sub.add_parser("inverter", parents=[common], help="force inverter (default 100x100)")
    p3 = sub.add_parser("cantilever3d", parents=[common], help="3D cantilever (default 60x20x10)")
    p3.add_argument("--nz", type=int)
    pc = sub.add_parser("custom", parents=[common], help="problem from an INI config file")
    pc.add_argument("config", type=Path)
    pc.add_argument("--nz", type=int)
    return parser


def _cli_overrides(args) -> dict:
    delta = args.delta
    return {
        "problem": {"nx": args.nx, "ny": args.ny, "nz": getattr(args, "nz", None),
                    "volume_fraction": args.volume_fraction, "method": args.method},
        "material": {"penalization": args.penal},
        "filters": {"density_radius": args.density_radius,
                    "sensitivity_radius": args.sensitivity_radius,
                    "density_kind": args.density_filter,
                    "sensitivity_kind": args.sensitivity_filter},
        "optimizer": {"clip_multiplier": args.clip_multiplier,
                      "delta_upper": delta, "delta_lower": delta,
                      "max_iter": args.max_iter, "tol": args.tol,
                      "move_limit": args.move_limit},
    }


def resolve(args):
    """Return ``(problem, methods)`` after applying CLI > config > preset."""
    layers = []
    preset = args.command
    if args.command == "custom":
        config = load_config(args.config)
        preset = config.get("problem", {}).get("preset")
        if preset is None:
            raise ConfigError(f"{args.config}: [problem] preset: missing required field")
        layers.append(config)
    layers.append(_cli_overrides(args))
    merged = merge(*layers)
    problem_section = merged.setdefault("problem", {})
    problem_section.pop("preset", None)
    method = problem_section.pop("method", "egp")
    try:
        problem = build_problem(preset, merged)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    methods = ["egp", "oc"] if args.compare else [method]
    if "oc" in methods and problem.objective_kind is not ObjectiveKind.MIN_COMPLIANCE:
        raise ConfigError("the OC baseline handles compliance problems only")
    return problem, methods


def _prepare_output(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_test"
    probe.write_bytes(b"")
    probe.unlink()


def _run_one(problem, method, out: Path, timing: bool):
    estimator = ESTIMATORS[method]()
    start = time.perf_counter()
    estimator.fit(problem)
    elapsed = time.perf_counter() - start
    stem = f"{problem.name}_{method}"
    files = [io.write_convergence_csv(estimator.history_, out / f"{stem}.csv", timing=timing)]
    if problem.grid.ndim == 2:
        files.append(io.export_density_image(estimator.density_, problem.grid, out / f"{stem}.pgm"))
    else:
        files.append(io.export_vtk(estimator.density_, problem.grid, out / f"{stem}.vtk"))
    record = estimator.history_
    totals = {
        "wall_seconds": elapsed,
        "update_seconds": sum(record.column("update_ms")) / 1e3,
        "fea_seconds": sum(record.column("fea_ms")) / 1e3,
    }
    manifest = out / f"{stem}_manifest.ini"
    lines = [describe(estimator.problem_, method).rstrip(), "", "[run]",
             f"output_dir = {out.resolve()}",
             f"iterations = {estimator.n_iter_}",
             f"converged = {estimator.converged_}",
             f"objective = {estimator.objective_!r}",
             f"grey_fraction = {estimator.grey_fraction_!r}"]
    lines += [f"{k} = {v:.3f}" for k, v in totals.items()]
    lines += ["outputs = " + ", ".join(f.name for f in files), "exit_status = 0", ""]
    manifest.write_text("\n".join(lines))
    return estimator, files + [manifest]


def _write_comparison(out: Path, name: str, fitted: dict) -> Path:
    path = out / f"{name}_update_time.csv"
    records = {m: est.history_ for m, est in fitted.items()}
    n = max(len(r) for r in records.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter"] + [f"{m}_update_ms" for m in records]
                        + [f"{m}_fea_ms" for m in records])
        for i in range(n):
            row = [i + 1]
            for col in ("update_ms", "fea_ms"):
                for r in records.values():
                    row.append(repr(getattr(r.rows[i], col)) if i < len(r) else "")
            writer.writerow(row)
    return path


def run_benchmark(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        problem, methods = resolve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _prepare_output(args.out)
    except OSError as exc:
        print(f"error: output directory {args.out} is not writable: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    fitted = {}
    for method in methods:
        try:
            estimator, files = _run_one(problem, method, args.out, args.timing or args.compare)
        except (FeaError, SuppressionError, ArithmeticError, ValueError) as exc:
            print(f"error: {method} run failed: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        except OSError as exc:
            print(f"error: could not write outputs: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        fitted[method] = estimator
        s = estimator.summary()
        state = "converged" if s["converged"] else "iteration budget reached"
        print(f"{problem.name} {method}: objective {s['objective']:.6g}, "
              f"{s['iterations']} iterations ({state}), grey fraction {s['grey_fraction']:.4f}")
        for f in files:
            print(f"  wrote {f}")

    if args.compare:
        path = _write_comparison(args.out, problem.name, fitted)
        for method, est in fitted.items():
            upd = sum(est.history_.column("update_ms")) / len(est.history_)
            fea = sum(est.history_.column("fea_ms")) / len(est.history_)
            print(f"{method}: mean update {upd:.3f} ms, mean FEA {fea:.3f} ms")
        print(f"  wrote {path}")
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run_benchmark(argv))


if __name__ == "__main__":
    main()

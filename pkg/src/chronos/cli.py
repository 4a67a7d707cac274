"""Command-line front end: ``chronos run|classify|sweep|list-scenarios|preset``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Set ``CHRONOS_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ChronosError, ConfigError
from .scenarios import (
    PRESETS,
    ScenarioConfig,
    build_model,
    emit_csv,
    emit_sweep_csv,
    load_scenario,
    preset,
    preset_text,
    report_json,
    run_scenario,
    sweep_dimension,
)
from .universe import check_conditions

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_DESCRIPTIONS = {
    "free": "no interaction; H_R snapped to the clock lattice",
    "time_dependent": "V = f(T_C) (x) O with a sinusoidal profile",
    "dilation": "V = g H_C (x) H_R, commuting time dilation",
    "dilation_kernel_tuned": "dilation with one level at 1 + g E = 0 (alpha has a kernel)",
    "product_unitary": "(H_C^2 + H_R^2 + delta)(H_C + H_R), physically equivalent to free",
    "klein_gordon": "(H_C + H_R)(H_C - H_R), second order in H_C",
    "mass_energy": "internal clock, centre of mass and R with a redshift profile",
    "pathological": "(1 (x) C2)(H_C + H_R) with C2 singular",
}

log = logging.getLogger("chronos")


def _setup_logging() -> None:
    level = os.environ.get("CHRONOS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load(ref: str) -> ScenarioConfig:
    """A config file path, or the name of an embedded preset."""
    p = Path(ref)
    if p.exists():
        return load_scenario(p)
    if ref in PRESETS:
        return preset(ref)
    raise ConfigError("<config>", f"no such file or preset: {ref}")


def _apply_flags(cfg: ScenarioConfig, args) -> ScenarioConfig:
    return cfg.with_overrides(kernel_eps=args.tol_kernel, condition_tol=args.tol_condition,
                              seed=args.seed)


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return v


def _dims(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="scenario JSON file or embedded preset name")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--tol-kernel", type=_positive, default=None, help="kernel and rank tolerance")
    p.add_argument("--tol-condition", type=_positive, default=None, help="condition threshold")
    p.add_argument("--seed", type=_u64, default=None, help="override every rng seed")
    p.add_argument("--csv", dest="csv", action=argparse.BooleanOptionalAction, default=True,
                   help="write CSV output (default: on)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chronos", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run a scenario end to end"))
    _common(sub.add_parser("classify", help="check the unitarity conditions only"))
    sw = sub.add_parser("sweep", help="repeat a scenario over clock dimensions")
    _common(sw)
    sw.add_argument("--dims", type=_dims, required=True, help="e.g. 16,32,64")
    sub.add_parser("list-scenarios", help="list the embedded presets")
    pr = sub.add_parser("preset", help="print an embedded preset config")
    pr.add_argument("name")
    return ap


def _cmd_run(args) -> int:
    cfg = _apply_flags(_load(args.config), args)
    rep = run_scenario(cfg)
    text = report_json(rep)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{cfg.name}.report.json").write_text(text, encoding="utf-8", newline="\n")
        if args.csv:
            with open(args.out / f"{cfg.name}.csv", "w", encoding="utf-8", newline="") as fh:
                emit_csv(rep, fh)
        print(f"{cfg.name}: {rep.condition_report.verdict.value}")
    else:
        sys.stdout.write(text)
        if args.csv:
            emit_csv(rep, sys.stdout)
    return EXIT_OK


def _cmd_classify(args) -> int:
    cfg = _apply_flags(_load(args.config), args)
    u = build_model(cfg)
    rep = check_conditions(u, tol=cfg.tolerances.condition_tol, eps=cfg.tolerances.kernel_eps)
    out = {"name": cfg.name, "verdict": rep.verdict.value, "c1_residual": rep.c1_residual,
           "c2_residual": rep.c2_residual, "pathology_dim": rep.pathology_dim,
           "threshold": rep.threshold, "rate_method": rep.rate_method}
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _apply_flags(_load(args.config), args)
    table = sweep_dimension(cfg, args.dims)
    if args.out is not None and args.csv:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / f"{cfg.name}.sweep.csv", "w", encoding="utf-8", newline="") as fh:
            emit_sweep_csv(table, fh)
    else:
        emit_sweep_csv(table, sys.stdout)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            for name in PRESETS:
                print(f"{name:24s} {_DESCRIPTIONS.get(name, '')}")
            return EXIT_OK
        if args.command == "preset":
            sys.stdout.write(preset_text(args.name))
            return EXIT_OK
        handler = {"run": _cmd_run, "classify": _cmd_classify, "sweep": _cmd_sweep}[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChronosError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

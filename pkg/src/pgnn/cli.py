"""Command-line entry point.

Subcommands:
  run <config.json> [--out DIR] [--seeds 1,2,3] [--format csv|json]
  verify-contraction <config.json>
  emit-fmnist-report <run-dir>

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import dynamics
from .errors import ConfigError, IdxFormatError, NumericalFailureError
from .harness import aggregate, emit, fingerprint, load_run_dir, parse_config, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1, not argparse's 2)
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(path: str, overrides: dict):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text)
    applied = {}
    if overrides.get("out"):
        cfg.output_dir = overrides["out"]
        cfg.resolved["output_dir"] = overrides["out"]
        applied["output_dir"] = overrides["out"]
    if overrides.get("seeds"):
        try:
            seeds = [int(s) for s in overrides["seeds"].split(",") if s.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"--seeds expects comma-separated integers: {exc}") from exc
        if not seeds:
            raise ConfigError("--seeds produced an empty seed list")
        cfg.seeds = seeds
        cfg.resolved["seeds"] = seeds
        applied["seeds"] = seeds
    if overrides.get("format"):
        cfg.resolved["format"] = overrides["format"]
        applied["format"] = overrides["format"]
    return cfg, applied


def _cmd_run(args) -> int:
    cfg, applied = _load_config(args.config, vars(args))
    result = run(cfg)
    result.manifest["cli_overrides"] = applied
    agg = aggregate(result) if len(cfg.seeds) >= 2 else None
    fmt = cfg.resolved.get("format", "csv")
    run_dir = emit(result, agg, fmt, cfg.output_dir)
    print(f"run {fingerprint(cfg)} ({cfg.kind}) complete: {len(cfg.seeds)} seeds -> {run_dir}")
    if agg is not None:
        for name, (mean, sd) in agg.scalars.items():
            print(f"  {name}: {mean:.4f} +- {sd:.4f}")
    return EXIT_OK


def _cmd_verify_contraction(args) -> int:
    cfg, _ = _load_config(args.config, vars(args))
    if cfg.kind != "recursive_dynamics":
        raise ConfigError(f"verify-contraction needs a recursive_dynamics config, got {cfg.kind!r}")
    d = cfg.data
    all_ok = True
    for seed in cfg.seeds:
        systems = {
            "orthogonal": dynamics.example_orthogonal_system(d["dim"], seed),
            "orthogonal_repaired": dynamics.example_orthogonal_system(d["dim"], seed, w_norm=0.7),
            "low_rank": dynamics.example_low_rank_system(d["dim"], seed),
            "diagonal": dynamics.example_diagonal_system(d["dim"], seed),
        }
        for label, sys_ in systems.items():
            cert = dynamics.lipschitz_upper_bound(sys_)
            if cert.contractive:
                ok = dynamics.verify_unique_fixed_point(
                    sys_, trials=d["trials"], t_steps=d["verify_t_steps"], tol=d["tol"], seed=seed
                )
                all_ok &= ok
                status = "unique fixed point" if ok else "VERIFICATION FAILED"
            else:
                status = "refused (not contractive)"
            print(
                f"seed {seed} {label:<20} L1={cert.L1:.3f} L2={cert.L2:.3f} "
                f"gamma={cert.gamma:.3f} -> {status}"
            )
    if not all_ok:
        raise NumericalFailureError("a certified-contractive system failed fixed-point verification")
    return EXIT_OK


def _cmd_fmnist_report(args) -> int:
    manifest, scalars = load_run_dir(args.run_dir)
    if manifest.get("kind") != "fmnist":
        raise ConfigError(f"run dir {args.run_dir} holds a {manifest.get('kind')!r} run, not fmnist")
    metrics = sorted({name for per_seed in scalars.values() for name in per_seed})
    rows = []
    for name in metrics:
        vals = [per_seed[name] for per_seed in scalars.values() if name in per_seed]
        if len(vals) >= 2:
            rows.append((name, float(np.mean(vals)), float(np.std(vals, ddof=1))))
    path = os.path.join(args.run_dir, "fmnist_report.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write("metric,mean,sd\n")
        for name, mean, sd in rows:
            fh.write(f"{name},{mean:.17g},{sd:.17g}\n")
    key_metrics = [r for r in rows if "final_accuracy" in r[0] or "jacobian_sigma1" in r[0]]
    for name, mean, sd in key_metrics:
        print(f"{name}: {mean:.4f} +- {sd:.4f}")
    print(f"report written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgnn", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config over its seeds")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    p_run.add_argument("--format", choices=["csv", "json"], help="emission format")
    p_run.set_defaults(fn=_cmd_run)

    p_ver = sub.add_parser("verify-contraction", help="certify and verify the recursive systems")
    p_ver.add_argument("config")
    p_ver.set_defaults(fn=_cmd_verify_contraction, out=None, seeds=None, format=None)

    p_rep = sub.add_parser("emit-fmnist-report", help="summarize a completed fmnist run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(fn=_cmd_fmnist_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

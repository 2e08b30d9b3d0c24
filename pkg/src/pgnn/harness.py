"""Declarative experiment runner: JSON configs, multi-seed execution,
seed aggregation, and plot-ready CSV/JSON emission.

Every default is resolved at parse time and recorded in the manifest, so any
emitted table can be reconstructed from manifest + code version. Floats are
written with 17 significant digits so CSV round-trips are exact.
"""

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import experiments
from .errors import ConfigError, UndefinedMetricError
from .rng import PRNG_NAME
from .tasks import fmnist_dataset
from .training import MetricsLog

REQUIRED = "__required__"

_SHAPING_SCHEMA = {"kind": "identity", "keep_fraction": 0.25, "rank": 0, "scale": 1.0, "seed": 0}

_DIAGNOSTICS_SCHEMA = {
    "sov_k": 16,
    "ridge_lambda": 1e-3,
    "jacobian_samples": 32,
    "holdout_batch": 512,
    "train_probe_batch": 512,
}


def _model_schema(width: int, layers: int = 2) -> dict:
    return {
        "hidden_width": width,
        "hidden_layers": layers,
        "correction_activation": "relu",
        "correction_scale": 1.0,
        "shaping": dict(_SHAPING_SCHEMA),
    }


def _train_schema(**overrides) -> dict:
    base = {
        "learning_rate": 1e-3,
        "batch_size": 128,
        "steps": 0,
        "epochs": 0,
        "grad_noise_sigma": 0.0,
        "log_blocks": 20,
    }
    base.update(overrides)
    return base


SCHEMAS: dict[str, dict] = {
    "alignment": {
        "model": _model_schema(64),
        "train": _train_schema(steps=2000),
        "data": {"d": 16, "m": 4, "sigma": 0.05, "n_train": 8192, "n_test": 512},
    },
    "linear_noise_cka": {
        "model": _model_schema(64),
        "train": _train_schema(steps=2000),
        "data": {"d": 16, "classes": 2, "n_train": 8192, "n_test": 512},
    },
    "fmnist": {
        "model": _model_schema(128),
        "train": _train_schema(epochs=20),
        "data": {
            "train_images": REQUIRED,
            "train_labels": REQUIRED,
            "test_images": REQUIRED,
            "test_labels": REQUIRED,
            "val_size": 5000,
            "dct_keep_fraction": 0.25,
        },
    },
    "rank_ablation": {
        "model": _model_schema(16),
        "train": _train_schema(steps=2000),
        "data": {
            "d": 16,
            "m": 4,
            "sigma": 0.05,
            "n_train": 4096,
            "n_test": 512,
            "ranks": [16, 12, 8, 4, 2],
        },
    },
    # full-batch training so the noise-free baseline settles (minibatch sampling
    # noise otherwise dominates the oscillation metric under Adam), and a
    # contractive low-rank S so the structured path damps injected noise
    "grad_noise": {
        "model": {
            **_model_schema(64),
            "shaping": {"kind": "low_rank", "keep_fraction": 0.25, "rank": 16, "scale": 0.5, "seed": 0},
        },
        "train": _train_schema(epochs=200, batch_size=512),
        "data": {"d": 16, "classes": 2, "n_train": 512, "n_test": 512, "sigmas": [0.0, 0.05]},
    },
    "decoupling": {
        "model": _model_schema(64),
        "train": _train_schema(epochs=20),
        "data": {"d": 16, "m": 4, "sigma": 0.05, "n_train": 8192, "n_test": 512},
    },
    "recursive_dynamics": {
        "model": _model_schema(8),
        "train": _train_schema(),
        "data": {"dim": 8, "t_steps": 20, "trials": 10, "verify_t_steps": 100, "tol": 1e-6},
    },
    "alignment_sensitivity": {
        "model": _model_schema(32, layers=1),
        "train": _train_schema(epochs=30),
        "data": {
            "d": 16,
            "signal_dims": 4,
            "n_train": 4096,
            "n_test": 512,
            "scale_decay": 0.6,
            "structured_rank": 8,
            "loss_threshold_frac": 0.05,
        },
    },
}


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    seeds: list[int]
    output_dir: str
    model: dict
    train: dict
    data: dict
    diagnostics: dict
    resolved: dict = field(repr=False, default_factory=dict)


def _check_value(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"key '{path}' expects a boolean, got {type(value).__name__}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{path}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default == REQUIRED:
        if not isinstance(value, str):
            raise ConfigError(f"key '{path}' expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"key '{path}' expects a list, got {value!r}")
        return value
    raise ConfigError(f"key '{path}' has unsupported schema type")


def _resolve_section(path: str, schema: dict, given: dict) -> dict:
    out = {}
    for key, value in given.items():
        if key not in schema:
            raise ConfigError(f"unknown key '{path}{key}'")
    for key, default in schema.items():
        sub_path = f"{path}{key}"
        if isinstance(default, dict):
            sub_given = given.get(key, {})
            if not isinstance(sub_given, dict):
                raise ConfigError(f"key '{sub_path}' expects an object")
            out[key] = _resolve_section(sub_path + ".", default, sub_given)
        elif key in given:
            out[key] = _check_value(sub_path, given[key], default)
        elif default == REQUIRED:
            raise ConfigError(f"missing required key '{sub_path}'")
        else:
            out[key] = copy.deepcopy(default)
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON experiment config, filling and recording every default."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a single JSON object")
    kind = raw.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(f"key 'kind' must be one of {sorted(SCHEMAS)}, got {kind!r}")

    top_schema = {
        "kind": kind,
        "name": kind,
        "seeds": [0, 1, 2, 3, 4],
        "output_dir": "out",
        "format": "csv",
        **SCHEMAS[kind],
        "diagnostics": dict(_DIAGNOSTICS_SCHEMA),
    }
    resolved = _resolve_section("", top_schema, raw)
    seeds = resolved["seeds"]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("key 'seeds' must be a nonempty list of integers")
    if resolved["format"] not in ("csv", "json"):
        raise ConfigError(f"key 'format' must be csv or json, got {resolved['format']!r}")
    return ExperimentConfig(
        kind=kind,
        name=resolved["name"],
        seeds=list(seeds),
        output_dir=resolved["output_dir"],
        model=resolved["model"],
        train=resolved["train"],
        data=resolved["data"],
        diagnostics=resolved["diagnostics"],
        resolved=resolved,
    )


def canonical_json(resolved: dict) -> str:
    return json.dumps(resolved, sort_keys=True, separators=(",", ":"))


def fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.resolved).encode()).hexdigest()[:12]


@dataclass
class RunResult:
    config: ExperimentConfig
    fingerprint: str
    metrics: dict[int, dict[str, MetricsLog]]  # seed -> label -> log
    scalars: dict[int, dict[str, float]]  # seed -> metric -> value
    curves: list[tuple]  # (seed, metric, x, value), metric = "label/name"
    manifest: dict


@dataclass
class AggregateResult:
    scalars: dict[str, tuple[float, float]]  # metric -> (mean, sd)
    curves: dict[tuple[str, int], tuple[float, float]]  # (metric, x) -> (mean, sd)


def _curves_from_log(seed: int, label: str, log: MetricsLog) -> list[tuple]:
    rows = []
    for r in log.records:
        rows.append((seed, f"{label}/train_loss", r.epoch, r.train_loss))
        rows.append((seed, f"{label}/val_loss", r.epoch, r.val_loss))
        if r.accuracy is not None:
            rows.append((seed, f"{label}/accuracy", r.epoch, r.accuracy))
        rows.append((seed, f"{label}/grad_norm", r.epoch, r.grad_norm))
        for li, v in enumerate(r.structured_norms, start=1):
            rows.append((seed, f"{label}/structured_norm_L{li}", r.epoch, v))
        for li, v in enumerate(r.correction_norms, start=1):
            rows.append((seed, f"{label}/correction_norm_L{li}", r.epoch, v))
    return rows


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute all seeds of the configured experiment kind."""
    runner = experiments.RUNNERS[cfg.kind]
    kwargs = {}
    if cfg.kind == "fmnist":
        d = cfg.data
        kwargs["data"] = fmnist_dataset(
            d["train_images"], d["train_labels"], d["test_images"], d["test_labels"], d["val_size"]
        )
    metrics: dict[int, dict[str, MetricsLog]] = {}
    scalars: dict[int, dict[str, float]] = {}
    curves: list[tuple] = []
    for seed in cfg.seeds:
        logs, seed_scalars, extra_curves = runner(cfg, seed, **kwargs)
        metrics[seed] = logs
        scalars[seed] = seed_scalars
        for label, log in logs.items():
            curves.extend(_curves_from_log(seed, label, log))
        curves.extend((seed, f"{label}/{name}", x, v) for label, name, x, v in extra_curves)
    fp = fingerprint(cfg)
    manifest = {
        "kind": cfg.kind,
        "name": cfg.name,
        "fingerprint": fp,
        "config": cfg.resolved,
        "prng": PRNG_NAME,
        "seed_derivation": "blake2b(experiment_name, seed_index) -> 64-bit",
        "package_version": _package_version(),
        "wall_time_s": {
            str(s): sum(log.wall_time_s for log in metrics[s].values()) for s in metrics
        },
    }
    if cfg.seeds and "mlp_width_matched" in scalars[cfg.seeds[0]]:
        manifest["mlp_width_matched"] = int(scalars[cfg.seeds[0]]["mlp_width_matched"])
    return RunResult(cfg, fp, metrics, scalars, curves, manifest)


def _package_version() -> str:
    from . import __version__

    return __version__


def aggregate(result: RunResult) -> AggregateResult:
    """Mean and n-1 standard deviation per metric over seeds."""
    if len(result.config.seeds) < 2:
        raise UndefinedMetricError("aggregation needs at least 2 seeds for a sample sd")
    by_metric: dict[str, list[float]] = {}
    for seed_scalars in result.scalars.values():
        for name, v in seed_scalars.items():
            by_metric.setdefault(name, []).append(float(v))
    scalars = {
        name: (float(np.mean(vals)), float(np.std(vals, ddof=1)))
        for name, vals in sorted(by_metric.items())
        if len(vals) >= 2
    }
    by_point: dict[tuple[str, int], list[float]] = {}
    for _, metric, x, v in result.curves:
        by_point.setdefault((metric, x), []).append(float(v))
    curves = {
        key: (float(np.mean(vals)), float(np.std(vals, ddof=1)))
        for key, vals in sorted(by_point.items())
        if len(vals) >= 2
    }
    return AggregateResult(scalars=scalars, curves=curves)


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.17g}"


def emit(result: RunResult, agg: AggregateResult | None, fmt: str, out_dir: str) -> str:
    """Write per-seed metrics, curves, aggregate tables and the manifest.

    Returns the run directory `<out_dir>/runs/<fingerprint>`.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    run_dir = os.path.join(out_dir, "runs", result.fingerprint)
    os.makedirs(run_dir, exist_ok=True)

    for seed, logs in result.metrics.items():
        path = os.path.join(run_dir, f"seed{seed}_metrics.csv")
        with open(path, "w", newline="\n") as fh:
            fh.write("epoch,loss,val_loss,accuracy,grad_norm,step,model\n")
            for label, log in logs.items():
                for r in log.records:
                    fh.write(
                        f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.val_loss)},"
                        f"{_fmt(r.accuracy)},{_fmt(r.grad_norm)},{r.step},{label}\n"
                    )
        with open(os.path.join(run_dir, f"seed{seed}_scalars.json"), "w") as fh:
            json.dump(result.scalars[seed], fh, indent=1, sort_keys=True)

    with open(os.path.join(run_dir, "curves.csv"), "w", newline="\n") as fh:
        fh.write("epoch,seed,metric,value\n")
        for seed, metric, x, v in result.curves:
            fh.write(f"{x},{seed},{metric},{_fmt(v)}\n")

    if agg is not None:
        with open(os.path.join(run_dir, "aggregate.csv"), "w", newline="\n") as fh:
            fh.write("metric,mean,sd\n")
            for name, (mean, sd) in agg.scalars.items():
                fh.write(f"{name},{_fmt(mean)},{_fmt(sd)}\n")
        with open(os.path.join(run_dir, "aggregate_curves.csv"), "w", newline="\n") as fh:
            fh.write("metric,epoch,mean,sd\n")
            for (metric, x), (mean, sd) in agg.curves.items():
                fh.write(f"{metric},{x},{_fmt(mean)},{_fmt(sd)}\n")

    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(result.manifest, fh, indent=1, sort_keys=True)

    if fmt == "json":
        payload = {
            "manifest": result.manifest,
            "scalars": {str(s): sc for s, sc in result.scalars.items()},
            "aggregate": {n: {"mean": m, "sd": s} for n, (m, s) in (agg.scalars if agg else {}).items()},
            "curves": [
                {"seed": s, "metric": m, "epoch": x, "value": v} for s, m, x, v in result.curves
            ],
        }
        with open(os.path.join(run_dir, "results.json"), "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
    return run_dir


def load_run_dir(run_dir: str) -> tuple[dict, dict[int, dict[str, float]]]:
    """Read back a run directory's manifest and per-seed scalar metrics."""
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    scalars: dict[int, dict[str, float]] = {}
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("seed") and name.endswith("_scalars.json"):
            seed = int(name[4:].split("_")[0])
            with open(os.path.join(run_dir, name)) as fh:
                scalars[seed] = json.load(fh)
    return manifest, scalars

"""Per-kind experiment implementations driven by the harness.

Each kind maps one (config, seed) pair to metric logs keyed by a run label
("mlp", "pgnn_dct", "rank8", ...), a flat dict of scalar metrics, and extra
curve rows. Model comparisons share the training seed so both architectures
see identical batch orders.
"""

import numpy as np

from . import dynamics
from .diagnostics import (
    cka_linear,
    correction_load,
    hidden_activations,
    jacobian_spectrum_batch,
    layerwise_gap,
    sov,
)
from .errors import ConfigError
from .linalg import ridge_fit_r2
from .network import Network, NetworkSpec, forward, init_params, spec_param_count
from .shaping import ShapingSpec
from .tasks import Dataset, fmnist_dataset, gen_aligned_regression, gen_alignment, gen_linear_noise_classification
from .training import MetricsLog, TrainConfig, loss_oscillation, train

BUDGET_TOLERANCE = 0.02


def match_mlp_width(pgnn_spec: NetworkSpec) -> int:
    """Hidden width for an MLP whose parameter count matches a block network.

    The baseline keeps the layer count and gets a wider hidden dimension;
    the match must land within 2% of the target budget.
    """
    target = spec_param_count(pgnn_spec)
    n_hidden = len(pgnn_spec.hidden_dims)

    def count(w: int) -> int:
        spec = NetworkSpec(
            input_dim=pgnn_spec.input_dim,
            hidden_dims=(w,) * n_hidden,
            output_dim=pgnn_spec.output_dim,
            arch="mlp",
        )
        return spec_param_count(spec)

    lo, hi = 1, max(pgnn_spec.hidden_dims) * 4 + 16
    while count(hi) < target:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if count(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    best = min((lo - 1, lo), key=lambda w: abs(count(w) - target) if w >= 1 else 10**12)
    if abs(count(best) - target) / target > BUDGET_TOLERANCE:
        raise ConfigError(
            f"cannot match parameter budget {target} within {BUDGET_TOLERANCE:.0%} "
            f"(best width {best} gives {count(best)})"
        )
    return best


def _shaping_from_cfg(model_cfg: dict) -> ShapingSpec:
    s = model_cfg["shaping"]
    return ShapingSpec(
        kind=s["kind"],
        keep_fraction=s["keep_fraction"],
        rank=s["rank"] if s["rank"] > 0 else None,
        scale=s["scale"],
        entries=None,
        seed=s["seed"],
    )


def _pgnn_spec(cfg, input_dim: int, output_dim: int, shaping: ShapingSpec | None = None) -> NetworkSpec:
    m = cfg.model
    return NetworkSpec(
        input_dim=input_dim,
        hidden_dims=(m["hidden_width"],) * m["hidden_layers"],
        output_dim=output_dim,
        arch="pgnn",
        shaping=shaping if shaping is not None else _shaping_from_cfg(m),
        correction_activation=m["correction_activation"],
        correction_scale=m["correction_scale"],
    )


def _mlp_spec(cfg, input_dim: int, output_dim: int, width: int) -> NetworkSpec:
    return NetworkSpec(
        input_dim=input_dim,
        hidden_dims=(width,) * cfg.model["hidden_layers"],
        output_dim=output_dim,
        arch="mlp",
    )


def _train_cfg(cfg, seed: int, loss: str, sigma: float | None = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        learning_rate=t["learning_rate"],
        batch_size=t["batch_size"],
        steps=t["steps"] if t["steps"] > 0 else None,
        epochs=t["epochs"] if t["epochs"] > 0 else None,
        seed=seed,
        loss=loss,
        grad_noise_sigma=t["grad_noise_sigma"] if sigma is None else sigma,
        log_blocks=t["log_blocks"],
        probe_batch=cfg.diagnostics["holdout_batch"],
    )


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _representation_report(
    cfg, net: Network, data: Dataset, target_z: np.ndarray | None, with_ridge: bool
) -> dict[str, float]:
    """Per-layer CKA / SOV (train vs held-out) and optional ridge probe."""
    diag = cfg.diagnostics
    n_ho = diag["holdout_batch"]
    n_tr = diag["train_probe_batch"]
    acts_ho = hidden_activations(net, data.val.inputs[:, :n_ho])
    acts_tr = hidden_activations(net, data.train.inputs[:, :n_tr])
    out: dict[str, float] = {}
    for li, (h_ho, h_tr) in enumerate(zip(acts_ho, acts_tr), start=1):
        if target_z is not None:
            out[f"cka.L{li}"] = cka_linear(h_ho, target_z)
        out[f"sov.L{li}"] = sov(h_tr, h_ho, k=diag["sov_k"])
        if with_ridge and target_z is not None:
            out[f"ridge_r2.L{li}"] = ridge_fit_r2(h_ho, target_z, diag["ridge_lambda"])
    gaps = layerwise_gap(net, data.train.inputs[:, :n_tr], data.val.inputs[:, :n_ho])
    for li, g in enumerate(gaps, start=1):
        out[f"layer_gap.L{li}"] = g
    for metric in ("cka", "sov", "ridge_r2"):
        layer_vals = [v for k, v in out.items() if k.startswith(f"{metric}.L")]
        if layer_vals:
            out[f"{metric}.best"] = max(layer_vals)
    return out


def _log_scalars(label: str, log: MetricsLog) -> dict[str, float]:
    out = {}
    if log.records:
        last = log.records[-1]
        out[f"{label}.final_train_loss"] = last.train_loss
        out[f"{label}.final_val_loss"] = last.val_loss
        if last.accuracy is not None:
            out[f"{label}.final_accuracy"] = last.accuracy
        out[f"{label}.final_grad_norm"] = last.grad_norm
    return out


def run_alignment(cfg, seed: int):
    d = cfg.data
    data = gen_alignment(d["d"], d["m"], d["sigma"], d["n_train"], d["n_test"], seed)
    z_ho = data.latents["Z_test"][:, : cfg.diagnostics["holdout_batch"]].T
    pgnn_spec = _pgnn_spec(cfg, data.input_dim, data.output_dim)
    mlp_width = match_mlp_width(pgnn_spec)
    logs, scalars = {}, {"mlp_width_matched": float(mlp_width)}
    for label, spec in (("pgnn", pgnn_spec), ("mlp", _mlp_spec(cfg, data.input_dim, data.output_dim, mlp_width))):
        net = init_params(spec, seed)
        _, log = train(net, data, _train_cfg(cfg, seed, "mse"))
        logs[label] = log
        scalars.update(_log_scalars(label, log))
        rep = _representation_report(cfg, net, data, z_ho, with_ridge=True)
        scalars.update({f"{label}.{k}": v for k, v in rep.items()})
    return logs, scalars, []


def run_linear_noise_cka(cfg, seed: int):
    d = cfg.data
    data = gen_linear_noise_classification(d["d"], d["classes"], d["n_train"], seed, d["n_test"])
    labels_ho = data.val.targets[: cfg.diagnostics["holdout_batch"]]
    z_ho = _one_hot(labels_ho, d["classes"])
    pgnn_spec = _pgnn_spec(cfg, data.input_dim, data.output_dim)
    mlp_width = match_mlp_width(pgnn_spec)
    logs, scalars = {}, {"mlp_width_matched": float(mlp_width)}
    for label, spec in (("pgnn", pgnn_spec), ("mlp", _mlp_spec(cfg, data.input_dim, data.output_dim, mlp_width))):
        net = init_params(spec, seed)
        _, log = train(net, data, _train_cfg(cfg, seed, "cross_entropy"))
        logs[label] = log
        scalars.update(_log_scalars(label, log))
        rep = _representation_report(cfg, net, data, z_ho, with_ridge=False)
        scalars.update({f"{label}.{k}": v for k, v in rep.items()})
    return logs, scalars, []


def run_fmnist(cfg, seed: int, data: Dataset | None = None):
    d = cfg.data
    if data is None:
        data = fmnist_dataset(
            d["train_images"], d["train_labels"], d["test_images"], d["test_labels"], d["val_size"]
        )
    diag = cfg.diagnostics
    classes = data.output_dim
    labels_ho = data.val.targets[: diag["holdout_batch"]]
    z_ho = _one_hot(labels_ho, classes)
    jac_x = data.val.inputs[:, : diag["jacobian_samples"]]

    pgnn_id = _pgnn_spec(cfg, data.input_dim, classes, ShapingSpec("identity"))
    pgnn_dct = _pgnn_spec(
        cfg, data.input_dim, classes, ShapingSpec("dct_lowpass", keep_fraction=d["dct_keep_fraction"])
    )
    mlp_width = match_mlp_width(pgnn_id)
    specs = {
        "mlp": _mlp_spec(cfg, data.input_dim, classes, mlp_width),
        "pgnn_id": pgnn_id,
        "pgnn_dct": pgnn_dct,
    }
    logs, scalars = {}, {"mlp_width_matched": float(mlp_width)}
    for label, spec in specs.items():
        net = init_params(spec, seed)
        _, log = train(net, data, _train_cfg(cfg, seed, "cross_entropy"))
        logs[label] = log
        scalars.update(_log_scalars(label, log))
        rep = _representation_report(cfg, net, data, z_ho, with_ridge=False)
        scalars.update({f"{label}.{k}": v for k, v in rep.items()})
        spectrum = jacobian_spectrum_batch(net, jac_x, samples=diag["jacobian_samples"])
        for i in range(min(3, spectrum.size)):
            scalars[f"{label}.jacobian_sigma{i + 1}"] = float(spectrum[i])
        if spectrum.size >= 10:
            scalars[f"{label}.jacobian_tail_ratio"] = float(spectrum[9] / spectrum[0])
    return logs, scalars, []


def run_rank_ablation(cfg, seed: int):
    d = cfg.data
    data = gen_alignment(d["d"], d["m"], d["sigma"], d["n_train"], d["n_test"], seed)
    logs, scalars = {}, {}
    for rank in cfg.data["ranks"]:
        shaping = ShapingSpec("low_rank", rank=rank, scale=1.0, seed=cfg.model["shaping"]["seed"])
        net = init_params(_pgnn_spec(cfg, data.input_dim, data.output_dim, shaping), seed)
        _, log = train(net, data, _train_cfg(cfg, seed, "mse"))
        label = f"rank{rank}"
        logs[label] = log
        scalars.update(_log_scalars(label, log))
        trace = forward(net, data.val.inputs[:, : cfg.diagnostics["holdout_batch"]])
        loads = correction_load(trace)
        scalars[f"{label}.correction_load"] = float(np.mean(loads))
        for li, v in enumerate(loads, start=1):
            scalars[f"{label}.correction_load.L{li}"] = v
    return logs, scalars, []


def run_grad_noise(cfg, seed: int):
    d = cfg.data
    data = gen_linear_noise_classification(d["d"], d["classes"], d["n_train"], seed, d["n_test"])
    pgnn_spec = _pgnn_spec(cfg, data.input_dim, data.output_dim)
    mlp_width = match_mlp_width(pgnn_spec)
    specs = {"pgnn": pgnn_spec, "mlp": _mlp_spec(cfg, data.input_dim, data.output_dim, mlp_width)}
    logs, scalars = {}, {"mlp_width_matched": float(mlp_width)}
    for model, spec in specs.items():
        for sigma in cfg.data["sigmas"]:
            label = f"{model}.sigma{sigma:g}"
            net = init_params(spec, seed)
            _, log = train(net, data, _train_cfg(cfg, seed, "cross_entropy", sigma=sigma))
            logs[label] = log
            scalars.update(_log_scalars(label, log))
            losses = [r.train_loss for r in log.records]
            scalars[f"{label}.oscillation"] = loss_oscillation(losses)
    return logs, scalars, []


def run_decoupling(cfg, seed: int):
    d = cfg.data
    data = gen_alignment(d["d"], d["m"], d["sigma"], d["n_train"], d["n_test"], seed)
    net = init_params(_pgnn_spec(cfg, data.input_dim, data.output_dim), seed)
    _, log = train(net, data, _train_cfg(cfg, seed, "mse"))
    logs = {"pgnn": log}
    scalars = _log_scalars("pgnn", log)
    first, last = log.records[0], log.records[-1]
    scalars["pgnn.correction_norm_epoch1"] = float(np.mean(first.correction_norms))
    scalars["pgnn.correction_norm_final"] = float(np.mean(last.correction_norms))
    scalars["pgnn.structured_norm_epoch1"] = float(np.mean(first.structured_norms))
    scalars["pgnn.structured_norm_final"] = float(np.mean(last.structured_norms))
    return logs, scalars, []


def run_recursive_dynamics(cfg, seed: int):
    d = cfg.data
    dim = d["dim"]
    systems = {
        "orthogonal": dynamics.example_orthogonal_system(dim, seed),
        "orthogonal_repaired": dynamics.example_orthogonal_system(dim, seed, w_norm=0.7),
        "low_rank": dynamics.example_low_rank_system(dim, seed),
        "diagonal": dynamics.example_diagonal_system(dim, seed),
    }
    scalars: dict[str, float] = {}
    curves: list[tuple] = []
    rng_start = np.full(dim, 2.0)
    for label, sys in systems.items():
        cert = dynamics.lipschitz_upper_bound(sys)
        scalars[f"{label}.L1"] = cert.L1
        scalars[f"{label}.L2"] = cert.L2
        scalars[f"{label}.gamma"] = cert.gamma
        scalars[f"{label}.contractive"] = float(cert.contractive)
        traj = dynamics.iterate(sys, rng_start, d["t_steps"])
        for t, v in enumerate(dynamics.contraction_metric(traj), start=1):
            curves.append((label, "contraction_metric", t, float(v)))
        if cert.contractive:
            ok = dynamics.verify_unique_fixed_point(
                sys, trials=d["trials"], t_steps=d["verify_t_steps"], tol=d["tol"], seed=seed
            )
            scalars[f"{label}.verified"] = float(ok)
    return {}, scalars, curves


def run_alignment_sensitivity(cfg, seed: int):
    d = cfg.data
    logs, scalars = {}, {}
    shaping_structured = ShapingSpec(
        "low_rank", rank=d["structured_rank"], scale=1.0, seed=cfg.model["shaping"]["seed"]
    )
    for variant, permuted in (("aligned", False), ("permuted", True)):
        data = gen_aligned_regression(
            d["d"], d["signal_dims"], permuted, d["n_train"], seed, d["n_test"], d["scale_decay"]
        )
        y_var = float(data.train.targets.var())
        for model, shaping in (("structured", shaping_structured), ("unstructured", ShapingSpec("identity"))):
            label = f"{model}.{variant}"
            net = init_params(_pgnn_spec(cfg, data.input_dim, data.output_dim, shaping), seed)
            _, log = train(net, data, _train_cfg(cfg, seed, "mse"))
            logs[label] = log
            scalars.update(_log_scalars(label, log))
            threshold = d["loss_threshold_frac"] * y_var
            hits = [r.epoch for r in log.records if r.train_loss <= threshold]
            scalars[f"{label}.epochs_to_threshold"] = float(hits[0]) if hits else float(len(log.records) + 1)
    return logs, scalars, []


RUNNERS = {
    "alignment": run_alignment,
    "linear_noise_cka": run_linear_noise_cka,
    "fmnist": run_fmnist,
    "rank_ablation": run_rank_ablation,
    "grad_noise": run_grad_noise,
    "decoupling": run_decoupling,
    "recursive_dynamics": run_recursive_dynamics,
    "alignment_sensitivity": run_alignment_sensitivity,
}

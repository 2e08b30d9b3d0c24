"""Losses, Adam, gradient-noise injection, and the training loop.

One call to train() owns its network, optimizer state and PRNG, so
independent runs (seeds, configs) can execute in parallel. Metric rows are
logged once per epoch, or once per step block for step-budgeted runs.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import grad_norm_total
from .errors import NumericalFailureError, ShapeError
from .network import Gradients, Network, backward, forward, parameters, pathway_magnitudes
from .rng import make_rng
from .tasks import CLASSIFICATION, Dataset, Split

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    steps: int | None = None
    epochs: int | None = None
    seed: int = 0
    loss: str = MSE
    grad_noise_sigma: float = 0.0
    log_blocks: int = 20  # metric rows for step-budgeted runs
    probe_batch: int = 512  # held-out probe for pathway magnitudes

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if (self.steps is None) == (self.epochs is None):
            raise ValueError("exactly one of steps/epochs must be set")
        if self.loss not in (MSE, CROSS_ENTROPY):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.grad_noise_sigma < 0:
            raise ValueError(f"grad_noise_sigma must be nonnegative, got {self.grad_noise_sigma}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    val_loss: float
    accuracy: float | None
    grad_norm: float
    structured_norms: list[float] = field(default_factory=list)
    correction_norms: list[float] = field(default_factory=list)


@dataclass
class MetricsLog:
    seed: int
    wall_time_s: float = 0.0
    records: list[EpochRecord] = field(default_factory=list)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff**2))
    return loss, 2.0 * diff / diff.size


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL of a stable log-softmax over logit columns; labels are class indices."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes, batch = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=0))
    true_logit = shifted[labels, np.arange(batch)]
    loss = float(np.mean(log_z - true_logit))
    softmax = np.exp(shifted) / np.exp(log_z)[None, :]
    softmax[labels, np.arange(batch)] -= 1.0
    return loss, softmax / batch


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Standard Adam with bias correction; updates parameters in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(p)):
            raise NumericalFailureError(f"non-finite parameter after update: {name}")


def add_gradient_noise(
    grads: dict[str, np.ndarray], sigma: float, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Add i.i.d. N(0, sigma^2) to every gradient entry in place; sigma=0 is a no-op."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if sigma == 0.0:
        return grads
    for g in grads.values():
        g += sigma * rng.standard_normal(g.shape)
    return grads


def loss_oscillation(losses, final_fraction: float = 0.25) -> float:
    """Std of first differences of the loss over the final fraction of epochs."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 3:
        raise ValueError(f"need at least 3 loss values, got {losses.size}")
    tail = losses[-max(3, int(np.ceil(final_fraction * losses.size))) :]
    return float(np.std(np.diff(tail), ddof=1))


def _batch_loss(net: Network, split: Split, loss_kind: str, cap: int | None = None) -> float:
    x, t = split.inputs, split.targets
    if cap is not None and x.shape[1] > cap:
        x, t = x[:, :cap], t[..., :cap] if t.ndim > 1 else t[:cap]
    logits = forward(net, x).logits
    if loss_kind == CROSS_ENTROPY:
        return cross_entropy_loss(logits, t)[0]
    return mse_loss(logits, t)[0]


def accuracy(net: Network, split: Split) -> float:
    logits = forward(net, split.inputs).logits
    return float(np.mean(np.argmax(logits, axis=0) == split.targets))


def train(net: Network, data: Dataset, cfg: TrainConfig) -> tuple[Network, MetricsLog]:
    """Mini-batch Adam training with per-epoch (or per-block) metric logging."""
    classification = data.task == CLASSIFICATION
    if classification and cfg.loss != CROSS_ENTROPY:
        raise ValueError("classification data requires the cross_entropy loss")
    if not classification and cfg.loss != MSE:
        raise ValueError("regression data requires the mse loss")

    t0 = time.perf_counter()
    params = parameters(net)
    state = adam_init(params)
    rng = make_rng("train", cfg.seed)
    log = MetricsLog(seed=cfg.seed)
    n_train = data.train.n
    is_pgnn = net.has_pgnn_layers()
    probe = data.val.inputs[:, : cfg.probe_batch]

    if cfg.epochs is not None:
        total_steps = None
        n_epochs = cfg.epochs
    else:
        total_steps = cfg.steps
        n_epochs = int(np.ceil(total_steps * cfg.batch_size / n_train)) if total_steps else 0
        block = max(1, total_steps // cfg.log_blocks) if total_steps else 1

    def log_point(epoch_idx: int, step: int, losses: list[float], norms: list[float]) -> None:
        val_loss = _batch_loss(net, data.val, cfg.loss)
        acc = accuracy(net, data.test) if classification else None
        if is_pgnn:
            mags = pathway_magnitudes(forward(net, probe))
            s_norms = [m[0] for m in mags]
            c_norms = [m[1] for m in mags]
        else:
            s_norms, c_norms = [], []
        log.records.append(
            EpochRecord(
                epoch=epoch_idx,
                step=step,
                train_loss=float(np.mean(losses)),
                val_loss=val_loss,
                accuracy=acc,
                grad_norm=float(np.mean(norms)),
                structured_norms=s_norms,
                correction_norms=c_norms,
            )
        )

    step = 0
    block_losses: list[float] = []
    block_norms: list[float] = []
    done = False
    for epoch in range(n_epochs):
        order = rng.permutation(n_train)
        epoch_losses: list[float] = []
        epoch_norms: list[float] = []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = data.train.inputs[:, idx]
            tb = data.train.targets[idx] if classification else data.train.targets[:, idx]
            trace = forward(net, xb)
            if cfg.loss == CROSS_ENTROPY:
                loss, d_logits = cross_entropy_loss(trace.logits, tb)
            else:
                loss, d_logits = mse_loss(trace.logits, tb)
            if not np.isfinite(loss):
                raise NumericalFailureError(f"training loss diverged at epoch {epoch + 1}")
            grads: Gradients = backward(net, trace, d_logits)
            add_gradient_noise(grads.by_name, cfg.grad_noise_sigma, rng)
            gnorm = grad_norm_total(grads.by_name)
            adam_step(params, grads.by_name, state, cfg.learning_rate)
            step += 1
            epoch_losses.append(loss)
            epoch_norms.append(gnorm)
            if total_steps is not None:
                block_losses.append(loss)
                block_norms.append(gnorm)
                if step % block == 0 or step == total_steps:
                    log_point(len(log.records) + 1, step, block_losses, block_norms)
                    block_losses, block_norms = [], []
                if step >= total_steps:
                    done = True
                    break
        if done:
            break
        if total_steps is None:
            log_point(epoch + 1, step, epoch_losses, epoch_norms)

    log.wall_time_s = time.perf_counter() - t0
    return net, log

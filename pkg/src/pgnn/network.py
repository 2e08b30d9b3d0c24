"""Layer stack with a shaped linear path plus a learned correction path.

A block computes  S(W x) + b + alpha * act(B x + c); a plain MLP layer
computes act(W x + b). Data is column-major: X has shape (d, batch).
Forward passes record a full trace, and backward passes produce exact
reverse-mode gradients for every parameter plus input gradients.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NotApplicableError, NumericalFailureError, ShapeError
from .rng import make_rng
from .shaping import ShapingOperator, ShapingSpec, apply as shaping_apply
from . import shaping

RELU = "relu"
TANH = "tanh"
SOFTSIGN = "softsign"
ELU = "elu"
NONE = "none"

CORRECTION_ACTIVATIONS = (RELU, TANH, SOFTSIGN, ELU)


def act_forward(name: str, u: np.ndarray) -> np.ndarray:
    if name == RELU:
        return np.maximum(u, 0.0)
    if name == TANH:
        return np.tanh(u)
    if name == SOFTSIGN:
        return u / (1.0 + np.abs(u))
    if name == ELU:
        return np.where(u > 0, u, np.expm1(u))
    if name == NONE:
        return u
    raise ValueError(f"unknown activation {name!r}")


def act_deriv(name: str, u: np.ndarray) -> np.ndarray:
    if name == RELU:
        return (u > 0).astype(np.float64)
    if name == TANH:
        t = np.tanh(u)
        return 1.0 - t * t
    if name == SOFTSIGN:
        return 1.0 / (1.0 + np.abs(u)) ** 2
    if name == ELU:
        return np.where(u > 0, 1.0, np.exp(u))
    if name == NONE:
        return np.ones_like(u)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class PgnnBlock:
    shaping: ShapingOperator
    W: np.ndarray  # d_out x d_in
    b: np.ndarray  # d_out
    correction_B: np.ndarray  # d_out x d_in
    correction_c: np.ndarray  # d_out
    correction_activation: str = RELU
    correction_scale: float = 1.0

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class MlpLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = RELU

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


Layer = PgnnBlock | MlpLayer


@dataclass
class Network:
    layers: list[Layer]
    head: MlpLayer  # activation "none"; emits logits

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim if self.layers else self.head.in_dim

    @property
    def output_dim(self) -> int:
        return self.head.out_dim

    def all_layers(self) -> list[Layer]:
        return [*self.layers, self.head]

    def has_pgnn_layers(self) -> bool:
        return any(isinstance(l, PgnnBlock) for l in self.layers)


@dataclass
class LayerTrace:
    x: np.ndarray  # layer input, d_in x batch
    pre: np.ndarray  # pre-activation (MLP) or correction pre-activation (block)
    structured: np.ndarray | None  # S(Wx) + b, blocks only
    correction: np.ndarray | None  # alpha * act(Bx + c), blocks only
    output: np.ndarray


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]  # one per hidden layer
    head: LayerTrace
    logits: np.ndarray
    batch_size: int


@dataclass
class Gradients:
    by_name: dict[str, np.ndarray]  # parameter name -> gradient, insertion-ordered
    input_grads: list[np.ndarray]  # gradient w.r.t. each hidden layer's input
    d_input: np.ndarray  # gradient w.r.t. the network input


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalFailureError(f"non-finite values in {where}")


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    """Run the stack on a (d, batch) input, recording every intermediate."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != net.input_dim:
        raise ShapeError(f"input has {x.shape[0]} rows, network expects {net.input_dim}")
    traces: list[LayerTrace] = []
    cur = x
    for i, layer in enumerate(net.layers):
        if isinstance(layer, PgnnBlock):
            structured = shaping_apply(layer.shaping, layer.W @ cur) + layer.b[:, None]
            pre = layer.correction_B @ cur + layer.correction_c[:, None]
            correction = layer.correction_scale * act_forward(layer.correction_activation, pre)
            out = structured + correction
        else:
            pre = layer.W @ cur + layer.b[:, None]
            structured = correction = None
            out = act_forward(layer.activation, pre)
        _check_finite(out, f"layer {i} output")
        traces.append(LayerTrace(cur, pre, structured, correction, out))
        cur = out
    pre = net.head.W @ cur + net.head.b[:, None]
    logits = act_forward(net.head.activation, pre)
    _check_finite(logits, "head output")
    head_trace = LayerTrace(cur, pre, None, None, logits)
    return ForwardTrace(traces, head_trace, logits, x.shape[1])


def backward(net: Network, trace: ForwardTrace, d_logits: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients for every parameter and every layer input."""
    d_logits = np.asarray(d_logits, dtype=np.float64)
    if d_logits.shape != trace.logits.shape:
        raise ShapeError(f"d_logits shape {d_logits.shape} != logits shape {trace.logits.shape}")
    if len(trace.layers) != len(net.layers):
        raise ShapeError(
            f"trace has {len(trace.layers)} layers, network has {len(net.layers)}"
        )
    grads: dict[str, np.ndarray] = {}
    d_u = act_deriv(net.head.activation, trace.head.pre) * d_logits
    grads["head.W"] = d_u @ trace.head.x.T
    grads["head.b"] = d_u.sum(axis=1)
    d_cur = net.head.W.T @ d_u

    input_grads: list[np.ndarray | None] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        lt = trace.layers[i]
        if isinstance(layer, PgnnBlock):
            if lt.structured is None:
                raise ShapeError(f"trace layer {i} is not a block trace")
            d_lin = (
                d_cur
                if layer.shaping.kind == shaping.IDENTITY
                else layer.shaping.matrix.T @ d_cur
            )
            grads[f"layer{i}.W"] = d_lin @ lt.x.T
            grads[f"layer{i}.b"] = d_cur.sum(axis=1)
            d_pre = layer.correction_scale * act_deriv(layer.correction_activation, lt.pre) * d_cur
            grads[f"layer{i}.B"] = d_pre @ lt.x.T
            grads[f"layer{i}.c"] = d_pre.sum(axis=1)
            d_cur = layer.W.T @ d_lin + layer.correction_B.T @ d_pre
        else:
            d_pre = act_deriv(layer.activation, lt.pre) * d_cur
            grads[f"layer{i}.W"] = d_pre @ lt.x.T
            grads[f"layer{i}.b"] = d_pre.sum(axis=1)
            d_cur = layer.W.T @ d_pre
        input_grads[i] = d_cur
    ordered = {name: grads[name] for name in parameters(net)}
    return Gradients(ordered, list(input_grads), d_cur)


def jacobian_input_to_logits(net: Network, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian of the logits at a single input, shape (num_logits, d_in).

    Tiles the point across a batch of num_logits columns and backpropagates
    the identity, so one forward/backward pair yields the whole Jacobian.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.input_dim:
        raise ShapeError(f"input has {x.size} entries, network expects {net.input_dim}")
    c = net.output_dim
    tiled = np.repeat(x[:, None], c, axis=1)
    trace = forward(net, tiled)
    grads = backward(net, trace, np.eye(c))
    return grads.d_input.T.copy()


def parameters(net: Network) -> dict[str, np.ndarray]:
    """Trainable parameters in a fixed order, keyed by name."""
    params: dict[str, np.ndarray] = {}
    for i, layer in enumerate(net.layers):
        params[f"layer{i}.W"] = layer.W
        params[f"layer{i}.b"] = layer.b
        if isinstance(layer, PgnnBlock):
            params[f"layer{i}.B"] = layer.correction_B
            params[f"layer{i}.c"] = layer.correction_c
    params["head.W"] = net.head.W
    params["head.b"] = net.head.b
    return params


def set_parameters(net: Network, values: dict[str, np.ndarray]) -> None:
    current = parameters(net)
    for name, arr in values.items():
        current[name][...] = arr


def param_count(net: Network) -> int:
    return sum(p.size for p in parameters(net).values())


def pathway_magnitudes(trace: ForwardTrace) -> list[tuple[float, float]]:
    """Per block, batch-mean L2 norms of (structured output, correction output)."""
    out = []
    for lt in trace.layers:
        if lt.structured is not None and lt.correction is not None:
            s_norm = float(np.linalg.norm(lt.structured, axis=0).mean())
            c_norm = float(np.linalg.norm(lt.correction, axis=0).mean())
            out.append((s_norm, c_norm))
    if not out:
        raise NotApplicableError("network has no structured-corrective blocks")
    return out


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description consumed by init_params."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    arch: str = "mlp"  # "mlp" | "pgnn"
    shaping: ShapingSpec = field(default_factory=ShapingSpec)
    correction_activation: str = RELU
    correction_scale: float = 1.0
    mlp_activation: str = RELU


def spec_param_count(spec: NetworkSpec) -> int:
    dims = [spec.input_dim, *spec.hidden_dims]
    total = 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        per_linear = d_out * d_in + d_out
        total += 2 * per_linear if spec.arch == "pgnn" else per_linear
    total += spec.output_dim * dims[-1] + spec.output_dim
    return total


def init_params(spec: NetworkSpec, seed: int, scheme: str = "uniform_fan_in") -> Network:
    """Build a network with entries i.i.d. uniform on +-1/sqrt(fan_in), per seed."""
    if scheme != "uniform_fan_in":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if spec.arch not in ("mlp", "pgnn"):
        raise ValueError(f"unknown arch {spec.arch!r}")
    rng = make_rng("network.init", seed, spec.arch)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers: list[Layer] = []
    dims = [spec.input_dim, *spec.hidden_dims]
    for li, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = uniform((d_out, d_in), d_in)
        b = uniform(d_out, d_in)
        if spec.arch == "pgnn":
            layers.append(
                PgnnBlock(
                    shaping=spec.shaping.build(d_out),
                    W=w,
                    b=b,
                    correction_B=uniform((d_out, d_in), d_in),
                    correction_c=uniform(d_out, d_in),
                    correction_activation=spec.correction_activation,
                    correction_scale=spec.correction_scale,
                )
            )
        else:
            layers.append(MlpLayer(w, b, spec.mlp_activation))
    head = MlpLayer(uniform((spec.output_dim, dims[-1]), dims[-1]), uniform(spec.output_dim, dims[-1]), NONE)
    return Network(layers, head)


_MAGIC = b"PGNN"
_VERSION = 1
_KIND_TAGS = {"mlp": 0, "pgnn": 1}
_ACT_TAGS = {NONE: 0, RELU: 1, TANH: 2, SOFTSIGN: 3, ELU: 4}
_ACT_NAMES = {v: k for k, v in _ACT_TAGS.items()}
_SHAPING_TAGS = {
    shaping.IDENTITY: 0,
    shaping.DCT_LOWPASS: 1,
    shaping.LOW_RANK: 2,
    shaping.DIAGONAL: 3,
}
_SHAPING_NAMES = {v: k for k, v in _SHAPING_TAGS.items()}


def _write_f64(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(fh, count: int, shape) -> np.ndarray:
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise NumericalFailureError("network file truncated")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_network(net: Network, path: str) -> None:
    """Flat little-endian binary dump: header, then per-layer tags and f64 payload."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(net.all_layers())))
        for layer in net.all_layers():
            if isinstance(layer, PgnnBlock):
                fh.write(
                    struct.pack(
                        "<IIII",
                        _KIND_TAGS["pgnn"],
                        _ACT_TAGS[layer.correction_activation],
                        layer.out_dim,
                        layer.in_dim,
                    )
                )
                fh.write(struct.pack("<I", _SHAPING_TAGS[layer.shaping.kind]))
                _write_f64(fh, layer.shaping.matrix)
                _write_f64(fh, layer.W)
                _write_f64(fh, layer.b)
                _write_f64(fh, layer.correction_B)
                _write_f64(fh, layer.correction_c)
                fh.write(struct.pack("<d", layer.correction_scale))
            else:
                fh.write(
                    struct.pack(
                        "<IIII",
                        _KIND_TAGS["mlp"],
                        _ACT_TAGS[layer.activation],
                        layer.out_dim,
                        layer.in_dim,
                    )
                )
                _write_f64(fh, layer.W)
                _write_f64(fh, layer.b)


def load_network(path: str) -> Network:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise NumericalFailureError(f"{path} is not a network file (bad magic)")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise NumericalFailureError(f"unsupported network file version {version}")
        entries: list[Layer] = []
        for _ in range(n_layers):
            kind, act, d_out, d_in = struct.unpack("<IIII", fh.read(16))
            if kind == _KIND_TAGS["pgnn"]:
                (shaping_tag,) = struct.unpack("<I", fh.read(4))
                s_mat = _read_f64(fh, d_out * d_out, (d_out, d_out))
                op = ShapingOperator(_SHAPING_NAMES[shaping_tag], d_out, s_mat)
                w = _read_f64(fh, d_out * d_in, (d_out, d_in))
                b = _read_f64(fh, d_out, (d_out,))
                cb = _read_f64(fh, d_out * d_in, (d_out, d_in))
                cc = _read_f64(fh, d_out, (d_out,))
                (scale,) = struct.unpack("<d", fh.read(8))
                entries.append(PgnnBlock(op, w, b, cb, cc, _ACT_NAMES[act], scale))
            else:
                w = _read_f64(fh, d_out * d_in, (d_out, d_in))
                b = _read_f64(fh, d_out, (d_out,))
                entries.append(MlpLayer(w, b, _ACT_NAMES[act]))
    return Network(entries[:-1], entries[-1])

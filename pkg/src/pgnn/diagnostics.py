"""Representation and sensitivity metrics over trained networks.

Activation matrices follow the rows-are-samples convention (n x d); traces
coming out of the network are column-major and get transposed at the call
sites here.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegradedRankError,
    NotApplicableError,
    ShapeError,
    UndefinedMetricError,
)
from .linalg import center_columns, pca_topk, svd
from .network import ForwardTrace, Network, forward, jacobian_input_to_logits


def cka_linear(h: np.ndarray, z: np.ndarray) -> float:
    """Centered linear CKA between two activation sets.

    Uses the cross-covariance form |Hc^T Zc|^2_F / (|Hc^T Hc|_F |Zc^T Zc|_F),
    which equals the centered-Gram form without materializing n x n matrices.
    """
    h = np.asarray(h, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if h.ndim != 2 or z.ndim != 2 or h.shape[0] != z.shape[0]:
        raise ShapeError(f"activation sets need equal row counts, got {h.shape} and {z.shape}")
    if h.shape[0] < 3:
        raise ShapeError(f"need at least 3 samples, got {h.shape[0]}")
    hc = center_columns(h)
    zc = center_columns(z)
    h_gram = float(np.linalg.norm(hc.T @ hc))
    z_gram = float(np.linalg.norm(zc.T @ zc))
    if h_gram <= 1e-300 or z_gram <= 1e-300:
        raise UndefinedMetricError("centered Gram is zero (constant features); CKA undefined")
    cross = float(np.linalg.norm(hc.T @ zc))
    return cross**2 / (h_gram * z_gram)


def sov(h_tr: np.ndarray, h_ho: np.ndarray, k: int = 16) -> float:
    """Mean squared cosine of principal angles between top-k PCA subspaces.

    1.0 means identical subspaces, 0.0 orthogonal ones. Raises
    DegradedRankError (carrying the achievable rank) when either activation
    set has rank below k.
    """
    h_tr = np.asarray(h_tr, dtype=np.float64)
    h_ho = np.asarray(h_ho, dtype=np.float64)
    if h_tr.shape[1] != h_ho.shape[1]:
        raise ShapeError(f"feature dims differ: {h_tr.shape} vs {h_ho.shape}")
    for name, h in (("first", h_tr), ("second", h_ho)):
        _, s, _ = svd(center_columns(h))
        rank = int(np.sum(s > 1e-12 * max(s[0], 1.0)))
        if rank < k:
            raise DegradedRankError(
                f"{name} activation set has rank {rank} < k={k}", achievable_rank=rank
            )
    u_tr = pca_topk(h_tr, k)
    u_ho = pca_topk(h_ho, k)
    return float(np.linalg.norm(u_tr.T @ u_ho) ** 2) / k


def jacobian_spectrum_batch(net: Network, x: np.ndarray, samples: int = 32) -> np.ndarray:
    """Mean of per-sample sorted singular values of the input->logits Jacobian."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != samples:
        raise ShapeError(f"expected {samples} column samples, got shape {x.shape}")
    spectra = np.empty((samples, min(net.output_dim, net.input_dim)))
    for i in range(samples):
        jac = jacobian_input_to_logits(net, x[:, i])
        _, s, _ = svd(jac)
        spectra[i] = s
    return spectra.mean(axis=0)


def layerwise_gap(net: Network, train_x: np.ndarray, val_x: np.ndarray) -> list[float]:
    """Per hidden layer, MSE between per-unit mean activations on the two batches."""
    tr = forward(net, train_x)
    va = forward(net, val_x)
    gaps = []
    for lt_tr, lt_va in zip(tr.layers, va.layers):
        m_tr = lt_tr.output.mean(axis=1)
        m_va = lt_va.output.mean(axis=1)
        gaps.append(float(np.mean((m_tr - m_va) ** 2)))
    return gaps


def correction_load(trace: ForwardTrace) -> list[float]:
    """Per block, batch-mean share of output norm carried by the correction path."""
    loads = []
    for lt in trace.layers:
        if lt.structured is None or lt.correction is None:
            continue
        s_norm = np.linalg.norm(lt.structured, axis=0)
        c_norm = np.linalg.norm(lt.correction, axis=0)
        loads.append(float(np.mean(c_norm / (s_norm + c_norm + 1e-12))))
    if not loads:
        raise NotApplicableError("trace has no structured-corrective blocks")
    return loads


def grad_norm_total(grads: dict[str, np.ndarray]) -> float:
    """L2 norm of all parameter gradients concatenated."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g) ** 2))
    return float(np.sqrt(total))


@dataclass
class DiagnosticsReport:
    """Bundle of per-layer representation metrics for one trained network."""

    cka: list[float] = field(default_factory=list)
    sov: list[float] = field(default_factory=list)
    ridge_r2: list[float] = field(default_factory=list)
    jacobian_spectrum: np.ndarray | None = None
    layerwise_gap: list[float] = field(default_factory=list)
    correction_load: list[float] = field(default_factory=list)

    def scalars(self, prefix: str = "") -> dict[str, float]:
        out: dict[str, float] = {}
        for i, v in enumerate(self.cka):
            out[f"{prefix}cka.L{i + 1}"] = v
        for i, v in enumerate(self.sov):
            out[f"{prefix}sov.L{i + 1}"] = v
        for i, v in enumerate(self.ridge_r2):
            out[f"{prefix}ridge_r2.L{i + 1}"] = v
        for i, v in enumerate(self.layerwise_gap):
            out[f"{prefix}layer_gap.L{i + 1}"] = v
        for i, v in enumerate(self.correction_load):
            out[f"{prefix}correction_load.L{i + 1}"] = v
        if self.jacobian_spectrum is not None:
            for i in range(min(3, self.jacobian_spectrum.size)):
                out[f"{prefix}jacobian_sigma{i + 1}"] = float(self.jacobian_spectrum[i])
            if self.jacobian_spectrum.size >= 10:
                out[f"{prefix}jacobian_tail_ratio"] = float(
                    self.jacobian_spectrum[9] / self.jacobian_spectrum[0]
                )
        return out


def hidden_activations(net: Network, x: np.ndarray) -> list[np.ndarray]:
    """Hidden-layer outputs as rows-are-samples matrices."""
    trace = forward(net, x)
    return [lt.output.T for lt in trace.layers]

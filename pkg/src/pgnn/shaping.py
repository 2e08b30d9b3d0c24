"""Fixed shaping operators for the structured path of a block.

Four constructive forms: identity, orthonormal-DCT low-pass projector,
scaled random orthogonal projection, and diagonal scaling. Operators are
frozen after construction and never trained.
"""

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .linalg import qr_orthonormal
from .rng import make_rng

IDENTITY = "identity"
DCT_LOWPASS = "dct_lowpass"
LOW_RANK = "low_rank"
DIAGONAL = "diagonal"


@dataclass(frozen=True)
class ShapingOperator:
    kind: str
    dim: int
    matrix: np.ndarray  # materialized d x d form
    params: dict = field(default_factory=dict)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply(self, x)


def dct_matrix(d: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, rows indexed by frequency k = 0..d-1."""
    k = np.arange(d)[:, None]
    i = np.arange(d)[None, :]
    c = np.cos(np.pi * k * (2 * i + 1) / (2 * d))
    alpha = np.full(d, np.sqrt(2.0 / d))
    alpha[0] = np.sqrt(1.0 / d)
    return alpha[:, None] * c


def identity(d: int) -> ShapingOperator:
    if d < 1:
        raise ShapeError(f"operator dim must be >= 1, got {d}")
    return ShapingOperator(IDENTITY, d, np.eye(d))


def make_dct_lowpass(d: int, keep_fraction: float) -> ShapingOperator:
    """Projector C^T diag(L) C keeping the ceil(keep_fraction*d) lowest frequencies."""
    if d < 1:
        raise ShapeError(f"operator dim must be >= 1, got {d}")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    kept = ceil(keep_fraction * d)
    if kept < 1:
        raise DegenerateInputError(f"keep_fraction {keep_fraction} keeps no frequencies at d={d}")
    c = dct_matrix(d)
    mask = np.zeros(d)
    mask[:kept] = 1.0
    s = c.T @ (mask[:, None] * c)
    return ShapingOperator(DCT_LOWPASS, d, s, {"keep_fraction": keep_fraction, "kept": kept})


def make_low_rank_projection(d: int, rank: int, scale: float, seed: int) -> ShapingOperator:
    """scale * Q Q^T for a seeded random orthonormal d x rank basis Q."""
    if not 1 <= rank <= d:
        raise ShapeError(f"rank must be in [1, {d}], got {rank}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = make_rng("shaping.low_rank", seed, d, rank)
    q = qr_orthonormal(rng.standard_normal((d, rank)))
    s = scale * (q @ q.T)
    return ShapingOperator(LOW_RANK, d, s, {"rank": rank, "scale": scale, "seed": seed})


def make_diagonal(entries: np.ndarray) -> ShapingOperator:
    entries = np.asarray(entries, dtype=np.float64)
    if entries.ndim != 1:
        raise ShapeError(f"diagonal entries must be 1-D, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise ValueError("diagonal entries must be finite")
    return ShapingOperator(DIAGONAL, entries.size, np.diag(entries), {"entries": entries.copy()})


def apply(s: ShapingOperator, x: np.ndarray) -> np.ndarray:
    """Apply the operator to column-vector data X (d x batch)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != s.dim:
        raise ShapeError(f"operator dim {s.dim} does not match input shape {x.shape}")
    if s.kind == IDENTITY:
        return x
    return s.matrix @ x


@dataclass(frozen=True)
class ShapingSpec:
    """Declarative operator description; materialized per layer width."""

    kind: str = IDENTITY
    keep_fraction: float = 0.25
    rank: int | None = None
    scale: float = 1.0
    entries: tuple[float, ...] | None = None
    seed: int = 0

    def build(self, dim: int) -> ShapingOperator:
        if self.kind == IDENTITY:
            return identity(dim)
        if self.kind == DCT_LOWPASS:
            return make_dct_lowpass(dim, self.keep_fraction)
        if self.kind == LOW_RANK:
            if self.rank is None:
                raise ValueError("low_rank shaping needs a rank")
            return make_low_rank_projection(dim, self.rank, self.scale, self.seed)
        if self.kind == DIAGONAL:
            if self.entries is None:
                raise ValueError("diagonal shaping needs entries")
            entries = np.asarray(self.entries, dtype=np.float64)
            if entries.size != dim:
                raise ShapeError(f"diagonal entries have size {entries.size}, layer dim is {dim}")
            return make_diagonal(entries)
        raise ValueError(f"unknown shaping kind {self.kind!r}")

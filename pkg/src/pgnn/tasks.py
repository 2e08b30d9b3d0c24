"""Dataset generators for the experiments, plus the FMNIST IDX ingestion path.

Inputs are column-major (d x n). Regression targets are (m x n) matrices,
classification targets are integer label vectors. Generators are
deterministic per seed; nothing here touches the network.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import IdxFormatError, ShapeError
from .linalg import qr_orthonormal
from .rng import make_rng

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class Split:
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.shape[1]


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split
    task: str
    latents: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.train.inputs.shape[0]

    @property
    def output_dim(self) -> int:
        if self.task == CLASSIFICATION:
            return int(self.meta["classes"])
        return self.train.targets.shape[0]


def gen_alignment(
    d: int = 16,
    m: int = 4,
    sigma: float = 0.05,
    n_train: int = 8192,
    n_test: int = 512,
    seed: int = 0,
) -> Dataset:
    """Latent-subspace regression: z = U^T x, y = V z + noise.

    U is an orthonormal basis from QR on a Gaussian matrix, V has N(0, 1/d)
    entries so targets stay O(1). U, V and the latents are retained for the
    alignment diagnostics.
    """
    if m > d:
        raise ShapeError(f"latent output dim m={m} exceeds d={d}")
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    rng = make_rng("task.alignment", seed)
    u = qr_orthonormal(rng.standard_normal((d, d)))
    n = n_train + n_test
    x = rng.standard_normal((d, n))
    v = rng.standard_normal((m, d)) / np.sqrt(d)
    eps = sigma * rng.standard_normal((m, n))
    z = u.T @ x
    y = v @ z + eps
    tr = slice(0, n_train)
    te = slice(n_train, n)
    return Dataset(
        train=Split(x[:, tr], y[:, tr]),
        val=Split(x[:, te], y[:, te]),
        test=Split(x[:, te], y[:, te]),
        task=REGRESSION,
        latents={"U": u, "V": v, "Z_train": z[:, tr], "Z_test": z[:, te]},
        meta={"d": d, "m": m, "sigma": sigma, "n_train": n_train, "n_test": n_test, "seed": seed},
    )


def gen_linear_noise_classification(
    d: int = 16,
    classes: int = 2,
    n: int = 8192,
    seed: int = 0,
    n_test: int = 512,
) -> Dataset:
    """Labels from noisy linear class scores: argmax_c (w_c . x + noise)."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    rng = make_rng("task.linear_noise", seed)
    w = rng.standard_normal((classes, d))
    total = n + n_test
    x = rng.standard_normal((d, total))
    noise = 0.5 * rng.standard_normal((classes, total))  # variance 0.25
    labels = np.argmax(w @ x + noise, axis=0).astype(np.int64)
    tr = slice(0, n)
    te = slice(n, total)
    return Dataset(
        train=Split(x[:, tr], labels[tr]),
        val=Split(x[:, te], labels[te]),
        test=Split(x[:, te], labels[te]),
        task=CLASSIFICATION,
        latents={"class_weights": w},
        meta={"d": d, "classes": classes, "n": n, "n_test": n_test, "seed": seed},
    )


def gen_aligned_regression(
    d: int = 16,
    signal_dims: int = 4,
    permuted: bool = False,
    n: int = 4096,
    seed: int = 0,
    n_test: int = 512,
    scale_decay: float = 0.6,
    permutation: np.ndarray | None = None,
) -> Dataset:
    """Regression whose target reads a few coordinates of an anisotropic input.

    Coordinate i has standard deviation scale_decay**i, so early coordinates
    dominate. Aligned targets read the first `signal_dims` coordinates;
    permuted targets read the same target function through a seeded
    permutation of coordinates (typically landing on weak ones).
    """
    if signal_dims > d:
        raise ShapeError(f"signal_dims={signal_dims} exceeds d={d}")
    rng = make_rng("task.aligned_regression", seed)
    scales = scale_decay ** np.arange(d)
    total = n + n_test
    x = rng.standard_normal((d, total)) * scales[:, None]
    w = rng.standard_normal(signal_dims)
    if permutation is None:
        permutation = make_rng("task.aligned_regression.perm", seed).permutation(d)
    else:
        permutation = np.asarray(permutation, dtype=np.int64)
        if sorted(permutation.tolist()) != list(range(d)):
            raise ValueError("permutation must rearrange 0..d-1")
    coords = permutation[:signal_dims] if permuted else np.arange(signal_dims)
    y = (w @ x[coords, :])[None, :]
    tr = slice(0, n)
    te = slice(n, total)
    return Dataset(
        train=Split(x[:, tr], y[:, tr]),
        val=Split(x[:, te], y[:, te]),
        test=Split(x[:, te], y[:, te]),
        task=REGRESSION,
        meta={
            "d": d,
            "signal_dims": signal_dims,
            "permuted": permuted,
            "coords": coords.copy(),
            "weights": w.copy(),
            "scales": scales,
            "permutation": np.asarray(permutation).copy(),
            "seed": seed,
        },
    )


_IMAGE_MAGIC = 2051
_LABEL_MAGIC = 2049


def _read_u32(data: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"file truncated while reading {what}", len(data))
    return int.from_bytes(data[offset : offset + 4], "big")


def load_fmnist_idx(images_path: str, labels_path: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a big-endian IDX image/label pair.

    Returns (pixels, labels) with pixels scaled to [0, 1], shaped
    (rows*cols, count) column-major. Rejects bad magic numbers, truncated
    or oversized payloads, and image/label count mismatches.
    """
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()

    magic = _read_u32(img, 0, "image magic")
    if magic != _IMAGE_MAGIC:
        raise IdxFormatError(f"bad image magic {magic}, expected {_IMAGE_MAGIC}", 0)
    n_img = _read_u32(img, 4, "image count")
    rows = _read_u32(img, 8, "row count")
    cols = _read_u32(img, 12, "column count")
    expected = 16 + n_img * rows * cols
    if len(img) != expected:
        raise IdxFormatError(
            f"image payload is {len(img)} bytes, header implies {expected}",
            min(len(img), expected),
        )

    magic = _read_u32(lab, 0, "label magic")
    if magic != _LABEL_MAGIC:
        raise IdxFormatError(f"bad label magic {magic}, expected {_LABEL_MAGIC}", 0)
    n_lab = _read_u32(lab, 4, "label count")
    if len(lab) != 8 + n_lab:
        raise IdxFormatError(f"label payload is {len(lab)} bytes, header implies {8 + n_lab}", min(len(lab), 8 + n_lab))
    if n_img != n_lab:
        raise IdxFormatError(f"image count {n_img} != label count {n_lab}", 4)

    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise IdxFormatError(f"label value {labels[bad[0]]} out of range 0-9", 8 + int(bad[0]))
    return pixels.reshape(n_img, rows * cols).T, labels


def fmnist_dataset(
    train_images: str,
    train_labels: str,
    test_images: str,
    test_labels: str,
    val_size: int = 5000,
    classes: int = 10,
) -> Dataset:
    """Assemble the FMNIST dataset, holding out the last `val_size` training images."""
    x_tr, y_tr = load_fmnist_idx(train_images, train_labels)
    x_te, y_te = load_fmnist_idx(test_images, test_labels)
    if not 0 < val_size < x_tr.shape[1]:
        raise ValueError(f"val_size {val_size} out of range for {x_tr.shape[1]} training images")
    cut = x_tr.shape[1] - val_size
    return Dataset(
        train=Split(x_tr[:, :cut], y_tr[:cut]),
        val=Split(x_tr[:, cut:], y_tr[cut:]),
        test=Split(x_te, y_te),
        task=CLASSIFICATION,
        meta={"classes": classes, "val_size": val_size},
    )

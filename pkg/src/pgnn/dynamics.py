"""Recursive fixed-point machinery: iteration, Lipschitz certificates,
contraction measurement, and the composed-class generalization bound.

The recursion is x_{t+1} = A x_t + alpha * act(B x_t) with a fixed square
linear part A (typically a shaped weight product). All activations used in
the correction are 1-Lipschitz, so the certificate gamma = |A|_2 +
alpha * |B|_2 upper-bounds the true contraction factor.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonContractiveError, NumericalFailureError, ShapeError
from .linalg import qr_orthonormal, spectral_norm
from .network import CORRECTION_ACTIVATIONS, act_forward
from .rng import make_rng

DIVERGENCE_LIMIT = 1e12

# every supported correction activation is 1-Lipschitz (elu at alpha=1)
ACTIVATION_LIPSCHITZ = {name: 1.0 for name in CORRECTION_ACTIVATIONS}


@dataclass(frozen=True)
class RecursiveSystem:
    linear_part: np.ndarray  # d x d
    correction_B: np.ndarray  # d x d
    correction_scale: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        a, b = self.linear_part, self.correction_B
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"linear part must be square, got {a.shape}")
        if b.shape != a.shape:
            raise ShapeError(f"correction shape {b.shape} != linear shape {a.shape}")
        if self.activation not in ACTIVATION_LIPSCHITZ:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dim(self) -> int:
        return self.linear_part.shape[0]

    def step(self, x: np.ndarray) -> np.ndarray:
        return self.linear_part @ x + self.correction_scale * act_forward(
            self.activation, self.correction_B @ x
        )


@dataclass(frozen=True)
class ContractionCertificate:
    L1: float
    L2: float

    @property
    def gamma(self) -> float:
        return self.L1 + self.L2

    @property
    def contractive(self) -> bool:
        return self.gamma < 1.0


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1) x d

    @property
    def length(self) -> int:
        return self.states.shape[0] - 1


def iterate(sys: RecursiveSystem, x0: np.ndarray, t_steps: int) -> Trajectory:
    """Run the recursion for t_steps, recording every state."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != sys.dim:
        raise ShapeError(f"start has dim {x0.size}, system has dim {sys.dim}")
    if t_steps < 1:
        raise ValueError(f"need at least one step, got {t_steps}")
    states = np.empty((t_steps + 1, sys.dim))
    states[0] = x0
    for t in range(t_steps):
        states[t + 1] = sys.step(states[t])
        if np.max(np.abs(states[t + 1])) > DIVERGENCE_LIMIT:
            raise NumericalFailureError(f"state diverged beyond {DIVERGENCE_LIMIT:g} at step {t + 1}")
    return Trajectory(states)


def lipschitz_upper_bound(sys: RecursiveSystem) -> ContractionCertificate:
    """Certificate gamma = |A|_2 + scale * |B|_2 * Lip(act)."""
    l1 = spectral_norm(sys.linear_part)
    l2 = abs(sys.correction_scale) * spectral_norm(sys.correction_B) * ACTIVATION_LIPSCHITZ[sys.activation]
    return ContractionCertificate(L1=l1, L2=l2)


def contraction_metric(traj: Trajectory) -> np.ndarray:
    """Mean absolute change between consecutive states, one value per step."""
    deltas = np.abs(np.diff(traj.states, axis=0))
    return deltas.mean(axis=1)


def verify_unique_fixed_point(
    sys: RecursiveSystem,
    trials: int = 10,
    t_steps: int = 100,
    tol: float = 1e-6,
    seed: int = 0,
) -> bool:
    """Check that `trials` random starts all land on one common fixed point.

    Requires a contractive certificate up front; returns True iff all terminal
    states agree pairwise within tol and each satisfies |F(x) - x| <= tol.
    """
    cert = lipschitz_upper_bound(sys)
    if not cert.contractive:
        raise NonContractiveError(
            f"certificate gamma = {cert.gamma:.4f} >= 1; fixed-point check refused"
        )
    rng = make_rng("dynamics.fixed_point", seed)
    terminals = np.empty((trials, sys.dim))
    for i in range(trials):
        x0 = 2.0 * rng.standard_normal(sys.dim)
        terminals[i] = iterate(sys, x0, t_steps).states[-1]
    for i in range(trials):
        if np.linalg.norm(sys.step(terminals[i]) - terminals[i]) > tol:
            return False
        for j in range(i + 1, trials):
            if np.linalg.norm(terminals[i] - terminals[j]) > tol:
                return False
    return True


def generalization_bound(
    emp_risk: float,
    lipschitz: float,
    alpha: float,
    weight_bound: float,
    beta: float,
    n: int,
    delta: float,
) -> float:
    """Composed-class risk bound: empirical risk plus capacity and confidence slack.

    emp_risk + lipschitz*alpha*weight_bound/sqrt(n) + beta/sqrt(n)
    + sqrt(log(1/delta) / (2n)), with the correction-class complexity
    instantiated as beta/sqrt(n).
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    for name, v in (("lipschitz", lipschitz), ("alpha", alpha), ("weight_bound", weight_bound), ("beta", beta)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    root_n = math.sqrt(n)
    return (
        emp_risk
        + lipschitz * alpha * weight_bound / root_n
        + beta / root_n
        + math.sqrt(math.log(1.0 / delta) / (2.0 * n))
    )


def _scaled_to_norm(m: np.ndarray, target: float) -> np.ndarray:
    return m * (target / spectral_norm(m))


def example_orthogonal_system(d: int = 8, seed: int = 0, w_norm: float = 1.0) -> RecursiveSystem:
    """Orthogonal(-scaled) linear part with a tanh correction of norm 0.2."""
    rng = make_rng("dynamics.example1", seed)
    w = qr_orthonormal(rng.standard_normal((d, d))) * w_norm
    b = _scaled_to_norm(rng.standard_normal((d, d)), 0.2)
    return RecursiveSystem(linear_part=w, correction_B=b, correction_scale=1.0, activation="tanh")


def example_low_rank_system(d: int = 8, seed: int = 0) -> RecursiveSystem:
    """Rank-d/2 projection of norm 0.5 times a norm-1 weight, ReLU correction of norm 0.3."""
    from .shaping import make_low_rank_projection

    rng = make_rng("dynamics.example2", seed)
    s = make_low_rank_projection(d, max(1, d // 2), 0.5, seed)
    w = _scaled_to_norm(rng.standard_normal((d, d)), 1.0)
    b = _scaled_to_norm(rng.standard_normal((d, d)), 0.3)
    return RecursiveSystem(linear_part=s.matrix @ w, correction_B=b, correction_scale=1.0, activation="relu")


def example_diagonal_system(d: int = 8, seed: int = 0, activation: str = "softsign") -> RecursiveSystem:
    """Diagonal linear part with max |entry| 0.4 and a scaled smooth correction with L2 = 0.4."""
    rng = make_rng("dynamics.example3", seed)
    lam = rng.uniform(-1.0, 1.0, size=d)
    lam *= 0.4 / np.max(np.abs(lam))
    b = _scaled_to_norm(rng.standard_normal((d, d)), 0.5)
    return RecursiveSystem(
        linear_part=np.diag(lam), correction_B=b, correction_scale=0.8, activation=activation
    )

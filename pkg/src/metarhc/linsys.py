"""Linear plant: representation, sampling, simulation, structural constants.

The plant is x_{t+1} = A x_t + B u_t (deterministic); the controller only
sees y_t = x_t + eps_t with bounded zero-mean noise. Systems live in a
compact set: a Frobenius ball of radius S intersected with a spectral
radius cap and a controllability requirement.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


class DimensionError(ValueError):
    """Raised when vector/matrix dimensions do not line up."""


class InfeasibleThetaSetError(RuntimeError):
    """Raised when rejection sampling cannot produce a valid system."""


@dataclass(frozen=True)
class SystemParams:
    """A linear system theta = [A, B] with A (n x n) and B (n x m)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B rows {B.shape[0]} != state dim {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        """Stacked parameter matrix [A, B], shape n x (n+m)."""
        return np.hstack([self.A, self.B])

    @classmethod
    def from_theta(cls, theta: np.ndarray, n: int, m: int) -> "SystemParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (n, n + m):
            raise DimensionError(f"theta shape {theta.shape} != ({n}, {n + m})")
        return cls(A=theta[:, :n].copy(), B=theta[:, n:].copy())

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.theta))

    def controllability_matrix(self) -> np.ndarray:
        blocks = []
        P = self.B
        for _ in range(self.n):
            blocks.append(P)
            P = self.A @ P
        return np.hstack(blocks)

    def is_controllable(self, tol: float = 1e-9) -> bool:
        C = self.controllability_matrix()
        return int(np.linalg.matrix_rank(C, tol=tol)) == self.n


@dataclass(frozen=True)
class ThetaSet:
    """The known compact set of admissible systems.

    Frobenius ball of radius S intersected with {rho(A) <= rho_max};
    sampled members must additionally be controllable. An optional anchor
    plus task_radius describes the task distribution systems are drawn
    from (a Frobenius sub-ball around the anchor).
    """

    n: int
    m: int
    S: float
    rho_max: float = 0.95
    anchor: Optional[SystemParams] = None
    task_radius: float = 0.0

    def __post_init__(self):
        if self.S <= 0:
            raise ValueError("S must be positive")
        if not 0.0 < self.rho_max < 1.0:
            raise ValueError("rho_max must lie in (0, 1)")
        if self.task_radius < 0:
            raise ValueError("task_radius must be nonnegative")
        if self.anchor is not None:
            if (self.anchor.n, self.anchor.m) != (self.n, self.m):
                raise DimensionError("anchor dimensions do not match the set")
            if not self.contains(self.anchor.theta):
                raise ValueError("anchor is not a member of the set")

    def contains(self, theta: np.ndarray, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n, self.n + self.m):
            return False
        if np.linalg.norm(theta) > self.S + tol:
            return False
        rho = float(np.max(np.abs(np.linalg.eigvals(theta[:, : self.n]))))
        return rho <= self.rho_max + tol


def project_into_theta_set(theta: np.ndarray, tset: ThetaSet,
                           margin: float = 1e-3) -> np.ndarray:
    """Two-stage feasibility map onto the set: ball scale, then A-block scale.

    Not the exact metric projection (the spectral-radius set is nonconvex);
    the rule is deterministic and always lands inside the set.
    """
    theta = np.asarray(theta, dtype=float).copy()
    nrm = np.linalg.norm(theta)
    if nrm > tset.S:
        theta *= tset.S / nrm
    A = theta[:, : tset.n]
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if tset.n else 0.0
    if rho > tset.rho_max:
        theta[:, : tset.n] = A * ((tset.rho_max - margin) / rho)
    return theta


class NoiseModel:
    """Bounded observation noise stream.

    Per-component Gaussian with standard deviation R, rejected and
    resampled whenever the Euclidean norm exceeds eps_c, so every draw
    satisfies ||eps||_2 <= eps_c while staying zero-mean and conditionally
    R sub-Gaussian. Advancing the stream is deterministic in the seed.
    """

    MAX_REJECTIONS = 10**6

    def __init__(self, R: float, eps_c: float, seed: int):
        if R < 0 or eps_c < 0:
            raise ValueError("R and eps_c must be nonnegative")
        self.R = float(R)
        self.eps_c = float(eps_c)
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def draw(self, n: int) -> np.ndarray:
        if self.eps_c == 0.0 or self.R == 0.0:
            return np.zeros(n)
        for _ in range(self.MAX_REJECTIONS):
            eps = self._rng.normal(0.0, self.R, size=n)
            if np.linalg.norm(eps) <= self.eps_c:
                return eps
        raise RuntimeError(
            f"noise rejection did not terminate: eps_c={self.eps_c} is too "
            f"small relative to R={self.R}"
        )

    def reset(self):
        self._rng = np.random.default_rng(self.seed)


def step(sys: SystemParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance the deterministic plant one step: A x + B u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionError(f"state shape {x.shape} != ({sys.n},)")
    if u.shape != (sys.m,):
        raise DimensionError(f"input shape {u.shape} != ({sys.m},)")
    return sys.A @ x + sys.B @ u


def observe(x: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Noisy state observation y = x + eps, eps drawn from the stream."""
    x = np.asarray(x, dtype=float)
    return x + noise.draw(x.size)


def _uniform_ball(rng: np.random.Generator, shape: tuple, radius: float) -> np.ndarray:
    """Uniform draw from the Frobenius ball of the given radius."""
    d = int(np.prod(shape))
    g = rng.standard_normal(d)
    nrm = np.linalg.norm(g)
    if nrm == 0.0:
        return np.zeros(shape)
    r = radius * rng.uniform() ** (1.0 / d)
    return (r * g / nrm).reshape(shape)


def sample_theta(tset: ThetaSet, seed, max_tries: int = 10**4,
                 check_controllability: bool = True) -> SystemParams:
    """Rejection-sample a member of the set (within task_radius of the anchor).

    check_controllability=False keeps uncontrollable draws (used by the
    report-only validation path). Raises InfeasibleThetaSetError after
    max_tries rejections.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, m = tset.n, tset.m
    if tset.anchor is not None and tset.task_radius == 0.0:
        return tset.anchor
    for _ in range(max_tries):
        if tset.anchor is not None:
            theta = tset.anchor.theta + _uniform_ball(rng, (n, n + m), tset.task_radius)
        else:
            theta = _uniform_ball(rng, (n, n + m), tset.S)
        if not tset.contains(theta):
            continue
        cand = SystemParams.from_theta(theta, n, m)
        if cand.spectral_radius() >= tset.rho_max:
            continue
        if check_controllability and not cand.is_controllable():
            continue
        return cand
    raise InfeasibleThetaSetError(
        f"no valid system found in {max_tries} draws; the set is likely infeasible"
    )


def char_poly_coeffs(A: np.ndarray) -> np.ndarray:
    """Characteristic polynomial coefficients [d_0, ..., d_n], d_0 = 1.

    sum_k d_{n-k} z^k is det(zI - A). Computed by the Faddeev-LeVerrier
    recurrence, which is exact in the coefficients for the small n used
    here and avoids eigenvalue conditioning issues.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError("A must be square")
    n = A.shape[0]
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    M = np.zeros_like(A)
    I = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + coeffs[k - 1] * I
        coeffs[k] = -np.trace(A @ M) / k
    return coeffs


def g_matrix(sys: SystemParams) -> tuple:
    """Structural matrix G and its controllability margin c_g.

    G = [[Q, 0], [Hc, I_m]] with Q = [q_n, ..., q_1], q_j = sum_{l=1..j}
    d_{j-l} A^{l-1} B, and Hc = [d_n I_m, ..., d_1 I_m], where d are the
    characteristic polynomial coefficients. Returns (G, c_g) with
    c_g = lambda_min(G G^T); c_g > 0 iff (A, B) is controllable, and
    c_g <= 0 signals the margin assumption fails.
    """
    n, m = sys.n, sys.m
    d = char_poly_coeffs(sys.A)
    # q_j built from powers A^{l-1} B, l = 1..j
    powers = []
    P = sys.B
    for _ in range(n):
        powers.append(P)
        P = sys.A @ P
    q = []
    for j in range(1, n + 1):
        qj = np.zeros((n, m))
        for l in range(1, j + 1):
            qj += d[j - l] * powers[l - 1]
        q.append(qj)
    Q = np.hstack(q[::-1])  # [q_n, ..., q_1]
    Hc = np.hstack([d[n - i] * np.eye(m) for i in range(n)])  # [d_n I, ..., d_1 I]
    G = np.block([[Q, np.zeros((n, m))], [Hc, np.eye(m)]])
    c_g = float(np.min(np.linalg.eigvalsh(G @ G.T)))
    return G, c_g

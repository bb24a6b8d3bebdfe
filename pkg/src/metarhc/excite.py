"""Excitation perturbations and persistence-of-excitation certification.

Each applied input extends a stacked-input column W_k = [u_bar_k; ...;
u_bar_{k+n}]. Keeping consecutive columns linearly independent with norms
at the excitation scale makes the regressor Gram matrix grow uniformly in
all directions; the perturbation rule below aligns each new column with
the null direction left open by the retained ones. Column bookkeeping
restarts at every interval boundary.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np


def _sign(x: float) -> float:
    """Sign with the 0 -> +1 convention (determinism at the undefined point)."""
    return 1.0 if x >= 0.0 else -1.0


@dataclass
class PECertificate:
    j: int
    lambda_min: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.lambda_min >= self.threshold


def certify_pe(z_history: np.ndarray, j: int, c_p: float, gamma: float) -> PECertificate:
    """Check lambda_min(sum z z') >= gamma * c_p * t at the boundary of
    interval j, over the whole history z_1..z_{t_j}."""
    Z = np.atleast_2d(np.asarray(z_history, dtype=float))
    V = Z.T @ Z
    lam_min = float(np.min(np.linalg.eigvalsh(V)))
    return PECertificate(j=j, lambda_min=lam_min, threshold=gamma * c_p * Z.shape[0])


def probing_sequence(k: int, n: int, m: int) -> np.ndarray:
    """Deterministic unit-vector/zero input schedule (validation aid).

    u_k = e_j with j the largest index <= m such that (k-1) mod (n+1)j = 0,
    and u_k = 0 when no such index exists.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    u = np.zeros(m)
    for j in range(m, 0, -1):
        if (k - 1) % ((n + 1) * j) == 0:
            u[j - 1] = 1.0
            break
    return u


class ExcitationEngine:
    """Sequential perturbation generator for one episode.

    Call start_interval at each interval boundary, then perturb/record at
    every step. The retained window holds the most recent completed
    columns; the new input is pushed away from orthogonality with the
    unit null vector of that window.
    """

    def __init__(self, n: int, m: int, svd_floor: float = 1e-10):
        self.n = n
        self.m = m
        self.n_c = (n + 1) * m
        self.svd_floor = svd_floor
        self.c_p = None
        self._inputs: List[np.ndarray] = []
        # diagnostics for tests: sign margins and completed-window ranks
        self.sign_margins: List[float] = []
        self.window_min_svals: List[float] = []
        self.column_norms: List[float] = []

    def start_interval(self, c_p: float):
        self.c_p = float(c_p)
        self._inputs = []

    # -- null-direction machinery -------------------------------------------

    def _columns(self) -> np.ndarray:
        """Completed stacked columns so far in this interval, newest last."""
        L = len(self._inputs)
        ncols = L - self.n
        if ncols <= 0:
            return np.zeros((self.n_c, 0))
        cols = [np.concatenate(self._inputs[i:i + self.n + 1]) for i in range(ncols)]
        return np.column_stack(cols)

    def _retained(self) -> np.ndarray:
        """The most recent min(n_c - 1, available) completed columns."""
        cols = self._columns()
        r = min(self.n_c - 1, cols.shape[1])
        return cols[:, cols.shape[1] - r:]

    def stacked_null_vector(self) -> Optional[np.ndarray]:
        """Unit vector orthogonal to all retained columns (None if the
        column being completed has no fixed blocks yet)."""
        if len(self._inputs) < self.n:
            return None
        Mr = self._retained()
        if Mr.shape[1] == 0:
            return None
        U, svals, _ = np.linalg.svd(Mr, full_matrices=True)
        return U[:, -1]

    def orthogonal_direction(self) -> np.ndarray:
        """Current-slot block of the null vector, normalized; zero vector
        when the block vanishes or history is too short."""
        w = self.stacked_null_vector()
        if w is None:
            return np.zeros(self.m)
        block = w[self.n * self.m:]
        nrm = np.linalg.norm(block)
        if nrm < self.svd_floor:
            return np.zeros(self.m)
        return block / nrm

    def _partial_sum(self, w: np.ndarray) -> float:
        """g: inner products of the null-vector blocks with the already
        applied inputs of the column being completed."""
        g = 0.0
        L = len(self._inputs)
        for b in range(self.n):
            u_prev = self._inputs[L - self.n + b]
            g += float(w[b * self.m:(b + 1) * self.m] @ u_prev)
        return g

    # -- the perturbation rule ----------------------------------------------

    def perturb(self, u_t: np.ndarray) -> np.ndarray:
        """Perturbation delta u for the intermediate input u_t.

        Exact case split on g (partial-column alignment) and g_perp
        (alignment of u_t with the open direction); magnitude is sqrt(c_p)
        or 2 sqrt(c_p), so ||delta u|| <= 2 sqrt(c_p) always.
        """
        if self.c_p is None:
            raise RuntimeError("start_interval must be called first")
        u_t = np.asarray(u_t, dtype=float)
        root_cp = math.sqrt(self.c_p)
        nrm_u = float(np.linalg.norm(u_t))
        if nrm_u > 0.0:
            e_t = u_t / nrm_u
        else:
            e_t = np.zeros(self.m)
            e_t[0] = 1.0  # fixed substitute direction for a zero input

        w = self.stacked_null_vector()
        block = w[self.n * self.m:] if w is not None else np.zeros(self.m)
        block_nrm = float(np.linalg.norm(block))
        if w is None or block_nrm < self.svd_floor:
            # open-direction block vanishes: any bounded push keeps rank
            return root_cp * e_t

        e_perp = block / block_nrm
        g = self._partial_sum(w)
        g_perp = float(block @ u_t)
        if abs(g_perp) <= 1e-12 * block_nrm * max(1.0, nrm_u):
            return _sign(g) * root_cp * e_perp
        g_s = _sign(g + g_perp) * _sign(g_perp)
        if g_s < 0 and abs(nrm_u - root_cp) >= root_cp:
            return g_s * root_cp * e_t
        if g_s < 0:
            return 2.0 * g_s * root_cp * e_t
        return root_cp * e_t

    def record(self, u_bar: np.ndarray):
        """Append the applied input and update diagnostics."""
        u_bar = np.asarray(u_bar, dtype=float)
        w = self.stacked_null_vector()
        self._inputs.append(u_bar.copy())
        L = len(self._inputs)
        if w is not None:
            new_col = np.concatenate(self._inputs[L - self.n - 1:])
            self.sign_margins.append(abs(float(w @ new_col)))
        if L >= self.n + 1:
            self.column_norms.append(
                float(np.linalg.norm(np.concatenate(self._inputs[L - self.n - 1:]))))
        cols = self._columns()
        if cols.shape[1] >= self.n_c:
            window = cols[:, -self.n_c:]
            svals = np.linalg.svd(window, compute_uv=False)
            self.window_min_svals.append(float(svals[-1]))


def orthogonal_direction(state: ExcitationEngine) -> np.ndarray:
    """Open input direction for the current step (zero when degenerate)."""
    return state.orthogonal_direction()


def perturb(state: ExcitationEngine, u_t: np.ndarray, c_p: float = None) -> np.ndarray:
    """Perturbation for the intermediate input at the current step."""
    if c_p is not None and state.c_p != c_p:
        state.c_p = float(c_p)
    return state.perturb(u_t)

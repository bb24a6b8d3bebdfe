"""Outer meta-learner: projected online gradient descent on the prior.

After each episode the anchor is the per-interval least-squares fit
farthest from the current meta-parameter; the meta-loss is the Frobenius
distance to it.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from metarhc.linsys import ThetaSet, project_into_theta_set


@dataclass
class MetaState:
    """Meta-parameter and its across-episode history."""

    phi: np.ndarray
    episode_index: int = 1
    losses: List[float] = field(default_factory=list)
    anchors: List[np.ndarray] = field(default_factory=list)
    cumulative_loss: float = 0.0

    @classmethod
    def initial(cls, n: int, m: int, phi0: np.ndarray = None) -> "MetaState":
        phi = np.zeros((n, n + m)) if phi0 is None else np.asarray(phi0, dtype=float)
        return cls(phi=phi)

    def to_dict(self) -> dict:
        return {
            "phi": self.phi.tolist(),
            "episode_index": self.episode_index,
            "losses": list(self.losses),
            "anchors": [a.tolist() for a in self.anchors],
            "cumulative_loss": self.cumulative_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetaState":
        return cls(phi=np.asarray(d["phi"], dtype=float),
                   episode_index=int(d["episode_index"]),
                   losses=[float(x) for x in d["losses"]],
                   anchors=[np.asarray(a, dtype=float) for a in d["anchors"]],
                   cumulative_loss=float(d["cumulative_loss"]))


def episode_anchor(fits: List[np.ndarray], phi: np.ndarray):
    """The per-interval fit farthest (Frobenius) from phi.

    Ties go to the smallest interval index. Returns (theta_star, index).
    """
    if not fits:
        raise ValueError("need at least one completed interval")
    phi = np.asarray(phi, dtype=float)
    dists = [float(np.linalg.norm(np.asarray(f) - phi)) for f in fits]
    best = max(range(len(dists)), key=lambda i: (dists[i], -i))
    return np.asarray(fits[best], dtype=float), best


def project_theta(psi: np.ndarray, tset: ThetaSet) -> np.ndarray:
    """Feasibility map onto the admissible set (ball scale + A-block fix)."""
    return project_into_theta_set(psi, tset)


def meta_update(state: MetaState, theta_star: np.ndarray, tset: ThetaSet) -> MetaState:
    """One projected OGD step on the distance loss, eta_i = 1/sqrt(i).

    The loss gradient is -(theta* - phi)/||theta* - phi||; at the kink
    (theta* == phi) the zero subgradient is used, leaving phi unchanged.
    """
    i = state.episode_index
    phi = state.phi
    theta_star = np.asarray(theta_star, dtype=float)
    diff = theta_star - phi
    dist = float(np.linalg.norm(diff))
    eta = 1.0 / np.sqrt(i)
    if dist == 0.0:
        psi = phi.copy()
    else:
        psi = phi + eta * diff / dist
    phi_next = project_theta(psi, tset)
    return MetaState(phi=phi_next,
                     episode_index=i + 1,
                     losses=state.losses + [dist],
                     anchors=state.anchors + [theta_star.copy()],
                     cumulative_loss=state.cumulative_loss + dist)

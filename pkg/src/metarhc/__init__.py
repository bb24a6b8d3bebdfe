"""Online meta-learning receding-horizon control.

An outer gradient-descent meta-learner wrapped around a per-episode
confidence-set system identifier and a constrained MPC policy, plus a
harness that measures dynamic regret, constraint violation, and
cumulative estimation error across episodes.
"""

from metarhc.linsys import NoiseModel, SystemParams, ThetaSet
from metarhc.qp import InputPolytope, QuadCostSpec

__all__ = [
    "SystemParams",
    "ThetaSet",
    "NoiseModel",
    "QuadCostSpec",
    "InputPolytope",
]

__version__ = "0.1.0"

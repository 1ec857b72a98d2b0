"""
Greedy selection of the BSs that cooperatively serve one multicast group.

Gains are a table ``gains[b, u]`` of linear pathloss gains from BS ``b`` to
user ``u``. BSs of the synchronization area that are left out of the
cluster, and every BS outside the area, act as interferers.
"""
from dataclasses import dataclass

import numpy as np

__all__ = ["EmptyGroup", "ClusterRequest", "greedy_cluster", "sinr_for_cluster", "phase_one"]


class EmptyGroup(ValueError):
    """The multicast group has no users."""


@dataclass
class ClusterRequest:
    """
    Inputs of the greedy clustering.

    ``sync_area`` lists candidate BS indices; ``K_T_min`` is the minimum
    cluster size; ``noise_power`` and ``tx_power`` share linear units.
    """

    sync_area: np.ndarray
    group_user_indices: list
    K_T_min: int
    noise_power: float = 1.0
    tx_power: float = 1.0

    def __post_init__(self):
        self.sync_area = np.asarray(self.sync_area, dtype=int)
        if self.K_T_min < 1:
            raise ValueError("K_T_min must be >= 1")
        if self.K_T_min > len(self.sync_area):
            raise ValueError("K_T_min exceeds the synchronization area size")

    @classmethod
    def from_layout(cls, layout, K_T_min, noise_power=1.0, tx_power=1.0):
        users = list(range(len(layout.user_positions)))
        return cls(layout.sync_area, users, K_T_min, noise_power, tx_power)


def sinr_for_cluster(S, user, gains, noise_power, tx_power=1.0):
    """
    Power-sum SINR of ``user`` served by cluster ``S``.

    Every BS not in ``S`` (inside or outside the synchronization area)
    contributes interference ``gain * tx_power``.
    """
    S = np.asarray(sorted(set(int(s) for s in S)), dtype=int)
    if S.size == 0:
        raise ValueError("cluster must be nonempty")
    g = np.asarray(gains, dtype=float)[:, user]
    total = float(g.sum())
    signal = float(g[S].sum())
    return signal * tx_power / ((total - signal) * tx_power + noise_power)


def phase_one(req, gains):
    """BS with the highest received power for each user (lowest index on ties)."""
    if len(req.group_user_indices) == 0:
        raise EmptyGroup("multicast group has no users")
    g = np.asarray(gains, dtype=float)
    cand = req.sync_area
    chosen = set()
    for u in req.group_user_indices:
        rx = g[cand, u] * req.tx_power
        best = cand[rx == rx.max()].min()
        chosen.add(int(best))
    return chosen


def greedy_cluster(req, gains, phase2=True):
    """
    Greedy cluster for one multicast group.

    Phase one takes each user's strongest BS. Phase two then adds, one at a
    time, the candidate BS that maximizes the users' summed SINR until the
    cluster reaches ``K_T_min``. Ties go to the lowest BS index.

    Parameters
    ----------
    req : ClusterRequest
    gains : (n_bs, n_users) array_like
    phase2 : bool
        ``False`` stops after phase one.

    Returns
    -------
    set of int
    """
    g = np.asarray(gains, dtype=float)
    S = phase_one(req, g)
    if not phase2:
        return S
    users = list(req.group_user_indices)
    while len(S) < req.K_T_min:
        best, best_val = None, -np.inf
        for b in sorted(int(x) for x in req.sync_area):
            if b in S:
                continue
            trial = S | {b}
            val = sum(sinr_for_cluster(trial, u, g, req.noise_power, req.tx_power) for u in users)
            if val > best_val:
                best, best_val = b, val
        if best is None:
            break
        S.add(best)
    return S

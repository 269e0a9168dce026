"""Two-stage many-to-many matching for the low-complexity scheduling step.

Stage 1 pairs users with AAUs by path loss (nearest first) under per-AAU
quotas; stage 2 pairs each AAU's users with subcarriers by the beam-aligned
channel score under the reuse limit.  Both stages finish with swap passes
that execute any pairwise exchange improving both movers, so the emitted
matching is two-sided exchange stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import ChannelSet, NetworkConfig, Topology
from .robust import RobustMode, worst_case_signal


@dataclass(frozen=True)
class PreferenceList:
    owner: int
    ranked: tuple          # candidate ids, best first
    scores: tuple          # aligned with ranked


@dataclass
class Matching:
    aau_of_user: np.ndarray        # (K,) assigned AAU per user
    subcarriers: dict              # (k, f) -> sorted tuple of subcarriers
    rho: np.ndarray                # (K, N, F) binary

    def users_of(self, f: int) -> list[int]:
        return [k for k in range(len(self.aau_of_user)) if self.aau_of_user[k] == f]


def build_aau_preferences(topology: Topology) -> list[PreferenceList]:
    """Ascending distance, ties broken by lower AAU index."""
    K, F = topology.distances.shape
    prefs = []
    for k in range(K):
        order = sorted(range(F), key=lambda f: (topology.distances[k, f], f))
        prefs.append(PreferenceList(owner=k, ranked=tuple(order),
                                    scores=tuple(-topology.distances[k, f] for f in order)))
    return prefs


def _subcarrier_score(channels: ChannelSet, W: np.ndarray, k: int, n: int, f: int,
                      mode: RobustMode) -> float:
    """|h^H w|^2-style score at the current beam iterate.

    Under SBRS the score is the worst-case signal bound so the ranking is
    consistent with the robust objective.
    """
    Wm = W[k, n, f]
    if mode is RobustMode.SBRS:
        return worst_case_signal(channels.H_lift[k, n, f], Wm, float(channels.e[k, n, f]))
    return float(np.real(np.trace(channels.H_lift[k, n, f] @ Wm)))


def build_subcarrier_preferences(channels: ChannelSet, W: np.ndarray, k: int, f: int,
                                 mode: RobustMode = RobustMode.SBRS) -> PreferenceList:
    """Descending score, ties broken by lower subcarrier index."""
    N = channels.h_est.shape[1]
    scored = [(_subcarrier_score(channels, W, k, n, f, mode), n) for n in range(N)]
    order = sorted(range(N), key=lambda n: (-scored[n][0], n))
    return PreferenceList(owner=k, ranked=tuple(order),
                          scores=tuple(scored[n][0] for n in order))


def _stage1_assign(cfg: NetworkConfig, topology: Topology) -> np.ndarray:
    """Deferred-acceptance rounds: users propose nearest-first, AAUs keep
    the closest proposals up to quota sum_n L[n, f]."""
    K, F = topology.distances.shape
    quota = cfg.reuse_limit.sum(axis=0).astype(int)      # (F,)
    prefs = build_aau_preferences(topology)
    next_choice = np.zeros(K, dtype=int)
    held: list[list[int]] = [[] for _ in range(F)]
    unmatched = list(range(K))
    while unmatched:
        proposals: list[list[int]] = [[] for _ in range(F)]
        still = []
        for k in unmatched:
            if next_choice[k] >= F:
                continue  # exhausted every AAU; stays unmatched
            proposals[prefs[k].ranked[next_choice[k]]].append(k)
            next_choice[k] += 1
            still.append(k)
        if not still:
            break
        unmatched = []
        for f in range(F):
            pool = held[f] + proposals[f]
            pool.sort(key=lambda k: (topology.distances[k, f], k))
            held[f] = pool[:quota[f]]
            unmatched.extend(k for k in pool[quota[f]:])
    aau_of_user = np.full(K, -1, dtype=int)
    for f in range(F):
        for k in held[f]:
            aau_of_user[k] = f
    return aau_of_user


def _stage1_swap_pass(aau_of_user: np.ndarray, topology: Topology) -> None:
    """Execute user-pair AAU swaps while both strictly gain (less distance)."""
    K = len(aau_of_user)
    improved = True
    while improved:
        improved = False
        for k1 in range(K):
            for k2 in range(k1 + 1, K):
                f1, f2 = aau_of_user[k1], aau_of_user[k2]
                if f1 == f2 or f1 < 0 or f2 < 0:
                    continue
                if (topology.distances[k1, f2] < topology.distances[k1, f1]
                        and topology.distances[k2, f1] < topology.distances[k2, f2]):
                    aau_of_user[k1], aau_of_user[k2] = f2, f1
                    improved = True


def _stage2_assign(cfg: NetworkConfig, channels: ChannelSet, W: np.ndarray,
                   users: list[int], f: int, mode: RobustMode) -> dict[int, set]:
    """Per-AAU proposal rounds: subcarrier n keeps its top L[n, f] scorers.

    Users are not quota-limited on their side (multi-carrier reception),
    so every user works through its whole preference list; holding one
    subcarrier does not stop proposals to the next.
    """
    N = cfg.num_subcarriers
    limit = cfg.reuse_limit[:, f].astype(int)
    prefs = {k: build_subcarrier_preferences(channels, W, k, f, mode) for k in users}
    score = {(k, n): _subcarrier_score(channels, W, k, n, f, mode)
             for k in users for n in range(N)}
    held: list[list[int]] = [[] for _ in range(N)]
    for round_no in range(N):
        proposals: list[list[int]] = [[] for _ in range(N)]
        for k in users:
            proposals[prefs[k].ranked[round_no]].append(k)
        for n in range(N):
            if not proposals[n]:
                continue
            pool = held[n] + proposals[n]
            pool.sort(key=lambda k: (-score[(k, n)], k))
            held[n] = pool[:limit[n]]

    assign: dict[int, set] = {k: set() for k in users}
    for n in range(N):
        for k in held[n]:
            assign[k].add(n)

    # swap pass: exchange one subcarrier between two users when both gain
    improved = True
    while improved:
        improved = False
        for k1 in users:
            for k2 in users:
                if k2 <= k1:
                    continue
                for n1 in list(assign[k1]):
                    for n2 in list(assign[k2]):
                        if n1 == n2 or n2 in assign[k1] or n1 in assign[k2]:
                            continue
                        if (score[(k1, n2)] > score[(k1, n1)]
                                and score[(k2, n1)] > score[(k2, n2)]):
                            assign[k1].remove(n1); assign[k1].add(n2)
                            assign[k2].remove(n2); assign[k2].add(n1)
                            improved = True
    return assign


def run_matching(cfg: NetworkConfig, topology: Topology, channels: ChannelSet,
                 W: np.ndarray, mode: RobustMode = RobustMode.SBRS) -> Matching:
    """Produce a binary scheduling rho satisfying the reuse and one-AAU limits."""
    aau_of_user = _stage1_assign(cfg, topology)
    _stage1_swap_pass(aau_of_user, topology)

    K, N, M, F = cfg.shape
    rho = np.zeros((K, N, F))
    subcarriers: dict = {}
    for f in range(F):
        users = [k for k in range(K) if aau_of_user[k] == f]
        if not users:
            continue
        assign = _stage2_assign(cfg, channels, W, users, f, mode)
        for k, ns in assign.items():
            subcarriers[(k, f)] = tuple(sorted(ns))
            for n in ns:
                rho[k, n, f] = 1.0
    return Matching(aau_of_user=aau_of_user, subcarriers=subcarriers, rho=rho)

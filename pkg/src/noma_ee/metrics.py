"""Rates, power, energy efficiency and constraint validation.

The validator re-checks a concrete allocation against every constraint of
the original problem: power budgets, reuse limits, single-AAU scheduling,
SIC gating/mutual exclusion, worst-case SIC decodability, fronthaul caps
and the rank of each lifted beamformer.  It never throws -- violations
come back as (constraint id, magnitude) pairs.

The SIC decodability check follows the paper's expanded bound expressions
verbatim, including their uncertainty-subscript quirks (the decoder-side
denominator carries the decoded user's radii); see the D/E/F/G helper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .network import ChannelSet, NetworkConfig
from .robust import (AauGroup, RobustMode, SinrInstance, exrs_sinr, sbrs_sinr)

LOG2E = 1.0 / np.log(2.0)

BINARY_TOL = 1e-6
LINEAR_RTOL = 1e-6
RATE_ATOL = 1e-6          # bits/s/Hz, SIC/fronthaul checks
RANK_RATIO_TOL = 1e-4
SLEEP_POWER_TOL = 1e-12   # watts of transmit power counted as "off"


class NotBinary(ValueError):
    """Scheduling or SIC variables are fractional beyond tolerance."""


@dataclass
class AllocationSolution:
    """A concrete operating point: lifted beams plus binary decisions.

    xi[i, k, n] = 1 means user k decodes (and cancels) user i's signal on
    subcarrier n.  ``aux`` optionally carries the solver's lifted
    variables and slacks for diagnostics.
    """

    W: np.ndarray                  # (K, N, F, M, M) complex Hermitian PSD
    rho: np.ndarray                # (K, N, F) in {0, 1}
    xi: np.ndarray                 # (K, K, N) in {0, 1}; diagonal unused
    aux: dict = field(default_factory=dict)

    @staticmethod
    def empty(cfg: NetworkConfig) -> "AllocationSolution":
        K, N, M, F = cfg.shape
        return AllocationSolution(W=np.zeros((K, N, F, M, M), dtype=complex),
                                  rho=np.zeros((K, N, F)), xi=np.zeros((K, K, N)))

    def copy(self) -> "AllocationSolution":
        return AllocationSolution(W=self.W.copy(), rho=self.rho.copy(),
                                  xi=self.xi.copy(), aux=dict(self.aux))

    def binary_residual(self) -> float:
        res = 0.0
        for arr in (self.rho, self.xi):
            res += float(np.sum(arr - arr ** 2))
        if "x" in self.aux:
            x = np.asarray(self.aux["x"])
            res += float(np.sum(x - x ** 2))
        return res

    def beams(self) -> np.ndarray:
        """Dominant-eigenpair extraction w with w w^H ~ W, shape (K, N, F, M)."""
        K, N, F, M = self.W.shape[:4]
        w = np.zeros((K, N, F, M), dtype=complex)
        for idx in np.ndindex(K, N, F):
            vals, vecs = np.linalg.eigh(self.W[idx])
            if vals[-1] > 0:
                w[idx] = np.sqrt(vals[-1]) * vecs[:, -1]
        return w

    def to_json(self) -> dict:
        return {
            "rho": self.rho.tolist(),
            "xi": self.xi.tolist(),
            "W_re": np.real(self.W).tolist(),
            "W_im": np.imag(self.W).tolist(),
        }

    @staticmethod
    def from_json(data: dict) -> "AllocationSolution":
        W = np.asarray(data["W_re"], dtype=float) + 1j * np.asarray(data["W_im"], dtype=float)
        return AllocationSolution(W=W, rho=np.asarray(data["rho"], dtype=float),
                                  xi=np.asarray(data["xi"], dtype=float))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @staticmethod
    def load(path) -> "AllocationSolution":
        with open(path) as fh:
            return AllocationSolution.from_json(json.load(fh))


@dataclass
class MetricsReport:
    per_link_rate: np.ndarray      # (K, N, F) bits/s/Hz
    per_user_rate: np.ndarray      # (K,)
    total_rate: float
    total_power: float
    ee: float
    fronthaul_load: np.ndarray     # (F,)
    feasible: bool
    violations: list               # [(constraint id, magnitude), ...]

    def to_json(self) -> dict:
        return {
            "per_link_rate": self.per_link_rate.tolist(),
            "per_user_rate": self.per_user_rate.tolist(),
            "total_rate": self.total_rate,
            "total_power": self.total_power,
            "ee": self.ee,
            "fronthaul_load": self.fronthaul_load.tolist(),
            "feasible": self.feasible,
            "violations": [[cid, float(mag)] for cid, mag in self.violations],
        }


def _require_binary(sol: AllocationSolution) -> None:
    frac = max(float(np.abs(sol.rho - np.round(sol.rho)).max(initial=0.0)),
               float(np.abs(sol.xi - np.round(sol.xi)).max(initial=0.0)))
    if frac > BINARY_TOL:
        raise NotBinary(f"scheduling variables fractional by {frac:.2e}")


def _sinr_instance(sol: AllocationSolution, channels: ChannelSet, cfg: NetworkConfig,
                   k: int, n: int, f: int, mode: RobustMode) -> SinrInstance:
    """Uncertainty bundle for user k's SINR on (n, f): one group per AAU."""
    K, N, M, F = cfg.shape
    rho = np.round(sol.rho)
    xi = np.round(sol.xi)
    groups = []
    for fp in range(F):
        e = 0.0 if mode is RobustMode.NOMINAL else float(channels.e[k, n, fp])
        interferers = tuple(
            sol.W[i, n, fp]
            for i in range(K)
            if i != k and rho[i, n, fp] == 1 and xi[i, k, n] == 0
        )
        groups.append(AauGroup(H=channels.H_lift[k, n, fp], e=e,
                               signal_W=sol.W[k, n, f] if fp == f else None,
                               interferer_Ws=interferers))
    return SinrInstance(groups=tuple(groups), sigma2=float(cfg.noise_power[f, k, n]))


def _sinr_value(inst: SinrInstance, mode: RobustMode) -> float:
    if mode is RobustMode.NOMINAL:
        return max(0.0, inst.nominal())
    if mode is RobustMode.SBRS:
        return sbrs_sinr(inst)
    return max(0.0, exrs_sinr(inst))


def worst_case_rate(sol: AllocationSolution, channels: ChannelSet, cfg: NetworkConfig,
                    mode: RobustMode = RobustMode.SBRS) -> tuple[np.ndarray, np.ndarray]:
    """Per-link and per-user worst-case rates in bits/s/Hz.

    Links with rho = 0 contribute zero; interference excludes users whose
    signals user k decodes (the (1 - xi) masking).
    """
    _require_binary(sol)
    K, N, M, F = cfg.shape
    rho = np.round(sol.rho)
    r = np.zeros((K, N, F))
    for k in range(K):
        for n in range(N):
            for f in range(F):
                if rho[k, n, f] != 1:
                    continue
                inst = _sinr_instance(sol, channels, cfg, k, n, f, mode)
                r[k, n, f] = np.log2(1.0 + _sinr_value(inst, mode))
    return r, r.sum(axis=(1, 2))


def total_power(sol: AllocationSolution, cfg: NetworkConfig) -> float:
    """Amplifier power over drain efficiency plus per-AAU static power.

    An AAU that transmits nothing is billed at its sleep power; otherwise
    at circuit_power per antenna chain.
    """
    K, N, M, F = cfg.shape
    total = 0.0
    for f in range(F):
        tx = float(np.real(np.trace(sol.W[:, :, f], axis1=-2, axis2=-1)).sum())
        total += tx / cfg.drain_efficiency
        if tx > SLEEP_POWER_TOL:
            total += cfg.circuit_power * M
        else:
            total += cfg.sleep_power[f]
    return total


def _log_ratio(num: float, den: float) -> float:
    """log2(num/den) with the conventions used by the SIC bound check."""
    if den <= 0.0:
        return np.inf
    if num <= 0.0:
        return -np.inf
    return float(np.log2(num / den))


def sic_bound_terms(sol: AllocationSolution, channels: ChannelSet, cfg: NetworkConfig,
                    i: int, k: int, n: int, fp: int, mode: RobustMode):
    """The (D, E, F, G) bound quantities of the closed-form SIC check.

    E is the decoded user's own interference floor (error margins
    subtracted), G the decoder-side floor; both carry the decoded user's
    uncertainty radii e_i as printed in the source expressions, and G's
    cancelled block flows through user i's channel.  Returns the tuple
    (D, E, Fq, G).
    """
    K, N, M, F = cfg.shape
    rho = np.round(sol.rho)
    xi = np.round(sol.xi)
    use_e = mode is not RobustMode.NOMINAL

    E = float(cfg.noise_power[fp, i, n])
    G = float(cfg.noise_power[fp, k, n])
    for f in range(F):
        e_i = float(channels.e[i, n, f]) if use_e else 0.0
        H_i = channels.H_lift[i, n, f]
        H_k = channels.H_lift[k, n, f]
        for kp in range(K):
            if kp == i:
                continue
            sched = rho[kp, n, f]
            if sched == 0:
                continue
            cancel = xi[kp, i, n]          # user i decodes kp
            Wt = sched * sol.W[kp, n, f]   # lifted rho * W
            Wp = cancel * Wt               # lifted x * W
            nt = float(np.linalg.norm(Wt, "fro"))
            np_ = float(np.linalg.norm(Wp, "fro"))
            E += float(np.real(np.trace(H_i @ Wt))) - e_i * nt
            E -= float(np.real(np.trace(H_i @ Wp))) - e_i * np_
            G += float(np.real(np.trace(H_k @ Wt))) + e_i * nt
            G -= float(np.real(np.trace(H_i @ Wp))) + e_i * np_

    Wp_ik = float(xi[i, k, n] * rho[i, n, fp]) * sol.W[i, n, fp]
    npik = float(np.linalg.norm(Wp_ik, "fro"))
    e_i_fp = float(channels.e[i, n, fp]) if use_e else 0.0
    e_k_fp = float(channels.e[k, n, fp]) if use_e else 0.0
    D = float(np.real(np.trace(channels.H_lift[i, n, fp] @ Wp_ik))) + e_i_fp * npik + E
    Fq = G + float(np.real(np.trace(channels.H_lift[k, n, fp] @ Wp_ik))) - e_k_fp * npik
    return D, E, Fq, G


def _sic_decode_gap(sol: AllocationSolution, channels: ChannelSet, cfg: NetworkConfig,
                    i: int, k: int, n: int, fp: int, mode: RobustMode) -> float:
    """Bits/s/Hz by which the decode condition fails (<= 0 means satisfied)."""
    K, N, M, F = cfg.shape
    if mode is RobustMode.EXRS:
        rho = np.round(sol.rho)
        xi = np.round(sol.xi)

        def bundle(observer: int) -> SinrInstance:
            groups = []
            for f in range(F):
                interferers = tuple(
                    sol.W[kp, n, f]
                    for kp in range(K)
                    if kp != i and rho[kp, n, f] == 1 and xi[kp, i, n] == 0
                )
                groups.append(AauGroup(H=channels.H_lift[observer, n, f],
                                       e=float(channels.e[observer, n, f]),
                                       signal_W=sol.W[i, n, fp] if f == fp else None,
                                       interferer_Ws=interferers))
            return SinrInstance(groups=tuple(groups),
                                sigma2=float(cfg.noise_power[fp, observer, n]))

        best_i = exrs_sinr(bundle(i), best_case=True)
        worst_k = exrs_sinr(bundle(k))
        lhs = np.log2(1.0 + max(0.0, best_i)) if np.isfinite(best_i) else np.inf
        rhs = np.log2(1.0 + max(0.0, worst_k))
        return float(lhs - rhs)

    D, E, Fq, G = sic_bound_terms(sol, channels, cfg, i, k, n, fp, mode)
    return _log_ratio(D, E) - _log_ratio(Fq, G)


def validate(sol: AllocationSolution, channels: ChannelSet, cfg: NetworkConfig,
             mode: RobustMode = RobustMode.SBRS) -> MetricsReport:
    """Check every constraint of the scheduling problem; report, never raise."""
    K, N, M, F = cfg.shape
    violations: list[tuple[str, float]] = []

    frac = max(float(np.abs(sol.rho - np.round(sol.rho)).max(initial=0.0)),
               float(np.abs(sol.xi - np.round(sol.xi)).max(initial=0.0)))
    if frac > BINARY_TOL:
        violations.append(("binary", frac))
    rho = np.round(sol.rho)
    xi = np.round(sol.xi)
    rounded = AllocationSolution(W=sol.W, rho=rho, xi=xi)

    # PSD and rank of every lifted beam
    for k, n, f in np.ndindex(K, N, F):
        Wm = sol.W[k, n, f]
        herm_gap = float(np.abs(Wm - Wm.conj().T).max(initial=0.0))
        if herm_gap > 1e-8:
            violations.append((f"psd[{k},{n},{f}]", herm_gap))
            continue
        vals = np.linalg.eigvalsh(Wm)
        scale = max(1.0, float(vals[-1]))
        if vals[0] < -1e-7 * scale:
            violations.append((f"psd[{k},{n},{f}]", float(-vals[0])))
        if vals[-1] > SLEEP_POWER_TOL and M > 1:
            ratio = float(max(vals[-2], 0.0) / vals[-1])
            if ratio > RANK_RATIO_TOL:
                violations.append((f"rank[{k},{n},{f}]", ratio))

    # power budgets (C1): sum_k sum_n rho * Tr[W] <= P_max^f
    for f in range(F):
        used = float(sum(rho[k, n, f] * np.real(np.trace(sol.W[k, n, f]))
                         for k, n in np.ndindex(K, N)))
        if used > cfg.power_budget[f] * (1.0 + LINEAR_RTOL) + 1e-15:
            violations.append((f"power[{f}]", used - cfg.power_budget[f]))

    # reuse limit per (n, f) and one AAU per (k, n)
    for n, f in np.ndindex(N, F):
        used = float(rho[:, n, f].sum())
        if used > cfg.reuse_limit[n, f] + LINEAR_RTOL:
            violations.append((f"reuse[{n},{f}]", used - cfg.reuse_limit[n, f]))
    for k, n in np.ndindex(K, N):
        used = float(rho[k, n, :].sum())
        if used > 1.0 + LINEAR_RTOL:
            violations.append((f"one_aau[{k},{n}]", used - 1.0))

    # SIC gate (multiplexing) and mutual exclusion
    for n in range(N):
        z = rho[:, n, :].sum(axis=1)   # (K,)
        for i in range(K):
            for k in range(K):
                if i == k:
                    continue
                if xi[i, k, n] > z[k] * z[i] + LINEAR_RTOL:
                    violations.append((f"sic_gate[{i},{k},{n}]",
                                       float(xi[i, k, n] - z[k] * z[i])))
        for i in range(K):
            for k in range(i + 1, K):
                if xi[i, k, n] + xi[k, i, n] > 1.0 + LINEAR_RTOL:
                    violations.append((f"sic_mutex[{i},{k},{n}]",
                                       float(xi[i, k, n] + xi[k, i, n] - 1.0)))

    # worst-case SIC decodability for every active (i, k, n, f') tuple
    for n in range(N):
        for i in range(K):
            for k in range(K):
                if i == k or xi[i, k, n] != 1:
                    continue
                for fp in range(F):
                    if rho[i, n, fp] != 1:
                        continue
                    gap = _sic_decode_gap(rounded, channels, cfg, i, k, n, fp, mode)
                    if gap > RATE_ATOL:
                        violations.append((f"sic_decode[{i},{k},{n},{fp}]", float(gap)))

    # rates, fronthaul, power, EE
    try:
        r_links, r_user = worst_case_rate(rounded, channels, cfg, mode)
    except NotBinary:  # pragma: no cover - rounded copy is binary by construction
        r_links = np.zeros((K, N, F))
        r_user = np.zeros(K)
    load = np.array([float(cfg.fronthaul_weight[f] * r_links[:, :, f].sum())
                     for f in range(F)])
    for f in range(F):
        if load[f] > cfg.fronthaul_capacity[f] + RATE_ATOL:
            violations.append((f"fronthaul[{f}]", float(load[f] - cfg.fronthaul_capacity[f])))

    power = total_power(sol, cfg)
    total = float(r_user.sum())
    ee = total / power if power > 0 else 0.0
    return MetricsReport(per_link_rate=r_links, per_user_rate=r_user, total_rate=total,
                         total_power=power, ee=ee, fronthaul_load=load,
                         feasible=not violations, violations=violations)

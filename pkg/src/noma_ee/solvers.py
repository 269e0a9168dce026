"""Algorithm drivers: Dinkelbach outer loop with SCA inner loop, rounding
with feasibility repair, Gaussian randomization, the two-step matching
alternation and the channel-gain-SIC / OMA baselines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conic_bridge
from .convexify import (ExpansionPoint, InfeasiblePoint, SubproblemBuilder,
                        rank_residual)
from .matching import run_matching
from .metrics import AllocationSolution, MetricsReport, total_power, validate
from .network import ChannelSet, NetworkConfig, Topology
from .robust import AauGroup, RobustMode, SinrInstance, exrs_sinr

LOG2E = 1.0 / np.log(2.0)
BINARY_SNAP = 1e-7


class InitializationFailed(RuntimeError):
    """No feasible expansion point found within the attempt cap."""


class SubproblemInfeasible(RuntimeError):
    """A conic subproblem came back infeasible mid-run."""


class NoFeasibleRounding(RuntimeError):
    """Rounding plus randomization produced no feasible operating point."""


@dataclass
class SolverOptions:
    epsilon: float = 1e-3              # Dinkelbach stop on q_t - q_{t-1}
    max_outer: int = 20
    max_inner: int = 30
    inner_tol: float = 1e-5            # relative objective change
    lam: float | None = None           # binary penalty factor; None = Table II 1e5
    mu0: float = 1.0                   # rank penalty start
    alpha_pen: float = 1.5             # rank penalty growth (> 1)
    mu_cap: float = 1e6
    mode: RobustMode = RobustMode.SBRS
    binary_round_threshold: float = 0.5
    rng_seed: int = 0
    init_attempts: int = 50
    randomization_draws: int = 50
    solver_tol: float = 1e-6
    warm_start: ExpansionPoint | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.alpha_pen <= 1:
            raise ValueError("alpha_pen must exceed 1")


def effective_lambda(channels: ChannelSet, cfg: NetworkConfig,
                     lam: float | None) -> float:
    """Binary penalty factor (Table II default)."""
    if lam is not None:
        return float(lam)
    return 1e5


@dataclass
class SolveTrace:
    """Per-run diagnostics.

    q_history is the canonical Dinkelbach trace of the final
    fixed-structure ratio iteration (rate/power after the binaries are
    settled); q_history_relaxed records the exploratory joint phase whose
    surrogate ratios steer the scheduling/ordering choice.
    """

    algorithm: str
    mode: str
    q_history: list = field(default_factory=list)
    q_history_relaxed: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)
    binary_residuals: list = field(default_factory=list)
    rank_residuals: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    alternations: int = 0
    randomization_draws_used: int = 0
    wall_time: float = 0.0
    status: str = "ok"
    notes: list = field(default_factory=list)
    final_binary_residual: float = 0.0
    final_rank_ratio: float = 0.0

    def to_json(self) -> dict:
        return {k: (v if not isinstance(v, np.ndarray) else v.tolist())
                for k, v in self.__dict__.items()}


# --------------------------------------------------------------------------
# initialization

def _draw_point(channels: ChannelSet, cfg: NetworkConfig, rng: np.random.Generator,
                builder: SubproblemBuilder) -> ExpansionPoint:
    K, N, M, F = cfg.shape
    rho = rng.uniform(size=(K, N, F))
    over = rho.sum(axis=2)
    rho /= np.maximum(over, 1.0)[:, :, None]                  # one AAU per (k, n)
    for n, f in np.ndindex(N, F):
        used = rho[:, n, f].sum()
        if used > cfg.reuse_limit[n, f]:
            rho[:, n, f] *= cfg.reuse_limit[n, f] / used      # reuse limit

    # random nonnegative beams scaled to each AAU's own budget so the
    # big-M envelopes hold at the anchor
    w0 = rng.uniform(size=(K, N, F, M))
    w0 *= np.sqrt(cfg.power_budget / M)[None, None, :, None]
    W = np.einsum("knfa,knfb->knfab", w0, w0).astype(complex)

    # links whose worst-case signal margin is negative cannot complete the
    # anchored rate rows; anchor them unscheduled (the solver may revive them)
    for k, n, f in np.ndindex(K, N, F):
        if _signal_margin(builder, channels, k, n, f, W[k, n, f]) <= 0.0:
            rho[k, n, f] = 0.0

    # per-AAU power scaling for C1 at the anchor
    for f in range(F):
        used = sum(rho[k, n, f] * np.real(np.trace(W[k, n, f])) for k, n in np.ndindex(K, N))
        if used > cfg.power_budget[f]:
            W[:, :, f] *= cfg.power_budget[f] / used

    xi = np.zeros((K, K, N))
    if not builder.forbid_sic:
        z = rho.sum(axis=2)
        for n in range(N):
            for i in range(K):
                for k in range(i + 1, K):
                    u, v = rng.uniform(size=2)
                    total = u + v
                    if total > 1.0:
                        u, v = u / (total + 1e-9), v / (total + 1e-9)
                    xi[i, k, n] = min(u, z[k, n] * z[i, n])
                    xi[k, i, n] = min(v, z[i, n] * z[k, n])

    x = xi[:, :, :, None] * rho[:, None, :, :]
    Wt = rho[..., None, None] * W
    Wp = x[..., None, None] * W[:, None, ...]
    point = ExpansionPoint(rho=rho, xi=xi, x=x, W=W, Wt=Wt, Wp=Wp,
                           b_anchor=np.zeros((K, N, F)), e_anchor=np.zeros((K, N, F)),
                           g_anchor=np.zeros((K, K, N, F)))
    point.b_anchor, point.e_anchor, point.g_anchor = builder.compute_anchors(point)
    return point


def initialize(channels: ChannelSet, cfg: NetworkConfig, rng: np.random.Generator,
               builder: SubproblemBuilder | None = None, attempts: int = 50) -> ExpansionPoint:
    """Rejection-resample random anchors until one satisfies its own
    linearized constraint set."""
    builder = builder or SubproblemBuilder(channels, cfg)
    last_err = None
    for _ in range(attempts):
        point = _draw_point(channels, cfg, rng, builder)
        try:
            builder._check_point(point)
            return point
        except InfeasiblePoint as err:
            last_err = err
    raise InitializationFailed(f"no feasible anchor in {attempts} attempts: {last_err}")


# --------------------------------------------------------------------------
# point refresh from a subproblem solution

def _refresh_point(builder: SubproblemBuilder, st, x: np.ndarray,
                   H_rate_override=None) -> ExpansionPoint:
    cfg = builder.cfg
    K, N, M, F = cfg.shape

    def snap(arr):
        arr = np.asarray(arr, dtype=float)
        arr[np.abs(arr) < BINARY_SNAP] = 0.0
        arr[np.abs(arr - 1.0) < BINARY_SNAP] = 1.0
        return np.clip(arr, 0.0, 1.0)

    if st.rho_v is not None:
        rho = snap(np.array([[[x[st.rho_v[k, n, f]] for f in range(F)]
                              for n in range(N)] for k in range(K)]))
    else:
        rho = builder.fixed_rho.copy()
    xi = np.zeros((K, K, N))
    if st.xi_v:
        for (i, k, n), var in st.xi_v.items():
            xi[i, k, n] = x[var]
        xi = snap(xi)
    elif builder.fixed_xi is not None:
        xi = builder.fixed_xi.copy()

    W = np.zeros((K, N, F, M, M), dtype=complex)
    for key, Wv in st.W_h.items():
        W[key] = Wv.value(x)
    if st.Wt_h:
        Wt = np.zeros_like(W)
        for key, Wv in st.Wt_h.items():
            Wt[key] = Wv.value(x)
    else:
        Wt = rho[..., None, None] * W

    xarr = np.zeros((K, K, N, F))
    if st.x_v:
        for (i, k, n, f), var in st.x_v.items():
            xarr[i, k, n, f] = x[var]
        xarr = snap(xarr)
    else:
        xarr = xi[:, :, :, None] * rho[:, None, :, :]
    if st.Wp_h:
        Wp = np.zeros((K, K, N, F, M, M), dtype=complex)
        for key, Wv in st.Wp_h.items():
            Wp[key] = Wv.value(x)
    elif st.V_h:
        Wp = np.zeros((K, K, N, F, M, M), dtype=complex)
        for (i, k, n, f), Vv in st.V_h.items():
            Wp[i, k, n, f] = builder.fixed_rho[i, n, f] * Vv.value(x)
    else:
        Wp = xarr[..., None, None] * W[:, None, ...]

    point = ExpansionPoint(rho=rho, xi=xi, x=xarr, W=W, Wt=Wt, Wp=Wp,
                           b_anchor=np.zeros((K, N, F)), e_anchor=np.zeros((K, N, F)),
                           g_anchor=np.zeros((K, K, N, F)))
    point.b_anchor, point.e_anchor, point.g_anchor = \
        builder.compute_anchors(point, H_rate_override)
    return point


def _exrs_rate_channels(channels: ChannelSet, cfg: NetworkConfig,
                        point: ExpansionPoint) -> np.ndarray:
    """Worst-case effective lifted channels for the rate terms (ExRS mode).

    For each (k, n) the inner fractional program runs at the anchor beams;
    the minimizing error matrices are folded into the channel estimates.
    """
    K, N, M, F = cfg.shape
    H_eff = channels.H_lift.copy()
    for k, n in np.ndindex(K, N):
        f_sig = int(np.argmax(point.rho[k, n]))
        groups = []
        for fp in range(F):
            interferers = tuple(
                point.rho[i, n, fp] * (1.0 - point.xi[i, k, n]) * point.W[i, n, fp]
                for i in range(K) if i != k
            )
            groups.append(AauGroup(H=channels.H_lift[k, n, fp],
                                   e=float(channels.e[k, n, fp]),
                                   signal_W=point.W[k, n, f_sig] if fp == f_sig else None,
                                   interferer_Ws=interferers))
        inst = SinrInstance(groups=tuple(groups), sigma2=float(cfg.noise_power[f_sig, k, n]))
        try:
            _, deltas = exrs_sinr(inst, return_errors=True)
        except Exception:
            continue
        for fp in range(F):
            H_eff[k, n, fp] = channels.H_lift[k, n, fp] + deltas[fp]
    return H_eff


# --------------------------------------------------------------------------
# Dinkelbach outer loop with SCA inner loop

def _anchor_ratio(builder: SubproblemBuilder, point: ExpansionPoint, H_rate) -> float:
    rate, power = builder.true_rate_and_power(point, H_rate)
    return rate / power


def _dinkelbach_sca(builder: SubproblemBuilder, point: ExpansionPoint,
                    opts: SolverOptions, trace: SolveTrace,
                    channels: ChannelSet) -> ExpansionPoint:
    """Outer Dinkelbach loop with an SCA inner loop.

    The q trace follows the algorithm's own surrogate accounting
    (sum(a - b) / P_total at each outer's final subproblem solution); the
    point handed on to rounding is the anchor with the best exact
    worst-case rate/power ratio seen, since the interference tangents can
    credit iterates whose true rates are not realizable.  Both penalties
    ramp to their configured values over the first few solves so that
    fractional anchors are not slammed to the nearest integer before the
    interference geometry has settled.
    """
    cfg = builder.cfg
    lam_target = effective_lambda(channels, cfg, opts.lam)
    q = 0.0
    solves = 0
    ramp_solves = 8
    best_point = point
    best_ratio = _anchor_ratio(builder, point,
                               _exrs_rate_channels(channels, cfg, point)
                               if opts.mode is RobustMode.EXRS else None)
    surrogate_q = 0.0
    explore_outers = min(opts.max_outer, 8)
    explore_inners = min(opts.max_inner, 10)
    for outer in range(explore_outers):
        H_rate = None
        if opts.mode is RobustMode.EXRS:
            H_rate = _exrs_rate_channels(channels, cfg, point)
        inner_used = 0
        prev_obj = None
        last_st = None
        last_x = None
        for inner in range(explore_inners):
            lam = lam_target / (2.0 ** max(0, ramp_solves - solves))
            mu = min(opts.mu0 * opts.alpha_pen ** solves, opts.mu_cap)
            problem, st = builder.build(point, q, lam, mu, H_rate_override=H_rate,
                                        check_point=(solves == 0))
            res = conic_bridge.solve(problem, tol=opts.solver_tol)
            if res.status == conic_bridge.INFEASIBLE:
                raise SubproblemInfeasible(f"outer {outer} inner {inner}: infeasible")
            if res.x is None:
                raise SubproblemInfeasible(f"outer {outer} inner {inner}: {res.status}")
            if res.status != conic_bridge.OPTIMAL:
                trace.notes.append(f"outer {outer} inner {inner}: {res.status}")
            point = _refresh_point(builder, st, res.x, H_rate)
            last_st, last_x = st, res.x
            solves += 1
            inner_used += 1
            ratio = _anchor_ratio(builder, point, H_rate)
            if ratio > best_ratio:
                best_ratio = ratio
                best_point = point
            obj = res.objective
            trace.objective_history.append(float(obj))
            if prev_obj is not None and abs(obj - prev_obj) <= opts.inner_tol * max(1.0, abs(prev_obj)):
                break
            prev_obj = obj
        trace.inner_iterations.append(inner_used)
        surrogate_q = _surrogate_ratio(builder, last_st, last_x)
        trace.q_history_relaxed.append(surrogate_q)
        bin_res = float(np.sum(point.rho - point.rho ** 2)
                        + np.sum(point.xi - point.xi ** 2)
                        + np.sum(point.x - point.x ** 2))
        trace.binary_residuals.append(bin_res)
        trace.rank_residuals.append(_max_rank_ratio(point.W))
        if abs(surrogate_q - q) <= opts.epsilon and solves > ramp_solves:
            q = surrogate_q
            break
        q = surrogate_q
    point = best_point
    trace.final_binary_residual = trace.binary_residuals[-1] if trace.binary_residuals else 0.0
    trace.final_rank_ratio = _max_rank_ratio(point.W)
    return point


def polish_beams(channels: ChannelSet, cfg: NetworkConfig, sol: AllocationSolution,
                 opts: SolverOptions, trace: SolveTrace) -> AllocationSolution:
    """Fixed-binary beam re-optimization: the canonical Dinkelbach loop.

    With rho and xi frozen the subproblem has no binary penalties, no
    lifted products and no dead-link rows, so the ratio iteration is the
    textbook one; its q trace is the one reported in q_history.
    """
    rho = np.round(sol.rho)
    xi = np.round(sol.xi)
    if rho.sum() == 0:
        return sol
    builder = SubproblemBuilder(channels, cfg, mode=opts.mode,
                                fixed_rho=rho, fixed_xi=xi)
    K, N, M, F = cfg.shape
    point = ExpansionPoint(rho=rho, xi=xi, x=xi[:, :, :, None] * rho[:, None, :, :],
                           W=sol.W.copy(), Wt=rho[..., None, None] * sol.W,
                           Wp=np.zeros((K, K, N, F, M, M), dtype=complex),
                           b_anchor=np.zeros((K, N, F)), e_anchor=np.zeros((K, N, F)),
                           g_anchor=np.zeros((K, K, N, F)))
    point.Wp = point.x[..., None, None] * point.W[:, None, ...]
    _sanitize_margins(builder, point)
    # scheduled links whose anchor beams were zeroed get a small matched
    # beam so their rate rows exist and the polish can grow them
    for k, n, f in np.ndindex(K, N, F):
        if rho[k, n, f] == 1 and np.real(np.trace(point.W[k, n, f])) < 1e-12:
            h = channels.h_est[k, n, f]
            scale = 1e-2 * cfg.power_budget[f] / (K * N) / max(np.linalg.norm(h) ** 2, 1e-300)
            point.W[k, n, f] = scale * np.outer(h, h.conj())
            point.Wt[k, n, f] = point.W[k, n, f]
            point.Wp[k, :, n, f] = point.x[k, :, n, f, None, None] * point.W[k, n, f]
    point.b_anchor, point.e_anchor, point.g_anchor = builder.compute_anchors(point)
    try:
        builder._check_point(point)
    except InfeasiblePoint as err:
        trace.notes.append(f"polish skipped: {err}")
        return sol
    q = 0.0
    H_rate = None
    if opts.mode is RobustMode.EXRS:
        H_rate = _exrs_rate_channels(channels, cfg, point)
    best = sol
    best_ratio = -np.inf
    for outer in range(opts.max_outer):
        prev_obj = None
        last_st = last_x = None
        mu = min(opts.mu0 * opts.alpha_pen ** outer, opts.mu_cap)
        for inner in range(opts.max_inner):
            problem, st = builder.build(point, q, 0.0, mu,
                                        H_rate_override=H_rate, check_point=False)
            res = conic_bridge.solve(problem, tol=opts.solver_tol)
            if res.status == conic_bridge.INFEASIBLE or res.x is None:
                trace.notes.append(f"polish stopped: {res.status}")
                return best
            point = _refresh_point(builder, st, res.x, H_rate)
            last_st, last_x = st, res.x
            obj = res.objective
            if prev_obj is not None and abs(obj - prev_obj) <= opts.inner_tol * max(1.0, abs(prev_obj)):
                break
            prev_obj = obj
        q_new = _surrogate_ratio(builder, last_st, last_x)
        trace.q_history.append(q_new)
        ratio = _anchor_ratio(builder, point, H_rate)
        if ratio > best_ratio:
            best_ratio = ratio
            best = AllocationSolution(W=point.W.copy(), rho=rho.copy(), xi=xi.copy(),
                                      aux={"x": point.x.copy()})
        if abs(q_new - q) <= opts.epsilon:
            break
        q = q_new
    return best


def _surrogate_ratio(builder: SubproblemBuilder, st, x: np.ndarray) -> float:
    """Algorithm-1 q update: sum(a - b) over total power at the solution."""
    cfg = builder.cfg
    K, N, M, F = cfg.shape
    num = sum(x[var] - x[st.b_v[key]] for key, var in st.a_v.items())
    power = F * M * cfg.circuit_power
    for Wv in st.W_h.values():
        power += np.real(np.trace(Wv.value(x))) / cfg.drain_efficiency
    return float(num / power)


def _max_rank_ratio(W: np.ndarray) -> float:
    worst = 0.0
    for key in np.ndindex(*W.shape[:3]):
        vals = np.clip(np.linalg.eigvalsh(W[key]), 0.0, None)
        if vals[-1] > 1e-12 and len(vals) > 1:
            worst = max(worst, float(vals[-2] / vals[-1]))
    return worst


# --------------------------------------------------------------------------
# rounding, randomization and repair

def _round_binaries(cfg: NetworkConfig, point: ExpansionPoint,
                    threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy threshold rounding ordered by distance to integer, honoring
    the one-AAU, reuse, gate and mutual-exclusion constraints."""
    K, N, M, F = cfg.shape
    rho = np.zeros((K, N, F))
    cands = sorted(((point.rho[k, n, f], k, n, f) for k, n, f in np.ndindex(K, N, F)),
                   reverse=True)
    reuse_used = np.zeros((N, F))
    for val, k, n, f in cands:
        if val < threshold:
            break
        if rho[k, n].sum() >= 1 or reuse_used[n, f] >= cfg.reuse_limit[n, f]:
            continue
        rho[k, n, f] = 1.0
        reuse_used[n, f] += 1

    xi = np.zeros((K, K, N))
    z = rho.sum(axis=2)
    cands = sorted(((point.xi[i, k, n], i, k, n)
                    for i, k, n in np.ndindex(K, K, N) if i != k), reverse=True)
    for val, i, k, n in cands:
        if val < threshold:
            break
        if z[k, n] < 1 or z[i, n] < 1:
            continue
        if xi[k, i, n] == 1:
            continue
        xi[i, k, n] = 1.0
    return rho, xi


def _scale_to_budget(cfg: NetworkConfig, sol: AllocationSolution) -> None:
    K, N, M, F = cfg.shape
    for f in range(F):
        used = sum(sol.rho[k, n, f] * np.real(np.trace(sol.W[k, n, f]))
                   for k, n in np.ndindex(K, N))
        if used > cfg.power_budget[f]:
            sol.W[:, :, f] *= cfg.power_budget[f] / used * (1.0 - 1e-9)


def _randomize_rank_one(channels: ChannelSet, cfg: NetworkConfig, sol: AllocationSolution,
                        opts: SolverOptions, rng: np.random.Generator,
                        trace: SolveTrace) -> AllocationSolution:
    """Gaussian randomization on links whose lifted beams are not rank one."""
    K, N, M, F = cfg.shape
    bad = [key for key in np.ndindex(K, N, F)
           if sol.rho[key] == 1 and _rank_ratio_one(sol.W[key]) > 1e-4]
    if not bad:
        return sol
    best = None
    best_ee = -np.inf
    roots = {key: _psd_sqrt(sol.W[key]) for key in bad}
    draws = 0
    for _ in range(opts.randomization_draws):
        draws += 1
        cand = sol.copy()
        for key in bad:
            g = (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / np.sqrt(2.0)
            w = roots[key] @ g
            target = np.real(np.trace(sol.W[key]))
            nrm = np.linalg.norm(w)
            if nrm < 1e-300:
                continue
            w *= np.sqrt(target) / nrm
            cand.W[key] = np.outer(w, w.conj())
        _scale_to_budget(cfg, cand)
        report = validate(cand, channels, cfg, opts.mode)
        if report.feasible and report.ee > best_ee:
            best, best_ee = cand, report.ee
    trace.randomization_draws_used += draws
    if best is None:
        # dominant eigenpair fallback; repair may still clear violations
        for key in bad:
            vals, vecs = np.linalg.eigh(sol.W[key])
            w = np.sqrt(max(vals[-1], 0.0)) * vecs[:, -1]
            sol.W[key] = np.outer(w, w.conj())
        return sol
    return best


def _rank_ratio_one(W: np.ndarray) -> float:
    vals = np.clip(np.linalg.eigvalsh(W), 0.0, None)
    if vals[-1] <= 1e-12 or len(vals) == 1:
        return 0.0
    return float(vals[-2] / vals[-1])


def _psd_sqrt(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def _repair(channels: ChannelSet, cfg: NetworkConfig, sol: AllocationSolution,
            mode: RobustMode, trace: SolveTrace, max_rounds: int = 40) -> MetricsReport:
    """Clear violated SIC claims (ordered by violation size), rescale power,
    and shrink beams under fronthaul pressure until the validator is clean."""
    for _ in range(max_rounds):
        report = validate(sol, channels, cfg, mode)
        if report.feasible:
            return report
        progressed = False
        sic = [(mag, vid) for vid, mag in report.violations if vid.startswith("sic_decode")]
        if sic:
            _, vid = max(sic)
            idx = tuple(int(t) for t in vid[vid.index("[") + 1:-1].split(","))
            i, k, n, _ = idx
            sol.xi[i, k, n] = 0.0
            trace.notes.append(f"repair: cleared xi[{i},{k},{n}]")
            progressed = True
        if any(vid.startswith("power") for vid, _ in report.violations):
            _scale_to_budget(cfg, sol)
            progressed = True
        if any(vid.startswith("fronthaul") for vid, _ in report.violations):
            fs = [int(vid[vid.index("[") + 1:-1]) for vid, _ in report.violations
                  if vid.startswith("fronthaul")]
            for f in fs:
                sol.W[:, :, f] *= 0.8
            trace.notes.append(f"repair: shrank beams on AAUs {fs}")
            progressed = True
        if any(vid.startswith("sic_gate") or vid.startswith("sic_mutex")
               for vid, _ in report.violations):
            for vid, _ in report.violations:
                if vid.startswith("sic_gate") or vid.startswith("sic_mutex"):
                    i, k, n = (int(t) for t in vid[vid.index("[") + 1:-1].split(","))
                    sol.xi[i, k, n] = 0.0
            progressed = True
        if not progressed:
            break
    report = validate(sol, channels, cfg, mode)
    if not report.feasible:
        raise NoFeasibleRounding(f"unresolved violations: {report.violations[:4]}")
    return report


def _finalize(channels: ChannelSet, cfg: NetworkConfig, point: ExpansionPoint,
              opts: SolverOptions, rng: np.random.Generator,
              trace: SolveTrace) -> tuple[AllocationSolution, MetricsReport]:
    rho, xi = _round_binaries(cfg, point, opts.binary_round_threshold)
    K, N, M, F = cfg.shape
    W = point.W.copy()
    for k, n, f in np.ndindex(K, N, F):
        if rho[k, n, f] == 0:
            W[k, n, f] = 0.0
        else:
            Wm = 0.5 * (W[k, n, f] + W[k, n, f].conj().T)
            vals, vecs = np.linalg.eigh(Wm)       # clip solver noise off the cone
            W[k, n, f] = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    sol = AllocationSolution(W=W, rho=rho, xi=xi,
                             aux={"x": xi[:, :, :, None] * rho[:, None, :, :]})
    _scale_to_budget(cfg, sol)
    sol = polish_beams(channels, cfg, sol, opts, trace)
    for k, n, f in np.ndindex(K, N, F):
        if sol.rho[k, n, f] == 0:
            sol.W[k, n, f] = 0.0
    _scale_to_budget(cfg, sol)
    sol = _randomize_rank_one(channels, cfg, sol, opts, rng, trace)
    report = _repair(channels, cfg, sol, opts.mode, trace)
    return sol, report


# --------------------------------------------------------------------------
# public solvers

def _prepare_warm(builder: SubproblemBuilder, warm: ExpansionPoint,
                  rng: np.random.Generator, opts: SolverOptions) -> ExpansionPoint:
    """Reuse a previous solution as the expansion point, re-sanitized for the
    (possibly different) scenario parameters."""
    cfg = builder.cfg
    K, N, M, F = cfg.shape
    point = warm.copy()
    _sanitize_margins(builder, point)
    for f in range(F):
        used = sum(point.rho[k, n, f] * np.real(np.trace(point.W[k, n, f]))
                   for k, n in np.ndindex(K, N))
        if used > cfg.power_budget[f]:
            scale = cfg.power_budget[f] / used * (1.0 - 1e-9)
            point.W[:, :, f] *= scale
            point.Wt[:, :, f] *= scale
            point.Wp[:, :, :, f] *= scale
    point.b_anchor, point.e_anchor, point.g_anchor = builder.compute_anchors(point)
    try:
        builder._check_point(point)
        return point
    except InfeasiblePoint:
        return initialize(builder.channels, cfg, rng, builder, opts.init_attempts)


def solve_algorithm1(channels: ChannelSet, cfg: NetworkConfig,
                     opts: SolverOptions | None = None,
                     forbid_sic: bool = False,
                     algorithm_name: str = "ALG1"):
    """One-step solution: joint scheduling, SIC ordering and beamforming."""
    opts = opts or SolverOptions()
    started = time.perf_counter()
    trace = SolveTrace(algorithm=algorithm_name, mode=opts.mode.value)
    rng = np.random.default_rng(np.random.SeedSequence([opts.rng_seed, 0xA161]))
    builder = SubproblemBuilder(channels, cfg, mode=opts.mode, forbid_sic=forbid_sic)
    point = _prepare_warm(builder, opts.warm_start, rng, opts) \
        if opts.warm_start is not None \
        else initialize(channels, cfg, rng, builder, opts.init_attempts)
    point = _dinkelbach_sca(builder, point, opts, trace, channels)
    sol, report = _finalize(channels, cfg, point, opts, rng, trace)
    trace.wall_time = time.perf_counter() - started
    sol.aux["report"] = report.to_json()
    sol.aux["point"] = point
    return sol, trace


def solve_oma(channels: ChannelSet, cfg: NetworkConfig,
              opts: SolverOptions | None = None):
    """Orthogonal baseline: reuse limit 1 everywhere and no SIC ordering."""
    cfg_oma = cfg.with_reuse_limit(1)
    return solve_algorithm1(channels, cfg_oma, opts, forbid_sic=True,
                            algorithm_name="OMA")


def solve_two_step(channels: ChannelSet, cfg: NetworkConfig, topology: Topology,
                   opts: SolverOptions | None = None,
                   fixed_xi: np.ndarray | None = None,
                   algorithm_name: str = "TWO_STEP"):
    """Low-complexity alternation: matching for rho, conic solve for (W, xi)."""
    opts = opts or SolverOptions()
    started = time.perf_counter()
    trace = SolveTrace(algorithm=algorithm_name, mode=opts.mode.value)
    rng = np.random.default_rng(np.random.SeedSequence([opts.rng_seed, 0xA162]))
    seed_builder = SubproblemBuilder(channels, cfg, mode=opts.mode)
    point = opts.warm_start if opts.warm_start is not None \
        else initialize(channels, cfg, rng, seed_builder, opts.init_attempts)

    prev_ee = -np.inf
    best: tuple[AllocationSolution, MetricsReport] | None = None
    rho = run_matching(cfg, topology, channels, point.W, opts.mode).rho
    for alternation in range(6):
        trace.alternations = alternation + 1
        xi_fix = None
        if fixed_xi is not None:
            xi_fix = fixed_xi(rho) if callable(fixed_xi) else fixed_xi
        builder = SubproblemBuilder(channels, cfg, mode=opts.mode,
                                    fixed_rho=rho, fixed_xi=xi_fix)
        step = ExpansionPoint(rho=rho.copy(), xi=point.xi.copy(), x=point.x.copy(),
                              W=point.W.copy(), Wt=rho[..., None, None] * point.W,
                              Wp=point.Wp.copy(), b_anchor=point.b_anchor.copy(),
                              e_anchor=point.e_anchor.copy(), g_anchor=point.g_anchor.copy())
        step.xi = np.minimum(step.xi, _gate_cap(rho))
        if xi_fix is not None:
            step.xi = xi_fix.copy()
        step.x = step.xi[:, :, :, None] * rho[:, None, :, :]
        step.Wp = step.x[..., None, None] * step.W[:, None, ...]
        _sanitize_margins(builder, step)
        step.b_anchor, step.e_anchor, step.g_anchor = builder.compute_anchors(step)
        step = _dinkelbach_sca(builder, step, opts, trace, channels)
        sol, report = _finalize(channels, cfg, step, opts, rng, trace)
        if best is None or report.ee > best[1].ee:
            best = (sol, report)
        point = step
        new_rho = run_matching(cfg, topology, channels, point.W, opts.mode).rho
        if np.array_equal(new_rho, rho) or abs(report.ee - prev_ee) <= opts.epsilon * max(1.0, abs(prev_ee)):
            break
        prev_ee = report.ee
        rho = new_rho
    sol, report = best
    trace.wall_time = time.perf_counter() - started
    sol.aux["report"] = report.to_json()
    sol.aux["point"] = point
    return sol, trace


def _gate_cap(rho: np.ndarray) -> np.ndarray:
    z = rho.sum(axis=2)        # (K, N)
    K, N = z.shape
    cap = np.zeros((K, K, N))
    for i, k, n in np.ndindex(K, K, N):
        if i != k:
            cap[i, k, n] = z[k, n] * z[i, n]
    return cap


def _signal_margin(builder: SubproblemBuilder, channels: ChannelSet,
                   k: int, n: int, f: int, Wm: np.ndarray) -> float:
    """Worst-case signal margin in raw units (sign is what matters)."""
    e = 0.0 if builder._e(k, n, f) == 0.0 else float(channels.e[k, n, f])
    return float(np.real(np.trace(channels.H_lift[k, n, f] @ Wm))) \
        - e * float(np.linalg.norm(Wm, "fro"))


def _sanitize_margins(builder: SubproblemBuilder, point: ExpansionPoint) -> None:
    """Zero anchored beams whose worst-case signal margin is negative."""
    cfg = builder.cfg
    K, N, M, F = cfg.shape
    rho = builder.fixed_rho if builder.fixed_rho is not None else point.rho
    for k, n, f in np.ndindex(K, N, F):
        if rho[k, n, f] == 0:
            continue
        Wm = point.W[k, n, f]
        margin = _signal_margin(builder, builder.channels, k, n, f, Wm)
        if margin <= 0.0:
            point.W[k, n, f] = 0.0
            point.Wt[k, n, f] = 0.0
            point.Wp[k, :, n, f] = 0.0


def channel_gain_sic_ordering(channels: ChannelSet, rho: np.ndarray) -> np.ndarray:
    """Fixed SIC ordering by estimated channel-gain magnitude.

    Among users multiplexed on subcarrier n, k decodes i when k's serving
    channel norm is at least i's (ties to the lower index).
    """
    K, N, F = rho.shape
    xi = np.zeros((K, K, N))
    for n in range(N):
        served = {}
        for k in range(K):
            fs = np.flatnonzero(rho[k, n])
            if fs.size:
                served[k] = int(fs[0])
        users = sorted(served)
        for a_i, i in enumerate(users):
            for k in users[a_i + 1:]:
                g_i = np.linalg.norm(channels.h_est[i, n, served[i]])
                g_k = np.linalg.norm(channels.h_est[k, n, served[k]])
                if g_k > g_i:
                    xi[i, k, n] = 1.0
                elif g_i > g_k:
                    xi[k, i, n] = 1.0
                else:
                    xi[k, i, n] = 1.0 if i < k else 0.0
                    xi[i, k, n] = 1.0 if k < i else 0.0
    return xi


def solve_baseline_channel_sic(channels: ChannelSet, cfg: NetworkConfig,
                               topology: Topology, opts: SolverOptions | None = None):
    """Baseline: SIC ordering fixed a priori from channel gains."""
    return solve_two_step(channels, cfg, topology, opts,
                          fixed_xi=lambda rho: channel_gain_sic_ordering(channels, rho),
                          algorithm_name="BASELINE_SIC")

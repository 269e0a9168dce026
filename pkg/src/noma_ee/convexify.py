"""Assembly of the inner convex subproblem of one SCA iteration.

Everything nonconvex is replaced around an expansion point: Frobenius
norms by their tangents, binarity by the quadratic penalty pair (exact
linear part minus tangent of the squares), the rank-one requirement by
nuclear-minus-spectral with the spectral term linearized, exp() lower
bounds by their tangents, and the scheduling product gate by a tangent
on the square of the sum with exact quadratic epigraphs on the remaining
squares.  Every surrogate touches its true function at the expansion
point, so a feasible anchor stays feasible for its own subproblem.

Three variants share the machinery:

* full one-step problem (scheduling, SIC ordering and beams jointly),
* scheduling-fixed problem for the two-step alternation (beams + SIC),
* fully-fixed-ordering problem for the channel-gain baseline (beams only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic_program import (Aff, ConicSubproblem, HermExpr, HermVar, ProgramBuilder,
                            VarTable)
from .network import ChannelSet, NetworkConfig
from .robust import RobustMode

LOG2E = 1.0 / np.log(2.0)
ZERO_NORM_FLOOR = 1e-12   # below this the norm tangent uses subgradient 0
POINT_TOL = 1e-5          # anchor self-consistency slack


class InfeasiblePoint(ValueError):
    """The expansion point violates its own linearized constraint set."""


@dataclass
class ExpansionPoint:
    """Previous-iterate values anchoring every Taylor surrogate.

    xi[i, k, n] follows the metrics convention (k decodes i); x and Wp
    carry the lifted products x = xi * rho_i and Wp = x * W_i.  b/e/g
    anchors are the log-domain tangent points.
    """

    rho: np.ndarray                # (K, N, F) in [0, 1]
    xi: np.ndarray                 # (K, K, N) in [0, 1]
    x: np.ndarray                  # (K, K, N, F) in [0, 1]
    W: np.ndarray                  # (K, N, F, M, M)
    Wt: np.ndarray                 # (K, N, F, M, M)
    Wp: np.ndarray                 # (K, K, N, F, M, M)
    b_anchor: np.ndarray           # (K, N, F)
    e_anchor: np.ndarray           # (K, N, F): index [i, n, fp]
    g_anchor: np.ndarray           # (K, K, N, F): index [i, k, n, fp]

    def copy(self) -> "ExpansionPoint":
        return ExpansionPoint(*(getattr(self, f.name).copy()
                                for f in self.__dataclass_fields__.values()))


def rank_residual(W: np.ndarray) -> float:
    """Nuclear norm minus spectral norm; zero iff rank(W) <= 1 (PSD W)."""
    vals = np.clip(np.linalg.eigvalsh(W), 0.0, None)
    return float(vals.sum() - vals.max(initial=0.0))


def frob_tangent_matrix(anchor: np.ndarray) -> np.ndarray | None:
    """Gradient of ||.||_F at the anchor; None encodes the zero subgradient."""
    nrm = float(np.linalg.norm(anchor, "fro"))
    if nrm <= ZERO_NORM_FLOOR:
        return None
    return anchor / nrm


def frob_tangent_value(anchor: np.ndarray, X: np.ndarray) -> float:
    G = frob_tangent_matrix(anchor)
    if G is None:
        return 0.0
    return float(np.real(np.trace(G @ X)))


def spectral_tangent_matrix(anchor: np.ndarray) -> np.ndarray | None:
    """Subgradient u u^H of the spectral norm at the anchor (None at zero)."""
    if float(np.linalg.norm(anchor, "fro")) <= ZERO_NORM_FLOOR:
        return None
    vals, vecs = np.linalg.eigh(anchor)
    u = vecs[:, -1]
    return np.outer(u, u.conj())


def surrogate_g(xi, rho, x, point: ExpansionPoint, lam: float) -> float:
    """First-order expansion of the penalty sum-of-squares at the anchor.

    Tangent of a convex function: underestimates everywhere, exact at the
    expansion point.
    """
    total = 0.0
    for v, a in ((xi, point.xi), (rho, point.rho), (x, point.x)):
        v = np.asarray(v, dtype=float)
        total += float(np.sum(a ** 2 + 2.0 * a * (v - a)))
    return lam * total


def penalty_g(xi, rho, x, lam: float) -> float:
    return lam * float(sum(np.sum(np.asarray(v, dtype=float) ** 2) for v in (xi, rho, x)))


def penalty_f(xi, rho, x, lam: float) -> float:
    return lam * float(sum(np.sum(np.asarray(v, dtype=float)) for v in (xi, rho, x)))


def log_floor(value: float, floor: float) -> float:
    return float(np.log(max(value, floor)))


@dataclass
class SubproblemStructure:
    """Variable handles kept alongside a built subproblem for extraction."""

    table: VarTable
    rho_v: np.ndarray | None
    xi_v: dict
    x_v: dict
    a_v: np.ndarray
    b_v: np.ndarray
    s_v: np.ndarray | None
    d_v: dict
    e_v: dict
    f_v: dict
    g_v: dict
    W_h: dict
    Wt_h: dict
    Wp_h: dict
    V_h: dict


class SubproblemBuilder:
    """Builds the conic subproblem for a fixed scenario.

    ``fixed_rho`` switches to the scheduling-fixed variant; additionally
    passing ``fixed_xi`` pins the SIC ordering (channel-gain baseline).
    ``forbid_sic`` drops every SIC-ordering variable (OMA).
    """

    def __init__(self, channels: ChannelSet, cfg: NetworkConfig,
                 mode: RobustMode = RobustMode.SBRS,
                 fixed_rho: np.ndarray | None = None,
                 fixed_xi: np.ndarray | None = None,
                 forbid_sic: bool = False):
        self.channels = channels
        self.cfg = cfg
        self.mode = mode
        self.fixed_rho = None if fixed_rho is None else np.round(np.asarray(fixed_rho, float))
        self.fixed_xi = None if fixed_xi is None else np.round(np.asarray(fixed_xi, float))
        self.forbid_sic = forbid_sic
        K, N, M, F = cfg.shape
        self.pairs = [] if forbid_sic else [(i, k) for i in range(K) for k in range(K) if i != k]
        # rate and SIC expressions are assembled in units of the smallest
        # noise power; raw watt-scale traces (~1e-15) would drown in the
        # conic solver's absolute tolerances
        self.noise_ref = float(cfg.noise_power.min())
        self.H_rate_override = None

    # -- anchored scalar magnitudes used both to build and to sanity-check --

    def _e(self, k: int, n: int, f: int) -> float:
        """Normalized uncertainty radius for the rate terms."""
        if self.mode is RobustMode.NOMINAL or self.mode is RobustMode.EXRS:
            return 0.0
        return float(self.channels.e[k, n, f]) / self.noise_ref

    def _e_sic(self, k: int, n: int, f: int) -> float:
        if self.mode is RobustMode.NOMINAL:
            return 0.0
        return float(self.channels.e[k, n, f]) / self.noise_ref

    def _H_rate(self, k: int, n: int, f: int) -> np.ndarray:
        if self.H_rate_override is not None:
            return self.H_rate_override[k, n, f] / self.noise_ref
        return self.channels.H_lift[k, n, f] / self.noise_ref

    def _H_sic(self, k: int, n: int, f: int) -> np.ndarray:
        return self.channels.H_lift[k, n, f] / self.noise_ref

    def _sig(self, f: int, k: int, n: int) -> float:
        return float(self.cfg.noise_power[f, k, n]) / self.noise_ref

    # -- expression helpers ---------------------------------------------------

    def _wt_expr(self, st: SubproblemStructure, k: int, n: int, f: int) -> HermExpr:
        M = self.cfg.num_antennas
        if self.fixed_rho is None:
            return HermExpr.of(st.Wt_h[(k, n, f)])
        expr = HermExpr(M)
        if self.fixed_rho[k, n, f]:
            expr.plus_herm(st.W_h[(k, n, f)], 1.0)
        return expr

    def _wp_expr(self, st: SubproblemStructure, i: int, k: int, n: int, f: int) -> HermExpr:
        M = self.cfg.num_antennas
        if self.forbid_sic:
            return HermExpr(M)
        if self.fixed_rho is None:
            return HermExpr.of(st.Wp_h[(i, k, n, f)])
        expr = HermExpr(M)
        if not self.fixed_rho[i, n, f]:
            return expr
        if self.fixed_xi is not None:
            if self.fixed_xi[i, k, n]:
                expr.plus_herm(st.W_h[(i, n, f)], 1.0)
            return expr
        expr.plus_herm(st.V_h[(i, k, n, f)], 1.0)
        return expr

    def _wt_anchor(self, point: ExpansionPoint, k: int, n: int, f: int) -> np.ndarray:
        if self.fixed_rho is None:
            return point.Wt[k, n, f]
        return self.fixed_rho[k, n, f] * point.W[k, n, f]

    def _wp_anchor(self, point: ExpansionPoint, i: int, k: int, n: int, f: int) -> np.ndarray:
        if self.forbid_sic:
            return np.zeros_like(point.W[0, 0, 0])
        if self.fixed_rho is None:
            return point.Wp[i, k, n, f]
        xi = self.fixed_xi[i, k, n] if self.fixed_xi is not None else point.xi[i, k, n]
        return self.fixed_rho[i, n, f] * xi * point.W[i, n, f]

    def _tangent(self, anchor: np.ndarray, expr: HermExpr) -> Aff:
        G = frob_tangent_matrix(anchor)
        if G is None:
            return Aff()
        return expr.inner_aff(G)

    # -- the rate-side psi / phi expressions ----------------------------------

    def _phi_expr(self, st, point, f: int, k: int, n: int) -> Aff:
        K, N, M, F = self.cfg.shape
        phi = Aff(const=self._sig(f, k, n))
        for fp in range(F):
            e = self._e(k, n, fp)
            H = self._H_rate(k, n, fp)
            for i in range(K):
                if i == k:
                    continue
                wt = self._wt_expr(st, i, n, fp)
                phi = phi.add(wt.inner_aff(H))
                if e:
                    phi = phi.add(self._tangent(self._wt_anchor(point, i, n, fp), wt).scaled(e))
                if not self.forbid_sic:
                    wp = self._wp_expr(st, i, k, n, fp)
                    phi = phi.add(wp.inner_aff(H).scaled(-1.0))
                    if e:
                        phi = phi.add(self._tangent(self._wp_anchor(point, i, k, n, fp),
                                                    wp).scaled(-e))
        return phi

    def _psi_expr(self, st, point, f: int, k: int, n: int, phi: Aff) -> Aff:
        wt = self._wt_expr(st, k, n, f)
        psi = wt.inner_aff(self._H_rate(k, n, f)).add(phi)
        e = self._e(k, n, f)
        if e:
            psi = psi.add(self._tangent(self._wt_anchor(point, k, n, f), wt).scaled(-e))
        return psi

    # -- the SIC-side D / E / F / G expressions --------------------------------

    def _sic_e_expr(self, st, point, i: int, n: int, fp: int) -> Aff:
        K, N, M, F = self.cfg.shape
        out = Aff(const=self._sig(fp, i, n))
        for f in range(F):
            e = self._e_sic(i, n, f)
            H_i = self._H_sic(i, n, f)
            for kp in range(K):
                if kp == i:
                    continue
                wt = self._wt_expr(st, kp, n, f)
                out = out.add(wt.inner_aff(H_i))
                if e:
                    out = out.add(self._tangent(self._wt_anchor(point, kp, n, f), wt).scaled(-e))
                wp = self._wp_expr(st, kp, i, n, f)
                out = out.add(wp.inner_aff(H_i).scaled(-1.0))
                if e:
                    out = out.add(self._tangent(self._wp_anchor(point, kp, i, n, f), wp).scaled(e))
        return out

    def _sic_g_expr(self, st, point, i: int, k: int, n: int, fp: int) -> Aff:
        K, N, M, F = self.cfg.shape
        out = Aff(const=self._sig(fp, k, n))
        for f in range(F):
            e = self._e_sic(i, n, f)    # decoded user's radius, as printed
            H_i = self._H_sic(i, n, f)
            H_k = self._H_sic(k, n, f)
            for kp in range(K):
                if kp == i:
                    continue
                wt = self._wt_expr(st, kp, n, f)
                out = out.add(wt.inner_aff(H_k))
                if e:
                    out = out.add(self._tangent(self._wt_anchor(point, kp, n, f), wt).scaled(e))
                wp = self._wp_expr(st, kp, i, n, f)
                out = out.add(wp.inner_aff(H_i).scaled(-1.0))
                if e:
                    out = out.add(self._tangent(self._wp_anchor(point, kp, i, n, f), wp).scaled(-e))
        return out

    def _sic_d_expr(self, st, point, i, k, n, fp, e_expr: Aff) -> Aff:
        wp = self._wp_expr(st, i, k, n, fp)
        out = wp.inner_aff(self._H_sic(i, n, fp)).add(e_expr)
        e = self._e_sic(i, n, fp)
        if e:
            out = out.add(self._tangent(self._wp_anchor(point, i, k, n, fp), wp).scaled(e))
        return out

    def _sic_f_expr(self, st, point, i, k, n, fp, g_expr: Aff) -> Aff:
        wp = self._wp_expr(st, i, k, n, fp)
        out = wp.inner_aff(self._H_sic(k, n, fp)).add(g_expr)
        e = self._e_sic(k, n, fp)
        if e:
            out = out.add(self._tangent(self._wp_anchor(point, i, k, n, fp), wp).scaled(-e))
        return out

    def _sic_num_anchor(self, point, i, k, n, fp, side: str) -> float:
        """Anchor value of the decode-bound numerator (for row scaling)."""
        Wp = self._wp_anchor(point, i, k, n, fp)
        nrm = float(np.linalg.norm(Wp, "fro"))
        if side == "d":
            return float(np.real(np.trace(self._H_sic(i, n, fp) @ Wp))) \
                + self._e_sic(i, n, fp) * nrm
        return float(np.real(np.trace(self._H_sic(k, n, fp) @ Wp))) \
            - self._e_sic(k, n, fp) * nrm

    SIC_ACTIVE_TOL = 1e-6

    def _sic_active(self, point: ExpansionPoint, i: int, k: int, n: int, fp: int) -> bool:
        """Whether the anchor claims SIC for this (decoded, decoder) pair."""
        if self.fixed_xi is not None:
            rho = self.fixed_rho if self.fixed_rho is not None else point.rho
            return bool(self.fixed_xi[i, k, n] * rho[i, n, fp] > self.SIC_ACTIVE_TOL)
        if self.fixed_rho is not None:
            return bool(point.xi[i, k, n] * self.fixed_rho[i, n, fp] > self.SIC_ACTIVE_TOL)
        return bool(point.x[i, k, n, fp] > self.SIC_ACTIVE_TOL)

    # -- assembly ---------------------------------------------------------------

    def build(self, point: ExpansionPoint, q: float, lam: float, mu: float,
              H_rate_override: np.ndarray | None = None,
              check_point: bool = True) -> tuple[ConicSubproblem, SubproblemStructure]:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        self.H_rate_override = H_rate_override
        if check_point:
            self._check_point(point)

        table = VarTable()
        pb = ProgramBuilder(table)
        full = self.fixed_rho is None
        free_xi = (not self.forbid_sic) and self.fixed_xi is None

        rho_v = table.array("rho", (K, N, F)) if full else None
        xi_v = {(i, k, n): table.new(f"xi[{i},{k},{n}]")
                for (i, k) in self.pairs for n in range(N)} if free_xi else {}
        x_v = {(i, k, n, f): table.new(f"x[{i},{k},{n},{f}]")
               for (i, k) in self.pairs for n in range(N) for f in range(F)} if full else {}
        # a/b and the rate rows exist only for links carrying anchored signal:
        # at zero signal the row set {exp(a) <= psi, a >= b, phi-tangent}
        # degenerates into the equality phi = exp(b_anchor), freezing every
        # interference term that flows through the link
        live = [key for key in np.ndindex(K, N, F)
                if float(np.linalg.norm(self._wt_anchor(point, *key), "fro")) > 1e-12]
        a_v = {key: table.new(f"a[{','.join(map(str, key))}]") for key in live}
        b_v = {key: table.new(f"b[{','.join(map(str, key))}]") for key in live}
        s_v = table.array("zsq", (K, N)) if (full and self.pairs) else None
        # the log-form decode rows are emitted only for pairs claiming SIC at
        # the anchor: at x = 0 the original constraint is void, and its
        # tangentized form would otherwise pin the interference expressions
        # to their anchor values (e has no room between the exp tangent and
        # the d-cap when the decode numerator vanishes)
        d_v, e_v, f_v, g_v = {}, {}, {}, {}
        if not self.forbid_sic:
            active = [t for t in ((i, k, n, fp) for (i, k) in self.pairs
                                  for n in range(N) for fp in range(F))
                      if self._sic_active(point, *t)]
            for t in active:
                d_v[t] = table.new(f"d[{','.join(map(str, t))}]")
                f_v[t] = table.new(f"fq[{','.join(map(str, t))}]")
                g_v[t] = table.new(f"g[{','.join(map(str, t))}]")
            for (i, k, n, fp) in active:
                if (i, n, fp) not in e_v:
                    e_v[(i, n, fp)] = table.new(f"e[{i},{n},{fp}]")

        W_h = {(k, n, f): HermVar(table, f"W[{k},{n},{f}]", M)
               for k, n, f in np.ndindex(K, N, F)}
        Wt_h = {(k, n, f): HermVar(table, f"Wt[{k},{n},{f}]", M)
                for k, n, f in np.ndindex(K, N, F)} if full else {}
        Wp_h = {(i, k, n, f): HermVar(table, f"Wp[{i},{k},{n},{f}]", M)
                for (i, k) in self.pairs for n in range(N) for f in range(F)} if full else {}
        V_h = {}
        if not full and free_xi:
            V_h = {(i, k, n, f): HermVar(table, f"V[{i},{k},{n},{f}]", M)
                   for (i, k) in self.pairs for n in range(N) for f in range(F)}

        st = SubproblemStructure(table=table, rho_v=rho_v, xi_v=xi_v, x_v=x_v,
                                 a_v=a_v, b_v=b_v, s_v=s_v, d_v=d_v, e_v=e_v,
                                 f_v=f_v, g_v=g_v, W_h=W_h, Wt_h=Wt_h, Wp_h=Wp_h, V_h=V_h)

        self._add_scheduling_rows(pb, st)
        self._add_bigm_rows(pb, st)
        self._add_rate_rows(pb, st, point)
        if not self.forbid_sic:
            self._add_sic_rows(pb, st, point)
        self._set_objective(pb, st, point, q, lam, mu)
        problem = pb.assemble(q=q, lam=lam, mu=mu)
        return problem, st

    def _add_scheduling_rows(self, pb: ProgramBuilder, st: SubproblemStructure) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        full = self.fixed_rho is None
        if full:
            for k, n, f in np.ndindex(K, N, F):
                pb.add_leq(Aff.of(int(st.rho_v[k, n, f])), 1.0)      # C12 upper
                pb.add_geq(Aff.of(int(st.rho_v[k, n, f])), 0.0)      # C12 lower
            for n, f in np.ndindex(N, F):                            # C2 reuse
                expr = Aff()
                for k in range(K):
                    expr.add_term(int(st.rho_v[k, n, f]), 1.0)
                pb.add_leq(expr, float(cfg.reuse_limit[n, f]))
            for k, n in np.ndindex(K, N):                            # one AAU
                expr = Aff()
                for f in range(F):
                    expr.add_term(int(st.rho_v[k, n, f]), 1.0)
                pb.add_leq(expr, 1.0)
        for (i, k, n), var in st.xi_v.items():
            pb.add_leq(Aff.of(var), 1.0)                             # C10
            pb.add_geq(Aff.of(var), 0.0)
        for (i, k, n, f), var in st.x_v.items():
            pb.add_leq(Aff.of(var), 1.0)                             # C14
            pb.add_geq(Aff.of(var), 0.0)
            # product linearization C7-C9 against xi[i,k,n] and rho[i,n,f]
            pb.add_leq(Aff.of(var).add(Aff.of(st.xi_v[(i, k, n)]).scaled(-1.0)), 0.0)
            pb.add_leq(Aff.of(var).add(Aff.of(int(st.rho_v[i, n, f])).scaled(-1.0)), 0.0)
            lhs = Aff.of(int(st.rho_v[i, n, f])).add(Aff.of(st.xi_v[(i, k, n)])) \
                .add(Aff.of(var).scaled(-1.0))
            pb.add_leq(lhs, 1.0)
        if st.xi_v:
            seen = set()
            for (i, k, n) in st.xi_v:
                if (k, i, n) in seen:
                    continue
                seen.add((i, k, n))
                pair = Aff.of(st.xi_v[(i, k, n)]).add(Aff.of(st.xi_v[(k, i, n)]))
                pb.add_leq(pair, 1.0)                                # mutual exclusion

    def _gate_rows(self, pb: ProgramBuilder, st: SubproblemStructure,
                   point: ExpansionPoint) -> None:
        """Multiplexing gate 2*xi <= 2*z*y via tangent of (z+y)^2 and exact squares."""
        cfg = self.cfg
        K, N, M, F = cfg.shape
        if self.fixed_rho is not None:
            zbar = self.fixed_rho.sum(axis=2)       # (K, N)
            for (i, k, n), var in st.xi_v.items():
                pb.add_leq(Aff.of(var).scaled(2.0), float(2.0 * zbar[k, n] * zbar[i, n]))
            return
        if st.s_v is None:
            return
        zhat = point.rho.sum(axis=2)                # (K, N)

        def z_aff(k, n):
            expr = Aff()
            for f in range(F):
                expr.add_term(int(st.rho_v[k, n, f]), 1.0)
            return expr

        for k, n in np.ndindex(K, N):
            # epigraph s >= z^2 as [[1, z], [z, s]] PSD
            pb.add_psd_real2(Aff(const=1.0), z_aff(k, n), Aff.of(int(st.s_v[k, n])))
        for (i, k, n), var in st.xi_v.items():
            tot = zhat[k, n] + zhat[i, n]
            # 2*xi + s_k + s_i <= (zhat+yhat)^2 + 2(zhat+yhat)(z + y - zhat - yhat)
            lhs = Aff.of(var).scaled(2.0)
            lhs.add_term(int(st.s_v[k, n]), 1.0)
            lhs.add_term(int(st.s_v[i, n]), 1.0)
            lhs = lhs.add(z_aff(k, n).add(z_aff(i, n)).scaled(-2.0 * tot))
            pb.add_leq(lhs, float(tot ** 2 - 2.0 * tot * tot))

    def _add_bigm_rows(self, pb: ProgramBuilder, st: SubproblemStructure) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        eye = np.eye(M)
        for (k, n, f), Wv in st.W_h.items():
            pb.add_psd(HermExpr.of(Wv))                              # C3
        if self.fixed_rho is None:
            for (k, n, f), Wtv in st.Wt_h.items():
                P = float(cfg.power_budget[f])
                rho = int(st.rho_v[k, n, f])
                Wv = st.W_h[(k, n, f)]
                pb.add_psd(HermExpr(M).plus_scalar(rho, P * eye).plus_herm(Wtv, -1.0))   # C16
                pb.add_psd(HermExpr.of(Wv).plus_herm(Wtv, -1.0))                         # C17
                pb.add_psd(HermExpr.of(Wtv))                                             # C18
                pb.add_psd(HermExpr.of(Wtv).plus_herm(Wv, -1.0)                          # C19
                           .plus_scalar(rho, -P * eye).plus_const(P * eye))
            for (i, k, n, f), Wpv in st.Wp_h.items():
                P = float(cfg.power_budget[f])
                xv = st.x_v[(i, k, n, f)]
                Wv = st.W_h[(i, n, f)]
                pb.add_psd(HermExpr(M).plus_scalar(xv, P * eye).plus_herm(Wpv, -1.0))    # C20
                pb.add_psd(HermExpr.of(Wv).plus_herm(Wpv, -1.0))                         # C21
                pb.add_psd(HermExpr.of(Wpv))                                             # C22
                pb.add_psd(HermExpr.of(Wpv).plus_herm(Wv, -1.0)                          # C23
                           .plus_scalar(xv, -P * eye).plus_const(P * eye))
        else:
            for (i, k, n, f), Vv in st.V_h.items():
                P = float(cfg.power_budget[f])
                xiv = st.xi_v[(i, k, n)]
                Wv = st.W_h[(i, n, f)]
                pb.add_psd(HermExpr(M).plus_scalar(xiv, P * eye).plus_herm(Vv, -1.0))
                pb.add_psd(HermExpr.of(Wv).plus_herm(Vv, -1.0))
                pb.add_psd(HermExpr.of(Vv))
                pb.add_psd(HermExpr.of(Vv).plus_herm(Wv, -1.0)
                           .plus_scalar(xiv, -P * eye).plus_const(P * eye))
        # power budget C1 on the scheduled beams
        for f in range(F):
            expr = Aff()
            for k, n in np.ndindex(K, N):
                expr = expr.add(self._wt_expr(st, k, n, f).trace_aff())
            pb.add_leq(expr, float(cfg.power_budget[f]))

    def _add_rate_rows(self, pb: ProgramBuilder, st: SubproblemStructure,
                       point: ExpansionPoint) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        for (k, n, f) in st.a_v:
            sigma2 = self._sig(f, k, n)
            a = Aff.of(st.a_v[(k, n, f)])
            b = Aff.of(st.b_v[(k, n, f)])
            ln_sig = float(np.log(sigma2))
            pb.add_geq(a, ln_sig)
            pb.add_geq(b, ln_sig)
            pb.add_leq(b.add(a.scaled(-1.0)), 0.0)                    # a >= b
            phi = self._phi_expr(st, point, f, k, n)
            psi = self._psi_expr(st, point, f, k, n, phi)
            bt = float(point.b_anchor[k, n, f])
            ebt = float(np.exp(bt))
            # rows are normalized to the anchor magnitudes so the conic data
            # stays O(1): exp(a)<=psi becomes exp(a - ln c) <= psi/c
            Wt = self._wt_anchor(point, k, n, f)
            margin = float(np.real(np.trace(self._H_rate(k, n, f) @ Wt))) \
                - self._e(k, n, f) * float(np.linalg.norm(Wt, "fro"))
            c_psi = max(ebt + margin, ebt, sigma2)
            pb.add_exp_leq(a.add(-float(np.log(c_psi))), psi.scaled(1.0 / c_psi))
            # phi <= exp(bt) * (b - bt + 1), divided through by exp(bt)
            pb.add_leq(phi.scaled(1.0 / ebt).add(b.scaled(-1.0)), 1.0 - bt)
        # fronthaul in bits: sum phi_f * log2(e) * (a - b) <= R_max
        for f in range(F):
            expr = Aff()
            for (k, n, ff), var in st.a_v.items():
                if ff == f:
                    expr.add_term(var, LOG2E * float(cfg.fronthaul_weight[f]))
                    expr.add_term(st.b_v[(k, n, ff)], -LOG2E * float(cfg.fronthaul_weight[f]))
            pb.add_leq(expr, float(cfg.fronthaul_capacity[f]))
        self._gate_rows(pb, st, point)

    def _add_sic_rows(self, pb: ProgramBuilder, st: SubproblemStructure,
                      point: ExpansionPoint) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        e_exprs = {}
        for (i, n, fp), var in st.e_v.items():
            e_exprs[(i, n, fp)] = self._sic_e_expr(st, point, i, n, fp)
            ev = Aff.of(var)
            et = float(point.e_anchor[i, n, fp])
            # E <= exp(et) * (e - et + 1), divided through by exp(et)
            pb.add_leq(e_exprs[(i, n, fp)].scaled(float(np.exp(-et)))
                       .add(ev.scaled(-1.0)), 1.0 - et)
        for (i, k, n, fp) in st.d_v:
            d = Aff.of(st.d_v[(i, k, n, fp)])
            e = Aff.of(st.e_v[(i, n, fp)])
            fq = Aff.of(st.f_v[(i, k, n, fp)])
            g = Aff.of(st.g_v[(i, k, n, fp)])
            # transformed decode inequality and its support rows
            pb.add_leq(d.add(e.scaled(-1.0)).add(fq.scaled(-1.0)).add(g), 0.0)
            pb.add_leq(e.add(d.scaled(-1.0)), 0.0)            # d >= e
            pb.add_leq(g.add(fq.scaled(-1.0)), 0.0)           # f >= g
            eet = float(np.exp(point.e_anchor[i, n, fp]))
            num_d = self._sic_num_anchor(point, i, k, n, fp, side="d")
            c_d = max(eet + num_d, eet)
            pb.add_exp_leq(d.add(-float(np.log(c_d))),
                           self._sic_d_expr(st, point, i, k, n, fp,
                                            e_exprs[(i, n, fp)]).scaled(1.0 / c_d))
            gt = float(point.g_anchor[i, k, n, fp])
            num_f = self._sic_num_anchor(point, i, k, n, fp, side="f")
            if not np.isfinite(gt) or num_f <= 0.0:
                continue   # degenerate pair: the bound's RHS is unrestrictive
            g_expr = self._sic_g_expr(st, point, i, k, n, fp)
            pb.add_leq(g_expr.scaled(float(np.exp(-gt))).add(g.scaled(-1.0)),
                       1.0 - gt)
            egt = float(np.exp(gt))
            c_f = max(egt + num_f, 1e-2 * egt)
            pb.add_exp_leq(fq.add(-float(np.log(c_f))),
                           self._sic_f_expr(st, point, i, k, n, fp,
                                            g_expr).scaled(1.0 / c_f))

    def _set_objective(self, pb: ProgramBuilder, st: SubproblemStructure,
                       point: ExpansionPoint, q: float, lam: float, mu: float) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        obj = Aff()
        for key, var in st.a_v.items():
            obj.add_term(var, 1.0)
            obj.add_term(st.b_v[key], -1.0)
        # Dinkelbach: -q * P_total(W); static power enters the constant
        for (k, n, f), Wv in st.W_h.items():
            obj = obj.add(Wv.trace().scaled(-q / cfg.drain_efficiency))
        obj = obj.add(-q * float(F * M * cfg.circuit_power))
        # binary penalty: -f + tangent of g
        if st.rho_v is not None:
            for k, n, f in np.ndindex(K, N, F):
                anchor = float(point.rho[k, n, f])
                obj.add_term(int(st.rho_v[k, n, f]), lam * (2.0 * anchor - 1.0))
                obj = obj.add(-lam * anchor ** 2)
        for (i, k, n), var in st.xi_v.items():
            anchor = float(point.xi[i, k, n])
            obj.add_term(var, lam * (2.0 * anchor - 1.0))
            obj = obj.add(-lam * anchor ** 2)
        for (i, k, n, f), var in st.x_v.items():
            anchor = float(point.x[i, k, n, f])
            obj.add_term(var, lam * (2.0 * anchor - 1.0))
            obj = obj.add(-lam * anchor ** 2)
        # rank penalty: -mu * (Tr[W] - spectral tangent)
        for (k, n, f), Wv in st.W_h.items():
            obj = obj.add(Wv.trace().scaled(-mu))
            G = spectral_tangent_matrix(point.W[k, n, f])
            if G is not None:
                obj = obj.add(Wv.inner(G).scaled(mu))
        pb.obj = obj

    # -- anchor self-consistency ------------------------------------------------

    def _check_point(self, point: ExpansionPoint) -> None:
        cfg = self.cfg
        K, N, M, F = cfg.shape
        tol = POINT_TOL
        rho = point.rho if self.fixed_rho is None else self.fixed_rho
        xi = point.xi if self.fixed_xi is None else self.fixed_xi
        if np.any(rho < -tol) or np.any(rho > 1 + tol) or np.any(xi < -tol) or np.any(xi > 1 + tol):
            raise InfeasiblePoint("relaxed binaries outside [0, 1]")
        if self.fixed_rho is None:
            if np.any(rho.sum(axis=2) > 1 + tol):
                raise InfeasiblePoint("one-AAU sum exceeded at the anchor")
            if np.any(rho.sum(axis=0) > cfg.reuse_limit + tol):
                raise InfeasiblePoint("reuse limit exceeded at the anchor")
            gap = point.x - point.xi[:, :, :, None] * point.rho[:, None, :, :]
            if np.abs(gap).max(initial=0.0) > tol:
                raise InfeasiblePoint("x anchor inconsistent with xi * rho")
        if not self.forbid_sic:
            z = rho.sum(axis=2)      # (K, N)
            for (i, k) in self.pairs:
                for n in range(N):
                    if xi[i, k, n] > z[k, n] * z[i, n] + tol:
                        raise InfeasiblePoint("multiplexing gate violated at the anchor")
                    if xi[i, k, n] + xi[k, i, n] > 1 + tol:
                        raise InfeasiblePoint("SIC mutual exclusion violated at the anchor")
        for f in range(F):
            used = sum(np.real(np.trace(self._wt_anchor(point, k, n, f)))
                       for k, n in np.ndindex(K, N))
            if used > cfg.power_budget[f] * (1 + 1e-4) + 1e-12:
                raise InfeasiblePoint(f"power budget exceeded at the anchor (AAU {f})")
        # the rate rows admit a completion iff the SBRS margin is nonnegative
        for k, n, f in np.ndindex(K, N, F):
            Wt = self._wt_anchor(point, k, n, f)
            margin = float(np.real(np.trace(self._H_rate(k, n, f) @ Wt))) \
                - self._e(k, n, f) * float(np.linalg.norm(Wt, "fro"))
            phi_floor = self._sig(f, k, n)
            if margin < -tol * max(1.0, phi_floor):
                raise InfeasiblePoint(f"negative worst-case signal margin at link ({k},{n},{f})")


    def true_rate_and_power(self, point: ExpansionPoint,
                            H_rate_override: np.ndarray | None = None) -> tuple[float, float]:
        """Exact-norm worst-case rate sum (nats) and total power at the anchor."""
        cfg = self.cfg
        K, N, M, F = cfg.shape
        self.H_rate_override = H_rate_override
        rate = 0.0
        for k, n, f in np.ndindex(K, N, F):
            phi = self._sig(f, k, n)
            for fp in range(F):
                e = self._e(k, n, fp)
                H = self._H_rate(k, n, fp)
                for i in range(K):
                    if i == k:
                        continue
                    Wp = self._wp_anchor(point, i, k, n, fp)
                    Wt = self._wt_anchor(point, i, n, fp)
                    phi += float(np.real(np.trace(H @ (Wt - Wp))))
                    phi += e * (float(np.linalg.norm(Wt, "fro"))
                                - float(np.linalg.norm(Wp, "fro")))
            Wt = self._wt_anchor(point, k, n, f)
            margin = float(np.real(np.trace(self._H_rate(k, n, f) @ Wt))) \
                - self._e(k, n, f) * float(np.linalg.norm(Wt, "fro"))
            if phi > 0 and margin > 0:
                rate += float(np.log1p(margin / phi))
        power = float(F * M * cfg.circuit_power)
        for k, n, f in np.ndindex(K, N, F):
            power += float(np.real(np.trace(point.W[k, n, f]))) / cfg.drain_efficiency
        return rate, power

    def true_objective(self, point: ExpansionPoint, q: float, lam: float, mu: float,
                       H_rate_override: np.ndarray | None = None) -> float:
        """Un-surrogated value of the penalized Dinkelbach objective at the anchor.

        Used as the merit function for accepting SCA steps: the tangent
        rows over-credit interference reductions by up to a nat per step,
        which would otherwise pump the iterates into an all-whisper state
        whose true rates collapse.
        """
        rate, power = self.true_rate_and_power(point, H_rate_override)
        pen = 0.0
        if self.fixed_rho is None:
            pen += float(np.sum(point.rho - point.rho ** 2))
            pen += float(np.sum(point.x - point.x ** 2))
        if self.fixed_xi is None and not self.forbid_sic:
            pen += float(np.sum(point.xi - point.xi ** 2))
        rank_pen = 0.0
        for k, n, f in np.ndindex(self.cfg.num_users, self.cfg.num_subcarriers,
                                  self.cfg.num_aaus):
            rank_pen += rank_residual(point.W[k, n, f])
        return rate - q * power - lam * pen - mu * rank_pen

    def compute_anchors(self, point: ExpansionPoint,
                        H_rate_override: np.ndarray | None = None):
        """Exact-norm values of phi / E / G at the anchor, log-domain, floored.

        phi >= sigma^2 holds identically at consistent anchors; the SIC
        quantities can dip below zero through their printed error margins,
        so they are floored before taking logs (a low anchor only slackens
        the corresponding tangent row).
        """
        cfg = self.cfg
        K, N, M, F = cfg.shape
        self.H_rate_override = H_rate_override

        def tr(Hm, Wm):
            return float(np.real(np.trace(Hm @ Wm)))

        b_anchor = np.zeros((K, N, F))
        e_anchor = np.zeros((K, N, F))
        g_anchor = np.zeros((K, K, N, F))
        wt = {(k, n, f): self._wt_anchor(point, k, n, f) for k, n, f in np.ndindex(K, N, F)}
        wt_norm = {key: float(np.linalg.norm(Wm, "fro")) for key, Wm in wt.items()}

        for k, n, f in np.ndindex(K, N, F):
            phi = self._sig(f, k, n)
            for fp in range(F):
                e = self._e(k, n, fp)
                H = self._H_rate(k, n, fp)
                for i in range(K):
                    if i == k:
                        continue
                    Wp = self._wp_anchor(point, i, k, n, fp)
                    phi += tr(H, wt[(i, n, fp)] - Wp)
                    phi += e * (wt_norm[(i, n, fp)] - float(np.linalg.norm(Wp, "fro")))
            b_anchor[k, n, f] = np.log(max(phi, self._sig(f, k, n)))

        if not self.forbid_sic:
            for i, n, fp in np.ndindex(K, N, F):
                val = self._sig(fp, i, n)
                for f in range(F):
                    e = self._e_sic(i, n, f)
                    H_i = self._H_sic(i, n, f)
                    for kp in range(K):
                        if kp == i:
                            continue
                        Wp = self._wp_anchor(point, kp, i, n, f)
                        val += tr(H_i, wt[(kp, n, f)] - Wp)
                        val -= e * (wt_norm[(kp, n, f)] - float(np.linalg.norm(Wp, "fro")))
                e_anchor[i, n, fp] = np.log(max(val, self._sig(fp, i, n)))
            for (i, k) in self.pairs:
                for n, fp in np.ndindex(N, F):
                    val = self._sig(fp, k, n)
                    for f in range(F):
                        e = self._e_sic(i, n, f)
                        H_i = self._H_sic(i, n, f)
                        H_k = self._H_sic(k, n, f)
                        for kp in range(K):
                            if kp == i:
                                continue
                            Wp = self._wp_anchor(point, kp, i, n, f)
                            val += tr(H_k, wt[(kp, n, f)]) + e * wt_norm[(kp, n, f)]
                            val -= tr(H_i, Wp) + e * float(np.linalg.norm(Wp, "fro"))
                    # a nonpositive decoder-side denominator means the printed
                    # bound imposes no restriction for this pair; mark it NaN and
                    # skip its rows instead of anchoring a log tangent at nothing
                    if val <= 1e-6 * self._sig(fp, k, n):
                        g_anchor[i, k, n, fp] = np.nan
                    else:
                        g_anchor[i, k, n, fp] = np.log(val)
        return b_anchor, e_anchor, g_anchor


def build_subproblem(channels: ChannelSet, cfg: NetworkConfig, point: ExpansionPoint,
                     q: float, lam: float, mu: float,
                     mode: RobustMode = RobustMode.SBRS,
                     **kwargs) -> tuple[ConicSubproblem, SubproblemStructure]:
    """One-shot builder; algorithm drivers reuse a SubproblemBuilder instead."""
    return SubproblemBuilder(channels, cfg, mode=mode).build(point, q, lam, mu, **kwargs)


def anchor_vector(builder: SubproblemBuilder, st: SubproblemStructure,
                  point: ExpansionPoint) -> np.ndarray:
    """Complete the expansion point into a full variable vector.

    The free log-domain variables are set to the canonical completion
    (a at the rate anchor, d = e and f = g at the SIC anchors), which is
    feasible whenever the anchor itself is.
    """
    cfg = builder.cfg
    K, N, M, F = cfg.shape
    x = np.zeros(st.table.count)
    if st.rho_v is not None:
        for k, n, f in np.ndindex(K, N, F):
            x[st.rho_v[k, n, f]] = point.rho[k, n, f]
    for (i, k, n), var in st.xi_v.items():
        x[var] = point.xi[i, k, n]
    for (i, k, n, f), var in st.x_v.items():
        x[var] = point.x[i, k, n, f]
    if st.s_v is not None:
        z = (point.rho if builder.fixed_rho is None else builder.fixed_rho).sum(axis=2)
        for k, n in np.ndindex(K, N):
            x[st.s_v[k, n]] = z[k, n] ** 2
    for key, Wv in st.W_h.items():
        Wv.assign(x, point.W[key])
    for key, Wv in st.Wt_h.items():
        Wv.assign(x, point.Wt[key])
    for key, Wv in st.Wp_h.items():
        Wv.assign(x, point.Wp[key])
    for (i, k, n, f), Vv in st.V_h.items():
        Vv.assign(x, point.xi[i, k, n] * point.W[i, n, f])
    for (k, n, f), var in st.a_v.items():
        Wt = builder._wt_anchor(point, k, n, f)
        margin = float(np.real(np.trace(builder._H_rate(k, n, f) @ Wt))) \
            - builder._e(k, n, f) * float(np.linalg.norm(Wt, "fro"))
        phi = float(np.exp(point.b_anchor[k, n, f]))
        x[st.b_v[(k, n, f)]] = point.b_anchor[k, n, f]
        x[var] = max(np.log(max(phi + margin, 1e-300)), point.b_anchor[k, n, f])
    for (i, n, fp), var in st.e_v.items():
        x[var] = point.e_anchor[i, n, fp]
    for (i, k, n, fp) in st.d_v:
        gt = point.g_anchor[i, k, n, fp]
        if not np.isfinite(gt):
            gt = point.e_anchor[i, n, fp]
        x[st.d_v[(i, k, n, fp)]] = point.e_anchor[i, n, fp]
        x[st.f_v[(i, k, n, fp)]] = gt
        x[st.g_v[(i, k, n, fp)]] = gt
    return x

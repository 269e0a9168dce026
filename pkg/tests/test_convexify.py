import numpy as np
import pytest

from noma_ee import conic_bridge
from noma_ee.conic_program import EXP_CONE, LINEAR, PSD_CONE
from noma_ee.convexify import (ExpansionPoint, SubproblemBuilder, anchor_vector,
                               frob_tangent_value, penalty_f, penalty_g, rank_residual,
                               surrogate_g)
from noma_ee.network import desk_config, generate_channels, generate_topology
from noma_ee.robust import RobustMode
from noma_ee.solvers import initialize


def make_scene(K=2, N=2, M=2, F=2, delta=1e-3, seed=0):
    cfg = desk_config(rng_seed=seed, num_users=K, num_subcarriers=N,
                      num_antennas=M, num_aaus=F).with_uncertainty(delta)
    topo = generate_topology(cfg)
    channels = generate_channels(cfg, topo)
    return cfg, topo, channels


def make_point(cfg, channels, seed=0):
    builder = SubproblemBuilder(channels, cfg)
    rng = np.random.default_rng(seed)
    return builder, initialize(channels, cfg, rng, builder)


# --- rank residual -----------------------------------------------------------

def test_rank_residual_rank_one():
    v = np.array([1.0 + 1j, 2.0 - 0.5j])
    assert rank_residual(np.outer(v, v.conj())) == pytest.approx(0.0, abs=1e-12)


def test_rank_residual_identity_and_diag():
    assert rank_residual(np.eye(2, dtype=complex)) == pytest.approx(1.0)
    assert rank_residual(np.diag([3.0, 1.0, 0.0]).astype(complex)) == pytest.approx(1.0)


# --- penalty surrogate -------------------------------------------------------

def test_surrogate_g_tangency_and_underestimation():
    rng = np.random.default_rng(1)
    cfg, topo, channels = make_scene()
    builder, point = make_point(cfg, channels)
    lam = 1e3
    exact = penalty_g(point.xi, point.rho, point.x, lam)
    assert surrogate_g(point.xi, point.rho, point.x, point, lam) == pytest.approx(exact, rel=1e-12)
    for _ in range(100):
        xi = np.clip(point.xi + 0.2 * rng.standard_normal(point.xi.shape), 0, 1)
        rho = np.clip(point.rho + 0.2 * rng.standard_normal(point.rho.shape), 0, 1)
        x = np.clip(point.x + 0.2 * rng.standard_normal(point.x.shape), 0, 1)
        assert surrogate_g(xi, rho, x, point, lam) <= penalty_g(xi, rho, x, lam) + 1e-9


def test_surrogate_zero_anchor_is_identically_zero():
    cfg, topo, channels = make_scene()
    builder, point = make_point(cfg, channels)
    zero = point.copy()
    zero.xi[:] = 0.0
    zero.rho[:] = 0.0
    zero.x[:] = 0.0
    rng = np.random.default_rng(2)
    probe = rng.uniform(size=point.rho.shape)
    assert surrogate_g(point.xi * 0, probe, point.x * 0, zero, 7.0) == pytest.approx(0.0, abs=1e-12)


def test_penalty_term1_zero_at_binary_anchor():
    cfg, topo, channels = make_scene()
    builder, point = make_point(cfg, channels)
    binary = point.copy()
    binary.rho = np.round(binary.rho)
    binary.xi = np.round(binary.xi)
    binary.x = binary.xi[:, :, :, None] * binary.rho[:, None, :, :]
    lam = 1e5
    f_val = penalty_f(binary.xi, binary.rho, binary.x, lam)
    g_val = surrogate_g(binary.xi, binary.rho, binary.x, binary, lam)
    assert f_val == pytest.approx(g_val, abs=1e-9)


# --- surrogate touching ------------------------------------------------------

def test_surrogates_touch_exact_values_at_anchor():
    cfg, topo, channels = make_scene(delta=0.0)
    builder, point = make_point(cfg, channels)
    problem, st = builder.build(point, q=0.1, lam=10.0, mu=1.0)
    xvec = anchor_vector(builder, st, point)
    K, N, M, F = cfg.shape
    for k, n, f in np.ndindex(K, N, F):
        phi = builder._phi_expr(st, point, f, k, n)
        psi = builder._psi_expr(st, point, f, k, n, phi)
        phi_exact = float(np.exp(point.b_anchor[k, n, f]))
        Wt = builder._wt_anchor(point, k, n, f)
        margin = float(np.real(np.trace(channels.H_lift[k, n, f] @ Wt))) / builder.noise_ref
        assert phi.value(xvec) == pytest.approx(phi_exact, rel=1e-10, abs=1e-18)
        assert psi.value(xvec) == pytest.approx(phi_exact + margin, rel=1e-10, abs=1e-18)
    for i, n, fp in np.ndindex(K, N, F):
        e_expr = builder._sic_e_expr(st, point, i, n, fp)
        assert e_expr.value(xvec) == pytest.approx(float(np.exp(point.e_anchor[i, n, fp])),
                                                   rel=1e-10, abs=1e-18)
    for (i, k) in builder.pairs:
        for n, fp in np.ndindex(N, F):
            gt = point.g_anchor[i, k, n, fp]
            if not np.isfinite(gt):
                continue   # pair excluded: printed bound is unrestrictive there
            g_expr = builder._sic_g_expr(st, point, i, k, n, fp)
            assert g_expr.value(xvec) == pytest.approx(float(np.exp(gt)),
                                                       rel=1e-10, abs=1e-18)


def test_frob_tangent_touches_and_underestimates():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    A = A @ A.conj().T
    assert frob_tangent_value(A, A) == pytest.approx(np.linalg.norm(A, "fro"), rel=1e-12)
    for _ in range(50):
        B = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        B = B @ B.conj().T
        assert frob_tangent_value(A, B) <= np.linalg.norm(B, "fro") + 1e-9


def test_anchor_is_feasible_for_its_own_subproblem():
    cfg, topo, channels = make_scene(delta=0.0)
    builder, point = make_point(cfg, channels)
    problem, st = builder.build(point, q=0.0, lam=1.0, mu=0.1)
    xvec = anchor_vector(builder, st, point)
    viol = problem.max_violation(xvec)
    assert viol[LINEAR] <= 1e-7
    assert viol[PSD_CONE] <= 1e-7
    assert viol[EXP_CONE] <= 1e-7


# --- big-M squeeze end to end -------------------------------------------------

def test_bigm_forces_unscheduled_beams_to_zero():
    cfg, topo, channels = make_scene(K=2, N=1, M=2, F=1, delta=0.0, seed=4)
    builder, point = make_point(cfg, channels)
    problem, st = builder.build(point, q=0.0, lam=1e4, mu=1.0)
    res = conic_bridge.solve(problem)
    assert res.status == conic_bridge.OPTIMAL
    for key, Wtv in st.Wt_h.items():
        k, n, f = key
        rho = res.x[st.rho_v[k, n, f]]
        Wt = Wtv.value(res.x)
        lam_max = float(np.linalg.eigvalsh(Wt)[-1])
        assert lam_max <= rho * cfg.power_budget[f] + 1e-6


# --- subproblem census (hand-derived counts for K=N=F=M=2) ---------------------

def census_formula(K, N, F, M):
    """Closed-form builder row/variable counts.

    P = K(K-1) ordered user pairs.  Scalars: rho KNF, xi PN, x PNF, a/b
    2KNF, square-slacks KN, d/f/g 3PNF, e KNF; Hermitian components M^2
    each for W/Wt (KNF) and Wp (PNF).  Linear rows: boxes 2(KNF+PN+PNF),
    reuse NF, one-AAU KN, C7-C9 3PNF, mutual exclusion N*K(K-1)/2, slack
    bounds+order 3KNF, phi tangent KNF, power F, fronthaul F, gate PN,
    SIC core+order 3PNF, E tangent KNF, G tangent PNF.  PSD blocks: W and
    the four big-M envelopes per lifted product on the embedded dimension
    2M, plus KN real 2x2 epigraph blocks.  Exp cones: rate KNF plus the
    two SIC cones 2PNF.
    """
    P = K * (K - 1)
    KNF, PN, PNF, KN = K * N * F, P * N, P * N * F, K * N
    n_vars = (KNF * (4 + 2 * M * M)) + KN + PN + PNF * (4 + M * M)
    lin = (2 * (KNF + PN + PNF) + N * F + KN + 3 * PNF + N * P // 2
           + 3 * KNF + KNF + F + F + PN + 3 * PNF + KNF + PNF)
    tri_c = (2 * M) * (2 * M + 1) // 2
    psd_rows = (KNF + 4 * KNF + 4 * PNF) * tri_c + KN * 3
    psd_blocks = KNF + 4 * KNF + 4 * PNF + KN
    exp_blocks = KNF + 2 * PNF
    return n_vars, lin, psd_rows, psd_blocks, exp_blocks


def test_subproblem_census_matches_hand_derivation():
    K = N = F = M = 2
    cfg, topo, channels = make_scene(K=K, N=N, M=M, F=F)
    builder, point = make_point(cfg, channels)
    # the formula assumes every SIC pair is active at the anchor and no
    # decoder-side bound is degenerate; make it so before counting
    point.x = np.maximum(point.x, 0.05)
    point.xi = np.maximum(point.xi, np.max(point.x, axis=3))
    for i in range(K):
        point.xi[i, i, :] = 0.0
        point.x[i, i, :, :] = 0.0
    point.b_anchor, point.e_anchor, point.g_anchor = builder.compute_anchors(point)
    assert np.all(np.isfinite(point.g_anchor[~np.eye(K, dtype=bool)]))
    problem, st = builder.build(point, q=0.0, lam=1.0, mu=1.0, check_point=False)
    assert len(st.d_v) == K * (K - 1) * N * F
    counts = problem.counts()
    n_vars, lin, psd_rows, psd_blocks, exp_blocks = census_formula(K, N, F, M)
    assert counts["vars"] == n_vars == 168
    assert counts[LINEAR] == lin == 154
    assert counts[PSD_CONE] == psd_rows == 732
    assert counts["psd_blocks"] == psd_blocks == 76
    assert counts["exp_blocks"] == exp_blocks == 24
    # growth orders: variables Theta(KNF + K^2NF), constraints Theta(K^2NFM^2)
    big = census_formula(2 * K, N, F, M)
    assert big[0] / n_vars > 2.0          # superlinear in K via the pair terms
    assert big[2] / psd_rows > 2.0


def test_infeasible_point_rejected():
    from noma_ee.convexify import InfeasiblePoint
    cfg, topo, channels = make_scene()
    builder, point = make_point(cfg, channels)
    bad = point.copy()
    bad.rho[:] = 1.0   # violates the one-AAU sum
    with pytest.raises(InfeasiblePoint):
        builder.build(bad, 0.0, 1.0, 1.0)

import numpy as np
import pytest

from noma_ee.conic_program import (Aff, ConicSubproblem, HermExpr, HermVar,
                                   ProgramBuilder, VarTable, svec, unsvec)
from noma_ee import conic_bridge


def test_svec_roundtrip():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    A = (A + A.T) / 2
    assert np.allclose(unsvec(svec(A), 4), A)


def build_lp_max_x(bound=3.0):
    table = VarTable()
    x = table.new("x")
    pb = ProgramBuilder(table)
    pb.obj = Aff.of(x)
    pb.add_leq(Aff.of(x), bound)
    return pb.assemble()


def test_lp_known_optimum():
    res = conic_bridge.solve(build_lp_max_x())
    assert res.status == conic_bridge.OPTIMAL
    assert res.objective == pytest.approx(3.0, abs=1e-7)


def test_exp_cone_boundary():
    # maximize a subject to exp(a) <= 5  ->  a = ln 5
    table = VarTable()
    a = table.new("a")
    pb = ProgramBuilder(table)
    pb.obj = Aff.of(a)
    pb.add_exp_leq(Aff.of(a), Aff(const=5.0))
    res = conic_bridge.solve(pb.assemble())
    assert res.status == conic_bridge.OPTIMAL
    assert res.objective == pytest.approx(np.log(5.0), abs=1e-7)


def test_psd_ordering():
    # minimize Tr[W] subject to W >= I_M  ->  W = I, objective M
    M = 3
    table = VarTable()
    pb = ProgramBuilder(table)
    W = HermVar(table, "W", M)
    pb.obj = W.trace().scaled(-1.0)  # maximize -Tr
    pb.add_psd(HermExpr.of(W).plus_const(-np.eye(M)))
    res = conic_bridge.solve(pb.assemble())
    assert res.status == conic_bridge.OPTIMAL
    assert -res.objective == pytest.approx(M, abs=1e-6)
    Wval = W.value(res.x)
    assert np.allclose(Wval, np.eye(M), atol=1e-5)


def test_complex_hermitian_embedding():
    # maximize Tr[HW] s.t. Tr[W] <= 1, W PSD  ->  lambda_max(H), W = u u^H
    rng = np.random.default_rng(7)
    M = 3
    G = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    H = (G + G.conj().T) / 2
    table = VarTable()
    pb = ProgramBuilder(table)
    W = HermVar(table, "W", M)
    pb.obj = W.inner(H)
    pb.add_leq(W.trace(), 1.0)
    pb.add_psd(HermExpr.of(W))
    res = conic_bridge.solve(pb.assemble())
    assert res.status == conic_bridge.OPTIMAL
    lam_max = np.linalg.eigvalsh(H)[-1]
    assert res.objective == pytest.approx(lam_max, abs=1e-6)
    Wval = W.value(res.x)
    assert np.linalg.eigvalsh(Wval).min() > -1e-7
    assert np.real(np.trace(H @ Wval)) == pytest.approx(lam_max, abs=1e-6)


def test_infeasible_lp_certificate():
    table = VarTable()
    x = table.new("x")
    pb = ProgramBuilder(table)
    pb.obj = Aff.of(x)
    pb.add_leq(Aff.of(x), 1.0)
    pb.add_geq(Aff.of(x), 2.0)
    res = conic_bridge.solve(pb.assemble())
    assert res.status == conic_bridge.INFEASIBLE
    assert res.infeasibility_certified in (True, None)


def test_serialize_roundtrip():
    # mixed cones survive a serialize/parse cycle with identical solutions
    table = VarTable()
    pb = ProgramBuilder(table)
    a = table.new("a")
    W = HermVar(table, "W", 2)
    pb.obj = Aff.of(a).add(W.trace().scaled(-1.0))
    pb.add_exp_leq(Aff.of(a), W.trace())
    pb.add_psd(HermExpr.of(W).plus_const(-0.5 * np.eye(2)))
    pb.add_leq(W.trace(), 4.0)
    original = pb.assemble(q=1.5, lam=2.0, mu=3.0)

    parsed = ConicSubproblem.parse(original.serialize())
    assert parsed.num_vars == original.num_vars
    assert parsed.q == 1.5 and parsed.lam == 2.0 and parsed.mu == 3.0

    res1 = conic_bridge.solve(original)
    res2 = conic_bridge.solve(parsed)
    assert res1.status == res2.status == conic_bridge.OPTIMAL
    assert res1.objective == pytest.approx(res2.objective, abs=1e-8)


def test_optimal_point_passes_membership_recheck():
    res = conic_bridge.solve(build_lp_max_x(), tol=1e-7)
    assert res.residuals["linear"] <= 1e-7

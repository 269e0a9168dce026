import numpy as np
import pytest

from noma_ee.robust import (AauGroup, MaxIterExceeded, SinrInstance, effective_radius,
                            exrs_sinr, maximizing_error, minimizing_error,
                            sample_error_matrices, sbrs_sinr, worst_case_interference,
                            worst_case_signal)
from noma_ee.network import sample_error


def random_psd(rng, M, scale=1.0):
    G = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    W = G @ G.conj().T
    return scale * W / M


def rank_one(rng, M, scale=1.0):
    h = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    return scale * np.outer(h, h.conj())


def test_effective_radius_formula():
    assert effective_radius(np.array([1.0 + 0j, 0.0]), 0.0) == 0.0
    h = np.array([1.0 + 0j])
    assert effective_radius(h, 1e-3) == pytest.approx(0.002001, abs=1e-12)


def test_effective_radius_bounds_lifted_error():
    # for eps in the radius-delta ball, ||h eps^H + eps h^H + eps eps^H||_F <= e
    rng = np.random.default_rng(1)
    for _ in range(100):
        M = rng.integers(1, 5)
        h = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        delta = float(rng.uniform(0, 0.5))
        e = effective_radius(h, delta)
        eps = sample_error(delta, M, rng)
        D = np.outer(h, eps.conj()) + np.outer(eps, h.conj()) + np.outer(eps, eps.conj())
        assert np.linalg.norm(D, "fro") <= e + 1e-12


def test_worst_case_signal_closed_form():
    H = np.eye(2, dtype=complex)
    W = np.eye(2, dtype=complex)
    assert worst_case_signal(H, W, 0.0) == pytest.approx(2.0)
    assert worst_case_signal(H, W, 0.5) == pytest.approx(2.0 - 0.5 * np.sqrt(2.0), abs=1e-12)


def test_worst_case_interference_closed_form():
    assert worst_case_interference(np.zeros((2, 2), dtype=complex), np.eye(2), 1.0) \
        == pytest.approx(np.sqrt(2.0), abs=1e-12)
    H = np.diag([2.0, 1.0]).astype(complex)
    W = np.diag([1.0, 3.0]).astype(complex)
    assert worst_case_interference(H, W, 0.0) == pytest.approx(5.0)


def test_proposition1_sampling_oracle():
    rng = np.random.default_rng(2)
    M = 3
    H = rank_one(rng, M)
    W = random_psd(rng, M)
    e = 0.3
    lo = worst_case_signal(H, W, e)
    hi = worst_case_interference(H, W, e)
    Ds = sample_error_matrices(e, M, 100_000, rng)
    vals = np.real(np.einsum("nij,ji->n", H[None] + Ds, W))
    assert vals.min() >= lo - 1e-9
    assert vals.max() <= hi + 1e-9
    # the closed-form extremes are attained by the stated ball points
    at_min = np.real(np.trace((H + minimizing_error(W, e)) @ W))
    at_max = np.real(np.trace((H + maximizing_error(W, e)) @ W))
    assert at_min == pytest.approx(lo, abs=1e-9)
    assert at_max == pytest.approx(hi, abs=1e-9)


def test_stationarity_minimizer_beats_random_points():
    rng = np.random.default_rng(3)
    M = 2
    H = rank_one(rng, M)
    W = random_psd(rng, M)
    e = 0.7
    best = worst_case_signal(H, W, e)
    Ds = sample_error_matrices(e, M, 100_000, rng)
    vals = np.real(np.einsum("nij,ji->n", H[None] + Ds, W))
    assert best <= vals.min() + 1e-12
    # Lagrangian stationarity: W - (||W||/e) * (e W / ||W||) = 0 exactly
    Dmin = minimizing_error(W, e)
    residual = W + (np.linalg.norm(W, "fro") / e) * Dmin
    assert np.linalg.norm(residual, "fro") == pytest.approx(0.0, abs=1e-12)


def _instance(rng, M=2, n_aaus=2, n_interf=2, e_scale=0.2):
    # e is scaled so that the worst-case numerator stays positive and the
    # denominator stays positive over the whole ball (well-posed instances)
    groups = []
    for f in range(n_aaus):
        H = rank_one(rng, M)
        sig = random_psd(rng, M) if f == 0 else None
        interf = tuple(random_psd(rng, M) for _ in range(n_interf))
        caps = []
        if sig is not None:
            caps.append(np.real(np.trace(H @ sig)) / np.linalg.norm(sig, "fro"))
        total_interf = sum(interf, np.zeros((M, M), dtype=complex))
        if n_interf:
            caps.append(np.real(np.trace(H @ total_interf)) / np.linalg.norm(total_interf, "fro"))
        e = e_scale * min(caps)
        groups.append(AauGroup(H=H, e=float(e), signal_W=sig, interferer_Ws=interf))
    return SinrInstance(groups=tuple(groups), sigma2=0.1)


def test_exrs_matches_nominal_when_e_zero():
    rng = np.random.default_rng(4)
    inst = _instance(rng, e_scale=0.0)
    assert exrs_sinr(inst) == pytest.approx(inst.nominal(), abs=1e-8)


def test_exrs_single_link_equals_sbrs():
    rng = np.random.default_rng(5)
    H = rank_one(rng, 3)
    W = random_psd(rng, 3)
    e = 0.1 * np.real(np.trace(H @ W)) / np.linalg.norm(W, "fro")
    inst = SinrInstance(groups=(AauGroup(H=H, e=float(e), signal_W=W),), sigma2=0.3)
    assert exrs_sinr(inst) == pytest.approx(sbrs_sinr(inst), abs=1e-8)


def test_exrs_sandwich_and_monotone_nu():
    rng = np.random.default_rng(6)
    for _ in range(20):
        inst = _instance(rng, M=int(rng.integers(1, 4)),
                         n_aaus=int(rng.integers(1, 3)), n_interf=int(rng.integers(1, 3)))
        lo = sbrs_sinr(inst)
        exact = exrs_sinr(inst)
        nominal = inst.nominal()
        assert lo <= exact + 1e-8
        assert exact <= nominal + 1e-8
        # sampling oracle: exact is below every sampled joint realization
        best = np.inf
        for _ in range(2000):
            deltas = [sample_error_matrices(g.e, g.H.shape[0], 1, rng)[0] for g in inst.groups]
            num, den = 0.0, inst.sigma2
            for g, D in zip(inst.groups, deltas):
                Heff = g.H + D
                if g.signal_W is not None:
                    num += np.real(np.trace(Heff @ g.signal_W))
                for W in g.interferer_Ws:
                    den += np.real(np.trace(Heff @ W))
            best = min(best, num / den)
        assert exact <= best + 1e-6
        assert lo <= best + 1e-6


def test_exrs_best_case_at_least_worst_case():
    rng = np.random.default_rng(7)
    inst = _instance(rng)
    worst = exrs_sinr(inst)
    best = exrs_sinr(inst, best_case=True)
    assert best >= worst - 1e-10
    assert best >= inst.nominal() - 1e-10


def test_exrs_iteration_cap():
    rng = np.random.default_rng(8)
    inst = _instance(rng)
    with pytest.raises(MaxIterExceeded):
        exrs_sinr(inst, tol=0.0, max_iter=1)


def test_sbrs_numerator_clamp():
    H = 1e-6 * np.eye(2, dtype=complex)
    W = np.eye(2, dtype=complex)
    inst = SinrInstance(groups=(AauGroup(H=H, e=1.0, signal_W=W),), sigma2=1.0)
    assert sbrs_sinr(inst) == 0.0


def test_sbrs_monotone_in_e():
    rng = np.random.default_rng(9)
    H = rank_one(rng, 2)
    W = random_psd(rng, 2)
    Hi = rank_one(rng, 2)
    Wi = random_psd(rng, 2)
    vals = []
    for e in [0.0, 0.05, 0.1, 0.2]:
        inst = SinrInstance(groups=(AauGroup(H=H, e=e, signal_W=W),
                                    AauGroup(H=Hi, e=e, interferer_Ws=(Wi,))),
                            sigma2=0.2)
        vals.append(sbrs_sinr(inst))
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

"""Worst-case bounds over the bounded channel-error ball.

All robustness here lives in the lifted domain: for W = w w^dagger and
H = h_est h_est^dagger, the received power is Tr[(H + D) W] where the
error matrix D = h eps^dagger + eps h^dagger + eps eps^dagger satisfies
||D||_F <= e = delta^2 + 2 delta ||h_est||.  Two evaluations are offered:

* SBRS: closed-form per-term bounds (minimize the signal trace, maximize
  every interference trace independently) -- conservative but cheap.
* ExRS: the exact worst case of the full SINR ratio over the joint ball,
  found by an inner Dinkelbach loop whose parametric subproblem has a
  closed-form minimizer per AAU block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class RobustMode(Enum):
    NOMINAL = "nominal"
    SBRS = "sbrs"
    EXRS = "exrs"


class MaxIterExceeded(RuntimeError):
    """The inner Dinkelbach loop failed to converge within the iteration cap."""


def effective_radius(h_est: np.ndarray, delta) -> np.ndarray:
    """Frobenius radius of the lifted error matrix: delta^2 + 2*delta*||h_est||.

    Works elementwise over leading axes; the last axis is the antenna axis.
    """
    norms = np.linalg.norm(h_est, axis=-1)
    delta = np.asarray(delta, dtype=float)
    return delta ** 2 + 2.0 * delta * norms


def worst_case_signal(H_est: np.ndarray, W: np.ndarray, e: float) -> float:
    """min over ||D||_F <= e of Tr[(H_est + D) W] = Tr[H_est W] - e ||W||_F."""
    return float(np.real(np.trace(H_est @ W))) - e * float(np.linalg.norm(W, "fro"))


def worst_case_interference(H_est: np.ndarray, W: np.ndarray, e: float) -> float:
    """max over ||D||_F <= e of Tr[(H_est + D) W] = Tr[H_est W] + e ||W||_F."""
    return float(np.real(np.trace(H_est @ W))) + e * float(np.linalg.norm(W, "fro"))


def minimizing_error(W: np.ndarray, e: float) -> np.ndarray:
    """The ball point attaining the signal minimum: D = -e W / ||W||_F."""
    nrm = np.linalg.norm(W, "fro")
    if nrm < 1e-300:
        return np.zeros_like(W)
    return -e * W / nrm


def maximizing_error(W: np.ndarray, e: float) -> np.ndarray:
    return -minimizing_error(W, e)


@dataclass(frozen=True)
class AauGroup:
    """One AAU's contribution to a single SINR evaluation.

    The same error matrix D (radius ``e``) perturbs every term that flows
    through this AAU's channel: the signal trace if ``signal_W`` is set,
    and each interference trace in ``interferer_Ws``.
    """

    H: np.ndarray
    e: float
    signal_W: np.ndarray | None = None
    interferer_Ws: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class SinrInstance:
    groups: tuple[AauGroup, ...]
    sigma2: float

    def nominal(self) -> float:
        num = 0.0
        den = self.sigma2
        for g in self.groups:
            if g.signal_W is not None:
                num += float(np.real(np.trace(g.H @ g.signal_W)))
            for W in g.interferer_Ws:
                den += float(np.real(np.trace(g.H @ W)))
        return num / den


def sbrs_sinr(inst: SinrInstance) -> float:
    """Strictly bounded robust SINR: per-term worst cases, numerator clamped at 0."""
    num = 0.0
    den = inst.sigma2
    for g in inst.groups:
        if g.signal_W is not None:
            num += worst_case_signal(g.H, g.signal_W, g.e)
        for W in g.interferer_Ws:
            den += worst_case_interference(g.H, W, g.e)
    return max(0.0, num) / den


def _ratio_at(inst: SinrInstance, deltas: list[np.ndarray]) -> tuple[float, float]:
    num = 0.0
    den = inst.sigma2
    for g, D in zip(inst.groups, deltas):
        Heff = g.H + D
        if g.signal_W is not None:
            num += float(np.real(np.trace(Heff @ g.signal_W)))
        for W in g.interferer_Ws:
            den += float(np.real(np.trace(Heff @ W)))
    return num, den


def exrs_sinr(inst: SinrInstance, tol: float = 1e-8, max_iter: int = 100,
              best_case: bool = False, return_errors: bool = False):
    """Exact worst-case (or best-case) SINR over the joint error balls.

    Dinkelbach on the ratio: for a fixed parameter nu the objective
    num(D) - nu*den(D) is linear in each AAU block, so the constrained
    minimizer is D_f = -e_f A_f / ||A_f||_F with
    A_f = signal_W - nu * sum(interferer_Ws); nu is then refreshed to the
    achieved ratio until |num - nu*den| <= tol.  ``best_case=True`` flips
    every sign and returns the maximum.
    """
    sign = -1.0 if best_case else 1.0
    deltas = [np.zeros_like(g.H) for g in inst.groups]
    # Dinkelbach needs the denominator positive over the whole ball; when the
    # lifted uncertainty is large enough to drive it to zero the worst-case
    # SINR degenerates and the rate-clamped value 0 is returned instead.
    den_floor = inst.sigma2
    for g in inst.groups:
        S = sum(g.interferer_Ws, np.zeros_like(g.H))
        den_floor += float(np.real(np.trace(g.H @ S))) - g.e * float(np.linalg.norm(S, "fro"))
    if den_floor <= 0.0:
        value = np.inf if best_case else 0.0
        return (value, deltas) if return_errors else value
    nu = inst.nominal()
    for _ in range(max_iter):
        for j, g in enumerate(inst.groups):
            A = np.zeros_like(g.H)
            if g.signal_W is not None:
                A = A + g.signal_W
            for W in g.interferer_Ws:
                A = A - nu * W
            nrm = np.linalg.norm(A, "fro")
            if nrm < 1e-300 or g.e == 0.0:
                deltas[j] = np.zeros_like(g.H)
            else:
                deltas[j] = -sign * g.e * A / nrm
        num, den = _ratio_at(inst, deltas)
        gap = num - nu * den
        if abs(gap) <= tol * max(1.0, abs(den)):
            result = num / den
            return (result, deltas) if return_errors else result
        nu = num / den
    raise MaxIterExceeded(f"inner Dinkelbach did not reach tol={tol} in {max_iter} iterations")


def sample_error_matrix(e: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Hermitian sample from the Frobenius ball of radius e."""
    if e == 0.0:
        return np.zeros((dim, dim), dtype=complex)
    G = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    D = (G + G.conj().T) / 2.0
    D /= np.linalg.norm(D, "fro")
    radius = e * rng.uniform() ** (1.0 / dim ** 2)
    return radius * D


def sample_error_matrices(e: float, dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized batch version of sample_error_matrix, shape (count, dim, dim)."""
    if e == 0.0:
        return np.zeros((count, dim, dim), dtype=complex)
    G = rng.standard_normal((count, dim, dim)) + 1j * rng.standard_normal((count, dim, dim))
    D = (G + np.conj(np.swapaxes(G, 1, 2))) / 2.0
    nrm = np.linalg.norm(D, axis=(1, 2)).reshape(-1, 1, 1)
    radii = (e * rng.uniform(size=count) ** (1.0 / dim ** 2)).reshape(-1, 1, 1)
    return radii * D / nrm

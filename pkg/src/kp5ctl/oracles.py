"""Independent dense reference computations used to cross-check the fast paths.

Everything here trades speed for transparency: explicit DFT matrices instead
of FFTs, Toeplitz matrices instead of shifted slices, adaptive ODE solvers
and quadrature instead of cached exponentials, exact rationals instead of
floats.  A budget guards against accidental use at production sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.integrate
import scipy.linalg

from .operators import DampingProfile, ModelParams, WeightProfile
from .spectral import GridSpec

__all__ = [
    "OracleBudget",
    "DEFAULT_BUDGET",
    "dft_synthesis",
    "dense_G",
    "dense_generator",
    "dense_flow",
    "dense_gramian",
    "dense_min_norm_control",
    "dense_convolution",
    "dense_nonlinearity",
    "dense_weighted_terms",
    "exact_resonant_pairs",
    "free_mode_solution",
]


@dataclass(frozen=True)
class OracleBudget:
    """Largest matrix dimension an oracle may build and the default tolerance."""

    max_dim: int = 256
    tol: float = 1e-12

    def check(self, n: int) -> None:
        if n > self.max_dim:
            raise ValueError(f"oracle dimension {n} exceeds budget {self.max_dim}")


DEFAULT_BUDGET = OracleBudget()


def _full_ks(K: int) -> np.ndarray:
    return np.arange(-K, K + 1)


def dft_synthesis(K: int) -> np.ndarray:
    """``S[l, k] = exp(i k x_l)`` on the ``2K + 1`` point grid, modes ``-K..K``."""
    n = 2 * K + 1
    x = 2 * math.pi * np.arange(n) / n
    return np.exp(1j * np.outer(x, _full_ks(K)))


def dense_G(g: DampingProfile, nonzero: bool = False,
            budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """Matrix of ``G`` on modes ``-K..K`` built from explicit DFT matrices.

    ``G = S^{-1} diag(g) (I - (2 pi / n) 1 g^T) S``; with ``nonzero`` the
    ``k = 0`` row and column are dropped.
    """
    K = g.K
    n = 2 * K + 1
    budget.check(n)
    S = dft_synthesis(K)
    gs = g.samples
    phys = np.diag(gs) @ (np.eye(n) - (2 * math.pi / n) * np.outer(np.ones(n), gs))
    G = (S.conj().T / n) @ phys @ S
    if nonzero:
        keep = _full_ks(K) != 0
        G = G[np.ix_(keep, keep)]
    return G


def dense_generator(params: ModelParams, g: DampingProfile | None, eta: float, K: int,
                    budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """Closed-loop generator on nonzero modes from the dense ``G``."""
    budget.check(2 * K)
    k = np.array([m for m in _full_ks(K) if m != 0], dtype=float)
    sym = params.epsilon * np.abs(k) ** 5 + 1j * params.beta * k**5 + 1j * params.gamma * eta**2 / k
    A = -np.diag(sym)
    if g is not None:
        G = dense_G(g, nonzero=True, budget=budget)
        A = A - G @ np.diag(np.abs(k) ** 5) @ G
    return A


def dense_flow(A: np.ndarray, v0: np.ndarray, T: float, tol: float | None = None,
               budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """``exp(TA) v0`` by an adaptive Dormand-Prince 8(5,3) integration."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    budget.check(A.shape[0])
    tol = budget.tol if tol is None else tol
    sol = scipy.integrate.solve_ivp(lambda _, y: A @ y, (0.0, T),
                                    np.atleast_1d(np.asarray(v0, dtype=complex)),
                                    method="DOP853", rtol=tol, atol=tol * 1e-2)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


def dense_gramian(A: np.ndarray, C: np.ndarray, T: float, tol: float | None = None,
                  budget: OracleBudget = DEFAULT_BUDGET) -> np.ndarray:
    """``int_0^T exp(A* t) C* C exp(A t) dt`` by adaptive vector quadrature."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    C = np.atleast_2d(np.asarray(C, dtype=complex))
    budget.check(A.shape[0])
    epsrel = budget.tol if tol is None else tol
    Q = C.conj().T @ C

    def f(t):
        E = scipy.linalg.expm(t * A)
        return E.conj().T @ Q @ E

    val, _ = scipy.integrate.quad_vec(f, 0.0, T, epsabs=0.0, epsrel=epsrel)
    return val


def dense_min_norm_control(A: np.ndarray, B: np.ndarray, u0: np.ndarray, u1: np.ndarray,
                           T: float, steps: int = 256,
                           budget: OracleBudget = DEFAULT_BUDGET) -> tuple[float, np.ndarray]:
    """Minimum ``int ||h||^2 dt`` over piecewise-constant ``h`` steering ``u0`` to ``u1``.

    The target is ``u1 - exp(TA) u0``.  Builds the reachability matrix ``R = [R_0 ... R_{N-1}]`` with
    ``R_n = int_{t_n}^{t_{n+1}} exp(A (T - t)) B dt`` and solves the
    weighted minimum-norm problem ``R h = target``, ``min dt ||h||^2``.
    Returns ``(cost, h)`` with ``h`` of shape ``(nsteps, B.shape[1])``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    n, m = B.shape
    budget.check(n)
    nsteps = steps
    dt = T / nsteps
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    big[:n, :n] = dt * A
    big[:n, n:] = np.eye(n)
    ex = scipy.linalg.expm(big)
    E, phi1 = ex[:n, :n], ex[:n, n:]
    step_input = dt * phi1 @ B
    blocks = []
    Ep = np.eye(n, dtype=complex)
    for _ in range(nsteps):
        blocks.append(Ep @ step_input)
        Ep = E @ Ep
    R = np.hstack(blocks[::-1])
    target = np.atleast_1d(np.asarray(u1, dtype=complex)) - Ep @ np.atleast_1d(
        np.asarray(u0, dtype=complex))
    # min dt |h|^2 subject to R h = target gives h = R^H (R R^H)^{-1} target
    RR = R @ R.conj().T
    if np.linalg.matrix_rank(RR, tol=1e-13 * np.abs(RR).max()) < n:
        raise np.linalg.LinAlgError("reachability matrix is rank deficient")
    y = np.linalg.solve(RR, target)
    h = R.conj().T @ y
    cost = float(dt * np.vdot(h, h).real)
    return cost, h.reshape(nsteps, m)


def dense_convolution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full 2-D convolution of centred coefficient arrays (no truncation).

    Inputs of shape ``(2K+1, m)`` with column ``j + c0``; output of shape
    ``(4K+1, 2m-1)`` with row ``k + 2K`` and column ``j + 2 c0``.
    """
    n1, m1 = a.shape
    out = np.zeros((2 * n1 - 1, 2 * m1 - 1), dtype=complex)
    for r in range(n1):
        for c in range(m1):
            if a[r, c] != 0:
                out[r:r + n1, c:c + m1] += a[r, c] * b
    return out


def dense_nonlinearity(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(u^2)_x / 2`` by direct convolution, dealiasing and the k = 0 projection.

    The ``j = -M/2`` column stands for the real cosine ``cos(M y pi / Ly)``, so
    it is split evenly between ``j = -M/2`` and ``j = +M/2`` before convolving.
    """
    K, M = grid.K, grid.M
    lifted = np.zeros((c.shape[0], M + 1), dtype=complex)
    lifted[:, :M] = c
    lifted[:, 0] = 0.5 * c[:, 0]
    lifted[:, M] = 0.5 * c[:, 0]
    full = dense_convolution(lifted, lifted)
    # lifted column j + M/2 (j = -M/2..M/2); full column j + M.
    band = full[K:3 * K + 1, M // 2:M // 2 + M]
    k = grid.ks.astype(float)[:, None]
    j = grid.js[None, :]
    keep = (np.abs(k) <= grid.dealias_fraction * K + 1e-12) & \
        (np.abs(j) <= grid.dealias_fraction * M / 2 + 1e-12)
    out = np.where(keep, 0.5j * k * band, 0.0)
    out[K] = 0.0
    return out


def _toeplitz(psi: WeightProfile, K: int) -> np.ndarray:
    ks = _full_ks(K)
    T = np.zeros((ks.size, ks.size), dtype=complex)
    for r, kr in enumerate(ks):
        for c, kc in enumerate(ks):
            d = kr - kc
            if abs(d) <= psi.P:
                T[r, c] = psi.coeffs[d + psi.P]
    return T


def dense_weighted_terms(coeffs: np.ndarray, grid: GridSpec, params: ModelParams,
                         g: DampingProfile | None, psi: WeightProfile, s: float,
                         budget: OracleBudget = DEFAULT_BUDGET) -> dict[str, float]:
    """Rate terms of the weighted identity as dense quadratic forms ``Re w^H Q w``.

    Same term names and conventions as :func:`kp5ctl.stability.weighted_terms`,
    for a single state ``w`` of shape ``(2K+1, M)``.
    """
    K = grid.K
    budget.check(2 * K + 1)
    beta, gamma, eps = params.beta, params.gamma, params.epsilon
    k = _full_ks(K).astype(float)
    ak = np.abs(k)
    Ds = np.diag(np.where(ak > 0, ak, 1.0) ** s * (ak > 0))
    Dms = np.diag(np.where(ak > 0, ak, 1.0) ** (-s) * (ak > 0))
    D52 = np.diag(ak**2.5)
    D5 = np.diag(ak**5)
    D1 = np.diag(1j * k)
    D2 = np.diag(-(k**2))
    Psi = _toeplitz(psi, K)
    P1 = _toeplitz(psi.derivative(1), K)
    P3 = _toeplitz(psi.derivative(3), K)
    P5 = _toeplitz(psi.derivative(5), K)
    fixed = {
        "dispersion_d2": -2.5 * beta * D2.conj().T @ P1 @ D2,
        "dispersion_d1": 2.5 * beta * D1.conj().T @ P3 @ D1,
        "dispersion_d0": -0.5 * beta * P5,
        "viscous": eps * D52 @ Psi @ D52,
        "viscous_commutator": eps * D52 @ (D52 @ Psi - Psi @ D52),
    }
    if g is not None:
        G = dense_G(g.for_K(K), budget=budget)
        comm = Ds @ G - G @ Ds
        Es = G @ D5 @ comm @ Dms + comm @ D5 @ G @ Dms
        fixed["feedback"] = (D52 @ G).conj().T @ (D52 @ G @ Psi)
        fixed["commutator_Es"] = Psi.conj().T @ Es
    else:
        fixed["feedback"] = np.zeros_like(Psi)
        fixed["commutator_Es"] = np.zeros_like(Psi)
    inv = np.zeros(k.shape, dtype=complex)
    inv[k != 0] = 1.0 / (1j * k[k != 0])
    out = {name: 0.0 for name in ("dispersion_d2", "dispersion_d1", "dispersion_d0", "transverse",
                                  "feedback", "viscous", "viscous_commutator", "commutator_Es")}
    for col, eta in enumerate(grid.etas):
        w = coeffs[:, col]
        L = np.diag(gamma * (-(eta**2)) * inv)
        Qt = -0.5 * (L @ Psi - Psi @ L)
        for name, Q in fixed.items():
            out[name] += float(np.vdot(w, Q @ w).real)
        out["transverse"] += float(np.vdot(w, Qt @ w).real)
    return {name: grid.parseval_weight * v for name, v in out.items()}


def exact_resonant_pairs(beta, gamma, eta2, K: int) -> list[tuple[int, int]]:
    """All pairs ``k < m`` in ``{-K..K} \\ {0}`` with equal frequency, in exact rationals."""
    b, c, e2 = Fraction(str(beta)), Fraction(str(gamma)), Fraction(str(eta2))
    ks = [k for k in range(-K, K + 1) if k != 0]
    om = {k: b * k**5 + c * e2 / k for k in ks}
    return [(k, m) for i, k in enumerate(ks) for m in ks[i + 1:] if om[k] == om[m]]


def free_mode_solution(params: ModelParams, k: int, eta: float, t: float,
                       amplitude: complex = 1.0) -> complex:
    """Coefficient of the mode ``(k, eta)`` under the free flow: ``a exp(-i omega t - eps |k|^5 t)``."""
    omega = params.beta * k**5 + params.gamma * eta**2 / k
    return amplitude * complex(np.exp(-1j * omega * t - params.epsilon * abs(k) ** 5 * t))

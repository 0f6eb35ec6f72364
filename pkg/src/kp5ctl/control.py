"""Exact steering by the Hilbert Uniqueness Method, linear and nonlinear.

The control enters as ``B h`` with ``B = G D_x^{5/2}``; the HUM control is
``h(t) = B* w(t)`` where ``w`` solves the adjoint flow backward from ``w_T``.
On a step of length ``dt`` the contribution of such a control to the state is
``P_dt w(t_{n+1})`` with the exact step Gramian

    P_dt = int_0^dt exp(A s) B B* exp(A* s) ds,

so the discrete HUM operator equals the controllability Gramian on ``[0, T]``
exactly, and is Hermitian per ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linear_flow import (Propagator, _unique_map, from_stack, generator_stack, matvec,
                          to_stack)
from .nonlinear_flow import ETDStepper, _nonlinear_coeffs
from .norms import xs_norm_sq_array, z_norm_arrays
from .operators import DampingProfile, ModelParams, g_matrix
from .spectral import GridSpec, SpectralField, Trajectory, hermitian_symmetrize

__all__ = [
    "CGStagnationError",
    "ContractionError",
    "HUMProblem",
    "HUMResult",
    "HUMOperator",
    "apply_Lambda",
    "conjugate_gradient",
    "solve_linear_hum",
    "solve_nonlinear_hum",
]


class CGStagnationError(RuntimeError):
    """CG did not reach the tolerance; ``history`` holds the residual norms."""

    def __init__(self, history: list[float]):
        super().__init__(f"conjugate gradient stagnated after {len(history) - 1} iterations "
                         f"(residual {history[-1]:.3e})")
        self.history = history


class ContractionError(RuntimeError):
    """The nonlinear fixed-point iteration left its contraction regime."""


@dataclass
class HUMProblem:
    """Steer ``u0`` to ``u1`` in time ``T`` with controls supported where ``g > 0``."""

    params: ModelParams
    g: DampingProfile
    u0: SpectralField
    u1: SpectralField
    T: float = 1.0
    s: float = 2.5
    cg_tol: float = 1e-10
    cg_maxit: int = 200
    nonlinear: bool = False
    dt: float = 1.0 / 256
    outer_tol: float | None = None
    outer_maxit: int = 8

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")
        if self.u0.grid != self.u1.grid:
            raise ValueError("u0 and u1 live on different grids")
        if not (self.u0.is_mean_zero() and self.u1.is_mean_zero()):
            raise ValueError("data must be mean-zero")


@dataclass
class HUMResult:
    """Control samples ``q(t_n) = B* w(t_n)``, final state and diagnostics.

    ``cost`` is ``||q||_{L2(0,T; X_s)}`` (trapezoid on the samples);
    ``cost_L2`` is the exact ``||q||_{L2(0,T; L2)}``.
    """

    q: Trajectory
    w_T: SpectralField
    final_state: SpectralField
    terminal_error: float
    cost: float
    cost_L2: float
    cg_iters: int
    outer_iters: int = 0
    cg_history: list[float] = field(default_factory=list)
    energy_history: list[float] = field(default_factory=list)
    outer_history: list[float] = field(default_factory=list)
    verified_terminal_error: float = float("nan")

    def to_dict(self) -> dict:
        return {"terminal_error": self.terminal_error, "cost": self.cost, "cost_L2": self.cost_L2,
                "cg_iters": self.cg_iters, "outer_iters": self.outer_iters,
                "cg_history": self.cg_history, "outer_history": self.outer_history,
                "verified_terminal_error": self.verified_terminal_error}


def _step_gramian(A: np.ndarray, Q: np.ndarray, h: float) -> np.ndarray:
    from .stability import _gramian_exact

    P = _gramian_exact(A.conj().T, Q, h)
    return 0.5 * (P + P.conj().T)


_OPERATORS: dict = {}


@dataclass(eq=False)
class HUMOperator:
    """Adjoint/forward machinery for ``Lambda`` on a grid."""

    grid: GridSpec
    params: ModelParams
    g: DampingProfile
    T: float
    dt: float

    def __post_init__(self):
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("dt must divide T")
        self.nsteps = n
        self.prop = Propagator.build(self.grid, self.params, self.g, self.dt)
        self.E = self.prop.E
        self.EH = np.ascontiguousarray(np.swapaxes(self.E, -1, -2).conj())
        gK = self.g.for_K(self.grid.K)
        ks = np.abs(self.grid.nonzero_ks).astype(float)
        Bs = (ks**2.5)[:, None] * g_matrix(gK)
        self.Bstar = Bs
        Q = Bs.conj().T @ Bs
        A = generator_stack(self.params, self.g, self.grid)
        first, inv = _unique_map(self.grid)
        self.P = np.array([_step_gramian(A[j], Q, self.dt) for j in first])[inv]
        self.weight = self.grid.parseval_weight

    @classmethod
    def get(cls, grid, params, g, T, dt) -> "HUMOperator":
        key = (grid, params, g.key, float(T), float(dt))
        op = _OPERATORS.get(key)
        if op is None:
            if len(_OPERATORS) > 8:
                _OPERATORS.clear()
            op = _OPERATORS[key] = cls(grid, params, g, float(T), float(dt))
        return op

    def adjoint_path(self, wT: np.ndarray) -> np.ndarray:
        """Stacks ``w(t_n)``, ``n = 0..N``, from ``w(T) = wT`` backward."""
        out = np.empty((self.nsteps + 1,) + wT.shape, dtype=complex)
        out[-1] = wT
        for n in range(self.nsteps - 1, -1, -1):
            out[n] = matvec(self.EH, out[n + 1])
        return out

    def control_increments(self, wpath: np.ndarray) -> np.ndarray:
        """``P_dt w(t_{n+1})`` for ``n = 0..N-1``."""
        return np.matmul(self.P[None], wpath[1:, ..., None])[..., 0]

    def forward(self, v0: np.ndarray, incs: np.ndarray) -> np.ndarray:
        v = v0
        for n in range(self.nsteps):
            v = matvec(self.E, v) + incs[n]
        return v

    def apply(self, wT: np.ndarray) -> np.ndarray:
        """``Lambda wT`` on a stack."""
        wpath = self.adjoint_path(wT)
        return self.forward(np.zeros_like(wT), self.control_increments(wpath))

    def ip(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.weight * float(np.sum((a.conj() * b).real))

    def cost_L2(self, wpath: np.ndarray) -> float:
        """Exact ``int_0^T ||B* w||^2 dt`` from the step Gramians."""
        pw = self.control_increments(wpath)
        return self.weight * float(np.sum((wpath[1:].conj() * pw).real))

    def controls(self, wpath: np.ndarray) -> np.ndarray:
        """Samples ``q(t_n) = B* w(t_n)`` as coefficient arrays."""
        return from_stack(np.matmul(self.Bstar, wpath[..., None])[..., 0])


def apply_Lambda(params: ModelParams, g: DampingProfile, T: float, w_T: SpectralField,
                 dt: float = 1.0 / 256) -> SpectralField:
    """HUM operator: adjoint backward from ``w_T``, control ``B B* w``, forward from 0."""
    op = HUMOperator.get(w_T.grid, params, g, T, dt)
    out = from_stack(op.apply(to_stack(w_T.coeffs)))
    return w_T.with_coeffs(hermitian_symmetrize(out) if w_T.real else out)


def conjugate_gradient(apply, b: np.ndarray, ip, tol: float, maxit: int):
    """CG for a Hermitian positive operator under the real inner product ``ip``.

    Returns ``(x, residual_history, energy_history)``; the energy
    ``1/2 <x, Ax> - <b, x> = -1/2 <x, b + r>`` is nonincreasing in exact
    arithmetic.  Raises :class:`CGStagnationError` past ``maxit``.
    """
    x = np.zeros_like(b)
    bn = math.sqrt(ip(b, b))
    hist, energy = [bn], [0.0]
    if bn == 0:
        return x, hist, energy
    r = b.copy()
    p = r.copy()
    rr = ip(r, r)
    for _ in range(maxit):
        Ap = apply(p)
        alpha = rr / ip(p, Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = ip(r, r)
        hist.append(math.sqrt(rr_new))
        energy.append(-0.5 * ip(x, b + r))
        if math.sqrt(rr_new) <= tol * bn:
            return x, hist, energy
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise CGStagnationError(hist)


def _xs(c: np.ndarray, grid: GridSpec, s: float) -> float:
    return math.sqrt(xs_norm_sq_array(c, grid, s))


def _relative_error(final: np.ndarray, target: np.ndarray, scale: float, grid, s) -> float:
    err = _xs(final - target, grid, s)
    return err / scale if scale > 0 else err


def _finish_result(op: HUMOperator, prob: HUMProblem, wT: np.ndarray, final: np.ndarray,
                   hist, energy, outer_iters=0, outer_hist=None) -> HUMResult:
    grid = prob.u0.grid
    wpath = op.adjoint_path(wT)
    qs = op.controls(wpath)
    real = prob.u0.real and prob.u1.real
    if real:
        qs = hermitian_symmetrize(qs)
        final = hermitian_symmetrize(final)
    times = prob.dt * np.arange(op.nsteps + 1)
    q = Trajectory(grid, times, qs, real)
    cost = math.sqrt(float(np.trapezoid(xs_norm_sq_array(qs, grid, prob.s), times)))
    scale = max(_xs(prob.u1.coeffs, grid, prob.s), _xs(prob.u0.coeffs, grid, prob.s))
    err = _relative_error(final, prob.u1.coeffs, scale, grid, prob.s)
    wc = from_stack(wT)
    return HUMResult(q, prob.u0.with_coeffs(hermitian_symmetrize(wc) if real else wc),
                     prob.u0.with_coeffs(final), err, cost, math.sqrt(max(op.cost_L2(wpath), 0.0)),
                     len(hist) - 1, outer_iters, hist, energy, outer_hist or [])


def solve_linear_hum(prob: HUMProblem) -> HUMResult:
    """Linear exact steering: ``Lambda w_T = u1 - S(T) u0`` by CG, ``q = B* w``."""
    if prob.nonlinear:
        raise ValueError("use solve_nonlinear_hum for nonlinear problems")
    grid = prob.u0.grid
    op = HUMOperator.get(grid, prob.params, prob.g, prob.T, prob.dt)
    v0 = to_stack(prob.u0.coeffs)
    free = v0
    for _ in range(op.nsteps):
        free = matvec(op.E, free)
    target = to_stack(prob.u1.coeffs) - free
    wT, hist, energy = conjugate_gradient(op.apply, target, op.ip, prob.cg_tol, prob.cg_maxit)
    final = from_stack(op.forward(v0, op.control_increments(op.adjoint_path(wT))))
    return _finish_result(op, prob, wT, final, hist, energy)


def _nonlinear_forcing(states: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Samples of ``-u u_x`` along stored coefficient arrays."""
    return np.array([-_nonlinear_coeffs(c, grid) for c in states])


def solve_nonlinear_hum(prob: HUMProblem) -> HUMResult:
    """Fixed-point steering for the nonlinear equation.

    Each outer iteration freezes ``f = -u u_x`` along the current iterate,
    forms ``g_u = u1 - S(T) u0 - int S(T - t) f dt``, solves
    ``Lambda w_T = g_u`` and recomputes the trajectory of the linear
    equation with forcing ``f`` and the HUM control.  The iteration stops
    when successive trajectories agree to ``outer_tol`` relative in
    ``Z^{s,T}``; the returned terminal error comes from a genuine nonlinear
    ETDRK2 solve driven by the final control.
    """
    if not prob.nonlinear:
        raise ValueError("use solve_linear_hum for linear problems")
    if prob.s <= 2:
        raise ValueError("the nonlinear problem needs s > 2")
    grid = prob.u0.grid
    if not (prob.u0.real and prob.u1.real):
        raise ValueError("the nonlinear problem needs real data")
    op = HUMOperator.get(grid, prob.params, prob.g, prob.T, prob.dt)
    _, p1, p2 = op.prop.phis(2)
    dt, N = prob.dt, op.nsteps
    times = dt * np.arange(N + 1)
    v0 = to_stack(prob.u0.coeffs)
    u1 = to_stack(prob.u1.coeffs)
    outer_tol = prob.cg_tol if prob.outer_tol is None else prob.outer_tol

    def run(F: np.ndarray | None, incs: np.ndarray | None) -> np.ndarray:
        out = np.empty((N + 1,) + v0.shape, dtype=complex)
        out[0] = v0
        for n in range(N):
            x = matvec(op.E, out[n])
            if F is not None:
                x = x + dt * matvec(p1, F[n]) + dt * matvec(p2, F[n + 1] - F[n])
            if incs is not None:
                x = x + incs[n]
            out[n + 1] = to_stack(hermitian_symmetrize(from_stack(x)))
        return out

    traj = None
    F = None
    hist_all, energy_all, outer_hist = [], [], []
    wT = np.zeros_like(v0)
    first_norm = None
    k = 0
    for k in range(1, prob.outer_maxit + 1):
        drift = run(F, None)[-1]
        target = u1 - drift
        wT, hist, energy = conjugate_gradient(op.apply, target, op.ip, prob.cg_tol, prob.cg_maxit)
        hist_all, energy_all = hist, energy
        new = run(F, op.control_increments(op.adjoint_path(wT)))
        new_c = from_stack(new)
        nrm = z_norm_arrays(new_c, grid, prob.s, times)
        if first_norm is None:
            first_norm = nrm
        elif nrm > 2 * first_norm:
            raise ContractionError("left contraction regime: iterate norm doubled")
        if traj is not None:
            diff = z_norm_arrays(new_c - traj, grid, prob.s, times)
            outer_hist.append(diff / nrm if nrm > 0 else diff)
            if outer_hist[-1] > 2 * max(outer_hist[0], 1e-300) and len(outer_hist) > 1:
                raise ContractionError("left contraction regime: iterates diverge")
            if outer_hist[-1] <= outer_tol:
                traj = new_c
                break
        elif nrm == 0:
            traj = new_c
            outer_hist.append(0.0)
            break
        traj = new_c
        F = to_stack(_nonlinear_forcing(traj, grid))
    else:
        raise ContractionError(f"no convergence in {prob.outer_maxit} outer iterations")
    res = _finish_result(op, prob, wT, traj[-1], hist_all, energy_all, k, outer_hist)
    # Genuine nonlinear solve driven by the final control.
    st = ETDStepper(grid, prob.params, prob.g, dt, "etdrk2", True)
    incs = op.control_increments(op.adjoint_path(wT))
    c = np.array(prob.u0.coeffs)
    for n in range(N):
        c = st.advance(c, times[n], incs[n])
    scale = max(_xs(prob.u1.coeffs, grid, prob.s), _xs(prob.u0.coeffs, grid, prob.s))
    res.verified_terminal_error = _relative_error(c, prob.u1.coeffs, scale, grid, prob.s)
    return res

"""Linear closed-loop and free flows, per transverse frequency.

At each ``eta`` the mean-zero x-modes evolve by ``v' = A(eta) v`` with

    A = -(eps D^5 + i beta diag(k^5) + i gamma eta^2 diag(1/k) + M_G D^5 M_G),

``M_G`` being the matrix of the localization ``G``.  Without a damping
profile the feedback term is dropped (free flow).  Fields are handled as
stacks of shape ``(M, 2K)``: one row of nonzero x-modes per ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .norms import xs_norm_sq_array, z_norm_arrays
from .operators import DampingProfile, ModelParams, g_matrix
from .spectral import GridSpec, SpectralField, Trajectory, hermitian_symmetrize

__all__ = [
    "GeneratorMatrix",
    "Propagator",
    "assemble_generator",
    "generator_stack",
    "to_stack",
    "from_stack",
    "phi_functions",
    "propagate",
    "propagate_trajectory",
    "propagate_adjoint",
    "duhamel",
    "bona_smith_smooth",
    "smoothing_ratio",
    "BonaSmithReport",
    "bona_smith_sweep",
    "regularity_gauge",
]


def to_stack(coeffs: np.ndarray) -> np.ndarray:
    """``(..., 2K+1, M)`` coefficients to ``(..., M, 2K)`` nonzero-mode rows."""
    K = (coeffs.shape[-2] - 1) // 2
    nz = np.concatenate([coeffs[..., :K, :], coeffs[..., K + 1:, :]], axis=-2)
    return np.swapaxes(nz, -1, -2)


def from_stack(stack: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_stack`; the ``k = 0`` band is zero."""
    K = stack.shape[-1] // 2
    t = np.swapaxes(stack, -1, -2)
    zero = np.zeros(t.shape[:-2] + (1, t.shape[-1]), dtype=complex)
    return np.concatenate([t[..., :K, :], zero, t[..., K:, :]], axis=-2)


def _profile_for(g: DampingProfile | None, K: int) -> DampingProfile | None:
    return None if g is None else g.for_K(K)


def _generator(params: ModelParams, g: DampingProfile | None, eta: float, K: int) -> np.ndarray:
    ks = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)]).astype(float)
    d5 = np.abs(ks) ** 5
    diag = params.epsilon * d5 + 1j * params.beta * ks**5 + 1j * params.gamma * eta**2 / ks
    A = -np.diag(diag)
    if g is not None:
        mg = g_matrix(_profile_for(g, K))
        A = A - mg @ (d5[:, None] * mg)
    return A


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Closed-loop generator at one transverse frequency."""

    eta: float
    A: np.ndarray
    params: ModelParams
    g: DampingProfile | None

    @property
    def K(self) -> int:
        return self.A.shape[0] // 2

    def abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.A).real))


def assemble_generator(params: ModelParams, g: DampingProfile | None, eta: float,
                       K: int | None = None) -> GeneratorMatrix:
    """Dense generator at ``eta``; ``g=None`` switches the feedback off."""
    if K is None:
        if g is None:
            raise ValueError("K is required when the feedback is off")
        K = g.K
    if not math.isfinite(eta):
        raise ValueError("eta must be finite")
    return GeneratorMatrix(float(eta), _generator(params, g, float(eta), K), params, g)


_STACK_CACHE: dict = {}


def _cache_get(key, build):
    val = _STACK_CACHE.get(key)
    if val is None:
        if len(_STACK_CACHE) > 64:
            _STACK_CACHE.clear()
        val = build()
        _STACK_CACHE[key] = val
    return val


def _gkey(g: DampingProfile | None) -> str | None:
    return None if g is None else g.key


def generator_stack(params: ModelParams, g: DampingProfile | None, grid: GridSpec,
                    adjoint: bool = False) -> np.ndarray:
    """Generators for every ``eta`` of the grid, shape ``(M, 2K, 2K)``.

    Columns sharing ``|eta|`` share one matrix.
    """
    def build():
        g2 = _profile_for(g, grid.K)
        out = np.empty((grid.M, 2 * grid.K, 2 * grid.K), dtype=complex)
        done: dict[float, np.ndarray] = {}
        for j, eta in enumerate(grid.etas):
            key = round(abs(float(eta)), 12)
            if key not in done:
                A = _generator(params, g2, float(eta), grid.K)
                done[key] = A.conj().T if adjoint else A
            out[j] = done[key]
        out.setflags(write=False)
        return out

    return _cache_get(("gen", grid, params, _gkey(g), adjoint), build)


def _unique_map(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Indices of one representative column per ``|eta|`` and the inverse map."""
    keys = np.round(np.abs(grid.etas), 12)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    return first, inverse


def phi_functions(A: np.ndarray, h: float, order: int) -> list[np.ndarray]:
    """``[exp(hA), phi_1(hA), ..., phi_order(hA)]`` for a stack of matrices.

    Uses the exponential of the block matrix with ``hA`` in the corner and
    identity blocks on the superdiagonal, whose first block row holds the
    phi-functions.
    """
    A = np.asarray(A)
    n = A.shape[-1]
    if order == 0:
        return [scipy.linalg.expm(h * A)]
    size = (order + 1) * n
    big = np.zeros(A.shape[:-2] + (size, size), dtype=complex)
    big[..., :n, :n] = h * A
    eye = np.eye(n)
    for p in range(order):
        big[..., p * n:(p + 1) * n, (p + 1) * n:(p + 2) * n] = eye
    ex = scipy.linalg.expm(big)
    return [np.ascontiguousarray(ex[..., :n, p * n:(p + 1) * n]) for p in range(order + 1)]


@dataclass(eq=False)
class Propagator:
    """Per-``eta`` matrix exponentials ``E_j = exp(A(eta_j) dt)``."""

    grid: GridSpec
    params: ModelParams
    g: DampingProfile | None
    dt: float
    E: np.ndarray
    adjoint: bool = False
    _phis: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, grid: GridSpec, params: ModelParams, g: DampingProfile | None,
              dt: float = 1.0 / 256, adjoint: bool = False) -> "Propagator":
        if not dt > 0:
            raise ValueError("dt must be positive")

        def make():
            A = generator_stack(params, g, grid, adjoint)
            first, inv = _unique_map(grid)
            E = scipy.linalg.expm(dt * A[first])[inv]
            E.setflags(write=False)
            return cls(grid, params, g, float(dt), E, adjoint)

        return _cache_get(("prop", grid, params, _gkey(g), float(dt), adjoint), make)

    def phis(self, order: int, h: float | None = None) -> list[np.ndarray]:
        """Cached ``[exp, phi_1, ..., phi_order]`` at step ``h`` (default ``dt``)."""
        h = self.dt if h is None else float(h)
        key = (order, h)
        if key not in self._phis:
            A = generator_stack(self.params, self.g, self.grid, self.adjoint)
            first, inv = _unique_map(self.grid)
            mats = [m[inv] for m in phi_functions(A[first], h, order)]
            for m in mats:
                m.setflags(write=False)
            self._phis[key] = mats
        return self._phis[key]

    def check_grid(self, f: SpectralField) -> None:
        if f.grid != self.grid:
            raise ValueError("field grid does not match the propagator grid")

    def step_stack(self, v: np.ndarray, nsteps: int = 1) -> np.ndarray:
        for _ in range(nsteps):
            v = matvec(self.E, v)
        return v


def matvec(mats: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply a stack of matrices ``(M, n, n)`` to rows ``(M, n)``."""
    return np.matmul(mats, v[..., None])[..., 0]


def _finish(coeffs: np.ndarray, real: bool) -> np.ndarray:
    return hermitian_symmetrize(coeffs) if real else coeffs


def propagate(P: Propagator, f: SpectralField, nsteps: int) -> SpectralField:
    """``nsteps`` exact steps of the linear flow."""
    P.check_grid(f)
    if nsteps < 0:
        raise ValueError("nsteps must be nonnegative")
    v = to_stack(f.coeffs)
    for _ in range(nsteps):
        v = to_stack(_finish(from_stack(matvec(P.E, v)), f.real))
    return f.with_coeffs(from_stack(v))


def propagate_trajectory(P: Propagator, f: SpectralField, nsteps: int,
                         store_every: int = 1) -> Trajectory:
    """Linear flow with snapshots every ``store_every`` steps (always incl. the last)."""
    P.check_grid(f)
    v = to_stack(f.coeffs)
    times, states = [0.0], [from_stack(v)]
    for n in range(1, nsteps + 1):
        c = _finish(from_stack(matvec(P.E, v)), f.real)
        v = to_stack(c)
        if n % store_every == 0 or n == nsteps:
            times.append(n * P.dt)
            states.append(c)
    return Trajectory(P.grid, np.array(times), np.array(states), f.real)


def propagate_adjoint(params: ModelParams, g: DampingProfile | None, f: SpectralField,
                      t: float, dt: float | None = None) -> SpectralField:
    """Adjoint flow: the state ``w(T - t)`` reached from ``w(T) = f``.

    Evolves with the conjugate-transposed generator per ``eta``.  With
    ``dt`` given, ``t`` must be a multiple of it and cached step exponentials
    are reused; otherwise a single exponential of ``t A*`` is taken.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return f
    if dt is not None:
        n = int(round(t / dt))
        if abs(n * dt - t) > 1e-12 * max(1.0, t):
            raise ValueError("t is not a multiple of dt")
        return propagate(Propagator.build(f.grid, params, g, dt, adjoint=True), f, n)
    A = generator_stack(params, g, f.grid, adjoint=True)
    first, inv = _unique_map(f.grid)
    E = scipy.linalg.expm(t * A[first])[inv]
    c = from_stack(matvec(E, to_stack(f.coeffs)))
    return f.with_coeffs(_finish(c, f.real))


def duhamel(params: ModelParams, g: DampingProfile | None, v0: SpectralField,
            forcing: Trajectory | np.ndarray, T: float, dt: float | None = None,
            store_every: int = 1) -> Trajectory:
    """Mild solution ``v(t) = S(t) v0 + int_0^t S(t - tau) F(tau) dtau``.

    ``forcing`` holds ``F`` at the step times ``0, dt, ..., T``; on each step
    ``F`` is interpolated linearly and integrated exactly against the
    semigroup, ``v+ = E v + dt phi_1 F_n + dt phi_2 (F_{n+1} - F_n)``.
    """
    if isinstance(forcing, Trajectory):
        fdt = forcing.dt if len(forcing) > 1 else None
        if dt is None:
            dt = fdt
        elif fdt is not None and abs(fdt - dt) > 1e-12 * dt:
            raise ValueError("forcing is not sampled on the propagation step grid")
        F = forcing.coeffs
    else:
        F = np.asarray(forcing, dtype=complex)
    if dt is None:
        raise ValueError("dt is required")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * max(T, 1.0) or F.shape != (nsteps + 1,) + v0.grid.shape:
        raise ValueError("forcing samples do not match the step grid")
    P = Propagator.build(v0.grid, params, g, dt)
    E, p1, p2 = P.phis(2)
    Fs = to_stack(F)
    v = to_stack(v0.coeffs)
    real = v0.real and bool(np.allclose(F, hermitian_symmetrize(F), atol=0, rtol=0))
    times, states = [0.0], [from_stack(v)]
    for n in range(nsteps):
        v = matvec(E, v) + dt * matvec(p1, Fs[n]) + dt * matvec(p2, Fs[n + 1] - Fs[n])
        c = _finish(from_stack(v), real)
        v = to_stack(c)
        if (n + 1) % store_every == 0 or n + 1 == nsteps:
            times.append((n + 1) * dt)
            states.append(c)
    return Trajectory(v0.grid, np.array(times), np.array(states), real)


def bona_smith_smooth(v0: SpectralField, eps: float) -> SpectralField:
    """Gaussian x-cutoff ``exp(-eps^(1/10) k^2)`` of the data."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    k = v0.grid.ks.astype(float)[:, None]
    return v0.with_coeffs(v0.coeffs * np.exp(-(eps ** 0.1) * k**2))


def smoothing_ratio(v0: SpectralField, eps: float, sigma: float, s: float) -> float:
    """``eps^(sigma/10) ||v0^eps||_{X_{s+sigma}} / ||v0||_{X_s}``."""
    num = eps ** (sigma / 10.0) * math.sqrt(xs_norm_sq_array(bona_smith_smooth(v0, eps).coeffs,
                                                              v0.grid, s + sigma))
    den = math.sqrt(xs_norm_sq_array(v0.coeffs, v0.grid, s))
    if den == 0:
        raise ValueError("zero data")
    return num / den


@dataclass
class BonaSmithReport:
    """Differences to the unregularized closed loop along an ``eps`` sweep."""

    eps: list[float]
    err_Z: list[float]
    err_sup_Xs: list[float]
    rate_fit: float
    monotone: bool

    def records(self) -> list[dict]:
        return [{"eps": e, "err_Z": z, "err_Xs": x, "rate_fit": self.rate_fit}
                for e, z, x in zip(self.eps, self.err_Z, self.err_sup_Xs)]


def bona_smith_sweep(params: ModelParams, g: DampingProfile | None, v0: SpectralField,
                     eps_list: Sequence[float], T: float = 1.0, dt: float = 1.0 / 256,
                     s: float | None = None, store_every: int = 1) -> BonaSmithReport:
    """Smooth the data, run ``S_eps`` and compare with the ``eps = 0`` flow.

    Errors are measured in ``Z^{s,T}`` (sup of ``X_s`` plus the ``L^2`` in
    time of ``X_{s+5/2}``) and in ``sup_t X_s``; ``rate_fit`` is the slope of
    ``log err_Z`` against ``log eps``.
    """
    s = params.s if s is None else s
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    n = int(round(T / dt))
    ref = propagate_trajectory(Propagator.build(v0.grid, params.replace(epsilon=0.0), g, dt),
                               v0, n, store_every)
    errs_z, errs_x = [], []
    for eps in eps_list:
        P = Propagator.build(v0.grid, params.replace(epsilon=eps), g, dt)
        tr = propagate_trajectory(P, bona_smith_smooth(v0, eps), n, store_every)
        diff = tr.coeffs - ref.coeffs
        errs_z.append(z_norm_arrays(diff, v0.grid, s, tr.times))
        errs_x.append(float(np.sqrt(max(xs_norm_sq_array(d, v0.grid, s) for d in diff))))
    ez = np.array(errs_z)
    if len(eps_list) > 1 and np.all(ez > 0):
        rate = float(np.polyfit(np.log(eps_list), np.log(ez), 1)[0])
    else:
        rate = float("nan")
    monotone = bool(np.all(np.diff(ez) < 0)) if len(ez) > 1 else True
    return BonaSmithReport(list(map(float, eps_list)), errs_z, errs_x, rate, monotone)


def regularity_gauge(params: ModelParams, g: DampingProfile | None, v0: SpectralField,
                     forcing: np.ndarray | None, T: float, dt: float = 1.0 / 256,
                     s: float | None = None) -> float:
    """Measured constant in ``||v||_{L2 X_{s+5/2}} <= C (||v0||_{X_s} + ||F||_{L2 X_{s-5/2}})``."""
    s = params.s if s is None else s
    n = int(round(T / dt))
    if forcing is None:
        forcing = np.zeros((n + 1,) + v0.grid.shape, dtype=complex)
    tr = duhamel(params, g, v0, forcing, T, dt)
    times = tr.times
    lhs = math.sqrt(np.trapezoid([xs_norm_sq_array(c, v0.grid, s + 2.5) for c in tr.coeffs], times))
    f_l2 = math.sqrt(np.trapezoid([xs_norm_sq_array(c, v0.grid, s - 2.5) for c in forcing], times))
    rhs = math.sqrt(xs_norm_sq_array(v0.coeffs, v0.grid, s)) + f_l2
    if rhs == 0:
        raise ValueError("zero data and forcing")
    return lhs / rhs

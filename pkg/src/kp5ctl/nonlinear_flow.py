"""Nonlinear closed-loop flow ``u_t + beta u_xxxxx + u u_x + gamma d_x^{-1} u_yy + G D^5 G u = F``.

Time stepping uses exponential Runge-Kutta schemes (Cox-Matthews ETDRK2 and
ETDRK4) with the exact per-``eta`` linear propagator as integrating factor.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .linear_flow import Propagator, from_stack, matvec, to_stack
from .norms import SlabTrace, slab_trace_from_series, xs_norm_sq_array
from .operators import DampingProfile, ModelParams
from .spectral import (GridSpec, SpectralField, Trajectory, dealias_mask,
                       hermitian_symmetrize, product_coeffs)

__all__ = [
    "BlowupError",
    "SmallDataError",
    "nonlinearity",
    "StepForcing",
    "SampledForcing",
    "ETDStepper",
    "step",
    "NonlinearRun",
    "solve_global",
    "fit_decay_rate",
    "estimate_threshold",
]


class BlowupError(RuntimeError):
    """Non-finite or overflowing state during time stepping."""

    def __init__(self, t: float):
        super().__init__(f"blowup detected at t={t:.6g}")
        self.t = t


class SmallDataError(RuntimeError):
    """The run left the small-data regime (slab norms grew beyond the allowed factor)."""


def _nonlinear_coeffs(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(u^2)_x / 2`` for a real field given by coefficients ``c``."""
    sq = product_coeffs(c, c, grid, real=True)
    sq = np.where(dealias_mask(grid), sq, 0.0)
    k = grid.ks.astype(float)[:, None]
    out = 0.5j * k * sq
    out[grid.K] = 0.0
    return out


def nonlinearity(u: SpectralField) -> SpectralField:
    """``u u_x = (u^2)_x / 2``: padded product, dealiasing, derivative, mean-zero projection."""
    if not u.real:
        raise ValueError("the nonlinearity is defined for real-valued fields only")
    return u.with_coeffs(_nonlinear_coeffs(u.coeffs, u.grid))


class StepForcing(Protocol):
    """Exact contribution of a forcing term to one linear step."""

    def increment(self, n: int) -> np.ndarray:
        """Stack added to ``u_{n+1}`` by the forcing on ``[t_n, t_{n+1}]``."""


@dataclass(eq=False)
class SampledForcing:
    """Forcing sampled at the step times, integrated as piecewise linear in time."""

    propagator: Propagator
    samples: np.ndarray

    def __post_init__(self):
        self._stack = to_stack(np.asarray(self.samples, dtype=complex))
        _, self._p1, self._p2 = self.propagator.phis(2)

    def increment(self, n: int) -> np.ndarray:
        dt = self.propagator.dt
        f0, f1 = self._stack[n], self._stack[n + 1]
        return dt * matvec(self._p1, f0) + dt * matvec(self._p2, f1 - f0)


@dataclass(eq=False)
class ETDStepper:
    """Exponential time differencing for the closed loop on a fixed grid."""

    grid: GridSpec
    params: ModelParams
    g: DampingProfile | None
    dt: float = 1.0 / 256
    scheme: str = "etdrk2"
    nonlinear: bool = True

    def __post_init__(self):
        if self.scheme not in ("etdrk2", "etdrk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.prop = Propagator.build(self.grid, self.params, self.g, self.dt)
        h = self.dt
        if self.scheme == "etdrk2":
            self.E, self.p1, self.p2 = self.prop.phis(2)
        else:
            E, p1, p2, p3 = self.prop.phis(3)
            E2, q1 = self.prop.phis(1, h / 2)
            self.E, self.E2, self.Q = E, E2, (h / 2) * q1
            self.f1 = h * (p1 - 3 * p2 + 4 * p3)
            self.f2 = 2 * h * (p2 - 2 * p3)
            self.f3 = h * (4 * p3 - p2)

    def _N(self, v: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(v)
        return -to_stack(_nonlinear_coeffs(from_stack(v), self.grid))

    def step_stack(self, v: np.ndarray, inc: np.ndarray | None = None) -> np.ndarray:
        """One step on an ``(M, 2K)`` stack; ``inc`` is an exact forcing increment."""
        if self.scheme == "etdrk2":
            Nv = self._N(v)
            a = matvec(self.E, v) + self.dt * matvec(self.p1, Nv)
            if inc is not None:
                a = a + inc
            if not self.nonlinear:
                return a
            return a + self.dt * matvec(self.p2, self._N(a) - Nv)
        if inc is not None:
            raise ValueError("forcing is only supported by the etdrk2 scheme")
        Nu = self._N(v)
        a = matvec(self.E2, v) + matvec(self.Q, Nu)
        Na = self._N(a)
        b = matvec(self.E2, v) + matvec(self.Q, Na)
        Nb = self._N(b)
        c = matvec(self.E2, a) + matvec(self.Q, 2 * Nb - Nu)
        Nc = self._N(c)
        return (matvec(self.E, v) + matvec(self.f1, Nu) + matvec(self.f2, Na + Nb)
                + matvec(self.f3, Nc))

    def advance(self, c: np.ndarray, t: float, inc: np.ndarray | None = None) -> np.ndarray:
        """Step a real coefficient array; raises :class:`BlowupError` on overflow."""
        with np.errstate(over="ignore", invalid="ignore"):
            out = hermitian_symmetrize(from_stack(self.step_stack(to_stack(c), inc)))
        if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > 1e150:
            raise BlowupError(t + self.dt)
        return out


_STEPPERS: dict = {}


def _stepper(grid, params, g, dt, scheme, nonlinear) -> ETDStepper:
    key = (grid, params, None if g is None else g.key, float(dt), scheme, nonlinear)
    st = _STEPPERS.get(key)
    if st is None:
        if len(_STEPPERS) > 16:
            _STEPPERS.clear()
        st = _STEPPERS[key] = ETDStepper(grid, params, g, dt, scheme, nonlinear)
    return st


def step(u: SpectralField, dt: float, params: ModelParams, g: DampingProfile | None,
         scheme: str = "etdrk2", nonlinear: bool = True, t: float = 0.0) -> SpectralField:
    """One exponential-integrator step of the closed loop from time ``t``."""
    if not u.real:
        raise ValueError("the nonlinear flow acts on real fields")
    st = _stepper(u.grid, params, g, dt, scheme, nonlinear)
    return u.with_coeffs(st.advance(u.coeffs, t))


def fit_decay_rate(times: np.ndarray, norms: np.ndarray, t_min: float | None = None,
                   t_max: float | None = None) -> float:
    """Rate ``lam`` from a least-squares fit ``log ||u(t)|| ~ c - lam t``."""
    times = np.asarray(times)
    norms = np.asarray(norms)
    sel = np.ones(times.shape, dtype=bool)
    if t_min is not None:
        sel &= times >= t_min - 1e-12
    if t_max is not None:
        sel &= times <= t_max + 1e-12
    sel &= norms > 0
    if sel.sum() < 2:
        return float("nan")
    return float(-np.polyfit(times[sel], np.log(norms[sel]), 1)[0])


@dataclass
class NonlinearRun:
    """Configuration and, once solved, results of a closed-loop run.

    ``g=None`` switches the feedback off; ``rho`` is the admissible size of
    ``||u0||_{X_s}`` (``None`` disables the check).
    """

    params: ModelParams
    g: DampingProfile | None
    u0: SpectralField
    T: float
    dt: float = 1.0 / 256
    scheme: str = "etdrk2"
    nonlinear: bool = True
    store_every: int = 16
    lam: float = 0.0
    rho: float | None = None
    growth_limit: float = 10.0
    fit_window: tuple[float, float] | None = None
    forcing: StepForcing | None = None
    trace: SlabTrace | None = None
    snapshots: Trajectory | None = None
    times: np.ndarray | None = None
    xs_norms: np.ndarray | None = None
    l2_norms: np.ndarray | None = None
    lambda_hat: float = float("nan")

    @property
    def completed(self) -> bool:
        return self.snapshots is not None

    def report(self) -> dict:
        out = {
            "T": self.T, "dt": self.dt, "scheme": self.scheme, "nonlinear": self.nonlinear,
            "feedback": self.g is not None, "params": self.params.to_dict(),
            "lambda_hat": self.lambda_hat,
            "initial_Xs": float(self.xs_norms[0]) if self.xs_norms is not None else None,
            "final_Xs": float(self.xs_norms[-1]) if self.xs_norms is not None else None,
        }
        if self.trace is not None:
            out["slabs"] = self.trace.rows()
            out["weighted_norm"] = self.trace.weighted
        return out


def solve_global(run: NonlinearRun) -> NonlinearRun:
    """Integrate to ``T`` and fill norms, slab trace and the fitted decay rate.

    Raises :class:`BlowupError` on overflow and :class:`SmallDataError` when a
    slab norm exceeds ``growth_limit`` times the first one.
    """
    u0 = run.u0
    if not u0.real:
        raise ValueError("initial data must be real")
    grid = u0.grid
    s = run.params.s
    x0 = math.sqrt(xs_norm_sq_array(u0.coeffs, grid, s))
    if run.rho is not None and x0 > run.rho:
        raise ValueError(f"||u0||_Xs = {x0:.3e} exceeds the small-data threshold {run.rho:.3e}")
    nsteps = int(round(run.T / run.dt))
    if abs(nsteps * run.dt - run.T) > 1e-9 * max(1.0, run.T):
        raise ValueError("dt must divide T")
    st = _stepper(grid, run.params, run.g, run.dt, run.scheme, run.nonlinear)
    per = int(round(1.0 / run.dt))
    times = run.dt * np.arange(nsteps + 1)
    xs_sq = np.empty(nsteps + 1)
    xs52_sq = np.empty(nsteps + 1)
    l2_sq = np.empty(nsteps + 1)
    c = np.array(u0.coeffs)
    snaps_t, snaps = [0.0], [c]
    first_slab = None
    for n in range(nsteps + 1):
        xs_sq[n] = xs_norm_sq_array(c, grid, s)
        xs52_sq[n] = xs_norm_sq_array(c, grid, s + 2.5)
        l2_sq[n] = xs_norm_sq_array(c, grid, 0.0, "Hs")
        if n > 0 and n % per == 0:
            sl = slice(n - per, n + 1)
            tot = math.sqrt(xs_sq[sl].max()) + math.sqrt(np.trapezoid(xs52_sq[sl], times[sl]))
            if first_slab is None:
                first_slab = tot
            elif tot > run.growth_limit * first_slab:
                raise SmallDataError(f"slab norm grew by more than {run.growth_limit}x at t={times[n]:.3g}")
        if n == nsteps:
            break
        inc = None if run.forcing is None else run.forcing.increment(n)
        c = st.advance(c, times[n], inc)
        if (n + 1) % run.store_every == 0 or n + 1 == nsteps:
            snaps_t.append(times[n + 1])
            snaps.append(c)
    traj = Trajectory(grid, np.array(snaps_t), np.array(snaps), True)
    trace = None
    if run.T >= 1.0 - 1e-12 and abs(per * run.dt - 1.0) < 1e-9:
        trace = slab_trace_from_series(times, xs_sq, xs52_sq, s, run.lam)
    xs = np.sqrt(xs_sq)
    window = run.fit_window or (run.T / 2, run.T)
    lam_hat = fit_decay_rate(times, xs, *window)
    return dataclasses.replace(run, trace=trace, snapshots=traj, times=times, xs_norms=xs,
                               l2_norms=np.sqrt(l2_sq), lambda_hat=lam_hat)


def estimate_threshold(params: ModelParams, g: DampingProfile, shape: SpectralField,
                       amplitudes: Sequence[float] | None = None, T: float = 4.0,
                       dt: float = 1.0 / 256) -> dict:
    """Largest dyadic amplitude of ``shape`` (unit ``X_s`` norm) with slab contraction.

    Contraction means ``|||u|||_{n+1} <= exp(-lam_hat / 2) |||u|||_n`` for all
    slabs, ``lam_hat`` being the fitted decay rate of the same run.
    """
    s = params.s
    unit = shape * (1.0 / math.sqrt(xs_norm_sq_array(shape.coeffs, shape.grid, s)))
    if amplitudes is None:
        amplitudes = [2.0 ** (-k) for k in range(0, 16)]
    rows = []
    best = None
    for a in sorted(amplitudes, reverse=True):
        run = NonlinearRun(params, g, unit * a, T, dt, store_every=int(round(1 / dt)))
        try:
            done = solve_global(run)
        except (BlowupError, SmallDataError) as exc:
            rows.append({"amplitude": a, "ok": False, "reason": str(exc)})
            continue
        ratios = done.trace.contraction_ratios()
        ok = bool(np.all(ratios <= math.exp(-done.lambda_hat / 2)))
        rows.append({"amplitude": a, "ok": ok, "lambda_hat": done.lambda_hat,
                     "max_ratio": float(ratios.max()) if len(ratios) else float("nan")})
        if ok and best is None:
            best = a
    return {"rho_hat": best, "runs": rows}

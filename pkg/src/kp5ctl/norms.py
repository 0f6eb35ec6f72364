"""Norms and time-space gauges computed from spectral coefficients.

All spatial norms carry the Parseval weight ``2 pi Ly`` of
:class:`~kp5ctl.spectral.GridSpec`, so they equal the corresponding
physical-space integrals over one period cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import GridSpec, SpectralField, Trajectory, product_exact

__all__ = [
    "NormKind",
    "norm",
    "norm_weight",
    "xs_norm_sq_array",
    "l2_norm",
    "z_norm",
    "z_norm_arrays",
    "SlabRecord",
    "SlabTrace",
    "slab_trace",
    "slab_trace_from_series",
    "bilinear_ratio",
]

_TAGS = ("Hs", "Hs_aniso", "Xs")


@dataclass(frozen=True)
class NormKind:
    """Which norm: ``Hs`` (isotropic), ``Hs_aniso`` (x-only) or ``Xs``."""

    tag: str
    s: float = 0.0

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown norm tag {self.tag!r}; expected one of {_TAGS}")


def norm_weight(grid: GridSpec, kind: NormKind) -> np.ndarray:
    """Per-mode weight ``w(k, eta)`` with ``||f||^2 = 2 pi Ly sum w |c|^2``."""
    k = grid.kgrid()
    eta = grid.etagrid()
    if kind.tag == "Hs_aniso":
        return (1.0 + k**2) ** kind.s
    base = (1.0 + k**2 + eta**2) ** kind.s
    if kind.tag == "Hs":
        return base
    inv = np.zeros_like(k)
    nz = k != 0
    inv[nz] = 1.0 / k[nz] ** 2
    return base * (1.0 + inv)


_WEIGHT_CACHE: dict = {}


def _weight(grid: GridSpec, kind: NormKind) -> np.ndarray:
    key = (grid, kind)
    w = _WEIGHT_CACHE.get(key)
    if w is None:
        if len(_WEIGHT_CACHE) > 256:
            _WEIGHT_CACHE.clear()
        w = _WEIGHT_CACHE[key] = grid.parseval_weight * norm_weight(grid, kind)
    return w


def xs_norm_sq_array(coeffs: np.ndarray, grid: GridSpec, s: float, tag: str = "Xs"):
    """Squared norm of one or many coefficient arrays (leading axes are kept)."""
    w = _weight(grid, NormKind(tag, s))
    val = np.sum(w * (coeffs.real**2 + coeffs.imag**2), axis=(-2, -1))
    return float(val) if np.ndim(val) == 0 else val


def norm(kind: NormKind, f: SpectralField) -> float:
    """``Hs``: ``(1+k^2+eta^2)^s``; ``Hs_aniso``: ``(1+k^2)^s``; ``Xs``: ``Hs`` of f and of its antiderivative."""
    return math.sqrt(xs_norm_sq_array(f.coeffs, f.grid, kind.s, kind.tag))


def l2_norm(f: SpectralField) -> float:
    return norm(NormKind("Hs", 0.0), f)


def z_norm_arrays(coeffs_t: np.ndarray, grid: GridSpec, s: float, times: np.ndarray) -> float:
    """``sup_t ||u||_{X_s} + (int ||u||^2_{X_{s+5/2}} dt)^(1/2)`` by max and trapezoid."""
    sup = math.sqrt(float(np.max(xs_norm_sq_array(coeffs_t, grid, s))))
    if len(times) < 2:
        return sup
    l2 = math.sqrt(float(np.trapezoid(xs_norm_sq_array(coeffs_t, grid, s + 2.5), times)))
    return sup + l2


def z_norm(traj: Trajectory, s: float) -> float:
    """Norm of the smoothing space ``C([0,T]; X_s) cap L^2(0,T; X_{s+5/2})``."""
    return z_norm_arrays(traj.coeffs, traj.grid, s, traj.times)


@dataclass(frozen=True)
class SlabRecord:
    n: int
    sup_Xs: float
    l2_Xs52: float

    @property
    def total(self) -> float:
        return self.sup_Xs + self.l2_Xs52


@dataclass
class SlabTrace:
    """Per-unit-slab norms and the exponentially weighted sup over slabs."""

    s: float
    slabs: list[SlabRecord]
    lam: float
    weighted: float = field(default=float("nan"))

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.slabs])

    def contraction_ratios(self) -> np.ndarray:
        t = self.totals()
        return t[1:] / t[:-1] if len(t) > 1 else np.array([])

    def rows(self) -> list[dict]:
        return [{"n": r.n, "sup_Xs": r.sup_Xs, "l2_Xs52": r.l2_Xs52, "total": r.total}
                for r in self.slabs]


def slab_trace_from_series(times: np.ndarray, xs_sq: np.ndarray, xs52_sq: np.ndarray,
                           s: float, lam: float) -> SlabTrace:
    """Slab norms from sampled ``||u||^2_{X_s}`` and ``||u||^2_{X_{s+5/2}}``."""
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        raise ValueError("insufficient horizon")
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=0):
        raise ValueError("slab norms need uniformly spaced samples")
    per = int(round(1.0 / dt))
    if abs(per * dt - 1.0) > 1e-9:
        raise ValueError("the sample step must divide the slab length 1")
    nslabs = int(math.floor((times[-1] - times[0]) + 1e-9))
    if nslabs < 1:
        raise ValueError("insufficient horizon")
    slabs = []
    for n in range(nslabs):
        sl = slice(n * per, (n + 1) * per + 1)
        sup = math.sqrt(float(np.max(xs_sq[sl])))
        l2 = math.sqrt(float(np.trapezoid(xs52_sq[sl], times[sl])))
        slabs.append(SlabRecord(n, sup, l2))
    weighted = max(math.exp(lam * r.n) * r.total for r in slabs)
    return SlabTrace(s, slabs, lam, weighted)


def slab_trace(traj: Trajectory, s: float, lam: float) -> SlabTrace:
    """Slab norms ``sup_{[n,n+1]} ||u||_{X_s} + ||u||_{L^2(n,n+1; X_{s+5/2})}``.

    The returned ``weighted`` field is ``max_n exp(lam n)`` times the slab norm.
    """
    xs = xs_norm_sq_array(traj.coeffs, traj.grid, s)
    xs52 = xs_norm_sq_array(traj.coeffs, traj.grid, s + 2.5)
    return slab_trace_from_series(traj.times, np.atleast_1d(xs), np.atleast_1d(xs52), s, lam)


def _half_dx_square(f: SpectralField) -> SpectralField:
    """Exact ``u u_x = (u^2)_x / 2`` on the doubled grid."""
    sq = product_exact(f, f)
    k = sq.grid.ks.astype(float)[:, None]
    return sq.with_coeffs(0.5j * k * sq.coeffs)


def bilinear_ratio(traj: Trajectory, s: float) -> float:
    """``||u u_x||_{L^2(0,T; X_{s-5/2})} / ||u||^2_{Z^{s,T}}``.

    The product is formed exactly (no truncation) on the doubled grid.
    """
    if s <= 2:
        raise ValueError("the bilinear estimate needs s > 2")
    zn = z_norm(traj, s)
    if zn == 0:
        raise ValueError("undefined ratio")
    vals = []
    big = None
    for n in range(len(traj)):
        p = _half_dx_square(traj.field(n))
        big = p.grid
        vals.append(xs_norm_sq_array(p.coeffs, big, s - 2.5))
    if len(traj) > 1:
        num = math.sqrt(float(np.trapezoid(vals, traj.times)))
    else:
        num = math.sqrt(vals[0])
    return num / zn**2

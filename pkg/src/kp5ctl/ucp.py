"""Finite-dimensional unique-continuation diagnostics.

Dispersion relation and resonance groups, restriction of trigonometric
polynomials to an interval, one-sided Fourier series, and the observation
Gramian of the free flow restricted to the damping region.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .linear_flow import _generator, _unique_map
from .operators import DampingProfile, ModelParams
from .spectral import GridSpec

__all__ = [
    "dispersion",
    "ResonanceGroup",
    "ResonanceTable",
    "resonance_groups",
    "restriction_gram",
    "restriction_diagnostic",
    "restriction_scan",
    "VanishingVerdict",
    "one_sided_vanishing_check",
    "UCPFlowReport",
    "ucp_flow_check",
]


def dispersion(params: ModelParams, k: int, eta: float) -> float:
    """Free frequency ``beta k^5 + gamma eta^2 / k`` of the mode ``exp(i(kx + eta y))``."""
    if k == 0:
        raise ValueError("the dispersion relation is undefined at k = 0")
    return params.beta * k**5 + params.gamma * eta**2 / k


@dataclass(frozen=True)
class ResonanceGroup:
    omega: float | Fraction
    modes: tuple[int, ...]


@dataclass
class ResonanceTable:
    """Partition of ``{-K..K} \\ {0}`` by equal frequency, ascending in ``omega``."""

    eta: float
    eta2: float | Fraction
    K: int
    tol: float
    exact: bool
    groups: list[ResonanceGroup]

    def nontrivial(self) -> list[ResonanceGroup]:
        return [gr for gr in self.groups if len(gr.modes) > 1]

    def contains_group(self, modes: Iterable[int]) -> bool:
        target = set(modes)
        return any(target <= set(gr.modes) for gr in self.groups)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "eta2": str(self.eta2) if self.exact else self.eta2,
                "K": self.K, "tol": self.tol, "exact": self.exact,
                "groups": [{"omega": str(gr.omega) if self.exact else float(gr.omega),
                            "modes": list(gr.modes)} for gr in self.groups]}


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(str(float(x)))


def resonance_groups(params: ModelParams, eta: float | None, K: int, tol: float | None = None,
                     eta2: float | Fraction | str | None = None,
                     exact: bool = False) -> ResonanceTable:
    """Group nonzero modes ``|k| <= K`` with equal frequency.

    Floating path: modes are chained when adjacent sorted frequencies differ
    by at most ``tol`` (default ``1e-9 max|omega|``), which makes the
    grouping transitive.  Exact path (``exact=True``, or ``tol=0``): beta,
    gamma and ``eta^2`` are taken as rationals (``eta2`` may be given
    directly, e.g. ``"62"``) and frequencies are compared exactly.
    """
    if eta is None and eta2 is None:
        raise ValueError("give eta or eta2")
    ks = [k for k in range(-K, K + 1) if k != 0]
    if exact or tol == 0:
        e2 = _as_fraction(eta2) if eta2 is not None else _as_fraction(eta) ** 2
        b, c = _as_fraction(params.beta), _as_fraction(params.gamma)
        om = {k: b * k**5 + c * e2 / k for k in ks}
        buckets: dict[Fraction, list[int]] = {}
        for k in ks:
            buckets.setdefault(om[k], []).append(k)
        groups = [ResonanceGroup(w, tuple(sorted(m))) for w, m in sorted(buckets.items())]
        eta_f = float(eta) if eta is not None else math.sqrt(float(e2))
        return ResonanceTable(eta_f, e2, K, 0.0, True, groups)
    e2f = float(eta2) if eta2 is not None else float(eta) ** 2
    om = np.array([params.beta * k**5 + params.gamma * e2f / k for k in ks])
    if tol is None:
        tol = 1e-9 * float(np.max(np.abs(om)))
    if not tol > 0:
        raise ValueError("tol must be positive")
    order = np.argsort(om, kind="stable")
    groups, cur = [], [order[0]]
    for a, b in zip(order[:-1], order[1:]):
        if om[b] - om[a] <= tol:
            cur.append(b)
        else:
            groups.append(cur)
            cur = [b]
    groups.append(cur)
    out = [ResonanceGroup(float(np.mean(om[gr])), tuple(sorted(ks[i] for i in gr))) for gr in groups]
    eta_f = float(eta) if eta is not None else math.sqrt(e2f)
    return ResonanceTable(eta_f, e2f, K, float(tol), False, out)


def _interval_integral(n: np.ndarray, a: float, b: float) -> np.ndarray:
    """``int_a^b exp(i n x) dx`` in closed form."""
    n = np.asarray(n, dtype=float)
    out = np.empty(n.shape, dtype=complex)
    z = n == 0
    out[z] = b - a
    nz = ~z
    out[nz] = (np.exp(1j * n[nz] * b) - np.exp(1j * n[nz] * a)) / (1j * n[nz])
    return out


def restriction_gram(modes: Sequence[int], interval: tuple[float, float]) -> np.ndarray:
    """Gram matrix ``M_km = int_a^b exp(i (m - k) x) dx`` of the restricted modes."""
    m = np.asarray(list(modes), dtype=float)
    a, b = interval
    return _interval_integral(m[None, :] - m[:, None], a, b)


def _check_interval(interval: tuple[float, float]) -> None:
    a, b = interval
    if not 0 < b - a < 2 * math.pi:
        raise ValueError("interval length must lie in (0, 2 pi)")


def restriction_diagnostic(modes: Sequence[int], omega_interval: tuple[float, float]) -> float:
    """Smallest eigenvalue of the restriction Gram matrix.

    ``||sum c_k e^{ikx}||^2_{L2(a,b)} >= sigma_min ||c||^2``, so a positive
    value certifies that no nontrivial combination of the modes vanishes on
    the interval.
    """
    modes = list(modes)
    if not modes:
        raise ValueError("empty mode list")
    _check_interval(omega_interval)
    return float(np.linalg.eigvalsh(restriction_gram(modes, omega_interval))[0])


@dataclass
class RestrictionScan:
    """Minimum restriction eigenvalue over all mode sets up to a given size."""

    max_size: int
    mode_range: tuple[int, int]
    interval: tuple[float, float]
    sigma_min: float
    worst_set: tuple[int, ...]
    n_patterns: int

    def to_dict(self) -> dict:
        return {"max_size": self.max_size, "mode_range": list(self.mode_range),
                "interval": list(self.interval), "sigma_min": self.sigma_min,
                "worst_set": list(self.worst_set), "n_patterns": self.n_patterns}


def restriction_scan(K: int, size: int, interval: tuple[float, float],
                     chunk: int = 65536) -> RestrictionScan:
    """``min restriction_diagnostic`` over every set of at most ``size`` modes in ``{-K..K} \\ {0}``.

    The Gram matrix depends only on mode differences, so each set is
    translated to start at 0; sets of fewer modes are principal submatrices
    of larger ones, whose smallest eigenvalue can only be larger (Cauchy
    interlacing).  It therefore suffices to scan every difference pattern
    ``0 < d_1 < ... < d_{size-1} <= 2K``.
    """
    _check_interval(interval)
    if size < 1 or size > 2 * K:
        raise ValueError("size must lie in [1, 2K]")
    span = 2 * K
    a, b = interval
    table = _interval_integral(np.arange(-span, span + 1), a, b)
    best, worst, count = math.inf, (0,), 0
    combos = itertools.combinations(range(1, span + 1), size - 1)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            break
        d = np.zeros((len(block), size), dtype=np.int64)
        d[:, 1:] = np.array(block, dtype=np.int64).reshape(len(block), size - 1)
        diff = d[:, None, :] - d[:, :, None]
        ev = np.linalg.eigvalsh(table[diff + span])[:, 0]
        i = int(np.argmin(ev))
        count += len(block)
        if ev[i] < best:
            best, worst = float(ev[i]), tuple(int(x) - K for x in d[i])
    return RestrictionScan(size, (-K, K), (float(a), float(b)), best, worst, count)


@dataclass
class VanishingVerdict:
    """Outcome of :func:`one_sided_vanishing_check`."""

    sup_abs: float
    restricted_norm: float
    coeff_norm: float
    sigma_min: float
    lower_bound: float
    bound_holds: bool
    vanishes: bool
    coefficients_small: bool
    tol: float

    @property
    def passed(self) -> bool:
        """Vanishing on the interval forces small coefficients, and the bound holds."""
        return self.bound_holds and (not self.vanishes or self.coefficients_small)

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


def one_sided_vanishing_check(coeffs: Mapping[int, complex] | Sequence[complex],
                              interval: tuple[float, float], tol: float = 1e-10,
                              nsample: int = 2001) -> VanishingVerdict:
    """Check the one-sided polynomial ``sum_{k >= 1} c_k e^{ikx}`` on an interval.

    ``coeffs`` is either a mapping ``k -> c_k`` or a sequence ``(c_1, c_2, ...)``.
    Reports the sampled sup of ``|p|`` on the interval, the exact restricted
    L2 norm, and whether ``sqrt(sigma_min) ||c|| <= ||p||_{L2(a,b)}`` holds.
    """
    _check_interval(interval)
    if isinstance(coeffs, Mapping):
        items = sorted(coeffs.items())
    else:
        items = list(enumerate(coeffs, start=1))
    if any(k < 1 for k, _ in items):
        raise ValueError("one-sided coefficients need k >= 1")
    if not items:
        items = [(1, 0.0)]
    ks = np.array([k for k, _ in items])
    c = np.array([v for _, v in items], dtype=complex)
    a, b = interval
    x = np.linspace(a, b, nsample)
    sup = float(np.max(np.abs(np.exp(1j * np.outer(x, ks)) @ c)))
    Mg = restriction_gram(ks, interval)
    rnorm = math.sqrt(max(float(np.real(np.vdot(c, Mg @ c))), 0.0))
    sig = float(np.linalg.eigvalsh(Mg)[0])
    cn = float(np.linalg.norm(c))
    lower = math.sqrt(max(sig, 0.0)) * cn
    bound = lower <= rnorm * (1 + 1e-10) + 1e-14
    vanishes = rnorm <= tol
    small = sig > 0 and cn <= tol / math.sqrt(sig)
    return VanishingVerdict(sup, rnorm, cn, sig, lower, bool(bound), bool(vanishes), bool(small), tol)


@dataclass
class UCPFlowReport:
    """``min_eta lambda_min`` of the restriction-observation Gramian."""

    T: float
    interval: tuple[float, float]
    lambda_min: float
    per_eta: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"T": self.T, "interval": list(self.interval), "lambda_min": self.lambda_min,
                "per_eta": [{"eta": e, "lambda_min": l} for e, l in self.per_eta]}


def _support_interval(g: DampingProfile) -> tuple[float, float]:
    if len(g.support) != 1:
        raise ValueError("the flow check needs a single support interval; pass interval=")
    return tuple(map(float, g.support[0]))


def ucp_flow_check(params: ModelParams, g: DampingProfile | None, T: float,
                   grid: GridSpec | None = None, interval: tuple[float, float] | None = None,
                   feedback: bool = False) -> UCPFlowReport:
    """Smallest observed energy ``int_0^T ||v(t)||^2_{L2(omega)} dt`` over unit ``||v0||_{L2}``.

    Per ``eta`` this is ``lambda_min`` of ``int_0^T exp(A* t) Q exp(A t) dt``
    where ``Q`` is the restriction Gram matrix to ``omega`` divided by
    ``2 pi`` (so ``omega = T`` gives the identity).  The flow is the free
    one (``eps`` included) unless ``feedback`` is set.  ``omega`` defaults to
    the support of ``g``.
    """
    from .stability import _gramian_exact

    if not T > 0:
        raise ValueError("T must be positive")
    if grid is None:
        if g is None:
            raise ValueError("grid is required without a damping profile")
        grid = GridSpec(K=g.K)
    if interval is None:
        if g is None:
            raise ValueError("interval is required without a damping profile")
        interval = _support_interval(g)
    a, b = interval
    if not 0 < b - a <= 2 * math.pi + 1e-12:
        raise ValueError("interval length must lie in (0, 2 pi]")
    K = grid.K
    ks = [k for k in range(-K, K + 1) if k != 0]
    Q = restriction_gram(ks, (a, b)) / (2 * math.pi)
    Q = 0.5 * (Q + Q.conj().T)
    first, _ = _unique_map(grid)
    per = []
    gg = g.for_K(K) if (feedback and g is not None) else None
    for j in first:
        eta = abs(float(grid.etas[j]))
        A = _generator(params, gg, eta, K)
        W = _gramian_exact(A, Q, T)
        per.append((eta, float(np.linalg.eigvalsh(0.5 * (W + W.conj().T))[0])))
    per.sort()
    return UCPFlowReport(float(T), (float(a), float(b)), min(l for _, l in per), per)

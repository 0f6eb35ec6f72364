"""Energy identities, decay rates, observability Gramians and epsilon sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from .linear_flow import _generator, _unique_map, generator_stack, matvec, to_stack
from .operators import DampingProfile, ModelParams, WeightProfile, _g_apply_array, g_matrix
from .spectral import GridSpec, SpectralField, Trajectory

__all__ = [
    "energy_residual",
    "WEIGHTED_TERMS",
    "weighted_terms",
    "weighted_identity_residual",
    "DecayReport",
    "decay_rate",
    "GramianReport",
    "observability_gramian",
    "GridGramian",
    "gramian_scan",
    "observed_energy",
    "EpsSweepReport",
    "eps_uniformity_sweep",
]


def _k(grid: GridSpec) -> np.ndarray:
    return grid.ks.astype(float)[:, None]


def _dpow(grid: GridSpec, r: float) -> np.ndarray:
    a = np.abs(_k(grid))
    out = np.zeros_like(a)
    out[a > 0] = a[a > 0] ** r
    return out


def _real_ip(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``Re int conj(a) b`` over the cell, batched over leading axes."""
    return grid.parseval_weight * np.sum((a.conj() * b).real, axis=(-2, -1))


def _check_traj(traj: Trajectory, g: DampingProfile | None) -> None:
    if len(traj) < 2:
        raise ValueError("trajectory needs at least two stored states")


def energy_residual(traj: Trajectory, params: ModelParams, g: DampingProfile | None) -> float:
    """Relative defect of the L2 dissipation identity along a linear trajectory.

    ``|1/2 ||v(T)||^2 + int (eps ||D^{5/2} v||^2 + ||D^{5/2} G v||^2) dt - 1/2 ||v0||^2|``
    divided by ``1/2 ||v0||^2``; the time integral is the trapezoid rule on
    the stored states.
    """
    _check_traj(traj, g)
    grid = traj.grid
    c = traj.coeffs
    e0 = 0.5 * float(_real_ip(grid, c[0], c[0]))
    if e0 == 0:
        raise ValueError("undefined relative residual")
    eT = 0.5 * float(_real_ip(grid, c[-1], c[-1]))
    d52 = _dpow(grid, 2.5)
    rate = params.epsilon * _real_ip(grid, d52 * c, d52 * c)
    if g is not None:
        gc = d52 * _g_apply_array(g.for_K(grid.K), c)
        rate = rate + _real_ip(grid, gc, gc)
    return abs(eT + float(np.trapezoid(rate, traj.times)) - e0) / e0


def _mult(psi: WeightProfile, c: np.ndarray) -> np.ndarray:
    """Band-limited product ``psi * f`` on arrays with x-modes on axis -2."""
    K = (c.shape[-2] - 1) // 2
    out = np.zeros_like(c)
    for idx, m in enumerate(range(-psi.P, psi.P + 1)):
        a = psi.coeffs[idx]
        if a == 0 or abs(m) > 2 * K:
            continue
        if m >= 0:
            out[..., m:, :] += a * c[..., : 2 * K + 1 - m, :]
        else:
            out[..., :m, :] += a * c[..., -m:, :]
    return out


WEIGHTED_TERMS = ("dispersion_d2", "dispersion_d1", "dispersion_d0", "transverse",
                  "feedback", "viscous", "viscous_commutator", "commutator_Es")


def weighted_terms(coeffs: np.ndarray, grid: GridSpec, params: ModelParams,
                   g: DampingProfile | None, psi: WeightProfile, s: float) -> dict[str, np.ndarray]:
    """Rate terms of the weighted identity for states ``w = D_x^s v``.

    With ``dE/dt`` for ``E = 1/2 int psi w^2`` the identity reads
    ``dE/dt + sum(terms) = 0``:

    - ``dispersion_d2 = -(5 beta / 2) int psi' (w_xx)^2``
    - ``dispersion_d1 = (5 beta / 2) int psi''' (w_x)^2``
    - ``dispersion_d0 = -(beta / 2) int psi^(5) w^2``
    - ``transverse = -(1/2) int w [gamma d_x^{-1} d_y^2, psi] w``
    - ``feedback = <D^{5/2} G w, D^{5/2} G (psi w)>``
    - ``viscous = eps int psi (D^{5/2} w)^2``
    - ``viscous_commutator = eps int D^{5/2} w [D^{5/2}, psi] w``
    - ``commutator_Es = int psi w E_s w``

    ``coeffs`` holds ``w`` with leading (time) axes allowed.
    """
    beta, gamma, eps = params.beta, params.gamma, params.epsilon
    k = _k(grid)
    w = coeffs
    ip = lambda a, b: _real_ip(grid, a, b)
    d1 = 1j * k * w
    d2 = -(k**2) * w
    out = {
        "dispersion_d2": -2.5 * beta * ip(d2, _mult(psi.derivative(1), d2)),
        "dispersion_d1": 2.5 * beta * ip(d1, _mult(psi.derivative(3), d1)),
        "dispersion_d0": -0.5 * beta * ip(w, _mult(psi.derivative(5), w)),
    }
    inv = np.zeros(k.shape, dtype=complex)
    inv[k != 0] = 1.0 / (1j * k[k != 0])
    L = gamma * (-(grid.etas**2)[None, :]) * inv
    pw = _mult(psi, w)
    comm_L = L * pw - _mult(psi, L * w)
    out["transverse"] = -0.5 * ip(w, comm_L)
    d52 = _dpow(grid, 2.5)
    if g is not None:
        gK = g.for_K(grid.K)
        out["feedback"] = ip(d52 * _g_apply_array(gK, w), d52 * _g_apply_array(gK, pw))
    else:
        out["feedback"] = np.zeros(np.shape(ip(w, w)))
    dw = d52 * w
    out["viscous"] = eps * ip(dw, _mult(psi, dw))
    out["viscous_commutator"] = eps * ip(dw, d52 * pw - _mult(psi, dw))
    if g is not None:
        out["commutator_Es"] = ip(pw, _es_array(gK, s, w))
    else:
        out["commutator_Es"] = np.zeros(np.shape(ip(w, w)))
    return out


def _es_array(g: DampingProfile, s: float, c: np.ndarray) -> np.ndarray:
    grid_K = g.K
    a = np.abs(np.arange(-grid_K, grid_K + 1, dtype=float))[:, None]
    ds = np.where(a > 0, a, 1.0) ** s * (a > 0)
    dms = np.where(a > 0, a, 1.0) ** (-s) * (a > 0)
    d5 = a**5
    G = lambda x: _g_apply_array(g, x)
    comm = lambda x: ds * G(x) - G(ds * x)
    h = dms * c
    return G(d5 * comm(h)) + comm(d5 * G(h))


def weighted_identity_residual(traj: Trajectory, params: ModelParams, g: DampingProfile | None,
                               psi: WeightProfile, s: float) -> float:
    """Relative defect of the weighted identity for ``w = D_x^s v`` over ``[0, T]``.

    ``|E(T) - E(0) + int sum(terms) dt| / E(0)`` with ``E = 1/2 int psi w^2``
    and the terms of :func:`weighted_terms`, trapezoid in time.  No forcing.
    """
    _check_traj(traj, g)
    grid = traj.grid
    w = _dpow(grid, s) * traj.coeffs
    E = 0.5 * _real_ip(grid, w, _mult(psi, w))
    if E[0] == 0:
        raise ValueError("undefined relative residual")
    total = sum(weighted_terms(w, grid, params, g, psi, s).values())
    return float(abs(E[-1] - E[0] + np.trapezoid(total, traj.times)) / abs(E[0]))


@dataclass
class DecayReport:
    """Per-``eta`` spectral abscissas and global decay rates.

    ``lam = -max_eta abscissa``; ``lam_traj`` is the smallest rate fitted to
    per-``eta`` propagations of random data over ``fit_window``;
    ``lam_traj_aggregate`` fits the whole-field norm instead.
    """

    etas: np.ndarray
    abscissa: np.ndarray
    lam: float
    lam_traj: float
    lam_traj_aggregate: float
    fit_window: tuple[float, float] | None
    failures: list[str] = field(default_factory=list)

    @property
    def slowest_eta(self) -> float:
        return float(self.etas[int(np.argmax(self.abscissa))])

    def to_dict(self) -> dict:
        return {"eta": [float(e) for e in self.etas], "abscissa": [float(a) for a in self.abscissa],
                "lambda": self.lam, "lambda_traj": self.lam_traj,
                "lambda_traj_aggregate": self.lam_traj_aggregate,
                "fit_window": list(self.fit_window) if self.fit_window else None,
                "failures": self.failures}


def _xs_fiber_weight(K: int, eta: float, s: float) -> np.ndarray:
    k = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)]).astype(float)
    return (1.0 + k**2 + eta**2) ** s * (1.0 + 1.0 / k**2)


def decay_rate(params: ModelParams, g: DampingProfile | None, grid: GridSpec,
               rng: np.random.Generator | None = None, nfit: int = 101) -> DecayReport:
    """Eigen-analysis of ``A(eta)`` on the grid plus a propagated random-data fit.

    The fit window is ``[5 / lam, 10 / lam]``; it is skipped when ``lam <= 0``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    A = generator_stack(params, g, grid)
    first, inv = _unique_map(grid)
    alphas = np.empty(len(first))
    failures = []
    for i, j in enumerate(first):
        try:
            alphas[i] = float(np.max(np.linalg.eigvals(A[j]).real))
        except np.linalg.LinAlgError as exc:
            alphas[i] = float("nan")
            failures.append(f"eta={grid.etas[j]:.6g}: {exc}")
    abscissa = alphas[inv]
    lam = -float(np.nanmax(abscissa))
    lam_traj = lam_agg = float("nan")
    window = None
    if lam > 0:
        t0, t1 = 5.0 / lam, 10.0 / lam
        window = (t0, t1)
        ts = np.linspace(t0, t1, nfit)
        rates = []
        agg = np.zeros(nfit)
        for i, j in enumerate(first):
            n = A.shape[-1]
            v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            wgt = _xs_fiber_weight(grid.K, float(grid.etas[j]), params.s)
            v = scipy.linalg.expm(t0 * A[j]) @ v
            step = scipy.linalg.expm((ts[1] - ts[0]) * A[j])
            nrm = np.empty(nfit)
            for m in range(nfit):
                nrm[m] = float(np.sum(wgt * np.abs(v) ** 2))
                v = step @ v
            mult = int(np.sum(inv == i))
            agg += mult * nrm
            rates.append(-0.5 * np.polyfit(ts, np.log(nrm), 1)[0])
        lam_traj = float(np.min(rates))
        lam_agg = float(-0.5 * np.polyfit(ts, np.log(agg), 1)[0])
    return DecayReport(np.array(grid.etas), abscissa, lam, lam_traj, lam_agg, window, failures)


@dataclass
class GramianReport:
    """Observability Gramian ``W = int_0^T exp(A* t) Q exp(A t) dt`` at one ``eta``.

    ``Q = C* C + eps D_x^5`` with ``C = B* = D_x^{5/2} G``: the observed
    quantity is the full dissipation, feedback plus viscous part.
    ``lambda_min`` and ``lambda_max`` are eigenvalues of ``D^{-1} W D^{-1}``
    with ``D = diag((1 + k^-2)^(1/2))``, i.e. of ``W`` relative to the
    ``X_0`` inner product; ``v_min`` is the coefficient
    vector attaining ``lambda_min``, normalized in ``X_0``.
    """

    eta: float
    T: float
    W: np.ndarray
    lambda_min: float
    lambda_max: float
    C_T: float
    v_min: np.ndarray
    method: str

    def to_dict(self) -> dict:
        return {"eta": self.eta, "T": self.T, "lambda_min": self.lambda_min,
                "lambda_max": self.lambda_max, "C_T": self.C_T, "method": self.method}


def _phi1_times(z: np.ndarray, T: float) -> np.ndarray:
    """``int_0^T exp(z t) dt`` elementwise, stable near ``z = 0``."""
    zt = z * T
    out = np.empty_like(zt)
    small = np.abs(zt) < 1e-8
    out[~small] = np.expm1(zt[~small]) / z[~small]
    out[small] = T * (1 + zt[small] / 2)
    return out


def _gramian_exact(A: np.ndarray, Q: np.ndarray, T: float) -> np.ndarray:
    lam, V = np.linalg.eig(A)
    Vinv = np.linalg.inv(V)
    core = V.conj().T @ Q @ V
    core = core * _phi1_times(lam.conj()[:, None] + lam[None, :], T)
    return Vinv.conj().T @ core @ Vinv


def _gramian_lyapunov(A: np.ndarray, Q: np.ndarray, T: float) -> np.ndarray:
    E = scipy.linalg.expm(T * A)
    X = scipy.linalg.solve_continuous_lyapunov(A.conj().T, -Q)
    return X - E.conj().T @ X @ E


def _gramian_trapezoid(A: np.ndarray, Q: np.ndarray, T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide T")
    step = scipy.linalg.expm(dt * A)
    E = np.eye(A.shape[0], dtype=complex)
    W = 0.5 * Q.astype(complex)
    for m in range(1, n + 1):
        E = step @ E
        term = E.conj().T @ Q @ E
        W = W + (0.5 if m == n else 1.0) * term
    return dt * W


def _nonzero_ks(K: int) -> np.ndarray:
    return np.abs(np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)]).astype(float))


def _observation(g: DampingProfile, K: int) -> np.ndarray:
    return (_nonzero_ks(K) ** 2.5)[:, None] * g_matrix(g.for_K(K))


def observability_gramian(params: ModelParams, g: DampingProfile, eta: float, T: float,
                          K: int | None = None, method: str = "exact",
                          dt: float = 1.0 / 256) -> GramianReport:
    """Gramian of the pair ``(A(eta), B*)`` on ``[0, T]``.

    ``method`` is ``"exact"`` (eigendecomposition with exact exponential
    integrals), ``"lyapunov"`` (``W = X - E* X E`` with ``A* X + X A = -C* C``)
    or ``"trapezoid"`` (step-``dt`` quadrature of ``E(t)* C* C E(t)``).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    K = g.K if K is None else K
    A = _generator(params, g.for_K(K), float(eta), K)
    C = _observation(g, K)
    Q = C.conj().T @ C + params.epsilon * np.diag(_nonzero_ks(K) ** 5)
    if method == "exact":
        W = _gramian_exact(A, Q, T)
    elif method == "lyapunov":
        W = _gramian_lyapunov(A, Q, T)
    elif method == "trapezoid":
        W = _gramian_trapezoid(A, Q, T, dt)
    else:
        raise ValueError(f"unknown Gramian method {method!r}")
    ks = np.concatenate([np.arange(-K, 0), np.arange(1, K + 1)]).astype(float)
    dinv = 1.0 / np.sqrt(1.0 + 1.0 / ks**2)
    Wx = dinv[:, None] * W * dinv[None, :]
    ev, vecs = np.linalg.eigh(0.5 * (Wx + Wx.conj().T))
    lmin = float(ev[0])
    C_T = 1.0 / lmin if lmin > 0 else float("inf")
    return GramianReport(float(eta), float(T), W, lmin, float(ev[-1]), C_T,
                         dinv * vecs[:, 0], method)


@dataclass
class GridGramian:
    """Gramian reports for every distinct ``|eta|`` of a grid."""

    reports: list[GramianReport]

    @property
    def lambda_min(self) -> float:
        return min(r.lambda_min for r in self.reports)

    @property
    def C_T(self) -> float:
        lm = self.lambda_min
        return 1.0 / lm if lm > 0 else float("inf")

    @property
    def argmin(self) -> GramianReport:
        return min(self.reports, key=lambda r: r.lambda_min)

    def to_dict(self) -> dict:
        return {"lambda_min": self.lambda_min, "C_T": self.C_T,
                "per_eta": [r.to_dict() for r in self.reports]}


def gramian_scan(params: ModelParams, g: DampingProfile, grid: GridSpec, T: float,
                 method: str = "exact", dt: float = 1.0 / 256) -> GridGramian:
    """:func:`observability_gramian` over the distinct ``|eta|`` of ``grid``."""
    first, _ = _unique_map(grid)
    etas = sorted(abs(float(grid.etas[j])) for j in first)
    return GridGramian([observability_gramian(params, g, e, T, grid.K, method, dt) for e in etas])


def observed_energy(params: ModelParams, g: DampingProfile, v0: SpectralField, T: float,
                    method: str = "energy") -> float:
    """``int_0^T (||B* v||^2 + eps ||D_x^{5/2} v||^2) dt`` along ``v = S(t) v0``.

    Evaluated without the Gramian: ``"energy"`` uses the dissipation
    identity ``(||v0||^2 - ||v(T)||^2) / 2``; ``"quadrature"`` integrates the
    observed output with adaptive quadrature in modal coordinates.
    """
    grid = v0.grid
    A = generator_stack(params, g, grid)
    first, inv = _unique_map(grid)
    v = to_stack(v0.coeffs)
    w = grid.parseval_weight
    if method == "energy":
        from .linear_flow import Propagator

        vT = matvec(Propagator.build(grid, params, g, T).E, v)
        return 0.5 * w * float(np.sum(np.abs(v) ** 2) - np.sum(np.abs(vT) ** 2))
    if method == "quadrature":
        C = _observation(g, grid.K)
        d52 = math.sqrt(params.epsilon) * _nonzero_ks(grid.K) ** 2.5
        lam, V = np.linalg.eig(A[first])
        lam, V = lam[inv], V[inv]
        coef = np.linalg.solve(V, v[..., None])[..., 0]
        CV = C @ V

        def f(t):
            z = np.exp(lam * t) * coef
            y = np.einsum("mab,mb->ma", CV, z)
            vt = np.einsum("mab,mb->ma", V, z)
            return np.sum(np.abs(y) ** 2) + np.sum(np.abs(d52 * vt) ** 2)

        val, _ = scipy.integrate.quad_vec(f, 0.0, T, epsabs=1e-14, epsrel=1e-12)
        return w * float(val)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class EpsSweepReport:
    """``C_T(eps)`` and ``lam(eps)`` with ratios to the first entry."""

    eps: list[float]
    C_T: list[float]
    lam: list[float]
    T: float

    @property
    def C_T_ratio(self) -> float:
        c = np.array(self.C_T)
        return float(max(c.max() / c[0], c[0] / c.min()))

    @property
    def lam_ratio(self) -> float:
        a = np.array(self.lam)
        return float(max(a.max() / a[0], a[0] / a.min()))

    @property
    def lam_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.lam) >= -1e-12))

    def uniform(self, factor: float = 2.0) -> bool:
        return self.C_T_ratio <= factor and self.lam_ratio <= factor

    def rows(self) -> list[dict]:
        return [{"eps": e, "C_T": c, "lambda": l} for e, c, l in zip(self.eps, self.C_T, self.lam)]


def eps_uniformity_sweep(params: ModelParams, g: DampingProfile, grid: GridSpec,
                         eps_list: Sequence[float], T: float = 1.0) -> EpsSweepReport:
    """Tabulate ``C_T`` and the decay rate along ``eps_list`` (first entry is the reference)."""
    if any(not (0 <= e < 1) for e in eps_list):
        raise ValueError("eps values must lie in [0, 1)")
    cts, lams = [], []
    for e in eps_list:
        p = params.replace(epsilon=float(e))
        cts.append(gramian_scan(p, g, grid, T).C_T)
        A = generator_stack(p, g, grid)
        first, _ = _unique_map(grid)
        lams.append(-max(float(np.max(np.linalg.eigvals(A[j]).real)) for j in first))
    return EpsSweepReport([float(e) for e in eps_list], cts, lams, float(T))

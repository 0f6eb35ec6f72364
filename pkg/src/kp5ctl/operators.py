"""Spatial operators as maps on :class:`~kp5ctl.spectral.SpectralField`.

Fourier symbols on x-mode ``k`` and transverse frequency ``eta``:

====================  ==========================
``D_x^r``             ``|k|^r`` (zero at k = 0)
``<D_x>^s``           ``(1 + k^2)^(s/2)``
``d_x``               ``i k``
``d_x^{-1}``          ``1 / (i k)`` (zero at k = 0)
``d_x^5``             ``i k^5``
``d_x^{-1} d_y^2``    ``i eta^2 / k``
====================  ==========================

The localization ``G f = g (f - int g f dx)`` is applied fiberwise in y on the
odd collocation grid of ``2K + 1`` points, which is in one-to-one
correspondence with the x-modes ``-K..K``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .spectral import GridSpec, SpectralField, hermitian_symmetrize

__all__ = [
    "ModelParams",
    "DampingProfile",
    "WeightProfile",
    "apply_Dx",
    "apply_Lambda",
    "apply_dx",
    "apply_dx_inv",
    "apply_dx5",
    "apply_transverse",
    "apply_G",
    "apply_feedback",
    "apply_B",
    "apply_Bstar",
    "commutator_Dx_G",
    "commutator_dxinv_G",
    "commutator_Es",
    "commutator_R",
    "multiply",
    "as_matrix",
    "single_eta_grid",
    "g_matrix",
]


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the closed-loop equation.

    ``beta`` multiplies the fifth x-derivative, ``gamma`` the transverse
    term, ``epsilon`` the parabolic regularization ``epsilon D_x^5`` and
    ``s`` is the working Sobolev index.
    """

    beta: float = 1.0
    gamma: float = 1.0
    epsilon: float = 0.0
    s: float = 2.5

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta == 0:
            raise ValueError("beta must be a nonzero real number")
        if self.gamma not in (-1, 1):
            raise ValueError("gamma must be +1 or -1")
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError("epsilon must lie in [0, 1)")
        for name in ("beta", "gamma", "epsilon", "s"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def replace(self, **changes) -> "ModelParams":
        d = {"beta": self.beta, "gamma": self.gamma, "epsilon": self.epsilon, "s": self.s}
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "gamma": self.gamma, "epsilon": self.epsilon, "s": self.s}


def _wrap(x: np.ndarray, center: float) -> np.ndarray:
    """Signed distance from ``center`` on the circle, in ``[-pi, pi)``."""
    return (np.asarray(x) - center + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class DampingProfile:
    """Damping weight ``g`` sampled on the ``2K + 1`` point collocation grid.

    Samples are normalized so that ``(2 pi / n) sum g = 2 pi ghat(0) = 1``.
    ``support`` lists the open arcs ``(a, b)`` (with ``a < b``, possibly
    ``b > 2 pi``) forming the control region where ``g > 0``.
    """

    samples: np.ndarray
    support: tuple[tuple[float, float], ...]
    name: str = "samples"
    options: tuple = ()

    def __post_init__(self):
        g = np.array(self.samples, dtype=float)
        n = g.size
        if g.ndim != 1 or n < 3 or n % 2 == 0:
            raise ValueError("damping samples must be a 1-D array of odd length >= 3")
        if np.any(g < -1e-12):
            raise ValueError("damping profile must be nonnegative")
        total = 2.0 * np.pi * g.sum() / n
        if not total > 0:
            raise ValueError("damping profile must have positive mass")
        g = g / total
        g.setflags(write=False)
        object.__setattr__(self, "samples", g)
        object.__setattr__(self, "support", tuple((float(a), float(b)) for a, b in self.support))
        outside = ~self.contains(self.x)
        if np.any(np.abs(g[outside]) > 1e-12):
            raise ValueError("samples do not vanish outside the declared support")

    @classmethod
    def raised_cosine(cls, K: int, x0: float = np.pi, w: float = np.pi / 2) -> "DampingProfile":
        """``c (1 + cos(pi (x - x0) / w))^2`` on ``|x - x0| <= w``, zero elsewhere."""
        if not (0 < w < np.pi):
            raise ValueError("half-width w must lie in (0, pi)")
        n = 2 * K + 1
        x = 2.0 * np.pi * np.arange(n) / n
        d = _wrap(x, x0)
        g = np.where(np.abs(d) <= w, (1.0 + np.cos(np.pi * d / w)) ** 2, 0.0)
        a = (x0 - w) % (2.0 * np.pi)
        return cls(g, ((a, a + 2.0 * w),), "raised_cosine", (("x0", float(x0)), ("w", float(w))))

    @classmethod
    def from_samples(cls, samples: Sequence[float],
                     support: Sequence[tuple[float, float]] | None = None) -> "DampingProfile":
        """Profile from explicit collocation samples.

        Without an explicit ``support`` each run of positive samples is
        assigned the open arc between its neighbouring zero samples.
        """
        g = np.asarray(samples, dtype=float)
        if support is None:
            support = _infer_support(g)
        return cls(g, tuple(support), "samples")

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def K(self) -> int:
        return (self.n - 1) // 2

    @property
    def x(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n

    @property
    def gcoeffs(self) -> np.ndarray:
        """Discrete Fourier coefficients ``ghat(m)`` for ``m = -K..K``."""
        return np.fft.fftshift(np.fft.fft(self.samples)) / self.n

    @property
    def key(self) -> str:
        return hashlib.sha1(self.samples.tobytes()).hexdigest()

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Mask of points lying in the open support arcs."""
        x = np.asarray(x, dtype=float) % (2.0 * np.pi)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.support:
            rel = (x - a) % (2.0 * np.pi)
            inside |= (rel > 0) & (rel < b - a)
        return inside

    def measure(self) -> float:
        return float(sum(b - a for a, b in self.support))

    def for_K(self, K: int) -> "DampingProfile":
        """Same preset on another grid; explicit sample profiles are fixed to theirs."""
        if K == self.K:
            return self
        if self.name == "raised_cosine":
            return DampingProfile.raised_cosine(K, **dict(self.options))
        raise ValueError("explicit sample profiles cannot be moved to another grid")

    def to_dict(self) -> dict:
        if self.name == "raised_cosine":
            return {"preset": "raised_cosine", **dict(self.options)}
        return {"samples": [float(v) for v in self.samples],
                "support": [list(s) for s in self.support]}


def _infer_support(g: np.ndarray) -> list[tuple[float, float]]:
    n = g.size
    h = 2.0 * np.pi / n
    pos = g > 0
    if pos.all():
        raise ValueError("profile is positive everywhere; the control region must be a proper subset")
    start = int(np.argmin(pos))  # a zero sample
    arcs = []
    i = 0
    while i < n:
        idx = (start + i) % n
        if pos[idx]:
            j = i
            while pos[(start + j) % n]:
                j += 1
            a = (start + i - 1) * h
            b = (start + j) * h
            arcs.append((a % (2.0 * np.pi), a % (2.0 * np.pi) + (b - a)))
            i = j
        else:
            i += 1
    return arcs


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """Real trigonometric polynomial ``psi(x) = sum_{|m| <= P} c_m exp(i m x)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 == 0:
            raise ValueError("weight coefficients must be indexed by m = -P..P")
        if not np.allclose(c, c[::-1].conj(), atol=1e-14):
            raise ValueError("weight must be real-valued")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def cosine(cls, a0: float = 1.0, a1: float = 0.5) -> "WeightProfile":
        """``a0 + a1 cos x``."""
        return cls(np.array([a1 / 2, a0, a1 / 2]))

    @property
    def P(self) -> int:
        return (self.coeffs.size - 1) // 2

    def derivative(self, order: int = 1) -> "WeightProfile":
        m = np.arange(-self.P, self.P + 1)
        return WeightProfile(self.coeffs * (1j * m) ** order)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        m = np.arange(-self.P, self.P + 1)
        return np.real(np.exp(1j * np.multiply.outer(np.asarray(x), m)) @ self.coeffs)


def _check_profile(g: DampingProfile, grid: GridSpec) -> None:
    if g.K != grid.K:
        raise ValueError(f"damping profile built for K={g.K}, field has K={grid.K}")


def _abs_k(grid: GridSpec) -> np.ndarray:
    return np.abs(grid.ks).astype(float)[:, None]


def _dx_symbol(grid: GridSpec, r: float) -> np.ndarray:
    a = _abs_k(grid)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] ** r
    return out


def _inv_ik(grid: GridSpec) -> np.ndarray:
    k = grid.ks.astype(float)[:, None]
    out = np.zeros(k.shape, dtype=complex)
    nz = k != 0
    out[nz] = 1.0 / (1j * k[nz])
    return out


def apply_Dx(r: float, f: SpectralField) -> SpectralField:
    """Homogeneous multiplier ``|k|^r`` on nonzero x-modes."""
    return f.with_coeffs(f.coeffs * _dx_symbol(f.grid, float(r)))


def apply_Lambda(s: float, f: SpectralField) -> SpectralField:
    """Inhomogeneous multiplier ``(1 + k^2)^(s/2)``."""
    k = f.grid.ks.astype(float)[:, None]
    return f.with_coeffs(f.coeffs * (1.0 + k**2) ** (s / 2.0))


def apply_dx(f: SpectralField) -> SpectralField:
    k = f.grid.ks.astype(float)[:, None]
    return f.with_coeffs(f.coeffs * (1j * k))


def apply_dx_inv(f: SpectralField) -> SpectralField:
    """Mean-zero antiderivative, ``1 / (i k)`` on nonzero modes."""
    return f.with_coeffs(f.coeffs * _inv_ik(f.grid))


def apply_dx5(f: SpectralField) -> SpectralField:
    k = f.grid.ks.astype(float)[:, None]
    return f.with_coeffs(f.coeffs * (1j * k**5))


def apply_transverse(params: ModelParams, f: SpectralField) -> SpectralField:
    """``gamma d_x^{-1} d_y^2``, symbol ``i gamma eta^2 / k``."""
    eta2 = (f.grid.etas**2)[None, :]
    return f.with_coeffs(params.gamma * (-eta2) * f.coeffs * _inv_ik(f.grid))


def _g_apply_array(g: DampingProfile, c: np.ndarray) -> np.ndarray:
    """G on a coefficient array whose axis -2 holds the x-modes -K..K."""
    n = g.n
    vals = np.fft.ifft(np.fft.ifftshift(c, axes=-2), axis=-2) * n
    gs = g.samples[:, None]
    avg = (2.0 * np.pi / n) * np.sum(gs * vals, axis=-2, keepdims=True)
    out = gs * (vals - avg)
    res = np.fft.fftshift(np.fft.fft(out, axis=-2), axes=-2) / n
    res[..., g.K, :] = 0.0
    return res


def apply_G(g: DampingProfile, f: SpectralField) -> SpectralField:
    """``(G f)(x, y) = g(x) (f(x, y) - int g(x') f(x', y) dx')``, fiberwise in y."""
    _check_profile(g, f.grid)
    c = _g_apply_array(g, f.coeffs)
    if f.real:
        c = hermitian_symmetrize(c)
    return f.with_coeffs(c)


def apply_feedback(g: DampingProfile, f: SpectralField) -> SpectralField:
    """``G D_x^5 G f``; the closed loop subtracts this term."""
    return apply_G(g, apply_Dx(5, apply_G(g, f)))


def apply_B(g: DampingProfile, f: SpectralField) -> SpectralField:
    """Control operator ``B = G D_x^{5/2}``."""
    return apply_G(g, apply_Dx(2.5, f))


def apply_Bstar(g: DampingProfile, f: SpectralField) -> SpectralField:
    """Adjoint ``B* = D_x^{5/2} G``."""
    return apply_Dx(2.5, apply_G(g, f))


def commutator_Dx_G(g: DampingProfile, s: float, f: SpectralField) -> SpectralField:
    """``[D_x^s, G] f``."""
    return apply_Dx(s, apply_G(g, f)) - apply_G(g, apply_Dx(s, f))


def commutator_dxinv_G(g: DampingProfile, f: SpectralField) -> SpectralField:
    """``[d_x^{-1}, G] f``."""
    return apply_dx_inv(apply_G(g, f)) - apply_G(g, apply_dx_inv(f))


def commutator_Es(g: DampingProfile, s: float, f: SpectralField) -> SpectralField:
    """``E_s = G D^5 [D^s, G] D^{-s} + [D^s, G] D^5 G D^{-s}``."""
    h = apply_Dx(-s, f)
    first = apply_G(g, apply_Dx(5, commutator_Dx_G(g, s, h)))
    second = commutator_Dx_G(g, s, apply_Dx(5, apply_G(g, h)))
    return first + second


def commutator_R(g: DampingProfile, f: SpectralField) -> SpectralField:
    """``R = [d_x^{-1}, G D^5 G]``."""
    return apply_dx_inv(apply_feedback(g, f)) - apply_feedback(g, apply_dx_inv(f))


def multiply(psi: WeightProfile, f: SpectralField) -> SpectralField:
    """Band-limited part of ``psi(x) f``; the ``k = 0`` band is kept."""
    K = f.grid.K
    c = np.zeros_like(f.coeffs)
    for idx, m in enumerate(range(-psi.P, psi.P + 1)):
        a = psi.coeffs[idx]
        if a == 0 or abs(m) > 2 * K:
            continue
        if m >= 0:
            c[m:] += a * f.coeffs[: 2 * K + 1 - m]
        else:
            c[:m] += a * f.coeffs[-m:]
    return f.with_coeffs(c)


def single_eta_grid(K: int, eta: float) -> tuple[GridSpec, int]:
    """A two-column grid containing ``eta`` (up to sign) and its column index.

    Every operator here depends on ``eta`` only through ``eta^2``.
    """
    if eta == 0:
        return GridSpec(K, 2, 2.0 * np.pi), 1
    return GridSpec(K, 2, 2.0 * np.pi / abs(eta)), 0


def as_matrix(op: Callable[[SpectralField], SpectralField], eta: float, K: int) -> np.ndarray:
    """Dense ``2K x 2K`` matrix of ``op`` at fixed ``eta`` on nonzero x-modes.

    Column ``b`` is ``op`` applied to the unit coefficient vector of the
    ``b``-th nonzero mode (modes in ascending order, ``k = 0`` skipped).
    """
    grid, col = single_eta_grid(K, eta)
    rows = np.concatenate([np.arange(K), np.arange(K + 1, 2 * K + 1)])
    out = np.empty((2 * K, 2 * K), dtype=complex)
    for b, r in enumerate(rows):
        c = np.zeros(grid.shape, dtype=complex)
        c[r, col] = 1.0
        res = op(SpectralField(grid, c, real=False))
        out[:, b] = res.coeffs[rows, col]
    return out


_G_MATRICES: dict[str, np.ndarray] = {}


def g_matrix(g: DampingProfile) -> np.ndarray:
    """Matrix of ``G`` on nonzero x-modes (independent of ``eta``), cached per profile."""
    m = _G_MATRICES.get(g.key)
    if m is None:
        m = as_matrix(lambda f: apply_G(g, f), 0.0, g.K)
        m.setflags(write=False)
        if len(_G_MATRICES) > 32:
            _G_MATRICES.clear()
        _G_MATRICES[g.key] = m
    return m

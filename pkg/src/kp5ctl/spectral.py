"""Fourier representation of fields on the x-periodic, y-periodic-box cylinder.

Coefficients follow the convention

    c(k, j) = 1 / (2 pi Ly) * int int u(x, y) exp(-i (k x + eta_j y)) dx dy,

so that ``u(x, y) = sum_{k, j} c(k, j) exp(i (k x + eta_j y))``.  Coefficient
arrays have shape ``(2K + 1, M)``; row ``k + K`` holds the x-mode ``k`` and
column ``j + M // 2`` holds the transverse frequency ``eta_j = 2 pi j / Ly``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "GridSpec",
    "SpectralField",
    "PhysicalField",
    "Trajectory",
    "to_physical",
    "to_spectral",
    "project_mean_zero",
    "dealias",
    "dealias_mask",
    "hermitian_symmetrize",
    "inner_product",
    "product",
    "product_exact",
    "random_field",
    "write_csv",
    "read_csv",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class GridSpec:
    """Truncated mode grid on the cylinder.

    Parameters
    ----------
    K : int
        Largest x-wavenumber; x-modes are ``-K..K``.
    M : int
        Number of transverse modes (even); ``j = -M/2 .. M/2 - 1``.
    Ly : float
        Period of the transverse box.
    dealias_fraction : float
        Fraction of the band kept by :func:`dealias`.
    """

    K: int = 32
    M: int = 128
    Ly: float = 32.0 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be an integer >= 1, got {self.K}")
        if int(self.M) != self.M or self.M < 2 or self.M % 2:
            raise ValueError(f"M must be an even integer >= 2, got {self.M}")
        if not (self.Ly > 0 and math.isfinite(self.Ly)):
            raise ValueError(f"Ly must be positive, got {self.Ly}")
        if not (0.0 < self.dealias_fraction <= 1.0):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "Ly", float(self.Ly))

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.K + 1, self.M)

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    @property
    def nonzero_ks(self) -> np.ndarray:
        """x-modes carried by mean-zero fields, in ascending order."""
        return np.concatenate([np.arange(-self.K, 0), np.arange(1, self.K + 1)])

    @property
    def js(self) -> np.ndarray:
        return np.arange(-self.M // 2, self.M // 2)

    @property
    def etas(self) -> np.ndarray:
        return 2.0 * np.pi * self.js / self.Ly

    @property
    def deta(self) -> float:
        return 2.0 * np.pi / self.Ly

    @property
    def parseval_weight(self) -> float:
        """Factor turning ``sum |c|^2`` into the physical L2 integral."""
        return 2.0 * np.pi * self.Ly

    def kgrid(self) -> np.ndarray:
        """x-wavenumbers broadcast to the coefficient shape."""
        return np.broadcast_to(self.ks[:, None], self.shape).astype(float)

    def etagrid(self) -> np.ndarray:
        return np.broadcast_to(self.etas[None, :], self.shape)

    def enlarged(self, factor: int = 2) -> "GridSpec":
        """Grid with ``factor`` times the modes in each direction and the same box."""
        return GridSpec(factor * self.K, factor * self.M, self.Ly, self.dealias_fraction)

    def to_dict(self) -> dict:
        return {"K": self.K, "M": self.M, "Ly": self.Ly,
                "dealias_fraction": self.dealias_fraction}


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients on a :class:`GridSpec`.

    ``real`` flags a field standing for a real-valued function; such fields
    satisfy ``c(-k, -j) = conj(c(k, j))``.
    """

    grid: GridSpec
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", _freeze(c))

    @classmethod
    def zeros(cls, grid: GridSpec, real: bool = True) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex), real)

    @classmethod
    def from_modes(cls, grid: GridSpec, modes: Mapping[tuple[int, int], complex],
                   real: bool | None = None) -> "SpectralField":
        """Build a field from ``{(k, j): value}``.

        With ``real=None`` the flag is set when the given modes are already
        Hermitian symmetric.
        """
        c = np.zeros(grid.shape, dtype=complex)
        for (k, j), val in modes.items():
            if abs(k) > grid.K or not (-grid.M // 2 <= j < grid.M // 2):
                raise ValueError(f"mode {(k, j)} outside the grid")
            c[k + grid.K, j + grid.M // 2] = val
        if real is None:
            real = bool(np.allclose(c, _hermitian_partner(c).conj(), rtol=0, atol=0))
        return cls(grid, c, real)

    def with_coeffs(self, coeffs: np.ndarray, real: bool | None = None) -> "SpectralField":
        return SpectralField(self.grid, coeffs, self.real if real is None else real)

    def mode(self, k: int, j: int) -> complex:
        return complex(self.coeffs[k + self.grid.K, j + self.grid.M // 2])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.real and other.real)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.real and other.real)

    def __mul__(self, scalar: complex) -> "SpectralField":
        real = self.real and np.isreal(scalar)
        return SpectralField(self.grid, self.coeffs * scalar, bool(real))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs, self.real)

    def is_mean_zero(self) -> bool:
        return not np.any(self.coeffs[self.grid.K])


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Grid values ``values[a, b] = u(2 pi a / nx, Ly b / ny)``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 2 * self.grid.K + 1 or v.shape[1] < self.grid.M:
            raise ValueError(f"collocation shape {v.shape} too small for grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("physical values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = 2.0 * np.pi * np.arange(self.nx) / self.nx
        y = self.grid.Ly * np.arange(self.ny) / self.ny
        return x, y


@dataclass(eq=False)
class Trajectory:
    """Stored states ``coeffs[n]`` at ``times[n]``."""

    grid: GridSpec
    times: np.ndarray
    coeffs: np.ndarray
    real: bool = True

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("trajectory arrays do not match the grid")

    def __len__(self) -> int:
        return len(self.times)

    def field(self, n: int) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[n], self.real)

    @property
    def initial(self) -> SpectralField:
        return self.field(0)

    @property
    def final(self) -> SpectralField:
        return self.field(-1)

    @property
    def dt(self) -> float:
        """Uniform spacing of the stored times."""
        d = np.diff(self.times)
        if len(d) == 0:
            raise ValueError("a single-sample trajectory has no step")
        if not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError("trajectory times are not uniformly spaced")
        return float(d[0])


def _check_same_grid(a: SpectralField, b: SpectralField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def _hermitian_partner(c: np.ndarray) -> np.ndarray:
    """Array whose (k, j) entry is c(-k, -j), with j = -M/2 paired to itself."""
    M = c.shape[-1]
    idx = (M - np.arange(M)) % M
    return c[..., ::-1, :][..., idx]


def hermitian_symmetrize(coeffs: np.ndarray) -> np.ndarray:
    """Project coefficients onto those of real-valued functions."""
    return 0.5 * (coeffs + _hermitian_partner(coeffs).conj())


def project_mean_zero(f: SpectralField) -> SpectralField:
    """Remove the x-average, i.e. zero the ``k = 0`` band."""
    c = np.array(f.coeffs)
    c[f.grid.K] = 0.0
    return f.with_coeffs(c)


def dealias_mask(grid: GridSpec) -> np.ndarray:
    kcut = grid.dealias_fraction * grid.K
    jcut = grid.dealias_fraction * grid.M / 2
    keep_k = np.abs(grid.ks) <= kcut + 1e-12
    keep_j = np.abs(grid.js) <= jcut + 1e-12
    return keep_k[:, None] & keep_j[None, :]


def dealias(f: SpectralField) -> SpectralField:
    """Zero every mode outside the retained fraction of the band."""
    return f.with_coeffs(np.where(dealias_mask(f.grid), f.coeffs, 0.0))


def inner_product(f: SpectralField, h: SpectralField) -> complex:
    """L2 inner product ``int conj(f) h`` over one period cell."""
    _check_same_grid(f, h)
    return complex(f.grid.parseval_weight * np.vdot(f.coeffs, h.coeffs))


def _embed_fft(coeffs: np.ndarray, K: int, M: int, nx: int, ny: int) -> np.ndarray:
    """Place centred coefficients into an FFT-ordered ``(nx, ny)`` array.

    When ``ny > M`` the unpaired column ``j = -M/2`` is split evenly between
    ``-M/2`` and ``+M/2`` so that real fields stay real on the finer grid.
    """
    out = np.zeros(coeffs.shape[:-2] + (nx, ny), dtype=complex)
    rows = np.arange(-K, K + 1) % nx
    js = np.arange(-M // 2, M // 2)
    if ny > M:
        c = np.array(coeffs, dtype=complex)
        half = 0.5 * c[..., :, 0]
        c[..., :, 0] = half
        cols = js % ny
        out[..., rows[:, None], cols[None, :]] = c
        out[..., rows, (M // 2) % ny] += half
    else:
        out[..., rows[:, None], (js % ny)[None, :]] = coeffs
    return out


def _extract_fft(arr: np.ndarray, K: int, M: int) -> np.ndarray:
    """Inverse of :func:`_embed_fft` restricted to the band."""
    nx, ny = arr.shape[-2:]
    rows = np.arange(-K, K + 1) % nx
    js = np.arange(-M // 2, M // 2)
    c = arr[..., rows[:, None], (js % ny)[None, :]]
    if ny > M:
        c = np.array(c)
        c[..., :, 0] += arr[..., rows, (M // 2) % ny]
    return c


def to_physical(f: SpectralField, nx: int | None = None, ny: int | None = None) -> PhysicalField:
    """Evaluate the trigonometric polynomial on an ``nx`` by ``ny`` grid.

    Defaults are ``nx = 2K + 2`` and ``ny = M``.  Real fields return real values.
    """
    g = f.grid
    nx = 2 * g.K + 2 if nx is None else int(nx)
    ny = g.M if ny is None else int(ny)
    if nx < 2 * g.K + 1 or ny < g.M:
        raise ValueError("collocation grid too coarse for the mode grid")
    vals = np.fft.ifft2(_embed_fft(f.coeffs, g.K, g.M, nx, ny)) * (nx * ny)
    if f.real:
        vals = vals.real
    return PhysicalField(g, vals)


def to_spectral(p: PhysicalField, real: bool | None = None) -> SpectralField:
    """Forward transform onto the band followed by mean-zero projection."""
    g = p.grid
    nx, ny = p.values.shape
    c = _extract_fft(np.fft.fft2(p.values) / (nx * ny), g.K, g.M)
    if real is None:
        real = not np.iscomplexobj(p.values)
    if real:
        c = hermitian_symmetrize(c)
    return project_mean_zero(SpectralField(g, c, real))


def product_coeffs(a: np.ndarray, b: np.ndarray, grid: GridSpec, real: bool = True) -> np.ndarray:
    """Band-limited part of the product of two coefficient arrays.

    The product is formed on a grid padded by the 3/2 rule in both directions
    (one extra point in y covers the split column ``j = -M/2``), so the
    retained modes are free of aliasing.
    """
    nx = 3 * grid.K + 3
    ny = 3 * grid.M // 2 + 2
    scale = nx * ny
    pa = np.fft.ifft2(_embed_fft(a, grid.K, grid.M, nx, ny)) * scale
    pb = np.fft.ifft2(_embed_fft(b, grid.K, grid.M, nx, ny)) * scale
    prod = pa * pb
    if real:
        prod = prod.real
    c = _extract_fft(np.fft.fft2(prod) / scale, grid.K, grid.M)
    if real:
        c = hermitian_symmetrize(c)
    return c


def product(f: SpectralField, h: SpectralField) -> SpectralField:
    """Alias-free band-limited product ``f h`` (no mean-zero projection)."""
    _check_same_grid(f, h)
    real = f.real and h.real
    return SpectralField(f.grid, product_coeffs(f.coeffs, h.coeffs, f.grid, real), real)


def product_exact(f: SpectralField, h: SpectralField) -> SpectralField:
    """Exact product of two fields, represented on the doubled grid.

    The column ``j = -M/2`` is read as ``c cos(eta y)``-type content, as in
    :func:`to_physical` on refined grids.
    """
    _check_same_grid(f, h)
    big = f.grid.enlarged(2)
    real = f.real and h.real

    K, M = f.grid.K, f.grid.M

    def lift(c):
        # the unpaired column j = -M/2 stands for a cosine in y; split it
        out = np.zeros(big.shape, dtype=complex)
        rows = slice(big.K - K, big.K + K + 1)
        out[rows, big.M // 2 - M // 2: big.M // 2 + M // 2] = c
        out[rows, big.M // 2 - M // 2] = 0.5 * c[:, 0]
        out[rows, big.M // 2 + M // 2] = 0.5 * c[:, 0]
        return out

    return SpectralField(big, product_coeffs(lift(f.coeffs), lift(h.coeffs), big, real), real)


def random_field(grid: GridSpec, rng: np.random.Generator, *, kmax: int | None = None,
                 eta_max: float | None = None, decay: float = 0.0,
                 real: bool = True, norm: float | None = None) -> SpectralField:
    """Random mean-zero band-limited field.

    Parameters
    ----------
    kmax, eta_max : optional
        Keep only ``|k| <= kmax`` and ``|eta| <= eta_max``.
    decay : float
        Amplitudes are scaled by ``(1 + k^2 + eta^2)^(-decay/2)``.
    norm : float, optional
        Rescale so that the L2 norm equals this value.
    """
    shape = grid.shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k = grid.kgrid()
    eta = grid.etagrid()
    mask = k != 0
    if kmax is not None:
        mask &= np.abs(k) <= kmax
    if eta_max is not None:
        mask &= np.abs(eta) <= eta_max + 1e-12
    c = np.where(mask, c * (1.0 + k**2 + eta**2) ** (-decay / 2.0), 0.0)
    if real:
        c = hermitian_symmetrize(c)
    if norm is not None:
        n = math.sqrt(grid.parseval_weight * float(np.sum(np.abs(c) ** 2)))
        if n > 0:
            c = c * (norm / n)
    return SpectralField(grid, c, real)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(f: SpectralField, target, comments: Iterable[str] = ()) -> None:
    """Write ``f`` as header (K, M, Ly) followed by rows (k, j, re, im).

    ``target`` is a path or a text stream; comment lines start with ``#``.
    """
    own = isinstance(target, (str, Path))
    stream = open(target, "w", newline="") if own else target
    try:
        for line in comments:
            stream.write(f"# {line}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["K", "M", "Ly"])
        w.writerow([f.grid.K, f.grid.M, _fmt(f.grid.Ly)])
        w.writerow(["k", "j", "re", "im"])
        for a, k in enumerate(f.grid.ks):
            for b, j in enumerate(f.grid.js):
                z = f.coeffs[a, b]
                w.writerow([int(k), int(j), _fmt(z.real), _fmt(z.imag)])
    finally:
        if own:
            stream.close()


def read_csv(source, real: bool | None = None) -> SpectralField:
    """Read a field written by :func:`write_csv`."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if rows[0] != ["K", "M", "Ly"] or rows[2] != ["k", "j", "re", "im"]:
        raise ValueError("not a spectral field CSV")
    K, M, Ly = int(rows[1][0]), int(rows[1][1]), float(rows[1][2])
    grid = GridSpec(K, M, Ly)
    c = np.zeros(grid.shape, dtype=complex)
    for k, j, re, im in rows[3:]:
        c[int(k) + K, int(j) + M // 2] = complex(float(re), float(im))
    if real is None:
        real = bool(np.array_equal(c, hermitian_symmetrize(c)))
    return SpectralField(grid, c, real)


def write_trajectory_csv(traj: Trajectory, target, comments: Iterable[str] = ()) -> None:
    """Trajectory snapshots in the field CSV layout with leading (n, t) columns."""
    own = isinstance(target, (str, Path))
    stream = open(target, "w", newline="") if own else target
    try:
        for line in comments:
            stream.write(f"# {line}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["K", "M", "Ly"])
        w.writerow([traj.grid.K, traj.grid.M, _fmt(traj.grid.Ly)])
        w.writerow(["n", "t", "k", "j", "re", "im"])
        ks, js = traj.grid.ks, traj.grid.js
        for n, t in enumerate(traj.times):
            c = traj.coeffs[n]
            for a, k in enumerate(ks):
                for b, j in enumerate(js):
                    z = c[a, b]
                    w.writerow([n, _fmt(t), int(k), int(j), _fmt(z.real), _fmt(z.imag)])
    finally:
        if own:
            stream.close()

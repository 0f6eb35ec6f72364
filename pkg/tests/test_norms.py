import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kp5ctl.norms import (NormKind, bilinear_ratio, l2_norm, norm, slab_trace, xs_norm_sq_array,
                          z_norm)
from kp5ctl.operators import apply_Dx, apply_dx_inv
from kp5ctl.spectral import GridSpec, SpectralField, Trajectory, random_field

seeds = st.integers(0, 2**32 - 1)
GRID = GridSpec(K=6, M=8, Ly=6.0)
KINDS = [NormKind("Hs", 1.0), NormKind("Hs_aniso", 2.5), NormKind("Xs", 2.5), NormKind("Xs", 0.0)]


def field(seed):
    return random_field(GRID, np.random.default_rng(seed))


def unit_mode(grid, k=1, j=0):
    f = SpectralField.from_modes(grid, {(k, j): 1.0, (-k, -j): 1.0})
    return f * (1.0 / l2_norm(f))


def static(f, times):
    return Trajectory(f.grid, times, np.repeat(f.coeffs[None], len(times), axis=0))


def test_rejects_unknown_tag():
    with pytest.raises(ValueError):
        NormKind("H1")


@pytest.mark.parametrize("kind", KINDS)
def test_zero_field(kind):
    assert norm(kind, SpectralField.zeros(GRID)) == 0


def test_single_mode_x0():
    f = unit_mode(GridSpec(4, 4, 3.0))
    assert norm(NormKind("Xs", 0.0), f) ** 2 == pytest.approx(2.0, rel=1e-14)


@given(seeds)
def test_x0_identity(seed):
    f = field(seed)
    lhs = norm(NormKind("Xs", 0.0), f) ** 2
    assert lhs == pytest.approx(l2_norm(f) ** 2 + l2_norm(apply_dx_inv(f)) ** 2, rel=1e-13)


@given(seeds)
def test_xs_monotone_in_s(seed):
    f = field(seed)
    vals = [norm(NormKind("Xs", s), f) for s in np.linspace(-1, 5, 13)]
    assert np.all(np.diff(vals) >= 0)


@given(seeds, st.floats(0.0, 4.0))
def test_norm_equivalence_with_fractional_derivative(seed, s):
    f = field(seed)
    r = norm(NormKind("Hs_aniso", s), f) / l2_norm(apply_Dx(s, f))
    assert 1 - 1e-12 <= r <= 2 ** (s / 2) * (1 + 1e-12)


# norms are square roots of sums of squares, which underflow below ~1e-150
scales = st.floats(-3.0, 3.0).filter(lambda c: c == 0 or abs(c) > 1e-100)


@given(seeds, seeds, scales)
def test_homogeneous_and_subadditive(a, b, c):
    f, h = field(a), field(b)
    for kind in KINDS:
        assert norm(kind, f * c) == pytest.approx(abs(c) * norm(kind, f), rel=1e-10, abs=1e-300)
        assert norm(kind, f + h) <= (norm(kind, f) + norm(kind, h)) * (1 + 1e-10)


def test_batched_norms_match_single():
    fs = np.stack([field(i).coeffs for i in range(3)])
    batch = xs_norm_sq_array(fs, GRID, 2.5)
    for i in range(3):
        assert batch[i] == pytest.approx(xs_norm_sq_array(fs[i], GRID, 2.5), rel=1e-14)


class TestSlabs:
    def test_zero_trajectory(self):
        tr = static(SpectralField.zeros(GRID), np.linspace(0, 3, 49))
        st_ = slab_trace(tr, 2.5, 1.0)
        assert np.all(st_.totals() == 0) and st_.weighted == 0

    def test_exponential_single_mode(self):
        e1 = unit_mode(GRID)
        t = np.linspace(0, 4, 4 * 64 + 1)
        tr = Trajectory(GRID, t, np.exp(-t)[:, None, None] * e1.coeffs[None])
        st_ = slab_trace(tr, 2.5, 0.5)
        x = norm(NormKind("Xs", 2.5), e1)
        for r in st_.slabs:
            assert r.sup_Xs == pytest.approx(math.exp(-r.n) * x, rel=1e-12)
        assert len(st_.slabs) == 4

    @pytest.mark.parametrize("mu,bounded", [(2.0, True), (0.5, False)])
    def test_weighted_norm_tracks_decay_rate(self, mu, bounded):
        e1 = unit_mode(GRID)
        lam = 1.0
        out = []
        for T in (4, 8):
            t = np.linspace(0, T, T * 32 + 1)
            tr = Trajectory(GRID, t, np.exp(-mu * t)[:, None, None] * e1.coeffs[None])
            out.append(slab_trace(tr, 2.5, lam).weighted)
        assert (out[1] <= out[0] * (1 + 1e-12)) == bounded

    def test_needs_a_full_slab(self):
        tr = static(unit_mode(GRID), np.linspace(0, 0.5, 9))
        with pytest.raises(ValueError):
            slab_trace(tr, 2.5, 1.0)


class TestBilinear:
    @given(seeds, st.floats(1e-3, 1e3))
    def test_scale_invariant(self, seed, eps):
        f = field(seed)
        tr = static(f, np.linspace(0, 1, 5))
        tr2 = static(f * eps, np.linspace(0, 1, 5))
        assert bilinear_ratio(tr2, 2.5) == pytest.approx(bilinear_ratio(tr, 2.5), rel=1e-9)

    def test_static_sine(self):
        grid = GridSpec(4, 2, 2 * np.pi)
        s = 2.5
        sin = SpectralField.from_modes(grid, {(1, 0): -0.5j, (-1, 0): 0.5j})
        half_sin2 = SpectralField.from_modes(grid, {(2, 0): -0.25j, (-2, 0): 0.25j})
        T = 2.0
        tr = static(sin, np.linspace(0, T, 9))
        num = math.sqrt(T) * norm(NormKind("Xs", s - 2.5), half_sin2)
        zn = norm(NormKind("Xs", s), sin) + math.sqrt(T) * norm(NormKind("Xs", s + 2.5), sin)
        assert z_norm(tr, s) == pytest.approx(zn, rel=1e-13)
        assert bilinear_ratio(tr, s) == pytest.approx(num / zn**2, rel=1e-12)

    def test_requires_s_above_two(self):
        with pytest.raises(ValueError):
            bilinear_ratio(static(field(0), np.linspace(0, 1, 3)), 2.0)

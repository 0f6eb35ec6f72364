import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kp5ctl.linear_flow import (Propagator, assemble_generator, bona_smith_sweep, duhamel,
                                phi_functions, propagate, propagate_adjoint,
                                propagate_trajectory, regularity_gauge, smoothing_ratio, to_stack)
from kp5ctl.norms import NormKind, l2_norm, norm
from kp5ctl.operators import (DampingProfile, ModelParams, apply_dx5, apply_feedback,
                              apply_transverse, as_matrix)
from kp5ctl.oracles import dense_flow
from kp5ctl.spectral import GridSpec, SpectralField, hermitian_symmetrize, inner_product, random_field
from kp5ctl.stability import energy_residual

seeds = st.integers(0, 2**32 - 1)
P0 = ModelParams()
G8 = DampingProfile.raised_cosine(8)
GRID = GridSpec(K=8, M=8, Ly=8 * math.pi)


def field(seed, grid=GRID, **kw):
    return random_field(grid, np.random.default_rng(seed), **kw)


class TestGenerator:
    def test_free_diagonal(self):
        A = assemble_generator(P0, None, 0.0, K=4).A
        k = np.array([m for m in range(-4, 5) if m != 0], dtype=float)
        np.testing.assert_array_equal(A, np.diag(-1j * k**5))

    def test_viscous_real_part(self):
        A = assemble_generator(ModelParams(epsilon=0.5), None, 0.0, K=4).A
        assert A[5, 5].real <= -16.0  # k = 2

    @pytest.mark.parametrize("eta", [0.0, 0.75, 2.0])
    def test_matches_operator_columns(self, eta):
        p = ModelParams(beta=1.3, gamma=-1, epsilon=0.05)
        A = assemble_generator(p, G8, eta).A

        def rhs(f):
            visc = SpectralField(f.grid, -p.epsilon * np.abs(f.grid.ks[:, None]) ** 5 * f.coeffs,
                                 f.real)
            # free part -i (beta k^5 + gamma eta^2 / k): the flow is e^{-i omega t}
            return visc - apply_dx5(f) * p.beta - apply_transverse(p, f) - apply_feedback(G8, f)

        np.testing.assert_allclose(A, as_matrix(rhs, eta, 8), atol=1e-9 * np.abs(A).max())

    @given(seeds)
    def test_dissipative(self, seed):
        rng = np.random.default_rng(seed)
        A = assemble_generator(ModelParams(epsilon=0.01), G8, float(rng.uniform(0, 3))).A
        v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        assert np.vdot(v, A @ v).real <= 1e-9 * np.abs(A).max() * np.vdot(v, v).real

    def test_needs_K_without_feedback(self):
        with pytest.raises(ValueError):
            assemble_generator(P0, None, 0.0)


class TestPhi:
    def test_scalar_phi_functions(self):
        z = np.array([[[-0.7 + 2.0j]]])
        E, p1, p2 = phi_functions(z, 1.0, 2)
        w = z[0, 0, 0]
        assert E[0, 0, 0] == pytest.approx(np.exp(w))
        assert p1[0, 0, 0] == pytest.approx((np.exp(w) - 1) / w)
        assert p2[0, 0, 0] == pytest.approx((np.exp(w) - 1 - w) / w**2)


class TestPropagate:
    def test_free_mode_phase(self):
        grid = GridSpec(8, 4, 2 * np.pi)
        out = propagate(Propagator.build(grid, P0, None, 1 / 64), SpectralField.from_modes(
            grid, {(3, 1): 1.0}, real=False), 64)
        omega = 3**5 + 1.0 / 3
        assert out.mode(3, 1) == pytest.approx(np.exp(-1j * omega), abs=1e-11)

    def test_viscous_amplitude(self):
        grid = GridSpec(4, 2, 2 * np.pi)
        f = SpectralField.from_modes(grid, {(1, 0): 1.0}, real=False)
        out = propagate(Propagator.build(grid, ModelParams(epsilon=0.3), None, 1 / 8), f, 8)
        assert abs(out.mode(1, 0)) == pytest.approx(math.exp(-0.3), rel=1e-13)

    def test_closed_loop_matches_adaptive_rk(self):
        f = field(7, real=False)
        out = propagate(Propagator.build(GRID, P0, G8, 1 / 32), f, 32)
        v = to_stack(f.coeffs)
        want = np.array([dense_flow(assemble_generator(P0, G8, float(e)).A, v[j], 1.0, 1e-12)
                         for j, e in enumerate(GRID.etas)])
        np.testing.assert_allclose(to_stack(out.coeffs), want, atol=1e-8 * np.abs(v).max())

    @given(seeds)
    @settings(max_examples=10)
    def test_semigroup_and_symmetry(self, seed):
        f = field(seed)
        P = Propagator.build(GRID, P0, G8, 1 / 16)
        two = propagate(P, propagate(P, f, 3), 5)
        once = propagate(P, f, 8)
        np.testing.assert_allclose(two.coeffs, once.coeffs, atol=1e-10 * np.abs(f.coeffs).max())
        np.testing.assert_array_equal(once.coeffs, hermitian_symmetrize(once.coeffs))
        assert np.all(once.coeffs[GRID.K] == 0)

    @given(seeds)
    @settings(max_examples=10)
    def test_contraction(self, seed):
        f = field(seed)
        tr = propagate_trajectory(Propagator.build(GRID, ModelParams(epsilon=0.01), G8, 1 / 32),
                                  f, 64, 4)
        n = [l2_norm(tr.field(i)) for i in range(len(tr))]
        assert np.all(np.diff(n) <= 1e-12 * n[0])

    def test_trajectory_storage(self):
        tr = propagate_trajectory(Propagator.build(GRID, P0, G8, 0.1), field(1), 7, 3)
        np.testing.assert_allclose(tr.times, [0, 0.3, 0.6, 0.7])

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            propagate(Propagator.build(GRID, P0, G8, 0.1), field(1, GridSpec(8, 4, 3.0)), 1)


class TestAdjoint:
    def test_zero_time(self):
        f = field(2)
        assert propagate_adjoint(P0, G8, f, 0.0) is f

    @pytest.mark.parametrize("seed", range(5))
    def test_duality(self, seed):
        rng = np.random.default_rng(seed)
        f, h = random_field(GRID, rng, real=False), random_field(GRID, rng, real=False)
        Sf = propagate(Propagator.build(GRID, P0, G8, 1 / 64), f, 32)
        Sh = propagate_adjoint(P0, G8, h, 0.5)
        lhs, rhs = inner_product(Sf, h), inner_product(f, Sh)
        assert abs(lhs - rhs) <= 1e-10 * l2_norm(f) * l2_norm(h)
        Sh2 = propagate_adjoint(P0, G8, h, 0.5, dt=1 / 64)
        np.testing.assert_allclose(Sh2.coeffs, Sh.coeffs, atol=1e-11 * np.abs(h.coeffs).max())

    def test_adjoint_decay_rate(self):
        grid = GridSpec(8, 2, 2 * np.pi)  # eta in {-1, 0}
        A = assemble_generator(P0, G8, 0.0).A
        lam = -np.max(np.linalg.eigvals(A.conj().T).real)
        h = field(4, grid, eta_max=0.0)
        x0 = NormKind("Xs", 0.0)
        ts = np.linspace(5 / lam, 10 / lam, 41)
        logs = [math.log(norm(x0, propagate_adjoint(P0, G8, h, t))) for t in ts]
        assert -np.polyfit(ts, logs, 1)[0] == pytest.approx(lam, rel=0.05)


class TestDuhamel:
    def test_zero_forcing_is_propagation(self):
        f = field(3)
        F = np.zeros((17,) + GRID.shape, dtype=complex)
        tr = duhamel(P0, G8, f, F, 1.0, 1 / 16)
        np.testing.assert_allclose(tr.final.coeffs,
                                   propagate(Propagator.build(GRID, P0, G8, 1 / 16), f, 16).coeffs,
                                   atol=1e-13)

    def test_constant_single_mode_forcing(self):
        grid = GridSpec(4, 4, 2 * np.pi)
        Fm = SpectralField.from_modes(grid, {(2, 1): 1.0}, real=False).coeffs
        F = np.repeat(Fm[None], 9, axis=0)
        tr = duhamel(P0, None, SpectralField.zeros(grid, real=False), F, 1.0, 1 / 8)
        omega = 2**5 + 1 / 2
        want = (np.exp(-1j * omega) - 1) / (-1j * omega)
        assert tr.final.mode(2, 1) == pytest.approx(want, abs=1e-8)

    def test_second_order_in_time(self):
        f = field(5)
        shape = field(6).coeffs

        def run(n):
            t = np.linspace(0, 1, n + 1)
            F = np.sin(3 * t)[:, None, None] * shape[None]
            return duhamel(P0, G8, f, F, 1.0, 1 / n).final.coeffs

        ref = run(1024)
        errs = [np.abs(run(n) - ref).max() for n in (16, 32, 64)]
        orders = np.log2(np.array(errs[:-1]) / errs[1:])
        assert np.all(orders > 1.8)

    def test_rejects_misaligned_forcing(self):
        with pytest.raises(ValueError):
            duhamel(P0, G8, field(1), np.zeros((5,) + GRID.shape), 1.0, 1 / 8)


class TestEnergyIdentity:
    def test_free_flow_isometry(self):
        tr = propagate_trajectory(Propagator.build(GRID, P0, None, 1 / 64), field(8), 64)
        assert energy_residual(tr, P0, None) <= 1e-10


class TestBonaSmith:
    def test_zero_data(self):
        rep = bona_smith_sweep(P0, G8, SpectralField.zeros(GRID), [1e-1, 1e-2], 0.25, 1 / 64)
        assert rep.err_Z == [0.0, 0.0]

    @pytest.mark.parametrize("sigma", [1.0, 2.5])
    def test_smoothing_bound(self, sigma):
        f = field(9, decay=6.0)
        for eps in (1e-1, 1e-2, 1e-3, 1e-4):
            assert smoothing_ratio(f, eps, sigma, 2.5) <= 2.0

    def test_monotone_differences(self):
        f = field(10, decay=6.0, eta_max=1.0)
        rep = bona_smith_sweep(P0, G8, f, [1e-1, 1e-2, 1e-3], 0.5, 1 / 128)
        assert rep.monotone and rep.rate_fit > 0

    def test_rejects_zero_eps(self):
        with pytest.raises(ValueError):
            bona_smith_sweep(P0, G8, field(1), [0.0], 0.5)


def test_regularity_gauge_is_eps_uniform():
    f = field(11, decay=2.0)
    vals = [regularity_gauge(P0.replace(epsilon=e), G8, f, None, 1.0, 1 / 64)
            for e in (0.0, 1e-3, 1e-2, 1e-1)]
    assert max(vals) / min(vals) < 2.0
    # the same band-limited data on refined grids; the collocated G settles from K = 12 on
    coarse = field(12, kmax=4, decay=2.0)
    consts = []
    for K in (16, 32):
        grid = GridSpec(K, GRID.M, GRID.Ly)
        c = np.zeros(grid.shape, dtype=complex)
        c[K - 8:K + 9] = coarse.coeffs
        consts.append(regularity_gauge(P0, DampingProfile.raised_cosine(K), SpectralField(grid, c),
                                       None, 1.0, 1 / 64))
    assert consts[1] == pytest.approx(consts[0], rel=1e-2)

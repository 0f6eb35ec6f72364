import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kp5ctl.control import (CGStagnationError, HUMOperator, HUMProblem, apply_Lambda,
                            conjugate_gradient, solve_linear_hum, solve_nonlinear_hum)
from kp5ctl.linear_flow import Propagator, _generator, propagate, to_stack
from kp5ctl.norms import xs_norm_sq_array
from kp5ctl.operators import DampingProfile, ModelParams, apply_B
from kp5ctl.oracles import dense_gramian, dense_min_norm_control
from kp5ctl.spectral import GridSpec, SpectralField, inner_product, random_field, to_physical
from kp5ctl.stability import _observation

P0 = ModelParams()
G8 = DampingProfile.raised_cosine(8)
GRID = GridSpec(K=8, M=16, Ly=8 * math.pi)
TINY = GridSpec(K=2, M=2, Ly=2 * math.pi)
G2 = DampingProfile.raised_cosine(2)


def field(seed, grid=GRID, **kw):
    return random_field(grid, np.random.default_rng(seed), **kw)


def scaled(f, amp, s=2.5):
    return f * (amp / math.sqrt(xs_norm_sq_array(f.coeffs, f.grid, s)))


class TestLambda:
    def test_zero(self):
        assert np.all(apply_Lambda(P0, G8, 1.0, SpectralField.zeros(GRID)).coeffs == 0)

    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_positive(self, seed):
        a, b = field(seed), field(seed + 1)
        La, Lb = apply_Lambda(P0, G8, 1.0, a), apply_Lambda(P0, G8, 1.0, b)
        lhs, rhs = inner_product(La, b).real, inner_product(a, Lb).real
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12 * abs(inner_product(La, a)))
        assert inner_product(La, a).real > 0

    def test_quadratic_form_is_control_energy(self):
        op = HUMOperator.get(GRID, P0, G8, 1.0, 1 / 256)
        w = to_stack(field(3).coeffs)
        assert op.ip(w, op.apply(w)) == pytest.approx(op.cost_L2(op.adjoint_path(w)), rel=1e-10)

    def test_matches_dense_gramian(self):
        w = field(4, TINY, real=False)
        got = to_stack(apply_Lambda(P0, G2, 1.0, w).coeffs)
        B = _observation(G2, 2).conj().T
        for j, eta in enumerate(TINY.etas):
            A = _generator(P0, G2, float(eta), 2)
            Lam = dense_gramian(A.conj().T, B.conj().T, 1.0, tol=1e-11)
            want = Lam @ to_stack(w.coeffs)[j]
            assert np.max(np.abs(got[j] - want)) < 1e-8 * np.max(np.abs(want))

    def test_step_independent(self):
        w = field(5)
        a = apply_Lambda(P0, G8, 1.0, w, dt=1 / 64).coeffs
        b = apply_Lambda(P0, G8, 1.0, w, dt=1 / 256).coeffs
        assert np.max(np.abs(a - b)) < 1e-9 * np.max(np.abs(b))

    def test_dt_must_divide_T(self):
        with pytest.raises(ValueError):
            apply_Lambda(P0, G8, 1.0, field(0), dt=0.3)


class TestConjugateGradient:
    def test_energy_nonincreasing(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 20))
        A = X @ X.T + np.eye(20)
        b = rng.standard_normal(20)
        x, hist, energy = conjugate_gradient(lambda v: A @ v, b, lambda p, q: float(p @ q), 1e-12, 100)
        assert np.allclose(A @ x, b)
        assert all(e1 <= e0 + 1e-12 for e0, e1 in zip(energy[:-1], energy[1:]))
        assert hist[-1] <= 1e-12 * hist[0]

    def test_stagnation(self):
        A = np.diag(np.arange(1.0, 11.0))
        with pytest.raises(CGStagnationError) as exc:
            conjugate_gradient(lambda v: A @ v, np.ones(10), lambda p, q: float(p @ q), 1e-14, 2)
        assert len(exc.value.history) == 3

    def test_zero_rhs(self):
        x, hist, _ = conjugate_gradient(lambda v: v, np.zeros(3), lambda p, q: float(p @ q), 1e-10, 5)
        assert np.all(x == 0) and hist == [0.0]


class TestLinearHUM:
    def test_zero_data(self):
        z = SpectralField.zeros(GRID)
        res = solve_linear_hum(HUMProblem(P0, G8, z, z))
        assert res.cg_iters == 0 and np.all(res.q.coeffs == 0) and res.cost == 0

    def test_free_target_needs_no_control(self):
        u0 = field(1, norm=1e-2)
        u1 = propagate(Propagator.build(GRID, P0, G8, 1 / 256), u0, 256)
        res = solve_linear_hum(HUMProblem(P0, G8, u0, u1))
        assert res.cost < 1e-12 * 1e-2
        assert res.terminal_error < 1e-12

    @pytest.mark.parametrize("seed", [0, 1])
    def test_reaches_target(self, seed):
        u0, u1 = field(10 + seed, norm=1e-2), field(20 + seed, norm=1e-2)
        res = solve_linear_hum(HUMProblem(P0, G8, u0, u1))
        assert res.terminal_error <= 1e-6
        assert res.final_state.real and res.q.real

    def test_mode_transfer(self):
        e1 = SpectralField.from_modes(GRID, {(1, 0): 0.5, (-1, 0): 0.5})
        e2 = SpectralField.from_modes(GRID, {(2, 0): 0.5, (-2, 0): 0.5})
        res = solve_linear_hum(HUMProblem(P0, G8, e1, e2))
        assert res.terminal_error <= 1e-6

    def test_minimum_norm_against_dense(self):
        u0, u1 = field(7, TINY, norm=1.0), field(8, TINY, norm=1.0)
        res = solve_linear_hum(HUMProblem(P0, G2, u0, u1, s=0.0))
        B = _observation(G2, 2).conj().T
        dense = 0.0
        for j, eta in enumerate(TINY.etas):
            A = _generator(P0, G2, float(eta), 2)
            dense += dense_min_norm_control(A, B, to_stack(u0.coeffs)[j], to_stack(u1.coeffs)[j],
                                            1.0, steps=256)[0]
        assert res.cost_L2**2 / TINY.parseval_weight == pytest.approx(dense, rel=0.01)

    def test_control_acts_inside_support(self):
        res = solve_linear_hum(HUMProblem(P0, G8, field(30, norm=1e-2), field(31, norm=1e-2)))
        off = G8.samples == 0
        assert off.any()
        for n in (0, len(res.q) // 2, len(res.q) - 1):
            forcing = to_physical(apply_B(G8, res.q.field(n)), nx=G8.n)
            vals = forcing.values[off]
            assert np.max(np.abs(vals)) < 1e-12 * np.max(np.abs(forcing.values))

    def test_cost_is_linear_in_data(self):
        u0, u1 = field(40), field(41)
        a = solve_linear_hum(HUMProblem(P0, G8, u0 * 1e-3, u1 * 1e-3)).cost
        b = solve_linear_hum(HUMProblem(P0, G8, u0 * 2e-3, u1 * 2e-3)).cost
        assert b == pytest.approx(2 * a, rel=1e-8)

    def test_rejects_nonlinear_flag(self):
        z = SpectralField.zeros(GRID)
        with pytest.raises(ValueError):
            solve_linear_hum(HUMProblem(P0, G8, z, z, nonlinear=True))


class TestProblemValidation:
    def test_bad_horizon(self):
        z = SpectralField.zeros(GRID)
        with pytest.raises(ValueError):
            HUMProblem(P0, G8, z, z, T=0.0)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            HUMProblem(P0, G8, SpectralField.zeros(GRID), SpectralField.zeros(TINY))

    def test_mean_zero_required(self):
        c = np.zeros(GRID.shape, dtype=complex)
        c[GRID.K, 0] = 1.0
        with pytest.raises(ValueError):
            HUMProblem(P0, G8, SpectralField(GRID, c), SpectralField.zeros(GRID))


class TestNonlinearHUM:
    def test_zero_data(self):
        z = SpectralField.zeros(GRID)
        res = solve_nonlinear_hum(HUMProblem(P0, G8, z, z, nonlinear=True))
        assert res.outer_iters == 1 and np.all(res.q.coeffs == 0)

    def test_small_data(self):
        amp = 1e-3
        u0, u1 = scaled(field(50, kmax=4), amp), scaled(field(51, kmax=4), amp)
        res = solve_nonlinear_hum(HUMProblem(P0, G8, u0, u1, nonlinear=True))
        assert res.outer_iters <= 8
        assert res.verified_terminal_error <= 1e-3
        assert res.outer_history[-1] <= 1e-10

    def test_reduces_to_linear_cost(self):
        u0, u1 = scaled(field(52, kmax=4), 1.0), scaled(field(53, kmax=4), 1.0)
        lin = solve_linear_hum(HUMProblem(P0, G8, u0 * 1e-5, u1 * 1e-5)).cost
        non = solve_nonlinear_hum(HUMProblem(P0, G8, u0 * 1e-5, u1 * 1e-5, nonlinear=True)).cost
        assert non == pytest.approx(lin, rel=1e-3)

    def test_requires_regularity(self):
        z = SpectralField.zeros(GRID)
        with pytest.raises(ValueError):
            solve_nonlinear_hum(HUMProblem(P0, G8, z, z, s=2.0, nonlinear=True))
        with pytest.raises(ValueError):
            solve_nonlinear_hum(HUMProblem(P0, G8, z, z))

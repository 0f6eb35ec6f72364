import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from kp5ctl.acceptance import well_prepared
from kp5ctl.linear_flow import Propagator, _generator, propagate_trajectory
from kp5ctl.operators import DampingProfile, ModelParams, WeightProfile
from kp5ctl.oracles import dense_gramian, dense_weighted_terms
from kp5ctl.spectral import GridSpec, random_field
from kp5ctl.stability import (WEIGHTED_TERMS, _observation, decay_rate, energy_residual,
                              eps_uniformity_sweep, gramian_scan, observability_gramian,
                              observed_energy, weighted_identity_residual, weighted_terms)

P0 = ModelParams()
G8 = DampingProfile.raised_cosine(8)
GRID = GridSpec(K=8, M=8, Ly=8 * math.pi)


def trajectory(params, g, v0, dt, T):
    return propagate_trajectory(Propagator.build(v0.grid, params, g, dt), v0, int(round(T / dt)))


class TestEnergyIdentity:
    def test_free_flow_conserves(self):
        v0 = random_field(GRID, np.random.default_rng(0))
        assert energy_residual(trajectory(P0, None, v0, 1 / 64, 1.0), P0, None) < 1e-13

    def test_second_order_in_dt(self):
        v0 = well_prepared(GRID, P0, G8, np.random.default_rng(1))
        res = [energy_residual(trajectory(P0, G8, v0, dt, 1.0), P0, G8)
               for dt in (1 / 512, 1 / 1024)]
        assert math.log2(res[0] / res[1]) == pytest.approx(2.0, abs=0.2)

    def test_needs_two_states(self):
        v0 = random_field(GRID, np.random.default_rng(0))
        tr = trajectory(P0, G8, v0, 1 / 64, 1 / 64)
        tr = type(tr)(tr.grid, tr.times[:1], tr.coeffs[:1], tr.real)
        with pytest.raises(ValueError):
            energy_residual(tr, P0, G8)


class TestWeightedIdentity:
    def test_constant_weight_kills_commutators(self):
        psi = WeightProfile.cosine(1.0, 0.0)
        w = random_field(GRID, np.random.default_rng(2)).coeffs
        terms = weighted_terms(w, GRID, P0.replace(epsilon=0.01), G8, psi, 2.5)
        for name in ("dispersion_d2", "dispersion_d1", "dispersion_d0", "transverse",
                     "viscous_commutator"):
            assert abs(terms[name]) < 1e-10 * abs(terms["feedback"])

    def test_no_feedback_terms_without_damping(self):
        w = random_field(GRID, np.random.default_rng(2)).coeffs
        terms = weighted_terms(w, GRID, P0, None, WeightProfile.cosine(1.0, 0.5), 2.5)
        assert terms["feedback"] == 0 and terms["commutator_Es"] == 0

    @given(st.integers(0, 2**32 - 1))
    def test_terms_match_dense(self, seed):
        params = P0.replace(epsilon=0.01)
        psi = WeightProfile.cosine(1.0, 0.5)
        w = random_field(GRID, np.random.default_rng(seed)).coeffs
        fast = weighted_terms(w, GRID, params, G8, psi, 2.5)
        dense = dense_weighted_terms(w, GRID, params, G8, psi, 2.5)
        assert set(fast) == set(WEIGHTED_TERMS)
        for name in WEIGHTED_TERMS:
            assert fast[name] == pytest.approx(dense[name], rel=1e-8, abs=1e-12)

    def test_residual_small(self):
        params = P0.replace(epsilon=0.01)
        v0 = well_prepared(GRID, params, G8, np.random.default_rng(3))
        tr = trajectory(params, G8, v0, 1 / 2048, 0.5)
        assert weighted_identity_residual(tr, params, G8, WeightProfile.cosine(1.0, 0.5), 2.5) < 1e-5


class TestDecayRate:
    def test_free_flow_has_zero_rate(self):
        rep = decay_rate(P0, None, GRID)
        assert rep.lam == pytest.approx(0.0, abs=1e-12)
        assert math.isnan(rep.lam_traj)

    def test_viscous_free_flow(self):
        rep = decay_rate(P0.replace(epsilon=0.1), None, GRID)
        assert rep.lam == pytest.approx(0.1, rel=1e-12)

    def test_frozen_closed_loop_rate(self):
        rep = decay_rate(P0, DampingProfile.raised_cosine(32), GridSpec())
        assert rep.lam == pytest.approx(1.6387148331, rel=1e-9)
        assert rep.lam_traj == pytest.approx(rep.lam, rel=0.1)
        assert not rep.failures

    def test_abscissa_symmetric_in_eta(self):
        rep = decay_rate(P0, G8, GRID)
        by_eta = dict(zip(np.round(rep.etas, 12), rep.abscissa))
        for e, a in by_eta.items():
            if -e in by_eta:
                assert a == pytest.approx(by_eta[-e], abs=1e-12)


class TestGramian:
    def test_matches_dense_quadrature(self):
        g = DampingProfile.raised_cosine(2)
        rep = observability_gramian(P0, g, 0.7, 1.0)
        A = _generator(P0, g, 0.7, 2)
        W = dense_gramian(A, _observation(g, 2), 1.0, tol=1e-11)
        assert np.max(np.abs(rep.W - W)) < 1e-8 * np.max(np.abs(W))

    @pytest.mark.parametrize("eta", [0.0, 0.5, 2.0])
    def test_lyapunov_agrees_with_exact(self, eta):
        a = observability_gramian(P0, G8, eta, 1.0, method="exact")
        b = observability_gramian(P0, G8, eta, 1.0, method="lyapunov")
        assert np.max(np.abs(a.W - b.W)) < 1e-9 * np.max(np.abs(a.W))

    @given(st.floats(-3, 3), st.floats(0.05, 2.0))
    def test_hermitian_psd(self, eta, T):
        rep = observability_gramian(P0, G8, eta, T)
        assert np.allclose(rep.W, rep.W.conj().T, atol=1e-12 * np.abs(rep.W).max())
        assert rep.lambda_min > 0
        assert rep.C_T == pytest.approx(1 / rep.lambda_min)

    def test_vanishes_as_T_shrinks(self):
        lams = [observability_gramian(P0, G8, 0.0, T).lambda_min for T in (1.0, 0.1, 0.01)]
        assert lams[0] > lams[1] > lams[2]

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            observability_gramian(P0, G8, 0.0, 1.0, method="simpson")

    def test_frozen_default_grid(self):
        scan = gramian_scan(P0, DampingProfile.raised_cosine(32), GridSpec(), 1.0)
        assert scan.lambda_min == pytest.approx(0.228884816, rel=1e-8)
        assert scan.argmin.eta == 0.0

    def test_vmin_attains_lambda(self):
        rep = observability_gramian(P0, G8, 0.0, 1.0)
        v = rep.v_min
        ks = np.concatenate([np.arange(-8, 0), np.arange(1, 9)]).astype(float)
        x0 = np.sum((1 + 1 / ks**2) * np.abs(v) ** 2)
        assert x0 == pytest.approx(1.0)
        assert np.vdot(v, rep.W @ v).real == pytest.approx(rep.lambda_min, rel=1e-10)


class TestObservedEnergy:
    @pytest.mark.parametrize("eps", [0.0, 0.01])
    def test_energy_matches_quadrature(self, eps):
        params = P0.replace(epsilon=eps)
        v0 = random_field(GRID, np.random.default_rng(4))
        a = observed_energy(params, G8, v0, 1.0, "energy")
        b = observed_energy(params, G8, v0, 1.0, "quadrature")
        assert a == pytest.approx(b, rel=1e-8)

    def test_gramian_quadratic_form(self):
        grid = GridSpec(K=8, M=2, Ly=2 * math.pi)
        v0 = random_field(grid, np.random.default_rng(5))
        total = 0.0
        for j, eta in enumerate(grid.etas):
            W = observability_gramian(P0, G8, float(eta), 1.0).W
            v = np.delete(v0.coeffs[:, j], 8)
            total += np.vdot(v, W @ v).real
        assert observed_energy(P0, G8, v0, 1.0) == pytest.approx(grid.parseval_weight * total,
                                                                rel=1e-9)


class TestEpsSweep:
    def test_single_entry_trivially_uniform(self):
        sw = eps_uniformity_sweep(P0, G8, GRID, [0.0])
        assert sw.C_T_ratio == 1.0 and sw.lam_ratio == 1.0 and sw.uniform()

    def test_rate_grows_with_eps(self):
        sw = eps_uniformity_sweep(P0, G8, GRID, [0.0, 1e-2, 1e-1])
        assert sw.lam_nondecreasing
        assert len(sw.rows()) == 3

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            eps_uniformity_sweep(P0, G8, GRID, [0.0, 1.5])


def test_generator_expm_consistency():
    A = _generator(P0, G8, 0.5, 8)
    W = observability_gramian(P0, G8, 0.5, 2.0).W
    W1 = observability_gramian(P0, G8, 0.5, 1.0).W
    E = scipy.linalg.expm(A)
    # W(2) = W(1) + E* W(1) E
    assert np.allclose(W, W1 + E.conj().T @ W1 @ E, atol=1e-10 * np.abs(W).max())

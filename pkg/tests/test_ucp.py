import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kp5ctl.operators import DampingProfile, ModelParams
from kp5ctl.oracles import exact_resonant_pairs
from kp5ctl.spectral import GridSpec
from kp5ctl.ucp import (dispersion, one_sided_vanishing_check, resonance_groups,
                        restriction_diagnostic, restriction_gram, restriction_scan,
                        ucp_flow_check)

P0 = ModelParams()
ARC = (math.pi / 2, 3 * math.pi / 2)


class TestDispersion:
    @pytest.mark.parametrize("k, eta, want", [(1, 0.0, 1.0), (2, 1.0, 32.5), (-1, 2.0, -5.0)])
    def test_values(self, k, eta, want):
        assert dispersion(P0, k, eta) == pytest.approx(want)

    @given(st.integers(1, 50), st.floats(-10, 10))
    def test_odd_in_k(self, k, eta):
        assert dispersion(P0, -k, eta) == pytest.approx(-dispersion(P0, k, eta))

    def test_zero_mode(self):
        with pytest.raises(ValueError):
            dispersion(P0, 0, 1.0)


class TestResonance:
    def test_eta_zero_has_no_groups(self):
        assert resonance_groups(P0, 0.0, 16).nontrivial() == []

    def test_pair_at_62(self):
        flt = resonance_groups(P0, math.sqrt(62.0), 8)
        ext = resonance_groups(P0, None, 8, eta2="62", exact=True)
        for tab in (flt, ext):
            assert tab.contains_group([1, 2]) and tab.contains_group([-1, -2])
        assert ext.exact and ext.tol == 0.0
        assert Fraction(63) in [gr.omega for gr in ext.groups]

    def test_tol_zero_selects_exact(self):
        assert resonance_groups(P0, None, 8, tol=0, eta2=Fraction(62)).exact

    @pytest.mark.parametrize("eta2", ["62", "10", "7/3", "0"])
    def test_exact_matches_pairwise_oracle(self, eta2):
        tab = resonance_groups(P0, None, 10, eta2=eta2, exact=True)
        pairs = {p for gr in tab.groups for p in itertools.combinations(gr.modes, 2)}
        assert pairs == set(exact_resonant_pairs(1, 1, eta2, 10))

    def test_partition(self):
        tab = resonance_groups(P0, 1.3, 12)
        modes = sorted(m for gr in tab.groups for m in gr.modes)
        assert modes == [k for k in range(-12, 13) if k != 0]

    def test_needs_eta(self):
        with pytest.raises(ValueError):
            resonance_groups(P0, None, 8)

    def test_serializable(self):
        d = resonance_groups(P0, None, 4, eta2="62", exact=True).to_dict()
        assert d["eta2"] == "62" and d["exact"]


class TestRestriction:
    def test_single_mode_gives_length(self):
        assert restriction_diagnostic([3], (0.2, 1.7)) == pytest.approx(1.5)

    def test_pair_closed_form(self):
        assert restriction_diagnostic([1, 2], ARC) == pytest.approx(math.pi - 2, rel=1e-13)

    def test_gram_hermitian(self):
        Mg = restriction_gram([-3, 0, 2, 5], (0.1, 2.0))
        assert np.allclose(Mg, Mg.conj().T)

    @given(st.lists(st.integers(-10, 10), min_size=1, max_size=4, unique=True),
           st.floats(0.1, 3.0), st.floats(0.1, 2.0))
    def test_monotone_in_interval(self, modes, length, extra):
        small = restriction_diagnostic(modes, (0.0, length))
        big = restriction_diagnostic(modes, (0.0, min(length + extra, 6.0)))
        assert big >= small - 1e-12
        assert small > 0

    def test_scan_matches_brute_force(self):
        K, size = 4, 3
        ks = [k for k in range(-K, K + 1) if k != 0]
        brute = min(restriction_diagnostic(c, ARC) for c in itertools.combinations(ks, size))
        # the scan covers translates outside {-K..K}, so it can only go lower
        scan = restriction_scan(K, size, ARC)
        assert scan.sigma_min <= brute + 1e-14
        assert scan.sigma_min == pytest.approx(restriction_diagnostic(scan.worst_set, ARC))
        assert scan.n_patterns == math.comb(2 * K, size - 1)

    def test_frozen_five_sets(self):
        scan = restriction_scan(32, 5, ARC)
        assert scan.sigma_min == pytest.approx(0.014648813707506479, rel=1e-9)

    @pytest.mark.parametrize("interval", [(0.0, 0.0), (0.0, 2 * math.pi), (1.0, 0.5)])
    def test_bad_interval(self, interval):
        with pytest.raises(ValueError):
            restriction_diagnostic([1], interval)


class TestVanishing:
    def test_zero_polynomial(self):
        v = one_sided_vanishing_check([0.0, 0.0, 0.0], ARC)
        assert v.vanishes and v.coefficients_small and v.passed

    def test_single_mode(self):
        v = one_sided_vanishing_check({1: 1.0}, ARC)
        assert not v.vanishes and v.passed
        assert v.sup_abs == pytest.approx(1.0)
        assert v.restricted_norm == pytest.approx(math.sqrt(math.pi))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 8))
    def test_lower_bound(self, seed, n):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = one_sided_vanishing_check(list(c), ARC)
        assert v.bound_holds and v.passed

    def test_rejects_negative_modes(self):
        with pytest.raises(ValueError):
            one_sided_vanishing_check({-1: 1.0}, ARC)


class TestFlowCheck:
    GRID = GridSpec(K=8, M=16, Ly=8 * math.pi)
    G = DampingProfile.raised_cosine(8)

    def test_full_circle_is_identity(self):
        rep = ucp_flow_check(P0, None, 0.7, self.GRID, interval=(0.0, 2 * math.pi))
        assert rep.lambda_min == pytest.approx(0.7, rel=1e-10)

    def test_frozen_values(self):
        want = [0.10570, 0.22356, 0.47594, 0.97304]
        got = [ucp_flow_check(P0, self.G, T, self.GRID).lambda_min for T in (0.25, 0.5, 1.0, 2.0)]
        assert got == pytest.approx(want, abs=1e-5)
        assert all(b > a for a, b in zip(got[:-1], got[1:]))

    def test_shrinking_window(self):
        lams = [ucp_flow_check(P0, None, 1.0, self.GRID, interval=(math.pi - w, math.pi + w)).lambda_min
                for w in (1.5, 1.0, 0.5)]
        assert lams[0] > lams[1] > lams[2] > 0

    def test_requires_grid_or_profile(self):
        with pytest.raises(ValueError):
            ucp_flow_check(P0, None, 1.0)
        with pytest.raises(ValueError):
            ucp_flow_check(P0, self.G, 0.0)

"""Tests for Dykhne actions, branch points and the closed-form probabilities."""
import logging
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from physics.errors import BranchAmbiguity
from physics.families import FourStateParams, demo_three_state, reduced_two_state
from physics.model_core import DiabaticModel, gap_squared
from physics.propagator import propagate_coulomb_halfline, propagate_scattering
from physics.semiclassical import (
    avg_n_exact,
    be_survival,
    branch_points,
    dykhne_action,
    dykhne_probability,
    p14_exact,
    p22_exact_eps0,
    p3_semiclassical,
    p_psi1_to_4,
)


class TestBranchPoints:
    @given(
        b=st.floats(min_value=0.2, max_value=5.0),
        g=st.floats(min_value=0.1, max_value=3.0),
        eps=st.floats(min_value=0.0, max_value=10.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_roots_are_zeros_of_the_gap(self, b, g, eps):
        model = reduced_two_state(b, g, eps)
        scale = (eps + g + 1.0) ** 2
        for root in branch_points(b, g, eps):
            assert root.imag > 0
            assert abs(gap_squared(model, root)[0]) < 1e-9 * scale

    def test_roots_merge_at_zero_energy(self):
        t1, t2 = branch_points(1.0, 0.7, 0.0)
        assert t1 == pytest.approx(0.7j)
        assert t2 == pytest.approx(0.7j)

    @pytest.mark.parametrize("b,g", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_domain(self, b, g):
        with pytest.raises(ValueError):
            branch_points(b, g, 1.0)


class TestDykhne:
    @pytest.mark.parametrize("b,g", [(1.0, 0.5), (2.0, 0.3), (0.5, 1.0)])
    def test_landau_zener_action_is_exact(self, b, g):
        # ΔE = sqrt(b²t² + 4g²) vanishes at 2ig/b; the action gives exp(−2πg²/b)
        model = DiabaticModel(B=[b, 0.0], A=[[0.0, g], [g, 0.0]])
        action = dykhne_action(model, 2j * g / b)
        assert action == pytest.approx(np.pi * g * g / b, rel=1e-6)

    def test_action_to_start_point_is_zero(self):
        model = reduced_two_state(1.0, 1.0, 2.0)
        assert dykhne_action(model, 1.0) == 0.0

    def test_segment_through_other_root_is_ambiguous(self):
        model = DiabaticModel(B=[1.0, 0.0], A=[[0.0, 0.5], [0.5, 0.0]])
        with pytest.raises(BranchAmbiguity):
            dykhne_action(model, 1.0 + 2j, t0=1.0, other_root=1.0 + 1j)

    def test_zero_energy_is_a_tie(self):
        res = dykhne_probability(1.0, 0.8, 0.0)
        assert res.selected == "tie"
        assert res.actions[0] == pytest.approx(res.actions[1], rel=1e-9)

    @pytest.mark.parametrize("eps", [0.4, 2.0, 6.0])
    def test_selects_the_smaller_action(self, eps):
        res = dykhne_probability(1.0, 2.0, eps)
        assert res.selected in ("t1", "t2")
        valid = [a for a in res.actions if a is not None]
        assert res.action == min(valid)
        assert res.P == pytest.approx(min(1.0, np.exp(-2 * res.action)))
        assert 0.0 <= res.P <= 1.0

    def test_roots_are_logged_as_complex(self, caplog):
        with warnings.catch_warnings():
            warnings.simplefilter("error", np.exceptions.ComplexWarning)
            with caplog.at_level(logging.DEBUG, logger="physics.semiclassical"):
                dykhne_probability(1.0, 2.0, 4.0)
        messages = [r.getMessage() for r in caplog.records if "action to" in r.getMessage()]
        assert messages
        assert all("j =" in m for m in messages)

    def test_eta_scales_probability(self):
        one = dykhne_probability(1.0, 2.0, 3.0, eta=1.0)
        half = dykhne_probability(1.0, 2.0, 3.0, eta=0.5)
        assert half.action == pytest.approx(one.action)
        assert half.P == pytest.approx(min(1.0, 0.5 * np.exp(-2 * one.action)))

    def test_three_state_estimate(self):
        b, g, eps = 1.0, 1.0, 3.0
        expected = (1 - np.exp(-2 * np.pi * g * g / b)) * dykhne_probability(b, g, eps).P
        assert p3_semiclassical(b, g, eps) == pytest.approx(expected)

    def test_three_state_estimate_needs_positive_energy(self):
        with pytest.raises(ValueError):
            p3_semiclassical(1.0, 1.0, 0.0)


class TestClosedForms:
    def test_be_survival(self):
        assert be_survival([0.5, 0.5j]) == pytest.approx(np.exp(-np.pi))
        assert be_survival([]) == 1.0

    def test_p22_limits(self):
        assert p22_exact_eps0(1e-6, 1.0) == pytest.approx(1.0)
        assert p22_exact_eps0(3.0, 1.0) < 1e-10

    def test_avg_n(self):
        assert avg_n_exact(0.5, 0.5) == pytest.approx(2 * np.expm1(np.pi / 2))
        assert avg_n_exact(0.0, 0.5) == 0.0

    def test_four_state_in_phase(self):
        p = FourStateParams(1.0, 0.5, 0.5, 0.5, 0.5)
        probs = p14_exact(p)
        assert probs.p11 == pytest.approx(np.exp(-np.pi))
        assert probs.p14 == pytest.approx(np.exp(-np.pi) * np.expm1(np.pi / 2) ** 2)
        assert probs.p11 + probs.p14 + probs.p_deg == pytest.approx(1.0)

    def test_four_state_destructive_interference(self):
        probs = p14_exact(FourStateParams(1.0, -0.5, 0.5, 0.5, 0.5))
        assert probs.p14 == pytest.approx(0.0, abs=1e-12)

    @given(phi=st.floats(min_value=0.0, max_value=2 * np.pi), g=st.floats(min_value=0.05, max_value=1.5))
    @settings(max_examples=60, deadline=None)
    def test_four_state_probabilities_are_valid(self, phi, g):
        probs = p14_exact(FourStateParams(1.0, g * np.exp(1j * phi), g, g, g))
        for value in (probs.p11, probs.p14, probs.p_deg):
            assert -1e-12 <= value <= 1 + 1e-12

    def test_psi1_to_4(self):
        p = FourStateParams(1.0, 0.5, 0.5, 0.5, 0.5)
        assert p_psi1_to_4(p) == pytest.approx(p14_exact(p).p14 / (1 - np.exp(-np.pi)))


@pytest.mark.slow
class TestAgainstPropagation:
    @pytest.mark.parametrize("eps", [1.0, 2.0, 4.0, 6.0, 8.0])
    def test_dykhne_matches_coulomb_propagation(self, eps, cfg):
        b, g = 1.0, 2.0
        res = propagate_coulomb_halfline(reduced_two_state(b, g, eps), 0, cfg)
        assert dykhne_probability(b, g, eps).P == pytest.approx(res.row[0], abs=0.05)

    def test_far_root_takes_over_at_high_energy(self):
        assert dykhne_probability(1.0, 2.0, 8.0).selected == "t2"

    @pytest.mark.parametrize("g", [1.0, 1.5, 2.5])
    def test_three_state_estimate_tracks_propagation(self, g, cfg):
        energies = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0]
        numeric = np.array([propagate_scattering(demo_three_state(1.0, g, eps), 0, cfg).row[1] for eps in energies])
        estimate = np.array([p3_semiclassical(1.0, g, eps) for eps in energies])
        assert_allclose(estimate, numeric, atol=0.05)
        # sigmoid in ε
        assert np.all(np.diff(numeric) >= -1e-3)

"""Tests for the interaction-picture propagator, scattering readout and two-time paths."""
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from physics.errors import DegenerateSlopes, NotConverged, SingularTime
from physics.families import (
    FourStateParams,
    compose_from_level1,
    demo_three_state,
    effective_coulomb_3state,
    four_state_model,
    reduce_three_state,
    reduced_two_state,
    three_state_model,
    uniform_chain,
    chain_model,
)
from physics.model_core import DiabaticModel
from physics.propagator import (
    PathLeg,
    ScatterConfig,
    TwoTimePath,
    adiabatic_transport,
    check_scattering,
    core_window,
    dressed_basis,
    evolution_matrix,
    evolve,
    expectation_n,
    propagate_coulomb_halfline,
    propagate_scattering,
    propagate_two_time,
    rk4_fixed,
)
from physics.semiclassical import avg_n_exact, be_survival, p14_exact, p22_exact_eps0, p_psi1_to_4


class TestScatterConfig:
    def test_collects_every_problem(self):
        with pytest.raises(ValueError) as info:
            ScatterConfig(t_max=-1.0, window_check=1.5, readout="sideways")
        message = str(info.value)
        assert "t_max" in message
        assert "window_check" in message
        assert "readout" in message

    def test_rho_derived_from_slopes(self, lz_model):
        assert ScatterConfig().resolved_rho(lz_model) == pytest.approx(1e-4)
        assert ScatterConfig(rho=0.01).resolved_rho(lz_model) == 0.01

    def test_window_threshold_floor(self):
        assert ScatterConfig(rel_tol=1e-12).window_threshold() == pytest.approx(5e-4)


class TestEvolve:
    def test_unitary(self, lz_model, cfg):
        U = evolution_matrix(lz_model, -5.0, 5.0, cfg)
        assert_allclose(U.conj().T @ U, np.eye(2), atol=1e-8)

    def test_matches_fixed_step_oracle(self, cfg):
        model = demo_three_state(1.0, 0.6, 1.5)
        psi0 = np.array([1.0, 0.0, 0.0], dtype=complex)
        adaptive = evolve(model, -3.0, 3.0, psi0, cfg)
        oracle = rk4_fixed(model, -3.0, 3.0, psi0, h=1e-3)
        assert_allclose(adaptive, oracle, atol=1e-7)

    def test_backward_evolution_inverts(self, lz_model, cfg):
        psi0 = np.array([0.6, 0.8j])
        forward = evolve(lz_model, -2.0, 4.0, psi0, cfg)
        back = evolve(lz_model, 4.0, -2.0, forward, cfg)
        assert_allclose(back, psi0, atol=1e-8)

    def test_full_window_time_reversal(self, lz_model, cfg):
        T = core_window(lz_model, cfg)
        psi0 = np.array([1.0, 0.0], dtype=complex)
        forward = evolve(lz_model, -T, T, psi0, cfg)
        assert_allclose(evolve(lz_model, T, -T, forward, cfg), psi0, atol=1e-6)

    def test_coulomb_pole_endpoints(self, cfg):
        model = reduced_two_state(1.0, 0.5, 1.0)
        with pytest.raises(SingularTime):
            evolve(model, 0.0, 1.0, np.array([1.0, 0.0]), cfg)
        with pytest.raises(SingularTime):
            rk4_fixed(model, -1.0, 1.0, np.array([1.0, 0.0]))

    def test_coulomb_model_matches_oracle_off_the_pole(self, cfg):
        model = reduced_two_state(1.0, 0.5, 1.0)
        psi0 = np.array([1.0, 0.0], dtype=complex)
        adaptive = evolve(model, 0.5, 2.0, psi0, cfg)
        oracle = rk4_fixed(model, 0.5, 2.0, psi0, h=1e-3)
        assert_allclose(adaptive, oracle, atol=1e-7)


class TestReadout:
    def test_degenerate_levels_must_be_allowed(self):
        m = DiabaticModel(B=[1.0, 0.0, 0.0], A=[[0, 1, 1], [1, 0, 0], [1, 0, 0]])
        with pytest.raises(DegenerateSlopes):
            check_scattering(m)

    def test_coupled_degenerate_levels(self):
        m = DiabaticModel(B=[1.0, 0.0, 0.0], A=[[0, 1, 0], [1, 0, 1], [0, 1, 0]], degenerate_allowed=True)
        with pytest.raises(DegenerateSlopes, match="directly coupled"):
            check_scattering(m)

    def test_dressed_basis_connects_to_diabatic_levels(self):
        m = four_state_model(FourStateParams(1.0, 0.5, 0.5, 0.5, 0.5))
        W = dressed_basis(m, 60.0)
        assert_allclose(W.conj().T @ W, np.eye(4), atol=1e-12)
        assert np.min(np.abs(np.diag(W))) > 0.99

    def test_core_window_is_capped(self, lz_model):
        assert core_window(lz_model, ScatterConfig(t_max=20.0)) == 20.0
        assert core_window(lz_model, ScatterConfig()) > 10.0


class TestScattering:
    def test_landau_zener(self, lz_model, cfg):
        res = propagate_scattering(lz_model, 0, cfg)
        p = np.exp(-2 * np.pi * 0.25)
        assert res.converged
        assert_allclose(res.row, [p, 1 - p], atol=1e-4)
        assert res.norm_drift < 1e-6

    def test_full_matrix_is_doubly_stochastic(self, lz_model, cfg):
        res = propagate_scattering(lz_model, None, cfg)
        assert res.probabilities.sources == (0, 1)
        assert res.probabilities.residual_row < 1e-6
        assert res.probabilities.residual_col < 1e-6

    def test_vector_initial_state(self, lz_model, cfg):
        res = propagate_scattering(lz_model, [1.0, 0.0], cfg)
        assert res.row.sum() == pytest.approx(1.0, abs=1e-6)

    def test_short_window_is_flagged(self, lz_model):
        res = propagate_scattering(lz_model, 0, ScatterConfig(t_max=4.0, window_policy="flag"))
        assert not res.converged
        assert res.window == 4.0

    def test_short_window_raises_after_doubling(self, lz_model):
        with pytest.raises(NotConverged):
            propagate_scattering(lz_model, 0, ScatterConfig(t_max=4.0))

    @pytest.mark.parametrize("phi", [np.pi / 4, np.pi / 2])
    def test_window_check_uses_degenerate_group_sums(self, phi, cfg):
        p = FourStateParams(1.0, 0.5 * np.exp(1j * phi), 0.5, 0.5, 0.5)
        res = propagate_scattering(four_state_model(p), 0, replace(cfg, window_policy="flag"))
        exact = p14_exact(p)
        assert res.converged
        assert res.window_deviation <= cfg.window_threshold()
        assert_allclose(res.group_probabilities[0], [exact.p11, exact.p_deg, exact.p14], atol=1e-3)

    def test_halving_rho_and_rel_tol(self, cfg):
        model = reduced_two_state(1.0, 1.0, 0.0)
        rho = cfg.resolved_rho(model)
        base = propagate_coulomb_halfline(model, 0, cfg).row
        half_rho = propagate_coulomb_halfline(model, 0, replace(cfg, rho=rho / 2)).row
        half_tol = propagate_coulomb_halfline(model, 0, replace(cfg, rel_tol=cfg.rel_tol / 2)).row
        assert_allclose(half_rho, base, atol=1e-4)
        assert_allclose(half_tol, base, atol=1e-5)

    @pytest.mark.slow
    @pytest.mark.parametrize("ratio", [0.5, 1.0, 4.0])
    def test_coulomb_halfline_at_zero_energy(self, ratio, cfg):
        # g²/b = ratio with b = 1, starting on the Coulomb level
        g = np.sqrt(ratio)
        res = propagate_coulomb_halfline(reduced_two_state(1.0, g, 0.0), 0, cfg)
        assert res.row[0] == pytest.approx(p22_exact_eps0(g, 1.0), abs=1e-3)

    @pytest.mark.slow
    @pytest.mark.parametrize("phi", [0.0, np.pi / 2])
    def test_effective_coulomb_model_level4(self, phi, cfg):
        p = FourStateParams(1.0, 0.5 * np.exp(1j * phi), 0.5, 0.5, 0.5)
        res = propagate_coulomb_halfline(effective_coulomb_3state(p), 0, cfg)
        assert res.row[2] == pytest.approx(p_psi1_to_4(p), abs=1e-2)

    @pytest.mark.slow
    def test_uniform_chain_average_occupation(self, cfg):
        g, beta = 0.2, 0.5
        res = propagate_scattering(chain_model(uniform_chain(12, beta, g)), 0, cfg)
        assert expectation_n(res.state) == pytest.approx(avg_n_exact(g, beta), rel=2e-3)

    @pytest.mark.slow
    def test_three_state_brundobler_elser(self, reference_family, cfg):
        res = propagate_scattering(three_state_model(reference_family, 1.0), None, cfg)
        l12, l13, l23 = reference_family.adiabaticity()
        assert res.probabilities.P[0, 0] == pytest.approx(be_survival([np.sqrt(l12), np.sqrt(l13)]), abs=1e-4)
        assert res.probabilities.P[2, 2] == pytest.approx(be_survival([np.sqrt(l13), np.sqrt(l23)]), abs=1e-4)

    @pytest.mark.slow
    @pytest.mark.parametrize("phi", [0.0, np.pi / 2, np.pi])
    def test_four_state_exact_solution(self, phi, cfg):
        p = FourStateParams(1.0, 0.5 * np.exp(1j * phi), 0.5, 0.5, 0.5)
        res = propagate_scattering(four_state_model(p), 0, cfg)
        exact = p14_exact(p)
        assert res.row[0] == pytest.approx(exact.p11, abs=1e-3)
        assert res.row[3] == pytest.approx(exact.p14, abs=1e-3)
        assert res.group_probabilities[0, res.groups.index((1, 2))] == pytest.approx(exact.p_deg, abs=1e-3)

    @pytest.mark.slow
    def test_level1_row_from_coulomb_reduction(self, reference_family, cfg):
        splitter = reduce_three_state(reference_family)
        effective = propagate_coulomb_halfline(splitter.model, splitter.psi1, cfg)
        composed = compose_from_level1(splitter.p_fast, effective.probabilities)
        full = propagate_scattering(three_state_model(reference_family, 1.0), 0, cfg)
        assert_allclose(full.row, [composed.p11, composed.p12, composed.p13], atol=5e-3)


class TestAdiabaticTransport:
    def test_constant_generator_gives_phases(self):
        H = np.diag([1.0, -2.0])
        U = adiabatic_transport(lambda s: H, lambda s: H, np.linspace(0.0, 2.0, 101))
        assert_allclose(U, np.diag(np.exp(-1j * np.array([2.0, -4.0]))), atol=1e-12)

    def test_fast_turning_frame_is_rejected(self):
        def frame(s):
            c, sn = np.cos(s), np.sin(s)
            R = np.array([[c, -sn], [sn, c]])
            return R @ np.diag([1.0, -1.0]) @ R.T

        with pytest.raises(NotConverged):
            adiabatic_transport(frame, frame, np.linspace(0.0, 3.0, 3))


class TestTwoTimePaths:
    def test_path_must_be_contiguous(self):
        with pytest.raises(ValueError, match="contiguous"):
            TwoTimePath((PathLeg("t", -1.0, 1.0, 1.0), PathLeg("tau", 2.0, 3.0, 1.0)))

    def test_rectangle_shape(self):
        path = TwoTimePath.rectangle(3.0, 8.0)
        assert [leg.vary for leg in path.legs] == ["tau", "t", "tau"]
        assert path.legs[0].endpoints()[0] == (-8.0, 1.0)
        assert path.legs[-1].endpoints()[1] == (8.0, 1.0)

    @pytest.mark.slow
    def test_zero_curvature_path_independence(self, reference_family):
        cfg = ScatterConfig(rel_tol=1e-10, abs_tol=1e-12, leg_method="ode")
        around = propagate_two_time(reference_family, TwoTimePath.rectangle(2.0, 8.0, tau_ref=1.0), cfg)
        direct = propagate_two_time(reference_family, TwoTimePath.straight(1.0, 8.0), cfg)
        assert_allclose(around, direct, atol=1e-6)

    @pytest.mark.parametrize("t", [-1000.0, 1000.0])
    def test_tau_leg_far_from_crossings_is_adiabatic(self, reference_family, t):
        U = propagate_two_time(reference_family, TwoTimePath((PathLeg("tau", 1.0, 4.0, t),)))
        assert_allclose(U.conj().T @ U, np.eye(3), atol=1e-8)
        assert 1.0 - np.min(np.abs(np.diag(U)) ** 2) <= 10.0 / abs(t)

    @pytest.mark.slow
    def test_rectangle_at_full_window(self, reference_family, cfg):
        around = propagate_two_time(reference_family, TwoTimePath.rectangle(2.0, 1000.0, tau_ref=1.0), cfg)
        direct = propagate_two_time(reference_family, TwoTimePath.straight(1.0, 1000.0), cfg)
        assert_allclose(np.abs(around) ** 2, np.abs(direct) ** 2, atol=2e-3)

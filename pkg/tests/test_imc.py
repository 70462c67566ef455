"""Controller synthesis, the discrete loop stepper, and the power loop."""

import math

import numpy as np
import pytest

from fcairpath import imc, lti, plant
from fcairpath.lti import LtiError, PolynomialRatio, TransferMatrix


@pytest.fixture(scope="module")
def design():
    return plant.design_plant()


@pytest.fixture(scope="module")
def controller(design):
    return imc.design_controller(design, imc.design_filter(imc.IMCConfig()))


def simulate_ticks(stepper, plant_d, r, n_ticks):
    """Drive a discrete truth plant with the stepper's output and return
    the (y, u, mismatch) histories."""
    xp = np.zeros(plant_d.n_states)
    ys = np.zeros((n_ticks, plant_d.n_outputs))
    us = np.zeros((n_ticks, plant_d.B.shape[1]))
    mism = np.zeros(n_ticks)
    for k in range(n_ticks):
        y = plant_d.C @ xp
        mism[k] = np.max(np.abs(y - stepper.model_output()))
        u = stepper.step(r, y)
        xp = plant_d.A @ xp + plant_d.B @ u
        ys[k] = y
        us[k] = u
    return ys, us, mism


class TestFilter:
    def test_unity_dc_and_orders(self):
        cfg = imc.IMCConfig(tau1=0.3, tau2=0.1, n1=2, n2=3)
        f = imc.design_filter(cfg)
        np.testing.assert_allclose(f.dc_gain(), np.eye(2), atol=1e-14)
        assert f[0, 0].den_degree == 2
        assert f[1, 1].den_degree == 3
        w = 1.0 / 0.3
        assert abs(f[0, 0](1j * w)) == pytest.approx(0.5, abs=1e-12)

    def test_rejects_bad_parameters(self):
        with pytest.raises(LtiError):
            imc.IMCConfig(tau1=0.0)
        with pytest.raises(LtiError):
            imc.IMCConfig(n2=0)


class TestDesign:
    def test_shared_denominator_realization_is_compact(self, controller):
        assert controller.q_ss.n_states == 9
        assert controller.q_ss.is_stable()
        assert controller.model_ss.n_states == 6

    def test_nominal_complementary_sensitivity_is_the_filter(self, design,
                                                             controller):
        f = imc.design_filter(imc.IMCConfig())
        for w in (1e-3, 0.5, 5.0, 50.0, 500.0):
            gq = design.freq_response(w) @ controller.q_tf.freq_response(w)
            np.testing.assert_allclose(gq, f.freq_response(w),
                                       rtol=1e-8, atol=1e-10)

    def test_structured_inverse_matches_numeric_inverse(self, design,
                                                        controller):
        # oracle: invert the frequency response matrix numerically instead
        # of manipulating polynomials
        f = imc.design_filter(imc.IMCConfig())
        for w in (1e-2, 1.0, 30.0, 1e3):
            q_direct = np.linalg.solve(design.freq_response(w),
                                       f.freq_response(w))
            np.testing.assert_allclose(controller.q_tf.freq_response(w),
                                       q_direct, rtol=1e-7, atol=1e-12)

    def test_state_space_agrees_with_rational_form(self, controller):
        for w in (0.1, 2.0, 40.0):
            np.testing.assert_allclose(controller.q_ss.freq_response(w),
                                       controller.q_tf.freq_response(w),
                                       rtol=1e-7, atol=1e-10)

    def test_config_recovered_from_filter(self, controller):
        cfg = controller.config
        assert cfg.tau1 == pytest.approx(0.2, rel=1e-9)
        assert cfg.tau2 == pytest.approx(0.2, rel=1e-9)
        assert (cfg.n1, cfg.n2) == (1, 2)

    def test_right_half_plane_zero_is_rejected(self):
        # det numerator (s - 1)(s + 3): inversion would be unstable
        den = [1.0, 3.0, 2.0]
        g = TransferMatrix([
            [PolynomialRatio([1.0, -1.0], den), PolynomialRatio([1.0], den)],
            [PolynomialRatio([-1.0], den), PolynomialRatio([1.0, 3.0], den)],
        ])
        with pytest.raises(imc.NonMinimumPhaseError):
            imc.design_controller(g, imc.design_filter(imc.IMCConfig()))

    def test_mixed_denominators_fall_back_to_adjugate(self):
        g = TransferMatrix([
            [PolynomialRatio([2.0], [1.0, 1.0]), PolynomialRatio.constant(0.0)],
            [PolynomialRatio.constant(0.0), PolynomialRatio([1.0], [0.5, 1.0])],
        ])
        ctrl = imc.design_controller(g, imc.design_filter(imc.IMCConfig()))
        f = imc.design_filter(imc.IMCConfig())
        w = 3.0
        gq = g.freq_response(w) @ ctrl.q_tf.freq_response(w)
        np.testing.assert_allclose(gq, f.freq_response(w), rtol=1e-8)

    def test_round_trip_through_file(self, controller, tmp_path):
        path = tmp_path / "controller.json"
        imc.save_controller(controller, path)
        back = imc.load_controller(path)
        assert back.config == controller.config
        for w in (0.3, 7.0):
            np.testing.assert_allclose(back.q_tf.freq_response(w),
                                       controller.q_tf.freq_response(w),
                                       rtol=1e-12)


class TestStepper:
    def test_zero_everything_stays_zero(self, controller):
        st = imc.assemble_loop(controller)
        for _ in range(5):
            u = st.step(np.zeros(2), np.zeros(2))
        assert np.max(np.abs(u)) == 0.0
        assert np.max(np.abs(st.x_q)) == 0.0

    def test_exact_model_mismatch_signal_vanishes(self, controller):
        st = imc.assemble_loop(controller)
        plant_d = lti.discretize(controller.model_ss, st.ts)
        r = np.array([5.0, 0.1])
        ys, _, mism = simulate_ticks(st, plant_d, r, 400)
        assert np.max(mism) < 1e-9
        np.testing.assert_allclose(ys[-1], r, rtol=1e-6)

    def test_offset_free_under_plant_mismatch(self, controller):
        # perturb the truth plant gain by 20 percent; the internal-model
        # feedback still removes the steady-state error
        st = imc.assemble_loop(controller)
        truth = lti.discretize(controller.model_ss, st.ts)
        truth = lti.StateSpaceModel(truth.A, truth.B * 1.2, truth.C,
                                    truth.D, ts=truth.ts)
        r = np.array([3.0, -0.05])
        ys, _, mism = simulate_ticks(st, truth, r, 1500)
        assert np.max(mism) > 1e-3
        np.testing.assert_allclose(ys[-1], r, rtol=1e-5)

    def test_faster_flow_filter_speeds_only_the_flow_channel(self, design):
        def flow_t90(cfg):
            ctrl = imc.design_controller(design, imc.design_filter(cfg))
            st = imc.assemble_loop(ctrl)
            plant_d = lti.discretize(ctrl.model_ss, st.ts)
            r = np.array([1.0, 0.0])
            ys, _, _ = simulate_ticks(st, plant_d, r, 600)
            k90 = np.nonzero(ys[:, 0] >= 0.9)[0][0]
            return k90 * st.ts, ys

        slow, ys_slow = flow_t90(imc.IMCConfig())
        fast, ys_fast = flow_t90(imc.IMCConfig(tau1=0.1))
        # nominal channel is first order: t90 = tau * ln(10)
        assert slow == pytest.approx(0.2 * math.log(10.0), abs=0.04)
        assert fast == pytest.approx(0.1 * math.log(10.0), abs=0.04)
        # pressure stays decoupled in the nominal loop
        assert np.max(np.abs(ys_slow[:, 1])) < 0.05
        assert np.max(np.abs(ys_fast[:, 1])) < 0.05

    def test_rejects_rate_mismatch(self, controller):
        q_d = lti.discretize(controller.q_ss, 0.02)
        m_d = lti.discretize(controller.model_ss, 0.01)
        with pytest.raises(LtiError):
            imc.ClosedLoopStepper(q_d, m_d)


class TestMismatchLoop:
    def test_matches_hand_assembled_response(self, design, controller):
        rng = np.random.default_rng(5)
        delta = rng.normal(scale=0.05, size=(2, 2))

        def truth(w):
            return design.freq_response(w) @ (np.eye(2) + delta)

        loop = imc.mismatch_input_loop(controller, truth)
        for w in (0.2, 4.0, 60.0):
            qw = controller.q_tf.freq_response(w)
            gm = controller.model_tf.freq_response(w)
            expect = np.linalg.solve(np.eye(2) - qw @ gm, qw @ truth(w))
            np.testing.assert_allclose(loop(w), expect, rtol=1e-10)

    def test_exact_model_gives_conjugated_filter_loop(self, design,
                                                      controller):
        # with truth equal to the model the input loop is
        # G^-1 (I-F)^-1 F G, so its eigenvalues are f_i/(1-f_i)
        f = imc.design_filter(imc.IMCConfig())
        loop = imc.mismatch_input_loop(controller, design)
        for w in (0.5, 8.0):
            eig = np.sort_complex(np.linalg.eigvals(loop(w)))
            f1 = f[0, 0](1j * w)
            f2 = f[1, 1](1j * w)
            expect = np.sort_complex(np.array([f1 / (1 - f1), f2 / (1 - f2)]))
            np.testing.assert_allclose(eig, expect, rtol=1e-7)


class TestPowerLoop:
    def test_identify_recovers_first_order_data(self):
        t = np.arange(0.0, 8.0, 0.02)
        u = np.where(t >= 1.0, 25.0, 10.0)
        gain, tau = 340.0, 0.6
        y = 500.0 + gain * 15.0 * (1.0 - np.exp(-np.clip(t - 1.0, 0.0, None)
                                                / tau)) * (t >= 1.0)
        model = imc.identify_first_order(t, u, y)
        assert model.dc_gain() == pytest.approx(gain, rel=0.02)
        assert -1.0 / np.roots(model.den)[0].real == pytest.approx(tau,
                                                                   rel=0.1)

    def test_identify_needs_a_step(self):
        t = np.arange(0.0, 1.0, 0.02)
        with pytest.raises(LtiError):
            imc.identify_first_order(t, np.ones_like(t), np.ones_like(t))

    def test_power_loop_tracks_reference(self):
        model = PolynomialRatio([320.0], [0.5, 1.0])
        ctrl = imc.design_power_imc(model)
        # truth: same structure, gain off by 15 percent
        truth = lti.discretize(lti.realize(TransferMatrix(
            [[PolynomialRatio([368.0], [0.45, 1.0])]])), ctrl.ts)
        xp = np.zeros(1)
        r = 4000.0
        for _ in range(800):
            y = (truth.C @ xp)[0]
            i_des = ctrl.step(r, y)
            xp = truth.A @ xp + truth.B[:, 0] * i_des
        assert y == pytest.approx(r, rel=1e-4)
        assert i_des == pytest.approx(r / 368.0, rel=1e-3)

    def test_rejects_unusable_models(self):
        with pytest.raises(LtiError):
            imc.design_power_imc(PolynomialRatio([1.0, 1.0], [1.0, 1.0]))
        with pytest.raises(imc.NonMinimumPhaseError):
            imc.design_power_imc(PolynomialRatio([5.0], [1.0, -1.0]))
        with pytest.raises(imc.NonMinimumPhaseError):
            imc.design_power_imc(PolynomialRatio([0.0], [1.0, 1.0]))

"""Set-point maps: flow line, pressure LUT generation, interpolation."""

import numpy as np
import pytest

from fcairpath import setpoints
from fcairpath.plant import default_params, tracked_equilibrium
from fcairpath.setpoints import (
    AMBIENT_PRESSURE,
    SetpointMap,
    build_setpoint_map,
    equilibrium_evaluator,
    flow_setpoint,
    generate_pressure_lut,
    pressure_setpoint,
    read_lut_csv,
    write_lut_csv,
)


@pytest.fixture(scope="module")
def params():
    return default_params()


@pytest.fixture(scope="module")
def lut_map(params):
    return build_setpoint_map(params)


def simple_map(**kw):
    args = dict(flow_gain=2.783e-4,
                currents=np.array([100.0, 150.0, 200.0]),
                pressures=np.array([1.6e5, 2.0e5, 2.4e5]))
    args.update(kw)
    return SetpointMap(**args)


class TestFlowLine:
    def test_zero_current_zero_flow(self):
        assert flow_setpoint(0.0, simple_map()) == 0.0

    def test_formula_values(self, params):
        gain = setpoints.flow_gain(params.n_cells)
        smap = simple_map(flow_gain=gain)
        assert flow_setpoint(100.0, smap) == pytest.approx(0.0278, abs=2e-4)
        assert flow_setpoint(190.0, smap) == pytest.approx(0.0529, abs=2e-4)

    def test_exact_linearity(self):
        smap = simple_map()
        for a in (0.25, 3.0, 17.5):
            assert flow_setpoint(a * 80.0, smap) == a * flow_setpoint(80.0, smap)

    def test_negative_current_rejected(self):
        with pytest.raises(ValueError):
            flow_setpoint(-1.0, simple_map())

    def test_steady_state_oer_is_two(self, params):
        # tracking the flow line at any feasible pressure pins the oxygen
        # excess ratio at the target within the plant-map mismatch bound
        gain = setpoints.flow_gain(params.n_cells)
        for i_st, p_sm in ((100.0, 1.8e5), (190.0, 2.5e5)):
            eq = tracked_equilibrium(params, i_st, gain * i_st, p_sm)
            assert eq.feasible
            assert eq.outputs.lambda_o2 == pytest.approx(2.0, rel=0.05)


class TestMapValidation:
    def test_breakpoints_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            simple_map(currents=np.array([100.0, 100.0, 200.0]))

    def test_pressures_must_stay_in_band(self):
        with pytest.raises(ValueError, match="ambient"):
            simple_map(pressures=np.array([0.9e5, 2.0e5, 2.4e5]))
        with pytest.raises(ValueError, match="ambient"):
            simple_map(pressures=np.array([1.6e5, 2.0e5, 3.2e5]))

    def test_flow_gain_positive(self):
        with pytest.raises(ValueError, match="gain"):
            simple_map(flow_gain=0.0)

    def test_interpolation_mode_checked(self):
        with pytest.raises(ValueError, match="interpolation"):
            simple_map(interpolation="cubic")


class TestInterpolation:
    def test_breakpoint_returns_stored_value(self):
        smap = simple_map()
        assert pressure_setpoint(150.0, smap) == 2.0e5

    def test_midpoint_is_mean_of_neighbors(self):
        smap = simple_map()
        assert pressure_setpoint(125.0, smap) == pytest.approx(1.8e5)

    def test_clamping_at_both_ends(self):
        smap = simple_map()
        assert pressure_setpoint(50.0, smap) == 1.6e5
        assert pressure_setpoint(500.0, smap) == 2.4e5


class TestLutGeneration:
    def test_grid_and_bounds(self, lut_map):
        np.testing.assert_allclose(lut_map.currents,
                                   np.arange(75.0, 212.51, 12.5))
        assert np.all(lut_map.pressures >= AMBIENT_PRESSURE)
        assert np.all(lut_map.pressures <= 3.0 * AMBIENT_PRESSURE)
        assert lut_map.failed_currents == ()

    def test_monotone_nondecreasing(self, lut_map):
        assert np.all(np.diff(lut_map.pressures) >= 0.0)

    def test_rises_over_the_range(self, lut_map):
        assert lut_map.pressures[-1] - lut_map.pressures[0] > 5.0e4

    def test_local_optimality_two_kpa(self, params, lut_map):
        evaluate = equilibrium_evaluator(params)
        for i_st, p_star in zip(lut_map.currents, lut_map.pressures):
            eta_star, ok = evaluate(i_st, p_star)
            assert ok
            for dp in (-2.0e3, 2.0e3):
                eta, ok = evaluate(i_st, p_star + dp)
                if ok:
                    assert eta_star >= eta - 1e-4

    def test_refinement_stays_within_one_coarse_step(self, params, lut_map):
        evaluate = equilibrium_evaluator(params)
        step = 1.0e4
        for i_st, p_star in zip(lut_map.currents, lut_map.pressures):
            etas = []
            for p_sm in setpoints.DEFAULT_PRESSURE_GRID:
                eta, ok = evaluate(i_st, p_sm)
                etas.append(eta if ok else -np.inf)
            coarse = setpoints.DEFAULT_PRESSURE_GRID[int(np.argmax(etas))]
            assert abs(p_star - coarse) <= step + 1e-9

    def test_equilibrium_throttle_interior_at_optima(self, params, lut_map):
        for i_st, p_star in zip(lut_map.currents, lut_map.pressures):
            eq = tracked_equilibrium(params, i_st,
                                     lut_map.flow_gain * i_st, p_star)
            assert eq.feasible
            assert 0.1 < eq.inputs.u_om < 0.9

    def test_flat_surface_returns_minimum_pressure(self, params):
        flat = params.with_overrides(b_press=0.0)
        smap = build_setpoint_map(flat)
        evaluate = equilibrium_evaluator(flat)
        for i_st, p_star in zip(smap.currents, smap.pressures):
            # lowest feasible coarse grid point at this current
            feas = [p for p in setpoints.DEFAULT_PRESSURE_GRID
                    if evaluate(i_st, p)[1]]
            assert p_star <= feas[0] + 1e-9

    def test_failed_point_interpolated_with_warning(self):
        def evaluate(i_st, p_sm):
            if 140.0 <= i_st <= 160.0:
                return np.nan, False
            return -((p_sm - 2.0e5 - 200.0 * i_st) / 1e5) ** 2, True

        with pytest.warns(RuntimeWarning, match="150"):
            smap = generate_pressure_lut(
                evaluate, np.array([100.0, 150.0, 200.0]),
                np.arange(1.5e5, 2.9e5, 1.0e4), flow_gain_value=2.8e-4)
        expect = 0.5 * (smap.pressures[0] + smap.pressures[2])
        assert smap.pressures[1] == pytest.approx(expect, rel=1e-6)
        assert smap.failed_currents == (150.0,)

    def test_all_points_failing_raises(self):
        def evaluate(i_st, p_sm):
            return np.nan, False

        with pytest.raises(ValueError, match="no feasible"):
            generate_pressure_lut(evaluate, np.array([100.0, 150.0]),
                                  np.array([1.5e5, 2.0e5]),
                                  flow_gain_value=2.8e-4)

    def test_quadratic_surface_refined_to_vertex(self):
        # analytic optimum at 2.0e5 + 150*I, off the coarse grid
        def evaluate(i_st, p_sm):
            return -((p_sm - 2.0e5 - 150.0 * i_st) / 1e5) ** 2, True

        smap = generate_pressure_lut(evaluate, np.array([100.0, 200.0]),
                                     np.arange(1.5e5, 3.0e5, 1.0e4),
                                     flow_gain_value=2.8e-4)
        np.testing.assert_allclose(smap.pressures, [2.15e5, 2.30e5], atol=200.0)


class TestIsotonic:
    def test_projection_pools_violators(self):
        y = np.array([1.0, 3.0, 2.0, 4.0])
        out = setpoints._isotonic_nondecreasing(y)
        np.testing.assert_allclose(out, [1.0, 2.5, 2.5, 4.0])
        assert np.all(np.diff(out) >= 0.0)

    def test_sorted_input_unchanged(self):
        y = np.array([1.0, 2.0, 5.0])
        np.testing.assert_allclose(setpoints._isotonic_nondecreasing(y), y)


class TestCsv:
    def test_round_trip(self, lut_map, tmp_path):
        path = tmp_path / "lut.csv"
        write_lut_csv(lut_map, path)
        back = read_lut_csv(path, lut_map.flow_gain)
        np.testing.assert_array_equal(back.currents, lut_map.currents)
        np.testing.assert_array_equal(back.pressures, lut_map.pressures)

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("current,pressure\n100,200000\n")
        with pytest.raises(ValueError, match="header"):
            read_lut_csv(path, 2.8e-4)

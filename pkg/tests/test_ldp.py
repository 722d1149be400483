import json

import numpy as np
import pytest
from scipy.stats import norm

from sacldp.errors import ParameterError
from sacldp.field import Mode, ModeSet
from sacldp.flow import Control
from sacldp.grid import TimeGrid
from sacldp.ldp import (EventSpec, RateOptions, RateResult, ScanRow, ScanTable, control_cost, deterministic_interfaces,
                        ldp_report, mc_probability_scan, minimize_rate_ac, minimize_rate_flow, report_json)
from sacldp.pde import InitialData

from conftest import plateau_constant

TOY_TIMES = TimeGrid(0.1, 100)
PROBE = EventSpec("probe", 0.1, "above", probes=((0.5,),))


def gaussian_rate(d, c, T):
    return d**2 / (2.0 * c**2 * T)


# ---------------------------------------------------------------- events

def test_event_validation():
    with pytest.raises(ParameterError):
        EventSpec("speed")
    with pytest.raises(ParameterError):
        EventSpec("probe")
    with pytest.raises(ParameterError):
        EventSpec("endpoint", probes=((0.5,),))
    with pytest.raises(ParameterError):
        EventSpec("whole", direction="sideways")
    with pytest.raises(ParameterError):
        EventSpec("field_endpoint")


def test_event_dict_round_trip():
    ev = EventSpec("interface", 0.06, "above", reference=((0.25,), (0.75,)), combine="norm")
    assert EventSpec.from_dict(json.loads(json.dumps(ev.to_dict()))) == ev


def test_event_reductions():
    final = np.array([[[0.3], [0.9]]])
    probes = ((0.25,), (0.75,))
    assert EventSpec("probe", probes=probes).evaluate_flow(final)[0] == pytest.approx(0.1)
    assert EventSpec("probe", probes=probes, combine="abs").evaluate_flow(final)[0] == pytest.approx(0.15)
    assert EventSpec("probe", probes=probes, combine="norm").evaluate_flow(final)[0] == pytest.approx(np.hypot(0.05, 0.15))


def test_interface_observable(space):
    x = space.axes[0]
    ev = EventSpec("interface", reference=((0.5,),))
    np.testing.assert_allclose(ev.evaluate_field(np.tanh((x - 0.55) / 0.1)[None], space), [0.05], atol=1e-4)
    # no crossing left: the box width is reported
    assert ev.evaluate_field(np.ones((1, x.size)), space)[0] == 1.0


def test_hit_and_gap():
    ev = EventSpec("probe", 0.1, "below", probes=((0.5,),))
    assert ev.hit(np.array([0.05, 0.2])).tolist() == [True, False]
    np.testing.assert_allclose(ev.gap(np.array([0.05, 0.2])), [0.0, 0.1])


# ---------------------------------------------------------------- costs and rates

def test_control_cost_cases():
    times = TimeGrid(1.0, 10)
    assert control_cost(Control.zeros(times, 2)) == 0.0
    assert control_cost(Control.constant(times, [1.0])) == pytest.approx(0.5)
    f = np.linspace(-1.0, 2.0, 10)[:, None]
    assert control_cost(Control(times, 3.0 * f)) == pytest.approx(9.0 * control_cost(Control(times, f)))


def test_flow_rate_recovers_gaussian_rate():
    res = minimize_rate_flow(PROBE, plateau_constant(0.5), TOY_TIMES)
    assert res.converged
    assert res.cost == pytest.approx(gaussian_rate(0.1, 0.5, 0.1), rel=0.05)
    assert res.achieved_target_distance < 1e-3
    assert res.truncation == {"modes": 1, "intervals": 4, "steps": 100}


def test_zero_target_costs_nothing():
    ev = EventSpec("probe", 0.0, "above", probes=((0.5,),))
    assert minimize_rate_flow(ev, plateau_constant(0.5), TOY_TIMES).cost <= 1e-6


def test_second_mode_lowers_the_cost():
    one = plateau_constant(0.5)
    two = ModeSet((0.0,), (1.0,), one.modes + (Mode("constant", 0.5, support=((0.05,), (0.95,)), plateau=0.8),))
    c1 = minimize_rate_flow(PROBE, one, TOY_TIMES).cost
    c2 = minimize_rate_flow(PROBE, two, TOY_TIMES).cost
    assert c2 <= c1
    assert c2 == pytest.approx(0.5 * c1, rel=0.05)


def test_non_converged_flag_propagates():
    res = minimize_rate_flow(PROBE, plateau_constant(0.5), TOY_TIMES, RateOptions(maxiter=1, stages=1))
    assert not res.converged
    assert ldp_report(None, res)["converged"] is False


def test_rate_routes_reject_wrong_level(space):
    ev = EventSpec("interface", 0.1, reference=((0.5,),))
    with pytest.raises(ParameterError):
        minimize_rate_flow(ev, plateau_constant(0.5), TOY_TIMES)
    with pytest.raises(ParameterError):
        minimize_rate_ac(PROBE, plateau_constant(0.5), InitialData.cosine(), space, TOY_TIMES)


@pytest.fixture(scope="module")
def front_rates(space):
    """Cost of pushing a tanh front by 0.02 with one constant mode of two amplitudes."""
    times = TimeGrid(0.02, 200)
    u0 = InitialData.tanh_front(width=0.05)
    opts = RateOptions(intervals=1)
    out = {}
    for c in (0.25, 0.5):
        spec = plateau_constant(c)
        ref = deterministic_interfaces(spec, u0, space, times)
        ev = EventSpec("interface", 0.02, "above", reference=[(r,) for r in ref])
        out[c] = minimize_rate_ac(ev, spec, u0, space, times, opts)
    return out


def test_ac_rate_decreases_with_amplitude(front_rates):
    assert front_rates[0.5].cost < front_rates[0.25].cost
    # cost scales like 1 / c^2 when the control acts by pure transport
    assert front_rates[0.25].cost / front_rates[0.5].cost == pytest.approx(4.0, rel=0.1)


def test_ac_rate_unreachable_for_constant_state(space):
    """Transport cannot change u = 1, so the event stays out of reach."""
    times = TimeGrid(0.02, 200)
    ev = EventSpec("value", 0.5, "below", probes=((0.5,),))
    res = minimize_rate_ac(ev, plateau_constant(0.5), InitialData.constant(1.0), space, times,
                           RateOptions(intervals=1, stages=1, maxiter=20))
    assert res.achieved_target_distance == pytest.approx(0.5, abs=1e-9)


# ---------------------------------------------------------------- Monte Carlo

def test_whole_space_scan_is_certain():
    scan = mc_probability_scan(EventSpec("whole"), plateau_constant(0.5), [0.2, 0.1], 100, 3, TOY_TIMES)
    assert all(r.p_hat == 1.0 and r.sigma_log_p == 0.0 for r in scan.rows)


def test_scan_matches_gaussian_tail():
    """The probe moves by -c sqrt(sigma) B_T, so P = Phi(-d / (c sqrt(sigma T)))."""
    scan = mc_probability_scan(PROBE, plateau_constant(0.5), [0.2, 0.1], 10_000, 5, TOY_TIMES)
    for row in scan.rows:
        oracle = norm.sf(0.1 / (0.5 * np.sqrt(row.sigma * 0.1)))
        assert row.p_hat == pytest.approx(oracle, rel=0.15)
        assert row.ci_low <= oracle <= row.ci_high


def test_scan_shares_paths_across_sigma():
    """Shared Brownian paths make hits monotone down the ladder."""
    scan = mc_probability_scan(PROBE, plateau_constant(0.5), [0.2, 0.1, 0.05], 2000, 9, TOY_TIMES)
    hits = [r.hits for r in scan.rows]
    assert hits[0] >= hits[1] >= hits[2]


def test_scan_is_reproducible(tmp_path):
    a = mc_probability_scan(PROBE, plateau_constant(0.5), [0.2], 500, 1, TOY_TIMES)
    b = mc_probability_scan(PROBE, plateau_constant(0.5), [0.2], 500, 1, TOY_TIMES)
    assert a == b
    a.to_csv(tmp_path / "scan.csv")
    assert (tmp_path / "scan.csv").read_text().splitlines()[0].startswith("sigma,samples,hits,failures")


def test_scan_validation(space):
    with pytest.raises(ParameterError):
        mc_probability_scan(PROBE, plateau_constant(0.5), [0.1, 0.2], 100, 1, TOY_TIMES)
    with pytest.raises(ParameterError):
        mc_probability_scan(PROBE, plateau_constant(0.5), [0.2, 0.0], 100, 1, TOY_TIMES)
    with pytest.raises(ParameterError):
        mc_probability_scan(PROBE, plateau_constant(0.5), [0.2], 99, 1, TOY_TIMES)
    with pytest.raises(ParameterError):
        mc_probability_scan(PROBE, plateau_constant(0.5), [0.2], 100, 1, TOY_TIMES, route="euler")
    with pytest.raises(ParameterError):
        mc_probability_scan(EventSpec("interface", reference=((0.5,),)), plateau_constant(0.5), [0.2], 100, 1,
                            TOY_TIMES)


def test_zero_hits_give_lower_bound_only():
    far = EventSpec("probe", 0.9, "above", probes=((0.5,),))
    row = mc_probability_scan(far, plateau_constant(0.5), [0.05], 100, 1, TOY_TIMES).rows[0]
    assert row.hits == 0 and row.lower_bound_only and row.sigma_log_p is None


# ---------------------------------------------------------------- report

def _rate(cost):
    return RateResult(cost, Control.zeros(TOY_TIMES, 1), 0.0, 1, True, {})


def test_report_extrapolates_exactly_linear_rows():
    rows = tuple(ScanRow(s, 1000, 100, 0, 0.1, 0.0, 1.0, -0.2 + 0.5 * s, False) for s in (0.2, 0.1, 0.05))
    rep = ldp_report(ScanTable(rows, {}, "flow", 0), _rate(0.2))
    assert rep["extrapolation"]["intercept"] == pytest.approx(-0.2)
    assert rep["extrapolation"]["slope"] == pytest.approx(0.5)
    assert rep["comparison"]["intercept_relative_error"] == pytest.approx(0.0, abs=1e-12)
    assert rep["comparison"]["sigma"] == 0.05
    assert rep["reference"] == -0.2
    json.loads(report_json(rep))


def test_report_skips_rows_with_few_hits():
    rows = (ScanRow(0.2, 1000, 100, 0, 0.1, 0.0, 1.0, -0.3, False),
            ScanRow(0.1, 1000, 10, 0, 0.01, 0.0, 1.0, -0.4, False),
            ScanRow(0.05, 1000, 0, 0, 0.0, 0.0, 0.01, None, True))
    rep = ldp_report(ScanTable(rows, {}, "flow", 0), _rate(0.3))
    assert rep["comparison"]["sigma"] == 0.2
    assert rep["extrapolation"]["points"] == 2


def test_report_without_scan():
    rep = ldp_report(None, None)
    assert rep["rows"] == [] and rep["comparison"] is None

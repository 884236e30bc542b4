"""Household physics tests: frozen SOC arithmetic, forced-charge floor,
projection feasibility/idempotence, energy balance, surplus formula, and
the commute sampler's distributional properties.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdsm.env import (Action, ActionBounds, HouseholdState, SimConfig,
                          battery_rate, begin_home_window,
                          compute_action_bounds, compute_surplus,
                          ev_rate_limits, forced_ev_rate, home_rate_limits,
                          project_action, project_joint, sample_ev_arrival,
                          step_household)

CFG = SimConfig()


def make_state(price=0.2, base_load=1.0, home_soc=0.5, pv_gen=0.0,
               ev_available=1, ev_soc=0.5, ev_depart=5):
    if ev_available == 0:
        ev_depart = 0
    return HouseholdState(price=price, base_load=base_load,
                          home_soc=home_soc, pv_gen=pv_gen,
                          ev_available=ev_available, ev_soc=ev_soc,
                          ev_depart=ev_depart)


class TestConfig:
    def test_rejects_bad_efficiency(self):
        with pytest.raises(ValueError):
            SimConfig(charge_efficiency=0.0)
        with pytest.raises(ValueError):
            SimConfig(charge_efficiency=1.2)

    def test_rejects_bad_departure_soc(self):
        with pytest.raises(ValueError):
            SimConfig(ev_min_departure_soc=0.0)

    def test_ev_window_hours(self):
        assert CFG.ev_window_hours == 13  # 18:00 through 06:00


class TestActionBounds:
    def test_zero_series(self):
        b = compute_action_bounds(np.zeros(24), np.zeros(24))
        assert b.delta == 0.0 and b.alpha == 0.0

    def test_constant_series(self):
        b = compute_action_bounds(np.full(24, 2.0), np.full(24, 3.0))
        assert b.delta == pytest.approx(2.0)
        assert b.alpha == pytest.approx(3.0)

    def test_ramp_mean(self):
        b = compute_action_bounds(np.arange(24.0), np.ones(24))
        assert b.delta == pytest.approx(11.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_action_bounds([], [1.0])


class TestRateLimits:
    def test_absent_ev_zero_interval(self):
        lo, hi = ev_rate_limits(0.5, 0, CFG)
        assert lo == 0.0 and hi == 0.0

    def test_full_ev_cannot_charge(self):
        lo, hi = ev_rate_limits(1.0, 1, CFG)
        assert hi == pytest.approx(0.0)
        assert lo == pytest.approx(-6.0)

    def test_empty_ev_cannot_discharge(self):
        lo, hi = ev_rate_limits(0.0, 1, CFG)
        assert lo == pytest.approx(0.0)
        assert hi == pytest.approx(6.0)

    def test_headroom_binds_before_rate(self):
        # SOC 0.9 on 24 kWh at eff 0.9: (0.1 * 24) / 0.9 = 2.667 < 6
        _, hi = ev_rate_limits(0.9, 1, CFG)
        assert hi == pytest.approx(0.1 * 24 / 0.9)

    def test_home_limits(self):
        lo, hi = home_rate_limits(0.5, CFG)
        assert hi == pytest.approx(3.0)  # (0.5*6.4)/0.9 = 3.55 > rate cap
        assert lo == pytest.approx(-min(3.0, 0.5 * 6.4 * 0.9))


class TestForcedCharge:
    def test_frozen_example(self):
        """SOC 0.5, 24 kWh, 2 slots left: (0.9-0.5)*24/(0.9*2) = 5.333."""
        rate = forced_ev_rate(0.5, 2, 1, CFG)
        assert rate == pytest.approx((0.9 - 0.5) * 24.0 / (0.9 * 2.0))

    def test_no_floor_when_already_at_target(self):
        assert forced_ev_rate(0.95, 2, 1, CFG) == pytest.approx(0.0)

    def test_no_floor_when_absent(self):
        assert forced_ev_rate(0.2, 0, 0, CFG) == pytest.approx(0.0)

    def test_floor_capped_at_feasible_rate(self):
        # One slot left from SOC 0.1: raw need is 21.3 kW, cap is eta.
        rate = forced_ev_rate(0.1, 1, 1, CFG)
        assert rate == pytest.approx(6.0)


class TestProjectAction:
    BOUNDS = ActionBounds(delta=2.0, alpha=3.0)

    def test_ev_absent_zeroes_rate(self):
        state = make_state(ev_available=0)
        act = project_action(state, Action(trade=0.0, ev_rate=3.0),
                             self.BOUNDS, CFG)
        assert act.ev_rate == 0.0

    def test_full_battery_blocks_charge(self):
        state = make_state(ev_soc=1.0, ev_depart=3)
        act = project_action(state, Action(trade=0.0, ev_rate=6.0),
                             self.BOUNDS, CFG)
        assert act.ev_rate == pytest.approx(0.0)

    def test_forced_charge_overrides_raw(self):
        state = make_state(ev_soc=0.5, ev_depart=2)
        act = project_action(state, Action(trade=0.0, ev_rate=-6.0),
                             self.BOUNDS, CFG)
        assert act.ev_rate == pytest.approx(5.0 + 1.0 / 3.0)

    def test_balance_restored_exactly(self):
        state = make_state(base_load=1.0, pv_gen=0.5, home_soc=0.5,
                           ev_soc=0.92, ev_depart=5)
        act = project_action(state, Action(trade=10.0, ev_rate=2.0),
                             self.BOUNDS, CFG)
        c_b = battery_rate(state, act)
        lo, hi = home_rate_limits(state.home_soc, CFG)
        assert lo - 1e-12 <= c_b <= hi + 1e-12
        # Eq: H_p + P_c == C_e + C_b + H_l, by construction of battery_rate
        assert state.pv_gen + act.trade == pytest.approx(
            act.ev_rate + c_b + state.base_load, abs=1e-12)

    def test_relaxes_trade_bound_when_battery_saturates(self):
        """Forced EV charging beyond what alpha allows is bought from
        the grid: trade exceeds alpha and the overshoot is reported."""
        state = make_state(base_load=1.0, pv_gen=0.0, home_soc=0.0,
                           ev_soc=0.1, ev_depart=1)
        bounds = ActionBounds(delta=1.0, alpha=1.0)
        trade, ev_rate, batt, violation = project_joint(
            state.base_load, state.home_soc, state.pv_gen, 1, state.ev_soc,
            state.ev_depart, 0.0, 0.0, bounds.delta, bounds.alpha, CFG)
        assert ev_rate[()] == pytest.approx(6.0)  # forced to max
        assert batt[()] == pytest.approx(0.0)  # empty battery cannot help
        assert trade[()] == pytest.approx(7.0)  # load + EV, all imported
        assert violation[()] == pytest.approx(6.0)  # 7 - alpha

    def test_idempotent_on_random_inputs(self):
        rng = np.random.default_rng(42)
        n = 2000
        args = dict(
            base_load=rng.uniform(0, 4, n),
            home_soc=rng.uniform(0, 1, n),
            pv_gen=rng.uniform(0, 5, n),
            ev_available=rng.random(n) < 0.7,
            ev_soc=rng.uniform(0, 1, n),
            ev_depart=rng.integers(0, 13, n),
            delta=rng.uniform(0, 4, n),
            alpha=rng.uniform(0, 4, n),
        )
        args["ev_depart"] = np.where(args["ev_available"],
                                     np.maximum(args["ev_depart"], 1), 0)
        raw_t = rng.uniform(-20, 20, n)
        raw_e = rng.uniform(-20, 20, n)
        t1, e1, b1, _ = project_joint(args["base_load"], args["home_soc"],
                                      args["pv_gen"], args["ev_available"],
                                      args["ev_soc"], args["ev_depart"],
                                      raw_t, raw_e, args["delta"],
                                      args["alpha"], CFG)
        t2, e2, b2, _ = project_joint(args["base_load"], args["home_soc"],
                                      args["pv_gen"], args["ev_available"],
                                      args["ev_soc"], args["ev_depart"],
                                      t1, e1, args["delta"], args["alpha"],
                                      CFG)
        np.testing.assert_allclose(t2, t1, atol=1e-9)
        np.testing.assert_allclose(e2, e1, atol=1e-9)
        np.testing.assert_allclose(b2, b1, atol=1e-9)


class TestStepHousehold:
    def test_identity_when_rates_zero(self):
        state = make_state(base_load=0.0, pv_gen=0.0)
        nxt = step_household(state, Action(trade=0.0, ev_rate=0.0), CFG)
        assert nxt.home_soc == pytest.approx(0.5)
        assert nxt.ev_soc == pytest.approx(0.5)
        assert nxt.ev_depart == 4

    def test_home_charge_arithmetic(self):
        """6.4 kWh at 0.5 charged at 2 kW, eff 0.9:
        0.5 + 2*0.9/6.4 = 0.78125."""
        state = make_state(base_load=0.0, pv_gen=2.0)  # PV feeds battery
        nxt = step_household(state, Action(trade=0.0, ev_rate=0.0), CFG)
        assert battery_rate(state, Action(0.0, 0.0)) == pytest.approx(2.0)
        assert nxt.home_soc == pytest.approx(0.78125)

    def test_ev_discharge_arithmetic(self):
        """24 kWh at 1.0 discharged at 6 kW, eff 0.9:
        1 - (6/0.9)/24 = 0.7222..."""
        state = make_state(base_load=0.0, pv_gen=0.0, ev_soc=1.0,
                           home_soc=0.0)
        # EV discharges 6 kW, all of it sold: balance holds with C_b = 0
        act = Action(trade=-6.0, ev_rate=-6.0)
        nxt = step_household(state, act, CFG)
        assert nxt.ev_soc == pytest.approx(1.0 - (6.0 / 0.9) / 24.0)

    def test_departure_at_zero_clock(self):
        state = make_state(ev_depart=1, base_load=0.0)
        nxt = step_household(state, Action(trade=0.0, ev_rate=0.0), CFG)
        assert nxt.ev_available == 0
        assert nxt.ev_depart == 0

    def test_roundtrip_efficiency_loss(self):
        """Charging then discharging through 0.9 efficiency returns 81%
        of the energy."""
        state = make_state(base_load=0.0, pv_gen=2.0, home_soc=0.5)
        charged = step_household(state, Action(0.0, 0.0), CFG)
        stored = (charged.home_soc - 0.5) * CFG.home_batt_capacity
        assert stored == pytest.approx(2.0 * 0.9)
        # now discharge the same stored energy back to the bus
        deliverable = stored * 0.9
        state2 = make_state(base_load=deliverable, pv_gen=0.0,
                            home_soc=charged.home_soc)
        drained = step_household(state2, Action(0.0, 0.0), CFG)
        assert drained.home_soc == pytest.approx(0.5)
        assert deliverable == pytest.approx(2.0 * 0.81)

    def test_infeasible_rate_raises(self):
        state = make_state(base_load=0.0, pv_gen=20.0, home_soc=0.99)
        with pytest.raises(AssertionError):
            step_household(state, Action(trade=0.0, ev_rate=0.0), CFG)


class TestHomeWindow:
    def test_arrival_installs_ev(self):
        state = make_state(ev_available=0)
        arrived = begin_home_window(state, 0.37, CFG)
        assert arrived.ev_available == 1
        assert arrived.ev_soc == pytest.approx(0.37)
        assert arrived.ev_depart == 13


class TestSurplus:
    def test_all_zero(self):
        state = make_state(base_load=0.0, pv_gen=0.0, home_soc=0.0)
        assert compute_surplus(state, Action(0.0, 0.0), CFG) == 0.0

    def test_direct_formula(self):
        """H_p=3, H_b=0.5, B_h=6.4, H_l=1, C_e=2: 3 + 3.2 - 1 - 2 = 3.2."""
        state = make_state(base_load=1.0, pv_gen=3.0, home_soc=0.5)
        assert compute_surplus(state, Action(0.0, 2.0), CFG) == \
            pytest.approx(3.2)

    def test_shortage_negative(self):
        state = make_state(base_load=2.0, pv_gen=0.0, home_soc=0.0)
        assert compute_surplus(state, Action(0.0, 1.0), CFG) == \
            pytest.approx(-3.0)


class TestEvArrival:
    def test_no_driving_full_soc(self):
        class ZeroRng:
            def gamma(self, shape, scale):
                return 0.0
        soc, depart = sample_ev_arrival(ZeroRng(), CFG)
        assert soc == 1.0
        assert depart == CFG.ev_depart_slot

    def test_long_drive_hits_floor(self):
        class LongRng:
            def gamma(self, shape, scale):
                return 160.0  # 160 km * 0.15 = 24 kWh = full battery
        soc, _ = sample_ev_arrival(LongRng(), CFG)
        assert soc == pytest.approx(CFG.arrival_soc_floor)

    def test_gamma_mean(self):
        """Gamma(1.6, 20) has mean 32 km; check -- 5% over 1e5 draws."""
        rng = np.random.default_rng(2024)
        d = rng.gamma(CFG.gamma_shape, CFG.gamma_scale, size=100_000)
        assert abs(d.mean() - 32.0) / 32.0 < 0.05


# -- fuzzed structural properties ---------------------------------------------

state_strategy = st.builds(
    make_state,
    base_load=st.floats(0.0, 5.0),
    home_soc=st.floats(0.0, 1.0),
    pv_gen=st.floats(0.0, 6.0),
    ev_available=st.sampled_from([0, 1]),
    ev_soc=st.floats(0.0, 1.0),
    ev_depart=st.integers(1, 13),
)


@settings(max_examples=300, deadline=None)
@given(state_strategy, st.floats(-25.0, 25.0), st.floats(-25.0, 25.0),
       st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_projected_step_preserves_balance_and_soc(state, raw_t, raw_e,
                                                  delta, alpha):
    """For any raw action: the projected action satisfies the energy
    balance exactly and stepping it keeps both SOCs in [0, 1]."""
    bounds = ActionBounds(delta=delta, alpha=alpha)
    act = project_action(state, Action(raw_t, raw_e), bounds, CFG)
    c_b = battery_rate(state, act)
    assert state.pv_gen + act.trade == pytest.approx(
        act.ev_rate + c_b + state.base_load, abs=1e-9)
    nxt = step_household(state, act, CFG)
    assert 0.0 <= nxt.home_soc <= 1.0
    assert 0.0 <= nxt.ev_soc <= 1.0

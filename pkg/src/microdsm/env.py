"""Household microgrid physics: base load, PV, home battery, EV battery.

Each hourly slot a household chooses a trade quantity ``P_c`` (kW,
positive buys) and an EV charging rate ``C_e`` (kW, negative discharges
to the home bus). The home battery absorbs whatever the energy balance

    H_p + P_c = C_e + C_b + H_l

leaves over, within its rate and capacity limits; the grid is the final
slack. ``project_action`` turns an arbitrary raw action into a feasible
one that satisfies the balance exactly, and ``step_household`` advances
the battery states.

Charging efficiency applies on both directions: charging at rate c for
one hour stores c*eff kWh; delivering d kWh to the bus drains d/eff from
the battery, so a full round trip returns eff^2 of the energy.

EVs follow a daily commute: home from the evening window start until the
morning departure slot, away otherwise. The departure constraint (SOC at
least ``ev_min_departure_soc``) is enforced by a forced-charge floor
inside the projection rather than through rewards.
"""

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SimConfig",
    "HouseholdState",
    "Action",
    "ActionBounds",
    "compute_action_bounds",
    "project_action",
    "battery_rate",
    "step_household",
    "begin_home_window",
    "compute_surplus",
    "sample_ev_arrival",
    "ev_rate_limits",
    "home_rate_limits",
    "forced_ev_rate",
    "project_joint",
    "step_soc",
    "Microgrid",
]


@dataclass(frozen=True)
class SimConfig:
    """Physical constants and fleet parameters for a simulation.

    Defaults are synthetic desk-scale choices: a 6.4 kWh home battery at
    3 kW, a 24 kWh EV at 6 kW, 0.9 charge efficiency, EV commutes drawn
    from a Gamma(1.6, 20) km daily-distance distribution at 0.15 kWh/km,
    and a home window from 18:00 to the 07:00 departure.
    """

    n_households: int = 20
    slots_per_day: int = 24
    horizon_days: int = 30
    charge_efficiency: float = 0.9
    home_batt_capacity: float = 6.4  # kWh (B_h)
    ev_batt_capacity: float = 24.0  # kWh (B_e)
    max_ev_rate: float = 6.0  # kW (eta)
    max_home_batt_rate: float = 3.0  # kW
    ev_min_departure_soc: float = 0.9
    ev_consumption: float = 0.15  # kWh per km
    gamma_shape: float = 1.6
    gamma_scale: float = 20.0  # km
    arrival_soc_floor: float = 0.1
    ev_home_start: int = 18  # slot-of-day the EV arrives
    ev_depart_slot: int = 7  # slot-of-day the EV leaves
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.charge_efficiency <= 1.0):
            raise ValueError("charge_efficiency must be in (0, 1]")
        for name in ("home_batt_capacity", "ev_batt_capacity", "max_ev_rate",
                     "max_home_batt_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0.0 < self.ev_min_departure_soc <= 1.0):
            raise ValueError("ev_min_departure_soc must be in (0, 1]")
        if self.n_households < 1 or self.horizon_days < 1:
            raise ValueError("need at least one household and one day")
        if not (0 <= self.ev_home_start < self.slots_per_day):
            raise ValueError("ev_home_start out of range")
        if not (0 <= self.ev_depart_slot < self.slots_per_day):
            raise ValueError("ev_depart_slot out of range")

    @property
    def ev_window_hours(self) -> int:
        """Slots the EV spends at home per day (arrival through the slot
        before departure)."""
        return (self.ev_depart_slot - self.ev_home_start) % self.slots_per_day


@dataclass(frozen=True)
class HouseholdState:
    """One household's observation for one slot."""

    price: float  # $/kWh the household would pay the grid this slot
    base_load: float  # kW (H_l)
    home_soc: float  # fraction of B_h (H_b)
    pv_gen: float  # kW (H_p)
    ev_available: int  # 1 when the EV is home (E_a)
    ev_soc: float  # fraction of B_e (E_b)
    ev_depart: int  # charging slots left before departure (E_d)

    def __post_init__(self):
        if not (0.0 <= self.home_soc <= 1.0 and 0.0 <= self.ev_soc <= 1.0):
            raise ValueError("SOC out of [0, 1]")
        if self.ev_available not in (0, 1):
            raise ValueError("ev_available must be 0 or 1")
        if self.ev_available == 0 and self.ev_depart != 0:
            raise ValueError("absent EV must have ev_depart == 0")
        if self.base_load < 0 or self.pv_gen < 0:
            raise ValueError("loads and PV must be non-negative")

    def as_vector(self) -> np.ndarray:
        return np.array([self.price, self.base_load, self.home_soc,
                         self.pv_gen, self.ev_available, self.ev_soc,
                         self.ev_depart], dtype=np.float64)


@dataclass(frozen=True)
class Action:
    """Continuous control pair for one household-slot."""

    trade: float  # kW bought (+) or sold (-) on the market (P_c)
    ev_rate: float  # kW into (+) or out of (-) the EV battery (C_e)


@dataclass(frozen=True)
class ActionBounds:
    """Per-household trade bounds: sell at most delta, buy at most alpha."""

    delta: float
    alpha: float

    def __post_init__(self):
        if self.delta < 0 or self.alpha < 0:
            raise ValueError("bounds must be non-negative")


def compute_action_bounds(prev_day_gen, prev_day_cons) -> ActionBounds:
    """Trade bounds from the previous day: delta is the mean hourly gross
    generation, alpha the mean hourly gross consumption."""
    gen = np.asarray(prev_day_gen, dtype=np.float64)
    cons = np.asarray(prev_day_cons, dtype=np.float64)
    if gen.size == 0 or cons.size == 0:
        raise ValueError("previous-day series must be non-empty")
    if (gen < 0).any() or (cons < 0).any():
        raise ValueError("gross generation/consumption must be >= 0")
    return ActionBounds(float(gen.mean()), float(cons.mean()))


# -- array core --------------------------------------------------------------
# All physics below operates on numpy arrays over households so the hot
# simulation loop is vectorized; the scalar dataclass API wraps these.


def ev_rate_limits(ev_soc, ev_available, cfg: SimConfig):
    """Feasible EV rate interval [lo, hi] from rate and SOC limits.

    Charging at hi for one hour exactly fills the battery when headroom
    binds; discharging at -lo exactly empties it. Absent EVs get [0, 0].
    """
    ev_soc = np.asarray(ev_soc, dtype=np.float64)
    avail = np.asarray(ev_available, dtype=bool)
    eff = cfg.charge_efficiency
    hi = np.minimum(cfg.max_ev_rate, (1.0 - ev_soc) * cfg.ev_batt_capacity / eff)
    lo = -np.minimum(cfg.max_ev_rate, ev_soc * cfg.ev_batt_capacity * eff)
    return np.where(avail, lo, 0.0), np.where(avail, hi, 0.0)


def home_rate_limits(home_soc, cfg: SimConfig):
    """Feasible home-battery rate interval [lo, hi], same convention."""
    home_soc = np.asarray(home_soc, dtype=np.float64)
    eff = cfg.charge_efficiency
    hi = np.minimum(cfg.max_home_batt_rate,
                    (1.0 - home_soc) * cfg.home_batt_capacity / eff)
    lo = -np.minimum(cfg.max_home_batt_rate,
                     home_soc * cfg.home_batt_capacity * eff)
    return lo, hi


def forced_ev_rate(ev_soc, ev_depart, ev_available, cfg: SimConfig):
    """Minimum charging rate that keeps the departure SOC reachable.

    Spreading the remaining deficit evenly over the remaining charging
    slots: (target - soc) * B_e / (eff * slots_left). Zero (no floor)
    when the EV is absent, already at target, or out of slots; capped at
    the feasible hi limit so the floor itself is always achievable.
    """
    ev_soc = np.asarray(ev_soc, dtype=np.float64)
    depart = np.asarray(ev_depart, dtype=np.float64)
    avail = np.asarray(ev_available, dtype=bool)
    eff = cfg.charge_efficiency
    need = (cfg.ev_min_departure_soc - ev_soc) * cfg.ev_batt_capacity
    active = avail & (need > 0.0) & (depart >= 1.0)
    rate = np.where(active, need / (eff * np.maximum(depart, 1.0)), 0.0)
    _, hi = ev_rate_limits(ev_soc, ev_available, cfg)
    return np.minimum(rate, hi)


def project_joint(base_load, home_soc, pv_gen, ev_available, ev_soc,
                  ev_depart, raw_trade, raw_ev_rate, delta, alpha,
                  cfg: SimConfig):
    """Project raw actions onto the feasible set, vectorized over
    households.

    Order: the EV rate is clamped first (availability, rate, SOC
    headroom, forced-charge floor); the trade is clamped to [-delta,
    alpha]; the home-battery rate implied by the energy balance is
    clamped to its limits; finally the trade is recomputed so the
    balance holds exactly, relaxing its bounds if the battery could not
    absorb the residual (the grid is infinite slack; the overshoot is
    returned as the violation).

    Returns (trade, ev_rate, batt_rate, violation) arrays. The result is
    a fixed point: projecting it again changes nothing.
    """
    base_load = np.asarray(base_load, dtype=np.float64)
    pv_gen = np.asarray(pv_gen, dtype=np.float64)

    lo_e, hi_e = ev_rate_limits(ev_soc, ev_available, cfg)
    ev_rate = np.clip(np.asarray(raw_ev_rate, dtype=np.float64), lo_e, hi_e)
    ev_rate = np.maximum(ev_rate, forced_ev_rate(ev_soc, ev_depart,
                                                 ev_available, cfg))

    trade = np.clip(np.asarray(raw_trade, dtype=np.float64), -np.asarray(delta),
                    np.asarray(alpha))
    batt = pv_gen + trade - ev_rate - base_load
    lo_b, hi_b = home_rate_limits(home_soc, cfg)
    batt = np.clip(batt, lo_b, hi_b)
    trade = ev_rate + batt + base_load - pv_gen
    violation = np.maximum(trade - alpha, 0.0) + np.maximum(-delta - trade, 0.0)
    return trade, ev_rate, batt, violation


def step_soc(home_soc, ev_soc, ev_available, batt_rate, ev_rate,
             cfg: SimConfig):
    """One-hour SOC updates for both batteries (arrays in, arrays out).

    Charging stores rate*eff; discharging drains rate/eff. Rates are
    assumed feasible (projected); round-off is clipped at the [0, 1]
    boundary.
    """
    eff = cfg.charge_efficiency
    batt_rate = np.asarray(batt_rate, dtype=np.float64)
    ev_rate = np.asarray(ev_rate, dtype=np.float64)
    d_home = np.where(batt_rate >= 0, batt_rate * eff, batt_rate / eff)
    d_ev = np.where(ev_rate >= 0, ev_rate * eff, ev_rate / eff)
    new_home = home_soc + d_home / cfg.home_batt_capacity
    new_ev = np.where(np.asarray(ev_available, dtype=bool),
                      ev_soc + d_ev / cfg.ev_batt_capacity, ev_soc)
    if (new_home < -1e-9).any() or (new_home > 1 + 1e-9).any():
        raise AssertionError("home SOC stepped outside [0, 1]: infeasible rate")
    if (new_ev < -1e-9).any() or (new_ev > 1 + 1e-9).any():
        raise AssertionError("EV SOC stepped outside [0, 1]: infeasible rate")
    return np.clip(new_home, 0.0, 1.0), np.clip(new_ev, 0.0, 1.0)


# -- scalar wrappers (single-household API) ----------------------------------


def project_action(state: HouseholdState, raw: Action, bounds: ActionBounds,
                   cfg: SimConfig) -> Action:
    """Feasible version of a raw action for one household (see
    project_joint for the order of operations)."""
    trade, ev_rate, _, _ = project_joint(
        state.base_load, state.home_soc, state.pv_gen, state.ev_available,
        state.ev_soc, state.ev_depart, raw.trade, raw.ev_rate,
        bounds.delta, bounds.alpha, cfg)
    return Action(float(trade[()] if trade.ndim == 0 else trade),
                  float(ev_rate[()] if ev_rate.ndim == 0 else ev_rate))


def battery_rate(state: HouseholdState, action: Action) -> float:
    """Home-battery rate implied by the energy balance for a feasible
    action: C_b = H_p + P_c - C_e - H_l."""
    return state.pv_gen + action.trade - action.ev_rate - state.base_load


def step_household(state: HouseholdState, action: Action,
                   cfg: SimConfig) -> HouseholdState:
    """Advance one household one slot under a feasible action.

    Updates both SOCs through the efficiency model, runs the EV clock
    down, and marks the EV departed when its last charging slot ends.
    Exogenous fields (price, base load, PV) are left for the caller to
    refresh from the scenario; an arriving EV is installed separately
    via begin_home_window.
    """
    batt = battery_rate(state, action)
    home, ev = step_soc(np.float64(state.home_soc), np.float64(state.ev_soc),
                        state.ev_available, np.float64(batt),
                        np.float64(action.ev_rate), cfg)
    if state.ev_available:
        depart = state.ev_depart - 1
        available = 1 if depart > 0 else 0
        depart = max(depart, 0)
    else:
        available, depart = 0, 0
    return replace(state, home_soc=float(home), ev_soc=float(ev),
                   ev_available=available, ev_depart=depart)


def begin_home_window(state: HouseholdState, arrival_soc: float,
                      cfg: SimConfig) -> HouseholdState:
    """Install a newly arrived EV: present, at its arrival SOC, with the
    full home window of charging slots ahead."""
    return replace(state, ev_available=1, ev_soc=float(arrival_soc),
                   ev_depart=cfg.ev_window_hours)


def compute_surplus(state: HouseholdState, action: Action,
                    cfg: SimConfig) -> float:
    """Instantaneous power surplus C_t = H_p + H_b*B_h - H_l - C_e.

    Stored home-battery energy counts in full: over a one-hour slot the
    kWh content and the kW it could notionally supply coincide. Positive
    means the household could sell, negative that it must buy.
    """
    return (state.pv_gen + state.home_soc * cfg.home_batt_capacity
            - state.base_load - action.ev_rate)


def sample_ev_arrival(rng: np.random.Generator, cfg: SimConfig):
    """Draw one commute: SOC on arrival and the departure slot.

    The daily driving distance is Gamma(shape, scale) km; the arrival
    SOC is 1 minus the energy consumed as a fraction of capacity,
    floored at arrival_soc_floor.
    """
    distance = rng.gamma(cfg.gamma_shape, cfg.gamma_scale)
    soc = max(cfg.arrival_soc_floor,
              1.0 - distance * cfg.ev_consumption / cfg.ev_batt_capacity)
    return soc, cfg.ev_depart_slot


# -- vectorized community simulator ------------------------------------------


class Microgrid:
    """All households advanced together, slot by slot, over a scenario.

    State lives in flat arrays indexed by household. The caller drives
    the loop: observe() -> choose raw actions -> project() -> market
    clearing/rewards happen outside -> step(). Departure SOCs, forced
    trades beyond the daily bounds, and realized gross generation and
    consumption (which set the next day's bounds) are all tracked here.

    Each household owns an independent rng stream for its commute draws,
    so trajectories are reproducible regardless of evaluation order.
    """

    def __init__(self, scenario, cfg: SimConfig, seed_seq=None):
        self.cfg = cfg
        self.scenario = scenario
        if seed_seq is None:
            seed_seq = np.random.SeedSequence(cfg.rng_seed)
        self._ev_rngs = [np.random.default_rng(s)
                         for s in seed_seq.spawn(cfg.n_households)]
        self.t = 0
        self.day = 0

    # scenario accessors -----------------------------------------------------

    def _slot_of_day(self, t):
        return t % self.cfg.slots_per_day

    def _exogenous(self, t):
        """(base_load, pv_gen, price) arrays for global slot t."""
        loads = self.scenario.base_load[:, t]
        pv = self.scenario.pv[:, t]
        price = float(self.scenario.prices.p_ob[t])
        return loads, pv, price

    # lifecycle ---------------------------------------------------------------

    def reset(self, start_day: int = 1):
        """Start an episode at midnight of start_day.

        Home batteries start half full. EVs are home (they arrived the
        previous evening) with freshly sampled commute SOCs and the
        morning hours left on the clock. Day start_day - 1 of the
        scenario seeds the first trade bounds from its exogenous series
        only, since no realized behavior exists yet.
        """
        cfg = self.cfg
        n = cfg.n_households
        if start_day < 1:
            raise ValueError("start_day must be >= 1: the prior day seeds "
                             "the trade bounds")
        self.t = start_day * cfg.slots_per_day
        self.day = start_day
        self.home_soc = np.full(n, 0.5)
        self.ev_available = np.ones(n, dtype=bool)
        self.ev_soc = np.array([sample_ev_arrival(r, cfg)[0]
                                for r in self._ev_rngs])
        self.ev_depart = np.full(n, cfg.ev_depart_slot, dtype=np.int64)
        self.base_load, self.pv_gen, self.price = self._exogenous(self.t)

        prev = slice((start_day - 1) * cfg.slots_per_day,
                     start_day * cfg.slots_per_day)
        self.delta = self.scenario.pv[:, prev].mean(axis=1)
        self.alpha = self.scenario.base_load[:, prev].mean(axis=1)

        self._gen_accum = np.zeros(n)
        self._cons_accum = np.zeros(n)
        self.departures = []  # (global slot, SOC array of departing EVs)
        self.violation_total = 0.0
        return self.observe()

    def observe(self) -> np.ndarray:
        """(N, 7) observation matrix, one row per household."""
        n = self.cfg.n_households
        out = np.empty((n, 7))
        out[:, 0] = self.price
        out[:, 1] = self.base_load
        out[:, 2] = self.home_soc
        out[:, 3] = self.pv_gen
        out[:, 4] = self.ev_available
        out[:, 5] = self.ev_soc
        out[:, 6] = self.ev_depart
        return out

    def project(self, raw_trade, raw_ev_rate):
        """Feasible (trade, ev_rate, batt_rate) for this slot; violation
        overshoot is accumulated for the episode metric."""
        trade, ev_rate, batt, violation = project_joint(
            self.base_load, self.home_soc, self.pv_gen, self.ev_available,
            self.ev_soc, self.ev_depart, raw_trade, raw_ev_rate,
            self.delta, self.alpha, self.cfg)
        self.violation_total += float(violation.sum())
        return trade, ev_rate, batt

    def step(self, trade, ev_rate, batt_rate):
        """Advance every household one slot under projected actions."""
        cfg = self.cfg
        self.home_soc, self.ev_soc = step_soc(
            self.home_soc, self.ev_soc, self.ev_available, batt_rate,
            ev_rate, cfg)

        # Realized gross flows feed the next day's trade bounds.
        ev_rate = np.asarray(ev_rate, dtype=np.float64)
        batt_rate = np.asarray(batt_rate, dtype=np.float64)
        self._gen_accum += (self.pv_gen + np.maximum(-ev_rate, 0.0)
                            + np.maximum(-batt_rate, 0.0))
        self._cons_accum += (self.base_load + np.maximum(ev_rate, 0.0)
                             + np.maximum(batt_rate, 0.0))

        # EV clock: decrement, departures leave at zero.
        ticking = self.ev_available
        self.ev_depart = np.where(ticking, self.ev_depart - 1, 0)
        departing = ticking & (self.ev_depart == 0)
        if departing.any():
            self.departures.append((self.t, self.ev_soc[departing].copy()))
        self.ev_available = ticking & (self.ev_depart > 0)

        self.t += 1
        slot = self._slot_of_day(self.t)
        if slot == 0:
            # New day: previous day's realized means become the bounds.
            spd = cfg.slots_per_day
            self.delta = self._gen_accum / spd
            self.alpha = self._cons_accum / spd
            self._gen_accum = np.zeros(cfg.n_households)
            self._cons_accum = np.zeros(cfg.n_households)
            self.day += 1
        if slot == cfg.ev_home_start:
            socs = np.array([sample_ev_arrival(r, cfg)[0]
                             for r in self._ev_rngs])
            self.ev_available = np.ones(cfg.n_households, dtype=bool)
            self.ev_soc = socs
            self.ev_depart = np.full(cfg.n_households, cfg.ev_window_hours,
                                     dtype=np.int64)
        if self.t >= self.scenario.base_load.shape[1]:
            return None  # scenario exhausted; no next observation
        self.base_load, self.pv_gen, self.price = self._exogenous(self.t)
        return self.observe()

    def current_prices(self):
        return self.scenario.prices.slot(self.t)

    def departure_satisfaction(self) -> float:
        """Fraction of recorded departures at or above the SOC target."""
        if not self.departures:
            return 1.0
        socs = np.concatenate([s for _, s in self.departures])
        return float((socs >= self.cfg.ev_min_departure_soc - 1e-9).mean())

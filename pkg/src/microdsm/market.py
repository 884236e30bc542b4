"""Two-tier community energy market.

Each hourly slot, households submit a signed trade quantity ``P_c``
(positive = buying, negative = selling). Internal supply and demand are
matched at the internal price ``p_in``; the imbalance settles externally
at ``p_os`` (community sells out) or ``p_ob`` (community buys in), and the
blended clearing prices are shared by every participant on that side.

Sign convention: a household's slot reward is ``-P_c * price`` — buying
costs money, selling earns it. Prices must satisfy ``p_os <= p_in <= p_ob``
so participating internally is never worse than trading with the grid.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SlotPrices",
    "PriceSchedule",
    "MarketOutcome",
    "MarketBehavior",
    "clear_market",
    "compute_reward",
    "ev_histogram",
    "aggregate_market_behavior",
]


@dataclass(frozen=True)
class SlotPrices:
    """Price triple for one slot, in $/kWh."""

    p_os: float  # external sell price (community exports at this)
    p_ob: float  # external buy price (community imports at this)
    p_in: float  # internal community price

    def __post_init__(self):
        if not (self.p_os <= self.p_in <= self.p_ob):
            raise ValueError(
                f"price ordering violated: need p_os <= p_in <= p_ob, got "
                f"({self.p_os}, {self.p_in}, {self.p_ob})"
            )


@dataclass
class PriceSchedule:
    """Per-slot price series over a whole scenario horizon."""

    p_os: np.ndarray
    p_ob: np.ndarray
    p_in: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.p_os = np.asarray(self.p_os, dtype=np.float64)
        self.p_ob = np.asarray(self.p_ob, dtype=np.float64)
        if self.p_in is None:
            # Default internal price: midpoint of the external spread,
            # which satisfies the ordering for any valid external prices.
            self.p_in = 0.5 * (self.p_os + self.p_ob)
        self.p_in = np.asarray(self.p_in, dtype=np.float64)
        if not (self.p_os.shape == self.p_ob.shape == self.p_in.shape):
            raise ValueError("price series must share one shape")
        if self.p_os.ndim != 1:
            raise ValueError("price series must be 1-D (one entry per slot)")
        bad = np.flatnonzero(~((self.p_os <= self.p_in) & (self.p_in <= self.p_ob)))
        if bad.size:
            raise ValueError(
                f"price ordering violated at slot {int(bad[0])}: "
                f"({self.p_os[bad[0]]}, {self.p_in[bad[0]]}, {self.p_ob[bad[0]]})"
            )

    def __len__(self):
        return self.p_os.shape[0]

    def slot(self, t: int) -> SlotPrices:
        return SlotPrices(float(self.p_os[t]), float(self.p_ob[t]),
                          float(self.p_in[t]))


@dataclass(frozen=True)
class MarketOutcome:
    """Cleared totals and blended prices for one slot."""

    total_sell: float  # kWh offered by sellers
    total_buy: float  # kWh demanded by buyers
    price_sell: float  # $/kWh earned per unit sold
    price_buy: float  # $/kWh paid per unit bought


def clear_market(p_c, prices: SlotPrices) -> MarketOutcome:
    """Clear one slot given every household's signed trade quantity.

    When sellers cover the buyers (total_sell >= total_buy) buyers pay
    p_in and sellers earn the volume-weighted blend of p_in (internally
    matched) and p_os (exported remainder); the mirrored blend applies
    when buyers dominate. Both clearing prices land inside the external
    spread, so the outcome never beats trading directly with the grid.
    A slot with no trades clears at (p_in, p_in) for reporting.
    """
    p_c = np.asarray(p_c, dtype=np.float64)
    total_sell = float(np.maximum(-p_c, 0.0).sum())
    total_buy = float(np.maximum(p_c, 0.0).sum())
    if total_sell == 0.0 and total_buy == 0.0:
        return MarketOutcome(0.0, 0.0, prices.p_in, prices.p_in)
    if total_sell >= total_buy:
        price_buy = prices.p_in
        price_sell = (prices.p_in * total_buy
                      + prices.p_os * (total_sell - total_buy)) / total_sell
    else:
        price_sell = prices.p_in
        price_buy = (prices.p_in * total_sell
                     + prices.p_ob * (total_buy - total_sell)) / total_buy
    return MarketOutcome(total_sell, total_buy, price_sell, price_buy)


def compute_reward(p_c, outcome: MarketOutcome):
    """Slot reward in $: -P_c * (buy price if buying else sell price).

    Negative when buying, positive when selling; scalar in, scalar out,
    array in, array out.
    """
    p_c_arr = np.asarray(p_c, dtype=np.float64)
    r = np.where(p_c_arr >= 0.0, -p_c_arr * outcome.price_buy,
                 -p_c_arr * outcome.price_sell)
    return float(r) if np.isscalar(p_c) or p_c_arr.ndim == 0 else r


@dataclass
class MarketBehavior:
    """Aggregate abstraction of one slot's joint action.

    sell_total/buy_total are the community totals in kWh; ev_hist is a
    K-bin normalized histogram of the available EVs' charging rates over
    [-eta, +eta] (all zeros when no EV acted).
    """

    sell_total: float
    buy_total: float
    ev_hist: np.ndarray

    @classmethod
    def cold_start(cls, k: int) -> "MarketBehavior":
        """Neutral behavior used before any history exists: zero totals
        and a uniform histogram."""
        return cls(0.0, 0.0, np.full(k, 1.0 / k))

    def features(self, total_scale: float) -> np.ndarray:
        """Flat feature vector [sell/scale, buy/scale, hist...] of
        length 2 + K, for policy and predictor inputs."""
        return np.concatenate((
            [self.sell_total / total_scale, self.buy_total / total_scale],
            self.ev_hist,
        ))

    def copy(self) -> "MarketBehavior":
        return MarketBehavior(self.sell_total, self.buy_total,
                              self.ev_hist.copy())


def ev_histogram(c_e, eta: float, k: int) -> np.ndarray:
    """Normalized K-bin histogram of EV charging rates over [-eta, +eta].

    Bins are uniform; a value on an interior bin edge counts toward the
    upper bin, and +eta lands in the last bin. Empty input gives the
    all-zero histogram.
    """
    if k < 2:
        raise ValueError("need at least 2 histogram bins")
    c_e = np.asarray(c_e, dtype=np.float64)
    hist = np.zeros(k)
    if c_e.size == 0:
        return hist
    width = 2.0 * eta / k
    idx = np.clip(np.floor((c_e + eta) / width).astype(int), 0, k - 1)
    np.add.at(hist, idx, 1.0)
    return hist / c_e.size


def aggregate_market_behavior(p_c, c_e, ev_mask, eta: float,
                              k: int) -> MarketBehavior:
    """Summarize one slot's joint action as (totals, EV-rate histogram).

    Totals cover every household's trade; the histogram covers only
    households whose EV is present (ev_mask true).
    """
    p_c = np.asarray(p_c, dtype=np.float64)
    c_e = np.asarray(c_e, dtype=np.float64)
    ev_mask = np.asarray(ev_mask, dtype=bool)
    sell_total = float(np.maximum(-p_c, 0.0).sum())
    buy_total = float(np.maximum(p_c, 0.0).sum())
    return MarketBehavior(sell_total, buy_total,
                          ev_histogram(c_e[ev_mask], eta, k))

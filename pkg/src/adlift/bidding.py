"""Leverage-rate bidding against a synthetic second-price auction world.

An AD's leverage rate (lvr) is its estimated effect on all-channel clicks
per advertising click, read off the effect matrix between the treatment
bins of its two most recent distinct daily click counts. The experiment
harness scales each experiment AD's value-based bid by its normalized
leverage, calibrates a global factor kappa so the group's daily replay
cost matches what the plain value-based policy would have spent on the
same auctions, and reports per-group click series and Fig-style ratio
panels (advertising, all-channel, organic).

The replay is a single-slot second-price pay-per-click auction: an AD wins
an opportunity when its bid exceeds the competing top price, a won
impression converts to a click with the opportunity's click probability,
and the AD pays the competing price for each realized click. Click
randomness and outcome noise are drawn once per replay seed in canonical
log order, independent of the bidding policy, so win sets nest as bids
rise and replay cost is monotone in kappa.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Standardization
from .model import Model
from .synthetic import GenConfig, GroundTruth, generate

LOG_FORMAT = "adlift-auction-log"
LOG_VERSION = 1
EXPERIMENT_FORMAT = "adlift-experiment-report"
EXPERIMENT_VERSION = 1
LOG_HEADER = "ad_id,day,opportunity_id,competing_price,click_prob"
SERIES_HEADER = "day,ad_clicks_ratio,all_clicks_ratio,organic_clicks_ratio,cost_ratio"

# minimal market presence for nonpositive leverage: fraction of the
# value-based bid
_BID_FLOOR_FRACTION = 0.01


class LvrHistoryError(ValueError):
    """No usable click-history pair (s, t) with s != t exists."""


class CalibrationError(RuntimeError):
    """kappa calibration could not bracket or reach the target cost."""


# ---------------------------------------------------------------------------
# effect predictors


class OraclePredictor:
    """True effect matrices straight from the generator's ground truth."""

    def __init__(self, gt: GroundTruth):
        self.gt = gt
        self.n_treatments = gt.n_treatments

    def effect_matrix(self, x_raw: np.ndarray) -> np.ndarray:
        return self.gt.alpha_matrix(np.atleast_2d(x_raw))


class ModelPredictor:
    """Estimated effect matrices from a trained model.

    Raw contexts are passed through the training-time standardization when
    one is given (models are fit on standardized features).
    """

    def __init__(self, model: Model, standardization: Optional[Standardization] = None):
        self.model = model
        self.standardization = standardization
        self.n_treatments = model.config.n_treatments

    def effect_matrix(self, x_raw: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
        if self.standardization is not None:
            x = self.standardization.apply(x)
        return self.model.iae_matrix(x)


# ---------------------------------------------------------------------------
# leverage rate and bids


def click_bin(clicks, n_treatments: int):
    """Map daily advertising click counts to 1-based treatment indices.

    Counts at or above n-1 share the top bin (the largest modeled level).
    """
    clicks = np.asarray(clicks)
    if np.any(clicks < 0):
        raise ValueError("click counts must be >= 0")
    return np.minimum(clicks, n_treatments - 1).astype(np.int64) + 1


def nominal_lvr_pair(history: Sequence[int]) -> Tuple[int, int]:
    """(s, t) from a daily click history: t is yesterday's count, s the most
    recent earlier count different from t."""
    if len(history) < 2:
        raise LvrHistoryError(f"need at least 2 days of history, got {len(history)}")
    t = int(history[-1])
    for v in reversed(list(history[:-1])):
        if int(v) != t:
            return int(v), t
    raise LvrHistoryError("all historical click counts equal; no s != t pair")


def leverage_rate(predictor, x_raw: np.ndarray, s: int, t: int) -> float:
    """Estimated all-channel clicks gained per advertising click, moving
    from s to t daily clicks. Symmetric in (s, t)."""
    if s == t:
        raise ValueError("undefined leverage rate: s == t")
    n = predictor.n_treatments
    bs = int(click_bin(s, n))
    bt = int(click_bin(t, n))
    if bs == bt:
        return 0.0
    m = predictor.effect_matrix(np.asarray(x_raw, dtype=np.float64)[None, :])[0]
    return float(m[bs - 1, bt - 1] / (bt - bs))


def _sigmas(predictor, contexts: np.ndarray, s_arr: np.ndarray,
            t_arr: np.ndarray) -> np.ndarray:
    n = predictor.n_treatments
    bs = click_bin(s_arr, n)
    bt = click_bin(t_arr, n)
    mats = predictor.effect_matrix(contexts)
    rows = np.arange(len(contexts))
    diff = np.where(bt == bs, 1, bt - bs)
    return np.where(bs == bt, 0.0, mats[rows, bs - 1, bt - 1] / diff)


@dataclass
class BidParams:
    """Per-AD value-based bid factors plus the group leverage scaling."""

    gamma: float
    cvr: float
    ip: float
    kappa: float = 1.0
    sigma_bar: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not 0.0 <= self.cvr <= 1.0:
            raise ValueError("cvr must be in [0, 1]")
        if not self.ip > 0:
            raise ValueError("ip must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not self.sigma_bar > 0:
            raise ValueError("sigma_bar must be > 0")

    @property
    def base_bid(self) -> float:
        return self.gamma * self.cvr * self.ip


def bid(params: BidParams, sigma: float) -> float:
    """Leverage-scaled bid, floored at a minimal market presence."""
    scale = max(params.kappa * sigma / params.sigma_bar, _BID_FLOOR_FRACTION)
    return scale * params.base_bid


def _bid_vector(base_bids: np.ndarray, sigmas: np.ndarray, sigma_bar: float,
                kappa: float) -> np.ndarray:
    scale = np.maximum(kappa * sigmas / sigma_bar, _BID_FLOOR_FRACTION)
    return scale * base_bids


# ---------------------------------------------------------------------------
# auction log


@dataclass
class AdSpec:
    ad_id: str
    gamma: float
    cvr: float
    ip: float
    x_raw: np.ndarray

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"{self.ad_id}: gamma must be > 0")
        if not 0.0 <= self.cvr <= 1.0:
            raise ValueError(f"{self.ad_id}: cvr must be in [0, 1]")
        if not self.ip > 0:
            raise ValueError(f"{self.ad_id}: ip must be > 0")
        self.x_raw = np.asarray(self.x_raw, dtype=np.float64)

    @property
    def base_bid(self) -> float:
        return self.gamma * self.cvr * self.ip


class AuctionLog:
    """Daily auction opportunities for a set of ADs, plus the world model.

    Opportunities are kept in canonical (ad_id, day, opportunity_id) order;
    every consumer of replay randomness indexes them in this order.
    """

    def __init__(self, ads: List[AdSpec], ad_index: np.ndarray, day: np.ndarray,
                 opportunity_id: np.ndarray, competing_price: np.ndarray,
                 click_prob: np.ndarray, n_days: int, ground_truth: dict):
        ad_index = np.asarray(ad_index, dtype=np.int64)
        if len(ads) and np.any((ad_index < 0) | (ad_index >= len(ads))):
            raise ValueError("ad_index out of range")
        order = np.argsort([a.ad_id for a in ads], kind="stable")
        remap = np.empty(len(ads), dtype=np.int64)
        remap[order] = np.arange(len(ads))
        self.ads = [ads[i] for i in order]
        ad_index = remap[ad_index] if len(ads) else ad_index
        day = np.asarray(day, dtype=np.int64)
        opportunity_id = np.asarray(opportunity_id, dtype=np.int64)
        competing_price = np.asarray(competing_price, dtype=np.float64)
        click_prob = np.asarray(click_prob, dtype=np.float64)

        if not (len(ad_index) == len(day) == len(opportunity_id)
                == len(competing_price) == len(click_prob)):
            raise ValueError("opportunity arrays must share one length")
        if len(self.ads) == 0 or len(ad_index) == 0:
            raise ValueError("auction log needs at least one ad and opportunity")
        if len({a.ad_id for a in self.ads}) != len(self.ads):
            raise ValueError("duplicate ad ids")
        if np.any(day < 0) or np.any(day >= n_days):
            raise ValueError(f"days must lie in 0..{n_days - 1}")
        if np.any(competing_price <= 0):
            raise ValueError("competing prices must be > 0")
        if np.any((click_prob < 0) | (click_prob > 1)):
            raise ValueError("click probabilities must be in [0, 1]")
        dims = {a.x_raw.shape for a in self.ads}
        if len(dims) != 1:
            raise ValueError(f"inconsistent ad context shapes: {sorted(dims)}")

        order = np.lexsort((opportunity_id, day, ad_index))
        self.ad_index = ad_index[order]
        self.day = day[order]
        self.opportunity_id = opportunity_id[order]
        self.competing_price = competing_price[order]
        self.click_prob = click_prob[order]
        triples = np.stack([self.ad_index, self.day, self.opportunity_id], axis=1)
        if len(np.unique(triples, axis=0)) != len(triples):
            raise ValueError("duplicate (ad, day, opportunity_id) rows")
        self.n_days = int(n_days)
        self.ground_truth = ground_truth
        self.contexts = np.stack([a.x_raw for a in self.ads])
        self._day_slices = [np.nonzero(self.day == d)[0] for d in range(self.n_days)]

    @property
    def n_ads(self) -> int:
        return len(self.ads)

    @property
    def n_opportunities(self) -> int:
        return len(self.day)

    @property
    def ad_ids(self) -> List[str]:
        return [a.ad_id for a in self.ads]

    def base_bids(self) -> np.ndarray:
        return np.array([a.base_bid for a in self.ads])

    def save(self, csv_path: str) -> None:
        with open(csv_path, "w") as fh:
            fh.write(LOG_HEADER + "\n")
            for k in range(self.n_opportunities):
                fh.write(f"{self.ads[self.ad_index[k]].ad_id},{self.day[k]},"
                         f"{self.opportunity_id[k]},"
                         f"{float(self.competing_price[k])!r},"
                         f"{float(self.click_prob[k])!r}\n")
        sidecar = {
            "format": LOG_FORMAT,
            "version": LOG_VERSION,
            "n_days": self.n_days,
            "ads": [{"ad_id": a.ad_id, "gamma": a.gamma, "cvr": a.cvr,
                     "ip": a.ip, "x_raw": a.x_raw.tolist()} for a in self.ads],
            "ground_truth": self.ground_truth,
        }
        root, _ = os.path.splitext(csv_path)
        with open(root + ".json", "w") as fh:
            json.dump(sidecar, fh, sort_keys=True)

    @classmethod
    def load(cls, csv_path: str) -> "AuctionLog":
        root, _ = os.path.splitext(csv_path)
        with open(root + ".json") as fh:
            sidecar = json.load(fh)
        if sidecar.get("format") != LOG_FORMAT:
            raise ValueError(f"{root + '.json'}: not an auction-log sidecar")
        if sidecar.get("version") != LOG_VERSION:
            raise ValueError(f"{root + '.json'}: unsupported version")
        ads = [AdSpec(d["ad_id"], d["gamma"], d["cvr"], d["ip"],
                      np.asarray(d["x_raw"])) for d in sidecar["ads"]]
        index_of = {a.ad_id: i for i, a in enumerate(ads)}
        cols: Dict[str, list] = {"ad": [], "day": [], "opp": [], "price": [], "prob": []}
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != LOG_HEADER.split(","):
                raise ValueError(f"{csv_path}: bad header, expected {LOG_HEADER}")
            for line_no, row in enumerate(reader, start=2):
                if len(row) != 5:
                    raise ValueError(f"{csv_path}: line {line_no}: expected 5 fields")
                if row[0] not in index_of:
                    raise ValueError(f"{csv_path}: line {line_no}: unknown ad id {row[0]!r}")
                try:
                    cols["ad"].append(index_of[row[0]])
                    cols["day"].append(int(row[1]))
                    cols["opp"].append(int(row[2]))
                    cols["price"].append(float(row[3]))
                    cols["prob"].append(float(row[4]))
                except ValueError as exc:
                    raise ValueError(f"{csv_path}: line {line_no}: {exc}") from None
        return cls(ads, np.array(cols["ad"]), np.array(cols["day"]),
                   np.array(cols["opp"]), np.array(cols["price"]),
                   np.array(cols["prob"]), sidecar["n_days"],
                   sidecar.get("ground_truth"))


@dataclass
class AuctionWorldConfig:
    """Synthetic market: contexts + ground truth from the data generator,
    per-AD bid factors, and per-opportunity prices and click probabilities.

    Competing prices are log-normal per opportunity around a blend of the
    market median bid and the AD's own value bid (price_coupling: 0 = fully
    exogenous prices, 1 = fully value-tied). Some exogeneity is needed for
    leverage-weighted bids to find cheap high-slope clicks; some coupling
    keeps win rates away from 0/1 across the value spread. Opportunity
    volume and click probabilities keep expected daily clicks inside the
    modeled treatment range, where the exposure curve still has slope.
    """

    n_ads: int = 60
    n_days: int = 12
    opportunities_per_day: int = 8
    gamma_range: Tuple[float, float] = (1.0, 3.0)
    cvr_range: Tuple[float, float] = (0.02, 0.08)
    ip_range: Tuple[float, float] = (50.0, 150.0)
    price_sigma: float = 0.3
    price_coupling: float = 0.25
    click_prob_range: Tuple[float, float] = (0.1, 0.5)
    seed: int = 0
    gen: GenConfig = field(default_factory=GenConfig)

    def __post_init__(self):
        if self.n_ads < 2:
            raise ValueError("n_ads must be >= 2")
        if self.n_days < 2:
            raise ValueError("n_days must be >= 2")
        if self.opportunities_per_day < 1:
            raise ValueError("opportunities_per_day must be >= 1")
        for name in ("gamma_range", "cvr_range", "ip_range", "click_prob_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi")
        if not self.price_sigma > 0:
            raise ValueError("price_sigma must be > 0")
        if not 0 <= self.price_coupling <= 1:
            raise ValueError("price_coupling must be in [0, 1]")


def generate_auction_log(config: AuctionWorldConfig) -> AuctionLog:
    """Build a seeded market: AD contexts from the synthetic world (so true
    effects are known), value factors per AD, and per-opportunity auctions."""
    gen_cfg = replace(config.gen, seed=config.seed,
                      n_samples=max(config.n_ads, 10 * config.gen.n_treatments))
    dataset, gt = generate(gen_cfg)
    contexts = dataset.x_raw[:config.n_ads]

    rng = np.random.default_rng(config.seed + 1)
    ads = []
    for k in range(config.n_ads):
        ads.append(AdSpec(
            ad_id=f"ad{k:04d}",
            gamma=float(rng.uniform(*config.gamma_range)),
            cvr=float(rng.uniform(*config.cvr_range)),
            ip=float(rng.uniform(*config.ip_range)),
            x_raw=contexts[k],
        ))

    per_day = config.opportunities_per_day
    n_rows = config.n_ads * config.n_days * per_day
    ad_index = np.repeat(np.arange(config.n_ads), config.n_days * per_day)
    day = np.tile(np.repeat(np.arange(config.n_days), per_day), config.n_ads)
    opp = np.tile(np.arange(per_day), config.n_ads * config.n_days)
    all_base = np.array([a.base_bid for a in ads])
    anchor = (all_base ** config.price_coupling
              * np.median(all_base) ** (1.0 - config.price_coupling))
    price = anchor[ad_index] * rng.lognormal(0.0, config.price_sigma,
                                             size=n_rows)
    prob = rng.uniform(*config.click_prob_range, size=n_rows)
    return AuctionLog(ads, ad_index, day, opp, price, prob, config.n_days,
                      gt.to_dict())


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplayDraws:
    """Policy-independent randomness for one replay seed."""

    click_u: np.ndarray
    noise: np.ndarray


def make_draws(log: AuctionLog, seed: int) -> ReplayDraws:
    rng = np.random.default_rng(seed)
    return ReplayDraws(click_u=rng.random(log.n_opportunities),
                       noise=rng.standard_normal((log.n_ads, log.n_days)))


def _day_outcome(log: AuctionLog, day: int, bids: np.ndarray,
                 draws: ReplayDraws) -> Tuple[np.ndarray, np.ndarray]:
    """Realized advertising clicks and PPC cost per AD for one day."""
    idx = log._day_slices[day]
    ads = log.ad_index[idx]
    win = bids[ads] > log.competing_price[idx]
    clicked = draws.click_u[idx] < log.click_prob[idx]
    realized = win & clicked
    clicks = np.bincount(ads[realized], minlength=log.n_ads)
    cost = np.bincount(ads[realized], weights=log.competing_price[idx][realized],
                       minlength=log.n_ads)
    return clicks, cost


def day_cost(log: AuctionLog, day: int, bids: np.ndarray, draws: ReplayDraws,
             mask: Optional[np.ndarray] = None) -> float:
    """Total replay cost of one day, optionally restricted to an AD subset."""
    _, cost = _day_outcome(log, day, bids, draws)
    return float(cost.sum() if mask is None else cost[mask].sum())


@dataclass
class ReplayResult:
    """Per-AD daily outcome series from one replay."""

    ad_clicks: np.ndarray
    cost: np.ndarray
    all_clicks: np.ndarray
    organic_clicks: np.ndarray

    def group_series(self, mask: np.ndarray) -> Dict[str, np.ndarray]:
        return {
            "ad_clicks": self.ad_clicks[mask].sum(axis=0),
            "cost": self.cost[mask].sum(axis=0),
            "all_clicks": self.all_clicks[mask].sum(axis=0),
            "organic_clicks": self.organic_clicks[mask].sum(axis=0),
        }


def _all_channel(gt: GroundTruth, contexts: np.ndarray, clicks: np.ndarray,
                 noise_col: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    bins = click_bin(clicks, gt.n_treatments)
    all_clicks = np.maximum(gt.m(contexts, bins) + gt.noise * noise_col, 0.0)
    organic = np.maximum(all_clicks - clicks, 0.0)
    return all_clicks, organic


def replay(log: AuctionLog, bid_fn: Callable[[int, np.ndarray], np.ndarray],
           seed: int = 0) -> ReplayResult:
    """Run every day through the auctions under a bidding policy.

    bid_fn(day, history) -> per-AD bid vector; history is the (n_ads, day)
    matrix of realized advertising clicks from earlier days. Outcomes are
    deterministic given (log, policy, seed).
    """
    if log.ground_truth is None:
        raise ValueError("replay requires an auction log with ground truth")
    gt = GroundTruth.from_dict(log.ground_truth)
    draws = make_draws(log, seed)
    shape = (log.n_ads, log.n_days)
    out = ReplayResult(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                       np.zeros(shape))
    history = np.zeros((log.n_ads, 0), dtype=np.int64)
    for d in range(log.n_days):
        bids = np.asarray(bid_fn(d, history), dtype=np.float64)
        if bids.shape != (log.n_ads,):
            raise ValueError(f"bid_fn must return ({log.n_ads},), got {bids.shape}")
        clicks, cost = _day_outcome(log, d, bids, draws)
        all_clicks, organic = _all_channel(gt, log.contexts, clicks,
                                           draws.noise[:, d])
        out.ad_clicks[:, d] = clicks
        out.cost[:, d] = cost
        out.all_clicks[:, d] = all_clicks
        out.organic_clicks[:, d] = organic
        history = np.concatenate([history, clicks[:, None]], axis=1)
    return out


# ---------------------------------------------------------------------------
# kappa calibration


@dataclass
class CalibrationResult:
    kappa: float
    cost: float
    target: float
    steps: int
    within_tolerance: bool


def calibrate_kappa(cost_of_kappa: Callable[[float], float], target_cost: float,
                    tolerance: float = 0.01,
                    bracket: Tuple[float, float] = (0.1, 10.0),
                    max_steps: int = 40) -> CalibrationResult:
    """Bisect a monotone replay-cost curve to the target spend.

    Returns as soon as the relative gap is within tolerance; if the curve
    steps over the target (finite auctions), the closest evaluated point
    is returned with within_tolerance=False and a warning.
    """
    if not target_cost > 0:
        raise ValueError("target cost must be > 0")
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    c_lo = float(cost_of_kappa(lo))
    c_hi = float(cost_of_kappa(hi))

    def gap(c: float) -> float:
        return abs(c - target_cost) / target_cost

    best = min((gap(c_lo), lo, c_lo), (gap(c_hi), hi, c_hi))
    if best[0] <= tolerance:
        return CalibrationResult(best[1], best[2], target_cost, 0, True)
    if not c_lo <= target_cost <= c_hi:
        raise CalibrationError(
            f"cannot bracket target cost {target_cost!r} in kappa "
            f"[{lo!r}, {hi!r}]: endpoint costs [{c_lo!r}, {c_hi!r}]")
    steps = 0
    while steps < max_steps:
        mid = 0.5 * (lo + hi)
        c_mid = float(cost_of_kappa(mid))
        steps += 1
        best = min(best, (gap(c_mid), mid, c_mid))
        if gap(c_mid) <= tolerance:
            return CalibrationResult(mid, c_mid, target_cost, steps, True)
        if c_mid < target_cost:
            lo = mid
        else:
            hi = mid
    warnings.warn(f"kappa calibration stopped at relative gap {best[0]:.4f} "
                  f"after {steps} steps (cost curve may step over the target)")
    return CalibrationResult(best[1], best[2], target_cost, steps, False)


# ---------------------------------------------------------------------------
# grouped experiment


@dataclass
class ExperimentConfig:
    warmup_days: int = 3
    experiment_fraction: float = 0.5
    split_seed: int = 0
    replay_seed: int = 0
    tolerance: float = 0.01
    bracket: Tuple[float, float] = (0.1, 10.0)
    max_steps: int = 40
    aa_mode: bool = False

    def __post_init__(self):
        if self.warmup_days < 2:
            raise ValueError("warmup_days must be >= 2 (leverage needs history)")
        if not 0.0 < self.experiment_fraction < 1.0:
            raise ValueError("experiment_fraction must be in (0, 1)")
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance must be in (0, 1)")
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ValueError("bracket must satisfy 0 < lo < hi")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class ExperimentReport:
    """Outcome of a simulated lvr-bidding experiment.

    per_day holds raw group totals for every day; baseline_per_day holds
    the experiment group's would-have-been totals under the plain policy
    on each experiment day (same auctions, same draws). ratio_series is
    the warmup-normalized experiment/control comparison; the {metric}_uplift
    summary entries are the paired realized/baseline totals, which isolate
    the policy effect from cross-group composition noise.
    """

    n_ads: int
    n_days: int
    warmup_days: int
    aa_mode: bool
    experiment_ads: List[str]
    control_ads: List[str]
    unqualified_ads: List[str]
    kappa_by_day: List[float]
    kappa_within_tolerance: List[bool]
    per_day: Dict[str, Dict[str, List[float]]]
    baseline_per_day: Dict[str, List[float]]
    ratio_series: Dict[str, List[float]]
    summary: Dict[str, float]
    config: dict

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["format"] = EXPERIMENT_FORMAT
        out["version"] = EXPERIMENT_VERSION
        return out

    def save_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def save_series_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(SERIES_HEADER + "\n")
            days = range(self.warmup_days, self.n_days)
            for k, d in enumerate(days):
                fh.write(f"{d},{self.ratio_series['ad_clicks'][k]!r},"
                         f"{self.ratio_series['all_clicks'][k]!r},"
                         f"{self.ratio_series['organic_clicks'][k]!r},"
                         f"{self.ratio_series['cost'][k]!r}\n")


_METRICS = ("ad_clicks", "cost", "all_clicks", "organic_clicks")


def run_experiment(log: AuctionLog, predictor, config: ExperimentConfig
                   ) -> ExperimentReport:
    """Warmup on the plain policy, split, then daily lvr bidding at cost
    parity for the experiment group.

    Qualification (a usable click-history pair) is decided before the
    random split so group assignment stays independent of outcomes. Each
    experiment day recomputes nominal leverages from realized history,
    normalizes by the group mean, and calibrates kappa so the group's
    replay cost matches the plain policy's cost on the same day's auctions.
    """
    if log.ground_truth is None:
        raise ValueError("experiment requires an auction log with ground truth")
    if config.warmup_days >= log.n_days:
        raise ValueError(f"warmup_days {config.warmup_days} must be < "
                         f"n_days {log.n_days}")
    gt = GroundTruth.from_dict(log.ground_truth)
    draws = make_draws(log, config.replay_seed)
    base_bids = log.base_bids()
    shape = (log.n_ads, log.n_days)
    result = ReplayResult(np.zeros(shape), np.zeros(shape), np.zeros(shape),
                          np.zeros(shape))
    history = np.zeros((log.n_ads, 0), dtype=np.int64)

    def run_day(d: int, bids: np.ndarray) -> np.ndarray:
        clicks, cost = _day_outcome(log, d, bids, draws)
        all_clicks, organic = _all_channel(gt, log.contexts, clicks,
                                           draws.noise[:, d])
        result.ad_clicks[:, d] = clicks
        result.cost[:, d] = cost
        result.all_clicks[:, d] = all_clicks
        result.organic_clicks[:, d] = organic
        return clicks

    for d in range(config.warmup_days):
        clicks = run_day(d, base_bids)
        history = np.concatenate([history, clicks[:, None]], axis=1)

    qualified = (history[:, :-1] != history[:, -1:]).any(axis=1)
    unqualified_ids = [log.ads[i].ad_id for i in np.nonzero(~qualified)[0]]
    q_idx = np.nonzero(qualified)[0]
    if len(q_idx) < 2:
        raise LvrHistoryError(
            f"only {len(q_idx)} ADs have a usable click history; "
            f"need at least 2 to form groups")
    rng = np.random.default_rng(config.split_seed)
    perm = rng.permutation(len(q_idx))
    n_exp = min(max(int(round(len(q_idx) * config.experiment_fraction)), 1),
                len(q_idx) - 1)
    exp_idx = np.sort(q_idx[perm[:n_exp]])
    ctrl_idx = np.sort(q_idx[perm[n_exp:]])
    exp_mask = np.zeros(log.n_ads, dtype=bool)
    exp_mask[exp_idx] = True

    kappa_by_day: List[float] = []
    kappa_ok: List[bool] = []
    baseline_per_day: Dict[str, List[float]] = {m: [] for m in _METRICS}
    for d in range(config.warmup_days, log.n_days):
        # plain-policy counterfactual for the same day and draws: the
        # calibration target and the paired baseline for uplift reporting
        cf_clicks, cf_cost = _day_outcome(log, d, base_bids, draws)
        cf_all, cf_organic = _all_channel(gt, log.contexts, cf_clicks,
                                          draws.noise[:, d])
        cf = {"ad_clicks": cf_clicks, "cost": cf_cost,
              "all_clicks": cf_all, "organic_clicks": cf_organic}
        for m in _METRICS:
            baseline_per_day[m].append(float(cf[m][exp_mask].sum()))
        if config.aa_mode:
            bids = base_bids
            kappa_by_day.append(1.0)
            kappa_ok.append(True)
        else:
            pairs = [nominal_lvr_pair(history[i]) for i in exp_idx]
            s_arr = np.array([p[0] for p in pairs])
            t_arr = np.array([p[1] for p in pairs])
            sigmas = _sigmas(predictor, log.contexts[exp_idx], s_arr, t_arr)
            sigma_bar = float(sigmas.mean())
            if not sigma_bar > 0:
                raise CalibrationError(
                    f"day {d}: mean leverage {sigma_bar!r} is not positive; "
                    f"cannot normalize bids")
            target = float(cf_cost[exp_mask].sum())

            def cost_of(kappa: float) -> float:
                bids_k = base_bids.copy()
                bids_k[exp_idx] = _bid_vector(base_bids[exp_idx], sigmas,
                                              sigma_bar, kappa)
                return day_cost(log, d, bids_k, draws, exp_mask)

            cal = calibrate_kappa(cost_of, target, config.tolerance,
                                  config.bracket, config.max_steps)
            kappa_by_day.append(cal.kappa)
            kappa_ok.append(cal.within_tolerance)
            bids = base_bids.copy()
            bids[exp_idx] = _bid_vector(base_bids[exp_idx], sigmas, sigma_bar,
                                        cal.kappa)
        clicks = run_day(d, bids)
        history = np.concatenate([history, clicks[:, None]], axis=1)

    groups = {"experiment": exp_mask, "control": ~exp_mask & qualified}
    per_day = {g: {m: s.tolist() for m, s in result.group_series(mask).items()}
               for g, mask in groups.items()}

    ratio_series: Dict[str, List[float]] = {}
    for m in _METRICS:
        series = {}
        for g in ("experiment", "control"):
            vals = np.asarray(per_day[g][m])
            norm = vals[:config.warmup_days].mean()
            if not norm > 0:
                raise CalibrationError(
                    f"{g} group has zero warmup {m}; cannot form ratios")
            series[g] = vals[config.warmup_days:] / norm
        ratio_series[m] = (series["experiment"] / series["control"]).tolist()
    summary = {f"{m}_mean_ratio": float(np.mean(ratio_series[m]))
               for m in _METRICS}
    for m in _METRICS:
        realized = float(np.sum(per_day["experiment"][m][config.warmup_days:]))
        baseline = float(np.sum(baseline_per_day[m]))
        if not baseline > 0:
            raise CalibrationError(
                f"experiment group has zero baseline {m} over experiment "
                f"days; cannot form uplift")
        summary[f"{m}_uplift"] = realized / baseline

    return ExperimentReport(
        n_ads=log.n_ads,
        n_days=log.n_days,
        warmup_days=config.warmup_days,
        aa_mode=config.aa_mode,
        experiment_ads=[log.ads[i].ad_id for i in exp_idx],
        control_ads=[log.ads[i].ad_id for i in ctrl_idx],
        unqualified_ads=unqualified_ids,
        kappa_by_day=kappa_by_day,
        kappa_within_tolerance=kappa_ok,
        per_day=per_day,
        baseline_per_day=baseline_per_day,
        ratio_series=ratio_series,
        summary=summary,
        config={"warmup_days": config.warmup_days,
                "experiment_fraction": config.experiment_fraction,
                "split_seed": config.split_seed,
                "replay_seed": config.replay_seed,
                "tolerance": config.tolerance,
                "bracket": list(config.bracket),
                "max_steps": config.max_steps,
                "aa_mode": config.aa_mode},
    )

"""Synthetic observational world with known potential outcomes.

One scalar latent u(x) = sigmoid(w . phi(x)) drives everything that matters:
the outcome lift, and (scaled by the bias knob) how strongly treatment
assignment tilts toward higher treatments. Potential outcomes are

    m_i(x) = base(x) + lift(x) * g(i - 1),   g(k) = 1 - (1 - k/(n-1))^2,

so g is zero at no exposure, increasing, and concave (diminishing returns).
All ground-truth parameters are closed-form functions of the raw features
and serialize into the dataset sidecar, which makes true effects computable
for any context and lets a saved dataset be regenerated bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import Dataset, FeatureGroup, FeatureSchema


@dataclass
class GenConfig:
    n_samples: int = 20000
    n_treatments: int = 5
    id_dim: int = 10
    pv_day_dim: int = 6
    pv_week_dim: int = 6
    shop_dim: int = 5
    competition_dim: int = 3
    bias: float = 0.0
    noise: float = 1.0
    lift_low: float = 1.0
    lift_high: float = 5.0
    base_low: float = 10.0
    base_high: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.n_treatments < 2:
            raise ValueError("n_treatments must be >= 2")
        if self.n_samples < 10 * self.n_treatments:
            raise ValueError("n_samples must be >= 10 * n_treatments")
        for name in ("id_dim", "pv_day_dim", "pv_week_dim", "shop_dim", "competition_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.bias < 0:
            raise ValueError("bias must be >= 0")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not (0 <= self.lift_low < self.lift_high):
            raise ValueError("need 0 <= lift_low < lift_high")
        if not (0 < self.base_low < self.base_high):
            raise ValueError("need 0 < base_low < base_high")

    @property
    def d(self) -> int:
        return (self.id_dim + self.pv_day_dim + self.pv_week_dim
                + self.shop_dim + self.competition_dim)

    def schema(self) -> FeatureSchema:
        return FeatureSchema([
            FeatureGroup("ids", self.id_dim, one_hot=True),
            FeatureGroup("pv_sources_lastday", self.pv_day_dim),
            FeatureGroup("pv_sources_lastweek", self.pv_week_dim),
            FeatureGroup("shop", self.shop_dim),
            FeatureGroup("competition", self.competition_dim),
        ])


# latent score spread before the sigmoid; widens u over (0, 1)
_U_SCALE = 1.5


@dataclass
class GroundTruth:
    """Closed-form potential outcomes, evaluable on raw feature rows."""

    n_treatments: int
    lift_low: float
    lift_high: float
    base_low: float
    base_high: float
    noise: float
    bias: float
    # latent blocks: each entry is (kind, lo, hi, mu, sd); kind "onehot" uses
    # the columns as-is, kind "log" standardizes log(column) by (mu, sd)
    blocks: List[Tuple[str, int, int, List[float], List[float]]]
    w_u: np.ndarray
    w_b: np.ndarray

    def g(self, k) -> np.ndarray:
        """Saturating exposure curve over click counts 0..n-1."""
        k = np.asarray(k, dtype=np.float64)
        return 1.0 - (1.0 - k / (self.n_treatments - 1)) ** 2

    def phi(self, x_raw: np.ndarray) -> np.ndarray:
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
        parts = []
        for kind, lo, hi, mu, sd in self.blocks:
            cols = x_raw[:, lo:hi]
            if kind == "onehot":
                parts.append(cols)
            else:
                parts.append((np.log(cols) - np.asarray(mu)) / np.asarray(sd))
        return np.concatenate(parts, axis=1)

    def _score(self, x_raw: np.ndarray, w: np.ndarray) -> np.ndarray:
        p = self.phi(x_raw)
        return _U_SCALE * (p @ w) / np.linalg.norm(w)

    def u(self, x_raw: np.ndarray) -> np.ndarray:
        return _sigmoid(self._score(x_raw, self.w_u))

    def lift(self, x_raw: np.ndarray) -> np.ndarray:
        return self.lift_low + (self.lift_high - self.lift_low) * self.u(x_raw)

    def base(self, x_raw: np.ndarray) -> np.ndarray:
        return self.base_low + (self.base_high - self.base_low) * _sigmoid(
            self._score(x_raw, self.w_b))

    def m(self, x_raw: np.ndarray, index) -> np.ndarray:
        """Expected outcome under 1-based treatment index (vectorized)."""
        index = np.asarray(index)
        if np.any(index < 1) or np.any(index > self.n_treatments):
            raise ValueError(f"treatment index out of range 1..{self.n_treatments}")
        return self.base(x_raw) + self.lift(x_raw) * self.g(index - 1)

    def alpha(self, x_raw: np.ndarray, i: int, j: int) -> np.ndarray:
        """True effect of moving from treatment i to j (1-based)."""
        for idx in (i, j):
            if not 1 <= idx <= self.n_treatments:
                raise ValueError(f"treatment index out of range 1..{self.n_treatments}")
        return self.lift(x_raw) * (self.g(j - 1) - self.g(i - 1))

    def alpha_matrix(self, x_raw: np.ndarray) -> np.ndarray:
        """(b, n, n) true effect matrices."""
        l = np.atleast_1d(self.lift(x_raw))
        gv = self.g(np.arange(self.n_treatments))
        return l[:, None, None] * (gv[None, None, :] - gv[None, :, None])

    def assignment_probs(self, x_raw: np.ndarray) -> np.ndarray:
        score = 2.0 * self.u(x_raw) - 1.0
        n = self.n_treatments
        lin = 2.0 * ((np.arange(n)) / (n - 1) - 0.5)
        logits = self.bias * score[:, None] * lin[None, :]
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def positivity_floor(self) -> float:
        """Lower bound on any assignment probability: exp(-2b)/n."""
        return float(np.exp(-2.0 * self.bias) / self.n_treatments)

    def to_dict(self) -> dict:
        return {
            "n_treatments": self.n_treatments,
            "lift_low": self.lift_low,
            "lift_high": self.lift_high,
            "base_low": self.base_low,
            "base_high": self.base_high,
            "noise": self.noise,
            "bias": self.bias,
            "blocks": [[k, lo, hi, list(mu), list(sd)] for k, lo, hi, mu, sd in self.blocks],
            "w_u": self.w_u.tolist(),
            "w_b": self.w_b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            n_treatments=d["n_treatments"],
            lift_low=d["lift_low"], lift_high=d["lift_high"],
            base_low=d["base_low"], base_high=d["base_high"],
            noise=d["noise"], bias=d["bias"],
            blocks=[(k, lo, hi, mu, sd) for k, lo, hi, mu, sd in d["blocks"]],
            w_u=np.asarray(d["w_u"], dtype=np.float64),
            w_b=np.asarray(d["w_b"], dtype=np.float64),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def true_iae(gt: GroundTruth, x_raw: np.ndarray, i: int, j: int) -> np.ndarray:
    return gt.alpha(x_raw, i, j)


def generate(config: GenConfig) -> Tuple[Dataset, GroundTruth]:
    """Draw a dataset; the same config reproduces it bit-identically."""
    rng = np.random.default_rng(config.seed)
    N = config.n_samples

    # latent weights over [one-hot ids | log pv_day | log shop]
    k_latent = config.id_dim + config.pv_day_dim + config.shop_dim
    w_u = rng.normal(0.0, 1.0, k_latent)
    w_b = rng.normal(0.0, 1.0, k_latent)

    cat = rng.integers(0, config.id_dim, N)
    ids = np.zeros((N, config.id_dim))
    ids[np.arange(N), cat] = 1.0

    mu_day = np.linspace(0.2, 1.0, config.pv_day_dim)
    sd_day = np.full(config.pv_day_dim, 0.6)
    pv_day = np.exp(rng.normal(mu_day, sd_day, (N, config.pv_day_dim)))

    mu_week = np.linspace(0.8, 1.8, config.pv_week_dim)
    pv_week = np.exp(rng.normal(mu_week, 0.7, (N, config.pv_week_dim)))

    mu_shop = 1.0 + 0.2 * np.arange(config.shop_dim)
    sd_shop = np.full(config.shop_dim, 0.8)
    shop = np.exp(rng.normal(mu_shop, sd_shop, (N, config.shop_dim)))

    # competition: average rank of the ad and shop plus log(1 + rank) columns
    n_rank = (config.competition_dim + 1) // 2
    ranks = np.exp(rng.normal(1.5, 0.8, (N, n_rank)))
    comp_cols = [ranks[:, [k]] for k in range(n_rank)]
    comp_cols += [np.log1p(ranks[:, [k]]) for k in range(config.competition_dim - n_rank)]
    competition = np.concatenate(comp_cols, axis=1)

    x_raw = np.concatenate([ids, pv_day, pv_week, shop, competition], axis=1)

    lo_day = config.id_dim
    lo_shop = config.id_dim + config.pv_day_dim + config.pv_week_dim
    blocks = [
        ("onehot", 0, config.id_dim, [], []),
        ("log", lo_day, lo_day + config.pv_day_dim, mu_day.tolist(), sd_day.tolist()),
        ("log", lo_shop, lo_shop + config.shop_dim, mu_shop.tolist(), sd_shop.tolist()),
    ]
    gt = GroundTruth(
        n_treatments=config.n_treatments,
        lift_low=config.lift_low, lift_high=config.lift_high,
        base_low=config.base_low, base_high=config.base_high,
        noise=config.noise, bias=config.bias,
        blocks=blocks, w_u=w_u, w_b=w_b,
    )

    probs = gt.assignment_probs(x_raw)
    draws = rng.random(N)
    t = 1 + (draws[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
    t = np.minimum(t, config.n_treatments)

    y = gt.m(x_raw, t) + config.noise * rng.normal(0.0, 1.0, N)
    y = np.maximum(y, 0.0)

    dataset = Dataset(x_raw, t, y, config.n_treatments, config.schema(),
                      ground_truth=gt.to_dict())
    return dataset, gt


def treatment_feature_dependence(dataset: Dataset) -> float:
    """p-value of a chi-squared independence test between the id category
    (the designated confounded feature) and the assigned treatment."""
    from scipy.stats import chi2_contingency

    id_dim = dataset.schema.groups[0].dim
    cat = dataset.x_raw[:, :id_dim].argmax(axis=1)
    table = np.zeros((id_dim, dataset.n_treatments))
    for c, t in zip(cat, dataset.t):
        table[c, t - 1] += 1
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    return float(chi2_contingency(table).pvalue)

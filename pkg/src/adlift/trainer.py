"""Training loop for the shared-representation effect model.

Per minibatch of size m the objective is

    (2/m) sum_i w_i L_i  -  (mu_1/m) sum_{t_i=1} L_i  -  (mu_n/m) sum_{t_i=n} L_i
    + l2 * sum ||V||^2   +  beta * sum_{j=1}^{n-1} IPM(rep[t=j], rep[t=j+1])

with L_i the squared factual error, w_i = mu_{t_i} the treatment share of
sample i in the training split, and the endpoint corrections halving the
weight of the two extreme treatments (each interior treatment appears in two
adjacent error bounds, the endpoints in one). Everything is one taped graph,
so a single backward yields the representation gradient (factual + beta *
IPM) and the hypothesis gradient (factual + 2 * l2 * V) that the update
applies via Adam.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import data as dmod
from . import ipm as imod
from . import tensor as tt
from .data import Dataset
from .ipm import IpmConfig
from .model import Model, ModelConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)

REPORT_FORMAT = "adlift-train-report"
REPORT_VERSION = 1
CURVE_HEADER = "epoch,factual,ipm_sum,objective,val_factual"


@dataclass
class TrainConfig:
    l2: float = 1e-4
    ipm_weight: float = 1.0
    batch_size: int = 256
    max_epochs: int = 100
    tolerance: float = 1e-4
    patience: int = 10
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2
    seed: int = 0
    ipm: IpmConfig = field(default_factory=IpmConfig)

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.ipm_weight < 0:
            raise ValueError("ipm_weight must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    factual: float
    ipm_sum: float
    objective: float
    val_factual: float
    weighted: float
    correction: float
    l2_term: float


@dataclass
class TrainReport:
    epochs: List[EpochRecord]
    best_epoch: int
    best_val_factual: float
    stopped_reason: str
    diverged: bool
    n_train: int
    n_val: int
    mu: List[float]
    counts: List[int]
    skipped_pairs: int
    train_config: dict
    model_config: dict

    def to_dict(self) -> dict:
        out = asdict(self)
        out["format"] = REPORT_FORMAT
        out["version"] = REPORT_VERSION
        return out

    def save_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def save_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(CURVE_HEADER + "\n")
            for r in self.epochs:
                fh.write(f"{r.epoch},{r.factual!r},{r.ipm_sum!r},"
                         f"{r.objective!r},{r.val_factual!r}\n")


def batch_objective(model: Model, x: np.ndarray, t: np.ndarray, y: np.ndarray,
                    mu: np.ndarray, config: TrainConfig,
                    ipm_epsilons: Optional[List[Optional[float]]] = None
                    ) -> Dict[str, object]:
    """Build the batch objective graph; returns the nodes for inspection.

    ipm_epsilons, when given, fixes the absolute Sinkhorn epsilon per
    adjacent pair (index j-1 for pair (j, j+1)); by default each pair
    resolves epsilon from its current clouds. The per-sample loss node "L"
    receives d(objective)/dL_i on backward, which is how the effective
    sample coefficients are instrumented.
    """
    n = model.config.n_treatments
    m = len(t)
    t = np.asarray(t, dtype=np.int64)
    w = mu[t - 1]

    rep = model.represent_graph(Tensor(x))
    channel = Tensor(((t - 1.0) / (n - 1.0))[:, None])
    preds = model.predict_graph(rep, channel)
    resid = tt.sub(preds, Tensor(y[:, None]))
    L = tt.square(resid)  # (m, 1) per-sample factual losses

    weighted = tt.tsum(tt.mul(L, Tensor((2.0 * w / m)[:, None])))
    mask_lo = (t == 1).astype(np.float64) * (mu[0] / m)
    mask_hi = (t == n).astype(np.float64) * (mu[n - 1] / m)
    correction = tt.tsum(tt.mul(L, Tensor((mask_lo + mask_hi)[:, None])))
    factual = tt.sub(weighted, correction)

    l2_node = None
    if config.l2 > 0:
        for mat in model.hypothesis_weight_matrices().values():
            term = tt.tsum(tt.square(mat))
            l2_node = term if l2_node is None else tt.add(l2_node, term)
        l2_node = tt.mul(l2_node, Tensor(config.l2))

    ipm_node = None
    skipped = 0
    if config.ipm_weight > 0:
        for j in range(1, n):
            idx_a = np.nonzero(t == j)[0]
            idx_b = np.nonzero(t == j + 1)[0]
            if len(idx_a) < 2 or len(idx_b) < 2:
                skipped += 1
                logger.warning("ipm pair (%d, %d) skipped: %d vs %d samples in batch",
                               j, j + 1, len(idx_a), len(idx_b))
                continue
            cloud_a = tt.gather_rows(rep, idx_a)
            cloud_b = tt.gather_rows(rep, idx_b)
            eps = ipm_epsilons[j - 1] if ipm_epsilons else None
            if eps is None:
                dist = imod.sinkhorn_graph(cloud_a, cloud_b, config.ipm)
            else:
                dist = imod.sinkhorn_distance(cloud_a, cloud_b, eps, config.ipm.iterations)
            ipm_node = dist if ipm_node is None else tt.add(ipm_node, dist)

    objective = factual
    if l2_node is not None:
        objective = tt.add(objective, l2_node)
    if ipm_node is not None:
        objective = tt.add(objective, tt.mul(ipm_node, Tensor(config.ipm_weight)))

    return {
        "objective": objective,
        "L": L,
        "factual": factual,
        "weighted": weighted,
        "correction": correction,
        "l2_term": l2_node,
        "ipm_sum": ipm_node,
        "skipped_pairs": skipped,
    }


def per_sample_coefficients(model: Model, x: np.ndarray, t: np.ndarray,
                            y: np.ndarray, mu: np.ndarray,
                            config: TrainConfig) -> np.ndarray:
    """Effective d(objective)/dL_i, read off the objective graph itself."""
    nodes = batch_objective(model, x, t, y, mu, config)
    nodes["objective"].backward()
    return nodes["L"].grad[:, 0].copy()


def validation_factual_loss(model: Model, x: np.ndarray, t: np.ndarray,
                            y: np.ndarray, chunk: int = 4096) -> float:
    """Plain mean squared factual error (no weighting)."""
    total = 0.0
    n = model.config.n_treatments
    for lo in range(0, len(t), chunk):
        xs, ts, ys = x[lo:lo + chunk], t[lo:lo + chunk], y[lo:lo + chunk]
        rep = model.represent_graph(Tensor(xs))
        ch = Tensor(((ts - 1.0) / (n - 1.0))[:, None])
        preds = model.predict_graph(rep, ch).values[:, 0]
        total += float(((preds - ys) ** 2).sum())
    return total / len(t)


def train(dataset: Dataset, model_config: ModelConfig,
          config: Optional[TrainConfig] = None) -> Tuple[Model, TrainReport]:
    """Fit a model; returns it restored to the best validation epoch."""
    config = config or TrainConfig()
    n = dataset.n_treatments
    if model_config.n_treatments != n:
        raise ValueError(f"model n_treatments {model_config.n_treatments} != "
                         f"dataset {n}")
    if model_config.context_dim != dataset.schema.dim:
        raise ValueError("model context_dim does not match dataset")
    counts = dataset.counts()
    if np.any(counts == 0):
        missing = np.nonzero(counts == 0)[0] + 1
        raise ValueError(f"refusing to train: no samples for treatment(s) "
                         f"{missing.tolist()}")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(dataset))
    n_val = max(1, int(round(len(dataset) * config.val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training samples")
    t_train = dataset.t[train_idx]
    train_counts = np.bincount(t_train, minlength=n + 1)[1:]
    if np.any(train_counts == 0):
        missing = np.nonzero(train_counts == 0)[0] + 1
        raise ValueError(f"refusing to train: treatment(s) {missing.tolist()} "
                         f"absent from the training split")
    mu = train_counts / len(train_idx)

    x_train, y_train = dataset.x[train_idx], dataset.y[train_idx]
    x_val, t_val, y_val = dataset.x[val_idx], dataset.t[val_idx], dataset.y[val_idx]

    model = Model(model_config)
    adam = tt.AdamState(model.params, tt.AdamConfig(
        lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2,
        eps=config.adam_eps))

    records: List[EpochRecord] = []
    best_val = np.inf
    best_epoch = 0
    best_params = model.copy_parameter_values()
    since_improve = 0
    skipped_total = 0
    diverged = False
    reason = "max_epochs"

    for epoch in range(1, config.max_epochs + 1):
        sums = {"factual": 0.0, "ipm_sum": 0.0, "objective": 0.0,
                "weighted": 0.0, "correction": 0.0, "l2_term": 0.0}
        n_batches = 0
        for idx in dmod.minibatches(len(train_idx), config.batch_size, rng):
            nodes = batch_objective(model, x_train[idx], t_train[idx],
                                    y_train[idx], mu, config)
            obj = nodes["objective"]
            if not np.isfinite(obj.values):
                diverged = True
                break
            obj.backward()
            try:
                grads = {k: p.grad if p.grad is not None else np.zeros_like(p.values)
                         for k, p in model.params.items()}
                tt.adam_step(model.params, grads, adam)
            except tt.NonFiniteGradientError:
                diverged = True
                break
            skipped_total += nodes["skipped_pairs"]
            n_batches += 1
            for key in ("factual", "weighted", "correction", "objective"):
                sums[key] += nodes[key].item() if key != "objective" else obj.item()
            if nodes["l2_term"] is not None:
                sums["l2_term"] += nodes["l2_term"].item()
            if nodes["ipm_sum"] is not None:
                sums["ipm_sum"] += nodes["ipm_sum"].item()
        if diverged:
            reason = "diverged"
            logger.warning("training diverged at epoch %d; keeping last good epoch %d",
                           epoch, best_epoch)
            break

        val = validation_factual_loss(model, x_val, t_val, y_val)
        records.append(EpochRecord(
            epoch=epoch,
            factual=sums["factual"] / max(n_batches, 1),
            ipm_sum=sums["ipm_sum"] / max(n_batches, 1),
            objective=sums["objective"] / max(n_batches, 1),
            val_factual=val,
            weighted=sums["weighted"] / max(n_batches, 1),
            correction=sums["correction"] / max(n_batches, 1),
            l2_term=sums["l2_term"] / max(n_batches, 1),
        ))
        if best_val - val > config.tolerance * max(abs(best_val), 1e-12) or epoch == 1:
            best_val = val
            best_epoch = epoch
            best_params = model.copy_parameter_values()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= config.patience:
                reason = "early_stopping"
                break

    model.set_parameter_values(best_params)
    report = TrainReport(
        epochs=records,
        best_epoch=best_epoch,
        best_val_factual=float(best_val) if np.isfinite(best_val) else -1.0,
        stopped_reason=reason,
        diverged=diverged,
        n_train=len(train_idx),
        n_val=n_val,
        mu=mu.tolist(),
        counts=counts.tolist(),
        skipped_pairs=skipped_total,
        train_config=_config_dict(config),
        model_config=asdict(model_config),
    )
    return model, report


def _config_dict(config: TrainConfig) -> dict:
    out = asdict(config)
    return out

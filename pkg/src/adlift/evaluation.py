"""Effect-estimation quality reports against synthetic ground truth.

Everything here measures how well a trained model recovers the true
per-context effect matrices: the mean squared pairwise estimation error
(PEHE), its decomposition into adjacent-pair errors, per-treatment factual
losses on the observed outcomes, and the adjacent-pair IPM distances of the
learned representation at evaluation fidelity.

Two adjacent-pair upper bounds are reported. Writing e_k for the mean
squared adjacent error between treatments k and k+1, Cauchy-Schwarz on the
telescoped pair error gives

    pehe <= sum_k  k*(n-k)/(n-1) * e_k        (pair-counted weights)

which holds for every n. The plain unit-weight form sum_k e_k is what the
adjacent-sum decomposition is usually quoted as; it coincides with the
weighted form for n <= 3 but is NOT an upper bound in general (constant
adjacent errors at n = 5 already exceed it). Both values and both pass
flags are reported so a consumer can see exactly which inequality held.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from . import ipm as imod
from .data import Dataset
from .ipm import IpmConfig
from .model import Model
from .synthetic import GroundTruth

EVAL_FORMAT = "adlift-eval-report"
EVAL_VERSION = 1
LEDGER_HEADER = ("tag,n_treatments,n_contexts,beta,pehe,adjacent_sum,"
                 "adjacent_sum_holds,weighted_adjacent_sum,weighted_holds,"
                 "surrogate_bound,surrogate_holds,factual_total,ipm_sum")
_REL_TOL = 1e-9


def require_ground_truth(dataset: Dataset) -> GroundTruth:
    if dataset.ground_truth is None:
        raise ValueError("effect evaluation requires ground truth; this dataset "
                         "has no ground_truth sidecar entry (real data?)")
    return GroundTruth.from_dict(dataset.ground_truth)


def effect_error_matrices(model: Model, dataset: Dataset) -> np.ndarray:
    """(b, n, n) arrays of estimated minus true effects on standardized x."""
    gt = require_ground_truth(dataset)
    return model.iae_matrix(dataset.x) - gt.alpha_matrix(dataset.x_raw)


def tau(model: Model, dataset: Dataset, i: int, j: int) -> np.ndarray:
    """Per-context estimation error for the (i, j) treatment pair, 1-based."""
    n = model.config.n_treatments
    for idx in (i, j):
        if not 1 <= idx <= n:
            raise ValueError(f"treatment index {idx} out of range 1..{n}")
    return effect_error_matrices(model, dataset)[:, i - 1, j - 1]


def pehe_from_errors(errors: np.ndarray) -> float:
    """Mean over ordered treatment pairs of the mean squared pair error."""
    b, n, _ = errors.shape
    sq = errors ** 2
    total = sq.sum() - np.trace(sq, axis1=1, axis2=2).sum()
    return float(total / (b * n * (n - 1)))


def pehe(model: Model, dataset: Dataset) -> float:
    return pehe_from_errors(effect_error_matrices(model, dataset))


def adjacent_mean_squares(errors: np.ndarray) -> np.ndarray:
    """(n-1,) mean squared adjacent-pair errors e_k."""
    n = errors.shape[1]
    return np.array([float((errors[:, k, k + 1] ** 2).mean())
                     for k in range(n - 1)])


def pair_count_weights(n: int) -> np.ndarray:
    """Cauchy-Schwarz weights k*(n-k)/(n-1) of each adjacent pair, k = 1..n-1."""
    k = np.arange(1, n)
    return k * (n - k) / (n - 1.0)


def factual_losses(model: Model, dataset: Dataset) -> np.ndarray:
    """Per-treatment mean squared error against the observed outcomes."""
    n = model.config.n_treatments
    preds = model.predict_all(dataset.x)
    out = np.full(n, np.nan)
    for j in range(1, n + 1):
        mask = dataset.t == j
        if mask.any():
            out[j - 1] = float(((preds[mask, j - 1] - dataset.y[mask]) ** 2).mean())
    return out


def adjacent_ipm_distances(model: Model, dataset: Dataset,
                           config: Optional[IpmConfig] = None
                           ) -> List[Optional[float]]:
    """Representation-space distance for each adjacent treatment pair.

    Pairs where either side has fewer than 2 samples yield None.
    """
    config = config or IpmConfig.evaluation()
    n = model.config.n_treatments
    rep = model.represent(dataset.x)
    out: List[Optional[float]] = []
    for j in range(1, n):
        a = rep[dataset.t == j]
        b = rep[dataset.t == j + 1]
        if len(a) < 2 or len(b) < 2:
            out.append(None)
            continue
        out.append(imod.ipm_distance(a, b, config).distance)
    return out


@dataclass
class PeheReport:
    """Bound-verification snapshot for one (model, dataset) pair."""

    n_treatments: int
    n_contexts: int
    beta: float
    pehe: float
    adjacent_mean_squares: List[float]
    adjacent_sum: float
    adjacent_sum_holds: bool
    weighted_adjacent_sum: float
    weighted_holds: bool
    factual_losses: List[float]
    pairwise_factual: List[float]
    ipm_distances: List[Optional[float]]
    ipm_skipped: int
    ipm_sum: float
    surrogate_bound: float
    surrogate_holds: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        out["format"] = EVAL_FORMAT
        out["version"] = EVAL_VERSION
        return out

    def save_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def ledger_row(self, tag: str) -> str:
        if "," in tag or "\n" in tag:
            raise ValueError("ledger tag must not contain commas or newlines")
        vals = [tag, str(self.n_treatments), str(self.n_contexts),
                repr(self.beta), repr(self.pehe), repr(self.adjacent_sum),
                str(int(self.adjacent_sum_holds)),
                repr(self.weighted_adjacent_sum), str(int(self.weighted_holds)),
                repr(self.surrogate_bound), str(int(self.surrogate_holds)),
                repr(float(np.sum(self.factual_losses))), repr(self.ipm_sum)]
        return ",".join(vals)


def bound_check(model: Model, dataset: Dataset, beta: float = 1.0,
                ipm_config: Optional[IpmConfig] = None) -> PeheReport:
    """Evaluate the error decomposition and every checkable bound.

    The learnable surrogate (twice the sum over adjacent pairs of the
    pairwise factual loss plus beta times the representation IPM) is
    reported for monitoring only: its true Lipschitz constant is unknown
    and the factual side carries outcome noise, so surrogate_holds is a
    flag rather than a requirement.
    """
    gt = require_ground_truth(dataset)
    n = model.config.n_treatments
    if gt.n_treatments != n:
        raise ValueError(f"ground truth has {gt.n_treatments} treatments, "
                         f"model has {n}")
    errors = effect_error_matrices(model, dataset)
    p = pehe_from_errors(errors)
    e_adj = adjacent_mean_squares(errors)
    adjacent_sum = float(e_adj.sum())
    weighted_sum = float((pair_count_weights(n) * e_adj).sum())

    fl = factual_losses(model, dataset)
    pairwise = [float(fl[k] + fl[k + 1]) for k in range(n - 1)]
    ipm_list = adjacent_ipm_distances(model, dataset, ipm_config)
    ipm_vals = np.array([d if d is not None else 0.0 for d in ipm_list])
    ipm_sum = float(ipm_vals.sum())
    surrogate = float(2.0 * (np.nan_to_num(pairwise) + beta * ipm_vals).sum())

    def holds(bound: float) -> bool:
        return bool(p <= bound * (1.0 + _REL_TOL) + 1e-12)

    return PeheReport(
        n_treatments=n,
        n_contexts=len(dataset),
        beta=float(beta),
        pehe=p,
        adjacent_mean_squares=e_adj.tolist(),
        adjacent_sum=adjacent_sum,
        adjacent_sum_holds=holds(adjacent_sum),
        weighted_adjacent_sum=weighted_sum,
        weighted_holds=holds(weighted_sum),
        factual_losses=fl.tolist(),
        pairwise_factual=pairwise,
        ipm_distances=ipm_list,
        ipm_skipped=sum(1 for d in ipm_list if d is None),
        ipm_sum=ipm_sum,
        surrogate_bound=surrogate,
        surrogate_holds=holds(surrogate),
    )


def append_ledger(report: PeheReport, path: str, tag: str) -> None:
    """Append one summary row to a runs-ledger CSV (header written once)."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as fh:
        if fresh:
            fh.write(LEDGER_HEADER + "\n")
        fh.write(report.ledger_row(tag) + "\n")

"""Observational dataset handling: CSV + JSON sidecar, standardization,
and epoch minibatching.

File contract: a CSV with header ``t,y,x_0,...,x_{d-1}`` (t is the 1-based
treatment index) and a same-stem ``.json`` sidecar carrying the treatment
count, feature dimension, feature schema, and, for synthetic data, the
serialized ground-truth parameters. Feature columns that are not one-hot
are standardized at load time; the fitted statistics travel with the
dataset so a model can apply them to new raw contexts.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

import numpy as np

DATASET_FORMAT = "adlift-dataset"
DATASET_VERSION = 1


@dataclass
class FeatureGroup:
    name: str
    dim: int
    one_hot: bool = False


@dataclass
class FeatureSchema:
    groups: List[FeatureGroup]

    def __post_init__(self):
        if not self.groups:
            raise ValueError("schema needs at least one feature group")
        for g in self.groups:
            if g.dim < 1:
                raise ValueError(f"feature group {g.name!r} has dim < 1")

    @property
    def dim(self) -> int:
        return sum(g.dim for g in self.groups)

    def one_hot_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        lo = 0
        for g in self.groups:
            if g.one_hot:
                mask[lo:lo + g.dim] = True
            lo += g.dim
        return mask

    def to_dict(self) -> dict:
        return {"groups": [{"name": g.name, "dim": g.dim, "one_hot": g.one_hot}
                           for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls([FeatureGroup(**g) for g in d["groups"]])


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x_raw: np.ndarray, schema: FeatureSchema) -> "Standardization":
        mean = x_raw.mean(axis=0)
        std = x_raw.std(axis=0)
        skip = schema.one_hot_mask()
        mean[skip] = 0.0
        std[skip] = 1.0
        std[std == 0.0] = 1.0
        return cls(mean, std)

    def apply(self, x_raw: np.ndarray) -> np.ndarray:
        return (np.asarray(x_raw, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))


@dataclass
class Sample:
    t: int
    y: float
    x: np.ndarray  # raw features


class Dataset:
    """Factual observations (x, t, y) with both raw and standardized features."""

    def __init__(self, x_raw: np.ndarray, t: np.ndarray, y: np.ndarray,
                 n_treatments: int, schema: FeatureSchema,
                 standardization: Optional[Standardization] = None,
                 ground_truth: Optional[dict] = None):
        x_raw = np.asarray(x_raw, dtype=np.float64)
        t = np.asarray(t)
        y = np.asarray(y, dtype=np.float64)
        if x_raw.ndim != 2 or x_raw.shape[1] != schema.dim:
            raise ValueError(f"features must be (N, {schema.dim}), got {x_raw.shape}")
        if len(x_raw) == 0:
            raise ValueError("empty dataset")
        if not (len(x_raw) == len(t) == len(y)):
            raise ValueError("x, t, y lengths differ")
        if n_treatments < 2:
            raise ValueError("n_treatments must be >= 2")
        if not np.all(t == t.astype(np.int64)):
            raise ValueError("treatment indices must be integers")
        t = t.astype(np.int64)
        bad = np.nonzero((t < 1) | (t > n_treatments))[0]
        if bad.size:
            raise ValueError(
                f"treatment index out of range 1..{n_treatments} at row {bad[0]}")
        self.x_raw = x_raw
        self.t = t
        self.y = y
        self.n_treatments = n_treatments
        self.schema = schema
        self.standardization = standardization or Standardization.fit(x_raw, schema)
        self.x = self.standardization.apply(x_raw)
        self.ground_truth = ground_truth

    def __len__(self) -> int:
        return len(self.y)

    def sample(self, i: int) -> Sample:
        return Sample(int(self.t[i]), float(self.y[i]), self.x_raw[i].copy())

    def counts(self) -> np.ndarray:
        """Per-treatment sample counts N_j, j = 1..n."""
        return np.bincount(self.t, minlength=self.n_treatments + 1)[1:]

    def mu(self) -> np.ndarray:
        return self.counts() / len(self)

    def sample_weights(self) -> np.ndarray:
        """w_i = mu_{t_i}, the treatment share of each sample's own group."""
        return self.mu()[self.t - 1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row subset; keeps this dataset's standardization and ground truth."""
        return Dataset(self.x_raw[idx], self.t[idx], self.y[idx],
                       self.n_treatments, self.schema,
                       standardization=self.standardization,
                       ground_truth=self.ground_truth)


def sidecar_path(csv_path: str) -> str:
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def save(dataset: Dataset, csv_path: str) -> None:
    """Write raw features + sidecar; reload reproduces identical statistics."""
    import json

    d = dataset.schema.dim
    header = ["t", "y"] + [f"x_{k}" for k in range(d)]
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(dataset)):
            row = [str(int(dataset.t[i])), repr(float(dataset.y[i]))]
            row.extend(repr(float(v)) for v in dataset.x_raw[i])
            fh.write(",".join(row) + "\n")
    sidecar = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n_treatments": dataset.n_treatments,
        "d": d,
        "schema": dataset.schema.to_dict(),
        "ground_truth": dataset.ground_truth,
    }
    with open(sidecar_path(csv_path), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)


def load(csv_path: str, standardization: Optional[Standardization] = None) -> Dataset:
    import json

    with open(sidecar_path(csv_path)) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format") != DATASET_FORMAT:
        raise ValueError(f"{sidecar_path(csv_path)}: not a dataset sidecar")
    if sidecar.get("version") != DATASET_VERSION:
        raise ValueError(f"{sidecar_path(csv_path)}: unsupported version")
    schema = FeatureSchema.from_dict(sidecar["schema"])
    d = sidecar["d"]
    if schema.dim != d:
        raise ValueError(f"sidecar schema dim {schema.dim} != d {d}")
    n = sidecar["n_treatments"]

    expected_header = ["t", "y"] + [f"x_{k}" for k in range(d)]
    ts: List[int] = []
    ys: List[float] = []
    xs: List[List[float]] = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected_header:
            raise ValueError(f"{csv_path}: bad header, expected t,y,x_0..x_{d-1}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise ValueError(f"{csv_path}: line {line_no}: expected {d + 2} fields, "
                                 f"got {len(row)}")
            try:
                tval = float(row[0])
                ys.append(float(row[1]))
                xs.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise ValueError(f"{csv_path}: line {line_no}: {exc}") from None
            if tval != int(tval) or not (1 <= int(tval) <= n):
                raise ValueError(f"{csv_path}: line {line_no}: treatment index {row[0]} "
                                 f"not in 1..{n}")
            ts.append(int(tval))
    if not ts:
        raise ValueError(f"{csv_path}: empty dataset")
    return Dataset(np.asarray(xs), np.asarray(ts), np.asarray(ys), n, schema,
                   standardization=standardization,
                   ground_truth=sidecar.get("ground_truth"))


def minibatches(n_samples: int, batch_size: int,
                rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Index batches covering one epoch: shuffled, without replacement."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > n_samples:
        warnings.warn(f"batch size {batch_size} > dataset size {n_samples}; clamping")
        batch_size = n_samples
    order = rng.permutation(n_samples)
    for lo in range(0, n_samples, batch_size):
        yield order[lo:lo + batch_size]

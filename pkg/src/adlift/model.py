"""Shared-representation outcome model over ordered treatments.

A representation network maps a context x to r = phi(x); a single hypothesis
head predicts the outcome from r concatenated with a scalar treatment channel
(i-1)/(n-1) for treatment index i in 1..n. Effects between treatments are
differences of predictions, so the effect matrix is antisymmetric, zero on
the diagonal, and transitive by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as tt
from .tensor import Tensor

CONFIG_FORMAT = "adlift-model-config"
CONFIG_VERSION = 1

ACTIVATIONS = ("elu", "relu")


@dataclass
class ModelConfig:
    context_dim: int
    n_treatments: int
    rep_width: int = 64
    rep_depth: int = 3
    hyp_width: int = 64
    hyp_depth: int = 3
    activation: str = "elu"
    seed: int = 0

    def __post_init__(self):
        if self.context_dim < 1:
            raise ValueError("context_dim must be >= 1")
        if self.n_treatments < 2:
            raise ValueError("n_treatments must be >= 2")
        for field in ("rep_width", "rep_depth", "hyp_width", "hyp_depth"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class Model:
    """Representation network plus hypothesis head with a treatment channel."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.meta: dict = {}
        rng = np.random.default_rng(config.seed)
        self.params: Dict[str, Tensor] = {}
        self._rep_scales = []

        # representation layers keep raw unit-variance weights and apply a
        # fixed 1/sqrt(fan_in) scale in the forward pass, so activations stay
        # unit-scale at init regardless of width
        dims = [config.context_dim] + [config.rep_width] * config.rep_depth
        lim = np.sqrt(3.0)
        for k, (fin, fout) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"phi.{k}.w"] = Tensor(rng.uniform(-lim, lim, (fin, fout)),
                                               requires_grad=True)
            self.params[f"phi.{k}.b"] = Tensor(np.zeros(fout), requires_grad=True)
            self._rep_scales.append(1.0 / np.sqrt(fin))

        hdims = [config.rep_width + 1] + [config.hyp_width] * config.hyp_depth + [1]
        for k, (fin, fout) in enumerate(zip(hdims[:-1], hdims[1:])):
            glim = np.sqrt(6.0 / (fin + fout))
            name = "out" if k == config.hyp_depth else str(k)
            self.params[f"h.{name}.w"] = Tensor(rng.uniform(-glim, glim, (fin, fout)),
                                                requires_grad=True)
            self.params[f"h.{name}.b"] = Tensor(np.zeros(fout), requires_grad=True)

    # -- graph builders (shared with the trainer) --

    def _act(self, x: Tensor) -> Tensor:
        return tt.elu(x) if self.config.activation == "elu" else tt.relu(x)

    def represent_graph(self, x: Tensor) -> Tensor:
        h = x
        for k in range(self.config.rep_depth):
            z = tt.matmul(h, self.params[f"phi.{k}.w"])
            z = tt.add(tt.mul(z, Tensor(self._rep_scales[k])), self.params[f"phi.{k}.b"])
            h = self._act(z)
        return h

    def predict_graph(self, rep: Tensor, t_channel: Tensor) -> Tensor:
        h = tt.concat([rep, t_channel], axis=1)
        for k in range(self.config.hyp_depth):
            h = self._act(tt.add(tt.matmul(h, self.params[f"h.{k}.w"]),
                                 self.params[f"h.{k}.b"]))
        return tt.add(tt.matmul(h, self.params["h.out.w"]), self.params["h.out.b"])

    # -- numpy conveniences --

    def treatment_channel(self, index) -> np.ndarray:
        """Scalar channel value(s) (index-1)/(n-1) for 1-based indices."""
        index = np.asarray(index)
        if np.any(index < 1) or np.any(index > self.config.n_treatments):
            raise ValueError(
                f"treatment index out of range 1..{self.config.n_treatments}: {index}")
        return (index - 1.0) / (self.config.n_treatments - 1.0)

    def represent(self, x: np.ndarray) -> np.ndarray:
        x = self._check_contexts(x)
        return self.represent_graph(Tensor(x)).values

    def predict(self, x: np.ndarray, index: int) -> np.ndarray:
        """Predicted factual outcome under 1-based treatment index."""
        x = self._check_contexts(x)
        ch = np.full((x.shape[0], 1), self.treatment_channel(index))
        rep = self.represent_graph(Tensor(x))
        return self.predict_graph(rep, Tensor(ch)).values[:, 0]

    def predict_all(self, x: np.ndarray) -> np.ndarray:
        """(b, n) predictions for every treatment, sharing one representation."""
        x = self._check_contexts(x)
        rep = self.represent_graph(Tensor(x))
        cols = []
        for i in range(1, self.config.n_treatments + 1):
            ch = Tensor(np.full((x.shape[0], 1), self.treatment_channel(i)))
            cols.append(self.predict_graph(rep, ch).values[:, 0])
        return np.stack(cols, axis=1)

    def iae_matrix(self, x: np.ndarray) -> np.ndarray:
        """Effect matrix: entry (i, j) is the predicted change in outcome when
        moving from treatment i+1 to treatment j+1 (0-based array indices).
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        preds = self.predict_all(x[None, :] if single else x)
        mat = preds[:, None, :] - preds[:, :, None]
        return mat[0] if single else mat

    def _check_contexts(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.context_dim:
            raise tt.ShapeError(
                f"contexts must be (b, {self.config.context_dim}), got {x.shape}")
        return x

    def hypothesis_weight_matrices(self) -> Dict[str, Tensor]:
        return {k: v for k, v in self.params.items()
                if k.startswith("h.") and k.endswith(".w")}

    def copy_parameter_values(self) -> Dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.params.items()}

    def set_parameter_values(self, values: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.values[...] = values[k]

    # -- persistence --

    def save(self, path: str, extra: Optional[dict] = None) -> None:
        tt.save_tensors(path, self.params)
        sidecar = {
            "format": CONFIG_FORMAT,
            "version": CONFIG_VERSION,
            "config": asdict(self.config),
        }
        if extra:
            sidecar.update(extra)
        with open(config_sidecar_path(path), "w") as fh:
            json.dump(sidecar, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "Model":
        with open(config_sidecar_path(path)) as fh:
            sidecar = json.load(fh)
        if sidecar.get("format") != CONFIG_FORMAT:
            raise ValueError(f"{path}: missing model config sidecar")
        if sidecar.get("version") != CONFIG_VERSION:
            raise ValueError(f"{path}: unsupported config version")
        model = cls(ModelConfig(**sidecar["config"]))
        weights = tt.load_tensors(path)
        model.set_parameter_values(weights)
        model.meta = {k: v for k, v in sidecar.items()
                      if k not in ("format", "version", "config")}
        return model


def config_sidecar_path(checkpoint_path: str) -> str:
    root, _ = os.path.splitext(checkpoint_path)
    return root + ".config.json"

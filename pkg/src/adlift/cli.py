"""Command-line runner tying generation, training, evaluation, and
simulation into seeded, rerunnable runs.

Every command writes its artifacts plus a manifest.json into --out. The
manifest records the fully resolved config and sha256 hashes of inputs and
outputs; passing a manifest back via --config repeats the run, and the
artifacts come out byte-identical.

Config resolution order: built-in defaults, then the --config file (a plain
JSON config or a previous manifest), then explicit flags. The top-level
"seed" drives the stochastic parts of each command (world generation, model
init, batch shuffling); protocol seeds like the experiment split live as
ordinary config fields.

Exit codes: 0 success, 1 runtime failure, 2 config or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from typing import Dict, List, Optional

from . import bidding
from . import data as datamod
from . import evaluation
from .data import Standardization
from .ipm import IpmConfig
from .model import Model, ModelConfig, config_sidecar_path
from .synthetic import GenConfig, GroundTruth, generate
from .trainer import TrainConfig, train

MANIFEST_FORMAT = "adlift-manifest"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# config plumbing


def _strip(d: dict, *keys: str) -> dict:
    for k in keys:
        d.pop(k, None)
    return d


def _defaults(command: str) -> dict:
    if command == "generate":
        return {"seed": 0, "gen": _strip(asdict(GenConfig()), "seed")}
    if command == "train":
        return {
            "seed": 0,
            "data": None,
            "model": {"rep_width": 64, "rep_depth": 3, "hyp_width": 64,
                      "hyp_depth": 3, "activation": "elu"},
            "train": _strip(asdict(TrainConfig()), "seed"),
        }
    if command == "evaluate":
        return {
            "seed": 0,
            "data": None,
            "model": None,
            "beta": 1.0,
            "tag": "eval",
            "ledger": None,
            "ipm": asdict(IpmConfig.evaluation()),
        }
    if command == "simulate":
        world = _strip(asdict(bidding.AuctionWorldConfig()), "seed")
        world["gen"] = _strip(world["gen"], "seed")
        return {
            "seed": 0,
            "model": None,
            "oracle": False,
            "log": None,
            "world": world,
            "experiment": asdict(bidding.ExperimentConfig()),
        }
    raise ValueError(f"unknown command {command!r}")


def _merge(dst: dict, src: dict, prefix: str = "") -> None:
    for key, val in src.items():
        if key not in dst:
            raise ValueError(f"unknown config key {prefix + key!r}")
        if isinstance(dst[key], dict) and isinstance(val, dict):
            _merge(dst[key], val, prefix + key + ".")
        else:
            dst[key] = val


def _load_config_file(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if payload.get("format") == MANIFEST_FORMAT:
        if payload.get("command") != command:
            raise ValueError(
                f"{path}: manifest records a {payload.get('command')!r} run, "
                f"not {command!r}")
        return payload["config"]
    return payload


def _apply_flags(cfg: dict, args: argparse.Namespace,
                 mapping: Dict[str, str]) -> None:
    if args.seed is not None:
        cfg["seed"] = args.seed
    for attr, dotted in mapping.items():
        val = getattr(args, attr)
        if val is None:
            continue
        node = cfg
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = val


def _require_file(path: Optional[str], what: str) -> str:
    if not path:
        raise ValueError(f"{what} is required (flag or config)")
    if not os.path.exists(path):
        raise ValueError(f"{what} not found: {path}")
    return path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_checkpoint(path: str) -> Model:
    _require_file(path, "model checkpoint")
    _require_file(config_sidecar_path(path), "model config sidecar")
    return Model.load(path)


def _checkpoint_standardization(model: Model) -> Optional[Standardization]:
    raw = model.meta.get("standardization")
    return Standardization.from_dict(raw) if raw else None


# ---------------------------------------------------------------------------
# commands: each resolver validates and returns {config, inputs, ...objects};
# each runner produces artifacts and returns their names relative to --out


def _resolve_generate(args) -> dict:
    cfg = _defaults("generate")
    if args.config:
        _merge(cfg, _load_config_file(args.config, "generate"))
    _apply_flags(cfg, args, {
        "samples": "gen.n_samples",
        "treatments": "gen.n_treatments",
        "noise": "gen.noise",
        "bias": "gen.bias",
    })
    gen_cfg = GenConfig(seed=cfg["seed"], **cfg["gen"])
    return {"config": cfg, "inputs": {}, "gen_cfg": gen_cfg}


def _run_generate(res: dict, out: str) -> List[str]:
    dataset, _ = generate(res["gen_cfg"])
    datamod.save(dataset, os.path.join(out, "dataset.csv"))
    return ["dataset.csv", "dataset.json"]


def _resolve_train(args) -> dict:
    cfg = _defaults("train")
    if args.config:
        _merge(cfg, _load_config_file(args.config, "train"))
    _apply_flags(cfg, args, {
        "data": "data",
        "beta": "train.ipm_weight",
        "epochs": "train.max_epochs",
        "batch_size": "train.batch_size",
        "lr": "train.lr",
        "l2": "train.l2",
    })
    data_path = _require_file(cfg["data"], "dataset")
    dataset = datamod.load(data_path)
    model_cfg = ModelConfig(context_dim=dataset.schema.dim,
                            n_treatments=dataset.n_treatments,
                            seed=cfg["seed"] + 1, **cfg["model"])
    tr = dict(cfg["train"])
    ipm_cfg = IpmConfig(**tr.pop("ipm"))
    train_cfg = TrainConfig(seed=cfg["seed"], ipm=ipm_cfg, **tr)
    return {
        "config": cfg,
        "inputs": {"data_csv": data_path,
                   "data_sidecar": datamod.sidecar_path(data_path)},
        "dataset": dataset,
        "model_cfg": model_cfg,
        "train_cfg": train_cfg,
    }


def _run_train(res: dict, out: str) -> List[str]:
    model, report = train(res["dataset"], res["model_cfg"], res["train_cfg"])
    std = res["dataset"].standardization
    model.save(os.path.join(out, "model.json"),
               extra={"standardization": std.to_dict()})
    report.save_json(os.path.join(out, "train_report.json"))
    report.save_csv(os.path.join(out, "train_curve.csv"))
    return ["model.json", "model.config.json", "train_report.json",
            "train_curve.csv"]


def _resolve_evaluate(args) -> dict:
    cfg = _defaults("evaluate")
    if args.config:
        _merge(cfg, _load_config_file(args.config, "evaluate"))
    _apply_flags(cfg, args, {
        "data": "data",
        "model": "model",
        "beta": "beta",
        "tag": "tag",
        "ledger": "ledger",
    })
    if cfg["beta"] < 0:
        raise ValueError("beta must be >= 0")
    data_path = _require_file(cfg["data"], "dataset")
    model = _load_checkpoint(cfg["model"])
    dataset = datamod.load(data_path,
                           standardization=_checkpoint_standardization(model))
    if dataset.ground_truth is None:
        raise ValueError(
            f"{datamod.sidecar_path(data_path)}: PEHE requires ground truth "
            f"in the dataset sidecar")
    ipm_cfg = IpmConfig(**cfg["ipm"])
    return {
        "config": cfg,
        "inputs": {"data_csv": data_path,
                   "data_sidecar": datamod.sidecar_path(data_path),
                   "model": cfg["model"],
                   "model_config": config_sidecar_path(cfg["model"])},
        "dataset": dataset,
        "model_obj": model,
        "ipm_cfg": ipm_cfg,
    }


def _run_evaluate(res: dict, out: str) -> List[str]:
    cfg = res["config"]
    report = evaluation.bound_check(res["model_obj"], res["dataset"],
                                    beta=cfg["beta"], ipm_config=res["ipm_cfg"])
    report.save_json(os.path.join(out, "eval_report.json"))
    ledger = cfg["ledger"] or os.path.join(out, "runs.csv")
    evaluation.append_ledger(report, ledger, cfg["tag"])
    # the ledger accumulates across runs, so it stays out of the manifest
    return ["eval_report.json"]


def _resolve_simulate(args) -> dict:
    cfg = _defaults("simulate")
    if args.config:
        _merge(cfg, _load_config_file(args.config, "simulate"))
    _apply_flags(cfg, args, {
        "model": "model",
        "oracle": "oracle",
        "log": "log",
        "ads": "world.n_ads",
        "days": "world.n_days",
        "warmup": "experiment.warmup_days",
        "aa": "experiment.aa_mode",
    })
    if bool(cfg["model"]) == bool(cfg["oracle"]):
        raise ValueError("simulate requires exactly one of --model / --oracle")

    inputs: Dict[str, str] = {}
    log = None
    if cfg["log"]:
        log_path = _require_file(cfg["log"], "auction log")
        log = bidding.AuctionLog.load(log_path)
        inputs["log_csv"] = log_path
        inputs["log_sidecar"] = os.path.splitext(log_path)[0] + ".json"
        if cfg["oracle"] and log.ground_truth is None:
            raise ValueError(f"{log_path}: --oracle needs an auction log "
                             f"with ground truth")

    world = dict(cfg["world"])
    world_cfg = bidding.AuctionWorldConfig(
        seed=cfg["seed"], gen=GenConfig(**world.pop("gen")), **world)
    exp = dict(cfg["experiment"])
    exp["bracket"] = tuple(exp["bracket"])
    exp_cfg = bidding.ExperimentConfig(**exp)

    model = None
    if cfg["model"]:
        model = _load_checkpoint(cfg["model"])
        inputs["model"] = cfg["model"]
        inputs["model_config"] = config_sidecar_path(cfg["model"])
    return {
        "config": cfg,
        "inputs": inputs,
        "log": log,
        "world_cfg": world_cfg,
        "exp_cfg": exp_cfg,
        "model_obj": model,
    }


def _run_simulate(res: dict, out: str) -> List[str]:
    cfg = res["config"]
    outputs = []
    log = res["log"]
    if log is None:
        log = bidding.generate_auction_log(res["world_cfg"])
        log.save(os.path.join(out, "auction_log.csv"))
        outputs += ["auction_log.csv", "auction_log.json"]

    if cfg["oracle"]:
        gt = GroundTruth.from_dict(log.ground_truth)
        predictor = bidding.OraclePredictor(gt)
    else:
        model = res["model_obj"]
        predictor = bidding.ModelPredictor(
            model, _checkpoint_standardization(model))

    report = bidding.run_experiment(log, predictor, res["exp_cfg"])
    report.save_json(os.path.join(out, "experiment_report.json"))
    report.save_series_csv(os.path.join(out, "experiment_series.csv"))
    return outputs + ["experiment_report.json", "experiment_series.csv"]


_RESOLVERS = {
    "generate": _resolve_generate,
    "train": _resolve_train,
    "evaluate": _resolve_evaluate,
    "simulate": _resolve_simulate,
}

_RUNNERS = {
    "generate": _run_generate,
    "train": _run_train,
    "evaluate": _run_evaluate,
    "simulate": _run_simulate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlift",
        description="individual advertising effects: synthetic data, bound "
                    "training, inequality evaluation, bidding simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="top-level seed for this run")
        sp.add_argument("--config", default=None,
                        help="JSON config file or a previous run's manifest")

    g = sub.add_parser("generate", help="emit a synthetic dataset + sidecar")
    common(g)
    g.add_argument("--samples", type=int, default=None)
    g.add_argument("--treatments", type=int, default=None)
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--bias", type=float, default=None,
                   help="treatment-assignment confounding strength")

    t = sub.add_parser("train", help="fit the effect model on a dataset")
    common(t)
    t.add_argument("--data", default=None, help="dataset CSV path")
    t.add_argument("--beta", type=float, default=None,
                   help="adjacent-pair IPM weight")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--l2", type=float, default=None)

    e = sub.add_parser("evaluate",
                       help="effect-error bounds against ground truth")
    common(e)
    e.add_argument("--data", default=None, help="dataset CSV path")
    e.add_argument("--model", default=None, help="model checkpoint path")
    e.add_argument("--beta", type=float, default=None,
                   help="IPM weight in the reported surrogate bound")
    e.add_argument("--tag", default=None, help="run tag for the ledger")
    e.add_argument("--ledger", default=None,
                   help="runs-ledger CSV (default: <out>/runs.csv)")

    s = sub.add_parser("simulate", help="replay the bidding experiment")
    common(s)
    s.add_argument("--model", default=None, help="model checkpoint path")
    s.add_argument("--oracle", action="store_true", default=None,
                   help="bid from the true effects in the log's sidecar")
    s.add_argument("--log", default=None,
                   help="existing auction log CSV (default: generate one)")
    s.add_argument("--ads", type=int, default=None)
    s.add_argument("--days", type=int, default=None)
    s.add_argument("--warmup", type=int, default=None)
    s.add_argument("--aa", action="store_true", default=None,
                   help="A/A mode: both groups keep the plain policy")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        res = _RESOLVERS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        os.makedirs(args.out, exist_ok=True)
        outputs = _RUNNERS[args.command](res, args.out)
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "command": args.command,
            "config": res["config"],
            "inputs": {label: {"path": path, "sha256": _sha256(path)}
                       for label, path in res["inputs"].items()},
            "outputs": {name: _sha256(os.path.join(args.out, name))
                        for name in outputs},
        }
        with open(os.path.join(args.out, MANIFEST_NAME), "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

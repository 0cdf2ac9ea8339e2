"""Command line entry points: gen-data, train, eval, and fuse-demo.

Every command is driven by a JSON config with a strict schema: unknown keys
are rejected, ranges are validated before any work starts, and the fully
resolved config is echoed into each output file, so a run is reproducible
from its own artifacts.  Outputs are written atomically and contain no
timestamps; repeating a command with the same config and inputs yields
byte-identical files.

Exit codes: 0 success, 1 usage or config error, 2 I/O or file-format error,
3 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import tempfile

import numpy as np

from .data import (
    CsvFormatError,
    GaussianCircleGeometry,
    load_csv,
    load_ood_csv,
    make_spec,
    sample_ood,
    sample_test,
    sample_train,
    write_csv,
    write_ood_csv,
)
from .evaluation import SCORERS, run_tasks
from .losses import AnnealSchedule, LossConfig
from .network import (
    CheckpointError,
    DivergenceError,
    NetworkConfig,
    TrainConfig,
    init_ensemble,
    load_checkpoint,
    save_checkpoint,
    train_model,
)
from .opinions import (
    FusionConfig,
    combine_sequential,
    fuse_evidence,
    opinion_from_evidence,
    predict,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, wrong type, out of range)."""


DEFAULT_CONFIG = {
    "seed": 5,
    "data": {
        "num_classes": 10,
        "max_count": 1000,
        "imbalance_factor": 100.0,
        "test_count": 100,
        "head_threshold": 100,
        "tail_threshold": 20,
        "geometry": {"dim": 2, "radius": 4.0, "sigma": 0.8},
        "ood": {"count": 1000, "margin": 2.0},
    },
    "model": {"hidden_sizes": [256, 128], "n_experts": 3},
    "train": {"epochs": 200, "batch_size": 16, "learning_rate": 0.02, "momentum": 0.9},
    "loss": {
        "gate_threshold": 0.54,
        "diversity_weight": 0.01,
        "anneal_fraction": 0.6,
        "kl_enabled": True,
    },
    "fusion": {"temperature": 0.1},
    "eval": {"ece_bins": 15, "scorer": "evu"},
}


def _merge_strict(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict):
            merged[key] = _merge_strict(defaults[key], value, here)
        else:
            merged[key] = value
    return merged


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _validate_config(cfg: dict) -> None:
    data = cfg["data"]
    geom = data["geometry"]
    ood = data["ood"]
    _require(isinstance(cfg["seed"], int), "seed must be an integer")
    _require(isinstance(data["num_classes"], int) and data["num_classes"] >= 2,
             "data.num_classes must be an integer >= 2")
    _require(data["imbalance_factor"] >= 1, "data.imbalance_factor must be >= 1")
    _require(data["max_count"] >= data["imbalance_factor"],
             "data.max_count must be >= data.imbalance_factor")
    _require(isinstance(data["test_count"], int) and data["test_count"] >= 1,
             "data.test_count must be an integer >= 1")
    _require(data["tail_threshold"] <= data["head_threshold"],
             "data.tail_threshold must not exceed data.head_threshold")
    _require(isinstance(geom["dim"], int) and geom["dim"] >= 2,
             "data.geometry.dim must be an integer >= 2")
    _require(geom["radius"] > 0, "data.geometry.radius must be positive")
    _require(geom["sigma"] > 0, "data.geometry.sigma must be positive")
    _require(isinstance(ood["count"], int) and ood["count"] >= 0,
             "data.ood.count must be a non-negative integer")
    _require(ood["margin"] > 0, "data.ood.margin must be positive")

    model = cfg["model"]
    _require(isinstance(model["n_experts"], int) and model["n_experts"] >= 1,
             "model.n_experts must be an integer >= 1")
    _require(isinstance(model["hidden_sizes"], list) and len(model["hidden_sizes"]) >= 1
             and all(isinstance(h, int) and h >= 1 for h in model["hidden_sizes"]),
             "model.hidden_sizes must be a non-empty list of positive integers")

    train = cfg["train"]
    _require(isinstance(train["epochs"], int) and train["epochs"] >= 0,
             "train.epochs must be a non-negative integer")
    _require(isinstance(train["batch_size"], int) and train["batch_size"] >= 1,
             "train.batch_size must be a positive integer")
    _require(train["learning_rate"] >= 0, "train.learning_rate must be >= 0")
    _require(0 <= train["momentum"] < 1, "train.momentum must lie in [0, 1)")

    loss = cfg["loss"]
    _require(0 <= loss["gate_threshold"] <= 1, "loss.gate_threshold must lie in [0, 1]")
    _require(loss["diversity_weight"] >= 0, "loss.diversity_weight must be >= 0")
    _require(0 < loss["anneal_fraction"] <= 1, "loss.anneal_fraction must lie in (0, 1]")
    _require(isinstance(loss["kl_enabled"], bool), "loss.kl_enabled must be a boolean")

    _require(cfg["fusion"]["temperature"] > 0, "fusion.temperature must be positive")
    _require(isinstance(cfg["eval"]["ece_bins"], int) and cfg["eval"]["ece_bins"] >= 1,
             "eval.ece_bins must be a positive integer")
    _require(cfg["eval"]["scorer"] in SCORERS,
             f"eval.scorer must be one of {list(SCORERS)}")


def load_run_config(path: str | None, args: argparse.Namespace) -> dict:
    """Resolve defaults, the config file, and CLI overrides; validate fully."""
    if path is None:
        cfg = copy.deepcopy(DEFAULT_CONFIG)
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = _merge_strict(DEFAULT_CONFIG, raw)

    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "experts", None) is not None:
        cfg["model"]["n_experts"] = args.experts
    if getattr(args, "tau", None) is not None:
        cfg["loss"]["gate_threshold"] = args.tau
    if getattr(args, "eta", None) is not None:
        cfg["fusion"]["temperature"] = args.eta
    _validate_config(cfg)
    return cfg


def _spec_and_geometry(cfg: dict):
    data = cfg["data"]
    spec = make_spec(
        num_classes=data["num_classes"],
        max_count=data["max_count"],
        imbalance_factor=data["imbalance_factor"],
        test_count=data["test_count"],
        head_threshold=data["head_threshold"],
        tail_threshold=data["tail_threshold"],
    )
    geometry = GaussianCircleGeometry(
        num_classes=data["num_classes"],
        dim=data["geometry"]["dim"],
        radius=data["geometry"]["radius"],
        sigma=data["geometry"]["sigma"],
    )
    return spec, geometry


def _train_config(cfg: dict) -> TrainConfig:
    train = cfg["train"]
    loss = cfg["loss"]
    horizon = max(1, round(loss["anneal_fraction"] * train["epochs"]))
    return TrainConfig(
        epochs=train["epochs"],
        batch_size=train["batch_size"],
        learning_rate=train["learning_rate"],
        momentum=train["momentum"],
        seed=cfg["seed"],
        loss=LossConfig(
            gate_threshold=loss["gate_threshold"],
            diversity_weight=loss["diversity_weight"],
            anneal=AnnealSchedule(horizon=horizon),
            kl_enabled=loss["kl_enabled"],
        ),
        fusion=FusionConfig(
            temperature=cfg["fusion"]["temperature"],
            max_experts=cfg["model"]["n_experts"],
        ),
    )


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json_atomic(path, obj) -> None:
    payload = json.dumps(_to_jsonable(obj), sort_keys=True, indent=2) + "\n"
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-json-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args)
    spec, geometry = _spec_and_geometry(cfg)
    seed = cfg["seed"]
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    train_set = sample_train(spec, geometry, seed)
    test_set = sample_test(spec, geometry, seed)
    ood_set = sample_ood(geometry, cfg["data"]["ood"]["count"],
                         cfg["data"]["ood"]["margin"], seed)

    write_csv(train_set, os.path.join(out_dir, "train.csv"))
    write_csv(test_set, os.path.join(out_dir, "test.csv"))
    write_ood_csv(ood_set, os.path.join(out_dir, "ood.csv"))
    manifest = {
        "schema_version": 1,
        "config": cfg,
        "class_counts": list(spec.counts),
        "regions": list(spec.regions),
        "test_count": spec.test_count,
        "ood_count": ood_set.num_samples,
        "files": {"train": "train.csv", "test": "test.csv", "ood": "ood.csv"},
    }
    write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
    print(f"wrote train/test/ood CSVs and manifest.json to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args)
    train_cfg = _train_config(cfg)
    dataset = load_csv(args.data, num_classes=cfg["data"]["num_classes"])
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    model = init_ensemble(NetworkConfig(
        input_dim=dataset.dim,
        hidden_sizes=tuple(cfg["model"]["hidden_sizes"]),
        num_classes=cfg["data"]["num_classes"],
        num_experts=cfg["model"]["n_experts"],
        seed=cfg["seed"],
    ))
    history = train_model(model, dataset.features, dataset.labels, train_cfg)

    ckpt_path = os.path.join(out_dir, "checkpoint.tlck")
    save_checkpoint(model, ckpt_path, configs={"run_config": cfg},
                    epoch=train_cfg.epochs)
    log = {
        "schema_version": 1,
        "config": cfg,
        "epochs": [
            {
                "epoch": s.epoch,
                "mean_loss": s.mean_loss,
                "kl_factor": s.kl_factor,
                "mean_engaged_experts": s.mean_engaged,
            }
            for s in history
        ],
    }
    write_json_atomic(os.path.join(out_dir, "training_log.json"), log)
    print(f"wrote checkpoint.tlck and training_log.json to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args)
    model, meta = load_checkpoint(args.checkpoint)
    test_set = load_csv(args.data, num_classes=model.config.num_classes)
    ood_set = load_ood_csv(args.ood) if args.ood else None
    spec, _ = _spec_and_geometry(cfg)
    if model.config.num_classes != spec.num_classes:
        raise ConfigError(
            f"checkpoint has {model.config.num_classes} classes but the config "
            f"declares {spec.num_classes}"
        )

    report = run_tasks(
        model,
        test_set,
        spec.regions,
        ood_set,
        fusion=FusionConfig(
            temperature=cfg["fusion"]["temperature"],
            max_experts=cfg["model"]["n_experts"],
        ),
        gate_threshold=cfg["loss"]["gate_threshold"],
        ece_bins=cfg["eval"]["ece_bins"],
        scorer=cfg["eval"]["scorer"],
    )
    payload = {"config": cfg, **report.to_dict()}
    write_json_atomic(args.out, payload)
    print(f"wrote report to {args.out}")
    return EXIT_OK


def _parse_evidence_arg(text: str, position: int) -> list[float]:
    cells = text.split(",")
    values = []
    for i, cell in enumerate(cells):
        try:
            values.append(float(cell))
        except ValueError:
            raise ConfigError(
                f"evidence vector {position}, entry {i}: {cell!r} is not a number"
            ) from None
    return values


def cmd_fuse_demo(args) -> int:
    if args.data:
        try:
            with open(args.data, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CsvFormatError(f"{args.data}: invalid JSON: {exc}") from exc
        if not isinstance(raw, list) or not all(isinstance(row, list) for row in raw):
            raise CsvFormatError(f"{args.data}: expected a JSON list of evidence lists")
        vectors = raw
    elif args.evidence:
        vectors = [_parse_evidence_arg(text, i + 1) for i, text in enumerate(args.evidence)]
    else:
        raise ConfigError("supply evidence vectors inline or via --data FILE")

    eta = args.eta if args.eta is not None else DEFAULT_CONFIG["fusion"]["temperature"]
    fusion = FusionConfig(temperature=eta, max_experts=len(vectors))
    opinions = [opinion_from_evidence(v) for v in vectors]
    trace = combine_sequential(opinions)
    fused = fuse_evidence(np.array(vectors, dtype=float), trace.prefix_weights, fusion)
    cls, unc, probs = predict(fused)

    for m, op in enumerate(opinions, start=1):
        print(f"expert {m}: u={op.uncertainty:.12g} evidence={_fmt_vec(op.evidence)}")
    print(f"conflicts: {_fmt_vec(trace.conflicts)}")
    print(f"prefix weights: {_fmt_vec(trace.prefix_weights)}")
    print(f"joint uncertainty: {trace.joint_uncertainty:.12g}")
    print(f"fused evidence: {_fmt_vec(fused)}")
    print(f"predicted class: {cls}")
    print(f"probs: {_fmt_vec(probs)}")
    print(f"fused uncertainty: {unc:.12g}")
    return EXIT_OK


def _fmt_vec(values) -> str:
    return "[" + ", ".join(f"{v:.12g}" for v in np.asarray(values)) + "]"


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1, not argparse's default 2 (reserved for I/O)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="evidential-experts",
        description="Long-tailed evidential multi-expert classifier toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults used if omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--experts", type=int, help="override the expert count")
    common.add_argument("--tau", type=float, help="override the gate threshold")
    common.add_argument("--eta", type=float, help="override the fusion temperature")

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate train/test/ood CSVs plus a manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common],
                       help="train a model and write a checkpoint plus log")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint and write a JSON report")
    p.add_argument("checkpoint", help="checkpoint file")
    p.add_argument("--data", required=True, help="balanced test CSV")
    p.add_argument("--ood", help="optional OOD CSV (no label column)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("fuse-demo", parents=[common],
                       help="inspect the combination algebra on given evidence")
    p.add_argument("evidence", nargs="*",
                   help="evidence vectors as comma-separated numbers")
    p.add_argument("--data", help="JSON file holding a list of evidence lists")
    p.set_defaults(handler=cmd_fuse_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CsvFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

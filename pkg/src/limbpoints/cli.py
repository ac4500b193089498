"""Command-line entry point.

Subcommands: synth (synthetic dataset), generate (augment annotations with
sampled limb keypoints), train, eval, render. Every command is driven by a
JSON config file with a mandatory seed; a few flags override config values.
Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from .data import (
    generate_synthetic,
    load_dataset,
    make_eval_grid,
    random_body_spec,
    save_dataset,
    split,
)
from .geometry import GenerationFailedError, sample_keypoint
from .metrics import EvalConfig, InstancePrediction, evaluate
from .model import EmbedderKind, KeypointModel, ModelConfig
from .representation import load_norm_pose_template
from .skeleton import get_skeleton, load_skeleton
from .train import (
    AdamState,
    NumericFailure,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)
from .visualize import overlay_to_svg, render_overlay

__all__ = ["main"]

log = logging.getLogger("limbpoints")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _load_config(path: str, allowed: set[str], required: set[str]) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}")
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    missing = required - set(cfg)
    if missing:
        raise UsageError(f"missing config keys: {sorted(missing)}")
    if "seed" in required and not isinstance(cfg["seed"], int):
        raise UsageError("seed must be an integer")
    return cfg


def _skeleton_from_config(cfg: dict):
    name = cfg.get("skeleton", "coco17")
    if isinstance(name, str) and name.endswith(".json"):
        return load_skeleton(name)
    return get_skeleton(name)


class _OutputLock:
    """One process per output directory; a plain lock file, removed on exit."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(
                f"output directory is locked by another run: {self.path} "
                "(remove the lock file if that run is dead)"
            )
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)


def _load_instances(path: str, skeleton, corrections=None):
    try:
        instances, report = load_dataset(path, skeleton, corrections)
    except (OSError, ValueError, KeyError) as err:
        raise DataError(f"failed to load dataset {path}: {err}")
    for line in report:
        log.warning("quarantined %s", line)
    return instances


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: dict) -> None:
    out = Path(cfg["out"])
    seed = cfg["seed"]
    count = int(cfg.get("count", 100))
    if count < 0:
        raise UsageError("count must be >= 0")
    skeleton = _skeleton_from_config(cfg)
    image_size = tuple(cfg.get("image_size", (64, 48)))
    splits = cfg.get("splits", {"train": 0.8, "val": 0.1, "test": 0.1})
    with _OutputLock(out):
        (out / "images").mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(seed)
        instances = []
        for i in range(count):
            spec = random_body_spec(
                rng,
                image_size=image_size,
                n_limbs=tuple(cfg.get("n_limbs", (2, 4))),
                half_width=tuple(cfg.get("half_width", (4.0, 6.0))),
                noise_level=cfg.get("noise_level", 0.05),
                instance_id=i,
                skeleton=skeleton,
            )
            inst = generate_synthetic(spec, skeleton)
            inst.image_path = f"images/{i:06d}.png"
            data_mod.save_image(out / inst.image_path, inst.image)
            instances.append(inst)
        parts = split(instances, tuple(splits.values()), seed)
        for name, items in zip(splits.keys(), parts):
            save_dataset(items, out / f"{name}.json", skeleton)
            log.info("wrote %d instances to %s.json", len(items), name)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(cfg: dict) -> None:
    skeleton = _skeleton_from_config(cfg)
    instances = _load_instances(cfg["dataset"], skeleton, cfg.get("corrections"))
    rng = np.random.default_rng(cfg["seed"])
    k = int(cfg.get("k_per_instance", 5))
    sigma = float(cfg.get("sigma", 1.0))
    skipped = 0
    for inst in instances:
        masks = list(inst.masks.values())
        if not masks:
            skipped += 1
            continue
        inst.generated = list(inst.generated)
        for _ in range(k):
            mask = masks[int(rng.integers(len(masks)))]
            try:
                inst.generated.append(sample_keypoint(mask, rng, sigma))
            except GenerationFailedError:
                skipped += 1
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(instances, out, skeleton)
    if skipped:
        log.warning("skipped %d instances/draws without usable masks", skipped)


# ---------------------------------------------------------------------------
# train


def _model_from_config(cfg: dict, seed: int) -> KeypointModel:
    model_cfg = dict(cfg.get("model", {}))
    model_cfg.setdefault("seed", seed)
    model_cfg.setdefault("skeleton", cfg.get("skeleton", "coco17"))
    config = ModelConfig.from_dict(model_cfg)
    skeleton = _skeleton_from_config(cfg)
    template = None
    if cfg.get("template"):
        template = load_norm_pose_template(cfg["template"], skeleton)
    return KeypointModel(config, skeleton=skeleton, template=template)


def cmd_train(cfg: dict) -> None:
    out = Path(cfg["out"])
    seed = cfg["seed"]
    skeleton = _skeleton_from_config(cfg)
    train_instances = _load_instances(cfg["train_dataset"], skeleton)
    if not train_instances:
        raise DataError("training dataset is empty")
    val_instances = (
        _load_instances(cfg["val_dataset"], skeleton) if cfg.get("val_dataset") else []
    )
    image_root = cfg.get("image_root")
    for inst in train_instances + val_instances:
        if inst.image is None:
            inst.image = inst.get_image(image_root)

    train_cfg_dict = dict(cfg.get("train", {}))
    train_cfg_dict.setdefault("seed", seed)
    tcfg = TrainConfig.from_dict(train_cfg_dict)

    with _OutputLock(out):
        out.mkdir(parents=True, exist_ok=True)
        if cfg.get("resume"):
            model, state, start_step, rng, _ = load_checkpoint(cfg["resume"], skeleton)
            if rng is None:
                raise DataError("checkpoint has no RNG state; cannot resume")
        else:
            model = _model_from_config(cfg, seed)
            state = AdamState.for_model(model)
            rng = np.random.default_rng(tcfg.seed)
            start_step = 0

        val_every = int(cfg.get("val_every", 0))
        log_path = out / "log.jsonl"
        t0 = time.time()
        with open(log_path, "a") as log_fh:

            def on_step(step, result):
                entry = {
                    "step": step,
                    "loss": result.loss,
                    "lr": tcfg.learning_rate,
                    "seed": tcfg.seed,
                    "elapsed_sec": round(time.time() - t0, 3),
                }
                if result.skipped_samples:
                    entry["skipped_samples"] = result.skipped_samples
                if val_every and val_instances and step % val_every == 0:
                    report = _evaluate_model(model, val_instances, skeleton, (2, 3), 0.2, 0.1)
                    entry["val_pck_fixed"] = report.pck_fixed
                    entry["val_mte"] = report.mte
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")

            try:
                state, rng, step = train_loop(
                    model, train_instances, tcfg, state, rng, start_step, on_step
                )
            except NumericFailure as err:
                log_fh.write(json.dumps({"error": str(err)}) + "\n")
                raise
        save_checkpoint(out / "checkpoint.ckpt", model, state, step, rng, tcfg)
        log.info("checkpoint written to %s", out / "checkpoint.ckpt")


# ---------------------------------------------------------------------------
# eval


def _evaluate_model(model, instances, skeleton, grid, pct_threshold, pck_threshold):
    predictions = []
    for inst in instances:
        specs = make_eval_grid(inst, *grid)
        vis_idx = np.flatnonzero(inst.keypoints[:, 2] > 0)
        queries = [int(i) for i in vis_idx] + specs
        decoded = model.predict(inst.get_image(), queries)
        fixed = np.zeros((skeleton.n_keypoints, 2))
        for k, d in zip(vis_idx, decoded[: len(vis_idx)]):
            fixed[k] = d.point
        arbitrary = [(s, d.point) for s, d in zip(specs, decoded[len(vis_idx) :])]
        predictions.append(InstancePrediction(fixed_points=fixed, arbitrary=arbitrary))
    cfg = EvalConfig(
        skeleton=skeleton,
        pck_threshold=pck_threshold,
        pct_thresholds=(pct_threshold,),
    )
    return evaluate(instances, predictions, cfg)


def _ground_truth_report(instances, skeleton, grid, pct_threshold, pck_threshold):
    from .geometry import realize_keypoint

    predictions = []
    for inst in instances:
        specs = make_eval_grid(inst, *grid)
        arbitrary = [(s, realize_keypoint(inst.masks[s.limb], s)) for s in specs]
        predictions.append(
            InstancePrediction(fixed_points=inst.keypoints[:, :2].copy(), arbitrary=arbitrary)
        )
    cfg = EvalConfig(
        skeleton=skeleton, pck_threshold=pck_threshold, pct_thresholds=(pct_threshold,)
    )
    return evaluate(instances, predictions, cfg)


def cmd_eval(cfg: dict) -> None:
    out = Path(cfg["out"])
    skeleton = _skeleton_from_config(cfg)
    instances = _load_instances(cfg["dataset"], skeleton)
    if not instances:
        raise DataError("evaluation dataset is empty")
    image_root = cfg.get("image_root")
    for inst in instances:
        if inst.image is None and not cfg.get("ground_truth"):
            inst.image = inst.get_image(image_root)
    grid = tuple(cfg.get("grid", (4, 5)))
    pct_t = float(cfg.get("pct_threshold", 0.2))
    pck_t = float(cfg.get("pck_threshold", 0.1))
    if cfg.get("ground_truth"):
        report = _ground_truth_report(instances, skeleton, grid, pct_t, pck_t)
    else:
        if not cfg.get("checkpoint"):
            raise UsageError("eval needs a checkpoint (or ground_truth: true)")
        try:
            model, *_ = load_checkpoint(cfg["checkpoint"], skeleton)
        except (OSError, ValueError) as err:
            raise DataError(f"failed to load checkpoint: {err}")
        report = _evaluate_model(model, instances, skeleton, grid, pct_t, pck_t)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_text() + "\n")
    print(report.to_text())


# ---------------------------------------------------------------------------
# render


def cmd_render(cfg: dict) -> None:
    out = Path(cfg["out"])
    skeleton = _skeleton_from_config(cfg)
    instances = _load_instances(cfg["dataset"], skeleton)
    if not instances:
        raise DataError("render dataset is empty")
    image_root = cfg.get("image_root")
    predict_fn = None
    if cfg.get("checkpoint"):
        try:
            model, *_ = load_checkpoint(cfg["checkpoint"], skeleton)
        except (OSError, ValueError) as err:
            raise DataError(f"failed to load checkpoint: {err}")

        def make_predict(inst):
            def predict(specs):
                decoded = model.predict(inst.get_image(image_root), specs)
                return np.array([d.point for d in decoded])

            return predict

    else:
        make_predict = lambda inst: None  # analytic ground truth

    mode = cfg.get("mode", "grid")
    grid = tuple(cfg.get("grid", (4, 5)))
    darken = float(cfg.get("darken", 0.5))
    limit = int(cfg.get("limit", len(instances)))
    out.mkdir(parents=True, exist_ok=True)
    for inst in instances[:limit]:
        overlaid, frame, elements = render_overlay(
            inst,
            make_predict(inst),
            mode=mode,
            grid=grid,
            darken=darken,
            image_root=image_root,
        )
        stem = f"{inst.instance_id:06d}_{mode}"
        overlaid.save(out / f"{stem}.png")
        (out / f"{stem}.svg").write_text(overlay_to_svg(frame, elements))
    log.info("rendered %d overlays to %s", min(limit, len(instances)), out)


# ---------------------------------------------------------------------------
# argument wiring


_CONFIG_KEYS = {
    "synth": (
        {"seed", "out", "count", "image_size", "n_limbs", "half_width", "noise_level", "splits", "skeleton"},
        {"seed", "out"},
    ),
    "generate": (
        {"seed", "dataset", "out", "k_per_instance", "sigma", "skeleton", "corrections"},
        {"seed", "dataset", "out"},
    ),
    "train": (
        {"seed", "out", "train_dataset", "val_dataset", "image_root", "model", "train", "val_every", "skeleton", "template", "resume"},
        {"seed", "out", "train_dataset"},
    ),
    "eval": (
        {"seed", "out", "dataset", "checkpoint", "ground_truth", "grid", "pct_threshold", "pck_threshold", "image_root", "skeleton"},
        {"seed", "out", "dataset"},
    ),
    "render": (
        {"seed", "out", "dataset", "checkpoint", "mode", "grid", "darken", "limit", "image_root", "skeleton"},
        {"seed", "out", "dataset"},
    ),
}

_COMMANDS = {
    "synth": cmd_synth,
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
}


def _parse_grid(text: str) -> list[int]:
    try:
        rows, cols = text.lower().split("x")
        return [int(rows), int(cols)]
    except ValueError:
        raise UsageError(f"--grid expects ROWSxCOLS, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="limbpoints", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output path")
        if name in ("eval", "render"):
            p.add_argument("--grid", help="eval grid as ROWSxCOLS")
        if name == "eval":
            p.add_argument("--pct-threshold", type=float, dest="pct_threshold")
            p.add_argument("--pck-threshold", type=float, dest="pck_threshold")
        if name == "train":
            p.add_argument(
                "--embedder",
                choices=[k.value for k in EmbedderKind],
                help="override the model embedder kind",
            )
            p.add_argument("--resume", help="checkpoint to resume from")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("LIMBPOINTS_LOG", "info").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        allowed, required = _CONFIG_KEYS[args.command]
        cfg = _load_config(args.config, allowed, required)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out"] = args.out
        if getattr(args, "grid", None):
            cfg["grid"] = _parse_grid(args.grid)
        for key in ("pct_threshold", "pck_threshold", "resume"):
            if getattr(args, key, None) is not None:
                cfg[key] = getattr(args, key)
        if getattr(args, "embedder", None):
            cfg.setdefault("model", {})["embedder"] = args.embedder
        _COMMANDS[args.command](cfg)
        return EXIT_OK
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``deshufflegan {train,sample,eval,perms}``.

Exit status is 0 on success, 1 for user errors (bad config, missing files,
unreadable checkpoints) and 2 for anything unexpected. Settings resolve as
flags > config file > defaults. Run directories go under ``--out-root``,
else ``$DESHUFFLEGAN_OUTPUT_ROOT``, else ``./runs``.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import importlib
import json
import logging
import os
import platform
import shutil
import sys
from pathlib import Path

import torch
import yaml

from . import __version__
from .dataio import DatasetSpec, ImageDataset, open_dataset
from .evalfid import ToyExtractor, evaluate, generate_images, report_record
from .permset import PermutationSetFormatError, generate_set, load_set, save_set
from .trainer import (
    CheckpointError,
    RunDirectory,
    TrainConfig,
    init_state,
    load_generator,
    restore,
    save_grid,
    train,
)

log = logging.getLogger("deshufflegan")

OUTPUT_ROOT_ENV = "DESHUFFLEGAN_OUTPUT_ROOT"
EVAL_DEFAULTS = {"n_samples": 10_000, "seed": 0, "extractor": "toy"}
TOP_LEVEL_KEYS = {"train", "dataset", "eval", "permutations"}


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- config ------------------------------------------------------------------

def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise UserError(f"config section {section!r}: unknown keys {unknown}; allowed: {sorted(allowed)}")


def load_config(path: str | None) -> tuple[dict, str | None]:
    """Parse a YAML/JSON run config into {'train', 'dataset', 'eval', 'permutations'}."""
    doc, text = {}, None
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UserError(f"cannot read config {path}: {exc}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise UserError(f"config {path} is not valid YAML/JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UserError(f"config {path} must be a mapping at top level")
    _check_keys("<top>", doc, TOP_LEVEL_KEYS)
    cfg = {
        "train": dict(doc.get("train") or {}),
        "dataset": dict(doc.get("dataset") or {}),
        "eval": dict(doc.get("eval") or {}),
        "permutations": doc.get("permutations"),
    }
    _check_keys("train", cfg["train"], {f.name for f in dataclasses.fields(TrainConfig)})
    _check_keys("dataset", cfg["dataset"], {f.name for f in dataclasses.fields(DatasetSpec)})
    _check_keys("eval", cfg["eval"], EVAL_DEFAULTS)
    return cfg, text


def _dataset_from_arg(value: str | None, current: dict) -> dict:
    if value is None:
        return current
    if value == "synthetic":
        return {**current, "source": "synthetic_structured", "root": None}
    return {**current, "source": "image_folder", "root": value}


def _build(cfg_doc: dict, args) -> tuple[TrainConfig, DatasetSpec]:
    train_d = dict(cfg_doc["train"])
    flag_map = {
        "loss": "loss_variant", "alpha": "alpha", "beta": "beta", "iterations": "total_iterations",
        "batch_size": "batch_size", "seed": "seed", "image_size": "image_size", "base_width": "base_width",
        "z_dim": "z_dim", "lr_g": "lr_g", "lr_d": "lr_d", "checkpoint_every": "checkpoint_every",
        "sample_every": "sample_every", "log_every": "log_every",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            train_d[key] = value
    if getattr(args, "deshuffle", None) is not None:
        train_d["deshuffle_enabled"] = args.deshuffle == "on"
    try:
        tcfg = TrainConfig(**train_d)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid train config: {exc}") from None

    ds = _dataset_from_arg(getattr(args, "dataset", None), dict(cfg_doc["dataset"]))
    ds.setdefault("image_size", tcfg.image_size)
    ds.setdefault("shuffle_seed", tcfg.seed)
    if getattr(args, "n_synthetic", None) is not None:
        ds["n_samples"] = args.n_synthetic
    try:
        dspec = DatasetSpec(**ds)
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid dataset config: {exc}") from None
    if dspec.image_size != tcfg.image_size:
        raise UserError(f"dataset.image_size={dspec.image_size} differs from train.image_size={tcfg.image_size}")
    return tcfg, dspec


def _open(dspec: DatasetSpec) -> ImageDataset:
    try:
        return open_dataset(dspec)
    except (FileNotFoundError, ValueError) as exc:
        raise UserError(f"cannot open dataset: {exc}") from None


def _output_root(args) -> Path:
    return Path(args.out_root or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg_doc, source_text = load_config(args.config)
    tcfg, dspec = _build(cfg_doc, args)
    perms_path = args.perms or cfg_doc["permutations"]
    pset = None
    if perms_path:
        try:
            pset = load_set(perms_path)
        except (OSError, PermutationSetFormatError) as exc:
            raise UserError(f"cannot load permutation set: {exc}") from None

    state = None
    if args.resume:
        state = _restore(args.resume)
        if state.cfg.to_dict() != tcfg.to_dict():
            # Only the iteration budget may change on resume.
            tcfg = dataclasses.replace(state.cfg, total_iterations=tcfg.total_iterations)
            state.cfg = tcfg

    dataset = _open(dspec)

    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        run_dir = _output_root(args) / f"{stamp}-{tcfg.loss_variant}-deshuffle-{'on' if tcfg.deshuffle_enabled else 'off'}"
    if not args.resume and (run_dir / "metrics.jsonl").exists():
        raise UserError(f"run directory {run_dir} already holds a run; pass --resume or pick another")

    if state is None:
        try:
            state = init_state(tcfg, pset)
        except ValueError as exc:
            raise UserError(str(exc)) from None

    created = not run_dir.exists()
    try:
        sink = RunDirectory(run_dir)
        resolved = {
            "train": tcfg.to_dict(),
            "dataset": dataclasses.asdict(dspec),
            "eval": {**EVAL_DEFAULTS, **cfg_doc["eval"]},
            "permutations": str(perms_path) if perms_path else None,
        }
        (run_dir / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=False), encoding="utf-8")
        if source_text is not None:
            (run_dir / "config.source.yaml").write_text(source_text, encoding="utf-8")
        save_set(state.pset, run_dir / "permutations.txt")
        (run_dir / "run.json").write_text(json.dumps({
            "code_version": __version__,
            "torch": torch.__version__,
            "python": platform.python_version(),
            "argv": sys.argv[1:],
            "dataset": dataset.fingerprint(),
            "data_seed": state.data_seed,
        }, indent=2), encoding="utf-8")
    except OSError as exc:
        if created:
            shutil.rmtree(run_dir, ignore_errors=True)
        raise UserError(f"cannot create run directory {run_dir}: {exc}") from None

    log.info("training %s for %d iterations into %s", tcfg.loss_variant, tcfg.total_iterations, run_dir)
    state = train(tcfg, dataset, sink, state=state)
    print(json.dumps({"run_dir": str(run_dir), "iteration": state.iteration,
                      "best_g_loss": state.best_g_loss, "best_g_iteration": state.best_g_iteration}))
    return 0


def _restore(path):
    try:
        return restore(path)
    except (OSError, CheckpointError) as exc:
        raise UserError(f"cannot restore checkpoint {path}: {exc}") from None


def _load_generator(path, which="current"):
    try:
        return load_generator(path, which)
    except (OSError, CheckpointError) as exc:
        raise UserError(f"cannot load generator from {path}: {exc}") from None


def cmd_sample(args) -> int:
    net, _ = _load_generator(args.checkpoint, "best_g" if args.best_g else "current")
    if args.n < 1:
        raise UserError("-n must be >= 1")
    images = generate_images(net, args.n, args.seed)
    save_grid(images, args.out)
    print(json.dumps({"out": str(args.out), "n": args.n, "seed": args.seed}))
    return 0


def make_extractor(name: str):
    """``toy`` / ``toy:<dim>`` or ``python:<module>:<factory>`` returning an extractor."""
    if name == "toy" or name.startswith("toy:"):
        dim = int(name.split(":", 1)[1]) if ":" in name else 32
        return ToyExtractor(dim=dim)
    if name.startswith("python:"):
        try:
            _, module, attr = name.split(":", 2)
            return getattr(importlib.import_module(module), attr)()
        except (ValueError, ImportError, AttributeError) as exc:
            raise UserError(f"cannot load extractor {name!r}: {exc}") from None
    raise UserError(f"unknown extractor {name!r}; use 'toy', 'toy:<dim>' or 'python:<module>:<factory>'")


def _eval_targets(args) -> list[tuple[str, Path, str]]:
    """(checkpoint_id, path, which) triples for --checkpoint."""
    sel = args.checkpoint
    if sel in ("best-g", "last", "all"):
        if not args.run_dir:
            raise UserError(f"--checkpoint {sel} needs --run-dir")
        ckdir = Path(args.run_dir) / "checkpoints"
        if sel == "best-g":
            return [("best-g", ckdir / "best_g.pt", "current")]
        if sel == "last":
            return [("last", ckdir / "last.pt", "current")]
        paths = sorted(ckdir.glob("ckpt_*.pt"))
        if not paths:
            raise UserError(f"no checkpoints under {ckdir}")
        return [(p.stem, p, "current") for p in paths]
    return [(Path(sel).stem, Path(sel), "current")]


def _eval_dataset(args, cfg_doc, ckpt_cfg: TrainConfig, fingerprint: dict | None) -> ImageDataset:
    ds = dict(cfg_doc["dataset"])
    if args.dataset is None and not ds and fingerprint:
        if fingerprint.get("source") == "synthetic_structured":
            ds = {"source": "synthetic_structured", "n_samples": fingerprint["count"],
                  "synthetic_seed": fingerprint["seed"]}
        elif fingerprint.get("source") == "image_folder":
            ds = {"source": "image_folder", "root": fingerprint["root"]}
    ds = _dataset_from_arg(args.dataset, ds)
    ds["image_size"] = ckpt_cfg.image_size
    try:
        return _open(DatasetSpec(**ds))
    except (TypeError, ValueError) as exc:
        raise UserError(f"invalid dataset config: {exc}") from None


def cmd_eval(args) -> int:
    cfg_doc, _ = load_config(args.config)
    settings = {**EVAL_DEFAULTS, **cfg_doc["eval"]}
    for key in ("n_samples", "seed", "extractor"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    extractor = make_extractor(settings["extractor"])

    fingerprint = None
    if args.run_dir and (Path(args.run_dir) / "run.json").exists():
        fingerprint = json.loads((Path(args.run_dir) / "run.json").read_text())["dataset"]

    results = []
    dataset = None
    for ckpt_id, path, which in _eval_targets(args):
        net, info = _load_generator(path, which)
        if dataset is None:
            dataset = _eval_dataset(args, cfg_doc, info["cfg"], fingerprint)
        try:
            score = evaluate(net, dataset, extractor, settings["n_samples"], settings["seed"])
        except RuntimeError as exc:
            raise UserError(f"evaluation of {path} failed: {exc}") from exc
        record = report_record(ckpt_id, extractor.extractor_id, settings["n_samples"], settings["seed"], score)
        results.append((score, ckpt_id))
        print(record)
        if args.run_dir:
            with open(Path(args.run_dir) / "eval.jsonl", "a", encoding="utf-8") as f:
                f.write(record + "\n")
    if len(results) > 1:
        best, best_id = min(results)
        print(json.dumps({"summary": "min_fid", "checkpoint_id": best_id, "fid": best}))
    return 0


def cmd_perms(args) -> int:
    try:
        pset = generate_set(args.tiles, args.k, args.seed)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    save_set(pset, args.out)
    print(json.dumps({"out": str(args.out), "k": pset.k, "tiles": pset.tile_count,
                      "min_pairwise_hamming": pset.min_pairwise_hamming}))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deshufflegan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a (Deshuffle) GAN")
    t.add_argument("--config", help="YAML/JSON run config")
    t.add_argument("--dataset", help="image folder path, or 'synthetic'")
    t.add_argument("--n-synthetic", type=int, help="synthetic dataset size")
    t.add_argument("--loss", choices=["standard", "ras", "rals", "rahinge"])
    t.add_argument("--deshuffle", choices=["on", "off"])
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--image-size", type=int)
    t.add_argument("--base-width", type=int)
    t.add_argument("--z-dim", type=int)
    t.add_argument("--lr-g", type=float)
    t.add_argument("--lr-d", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--sample-every", type=int)
    t.add_argument("--log-every", type=int)
    t.add_argument("--perms", help="permutation-set file to train with")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--run-dir", help="explicit run directory")
    t.add_argument("--out-root", help=f"parent for new run directories (default ${OUTPUT_ROOT_ENV} or ./runs)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="write an image grid from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("-n", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--best-g", action="store_true", help="use the min-L_G generator stored in a full checkpoint")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="Fréchet distance of generated vs real features")
    e.add_argument("--checkpoint", required=True, help="checkpoint path, or best-g | last | all with --run-dir")
    e.add_argument("--run-dir")
    e.add_argument("--config")
    e.add_argument("--dataset", help="image folder path, or 'synthetic'")
    e.add_argument("--extractor", help="toy, toy:<dim>, or python:<module>:<factory>")
    e.add_argument("--n-samples", type=int)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("perms", help="generate a maximal-Hamming permutation set")
    q.add_argument("--tiles", type=int, default=9)
    q.add_argument("-k", type=int, default=30)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_perms)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"deshufflegan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"deshufflegan {args.command}: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Adversarial training with the jigsaw deshuffling task.

Per iteration, one discriminator update then one generator update:

* D minimizes ``d_adv + alpha * v_disc`` where ``v_disc`` is the deshuffle
  loss on shuffled *real* images only.
* G minimizes ``g_adv + beta * v_gen`` where ``v_gen`` is the deshuffle loss
  the (fixed) discriminator assigns to shuffled *generated* images. Gradients
  run through the tile rearrangement into G.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import io
import json
import math
import os
import struct
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import __version__
from . import losses
from .dataio import BatchStream, ImageDataset
from .models import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
)
from .permset import PermutationSet, generate_set
from .shuffler import compute_geometry, shuffle

CHECKPOINT_MAGIC = b"DSHFLGAN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct(">8sI32s")

LOSS_VARIANTS = tuple(losses.ADVERSARIAL_LOSSES)


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    loss_variant: str = "rals"
    alpha: float = losses.DEFAULT_ALPHA
    beta: float = losses.DEFAULT_BETA
    batch_size: int = 32
    total_iterations: int = 100_000
    seed: int = 1
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    deshuffle_enabled: bool = True
    z_dim: int = 128
    image_size: int = 128
    base_width: int = 64
    k_perm: int = 30
    tile_count: int = 9
    checkpoint_every: int = 5000
    sample_every: int = 1000
    log_every: int = 1

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.tile_count != 9:
            raise ValueError("training uses a 3x3 grid; tile_count must be 9")
        for name in ("total_iterations", "checkpoint_every", "sample_every", "log_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(z_dim=self.z_dim, out_size=self.image_size, base_width=self.base_width)

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(in_size=self.image_size, base_width=self.base_width, k_perm=self.k_perm)


@dataclass
class StepReport:
    iteration: int
    losses: losses.LossTerms
    acc_real: float | None
    acc_fake: float | None
    wall_time: float

    def record(self) -> dict:
        """The metric-log line (wall time excluded so logs are reproducible)."""
        return {"iteration": self.iteration, **self.losses.as_dict(), "acc_real": self.acc_real, "acc_fake": self.acc_fake}


@dataclass
class TrainState:
    cfg: TrainConfig
    pset: PermutationSet
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    z_rng: torch.Generator
    perm_rng: torch.Generator
    data_seed: int
    data_state: dict | None = None
    iteration: int = 0
    best_g_loss: float = math.inf
    best_g_iteration: int = -1
    best_g_params: dict | None = None
    dataset_fingerprint: dict = field(default_factory=dict)


def _stream_seeds(seed: int) -> dict[str, int]:
    """Independent seeds for weight init, z draws, permutation draws and data order."""
    words = np.random.SeedSequence(seed).generate_state(5, dtype=np.uint32)
    return dict(zip(("init_g", "init_d", "z", "perm", "data"), (int(w) for w in words)))


def init_state(cfg: TrainConfig, pset: PermutationSet | None = None) -> TrainState:
    seeds = _stream_seeds(cfg.seed)
    if pset is None:
        pset = generate_set(cfg.tile_count, cfg.k_perm, cfg.seed)
    if pset.k != cfg.k_perm or pset.tile_count != cfg.tile_count:
        raise ValueError(f"permutation set is {pset.k}x{pset.tile_count}, config wants {cfg.k_perm}x{cfg.tile_count}")
    g = build_generator(cfg.generator_spec(), seed=seeds["init_g"])
    d = build_discriminator(cfg.discriminator_spec(), seed=seeds["init_d"])
    return TrainState(
        cfg=cfg,
        pset=pset,
        generator=g,
        discriminator=d,
        opt_g=torch.optim.Adam(g.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, cfg.beta2)),
        opt_d=torch.optim.Adam(d.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, cfg.beta2)),
        z_rng=torch.Generator().manual_seed(seeds["z"]),
        perm_rng=torch.Generator().manual_seed(seeds["perm"]),
        data_seed=seeds["data"],
    )


def _accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == labels).double().mean())


def _weighted(adv: torch.Tensor, aux: torch.Tensor | None, weight: float) -> torch.Tensor:
    # A zero weight keeps aux out of the graph so the baseline step is bit-identical.
    return adv if (aux is None or weight == 0) else adv + weight * aux


def _ensure_finite(iteration: int, **terms) -> None:
    for name, value in terms.items():
        if value is not None and not torch.isfinite(value).all():
            raise NonFiniteLossError(f"{name} is non-finite ({float(value.detach())}) at iteration {iteration}")


def _adversarial(variant: str, iteration: int, c_real, c_fake):
    try:
        return losses.adversarial_losses(variant, c_real, c_fake)
    except ValueError as exc:
        raise NonFiniteLossError(f"adversarial loss inputs at iteration {iteration}: {exc}") from exc


def _deshuffle(name: str, iteration: int, logits, labels):
    try:
        return losses.deshuffle_loss(logits, labels)
    except ValueError as exc:
        raise NonFiniteLossError(f"{name} inputs at iteration {iteration}: {exc}") from exc


def discriminator_step(state: TrainState, real: torch.Tensor, cfg: TrainConfig) -> dict:
    """One D update. S_fake never enters this step."""
    G, D = state.generator, state.discriminator
    it = state.iteration + 1
    D.requires_grad_(True)
    state.opt_d.zero_grad(set_to_none=True)

    z = torch.randn(real.shape[0], cfg.z_dim, generator=state.z_rng)
    with torch.no_grad():
        fake = G(z)
    d_adv, _ = _adversarial(cfg.loss_variant, it, D(real).rf_score, D(fake).rf_score)

    v_disc = acc = None
    if cfg.deshuffle_enabled:
        s_real = shuffle(real, state.pset, state.perm_rng)
        logits = D(s_real.shuffled).perm_logits
        v_disc = _deshuffle("v_disc", it, logits, s_real.labels)
        acc = _accuracy(logits.detach(), s_real.labels)

    d_total = _weighted(d_adv, v_disc, cfg.alpha)
    _ensure_finite(it, d_adv=d_adv, v_disc=v_disc, d_total=d_total)
    d_total.backward()
    state.opt_d.step()
    return {"d_adv": d_adv.detach(), "v_disc": None if v_disc is None else v_disc.detach(), "acc_real": acc}


def generator_step(state: TrainState, real: torch.Tensor, cfg: TrainConfig) -> dict:
    """One G update through a frozen D; only S_fake feeds the deshuffle term."""
    G, D = state.generator, state.discriminator
    it = state.iteration + 1
    D.requires_grad_(False)
    try:
        state.opt_g.zero_grad(set_to_none=True)
        z = torch.randn(real.shape[0], cfg.z_dim, generator=state.z_rng)
        fake = G(z)
        with torch.no_grad():
            c_real = D(real).rf_score
        _, g_adv = _adversarial(cfg.loss_variant, it, c_real, D(fake).rf_score)

        v_gen = acc = None
        if cfg.deshuffle_enabled:
            s_fake = shuffle(fake, state.pset, state.perm_rng)
            logits = D(s_fake.shuffled).perm_logits
            v_gen = _deshuffle("v_gen", it, logits, s_fake.labels)
            acc = _accuracy(logits.detach(), s_fake.labels)

        g_total = _weighted(g_adv, v_gen, cfg.beta)
        _ensure_finite(it, g_adv=g_adv, v_gen=v_gen, g_total=g_total)
        if float(g_total.detach()) < state.best_g_loss:
            # Snapshot the parameters that produced this loss, before stepping.
            state.best_g_loss = float(g_total.detach())
            state.best_g_iteration = it
            state.best_g_params = copy.deepcopy(G.state_dict())
        g_total.backward()
        state.opt_g.step()
    finally:
        D.requires_grad_(True)
    return {"g_adv": g_adv.detach(), "v_gen": None if v_gen is None else v_gen.detach(), "acc_fake": acc}


def train_step(state: TrainState, real_batch: torch.Tensor, cfg: TrainConfig | None = None) -> tuple[TrainState, StepReport]:
    cfg = cfg or state.cfg
    if real_batch.shape[0] != cfg.batch_size:
        raise ValueError(f"batch has {real_batch.shape[0]} images, config says {cfg.batch_size}")
    t0 = time.perf_counter()
    state.generator.train()
    state.discriminator.train()
    d = discriminator_step(state, real_batch, cfg)
    g = generator_step(state, real_batch, cfg)
    state.iteration += 1
    terms = losses.combine(d["d_adv"], g["g_adv"], d["v_disc"], g["v_gen"], cfg.alpha, cfg.beta)
    report = StepReport(state.iteration, terms, d["acc_real"], g["acc_fake"], time.perf_counter() - t0)
    return state, report


# -- checkpoints -------------------------------------------------------------

def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_container(path, cfg: TrainConfig, payload: dict) -> None:
    buf = io.BytesIO()
    torch.save(payload, buf)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.digest())
    _atomic_write(Path(path), header + buf.getvalue())


def _read_container(path) -> tuple[TrainConfig, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, digest = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: schema version {version} is incompatible with {CHECKPOINT_VERSION}")
    try:
        payload = torch.load(io.BytesIO(raw[_HEADER.size:]), weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint payload") from exc
    cfg = TrainConfig.from_dict(payload["cfg"])
    if cfg.digest() != digest:
        raise CheckpointError(f"{path}: config digest in header does not match payload")
    return cfg, payload


def snapshot(state: TrainState, path) -> None:
    pset = state.pset
    payload = {
        "kind": "train_state",
        "code_version": __version__,
        "cfg": state.cfg.to_dict(),
        "permutations": {"orders": [list(p) for p in pset.permutations], "tiles": pset.tile_count, "seed": pset.generation_seed},
        "geometry": asdict(compute_geometry(state.cfg.image_size, state.cfg.image_size)),
        "iteration": state.iteration,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng": {"z": state.z_rng.get_state(), "perm": state.perm_rng.get_state()},
        "data_seed": state.data_seed,
        "data_state": state.data_state,
        "best_g_loss": state.best_g_loss,
        "best_g_iteration": state.best_g_iteration,
        "best_g_params": state.best_g_params,
        "dataset": state.dataset_fingerprint,
    }
    _write_container(path, state.cfg, payload)


def restore(path) -> TrainState:
    cfg, p = _read_container(path)
    if p.get("kind") != "train_state":
        raise CheckpointError(f"{path}: holds a {p.get('kind')!r}, not a full training state")
    pset = PermutationSet(
        tuple(tuple(o) for o in p["permutations"]["orders"]), p["permutations"]["tiles"], p["permutations"]["seed"]
    )
    state = init_state(cfg, pset)
    state.generator.load_state_dict(p["generator"])
    state.discriminator.load_state_dict(p["discriminator"])
    state.opt_g.load_state_dict(p["opt_g"])
    state.opt_d.load_state_dict(p["opt_d"])
    state.z_rng.set_state(p["rng"]["z"])
    state.perm_rng.set_state(p["rng"]["perm"])
    state.data_seed = p["data_seed"]
    state.data_state = p["data_state"]
    state.iteration = p["iteration"]
    state.best_g_loss = p["best_g_loss"]
    state.best_g_iteration = p["best_g_iteration"]
    state.best_g_params = p["best_g_params"]
    state.dataset_fingerprint = p["dataset"]
    return state


def save_generator(state: TrainState, path, which: str = "current") -> None:
    """Generator-only snapshot; ``which="best_g"`` stores the min-L_G parameters."""
    if which == "best_g":
        if state.best_g_params is None:
            raise CheckpointError("no generator loss recorded yet")
        params, it, g_loss = state.best_g_params, state.best_g_iteration, state.best_g_loss
    else:
        params, it, g_loss = state.generator.state_dict(), state.iteration, None
    payload = {"kind": "generator", "code_version": __version__, "cfg": state.cfg.to_dict(),
               "generator": params, "iteration": it, "g_loss": g_loss}
    _write_container(path, state.cfg, payload)


def load_generator(path, which: str = "current") -> tuple[Generator, dict]:
    """Load a generator from a full checkpoint or a generator snapshot.

    Returns the network in eval mode and a small info dict.
    """
    cfg, p = _read_container(path)
    net = build_generator(cfg.generator_spec())
    if p.get("kind") == "generator":
        net.load_state_dict(p["generator"])
        info = {"iteration": p["iteration"], "g_loss": p["g_loss"]}
    elif which == "best_g":
        if p["best_g_params"] is None:
            raise CheckpointError(f"{path}: no min-L_G snapshot recorded")
        net.load_state_dict(p["best_g_params"])
        info = {"iteration": p["best_g_iteration"], "g_loss": p["best_g_loss"]}
    else:
        net.load_state_dict(p["generator"])
        info = {"iteration": p["iteration"], "g_loss": None}
    info["cfg"] = cfg
    return net.eval(), info


# -- loop --------------------------------------------------------------------

class MemorySink:
    """Collects reports in memory; the default when no run directory is given."""

    def __init__(self):
        self.records: list[dict] = []
        self.checkpoints: list[int] = []

    def log(self, report: StepReport) -> None:
        self.records.append(report.record())

    def checkpoint(self, state: TrainState) -> None:
        self.checkpoints.append(state.iteration)

    def samples(self, state: TrainState, images: torch.Tensor) -> None:
        pass


class RunDirectory:
    """Writes metrics.jsonl, checkpoints/ and samples/ under ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.root / "samples").mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.root / "metrics.jsonl"

    def log(self, report: StepReport) -> None:
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(report.record()) + "\n")

    def checkpoint(self, state: TrainState) -> None:
        ckpt = self.root / "checkpoints" / f"ckpt_{state.iteration:07d}.pt"
        snapshot(state, ckpt)
        snapshot(state, self.root / "checkpoints" / "last.pt")
        if state.best_g_params is not None:
            save_generator(state, self.root / "checkpoints" / "best_g.pt", which="best_g")

    def samples(self, state: TrainState, images: torch.Tensor) -> None:
        save_grid(images, self.root / "samples" / f"iter_{state.iteration:07d}.png")


def save_grid(images: torch.Tensor, path, nrow: int | None = None) -> None:
    from torchvision.utils import save_image

    nrow = nrow or max(1, math.ceil(math.sqrt(images.shape[0])))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_image(images, str(path), nrow=nrow, normalize=True, value_range=(-1, 1), padding=2)


@torch.no_grad()
def _sample_fixed(state: TrainState, z: torch.Tensor) -> torch.Tensor:
    G = state.generator
    G.eval()
    try:
        return G(z)
    finally:
        G.train()


def train(
    cfg: TrainConfig,
    data: ImageDataset | BatchStream,
    sink=None,
    state: TrainState | None = None,
    callback: Callable[[TrainState, StepReport], None] | None = None,
) -> TrainState:
    """Run until ``cfg.total_iterations``, resuming from ``state`` if given."""
    sink = sink if sink is not None else MemorySink()
    if state is None:
        state = init_state(cfg)
    elif state.cfg.to_dict() != cfg.to_dict():
        raise ValueError("resumed state was trained with a different config")

    if isinstance(data, ImageDataset):
        if data.image_size != cfg.image_size:
            raise ValueError(f"dataset image size {data.image_size} != config image_size {cfg.image_size}")
        state.dataset_fingerprint = data.fingerprint()
        stream = BatchStream(data, cfg.batch_size, state.data_seed)
    else:
        stream = data
    if state.data_state is not None:
        stream.load_state_dict(state.data_state)

    sample_z = torch.randn(64, cfg.z_dim, generator=torch.Generator().manual_seed(cfg.seed))
    last_checkpoint = None
    while state.iteration < cfg.total_iterations:
        batch = stream.next_batch()
        state.data_state = stream.state_dict()
        state, report = train_step(state, batch, cfg)
        if cfg.log_every and state.iteration % cfg.log_every == 0:
            sink.log(report)
        if callback is not None:
            callback(state, report)
        if cfg.sample_every and state.iteration % cfg.sample_every == 0:
            sink.samples(state, _sample_fixed(state, sample_z))
        if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
            sink.checkpoint(state)
            last_checkpoint = state.iteration
    if last_checkpoint != state.iteration:
        sink.checkpoint(state)
    return state

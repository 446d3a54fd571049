import json
import math
import struct

import pytest
import torch

from deshufflegan import losses
from deshufflegan.dataio import BatchStream, synthetic_structured
from deshufflegan.trainer import (
    CheckpointError,
    MemorySink,
    NonFiniteLossError,
    RunDirectory,
    TrainConfig,
    discriminator_step,
    generator_step,
    init_state,
    load_generator,
    restore,
    save_generator,
    snapshot,
    train,
    train_step,
)

SMALL = dict(image_size=32, base_width=4, batch_size=4, z_dim=16, checkpoint_every=0, sample_every=0)


def small_cfg(**kw):
    return TrainConfig(**{**SMALL, "total_iterations": 10, **kw})


@pytest.fixture(scope="module")
def data():
    return synthetic_structured(64, 32, seed=1)


def params(net):
    return {k: v.detach().clone() for k, v in net.named_parameters()}


def same(a, b):
    return all(torch.equal(a[k], b[k]) for k in a)


def test_config_validation_and_round_trip():
    cfg = small_cfg(loss_variant="rahinge")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).digest()
    with pytest.raises(ValueError):
        TrainConfig.from_dict({**cfg.to_dict(), "gamma": 1})
    for bad in (dict(loss_variant="wgan"), dict(alpha=-1), dict(batch_size=1), dict(tile_count=4)):
        with pytest.raises(ValueError):
            small_cfg(**bad)


def test_ten_iterations(data):
    sink = MemorySink()
    state = train(small_cfg(), data, sink)
    assert state.iteration == 10
    assert [r["iteration"] for r in sink.records] == list(range(1, 11))
    assert sink.checkpoints == [10]
    for r in sink.records:
        assert all(math.isfinite(r[k]) for k in ("d_adv", "g_adv", "v_disc", "v_gen", "d_total", "g_total"))
        assert 0 <= r["acc_real"] <= 1 and 0 <= r["acc_fake"] <= 1


def test_best_g_tracks_minimum(data):
    sink = MemorySink()
    state = train(small_cfg(total_iterations=15), data, sink)
    g_totals = [r["g_total"] for r in sink.records]
    assert state.best_g_loss == pytest.approx(min(g_totals), rel=1e-6)
    assert state.best_g_iteration == 1 + g_totals.index(min(g_totals))


def test_best_g_snapshot_taken_before_step(data):
    cfg = small_cfg(total_iterations=1)
    state = init_state(cfg)
    before = params(state.generator)
    train(cfg, data, state=state)
    assert state.best_g_iteration == 1
    # Weights are pre-step; norm running stats already include the scoring forward pass.
    assert all(torch.equal(before[k], state.best_g_params[k]) for k in before)
    assert not same(before, params(state.generator))


def test_resume_matches_uninterrupted(data, tmp_path):
    full = MemorySink()
    train(small_cfg(), data, full)

    first = MemorySink()
    state = train(small_cfg(total_iterations=5), data, first)
    snapshot(state, tmp_path / "mid.pt")
    resumed = restore(tmp_path / "mid.pt")
    resumed.cfg = small_cfg()
    second = MemorySink()
    train(small_cfg(), data, second, state=resumed)
    assert first.records + second.records == full.records


def test_explicit_stream_is_honoured(data):
    cfg = small_cfg(total_iterations=3)
    a, b = MemorySink(), MemorySink()
    train(cfg, BatchStream(data, 4, seed=5), a)
    train(cfg, BatchStream(data, 4, seed=5), b)
    assert a.records == b.records


def test_snapshot_round_trip(data, tmp_path):
    state = train(small_cfg(total_iterations=3), data)
    snapshot(state, tmp_path / "s.pt")
    back = restore(tmp_path / "s.pt")
    assert back.iteration == 3 and back.cfg == state.cfg and back.pset == state.pset
    assert same(params(back.generator), params(state.generator))
    assert same(params(back.discriminator), params(state.discriminator))
    assert torch.equal(back.z_rng.get_state(), state.z_rng.get_state())
    assert back.best_g_loss == state.best_g_loss


def test_iteration_zero_snapshot_encodes_config(tmp_path):
    cfg = small_cfg(loss_variant="ras", alpha=0.5)
    snapshot(init_state(cfg), tmp_path / "zero.pt")
    back = restore(tmp_path / "zero.pt")
    assert back.iteration == 0 and back.cfg == cfg
    assert back.best_g_params is None


def test_tampered_checkpoints_rejected(tmp_path):
    path = tmp_path / "c.pt"
    snapshot(init_state(small_cfg()), path)
    raw = bytearray(path.read_bytes())

    bad_magic = bytearray(raw)
    bad_magic[0:8] = b"NOTAGAN!"
    (tmp_path / "m.pt").write_bytes(bad_magic)
    with pytest.raises(CheckpointError, match="magic"):
        restore(tmp_path / "m.pt")

    bad_version = bytearray(raw)
    bad_version[8:12] = struct.pack(">I", 99)
    (tmp_path / "v.pt").write_bytes(bad_version)
    with pytest.raises(CheckpointError, match="version"):
        restore(tmp_path / "v.pt")

    bad_digest = bytearray(raw)
    bad_digest[12] ^= 0xFF
    (tmp_path / "d.pt").write_bytes(bad_digest)
    with pytest.raises(CheckpointError):
        restore(tmp_path / "d.pt")

    (tmp_path / "t.pt").write_bytes(raw[:30])
    with pytest.raises(CheckpointError):
        restore(tmp_path / "t.pt")


def test_generator_snapshots(data, tmp_path):
    state = train(small_cfg(total_iterations=4), data)
    save_generator(state, tmp_path / "g.pt")
    save_generator(state, tmp_path / "best.pt", which="best_g")
    snapshot(state, tmp_path / "full.pt")
    g, info = load_generator(tmp_path / "g.pt")
    assert not g.training and info["iteration"] == 4
    assert same(params(g), params(state.generator))
    best, info = load_generator(tmp_path / "best.pt")
    assert info["iteration"] == state.best_g_iteration
    best_full, _ = load_generator(tmp_path / "full.pt", which="best_g")
    assert same(params(best), params(best_full))
    with pytest.raises(CheckpointError):
        restore(tmp_path / "g.pt")
    with pytest.raises(CheckpointError):
        save_generator(init_state(small_cfg()), tmp_path / "none.pt", which="best_g")


def test_run_directory_layout(data, tmp_path):
    cfg = small_cfg(total_iterations=4, checkpoint_every=2, sample_every=2)
    train(cfg, data, RunDirectory(tmp_path / "run"))
    root = tmp_path / "run"
    assert len((root / "metrics.jsonl").read_text().splitlines()) == 4
    names = sorted(p.name for p in (root / "checkpoints").iterdir())
    assert names == ["best_g.pt", "ckpt_0000002.pt", "ckpt_0000004.pt", "last.pt"]
    assert sorted(p.name for p in (root / "samples").iterdir()) == ["iter_0000002.png", "iter_0000004.png"]


def zero_adversarial(c_real, c_fake):
    zero = 0.0 * (c_real.sum() + c_fake.sum())
    return zero, zero


@pytest.mark.parametrize("variant", sorted(losses.ADVERSARIAL_LOSSES))
def test_gradient_routing(variant, data, monkeypatch):
    monkeypatch.setitem(losses.ADVERSARIAL_LOSSES, variant, zero_adversarial)
    real = data.get(range(4))

    state = init_state(small_cfg(loss_variant=variant, alpha=1.0, beta=0.0))
    g0, d0 = params(state.generator), params(state.discriminator)
    discriminator_step(state, real, state.cfg)
    assert same(g0, params(state.generator))
    assert not same(d0, params(state.discriminator))

    state = init_state(small_cfg(loss_variant=variant, alpha=0.0, beta=1.0))
    g0, d0 = params(state.generator), params(state.discriminator)
    generator_step(state, real, state.cfg)
    assert same(d0, params(state.discriminator))
    assert not same(g0, params(state.generator))
    assert all(p.requires_grad for p in state.discriminator.parameters())


def test_zero_weight_drops_auxiliary_terms(data):
    off = MemorySink()
    train(small_cfg(total_iterations=5, deshuffle_enabled=False), data, off)
    zero = MemorySink()
    train(small_cfg(total_iterations=5, alpha=0.0, beta=0.0), data, zero)
    for a, b in zip(off.records, zero.records):
        assert (a["d_adv"], a["g_adv"]) == (b["d_adv"], b["g_adv"])
        assert b["d_total"] == b["d_adv"] and b["g_total"] == b["g_adv"]
        assert a["v_disc"] is None and b["v_disc"] is not None


def test_nonfinite_loss_raises(data, monkeypatch):
    def explode(c_real, c_fake):
        nan = c_real.mean() * float("nan")
        return nan, nan

    monkeypatch.setitem(losses.ADVERSARIAL_LOSSES, "rals", explode)
    state = init_state(small_cfg())
    with pytest.raises(NonFiniteLossError, match="iteration 1"):
        train_step(state, data.get(range(4)))


def test_nonfinite_input_raises(data):
    state = init_state(small_cfg())
    bad = data.get(range(4)).clone()
    bad[0, 0, 0, 0] = float("inf")
    with pytest.raises(NonFiniteLossError):
        train_step(state, bad)


def test_batch_size_mismatch(data):
    with pytest.raises(ValueError):
        train_step(init_state(small_cfg()), data.get(range(3)))


def test_reproducible(data):
    a, b = MemorySink(), MemorySink()
    train(small_cfg(total_iterations=6), data, a)
    train(small_cfg(total_iterations=6), data, b)
    assert a.records == b.records
    c = MemorySink()
    train(small_cfg(total_iterations=6, seed=2), data, c)
    assert c.records != a.records


@pytest.mark.slow
@pytest.mark.parametrize("variant", sorted(losses.ADVERSARIAL_LOSSES))
def test_liveness(variant):
    cfg = TrainConfig(image_size=48, base_width=4, batch_size=8, z_dim=32, total_iterations=500,
                      loss_variant=variant, checkpoint_every=0, sample_every=0)
    sink = MemorySink()
    train(cfg, synthetic_structured(256, 48, seed=1), sink)
    assert len(sink.records) == 500
    assert all(math.isfinite(r["d_total"]) and math.isfinite(r["g_total"]) for r in sink.records)
    assert sum(r["acc_real"] for r in sink.records[-50:]) / 50 > 1 / 30

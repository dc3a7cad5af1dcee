import numpy as np
import pytest

from tt3d.checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from tt3d.errors import IntegrityError, StructuralError
from tt3d.evaluation import eval_cameras
from tt3d.rendering import RenderOpts, render_frame
from tt3d.training import Trainer
from conftest import desk_experiment


@pytest.fixture()
def trained(corpus16, split16, teacher16):
    tr = Trainer(desk_experiment(steps=2, image_size=16, n_ray_samples=8), corpus16,
                 split16, teacher16)
    for _ in range(2):
        tr.train_step()
    return tr


def test_roundtrip_tensors_bitwise(tmp_path, trained):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained.checkpoint_state(), path)
    state = load_checkpoint(path)
    assert state.step == trained.step
    assert state.adam_step == trained.adam.step
    for k, v in trained.params.items():
        assert (state.params[k] == v).all(), k
    for k, v in trained.adam.m.items():
        assert (state.adam_m[k] == v).all(), k


def test_roundtrip_renders_bit_identical(tmp_path, trained, corpus16, split16):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained.checkpoint_state(), path)
    state = load_checkpoint(path)
    cam = eval_cameras(1)[0]
    opts = RenderOpts(image_size=16, n_samples=8)
    emb = corpus16.embedding(split16.seen[0])
    a = render_frame(trained.snapshot(), emb, cam, opts)
    b = render_frame(state.snapshot(), emb, cam, opts)
    assert (a.rgb == b.rgb).all()


def test_save_load_save_byte_identical(tmp_path, trained):
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(trained.checkpoint_state(), p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_corrupting_payload_byte_detected(tmp_path, trained):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained.checkpoint_state(), path)
    raw = bytearray(path.read_bytes())
    raw[-200] ^= 0xFF  # inside the tensor section
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_bad_magic_and_truncation(tmp_path, trained):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained.checkpoint_state(), path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(IntegrityError):
        load_checkpoint(bad)
    short = tmp_path / "short.ckpt"
    short.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(IntegrityError):
        load_checkpoint(short)


def test_config_mismatch_refused(tmp_path, trained):
    path = tmp_path / "model.ckpt"
    save_checkpoint(trained.checkpoint_state(), path)
    other = desk_experiment(steps=2, image_size=16, n_ray_samples=8, seed=999)
    with pytest.raises(StructuralError):
        load_checkpoint(path, expect_config=other)
    # matching config loads fine
    load_checkpoint(path, expect_config=trained.cfg)


def test_seeded_runs_reproduce_checkpoints_bitwise(tmp_path, corpus16, split16, teacher16):
    def run(name):
        tr = Trainer(desk_experiment(steps=3, image_size=16, n_ray_samples=8, seed=21),
                     corpus16, split16, teacher16)
        for _ in range(3):
            tr.train_step()
        path = tmp_path / name
        save_checkpoint(tr.checkpoint_state(), path)
        return path.read_bytes()

    assert run("a.ckpt") == run("b.ckpt")

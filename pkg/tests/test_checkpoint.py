"""Checkpoint binary format: round trip, header layout, error handling."""

import struct

import numpy as np
import pytest

from ucorr.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ucorr.tensor import Tensor


def make_state(seed=0):
    rng = np.random.default_rng(seed)
    params = {
        "enc0.w": Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32)),
        "enc0.b": Tensor(np.zeros(4, np.float32)),
        "head.w": Tensor(rng.standard_normal((1, 4, 1, 1)).astype(np.float32)),
    }
    vel = {k: rng.standard_normal(p.data.shape).astype(np.float32)
           for k, p in params.items()}
    return params, vel


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        params, vel = make_state()
        p = tmp_path / "m.uckp"
        save_checkpoint(p, params, vel, epoch=7, step=1234, lr=2.5e-3)
        ck = load_checkpoint(p)
        assert isinstance(ck, Checkpoint)
        assert set(ck.params) == set(params)
        for name in params:
            np.testing.assert_array_equal(ck.params[name], params[name].data)
            np.testing.assert_array_equal(ck.velocities[name], vel[name])
        assert ck.epoch == 7
        assert ck.step == 1234
        assert ck.lr == np.float32(2.5e-3)

    def test_large_step_uses_u64(self, tmp_path):
        params, vel = make_state(1)
        p = tmp_path / "m.uckp"
        save_checkpoint(p, params, vel, epoch=1, step=2 ** 40, lr=0.1)
        assert load_checkpoint(p).step == 2 ** 40

    def test_empty_velocity_dict(self, tmp_path):
        params, _ = make_state(2)
        p = tmp_path / "m.uckp"
        save_checkpoint(p, params, {}, epoch=0, step=0, lr=0.0)
        assert load_checkpoint(p).velocities == {}


class TestFormat:
    def test_header_bytes(self, tmp_path):
        params, vel = make_state(3)
        p = tmp_path / "m.uckp"
        save_checkpoint(p, params, vel, epoch=2, step=10, lr=0.5)
        raw = p.read_bytes()
        assert raw[:4] == b"UCKP"
        assert struct.unpack("<I", raw[4:8])[0] == 1       # version
        assert struct.unpack("<I", raw[8:12])[0] == 3      # parameter count
        epoch, step, lr = struct.unpack("<IQf", raw[-16:])
        assert (epoch, step, lr) == (2, 10, 0.5)

    def test_names_preserved_in_order_free_lookup(self, tmp_path):
        params, vel = make_state(4)
        p = tmp_path / "m.uckp"
        save_checkpoint(p, params, vel, 0, 0, 0.0)
        ck = load_checkpoint(p)
        assert ck.params["head.w"].shape == (1, 4, 1, 1)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.uckp"
        p.write_bytes(b"WRNG" + b"\0" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_bad_version_rejected(self, tmp_path):
        p = tmp_path / "v.uckp"
        p.write_bytes(b"UCKP" + struct.pack("<I", 99) + b"\0" * 16)
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(p)

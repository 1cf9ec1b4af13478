"""Checkpoint container: bit-exact round trips and corruption detection."""

import struct

import numpy as np
import pytest

from dagtrack import checkpoint, model
from dagtrack.errors import CheckpointError, ConfigError


def _net(dtype="float32", seed=1, **overrides):
    cfg = model.tiny_config(dtype=dtype, **overrides)
    net = model.build_network(cfg, seed=seed)
    net.input_mean = np.array([100.0, 110.0, 120.0], np.float32)
    return net


def test_round_trip_is_bit_exact_float32(tmp_path):
    net = _net()
    path = tmp_path / "net.ckpt"
    checkpoint.save_checkpoint(net, path, meta={"iterations": 42})
    again, meta = checkpoint.load_checkpoint(path)
    assert meta == {"iterations": 42}
    assert again.config == net.config
    assert np.array_equal(again.input_mean, net.input_mean)
    orig = net.params()
    for name, arr in again.params().items():
        assert arr.dtype == orig[name].dtype
        assert np.array_equal(arr, orig[name]), name


def test_round_trip_is_bit_exact_float64(tmp_path):
    net = _net(dtype="float64", seed=2)
    path = tmp_path / "net64.ckpt"
    checkpoint.save_checkpoint(net, path)
    again, _ = checkpoint.load_checkpoint(path)
    for name, arr in again.params().items():
        assert arr.dtype == np.float64
        assert np.array_equal(arr, net.params()[name]), name


def test_round_trip_multi_domain(tmp_path):
    net = _net(num_domains=3, seed=3)
    path = tmp_path / "k3.ckpt"
    checkpoint.save_checkpoint(net, path)
    again, _ = checkpoint.load_checkpoint(path)
    assert len(again.branches) == 3
    assert np.array_equal(again.branches[2].weights, net.branches[2].weights)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(CheckpointError, match="bad magic"):
        checkpoint.load_checkpoint(p)


def test_future_version_rejected(tmp_path):
    net = _net()
    p = tmp_path / "v.ckpt"
    checkpoint.save_checkpoint(net, p)
    raw = bytearray(p.read_bytes())
    raw[4:8] = struct.pack("<I", checkpoint.VERSION + 1)
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load_checkpoint(p)


def test_truncation_detected(tmp_path):
    net = _net()
    p = tmp_path / "t.ckpt"
    checkpoint.save_checkpoint(net, p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 10])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.load_checkpoint(p)


def test_trailing_garbage_detected(tmp_path):
    net = _net()
    p = tmp_path / "g.ckpt"
    checkpoint.save_checkpoint(net, p)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.load_checkpoint(p)


def test_shape_mismatch_detected(tmp_path):
    # Save a net, then swap in a config whose fc dims disagree with the data.
    net = _net()
    p = tmp_path / "s.ckpt"
    checkpoint.save_checkpoint(net, p)
    raw = p.read_bytes()
    other = model.tiny_config(fc_dims=(20, 16))
    import json

    old_cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode()
    new_cfg = json.dumps(other.to_dict(), sort_keys=True).encode()
    assert raw[12 : 12 + len(old_cfg)] == old_cfg
    patched = raw[:8] + struct.pack("<I", len(new_cfg)) + new_cfg + raw[12 + len(old_cfg):]
    p.write_bytes(patched)
    with pytest.raises(CheckpointError, match="shape"):
        checkpoint.load_checkpoint(p)


def test_config_hash_is_stable_and_order_insensitive():
    cfg = model.tiny_config()
    h1 = checkpoint.config_hash(cfg)
    h2 = checkpoint.config_hash(dict(reversed(list(cfg.to_dict().items()))))
    assert h1 == h2
    assert len(h1) == 16
    assert h1 != checkpoint.config_hash(model.tiny_config(num_domains=2))


def test_load_json_config_rejects_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        checkpoint.load_json_config(p)


def test_take_keys_fails_loudly():
    with pytest.raises(ConfigError, match="unknown config keys"):
        checkpoint.take_keys({"good": 1, "bad": 2}, ("good",), "test")
    assert checkpoint.take_keys({"good": 1}, ("good",), "test") == {"good": 1}

"""Self-describing checkpoint container and JSON config handling.

Layout (all integers little-endian):
  magic "DTCK" | u32 version | u32 len + config JSON | u32 len + meta JSON
  | u32 array count | per array: u16 name len, name, u8 dtype code,
  u8 ndim, u32 dims..., raw array bytes.
Arrays are 32-bit floats for float32 networks (dtype code 0); float64
networks store 64-bit arrays under code 1 so round trips stay bit-exact.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError, ConfigError
from .model import FusionNet, NetConfig, build_network

MAGIC = b"DTCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_CODES = {"float32": 0, "float64": 1}


def config_hash(config):
    """Stable hash of a config dict or NetConfig over canonical JSON."""
    d = config.to_dict() if isinstance(config, NetConfig) else config
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(net, path, meta=None):
    code = _CODES[net.config.dtype]
    dt = _DTYPES[code]
    items = list(net.param_items()) + [("input_mean", net.input_mean)]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode()
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        mt = json.dumps(meta or {}, sort_keys=True).encode()
        f.write(struct.pack("<I", len(mt)))
        f.write(mt)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            a = np.ascontiguousarray(arr, np.float32 if name == "input_mean" else None)
            acode = 0 if a.dtype == np.float32 else code
            f.write(struct.pack("<BB", acode, a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(np.ascontiguousarray(a, _DTYPES[acode]).tobytes())


def _read(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path):
    """Rebuild a network from a checkpoint; every parameter must match."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version}, this build reads {VERSION}"
            )
        (clen,) = struct.unpack("<I", _read(f, 4, "config length"))
        try:
            cfg_dict = json.loads(_read(f, clen, "config"))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: corrupt config JSON: {e}")
        config = NetConfig.from_dict(cfg_dict)
        (mlen,) = struct.unpack("<I", _read(f, 4, "meta length"))
        meta = json.loads(_read(f, mlen, "meta"))
        (count,) = struct.unpack("<I", _read(f, 4, "array count"))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, nlen, "name").decode()
            code, ndim = struct.unpack("<BB", _read(f, 2, "array header"))
            if code not in _DTYPES:
                raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, f"shape of {name}"))
            nbytes = int(np.prod(shape)) * int(_DTYPES[code][-1])
            raw = _read(f, nbytes, f"data of {name}")
            arrays[name] = np.frombuffer(raw, _DTYPES[code]).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last array")

    net = build_network(config, seed=0)
    params = net.params()
    mean = arrays.pop("input_mean", None)
    if mean is None:
        raise CheckpointError(f"{path}: missing input_mean")
    net.input_mean = mean.astype(np.float32)
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names disagree with config "
            f"(missing {sorted(missing)}, extra {sorted(extra)})"
        )
    for name, arr in arrays.items():
        p = params[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(
                f"{path}: {name} has shape {arr.shape}, config implies {p.shape}"
            )
        p[...] = arr.astype(p.dtype)
    return net, meta


# ---- JSON config files -------------------------------------------------


def load_json_config(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")


def take_keys(d, allowed, context):
    """Fail-loud key filter for config dicts."""
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown config keys {sorted(unknown)}")
    return d

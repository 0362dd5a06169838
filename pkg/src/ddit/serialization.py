"""Binary weight files.

Layout (all integers little-endian):

    bytes 0..3   magic "DDIT"
    u32          format version (currently 1)
    u32 x 12     config block: hidden, layers, heads, expansion, patch,
                 latent_h, latent_w, channels, lora_rank, lora_alpha,
                 cond_vocab, n_multipliers
    u32 x n      the multipliers, ascending
    sections     one per canonical parameter, in canonical order:
                     u16    name length
                     bytes  UTF-8 name
                     u64    element count
                     f32 x  row-major (C-order) values

Because section order, names, and dtypes are fixed by the config, a
save -> load -> save round trip is byte-identical.
"""

import struct

import numpy as np

from .errors import WeightFormatError
from .model import (
    DynamicPatchModel,
    ModelConfig,
    canonical_parameter_names,
    parameter_shapes,
)

MAGIC = b"DDIT"
VERSION = 1

_CONFIG_FIELDS = (
    "hidden", "layers", "heads", "expansion", "patch",
    "latent_h", "latent_w", "channels", "lora_rank", "lora_alpha", "cond_vocab",
)


def config_to_bytes(config):
    ints = [getattr(config, f) for f in _CONFIG_FIELDS]
    ints.append(len(config.multipliers))
    ints.extend(config.multipliers)
    return struct.pack(f"<{len(ints)}I", *ints)


def save_weights(model, path):
    """Write a model's parameters to ``path`` in the DDIT container format."""
    arrays = model.named_arrays()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(config_to_bytes(model.config))
        for name in canonical_parameter_names(model.config):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", arr.size))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise WeightFormatError(f"truncated weight file while reading {what}")
    return data


def load_weights(path):
    """Read a DDIT weight file; returns a freshly built model."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise WeightFormatError(f"{path}: bad magic, not a DDIT weight file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise WeightFormatError(f"{path}: unsupported format version {version}")
        head = struct.unpack("<12I", _read_exact(fh, 48, "config block"))
        n_mult = head[11]
        mults = struct.unpack(f"<{n_mult}I", _read_exact(fh, 4 * n_mult, "multipliers"))
        try:
            config = ModelConfig(
                **dict(zip(_CONFIG_FIELDS, head[:11])), multipliers=tuple(mults)
            )
        except Exception as exc:
            raise WeightFormatError(f"{path}: invalid config block ({exc})") from exc

        shapes = parameter_shapes(config)
        params = {}
        for want in canonical_parameter_names(config):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "section name length"))
            name = _read_exact(fh, name_len, "section name").decode("utf-8")
            if name != want:
                raise WeightFormatError(
                    f"{path}: section order mismatch, expected {want!r} got {name!r}"
                )
            (count,) = struct.unpack("<Q", _read_exact(fh, 8, "section size"))
            shape = shapes[name]
            if count != int(np.prod(shape)):
                raise WeightFormatError(
                    f"{path}: section {name} has {count} values, expected shape {shape}"
                )
            raw = _read_exact(fh, 4 * count, f"section {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise WeightFormatError(f"{path}: trailing bytes after final section")

    return DynamicPatchModel(config, params=params)

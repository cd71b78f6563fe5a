"""Single-file checkpoints: a JSON header followed by raw float32 tensors.

Layout::

    b"ECGSCKPT"                8-byte magic
    uint64 little-endian       header length in bytes
    header                     UTF-8 JSON (sorted keys)
    tensor data                float32 little-endian, in header order

The header lists every tensor's name, shape and byte offset and echoes the
model config, so a checkpoint rebuilds its model with no other input.
"""
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .encoders import BaselineModel, FrozenFileEncoder, ModelConfig, SiglipModel

MAGIC = b"ECGSCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, meta=None) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": str(t.dtype).replace("torch.", ""),
                        "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "meta": meta or {},
        "tensors": tensors,
    }
    if isinstance(getattr(model, "text", None), FrozenFileEncoder):
        header["text_keys"] = model.text.texts
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path):
    """Return ``(header, {name: float32 array})``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    body = memoryview(data)[16 + n:]
    arrays = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        start = spec["offset"]
        if start + 4 * count > len(body):
            raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=start)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
    return header, arrays


def load_model(path):
    """Rebuild the model stored in ``path``; returns ``(model, header)`` in eval mode."""
    header, arrays = read_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    if header["kind"] == "baseline":
        model = BaselineModel(cfg)
    elif header["kind"] == "siglip":
        text = None
        if cfg.text.kind == "frozen":
            keys = header["text_keys"]
            vec = arrays["text.vectors"]
            text = FrozenFileEncoder(keys, vec, cfg.embed_dim)
        model = SiglipModel(cfg, text_encoder=text)
    else:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    dtypes = {s["name"]: s["dtype"] for s in header["tensors"]}
    state = {k: torch.from_numpy(v).to(getattr(torch, dtypes[k])) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, header

"""Export/import of model weights in the shared SPTWNN binary format.

Layout: magic "SPTWNN", u32 version, u32 entry count; per entry a u16 name
length, the UTF-8 name, u8 layer kind, u8 ndim, u32 dims, then float32
little-endian tensor data. Conv kernels are stored (K, C_in, C_out) and
linear maps (in, out), so torch tensors are transposed on the way through.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from .model import RadarClassifier

MAGIC = b"SPTWNN"
VERSION = 1
KIND_CONV = 0
KIND_DENSE = 1
KIND_NONLOCAL = 2


def _entries(model: RadarClassifier):
    def conv(name, module):
        yield f"{name}.w", KIND_CONV, module.weight.detach().permute(2, 1, 0).numpy()
        yield f"{name}.b", KIND_CONV, module.bias.detach().numpy()

    def nlb(name, module):
        for part in ("theta", "phi", "g", "out"):
            lin = getattr(module, part)
            yield f"{name}.{part}.w", KIND_NONLOCAL, lin.weight.detach().T.numpy()
            yield f"{name}.{part}.b", KIND_NONLOCAL, lin.bias.detach().numpy()

    def dense(name, module):
        yield f"{name}.w", KIND_DENSE, module.weight.detach().T.numpy()
        yield f"{name}.b", KIND_DENSE, module.bias.detach().numpy()

    yield from conv("conv1a", model.conv1a)
    yield from conv("conv1b", model.conv1b)
    yield from nlb("nlb1", model.nlb1)
    yield from conv("conv2a", model.conv2a)
    yield from conv("conv2b", model.conv2b)
    yield from nlb("nlb2", model.nlb2)
    yield from conv("conv3", model.conv3)
    yield from conv("conv4", model.conv4)
    yield from dense("fc1", model.fc1)
    yield from dense("fc2", model.fc2)


def export_weights(model: RadarClassifier, path) -> None:
    entries = list(_entries(model))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<6sII", MAGIC, VERSION, len(entries)))
        for name, kind, array in entries:
            data = np.ascontiguousarray(array, dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack(f"<H{len(encoded)}sBB", len(encoded), encoded,
                                 kind, data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def import_weights(path) -> RadarClassifier:
    """Rebuild a model from an SPTWNN file (for evaluation or warm start)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, count = struct.unpack_from("<6sII", blob, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not an SPTWNN v{VERSION} file")
    offset = struct.calcsize("<6sII")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode()
        offset += name_len
        _kind, ndim = struct.unpack_from("<BB", blob, offset)
        offset += 2
        dims = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = 4 * int(np.prod(dims))
        tensors[name] = np.frombuffer(blob[offset : offset + size], dtype="<f4").reshape(dims)
        offset += size

    widths = (tensors["conv1a.w"].shape[2], tensors["conv2a.w"].shape[2],
              tensors["conv3.w"].shape[2], tensors["conv4.w"].shape[2])
    hidden = tensors["fc1.w"].shape[1]
    inner = (tensors["nlb1.theta.w"].shape[1], tensors["nlb2.theta.w"].shape[1])
    model = RadarClassifier(widths=widths, hidden=hidden, nlb_inner=inner)
    with torch.no_grad():
        for name, module in (("conv1a", model.conv1a), ("conv1b", model.conv1b),
                             ("conv2a", model.conv2a), ("conv2b", model.conv2b),
                             ("conv3", model.conv3), ("conv4", model.conv4)):
            module.weight.copy_(torch.from_numpy(tensors[f"{name}.w"].copy()).permute(2, 1, 0))
            module.bias.copy_(torch.from_numpy(tensors[f"{name}.b"].copy()))
        for name, module in (("nlb1", model.nlb1), ("nlb2", model.nlb2)):
            for part in ("theta", "phi", "g", "out"):
                lin = getattr(module, part)
                lin.weight.copy_(torch.from_numpy(tensors[f"{name}.{part}.w"].copy()).T)
                lin.bias.copy_(torch.from_numpy(tensors[f"{name}.{part}.b"].copy()))
        for name, module in (("fc1", model.fc1), ("fc2", model.fc2)):
            module.weight.copy_(torch.from_numpy(tensors[f"{name}.w"].copy()).T)
            module.bias.copy_(torch.from_numpy(tensors[f"{name}.b"].copy()))
    model.eval()
    return model

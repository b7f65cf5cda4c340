"""Single-file checkpoint archive.

Layout (little-endian)::

    b"DSCK"  version:u8  meta_len:u32  meta (UTF-8 JSON)
    count:u32
    count x [ name_len:u16  name  ndim:u8  dims:u32*ndim  float32 data ]

Arrays are module parameters and buffers (``model.<name>``) and, when saved
for resumption, optimizer moments (``optim.<opt>.<index>.<key>``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"DSCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_archive(path, arrays: dict, meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_archive(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    version, meta_len = struct.unpack_from("<BI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 9
    meta = json.loads(raw[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + n].decode()
        pos += n
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return arrays, meta


def module_arrays(module: torch.nn.Module, prefix: str = "model.") -> dict:
    return {prefix + k: v.detach().cpu().float().numpy() for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, arrays: dict, prefix: str = "model.") -> None:
    state = module.state_dict()
    missing = [k for k in state if prefix + k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks {len(missing)} tensor(s), e.g. {missing[:3]}")
    for k, v in state.items():
        v.copy_(torch.as_tensor(arrays[prefix + k]).to(v.dtype).reshape(v.shape))


def optimizer_arrays(opt: torch.optim.Optimizer, name: str) -> tuple[dict, dict]:
    """Moment tensors as arrays plus scalar state (step counts) for the metadata."""
    arrays, scalars = {}, {}
    for idx, p in enumerate(q for g in opt.param_groups for q in g["params"]):
        st = opt.state.get(p, {})
        for key, val in st.items():
            if torch.is_tensor(val) and val.dim() > 0:
                arrays[f"optim.{name}.{idx}.{key}"] = val.detach().cpu().float().numpy()
            else:
                scalars[f"{idx}.{key}"] = float(val)
    return arrays, scalars


def load_optimizer(opt: torch.optim.Optimizer, name: str, arrays: dict, scalars: dict) -> None:
    params = [q for g in opt.param_groups for q in g["params"]]
    for idx, p in enumerate(params):
        state = {}
        for key, val in scalars.items():
            i, k = key.split(".", 1)
            if int(i) == idx:
                state[k] = torch.tensor(val, dtype=torch.float32)
        prefix = f"optim.{name}.{idx}."
        for key, val in arrays.items():
            if key.startswith(prefix):
                state[key[len(prefix) :]] = torch.as_tensor(val).to(p.dtype).clone()
        if state:
            opt.state[p] = state


def save(path, modules: dict, meta: dict, optimizers: dict | None = None) -> None:
    arrays = {}
    meta = dict(meta)
    for name, module in modules.items():
        arrays.update(module_arrays(module, f"{name}."))
    if optimizers:
        meta["optim_scalars"] = {}
        for name, opt in optimizers.items():
            a, s = optimizer_arrays(opt, name)
            arrays.update(a)
            meta["optim_scalars"][name] = s
    write_archive(path, arrays, meta)


def restore(path, modules: dict, optimizers: dict | None = None) -> dict:
    arrays, meta = read_archive(path)
    for name, module in modules.items():
        load_module(module, arrays, f"{name}.")
    for name, opt in (optimizers or {}).items():
        load_optimizer(opt, name, arrays, meta.get("optim_scalars", {}).get(name, {}))
    return meta

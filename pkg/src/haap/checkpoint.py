"""Checkpoint container.

Layout::

    HAAPCKPT 1
    config_hash <sha256 hex of the canonical config json>
    step <int>
    config <canonical json>
    rng <json: numpy bit-generator state and torch rng state as hex>
    tensors <count>
    <name>\t<dim0,dim1,...>\t<byte offset>\t<byte length>   (count lines)
    ---
    <payload: little-endian float32 tensors back to back>
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MAGIC = "HAAPCKPT 1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    step: int
    config: dict
    rng: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save(path, ckpt: Checkpoint):
    lines = [MAGIC, f"config_hash {ckpt.config_hash}", f"step {ckpt.step}",
             f"config {canonical_json(ckpt.config)}", f"rng {canonical_json(ckpt.rng)}",
             f"tensors {len(ckpt.tensors)}"]
    payload = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"{name}\t{shape}\t{offset}\t{arr.nbytes}")
        payload.append(arr.tobytes())
        offset += arr.nbytes
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        for chunk in payload:
            fh.write(chunk)


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    end = data.index(b"\n---\n") + 5
    lines = data[:end].decode().split("\n")[:-2]
    if lines[0] != MAGIC:
        raise ValueError(f"{path} is not a {MAGIC} file")
    fields = {}
    for line in lines[1:6]:
        key, value = line.split(" ", 1)
        fields[key] = value
    config = json.loads(fields["config"])
    if config_hash(config) != fields["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    tensors = {}
    body = data[end:]
    for line in lines[6:6 + int(fields["tensors"])]:
        name, shape, offset, nbytes = line.split("\t")
        dims = tuple(int(d) for d in shape.split(",")) if shape else ()
        offset, nbytes = int(offset), int(nbytes)
        tensors[name] = np.frombuffer(body[offset:offset + nbytes], dtype="<f4").reshape(dims).copy()
    return Checkpoint(tensors, int(fields["step"]), config, json.loads(fields["rng"]))


def rng_state(np_rng: np.random.Generator | None = None) -> dict:
    state = {"torch": torch.get_rng_state().numpy().tobytes().hex()}
    if np_rng is not None:
        state["numpy"] = np_rng.bit_generator.state
    return state


def restore_rng(state: dict, np_rng: np.random.Generator | None = None):
    torch.set_rng_state(torch.from_numpy(np.frombuffer(bytes.fromhex(state["torch"]), dtype=np.uint8).copy()))
    if np_rng is not None and "numpy" in state:
        np_rng.bit_generator.state = state["numpy"]


def from_module(module: torch.nn.Module, step: int, config: dict, np_rng=None) -> Checkpoint:
    tensors = {k: v.detach().cpu().numpy().astype("<f4") for k, v in module.state_dict().items()}
    return Checkpoint(tensors, step, config, rng_state(np_rng))


def into_module(module: torch.nn.Module, ckpt: Checkpoint):
    state = {k: torch.from_numpy(v) for k, v in ckpt.tensors.items()}
    module.load_state_dict(state)

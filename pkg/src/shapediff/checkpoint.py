"""Binary checkpoint container: magic SDCK, versioned, bitwise round-trippable.

Layout: magic (4 bytes) | u16 format version | u32 header length | header JSON
(sorted keys) | concatenated little-endian tensor payloads. The header carries
the config snapshot, training step, RNG state, and tensor directory.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

SDCK_MAGIC = b"SDCK"
SDCK_VERSION = 1

_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "u8": "|u1"}
_DTYPE_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str                       # "shape" or "diffusion"
    config_text: str
    step: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: bytes | None = None
    extra: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        directory = []
        payloads = []
        offset = 0
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name])
            dtype_name = _DTYPE_NAMES.get(arr.dtype)
            if dtype_name is None:
                raise CheckpointError(f"tensor {name}: unsupported dtype {arr.dtype}")
            blob = arr.astype(_DTYPES[dtype_name]).tobytes()
            directory.append(
                {"name": name, "dtype": dtype_name, "shape": list(arr.shape), "offset": offset}
            )
            payloads.append(blob)
            offset += len(blob)
        header = {
            "kind": self.kind,
            "config": self.config_text,
            "step": self.step,
            "rng_state": self.rng_state.hex() if self.rng_state is not None else None,
            "extra": self.extra,
            "tensors": directory,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return b"".join(
            [SDCK_MAGIC, struct.pack("<HI", SDCK_VERSION, len(header_bytes)), header_bytes]
            + payloads
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != SDCK_MAGIC:
            raise CheckpointError(f"not a checkpoint (magic {data[:4]!r})")
        version, header_len = struct.unpack("<HI", data[4:10])
        if version != SDCK_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(data[10:10 + header_len].decode())
        base = 10 + header_len
        tensors = {}
        for entry in header["tensors"]:
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            start = base + entry["offset"]
            arr = np.frombuffer(data[start:start + count * dtype.itemsize], dtype=dtype)
            tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        rng_hex = header.get("rng_state")
        return cls(
            kind=header["kind"],
            config_text=header["config"],
            step=header["step"],
            tensors=tensors,
            rng_state=bytes.fromhex(rng_hex) if rng_hex else None,
            extra=header.get("extra", {}),
        )

    def save(self, path) -> None:
        with open(path, "wb") as handle:
            handle.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as handle:
            return cls.from_bytes(handle.read())

    # -- torch interop ------------------------------------------------------

    def put_state_dict(self, prefix: str, state: dict) -> None:
        for name, tensor in state.items():
            self.tensors[f"{prefix}.{name}"] = tensor.detach().cpu().numpy()

    def state_dict(self, prefix: str, dtype=None) -> dict:
        out = {}
        plen = len(prefix) + 1
        for name, arr in self.tensors.items():
            if name.startswith(prefix + "."):
                t = torch.from_numpy(np.array(arr))
                if dtype is not None and t.is_floating_point():
                    t = t.to(dtype)
                out[name[plen:]] = t
        if not out:
            raise CheckpointError(f"checkpoint holds no tensors under prefix {prefix!r}")
        return out

    def put_schedule(self, sched) -> None:
        self.tensors["schedule.beta_x"] = sched.x.beta
        self.tensors["schedule.alpha_bar_x"] = sched.x.alpha_bar
        self.tensors["schedule.beta_v"] = sched.v.beta
        self.tensors["schedule.alpha_bar_v"] = sched.v.alpha_bar

    def schedule(self):
        from .diffusion import Schedule, ScheduleTable

        x = ScheduleTable("sigmoid_x", self.tensors["schedule.beta_x"])
        x.alpha_bar = self.tensors["schedule.alpha_bar_x"]
        v = ScheduleTable("cosine_v", self.tensors["schedule.beta_v"])
        v.alpha_bar = self.tensors["schedule.alpha_bar_v"]
        return Schedule(x=x, v=v)

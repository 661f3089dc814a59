"""Checkpoint file: ``RSCK``, u32 header length, UTF-8 JSON header, RSF1 tensors.

Tensors follow in layer order (W1, b1, W2, b2, ..., skip).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .data import DatasetSpec
from .denoiser import DenoiserParams, TimeEmbedding
from .e2e_stub import StubSpec
from .numerics import decode_tensor, encode_tensor
from .schedule import build_schedule

MAGIC = b"RSCK"


def config_to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    d["widths"] = list(cfg.widths)
    return d


def config_from_dict(d: dict):
    from .trainer import TrainConfig

    d = dict(d)
    d["stub"] = StubSpec(**d["stub"])
    d["dataset"] = DatasetSpec(**d["dataset"])
    d["widths"] = tuple(d["widths"])
    return TrainConfig(**d)


def save_checkpoint(path, params: DenoiserParams, cfg, iteration: int, extra: dict | None = None) -> None:
    header = {
        "widths": list(params.widths),
        "emb_dim": params.emb.dim,
        "base_period": params.emb.base_period,
        "x_size": params.x_size,
        "cond_size": params.cond_size,
        "head": params.head,
        "sigma_data": params.sigma_data,
        "T": cfg.T,
        "seed": cfg.seed,
        "iteration": iteration,
        "config": config_to_dict(cfg),
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join(encode_tensor(a) for a in params.arrays())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_checkpoint(path) -> tuple[DenoiserParams, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", buf, 4)
    header = json.loads(buf[8:8 + n].decode())
    off = 8 + n
    arrays = []
    while off < len(buf):
        a, off = decode_tensor(buf, off)
        arrays.append(a)
    widths = tuple(header["widths"])
    n_layers = len(widths) + 1
    if len(arrays) != 2 * n_layers + 1:
        raise ValueError(f"{path}: expected {2 * n_layers + 1} tensors, found {len(arrays)}")
    levels = None
    if header["head"] == "blend":
        levels = np.sqrt(build_schedule(header["T"]).one_minus_alpha_bar)
    layers = [(arrays[2 * k], arrays[2 * k + 1]) for k in range(n_layers)]
    params = DenoiserParams(layers, header["x_size"], header["cond_size"], widths,
                            TimeEmbedding(header["emb_dim"], header["base_period"]),
                            arrays[-1], header["head"], header["sigma_data"], levels)
    return params, header

"""Binary checkpoint format shared by every training stage.

Layout: magic "VRECCKPT1", a 4-byte little-endian header length, a canonical
UTF-8 JSON header (model config, verifier-bank structure, and one
{name, shape, offset} entry per parameter in sorted name order), then the
parameters' float64 values concatenated little-endian. Canonical JSON plus
sorted order makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .backbone import Backbone, ModelConfig
from .numerics import Tensor
from .verifiers import VerifierBank, make_bank

__all__ = ["MAGIC", "load_checkpoint", "load_model", "save_checkpoint", "save_model"]

MAGIC = b"VRECCKPT1"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path: str | Path, params: dict[str, Tensor | np.ndarray],
                    config: dict | None = None, verifiers: dict | None = None) -> None:
    names = sorted(params)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        data = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        blob = np.ascontiguousarray(data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = _canonical({"config": config, "verifiers": verifiers, "params": entries})
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict | None, dict | None]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    header_len = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])[0]
    body_start = len(MAGIC) + 4
    header = json.loads(raw[body_start:body_start + header_len].decode("utf-8"))
    blob_start = body_start + header_len
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = blob_start + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return params, header.get("config"), header.get("verifiers")


def _bank_meta(bank: VerifierBank | None) -> dict | None:
    if bank is None:
        return None
    return {
        "n": bank.n,
        "epsilon": bank.epsilon,
        "uniform_router": bank.uniform_router,
        "dimensions": [
            {"dimension": v.dimension, "d_i": v.d_i,
             "hidden_shapes": [list(w.shape) for w, _ in v.hidden]}
            for v in bank.verifiers
        ],
    }


def save_model(path: str | Path, backbone: Backbone, bank: VerifierBank | None = None) -> None:
    params: dict[str, Tensor] = {f"backbone.{k}": v for k, v in backbone.params().items()}
    if bank is not None:
        params.update({f"bank.{k}": v for k, v in bank.params().items()})
    cfg = backbone.cfg
    config = {"d_m": cfg.d_m, "layers": cfg.layers, "heads": cfg.heads,
              "n_items": cfg.n_items, "max_positions": cfg.max_positions,
              "m": cfg.m, "seed": cfg.seed}
    save_checkpoint(path, params, config=config, verifiers=_bank_meta(bank))


def load_model(path: str | Path) -> tuple[Backbone, VerifierBank | None]:
    params, config, verifiers = load_checkpoint(path)
    if config is None:
        raise ValueError(f"{path}: checkpoint has no model config")
    backbone = Backbone(ModelConfig(**config))
    for name, tensor in backbone.params().items():
        tensor.data = params[f"backbone.{name}"].copy()

    bank = None
    if verifiers is not None:
        dims = [(d["dimension"], d["d_i"]) for d in verifiers["dimensions"]]
        shapes = verifiers["dimensions"][0]["hidden_shapes"]
        depth = len(shapes) + 1
        width = shapes[0][1] if shapes else 0
        bank = make_bank(dims, d_m=backbone.cfg.d_m, hidden_width=width, hidden_depth=depth)
        bank.epsilon = verifiers.get("epsilon", bank.epsilon)
        bank.uniform_router = verifiers.get("uniform_router", False)
        for name, tensor in bank.params().items():
            tensor.data = params[f"bank.{name}"].copy()
    return backbone, bank

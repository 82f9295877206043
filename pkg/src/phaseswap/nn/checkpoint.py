"""Versioned ``.npz`` checkpoints: named parameter blobs plus optimizer state."""

from __future__ import annotations

import json
import os

import numpy as np

FORMAT = "phaseswap-checkpoint"
VERSION = 1


def save_checkpoint(path, model_state: dict, optimizer_state: dict | None = None,
                    meta: dict | None = None) -> None:
    arrays = {f"model/{name}": np.asarray(v, dtype=np.float64) for name, v in model_state.items()}
    if optimizer_state is not None:
        arrays["optim/t"] = np.asarray(optimizer_state["t"], dtype=np.int64)
        for i, (m, v) in enumerate(zip(optimizer_state["m"], optimizer_state["v"])):
            arrays[f"optim/m/{i}"] = m
            arrays[f"optim/v/{i}"] = v
    header = {"format": FORMAT, "version": VERSION, "meta": meta or {},
              "model_keys": list(model_state)}
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(model_state, optimizer_state or None, meta)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path} is not a phaseswap checkpoint")
        if header.get("version") != VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        model_state = {name: data[f"model/{name}"].copy() for name in header["model_keys"]}
        optimizer_state = None
        if "optim/t" in data:
            n = sum(1 for key in data.files if key.startswith("optim/m/"))
            optimizer_state = {
                "t": int(data["optim/t"]),
                "m": [data[f"optim/m/{i}"].copy() for i in range(n)],
                "v": [data[f"optim/v/{i}"].copy() for i in range(n)],
            }
    return model_state, optimizer_state, header["meta"]

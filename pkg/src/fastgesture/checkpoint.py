"""Checkpoint files: a numpy ``.npz`` archive of named arrays plus JSON metadata.

Layout (format ``fastgesture-ckpt/1``):

* every array is stored under its slash-separated name, e.g. ``G/l0.qkv_w``,
  ``opt_g/m/l0.qkv_w``; each ``.npy`` member carries its own dtype and shape
  header;
* ``__format__`` holds the format tag;
* ``__meta__`` holds a JSON document (configs, step counters, the noise
  schedule in key=value text, the data normalizer).

``allow_pickle`` is never needed to read a checkpoint.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "fastgesture-ckpt/1"


def save(path, arrays: Mapping[str, np.ndarray], meta: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    for reserved in ("__format__", "__meta__"):
        if reserved in payload:
            raise ValueError(f"array name {reserved!r} is reserved")
    payload["__format__"] = np.array(FORMAT)
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if "__format__" not in archive.files or str(archive["__format__"]) != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} checkpoint")
        meta = json.loads(str(archive["__meta__"]))
        arrays = {k: archive[k] for k in archive.files if k not in ("__format__", "__meta__")}
    return arrays, meta


def group(arrays: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Sub-dictionary of entries under ``prefix/`` with the prefix stripped."""
    p = prefix + "/"
    return {k[len(p) :]: v for k, v in arrays.items() if k.startswith(p)}


def prefixed(prefix: str, arrays: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": np.asarray(v) for k, v in arrays.items()}

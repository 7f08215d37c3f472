"""Checkpoint archive format (version 1).

A checkpoint is a zip file (stored, no compression) holding:

* ``metadata.json``: UTF-8 JSON with sorted keys. Always has ``format_version``,
  ``kind`` (``teacher`` or ``joint``), ``step``, ``dataset_seed`` and ``config``.
* ``tensors/<name>.npy``: one ``.npy`` file per named tensor, written in sorted
  name order.

Every zip entry carries the fixed timestamp 1980-01-01 00:00:00, so identical
contents give identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import DataError, ReIDIOError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        meta = {"format_version": FORMAT_VERSION, **self.metadata}
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr(_info("metadata.json"), json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
            for name in sorted(self.tensors):
                arr = io.BytesIO()
                np.lib.format.write_array(arr, np.ascontiguousarray(self.tensors[name]), allow_pickle=False)
                zf.writestr(_info(f"tensors/{name}.npy"), arr.getvalue())
        return buf.getvalue()

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise ReIDIOError(f"cannot write checkpoint {path}: {exc}") from exc
        return path

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def state_dict(self, prefix: str) -> dict[str, torch.Tensor]:
        """Tensors under ``prefix.`` with the prefix stripped, as torch tensors."""
        p = prefix + "."
        return {k[len(p):]: torch.from_numpy(v.copy()) for k, v in self.tensors.items() if k.startswith(p)}


def _info(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def from_bytes(data: bytes) -> Checkpoint:
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        meta = json.loads(zf.read("metadata.json").decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        tensors = {}
        for name in zf.namelist():
            if name.startswith("tensors/") and name.endswith(".npy"):
                tensors[name[len("tensors/"):-len(".npy")]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(name)), allow_pickle=False)
    meta.pop("format_version")
    return Checkpoint(tensors=tensors, metadata=meta)


def load(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ReIDIOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return from_bytes(data)
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise DataError(f"{path} is not a valid checkpoint: {exc}") from exc


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def module_tensors(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}

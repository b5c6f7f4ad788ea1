"""On-disk persistence for retained MCMC draws.

A draw store is a directory holding ``meta.json`` and one ``<block>.npy`` per
parameter block.  Each array stacks the retained draws along axis 0, so
``theta.npy`` has shape ``(T, H)`` and ``C.npy`` shape ``(T, I, J)``.
``meta.json`` records the format name and version, the model family
(``psb`` or ``logistic``), the configurations, the seed and content hashes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "tensorstick-drawstore"
FORMAT_VERSION = 1


def stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_jsonable).encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"not JSON serializable: {type(x)}")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


class EmptyStoreError(ValueError):
    """Prediction was requested from a store with zero retained draws."""


@dataclass
class DrawStore:
    """Retained draws keyed by block name, plus free-form metadata."""

    blocks: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.meta.get("n_draws", 0))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def require_draws(self) -> None:
        if len(self) == 0:
            raise EmptyStoreError("draw store holds no retained draws (iterations == burn_in?)")

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta)
        meta.update(format=FORMAT_NAME, format_version=FORMAT_VERSION, blocks=sorted(self.blocks))
        for name, arr in sorted(self.blocks.items()):
            np.save(directory / f"{name}.npy", np.ascontiguousarray(arr), allow_pickle=False)
        dump_json(meta, directory / "meta.json")
        return directory

    @classmethod
    def load(cls, directory) -> "DrawStore":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{directory} is not a draw store")
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported draw store version {meta.get('format_version')}")
        blocks = {name: np.load(directory / f"{name}.npy", allow_pickle=False) for name in meta["blocks"]}
        return cls(blocks=blocks, meta=meta)

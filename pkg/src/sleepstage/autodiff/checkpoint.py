"""Parameter checkpoints: a flat little-endian float32 blob plus a JSON manifest.

Layout of a checkpoint directory::

    manifest.json   {"format": ..., "dtype": "<f4", "sha256": ...,
                     "entries": [{"name", "kind", "shape", "offset", "count"}, ...]}
    weights.bin     entries concatenated in manifest order

``offset`` and ``count`` are in elements, not bytes. ``kind`` is ``param``
or ``buffer``. The checksum covers the bytes of ``weights.bin``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .optim import ParameterStore

FORMAT = "sleepstage-checkpoint/1"
MANIFEST = "manifest.json"
BLOB = "weights.bin"


class CheckpointError(ValueError):
    pass


def save_checkpoint(store: ParameterStore, directory: str | Path) -> str:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for kind, items in (("param", ((n, p.data) for n, p in store.params.items())), ("buffer", store.buffers.items())):
        for name, value in items:
            arr = np.ascontiguousarray(value, dtype="<f4")
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
            chunks.append(arr.tobytes())
            offset += arr.size
    blob = b"".join(chunks)
    digest = hashlib.sha256(blob).hexdigest()
    (directory / BLOB).write_bytes(blob)
    manifest = {"format": FORMAT, "dtype": "<f4", "sha256": digest, "entries": entries}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return digest


def load_checkpoint(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")
    blob = (directory / BLOB).read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["sha256"]:
        raise CheckpointError(f"{directory}: checksum mismatch (manifest {manifest['sha256'][:12]}, data {digest[:12]})")
    flat = np.frombuffer(blob, dtype="<f4")
    out = {}
    for entry in manifest["entries"]:
        lo = entry["offset"]
        hi = lo + entry["count"]
        if hi > flat.size:
            raise CheckpointError(f"{directory}: entry {entry['name']!r} runs past end of {BLOB}")
        out[entry["name"]] = flat[lo:hi].reshape(entry["shape"]).copy()
    return out

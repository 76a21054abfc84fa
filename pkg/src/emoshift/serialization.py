"""Versioned named-array archives (npz) with JSON metadata.

Every artifact this package writes (latent space, checkpoints, pretrained
adapter weights) goes through save_archive/load_archive, so version and
kind mismatches fail loudly instead of deserializing garbage.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_META_KEY = "__metadata__"


class FormatError(ValueError):
    """Archive is corrupt, has the wrong kind, or an unsupported version."""


def save_archive(path, arrays: dict[str, np.ndarray], metadata: dict, kind: str) -> Path:
    """Write named arrays plus a metadata record; returns the path written."""
    path = Path(path)
    if _META_KEY in arrays:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    meta = dict(metadata)
    meta["format_version"] = FORMAT_VERSION
    meta["kind"] = kind
    payload = {_META_KEY: np.array(json.dumps(meta, sort_keys=True))}
    payload.update(arrays)
    with path.open("wb") as fh:
        np.savez(fh, **payload)
    return path


def load_archive(path, kind: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive, checking kind and format version. Returns (arrays, metadata)."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            names = list(z.files)
            if _META_KEY not in names:
                raise FormatError(f"{path}: missing metadata record")
            try:
                meta = json.loads(str(z[_META_KEY]))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: metadata is not valid JSON ({exc})") from None
            arrays = {n: z[n] for n in names if n != _META_KEY}
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: cannot read archive ({exc})") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: format version {meta.get('format_version')!r} "
            f"(this build reads {FORMAT_VERSION})"
        )
    if meta.get("kind") != kind:
        raise FormatError(f"{path}: archive kind {meta.get('kind')!r}, expected {kind!r}")
    return arrays, meta

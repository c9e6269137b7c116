"""Output files: atomic writes, content hashes and the run manifest."""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import platform
import tempfile
from importlib import metadata
from pathlib import Path
from typing import Iterable

MANIFEST = "manifest.json"
_VERSIONED = ("numpy", "pandas", "scipy", "numba", "scikit-learn", "shapely", "joblib", "PyYAML")


@contextlib.contextmanager
def atomic_open(path: str | Path, mode: str = "w"):
    """Write to a sibling temp file and rename over ``path`` on success.

    A failed write leaves no file at ``path``; the temp file is removed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".partial", dir=path.parent)
    try:
        kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj):
    with atomic_open(path) as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_text(path: str | Path, text: str):
    with atomic_open(path) as fh:
        fh.write(text)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact",) + _VERSIONED:
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def list_outputs(root: str | Path, exclude: Iterable[str] = (MANIFEST,)) -> list[Path]:
    root = Path(root)
    skip = set(exclude)
    return sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.name not in skip and not p.name.endswith(".partial")
    )


def build_manifest(command: str, config: dict, config_sha: str, inputs: dict, root: str | Path) -> dict:
    """Provenance record: no timestamps or absolute paths, so reruns compare byte for byte."""
    root = Path(root)
    return {
        "command": command,
        "config": config,
        "config_sha256": config_sha,
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items()) if p is not None},
        "outputs": {p.relative_to(root).as_posix(): sha256_file(p) for p in list_outputs(root)},
        "versions": versions(),
    }

"""Run directories and reproducibility manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping

MANIFEST = "manifest.json"


def resolve_run_dir(path) -> Path:
    """``path`` itself, or ``path-1``, ``path-2``... if a completed run is there.

    A directory counts as completed once it holds a manifest.
    """
    base = Path(path)
    candidate, n = base, 0
    while (candidate / MANIFEST).exists():
        n += 1
        candidate = base.with_name(f"{base.name}-{n}")
    candidate.mkdir(parents=True, exist_ok=True)
    return candidate


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_outputs(run_dir) -> dict[str, str]:
    """sha256 of every file under ``run_dir`` except the manifest, by relative path."""
    root = Path(run_dir)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.relative_to(root).as_posix() != MANIFEST:
            out[p.relative_to(root).as_posix()] = sha256_file(p)
    return out


def write_manifest(run_dir, command: str, config: Mapping, seeds: Mapping, inputs: Mapping[str, str] | None = None) -> str:
    """Write manifest.json and return its sha256.

    Inputs are recorded by file name and content hash only, and nothing
    time- or machine-dependent is stored, so identical runs hash identically.
    """
    from . import __version__

    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": dict(seeds),
        "inputs": {k: {"name": Path(v).name, "sha256": sha256_file(v)} for k, v in sorted((inputs or {}).items())},
        "outputs": hash_outputs(run_dir),
    }
    path = Path(run_dir) / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sha256_file(path)

"""Run manifest: everything needed to re-execute a run, and nothing that
changes between identical reruns (no timestamps, no host names)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .. import __version__
from .config import LoadedConfig

MANIFEST_NAME = "run_manifest.json"


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def artifact_digests(out: Path) -> dict[str, str]:
    return {
        p.relative_to(out).as_posix(): file_digest(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST_NAME
    }


def write_manifest(out: Path, cfg: LoadedConfig, command: str) -> Path:
    manifest = {
        "toolkit": "drbench",
        "version": __version__,
        "command": command,
        "task": cfg.task,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.canonical(),
        "artifacts": artifact_digests(out),
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path

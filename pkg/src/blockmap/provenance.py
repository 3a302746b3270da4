from __future__ import annotations

import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

from .util import sha256_file, write_json

PROVENANCE_NAME = "provenance.json"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "matplotlib", "pypeln", "pyyaml")


def _iter_files(root: Path, exclude_dirs: Tuple[str, ...] = ("__pycache__", ".pytest_cache")) -> Iterable[Path]:
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_dir():
            continue
        if any(part in exclude_dirs for part in p.relative_to(root).parts):
            continue
        yield p


def hash_tree(root: Path, exclude_dirs: Tuple[str, ...] = ("__pycache__", ".pytest_cache")) -> Dict[str, Any]:
    root = Path(root)
    files: Dict[str, str] = {}
    total_bytes = 0
    for p in _iter_files(root, exclude_dirs=exclude_dirs):
        rel = str(p.relative_to(root)).replace(os.sep, "/")
        files[rel] = sha256_file(p)
        total_bytes += p.stat().st_size
    return {"root": str(root), "n_files": len(files), "total_bytes": int(total_bytes), "sha256": files}


def hash_files(root: Path, names: Sequence[str]) -> Dict[str, Optional[str]]:
    """SHA-256 of the named files under ``root`` (None for files that do not exist)."""
    root = Path(root)
    return {n: (sha256_file(root / n, chunk_bytes=1 << 16) if (root / n).is_file() else None) for n in names}


def package_versions(names: Sequence[str] = TRACKED_PACKAGES) -> Dict[str, Optional[str]]:
    out: Dict[str, Optional[str]] = {}
    for n in names:
        try:
            out[n] = metadata.version(n)
        except metadata.PackageNotFoundError:
            out[n] = None
    return out


def env_fingerprint() -> Dict[str, Any]:
    return {
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "python": sys.version.replace("\n", " "),
        "python_executable": sys.executable,
        "platform": platform.platform(),
        "system": {"system": platform.system(), "release": platform.release(), "machine": platform.machine()},
        "packages": package_versions(),
    }


def write_provenance(run_dir: Path, deliverables: Sequence[str], config_hash: str) -> Dict[str, Any]:
    """Write ``provenance.json`` into ``run_dir`` and return the deliverable hashes.

    Only the deliverables are hashed; the environment block carries a
    timestamp and is not meant to be compared across runs.
    """
    run_dir = Path(run_dir)
    hashes = hash_files(run_dir, deliverables)
    write_json(
        run_dir / PROVENANCE_NAME,
        {"config_hash": config_hash, "deliverables": hashes, "environment": env_fingerprint()},
    )
    return hashes

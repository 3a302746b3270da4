from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable

LOG_LEVEL_ENV = "BLOCKMAP_LOG_LEVEL"


def sha256_file(path: Path, chunk_bytes: int = 1024 * 1024) -> str:
    """Compute SHA256 of a file deterministically."""
    h = hashlib.sha256()
    with path.open("rb") as f:
        while True:
            b = f.read(chunk_bytes)
            if not b:
                break
            h.update(b)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(txt: str) -> str:
    return hashlib.sha256(txt.encode("utf-8")).hexdigest()


def write_json(path: Path, obj: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def ensure_dir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def append_lines(path: Path, lines: Iterable[str]) -> int:
    """Append newline-terminated lines; returns how many were written."""
    n = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8", newline="\n") as f:
        for ln in lines:
            f.write(ln + "\n")
            n += 1
    return n


def append_jsonl(path: Path, records: Iterable[Dict[str, Any]]) -> int:
    return append_lines(path, (canonical_json(r) for r in records))


def truncate_lines(path: Path, n_lines: int) -> None:
    """Keep the first ``n_lines`` lines of a text file (creating it if missing)."""
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
        return
    kept = []
    with path.open("r", encoding="utf-8") as f:
        for i, ln in enumerate(f):
            if i >= n_lines:
                break
            kept.append(ln)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.writelines(kept)


def configure_logging(level: str | None = None) -> None:
    """Install one stream handler on the package logger.

    The level comes from ``level`` or the ``BLOCKMAP_LOG_LEVEL`` environment
    variable (default WARNING).
    """
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    lvl = getattr(logging, name, None)
    if not isinstance(lvl, int):
        lvl = logging.WARNING
    root = logging.getLogger("blockmap")
    if not any(getattr(h, "_blockmap", False) for h in root.handlers):
        h = logging.StreamHandler()
        h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        h._blockmap = True  # type: ignore[attr-defined]
        root.addHandler(h)
    root.setLevel(lvl)

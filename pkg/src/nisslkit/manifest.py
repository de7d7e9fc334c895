"""Line-delimited manifests and atomic file writes.

Every pipeline artifact is written temp-then-rename so a crashed run never
leaves a partially written file under its final name. JSON is emitted with
sorted keys, making manifests byte-identical across re-runs with the same
inputs, config, and seed.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable

from .errors import NisslkitError

TMP_PREFIX = ".nisslkit-tmp-"


def _tmp_path(path: Path) -> Path:
    return path.parent / f"{TMP_PREFIX}{os.getpid()}-{path.name}"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _tmp_path(path)
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def check_no_partial_outputs(directory: str | Path) -> None:
    """Fail if a previous crashed run left temp files behind."""
    directory = Path(directory)
    if not directory.exists():
        return
    leftovers = sorted(directory.rglob(f"{TMP_PREFIX}*"))
    if leftovers:
        raise NisslkitError(
            "partial outputs from an interrupted run detected: "
            + ", ".join(str(p) for p in leftovers[:5])
            + ("..." if len(leftovers) > 5 else "")
            + " (remove them and re-run)"
        )


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    text = "".join(dump_json(row) + "\n" for row in rows)
    atomic_write_text(path, text)


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise NisslkitError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return rows


def write_json(obj: Any, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)

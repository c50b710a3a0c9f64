"""CSV/JSON plumbing shared by the CLI and the experiment runner."""
from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import subprocess
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

__all__ = ["git_describe", "spec_hash", "write_csv", "read_json", "format_value", "samples_csv"]


@functools.lru_cache(maxsize=1)
def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def spec_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_jsonable).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def format_value(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str],
    metadata: Mapping[str, Any] | None = None,
) -> str:
    """RFC-4180 CSV text with an optional leading '# key=value ...' metadata line."""
    buf = io.StringIO()
    if metadata is not None:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in metadata.items()) + "\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


def samples_csv(samples: np.ndarray, metadata: Mapping[str, Any] | None = None) -> str:
    d = samples.shape[1]
    cols = [f"x{j}" for j in range(d)]
    rows = ({c: float(v) for c, v in zip(cols, r)} for r in samples)
    return write_csv(rows, cols, metadata)


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}") from exc

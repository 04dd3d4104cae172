import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def stable_digest(obj, length: int = 16) -> str:
    """Short sha256 digest of ``obj`` in canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:length]


def array_digest(arr) -> str | None:
    if arr is None:
        return None
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def derive_seed(*parts: int) -> int:
    """Independent 32-bit seed for the tuple ``parts`` (e.g. planner seed, job index)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def utc_timestamp(reproducible: bool = False) -> str:
    """ISO-8601 UTC time. Reproducible mode honours ``SOURCE_DATE_EPOCH`` (default 0)."""
    if reproducible:
        ts = datetime.fromtimestamp(int(os.environ.get("SOURCE_DATE_EPOCH", "0")), tz=timezone.utc)
    else:
        ts = datetime.now(tz=timezone.utc).replace(microsecond=0)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)

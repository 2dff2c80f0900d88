import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Union

from pydantic import BaseModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ============================================
# CANONICAL JSON
# ============================================
def canonical_json(payload: Union[BaseModel, Any]) -> str:
    """
    Deterministic JSON text: sorted keys, fixed separators, trailing newline.
    Non-finite floats are written as NaN / Infinity.
    """
    if isinstance(payload, BaseModel):
        payload = json.loads(payload.model_dump_json())
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ============================================
# ATOMIC WRITES
# ============================================
def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        logger.error(f"❌ Failed to write {path}", exc_info=True)
        raise
    return path


def write_json(path: PathLike, payload: Union[BaseModel, Any]) -> Path:
    return atomic_write_text(path, canonical_json(payload))

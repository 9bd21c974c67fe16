"""
Run Directory Writers

CSV and JSON writers with a fixed float format so every emitted file round-trips
exactly and is byte-identical between runs, plus the checksum helpers used by the
run manifest.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from rompy.logging import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST = "manifest.json"


def write_csv(df: pd.DataFrame, path: Union[str, Path], index: bool = False) -> Path:
    """Write df to path with the fixed float format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path}")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "isoformat"):
        return value.isoformat()
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        # str enums
        return value.value
    return value


def write_json(obj: Any, path: Union[str, Path]) -> Path:
    """Write obj to path as indented JSON with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Any:
    return json.loads(Path(path).read_text())


def sha256sum(path: Union[str, Path]) -> str:
    """Hex sha256 digest of the file at path."""
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def checksums(directory: Union[str, Path]) -> dict[str, str]:
    """Checksums of every file under directory except the manifest itself.

    Keys are posix paths relative to directory, sorted.

    """
    directory = Path(directory)
    files = sorted(
        p for p in directory.rglob("*") if p.is_file() and p.name != MANIFEST
    )
    return {p.relative_to(directory).as_posix(): sha256sum(p) for p in files}

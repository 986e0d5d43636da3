"""Writes command outputs: CSV tables, two-column .dat curves and the metadata.json sidecar

Every file is written to a temporary name in the target directory and moved into place, so a failed or
interrupted run never leaves a half-written output behind.
"""

import json
import os
import tempfile
from datetime import datetime
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from .utils import getLogger

logger = getLogger(__name__)

FLOAT_FORMAT = "%.10g"
METADATA_FILE = "metadata.json"


def _atomic_write(path: str, write):
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as f:
            write(f)
        os.replace(tmp_path, path)
    except BaseException:
        os.unlink(tmp_path)
        raise
    logger.debug(f"Wrote {path}")


def write_csv(df: pd.DataFrame, path: str) -> str:
    _atomic_write(path, lambda f: df.to_csv(f, index=False, float_format=FLOAT_FORMAT))
    return path


def write_dat(x: Sequence[float], y: Sequence[float], path: str, header: Optional[str] = None) -> str:
    "Whitespace-separated two-column file, one point per line. Non-finite y values are skipped."

    def write(f):
        if header:
            f.write(f"# {header}\n")
        for a, b in zip(x, y):
            if np.isfinite(b):
                f.write(f"{FLOAT_FORMAT % a} {FLOAT_FORMAT % b}\n")

    _atomic_write(path, write)
    return path


def select(df: pd.DataFrame, **equal) -> pd.DataFrame:
    "Rows where every given column equals the given value"
    mask = np.ones(len(df), dtype=bool)
    for column, value in equal.items():
        mask &= (df[column] == value).to_numpy()
    return df[mask]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


def write_metadata(out_dir: str, command: str, params: Dict[str, Any], version: str) -> str:
    """Writes metadata.json. The timestamp is the last key and the only line that changes between identical runs."""
    data = {"command": command, **_jsonable(params), "version": version}
    data["timestamp"] = datetime.now().isoformat(timespec="seconds")
    path = os.path.join(out_dir, METADATA_FILE)
    _atomic_write(path, lambda f: f.write(json.dumps(data, indent=2) + "\n"))
    return path

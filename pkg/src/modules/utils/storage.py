import json
import logging
import os
import tempfile

import pandas as pd

from .errors import ArtifactMissingError, DatasetFormatError

logger = logging.getLogger(__name__)


def ensure_dir(path):
    """Create a directory (and parents) if it doesn't exist"""
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def _atomic_write(path, write_fn, mode="w"):
    """
    Write through a temp file in the destination directory, then move it into place.

    :param path: Final file path.
    :param write_fn: Callable receiving the open temp file handle.
    :param mode: File mode for the temp file ("w" or "wb").
    """
    directory = ensure_dir(os.path.dirname(os.path.abspath(path)))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as f:
            write_fn(f)
        os.replace(tmp_path, path)
    except Exception:
        try:
            os.remove(tmp_path)
        except OSError:
            pass
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_json(path, data):
    # sort_keys keeps reruns byte-identical
    return _atomic_write(path, lambda f: json.dump(data, f, indent=2, sort_keys=True))


def read_json(path, kind="file"):
    if not os.path.exists(path):
        raise ArtifactMissingError(f"Missing {kind}: {path}")
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Malformed {kind} {path}: {e}") from e


def write_csv(path, frame: pd.DataFrame):
    return _atomic_write(path, lambda f: frame.to_csv(f, index=False, float_format="%.17g"))


def read_csv(path, kind="file", required_columns=None):
    if not os.path.exists(path):
        raise ArtifactMissingError(f"Missing {kind}: {path}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DatasetFormatError(f"Malformed {kind} {path}: {e}") from e
    missing = set(required_columns or []) - set(frame.columns)
    if missing:
        raise DatasetFormatError(f"{kind} {path} is missing columns {sorted(missing)}")
    return frame

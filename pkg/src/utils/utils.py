# /src/utils/utils.py
import hashlib
import json
import logging
import math
import os
import tempfile
from typing import Any, Dict, Iterable, List, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Third-party loggers that are too chatty at INFO.
_QUIET_LOGGERS = ("numexpr", "sklearn", "matplotlib")


def setup_logging(log_level: str = "INFO"):
    """Configures basic logging for the command-line driver."""
    level = getattr(logging, str(log_level).upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    for name in _QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def format_float(value: Optional[float]) -> str:
    """Fixed report formatting: 6 significant digits, 'inf'/'nan' spelled out, '' for None."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = f"{value:.6g}"
    return "0" if text == "-0" else text


def atomic_write_text(path: str, text: str) -> str:
    """Writes text to a temp file next to `path` and renames it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logging.debug(f"Wrote {path} ({len(text)} chars)")
    return path


def save_json(data: Any, path: str) -> str:
    """Saves data as sorted, indented JSON (atomic)."""
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def save_json_lines(records: Iterable[Dict[str, Any]], path: str) -> str:
    """Saves one JSON object per line (atomic)."""
    lines = [json.dumps(r, sort_keys=True) for r in records]
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def parse_json_lines_file(filepath: str) -> List[Dict[str, Any]]:
    """Parses a file containing JSON objects, one per line. Invalid lines are skipped with a warning."""
    results = []
    with open(filepath, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                results.append(json.loads(line))
            except json.JSONDecodeError as e:
                logging.warning(f"Skipping invalid JSON line {lineno} in {filepath}: {e}")
    return results


def parse_json_file(filepath: str) -> Any:
    """Parses a standard JSON file."""
    with open(filepath, "r", encoding="utf-8") as f:
        return json.load(f)


def file_digest(path: str) -> str:
    """sha256 of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

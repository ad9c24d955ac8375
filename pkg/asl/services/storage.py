# asl/services/storage.py
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger("asl.storage")

FLOAT_FORMAT = ".17g"


def format_value(value: Any) -> str:
    """Round-trip text for a CSV cell: floats carry 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, FLOAT_FORMAT)
    return str(value)


def _jsonable(value: Any):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan; they are written as strings
        return value if math.isfinite(value) else str(value)
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    return value


class OutputStore:
    """
    Writes the files of one command into an output directory.

    Every table starts with a `# key=value` header block recording at least the scenario hash
    and the seed; JSON documents carry the same fields in a `header` object. The store
    remembers what it wrote so a failed command can remove its partial outputs and the
    manifest can list them.
    """

    def __init__(self, out_dir: Union[str, Path], scenario_hash: str, seed: int):
        self.out_dir = Path(out_dir)
        self.scenario_hash = scenario_hash
        self.seed = seed
        self.written: List[str] = []
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {self.out_dir}: {e}")
            raise ValueError(f"Output directory {self.out_dir} is not writable.") from e

    def path(self, filename: str) -> Path:
        return self.out_dir / filename

    def _track(self, filename: str):
        if filename not in self.written:
            self.written.append(filename)

    def header(self, extra: Dict[str, Any] = None) -> Dict[str, str]:
        meta = {"scenario_hash": self.scenario_hash, "seed": str(self.seed)}
        for key, value in (extra or {}).items():
            meta[key] = format_value(value)
        return meta

    def save_table(self, filename: str, columns: Sequence[str], rows, meta: Dict[str, Any] = None) -> Path:
        target = self.path(filename)
        with open(target, "w", newline="", encoding="utf-8") as fh:
            for key, value in self.header(meta).items():
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh)
            writer.writerow(columns)
            count = 0
            for row in rows:
                writer.writerow([format_value(v) for v in row])
                count += 1
        self._track(filename)
        logger.info(f"Wrote {count} rows to {target}")
        return target

    def json_header(self, extra: Dict[str, Any] = None) -> Dict[str, Any]:
        return {"scenario_hash": self.scenario_hash, "seed": self.seed, **(extra or {})}

    def save_json(self, filename: str, payload: Dict[str, Any], meta: Dict[str, Any] = None) -> Path:
        """Write `payload` with a `header` object carrying the scenario hash and seed."""
        target = self.path(filename)
        document = {"header": self.json_header(meta), **payload}
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(document), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._track(filename)
        logger.info(f"Wrote {target}")
        return target

    def delete_file(self, filename: str) -> bool:
        target = self.path(filename)
        try:
            target.unlink()
        except FileNotFoundError:
            logger.warning(f"Nothing to delete at {target}")
            return False
        except OSError as e:
            logger.error(f"Failed to delete {target}: {e}")
            return False
        if filename in self.written:
            self.written.remove(filename)
        logger.info(f"Deleted {target}")
        return True

    def discard(self) -> List[str]:
        """Remove every file this store wrote; returns the names removed."""
        removed = [name for name in list(self.written) if self.delete_file(name)]
        return removed


def read_table(path: Union[str, Path]) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """Parse a table written by `OutputStore.save_table` into (header block, columns, rows)."""
    meta, lines = {}, []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not lines:
                key, _, value = line[2:].rstrip("\n").partition("=")
                meta[key] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return meta, columns, [row for row in reader]


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

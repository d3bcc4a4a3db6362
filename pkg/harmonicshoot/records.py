import csv
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("Records")

CSV_COLUMNS = ("m0", "m1", "v", "x", "r", "rp", "w", "v_lyap")


def jsonable(obj):
    """Plain JSON data; non-finite floats become "+inf"/"-inf" and NaN becomes null."""
    if isinstance(obj, (bool, type(None), str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, Enum):
        return obj.value
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if hasattr(obj, "to_json"):
        return jsonable(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple, set)):
        return [jsonable(v) for v in obj]
    if dataclasses.is_dataclass(obj):
        return jsonable(dataclasses.asdict(obj))
    return str(obj)


@dataclass
class RunRecord:
    command: str
    config: dict
    version: str = __version__
    timestamp: float = field(default_factory=time.time)
    results: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def add(self, result):
        self.results.append(result)
        return result

    def to_dict(self):
        return {
            "command": self.command,
            "config": jsonable(self.config),
            "version": self.version,
            "timestamp": self.timestamp,
            "results": jsonable(self.results),
            "diagnostics": jsonable(self.diagnostics),
        }

    def to_json(self):
        # repr of a float is the shortest string that reads back to the same double
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)


def write_json(record, path=None):
    text = record.to_json() + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
        log.info("Wrote %s", path)
    return text


def trajectory_rows(pair, v, trajectory):
    for x, r, rp, w, vl in trajectory.samples:
        yield (pair.m0, pair.m1, v, x, r, rp, w, vl)


def write_csv(trajectories, path=None):
    """Samples of ``(pair, v, trajectory)`` triples, one row per sample, floats as %.17g."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for pair, v, trajectory in trajectories:
        for row in trajectory_rows(pair, v, trajectory):
            writer.writerow([row[0], row[1]] + ["%.17g" % value for value in row[2:]])
    text = buffer.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
        log.info("Wrote %s", path)
    return text


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        log.exception("Failed to read run record %s", path)
        raise

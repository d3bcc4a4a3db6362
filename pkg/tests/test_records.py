import csv
import io
import json
import math
import tempfile
import unittest
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from harmonicshoot import __version__
from harmonicshoot.coefficients import MultPair, constants
from harmonicshoot.integrator import Fate
from harmonicshoot.records import (
    CSV_COLUMNS,
    RunRecord,
    jsonable,
    read_json,
    write_csv,
    write_json,
)


class TestJsonable(unittest.TestCase):

    def test_special_floats(self):
        self.assertEqual(jsonable(math.inf), "+inf")
        self.assertEqual(jsonable(-math.inf), "-inf")
        self.assertIsNone(jsonable(math.nan))
        self.assertEqual(jsonable([1.0, math.nan]), [1.0, None])

    def test_numpy_and_domain_types(self):
        self.assertEqual(jsonable(np.float64(1.5)), 1.5)
        self.assertIsInstance(jsonable(np.int64(3)), int)
        self.assertEqual(jsonable(np.array([1.0, np.inf])), [1.0, "+inf"])
        self.assertEqual(jsonable(Fate.BLOW_UP_MINUS), "BlowUpMinus")
        self.assertEqual(jsonable(MultPair(2, 4)), [2, 4])
        self.assertEqual(jsonable({1: (2, 3)}), {"1": [2, 3]})
        self.assertEqual(jsonable(constants(MultPair(4, 2)))["c"], "+inf")


class TestRunRecord(unittest.TestCase):

    def test_record_is_strict_json(self):
        record = RunRecord("shoot", {"pair": MultPair(2, 2), "x_max": math.inf})
        record.add({"v": 1.0, "mismatch": math.nan})
        data = json.loads(record.to_json())
        self.assertEqual(data["command"], "shoot")
        self.assertEqual(data["version"], __version__)
        self.assertEqual(data["config"], {"pair": [2, 2], "x_max": "+inf"})
        self.assertEqual(data["results"], [{"v": 1.0, "mismatch": None}])

    def test_doubles_survive_the_text_form(self):
        value = 1.0000000000000002
        record = RunRecord("solve", {})
        record.add({"v": value})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.json"
            text = write_json(record, path)
            self.assertEqual(path.read_text(encoding="utf-8"), text)
            self.assertEqual(read_json(path)["results"][0]["v"], value)

    def test_read_missing_file(self):
        with self.assertRaises(OSError):
            read_json("/nonexistent/run.json")


class TestCsv(unittest.TestCase):

    def test_rows(self):
        samples = np.array([[0.0, 0.1, 0.2, 0.3, 0.4], [0.5, 1.0, 2.0, 3.0, 4.0]])
        traj = SimpleNamespace(samples=samples)
        text = write_csv([(MultPair(2, 2), 1.0, traj)])
        rows = list(csv.reader(io.StringIO(text)))
        self.assertEqual(tuple(rows[0]), CSV_COLUMNS)
        self.assertEqual(rows[1][:4], ["2", "2", "1", "0"])
        self.assertEqual(rows[1][4], "0.10000000000000001")
        self.assertEqual([float(x) for x in rows[2][3:]], samples[1].tolist())
        self.assertEqual(len(rows), 3)


if __name__ == '__main__':
    unittest.main()

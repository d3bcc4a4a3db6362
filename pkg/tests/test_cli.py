import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from harmonicshoot import cli
from harmonicshoot.errors import DomainError, NoTransition, StepFailure
from harmonicshoot.shooting import TransitionBracket


def run_cli(*argv):
    with patch("sys.stdout", new_callable=io.StringIO) as out:
        code = cli.main(list(argv))
    return code, out.getvalue()


class TestParsing(unittest.TestCase):

    def test_parse_nodal(self):
        self.assertEqual(cli.parse_nodal("3"), [3])
        self.assertEqual(cli.parse_nodal("0..2"), [0, 1, 2])
        self.assertEqual(cli.parse_nodal("1,4"), [1, 4])
        for text in ("", "-1", "a", "2..x"):
            with self.assertRaises(DomainError):
                cli.parse_nodal(text)

    def test_parse_interval(self):
        self.assertEqual(cli.parse_interval("0.3,1.2"), (0.3, 1.2))
        with self.assertRaises(DomainError):
            cli.parse_interval("0.3")


class TestCommands(unittest.TestCase):

    def test_table1(self):
        code, out = run_cli("table1")
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertEqual([row["m1_max"] for row in data["results"]], [4, 27, 60, 106])

    def test_table1_mismatch_is_a_violation(self):
        rows = [{"m0": 2, "m1_max": 3, "expected": 4, "match": False}]
        with patch("harmonicshoot.cli.table1", return_value=rows):
            code, _ = run_cli("table1")
        self.assertEqual(code, 1)

    def test_constants(self):
        code, out = run_cli("constants", "--pair", "2,4")
        self.assertEqual(code, 0)
        result = json.loads(out)["results"][0]
        self.assertAlmostEqual(result["constants"]["d_plus"], -0.187317, places=5)
        self.assertTrue(result["within_degree_bound"])
        self.assertEqual(result["flags"], [])

    def test_constants_domain_error(self):
        code, out = run_cli("constants", "--pair", "1,1")
        self.assertEqual(code, 2)
        self.assertEqual(out, "")

    def test_shoot(self):
        code, out = run_cli("shoot", "--pair", "2,2", "--v", "1")
        self.assertEqual(code, 0)
        data = json.loads(out)
        result = data["results"][0]
        self.assertEqual(result["fate"], "Converged(0)")
        self.assertEqual(result["degree"], 1)
        self.assertTrue(result["trajectory"])
        self.assertEqual(data["config"]["pair"], [[2, 2]])

    def test_solve(self):
        code, out = run_cli("solve", "--pair", "2,2", "--nodal", "0")
        self.assertEqual(code, 0)
        result = json.loads(out)["results"][0]
        self.assertEqual(result["k"], 0)
        self.assertEqual(result["nodal"], 0)
        self.assertAlmostEqual(result["v"], 1.0, places=5)
        self.assertIn("constants", result)

    def test_sweep_collects_rows(self):
        rows = [{"v": 0.5, "nodal": 0}, {"v": 2.0, "nodal": 1}, {"v": 4.0, "nodal": None}]
        with patch("harmonicshoot.cli.sweep", return_value=rows) as sweep:
            code, out = run_cli("sweep", "--pair", "2,2", "--grid", "0.5:4:3")
        self.assertEqual(code, 0)
        self.assertEqual(sweep.call_args.args[1], [0.5, 2.25, 4.0])
        result = json.loads(out)["results"][0]
        self.assertEqual(result["max_nodal"], 1)
        self.assertEqual(len(result["rows"]), 3)

    def test_sweep_reports_plateau(self):
        rows = [{"v": 1.0, "nodal": 0}, {"v": 10.0, "nodal": 2}]
        with patch("harmonicshoot.cli.sweep", return_value=rows), \
                patch("harmonicshoot.analysis.nodal_transition", side_effect=NoTransition("none")):
            code, out = run_cli("sweep", "--pair", "6,6", "--grid", "1:10:2")
        self.assertEqual(code, 0)
        result = json.loads(out)["results"][0]
        self.assertEqual(result["plateau"]["max_nodal"], 2)
        self.assertIsNone(result["plateau"]["transition"])
        self.assertTrue(result["plateau"]["ok"])
        self.assertAlmostEqual(result["nodal_upper_bound"], result["plateau"]["bound"])

    def test_sweep_transition_above_plateau_is_a_violation(self):
        rows = [{"v": 1.0, "nodal": 0}, {"v": 10.0, "nodal": 2}]
        with patch("harmonicshoot.cli.sweep", return_value=rows), \
                patch("harmonicshoot.analysis.nodal_transition",
                      return_value=TransitionBracket(40.0, 41.0)):
            code, out = run_cli("sweep", "--pair", "6,6", "--grid", "1:10:2")
        self.assertEqual(code, 1)
        self.assertEqual(json.loads(out)["results"][0]["plateau"]["transition"], [40.0, 41.0])

    def test_verify_identity(self):
        code, out = run_cli("verify", "--pair", "2,2", "--nodal", "0")
        self.assertEqual(code, 0)
        data = json.loads(out)
        result = data["results"][0]
        self.assertTrue(all(result["verdicts"].values()))
        self.assertTrue(result["checks"]["tightened"]["ok"])
        self.assertEqual(result["checks"]["tightened"]["base"], result["checks"]["tightened"]["tight"])
        self.assertGreaterEqual(data["diagnostics"]["elapsed_s"], 0.0)

    def test_usage_errors(self):
        self.assertEqual(run_cli("shoot", "--pair", "2,2")[0], 2)
        self.assertEqual(run_cli("bogus")[0], 2)
        self.assertEqual(run_cli("shoot", "--pair", "x")[0], 2)
        self.assertEqual(run_cli("table1", "--format", "csv")[0], 2)

    def test_version(self):
        code, out = run_cli("--version")
        self.assertEqual(code, 0)
        self.assertIn("0.1.0", out)

    def test_numerical_failure(self):
        with patch("harmonicshoot.cli.shoot", side_effect=StepFailure("step size underflow")):
            code, _ = run_cli("shoot", "--pair", "2,2", "--v", "1")
        self.assertEqual(code, 3)

    def test_csv_to_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "shot.csv"
            code, out = run_cli("shoot", "--pair", "2,2", "--v", "1", "--format", "csv",
                                "--out", str(path))
            self.assertEqual(code, 0)
            self.assertEqual(out, "")
            lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "m0,m1,v,x,r,rp,w,v_lyap")
        self.assertTrue(lines[1].startswith("2,2,1,"))

    def test_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.json"
            path.write_text(json.dumps({"pair": [2, 2], "v": 1.0, "X_MAX": 50}))
            code, out = run_cli("shoot", "--config", str(path))
        self.assertEqual(code, 0)
        data = json.loads(out)
        self.assertEqual(data["config"]["controls"]["x_max"], 50.0)
        self.assertEqual(data["results"][0]["pair"], [2, 2])

    def test_missing_config_file(self):
        self.assertEqual(run_cli("table1", "--config", "/nonexistent/run.json")[0], 2)

    def test_limit(self):
        code, out = run_cli("limit", "--m0", "2")
        self.assertEqual(code, 0)
        result = json.loads(out)["results"][0]
        self.assertEqual(result["m0"], 2)
        self.assertTrue(result["ok"])


if __name__ == '__main__':
    unittest.main()

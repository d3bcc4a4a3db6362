import json
import tempfile
import unittest
from pathlib import Path

from harmonicshoot import config
from harmonicshoot.errors import DomainError
from harmonicshoot.integrator import IntegratorControls


class TestConfiguration(unittest.TestCase):

    def test_config_loads_from_template(self):
        self.assertIn("REL_TOL", config.DEFAULTS)
        self.assertIn("EPS_CONV", config.DEFAULTS)
        self.assertEqual(config.DEFAULTS["SERIES_ORDER"], 9)
        self.assertFalse(config.DEFAULTS["DEBUG_MODE"])

    def test_globals_mirror_defaults(self):
        self.assertEqual(config.REL_TOL, config.DEFAULTS["REL_TOL"])
        self.assertEqual(config.X_MAX, 60.0)
        self.assertEqual(config.V_CEILING, 1e7)

    def test_update_settings_casts_to_default_type(self):
        settings = config.update_settings(X_MAX="80", SERIES_ORDER="11", DEBUG_MODE="yes")
        self.assertEqual(config.X_MAX, 80.0)
        self.assertIsInstance(config.X_MAX, float)
        self.assertEqual(config.SERIES_ORDER, 11)
        self.assertTrue(config.DEBUG_MODE)
        self.assertEqual(settings["X_MAX"], 80.0)

    def test_update_settings_logs_changes(self):
        with self.assertLogs("Config", level="INFO") as captured:
            config.update_settings(EPS_CONV=1e-7)
        self.assertTrue(any("Setting changed: EPS_CONV" in line for line in captured.output))

    def test_unknown_setting_is_ignored(self):
        with self.assertLogs("Config", level="WARNING"):
            settings = config.update_settings(NOT_A_SETTING=1)
        self.assertNotIn("NOT_A_SETTING", settings)

    def test_load_settings_overlays_upper_case_keys(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "settings.json"
            path.write_text(json.dumps({"X_MAX": 45, "pair": "2,2", "BOGUS": 1}))
            settings = config.load_settings(path)
        self.assertEqual(config.X_MAX, 45.0)
        self.assertNotIn("pair", settings)
        self.assertNotIn("BOGUS", settings)

    def test_load_settings_resets(self):
        config.update_settings(X_MAX=10.0)
        config.load_settings()
        self.assertEqual(config.X_MAX, config.DEFAULTS["X_MAX"])

    def test_load_settings_rejects_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{not json")
            with self.assertRaises(DomainError):
                config.load_settings(path)
            path.write_text("[1, 2]")
            with self.assertRaises(DomainError):
                config.load_settings(path)

    def test_controls_snapshot_settings(self):
        config.update_settings(REL_TOL=1e-9)
        controls = IntegratorControls.from_settings(x_max=30.0)
        self.assertEqual(controls.rel_tol, 1e-9)
        self.assertEqual(controls.x_max, 30.0)
        config.update_settings(REL_TOL=1e-11)
        self.assertEqual(controls.rel_tol, 1e-9)


if __name__ == '__main__':
    unittest.main()

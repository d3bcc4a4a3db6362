import json
import logging
from pathlib import Path

from .errors import DomainError

log = logging.getLogger("Config")
TEMPLATE_FILE = Path(__file__).parent / "settings_template.json"


def _load_defaults():
    try:
        with TEMPLATE_FILE.open("r", encoding="utf-8") as f:
            defaults = json.load(f)
    except Exception:
        log.exception("Failed to load settings template settings_template.json")
        defaults = {}
    return defaults


DEFAULTS = _load_defaults()


def _cast_value(key, value):
    if value is None or value == "None":
        return None
    if key not in DEFAULTS:
        return value
    default_val = DEFAULTS[key]
    if isinstance(default_val, bool):
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("true", "1", "yes", "on")
    if isinstance(default_val, int):
        try:
            return int(value)
        except (TypeError, ValueError):
            return default_val
    if isinstance(default_val, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            return default_val
    return value


_settings = dict(DEFAULTS)


def _publish():
    global REL_TOL, ABS_TOL, EPS_CONV, X_WINDOW, X_MAX, EVENT_TOL, MAX_STEP, MATCH_RADIUS
    global SERIES_ORDER, SERIES_T_MIN, SERIES_T_MAX, SERIES_TRUNC_TOL, SERIES_TOL, LARGE_V
    global ROOT_RESIDUAL_TOL, CROSS_CHECK_TOL, CAP_C_SCAN_WIDTH, CAP_C_SCAN_POINTS
    global VERIFY_SLACK, TABLE_M1_LIMIT, BISECT_RTOL, V_CEILING
    global LYAPUNOV_TOL, DERIVATIVE_SLACK, W_LIMIT_TOL
    global THETA_SETTLE, THETA_SETTLE_WINDOW, THETA_X_SPAN, COMPARISON_TOL
    global LIMIT_X_START, LIMIT_X_END, LIMIT_TAIL_TOL, REFLECT_RESIDUAL_TOL, ROBUST_TOL
    global THREADS, DEBUG_MODE

    REL_TOL = _settings.get("REL_TOL", 1e-10)
    ABS_TOL = _settings.get("ABS_TOL", 1e-12)
    EPS_CONV = _settings.get("EPS_CONV", 1e-6)
    X_WINDOW = _settings.get("X_WINDOW", 5.0)
    X_MAX = _settings.get("X_MAX", 60.0)
    EVENT_TOL = _settings.get("EVENT_TOL", 1e-12)
    MAX_STEP = _settings.get("MAX_STEP", 0.25)
    MATCH_RADIUS = _settings.get("MATCH_RADIUS", 0.5)
    SERIES_ORDER = _settings.get("SERIES_ORDER", 9)
    SERIES_T_MIN = _settings.get("SERIES_T_MIN", 1e-4)
    SERIES_T_MAX = _settings.get("SERIES_T_MAX", 1e-2)
    SERIES_TRUNC_TOL = _settings.get("SERIES_TRUNC_TOL", 1e-12)
    SERIES_TOL = _settings.get("SERIES_TOL", 1e-9)
    LARGE_V = _settings.get("LARGE_V", 1000.0)
    ROOT_RESIDUAL_TOL = _settings.get("ROOT_RESIDUAL_TOL", 1e-12)
    CROSS_CHECK_TOL = _settings.get("CROSS_CHECK_TOL", 1e-10)
    CAP_C_SCAN_WIDTH = _settings.get("CAP_C_SCAN_WIDTH", 50.0)
    CAP_C_SCAN_POINTS = _settings.get("CAP_C_SCAN_POINTS", 4000)
    VERIFY_SLACK = _settings.get("VERIFY_SLACK", 1e-10)
    TABLE_M1_LIMIT = _settings.get("TABLE_M1_LIMIT", 500)
    BISECT_RTOL = _settings.get("BISECT_RTOL", 1e-12)
    V_CEILING = _settings.get("V_CEILING", 1e7)
    LYAPUNOV_TOL = _settings.get("LYAPUNOV_TOL", 1e-9)
    DERIVATIVE_SLACK = _settings.get("DERIVATIVE_SLACK", 1e-6)
    W_LIMIT_TOL = _settings.get("W_LIMIT_TOL", 1e-4)
    THETA_SETTLE = _settings.get("THETA_SETTLE", 1e-10)
    THETA_SETTLE_WINDOW = _settings.get("THETA_SETTLE_WINDOW", 5.0)
    THETA_X_SPAN = _settings.get("THETA_X_SPAN", 200.0)
    COMPARISON_TOL = _settings.get("COMPARISON_TOL", 1e-8)
    LIMIT_X_START = _settings.get("LIMIT_X_START", -20.0)
    LIMIT_X_END = _settings.get("LIMIT_X_END", 60.0)
    LIMIT_TAIL_TOL = _settings.get("LIMIT_TAIL_TOL", 1e-4)
    REFLECT_RESIDUAL_TOL = _settings.get("REFLECT_RESIDUAL_TOL", 1e-8)
    ROBUST_TOL = _settings.get("ROBUST_TOL", 1e-6)
    THREADS = _settings.get("THREADS", 0)
    DEBUG_MODE = _settings.get("DEBUG_MODE", False)


_publish()


def get_log_level():
    return logging.DEBUG if DEBUG_MODE else logging.INFO


def update_settings(**kwargs):
    for k, v in kwargs.items():
        if k in _settings:
            _settings[k] = _cast_value(k, v)
            log.info("Setting changed: %s = %s", k, _settings[k])
        else:
            log.warning("Ignoring unknown setting %s", k)
    _publish()

    if "DEBUG_MODE" in kwargs:
        logging.getLogger().setLevel(get_log_level())

    return _settings.copy()


def current_settings():
    return _settings.copy()


def load_settings(path=None):
    """Reset to the template defaults, then overlay the JSON object at ``path`` if given.

    Only upper-case keys are taken from the file; lower-case keys belong to the CLI.
    """
    global _settings

    _settings = dict(DEFAULTS)
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as f:
                overrides = json.load(f)
        except Exception as e:
            log.exception("Failed to load settings file %s", path)
            raise DomainError(f"Cannot read settings file {path}: {e}") from e
        if not isinstance(overrides, dict):
            raise DomainError(f"Settings file {path} must hold a JSON object")
        for k, v in overrides.items():
            if k.isupper() and k in _settings:
                _settings[k] = _cast_value(k, v)
    _publish()
    return _settings.copy()

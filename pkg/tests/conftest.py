import logging

import pytest

from harmonicshoot import config, state
from harmonicshoot.logging_config import RunLogHandler


@pytest.fixture(autouse=True)
def reset_run_state():
    root = logging.getLogger()
    level = root.level
    config.load_settings()
    state.clear_flags()
    state.clear_logs()
    yield
    config.load_settings()
    state.clear_flags()
    # drop the handlers setup_logging installed; pytest manages its own per phase
    for handler in root.handlers[:]:
        if isinstance(handler, RunLogHandler) or type(handler) is logging.StreamHandler:
            root.removeHandler(handler)
    root.setLevel(level)

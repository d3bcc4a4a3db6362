import collections
import logging
import threading
import time

log = logging.getLogger("State")

log_buffer = collections.deque(maxlen=500)
log_buffer_lock = threading.Lock()

run_flags = []
run_flags_lock = threading.Lock()

_start_time = time.time()


def get_uptime():
    return time.time() - _start_time


def add_log(level, name, message):
    with log_buffer_lock:
        log_buffer.append(
            {"timestamp": time.time(), "level": level, "name": name, "message": message}
        )


def get_logs(level_filter=None, limit=100):
    with log_buffer_lock:
        logs = list(log_buffer)
    if level_filter:
        level_filter = level_filter.upper()
        logs = [entry for entry in logs if entry["level"] == level_filter]
    return logs[-limit:]


def clear_logs():
    with log_buffer_lock:
        log_buffer.clear()


def add_flag(code, detail, **context):
    """Record a run-level flag (watchdogs, substituted inputs, irregular brackets)."""
    entry = {"code": code, "detail": detail, "timestamp": time.time()}
    entry.update(context)
    with run_flags_lock:
        run_flags.append(entry)
    log.debug("Flag raised: %s (%s)", code, detail)
    return entry


def get_flags(code=None):
    with run_flags_lock:
        flags = list(run_flags)
    if code:
        flags = [f for f in flags if f["code"] == code]
    return flags


def clear_flags():
    with run_flags_lock:
        run_flags.clear()

"""Command-line front end.

Every subcommand builds a RunRecord and writes it as JSON (or trajectory samples as CSV) to
``--out`` or stdout. Exit codes: 0 clean, 1 property violation, 2 usage or domain error,
3 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, config, state
from .analysis import (
    comparison_check,
    limit_profile,
    limiting_convergence_check,
    nodal_plateau_check,
    nodal_upper_bound,
    reflect_mm,
    tightened_resolve_check,
    winding_from_outcome,
)
from .coefficients import (
    MultPair,
    absch1_bounds,
    constants,
    dplus_excursion_bound,
    table1,
    within_degree_bound,
)
from .errors import DomainError, HarmonicShootError, NumericalError
from .integrator import (
    IntegratorControls,
    derivative_bound_check,
    lyapunov_check,
    w_limit_check,
)
from .logging_config import setup_logging
from .records import RunRecord, jsonable, write_csv, write_json
from .shooting import (
    brouwer_degree,
    degree_restriction_check,
    parse_grid,
    shoot,
    solve_bvp,
    sweep,
)

log = logging.getLogger("CLI")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

FILE_KEYS = ("pair", "v", "nodal", "grid", "interval", "eps", "rel_tol", "abs_tol", "x_max",
             "format", "out", "threads", "m0")
CSV_COMMANDS = ("shoot", "solve", "omega")


def parse_nodal(text):
    """``k``, ``a..b`` or ``a,b,c`` as a list of non-negative integers."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise DomainError(f"Nodal numbers must look like k, a..b or a,b, got {text!r}") from e
    if not values or any(k < 0 for k in values):
        raise DomainError(f"Nodal numbers must be non-negative and non-empty, got {text!r}")
    return values


def parse_interval(text):
    parts = str(text).strip().strip("()[]").split(",")
    try:
        t0, t1 = (float(p) for p in parts)
    except ValueError as e:
        raise DomainError(f"Interval must look like t0,t1, got {text!r}") from e
    return t0, t1


def _argtype(parser):
    def convert(text):
        try:
            return parser(text)
        except DomainError as e:
            raise argparse.ArgumentTypeError(str(e)) from e

    convert.__name__ = parser.__name__
    return convert


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pair", action="append", type=_argtype(MultPair.parse),
                        help="multiplicities m0,m1 (repeatable)")
    common.add_argument("--v", type=float, help="initial slope at t = 0")
    common.add_argument("--nodal", "--k", dest="nodal", type=_argtype(parse_nodal),
                        help="nodal numbers: k, a..b or a,b,c")
    common.add_argument("--grid", help="slope grid lo:hi:n[:log]")
    common.add_argument("--interval", type=_argtype(parse_interval), help="t-interval t0,t1")
    common.add_argument("--eps", type=float, help="threshold for the limiting convergence check")
    common.add_argument("--rel-tol", dest="rel_tol", type=float)
    common.add_argument("--abs-tol", dest="abs_tol", type=float)
    common.add_argument("--x-max", dest="x_max", type=float)
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--threads", type=int, help="sweep workers, 0 = all cores")
    common.add_argument("--m0", type=int, action="append", help="m0 for the limit profile")
    common.add_argument("--config", help="JSON file with flag keys or settings keys")
    common.add_argument("--debug", action="store_true", help="DEBUG logging")

    parser = argparse.ArgumentParser(
        prog="harmonicshoot",
        description="Shooting solver for equivariant harmonic self-maps of spheres",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _apply_config_file(args):
    """Overlay the --config file: settings keys go to config, flag keys fill unset flags."""
    config.load_settings(args.config)
    if args.config is None:
        return
    data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in FILE_KEYS:
        if key not in data or getattr(args, key) is not None:
            continue
        value = data[key]
        if key == "pair":
            nested = isinstance(value, list) and value and isinstance(value[0], (list, str))
            items = value if nested else [value]
            value = [
                MultPair.parse(",".join(map(str, p)) if isinstance(p, list) else p) for p in items
            ]
        elif key == "nodal":
            value = parse_nodal(",".join(map(str, value)) if isinstance(value, list) else value)
        elif key == "interval":
            value = parse_interval(",".join(map(str, value)) if isinstance(value, list) else value)
        elif key == "m0":
            value = [int(m) for m in value] if isinstance(value, list) else [int(value)]
        setattr(args, key, value)


@dataclass
class Run:
    args: argparse.Namespace
    controls: IntegratorControls
    record: RunRecord
    trajectories: list = field(default_factory=list)
    code: int = EXIT_OK

    def violation(self):
        self.code = max(self.code, EXIT_VIOLATION)

    def failure(self):
        self.code = max(self.code, EXIT_NUMERICAL)


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise DomainError(f"{args.command} needs --{name.replace('_', '-')}")


def _item(run, build):
    """Run ``build`` and attach the flags it raised."""
    before = len(state.get_flags())
    result = build()
    raised = state.get_flags()[before:]
    result["flags"] = sorted(set(result.get("flags", [])) | {f["code"] for f in raised})
    run.record.add(result)
    return result


def _solution_result(solution, with_trajectory=True):
    result = solution.to_dict()
    result["constants"] = constants(solution.pair).to_dict()
    if with_trajectory:
        result["trajectory"] = solution.trajectory.to_rows()
    return result


def cmd_constants(run):
    _require(run.args, "pair")
    for pair in run.args.pair:
        def build(pair=pair):
            result = {"pair": pair.to_json(), "constants": constants(pair).to_dict()}
            if pair.m0 >= 2:
                result["bounds"] = absch1_bounds(pair).to_dict()
                result["dplus_excursion_bound"] = dplus_excursion_bound(pair)
                result["within_degree_bound"] = within_degree_bound(pair)
            return result

        _item(run, build)


def cmd_table1(run):
    rows = table1()
    for row in rows:
        run.record.add(dict(row))
        if not row["match"]:
            log.error("Table mismatch for m0=%d: %d, expected %d",
                      row["m0"], row["m1_max"], row["expected"])
            run.violation()


def cmd_shoot(run):
    _require(run.args, "pair", "v")
    for pair in run.args.pair:
        def build(pair=pair):
            outcome = shoot(pair, run.args.v, run.controls)
            result = outcome.to_dict()
            result["degree"] = brouwer_degree(outcome.ell, pair) if outcome.is_converged else None
            result["constants"] = constants(pair).to_dict()
            if outcome.trajectory is not None:
                result["trajectory"] = outcome.trajectory.to_rows()
                run.trajectories.append((pair, outcome.v, outcome.trajectory))
            return result

        _item(run, build)


def cmd_solve(run):
    _require(run.args, "pair", "nodal")
    for pair in run.args.pair:
        for k in run.args.nodal:
            def build(pair=pair, k=k):
                solution = solve_bvp(pair, k, run.controls)
                run.trajectories.append((pair, solution.v, solution.trajectory))
                result = _solution_result(solution)
                result["k"] = k
                return result

            _item(run, build)


def cmd_sweep(run):
    _require(run.args, "pair", "grid")
    grid = parse_grid(run.args.grid)
    for pair in run.args.pair:
        def build(pair=pair):
            rows = sweep(pair, grid, run.controls, run.args.threads)
            result = {"pair": pair.to_json(), "rows": rows}
            nodal = [row["nodal"] for row in rows if row["nodal"] is not None]
            result["max_nodal"] = max(nodal) if nodal else None
            if pair.m0 >= 6:
                result["nodal_upper_bound"] = nodal_upper_bound(pair)
                plateau = nodal_plateau_check(pair, rows, run.controls)
                result["plateau"] = plateau.to_dict()
                if not plateau.ok:
                    run.violation()
            return result

        _item(run, build)


def cmd_omega(run):
    _require(run.args, "pair", "v")
    for pair in run.args.pair:
        def build(pair=pair):
            outcome = shoot(pair, run.args.v, run.controls)
            report = winding_from_outcome(outcome)
            result = report.to_dict()
            result["fate"] = outcome.fate_label
            if not report.consistent:
                run.violation()
            if pair.m0 >= 6:
                comparison = comparison_check(pair, run.args.v, run.controls)
                result["comparison"] = comparison.to_dict()
                if not comparison.ok:
                    run.violation()
            run.trajectories.append((pair, outcome.v, outcome.trajectory))
            return result

        _item(run, build)


def cmd_limit(run):
    for m0 in run.args.m0 or [2, 3, 4, 5]:
        def build(m0=m0):
            profile = limit_profile(m0, run.controls)
            if 2 <= m0 <= 5 and not profile.ok:
                run.violation()
            return profile.to_dict()

        _item(run, build)


def _verify_solution(solution, k, controls):
    checks = {
        "lyapunov": lyapunov_check(solution.trajectory),
        "derivative_bounds": derivative_bound_check(solution.trajectory),
        "w_limit": w_limit_check(solution.trajectory),
        "winding": winding_from_outcome(solution.outcome),
    }
    verdicts = {name: report.ok if hasattr(report, "ok") else report.consistent
                for name, report in checks.items()}
    if solution.pair.m0 == solution.pair.m1:
        reflected = reflect_mm(solution, solution.ell)
        checks["reflection"] = {
            "residual": reflected.residual,
            "nodal": reflected.nodal,
            "degree": reflected.degree,
        }
        verdicts["reflection"] = reflected.residual <= config.REFLECT_RESIDUAL_TOL
    try:
        robustness = tightened_resolve_check(solution, k, controls)
    except NumericalError as e:
        log.exception("Tightened re-solve of %s k=%d failed", solution.pair, k)
        checks["tightened"] = {"error": str(e)}
        verdicts["tightened"] = False
    else:
        checks["tightened"] = robustness
        verdicts["tightened"] = robustness.ok
    return checks, verdicts


def cmd_verify(run):
    _require(run.args, "pair", "nodal")
    for pair in run.args.pair:
        solutions = []
        for k in run.args.nodal:
            try:
                solution = solve_bvp(pair, k, run.controls)
            except NumericalError as e:
                log.exception("verify %s k=%d: no solution", pair, k)
                run.record.add({"pair": pair.to_json(), "k": k, "error": str(e), "flags": []})
                run.failure()
                continue
            solutions.append(solution)

            def build(solution=solution, k=k):
                checks, verdicts = _verify_solution(solution, k, run.controls)
                result = _solution_result(solution, with_trajectory=False)
                result["k"] = k
                result["checks"] = jsonable(checks)
                result["verdicts"] = verdicts
                if not all(verdicts.values()):
                    run.violation()
                return result

            _item(run, build)

        restriction = degree_restriction_check(solutions)
        run.record.diagnostics.setdefault("degree_restriction", []).append(restriction.to_dict())
        if not restriction.ok:
            run.violation()
        if run.args.interval is not None:
            eps = 0.1 if run.args.eps is None else run.args.eps
            report = limiting_convergence_check(solutions, run.args.interval, eps)
            run.record.diagnostics.setdefault("limiting_convergence", []).append(report.to_dict())
            if not report.ok:
                run.violation()


COMMANDS = {
    "constants": (cmd_constants, "structural constants and bound checks of pairs"),
    "table1": (cmd_table1, "largest m1 with the degree bound for 2 <= m0 <= 5"),
    "shoot": (cmd_shoot, "one shot from t = 0 with slope --v"),
    "solve": (cmd_solve, "boundary value solutions with prescribed nodal numbers"),
    "sweep": (cmd_sweep, "fates and nodal numbers over a slope grid"),
    "omega": (cmd_omega, "winding number of a shot"),
    "limit": (cmd_limit, "limiting profile for large slopes"),
    "verify": (cmd_verify, "solve and run the property checks"),
}


def _config_echo(args, controls):
    echo = {key: getattr(args, key) for key in FILE_KEYS}
    echo["command"] = args.command
    echo["config"] = args.config
    echo["controls"] = controls.to_dict()
    echo["settings"] = config.current_settings()
    return jsonable(echo)


def _emit(run):
    args = run.args
    if (args.format or "json") == "csv":
        text = write_csv(run.trajectories, args.out)
    else:
        text = write_json(run.record, args.out)
    if args.out is None:
        sys.stdout.write(text)
        sys.stdout.flush()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.debug)
    state.clear_flags()
    try:
        _apply_config_file(args)
        if args.debug:
            config.update_settings(DEBUG_MODE=True)
        if args.format == "csv" and args.command not in CSV_COMMANDS:
            raise DomainError(f"CSV output holds trajectory samples; {args.command} has none")
        controls = IntegratorControls.from_settings(
            rel_tol=args.rel_tol, abs_tol=args.abs_tol, x_max=args.x_max
        )
        record = RunRecord(args.command, _config_echo(args, controls))
        run = Run(args, controls, record)
        handler, _ = COMMANDS[args.command]
        handler(run)
        record.diagnostics["flags"] = state.get_flags()
        record.diagnostics["elapsed_s"] = state.get_uptime()
        _emit(run)
        log.info("%s finished with exit code %d", args.command, run.code)
        return run.code
    except HarmonicShootError as e:
        log.error("%s failed: %s", args.command, e)
        return e.exit_code
    except (OSError, json.JSONDecodeError) as e:
        log.error("%s failed: %s", args.command, e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

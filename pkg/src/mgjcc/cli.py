"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 infeasible, 3 data integrity.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import casegen, harness
from .drjcc import METHODS, RateConfigError, bonferroni_allocate, scc_allocate, solve_drjcc
from .evo import EvoConfig, EvolutionError, drjcc_fitness, optimize_rates, write_history
from .netmodel import TopologyError
from .opf import Case, HorizonData, ModelError, Schedule
from .uncertainty import (AMBIGUITY_SETS, AmbiguityDomainError, ErrorMoments, InsufficientSamplesError,
                          SampleFileError, estimate_moments, read_moments, read_samples, write_moments)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DATA = 0, 1, 2, 3
RESULT_SCHEMA = "mgjcc.result/1"

logger = logging.getLogger("mgjcc")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Infeasible(Exception):
    def __init__(self, message, report: dict):
        super().__init__(message)
        self.report = report


@dataclass
class RunConfig:
    case: str | None = None
    moments: str | None = None
    samples: str | None = None
    heldout: str | None = None
    schedule: str | None = None
    method: str = "bonferroni"
    set: str = "unimodal"
    eps_joint: float = 0.05
    eps_list: tuple = harness.GRID_EPS
    methods: tuple = METHODS
    sets: tuple = harness.SETS
    seed: int = 0
    blackout: str | None = None
    out: str = "out"
    plots: bool = True
    correlation: str = "independent"
    deterministic: bool = False
    households: int = 10
    intervals: int = 96
    start_hour: float = 0.0
    span_hours: float = 24.0
    error_family: str = "gaussian"
    evo: dict = field(default_factory=dict)

    def check(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        for s in (self.set, *self.sets):
            if s not in AMBIGUITY_SETS:
                raise UsageError(f"unknown ambiguity set {s!r}; choose from {', '.join(AMBIGUITY_SETS)}")
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        for e in (self.eps_joint, *self.eps_list):
            if not 0.0 < float(e) < 1.0:
                raise UsageError(f"joint violation rate {e} must lie in (0, 1)")
        for path in (self.case, self.moments, self.samples, self.heldout, self.schedule):
            if path is not None and not Path(path).exists():
                raise UsageError(f"file not found: {path}")
        return self

    def evo_config(self) -> EvoConfig:
        try:
            return EvoConfig(**{"seed": self.seed, **self.evo})
        except TypeError as exc:
            raise UsageError(f"bad evo settings: {exc}") from exc


def parse_blackout(text: str | None, dt: float, T: int, start: float = 0.0):
    """``t0:H`` (clock hour of the start, duration in hours) to an interval window."""
    if text is None or text == "":
        return None
    try:
        t0, dur = (float(v) for v in str(text).split(":"))
    except ValueError as exc:
        raise UsageError(f"--blackout expects t0:H in hours, got {text!r}") from exc
    a, b = (t0 - start) / dt, (t0 + dur - start) / dt
    if dur < 0 or a < -1e-9 or b > T + 1e-9:
        raise UsageError(f"blackout {text} does not fit the horizon {start:g}h-{start + T * dt:g}h")
    return int(round(a)), int(round(b))


def _config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = set(doc) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    """Flags first, then the config file on top."""
    vals = {}
    for k in RunConfig.__dataclass_fields__:
        v = getattr(args, k, None)
        if v is not None:
            vals[k] = v
    if getattr(args, "no_plots", False):
        vals["plots"] = False
    if getattr(args, "config", None):
        vals.update(_config_file(args.config))
    for k in ("eps_list", "methods", "sets"):
        if k in vals:
            vals[k] = tuple(vals[k])
    return RunConfig(**vals).check()


# -- helpers ---------------------------------------------------------------------------

def _load_case(cfg: RunConfig) -> tuple[Case, dict, Path]:
    if cfg.case is None:
        raise UsageError("--case is required")
    try:
        case, doc = casegen.read_case(cfg.case)
    except (ModelError, TopologyError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{cfg.case}: {exc}") from exc
    h = case.horizon
    if cfg.blackout is not None:
        start = float(doc.get("generator", {}).get("start_hour", 0.0))
        bo = parse_blackout(cfg.blackout, h.dt, h.n_intervals, start)
        case = replace(case, horizon=HorizonData(h.dt, h.load, h.critical, h.pv, bo))
    return case, doc, Path(cfg.case).parent


def _samples_path(cfg: RunConfig, doc: dict, base: Path, key: str):
    explicit = cfg.samples if key == "samples" else cfg.heldout
    if explicit:
        return Path(explicit)
    name = doc.get("files", {}).get(key)
    return base / name if name else None


def _read_samples(path, case: Case):
    try:
        return read_samples(path, case.network.pv_bus)
    except SampleFileError as exc:
        raise DataError(str(exc)) from exc


def _moments(cfg: RunConfig, case: Case, doc: dict, base: Path) -> ErrorMoments:
    T = case.horizon.n_intervals
    if cfg.moments:
        try:
            m = read_moments(cfg.moments)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{cfg.moments}: {exc}") from exc
    else:
        path = _samples_path(cfg, doc, base, "samples")
        if path is None:
            raise UsageError("no moments file and the case lists no samples; pass --moments or --samples")
        try:
            m = estimate_moments(_read_samples(path, case), range(T), cfg.correlation)
        except InsufficientSamplesError as exc:
            raise DataError(str(exc)) from exc
    if m.mean.shape != (T, case.network.n_pv):
        raise DataError(f"moments cover shape {m.mean.shape}; case needs {(T, case.network.n_pv)}")
    return m


def _rates(cfg: RunConfig, case, moments, out: Path | None):
    """Rate vector for the configured method; runs the evolutionary search if asked."""
    if cfg.method == "scc":
        return scc_allocate(cfg.eps_joint), None
    if cfg.method == "bonferroni":
        return bonferroni_allocate(cfg.eps_joint), None
    fit = drjcc_fitness(case, moments, cfg.set, cfg.eps_joint)
    result = optimize_rates(fit, cfg.eps_joint, cfg.evo_config(), cfg.set)
    if out is not None:
        (out / "evolution.json").write_text(json.dumps(result.to_json(), indent=1, sort_keys=True) + "\n")
        write_history(out / "evolution_history.csv", result.history)
        if cfg.plots:
            from .plotting import plot_convergence

            plot_convergence(result.history, out / "convergence.png", f"{cfg.set}, eps_j={cfg.eps_joint:g}")
    return result.best_rates, result


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n")
    return path


# -- commands --------------------------------------------------------------------------

def cmd_gen_case(cfg: RunConfig) -> int:
    params = casegen.CaseParams(households=cfg.households, intervals=cfg.intervals, error_family=cfg.error_family,
                                start_hour=cfg.start_hour, span_hours=cfg.span_hours)
    if cfg.blackout:
        dt = cfg.span_hours / cfg.intervals
        a, b = parse_blackout(cfg.blackout, dt, cfg.intervals, cfg.start_hour)
        params.blackout_hours = (cfg.start_hour + a * dt, cfg.start_hour + b * dt)
    bundle = casegen.generate_case(cfg.seed, params)
    path = casegen.write_case(cfg.out, bundle)
    print(path)
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.samples is None:
        raise UsageError("fit needs --samples")
    if cfg.case is not None:
        case, _, _ = _load_case(cfg)
        pv_bus = case.network.pv_bus
    else:
        pv_bus = _buses_in(cfg.samples)
    try:
        samples = read_samples(cfg.samples, pv_bus)
        moments = estimate_moments(samples, None, cfg.correlation)
    except (SampleFileError, InsufficientSamplesError) as exc:
        raise DataError(str(exc)) from exc
    out = Path(cfg.out)
    if out.suffix != ".json":
        out = out / "moments.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_moments(out, moments)
    print(out)
    return EXIT_OK


def _buses_in(path) -> list[int]:
    import csv

    buses = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                buses.add(int(row[1]))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from exc
    return sorted(buses)


def cmd_schedule(cfg: RunConfig) -> int:
    case, doc, base = _load_case(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    moments = _moments(cfg, case, doc, base)
    try:
        rates, evo_result = _rates(cfg, case, moments, out)
    except (AmbiguityDomainError, RateConfigError) as exc:
        raise UsageError(str(exc)) from exc
    except EvolutionError as exc:
        raise Infeasible(str(exc), {"status": "infeasible", "error": str(exc)}) from exc
    sol = solve_drjcc(case, moments, cfg.set, rates)
    if not sol.feasible:
        report = {"schema": RESULT_SCHEMA, "status": sol.status, "rates": rates.to_json(),
                  "families": sol.report.families if sol.report else {},
                  "detail": sol.report.detail if sol.report else ""}
        _write_json(out / "infeasible.json", report)
        raise Infeasible(f"DR-JCC problem is {sol.status}", report)
    sched = sol.schedule
    sched.solve_info["method"] = cfg.method
    _write_json(out / "schedule.json", sched.to_json())
    result = {
        "schema": RESULT_SCHEMA,
        "method": cfg.method,
        "set": cfg.set,
        "eps_joint": cfg.eps_joint,
        "cost": sched.cost,
        "breakdown": sched.breakdown,
        "rates": rates.to_json(),
        "solve_info": sched.solve_info,
        "evolution": evo_result.to_json() if evo_result is not None else None,
    }
    _write_json(out / "result.json", result)
    if cfg.plots:
        from .plotting import plot_dispatch

        plot_dispatch(sched, out / "dispatch.png")
    print(f"cost {sched.cost:.6f}  rates {' '.join(f'{e:.6f}' for e in rates.eps)}")
    return EXIT_OK


def _read_schedule(path) -> Schedule:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != "mgjcc.schedule/1":
            raise ValueError(f"unsupported schedule schema {doc.get('schema')!r}")
        return Schedule.from_json(doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.schedule is None:
        raise UsageError("simulate needs --schedule")
    case, doc, base = _load_case(cfg)
    sched = _read_schedule(cfg.schedule)
    T = case.horizon.n_intervals
    if sched.grid.pg.shape[0] != T:
        raise DataError(f"schedule covers {sched.grid.pg.shape[0]} intervals; case has {T}")
    held_path = _samples_path(cfg, doc, base, "heldout")
    if held_path is None:
        raise UsageError("simulate needs held-out samples (--heldout)")
    heldout = _read_samples(held_path, case)
    fit_path = _samples_path(cfg, doc, base, "samples")
    fit = _read_samples(fit_path, case) if fit_path is not None and fit_path.exists() else None
    info = sched.solve_info
    try:
        report = harness.simulate(sched, case, heldout, info.get("method", cfg.method),
                                  info.get("ambiguity_set", cfg.set),
                                  info.get("rates", {}).get("eps_joint", cfg.eps_joint), fit=fit)
    except (harness.DataIntegrityError, SampleFileError) as exc:
        raise DataError(str(exc)) from exc
    out = Path(cfg.out)
    report.write(out, "report")
    if cfg.plots:
        from .plotting import plot_reliability

        plot_reliability([report], out / "reliability.png")
    lo, hi = report.wilson()
    print(f"mean daily reliability {report.mean:.3f}% (95% CI {lo:.3f}-{hi:.3f}) over {report.ok.shape[0]} days")
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig) -> int:
    case, doc, base = _load_case(cfg)
    fit_path = _samples_path(cfg, doc, base, "samples")
    held_path = _samples_path(cfg, doc, base, "heldout")
    if fit_path is None or held_path is None:
        raise UsageError("benchmark needs fit and held-out samples")
    fit, heldout = _read_samples(fit_path, case), _read_samples(held_path, case)
    moments = _moments(cfg, case, doc, base)
    out = Path(cfg.out)

    def progress(rep):
        logger.info("%-18s eps=%-5g %-12s mean=%.3f status=%s", rep.set, rep.eps_joint, rep.method, rep.mean,
                    rep.status)

    try:
        result = harness.run_grid(case, fit, heldout, cfg.methods, cfg.sets, cfg.eps_list, cfg.evo_config(),
                                  cfg.seed, moments, on_cell=progress)
    except harness.DataIntegrityError as exc:
        raise DataError(str(exc)) from exc
    paths = harness.write_grid(out, result)
    for (s, e), evo in sorted(result.evolution.items()):
        stem = f"evolution_{s}_{e:g}"
        _write_json(out / "evolution" / f"{stem}.json", evo.to_json())
        write_history(out / "evolution" / f"{stem}.csv", evo.history)
    if cfg.plots:
        from .plotting import plot_reliability

        plot_reliability(result.reports, out / "reliability.png")
    print(paths["summary"].read_text(), end="")
    return EXIT_OK


def cmd_rolling(cfg: RunConfig) -> int:
    case, doc, base = _load_case(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.deterministic:
        rcfg = harness.RollingConfig()
    else:
        moments = _moments(cfg, case, doc, base)
        try:
            rates, _ = _rates(cfg, case, moments, out)
        except (AmbiguityDomainError, RateConfigError) as exc:
            raise UsageError(str(exc)) from exc
        rcfg = harness.RollingConfig(moments, cfg.set, rates)
    try:
        trace = harness.rolling_horizon_run(case, None, rcfg)
    except ModelError as exc:
        raise Infeasible(str(exc), {"status": "infeasible", "error": str(exc)}) from exc
    _write_json(out / "rolling.json", trace.to_json())
    trace.write_csv(out / "rolling.csv")
    if cfg.plots:
        from .plotting import plot_rolling

        plot_rolling(trace, out / "rolling.png")
    print(f"{len(trace.steps)} steps, {trace.fallbacks} fallbacks")
    return EXIT_OK


COMMANDS = {
    "gen-case": cmd_gen_case,
    "fit": cmd_fit,
    "schedule": cmd_schedule,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "rolling": cmd_rolling,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config; its keys override the flags")
    common.add_argument("--case", help="case.json written by gen-case")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--set", choices=sorted(AMBIGUITY_SETS))
    common.add_argument("--eps-joint", dest="eps_joint", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--blackout", metavar="t0:H", help="blackout start hour and duration in hours")
    common.add_argument("--out")
    common.add_argument("--no-plots", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mgjcc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-case", parents=[common], help="generate the synthetic household feeder")
    p.add_argument("--households", type=int)
    p.add_argument("--intervals", type=int)
    p.add_argument("--error-family", dest="error_family")
    p.add_argument("--start-hour", dest="start_hour", type=float)
    p.add_argument("--span-hours", dest="span_hours", type=float)
    p = sub.add_parser("fit", parents=[common], help="estimate error moments from a sample file")
    p.add_argument("--samples")
    p.add_argument("--correlation", choices=("independent", "empirical"))
    p = sub.add_parser("schedule", parents=[common], help="solve the DR-JCC schedule")
    p.add_argument("--moments")
    p.add_argument("--samples")
    p = sub.add_parser("simulate", parents=[common], help="replay held-out errors against a schedule")
    p.add_argument("--schedule")
    p.add_argument("--heldout")
    p.add_argument("--samples")
    p = sub.add_parser("benchmark", parents=[common], help="run the method x set x eps grid")
    p.add_argument("--methods", type=_csv_list(str))
    p.add_argument("--sets", type=_csv_list(str))
    p.add_argument("--eps-list", dest="eps_list", type=_csv_list(float))
    p.add_argument("--moments")
    p = sub.add_parser("rolling", parents=[common], help="shrinking-horizon re-solve")
    p.add_argument("--moments")
    p.add_argument("--deterministic", action="store_true", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, AmbiguityDomainError, RateConfigError) as exc:
        print(f"mgjcc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"mgjcc: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, ModelError, SampleFileError) as exc:
        print(f"mgjcc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

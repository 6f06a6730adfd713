"""Multi-seed benchmark sweeps: instances, replicas, best-run summaries, CSV output.

Directory layout under the output root::

    summary.csv                      best row per (problem, dims, solver)
    <kind>_d<d>_m<m>/instance.csv
    <kind>_d<d>_m<m>/<solver>/replica_<k>.csv
    <kind>_d<d>_m<m>/<solver>/replicas.csv
    <kind>_d<d>_m<m>/<solver>/summary.csv
    <kind>_d<d>_m<m>/<solver>/manifest.json
    <kind>_d<d>_m<m>/<solver>/stationarity.csv   (after diagnose)

Seeds are derived by keyed splitting of the master seed. Replica ``k`` of
a cell uses the same ``alpha0`` and ``x0`` for every solver.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import RngStream, unit_sphere_vector
from .diagnostics import stationarity_trace
from .errors import ConfigError, SolverError, ZowcvxError
from .problems import generate_instance, make_problem, read_instance, write_instance
from .solvers import LAWS, RUNNERS, SOLVERS, RunRecord, SolverConfig, StepSchedule, TracePoint

log = logging.getLogger(__name__)

DEFAULT_ALPHA0 = {"phase": (1e-5, 1e-4), "blind": (1e-6, 1e-3)}
TRAJECTORY_COLUMNS = ["t", "alpha_t", "objective_full", "oracle_calls_cum", "wall_ms"]
SUMMARY_COLUMNS = ["problem", "d", "m", "solver", "best_replica", "best_seed", "final_objective",
                   "objective_at_t_star", "initial_objective", "alpha0", "law", "rho_bar",
                   "t_star", "oracle_calls", "wall_time_s", "runs_ok", "runs_failed"]
STATIONARITY_COLUMNS = ["t", "grad_norm", "envelope_value", "inner_residual"]


@dataclass
class ExperimentSpec:
    problem: str
    dims: list
    solvers: list = field(default_factory=lambda: ["psdfa"])
    runs: int = 10
    budget: Optional[int] = None
    alpha0_range: Optional[list] = None
    law: str = "constant-over-horizon"
    seed: int = 0
    output_dir: Optional[str] = None
    rho_bar: Optional[float] = None
    snapshot_stride: int = 0
    log_stride: int = 1
    init: str = "random"

    def __post_init__(self):
        if self.problem not in DEFAULT_ALPHA0:
            raise ConfigError(f"unknown problem {self.problem!r}; expected phase or blind", "problem")
        dims = self.dims
        if isinstance(dims, (list, tuple)) and len(dims) == 2 and all(isinstance(v, int) for v in dims):
            dims = [dims]
        try:
            self.dims = [(int(d), int(m)) for d, m in dims]
        except (TypeError, ValueError):
            raise ConfigError(f"expected a list of [d, m] pairs, got {self.dims!r}", "dims") from None
        if not self.dims or any(d < 1 or m < 1 for d, m in self.dims):
            raise ConfigError(f"dimensions must be positive, got {self.dims!r}", "dims")
        if not self.solvers:
            raise ConfigError("at least one solver is required", "solvers")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ConfigError(f"unknown solver {s!r}; expected one of {SOLVERS}", "solvers")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1", "runs")
        if self.budget is not None and self.budget < 0:
            raise ConfigError("budget must be >= 0", "budget")
        if self.alpha0_range is None:
            self.alpha0_range = list(DEFAULT_ALPHA0[self.problem])
        lo, hi = self.alpha0_range
        if not 0 < lo <= hi:
            raise ConfigError(f"need 0 < low <= high, got {self.alpha0_range}", "alpha0_range")
        if self.law not in LAWS:
            raise ConfigError(f"unknown law {self.law!r}; expected one of {LAWS}", "law")
        if self.rho_bar is not None and not self.rho_bar > 0:
            raise ConfigError("rho_bar must be positive", "rho_bar")
        if self.init not in ("random", "planted"):
            raise ConfigError(f"init must be random or planted, got {self.init!r}", "init")
        if self.snapshot_stride < 0 or self.log_stride < 1:
            raise ConfigError("strides must be positive", "snapshot_stride/log_stride")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", unknown[0])
        missing = [k for k in ("problem", "dims") if k not in data]
        if missing:
            raise ConfigError("required key missing", missing[0])
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read spec file: {exc}", "spec") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", "spec") from None
        if not isinstance(data, dict):
            raise ConfigError("spec must be a JSON object", "spec")
        return cls.from_dict(data)

    def horizon(self, m: int) -> int:
        return 1000 * m if self.budget is None else self.budget


def cell_name(kind, d, m) -> str:
    return f"{kind}_d{d}_m{m}"


def _f(v) -> str:
    return "%.17g" % v


def write_trajectory(record: RunRecord, path, dimension: int) -> None:
    snaps = any(p.x is not None for p in record.trajectory)
    cols = TRAJECTORY_COLUMNS + ([f"x_{k}" for k in range(dimension)] if snaps else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for p in record.trajectory:
            row = [p.t, _f(p.alpha), _f(p.objective), p.oracle_calls, "%.3f" % p.wall_ms]
            if snaps:
                row += [_f(v) for v in p.x] if p.x is not None else [""] * dimension
            w.writerow(row)


def read_trajectory(path) -> list[TracePoint]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory header {header[:5]}")
        nx = len(header) - 5
        for row in reader:
            xs = row[5:5 + nx]
            x = np.array([float(v) for v in xs]) if nx and xs[0] != "" else None
            out.append(TracePoint(int(row[0]), float(row[1]), float(row[2]), int(row[3]),
                                  float(row[4]), x))
    return out


def _replica_task(task: dict) -> dict:
    """Run one replica and write its trajectory; safe to call in a worker process."""
    inst = task["instance"]
    problem = make_problem(inst)
    schedule = StepSchedule(task["alpha0"], task["horizon"], task["law"])
    config = SolverConfig(schedule, rho_bar=task["rho_bar"], seed=task["solver_seed"],
                          log_stride=task["log_stride"], snapshot_stride=task["snapshot_stride"])
    if task["init"] == "planted":
        x0 = inst.x_bar if hasattr(inst, "A") else inst.z_bar
    else:
        x0 = unit_sphere_vector(RngStream(task["setup_seed"]).child("x0"), problem.dimension)
    result = {k: task[k] for k in ("solver", "replica", "alpha0", "solver_seed", "setup_seed")}
    try:
        record = RUNNERS[task["solver"]](problem, config, x0=x0)
    except SolverError as exc:
        record = exc.record
    except ZowcvxError as exc:
        record = RunRecord(solver=task["solver"], seed=task["solver_seed"], status="failed",
                           error=f"{type(exc).__name__}: {exc}")
    if record.trajectory:
        write_trajectory(record, task["path"], problem.dimension)
    result.update(
        status=record.status, error=record.error,
        initial_objective=record.initial_objective,
        final_objective=record.final_objective,
        objective_at_t_star=problem.full_objective(record.x_star) if record.x_star is not None
        else float("nan"),
        t_star=record.t_star, oracle_calls=record.oracle_calls, wall_time_s=record.wall_time,
        rho_bar=config.resolved_rho_bar(problem),
    )
    return result


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}", "output_dir") from None


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_f(v) if isinstance(v, float) else v) for k, v in r.items()})


def run_experiment(spec: ExperimentSpec, out_dir=None, parallel: int = 1,
                   diagnose: bool = False) -> tuple[int, list[dict]]:
    """Execute every cell of ``spec``; returns ``(exit_status, best_rows)``."""
    root = Path(out_dir or spec.output_dir or "runs")
    _ensure_dir(root)
    master = RngStream(spec.seed)
    tasks, cells = [], []
    for d, m in spec.dims:
        cell = master.child(spec.problem, d, m)
        inst = generate_instance(spec.problem, d, m, cell.child("instance"))
        cdir = root / cell_name(spec.problem, d, m)
        _ensure_dir(cdir)
        write_instance(inst, cdir / "instance.csv")
        setups = []
        for k in range(spec.runs):
            setup = cell.child("replica", k)
            alpha0 = float(setup.uniform(*spec.alpha0_range))
            setups.append((setup.seed, alpha0))
        for solver in spec.solvers:
            sdir = cdir / solver
            _ensure_dir(sdir)
            cells.append((d, m, solver, sdir, inst))
            for k, (setup_seed, alpha0) in enumerate(setups):
                tasks.append(dict(
                    instance=inst, solver=solver, replica=k, alpha0=alpha0,
                    setup_seed=setup_seed, solver_seed=cell.child_seed(solver, k),
                    horizon=spec.horizon(m), law=spec.law, rho_bar=spec.rho_bar,
                    log_stride=spec.log_stride, snapshot_stride=spec.snapshot_stride,
                    init=spec.init, path=str(sdir / f"replica_{k:02d}.csv"), cell=(d, m)))
    log.info("running %d replicas across %d cells", len(tasks), len(cells))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_replica_task, tasks))
    else:
        results = [_replica_task(t) for t in tasks]

    any_failed = False
    best_rows = []
    for (d, m, solver, sdir, inst), start in zip(cells, range(0, len(results), spec.runs)):
        reps = results[start:start + spec.runs]
        _write_rows(sdir / "replicas.csv",
                    ["replica", "status", "alpha0", "setup_seed", "solver_seed", "initial_objective",
                     "final_objective", "objective_at_t_star", "t_star", "oracle_calls", "wall_time_s",
                     "error"], reps)
        ok = [r for r in reps if r["status"] == "ok"]
        any_failed |= len(ok) < len(reps)
        manifest = {
            "version": __version__, "problem": spec.problem, "d": d, "m": m, "solver": solver,
            "master_seed": spec.seed, "instance_seed": inst.seed, "horizon": spec.horizon(m),
            "law": spec.law, "alpha0_range": list(spec.alpha0_range),
            "rho_bar": reps[0]["rho_bar"] if reps else spec.rho_bar,
            "log_stride": spec.log_stride, "snapshot_stride": spec.snapshot_stride,
            "x0": "planted signal" if spec.init == "planted"
            else "unit-sphere draw from RngStream(setup_seed).child('x0')",
            "blind_planting": "joint unit sphere in R^{2d}" if spec.problem == "blind" else None,
            "selection": "minimum full objective at x_T",
            "replicas": [{k: r[k] for k in ("replica", "alpha0", "setup_seed", "solver_seed", "status")}
                         for r in reps],
        }
        (sdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        if not ok:
            log.error("%s %s: every replica failed", cell_name(spec.problem, d, m), solver)
            continue
        best = min(ok, key=lambda r: (r["final_objective"], r["replica"]))
        row = dict(problem=spec.problem, d=d, m=m, solver=solver, best_replica=best["replica"],
                   best_seed=best["solver_seed"], final_objective=best["final_objective"],
                   objective_at_t_star=best["objective_at_t_star"],
                   initial_objective=best["initial_objective"], alpha0=best["alpha0"],
                   law=spec.law, rho_bar=best["rho_bar"], t_star=best["t_star"],
                   oracle_calls=best["oracle_calls"], wall_time_s=best["wall_time_s"],
                   runs_ok=len(ok), runs_failed=len(reps) - len(ok))
        _write_rows(sdir / "summary.csv", SUMMARY_COLUMNS, [row])
        best_rows.append(row)
    _write_rows(root / "summary.csv", SUMMARY_COLUMNS, best_rows)
    status = 2 if any_failed else 0
    if diagnose:
        try:
            diagnose_run(root, rho_bar=spec.rho_bar)
        except (ZowcvxError, ValueError) as exc:
            log.error("diagnose failed: %s", exc)
            status = 2
    return status, best_rows


def diagnose_run(run_dir, rho_bar: Optional[float] = None, stride: int = 1,
                 smoothed: bool = True) -> list[Path]:
    """Write ``stationarity.csv`` for the best replica of every solver directory."""
    root = Path(run_dir)
    written = []
    summaries = sorted(root.glob("*/*/summary.csv"))
    if not summaries:
        raise ValueError(f"{root}: no solver summaries found")
    for summary in summaries:
        sdir = summary.parent
        with open(summary, newline="") as fh:
            best = next(csv.DictReader(fh))
        traj = read_trajectory(sdir / f"replica_{int(best['best_replica']):02d}.csv")
        if not any(p.x is not None for p in traj):
            raise ValueError(f"{sdir}: trajectory has no iterate snapshots; "
                             "re-run with --snapshot-stride to enable snapshot logging")
        problem = make_problem(read_instance(sdir.parent / "instance.csv"))
        rb = float(best["rho_bar"]) if rho_bar is None else rho_bar
        record = RunRecord(solver=best["solver"], seed=int(best["best_seed"]), trajectory=traj)
        rows = stationarity_trace(record, problem, rb, stride=stride, smoothed=smoothed)
        path = sdir / "stationarity.csv"
        _write_rows(path, STATIONARITY_COLUMNS, [asdict(r) for r in rows])
        written.append(path)
        bad = [r for r in rows if r.status != "ok"]
        if bad:
            log.warning("%s: %d envelope evaluations failed", sdir, len(bad))
    return written


def configure_logging() -> None:
    level = os.environ.get("ZOWCVX_LOG", "error").lower()
    logging.basicConfig(level={"error": logging.ERROR, "info": logging.INFO,
                               "debug": logging.DEBUG}.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")

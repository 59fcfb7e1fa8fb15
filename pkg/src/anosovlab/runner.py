"""Suite scheduling and report output.

Suites sharing the deformed-model pipeline run as one task so the pipeline
is built once per run; other suites are independent tasks.  Tasks may run in
worker processes, but every report is a function of the config and the
master seed alone and is written by the parent in suite order, so the bytes
on disk do not depend on the worker count.  Wall time goes to a separate
``timing.txt`` that is not part of any report.
"""
from __future__ import annotations

import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import SUITES, ExperimentConfig
from .errors import AnosovLabError, ConfigError
from .report import canonical_json
from .suites import DEFORMED_SUITES, run_suite

__all__ = ["RunResult", "plan_tasks", "run", "write_reports", "EXIT_PASS", "EXIT_FAIL",
           "EXIT_CONFIG", "EXIT_NUMERICAL"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunResult:
    reports: dict = field(default_factory=dict)    # suite -> [reports]
    errors: dict = field(default_factory=dict)     # suite -> message
    timing: dict = field(default_factory=dict)     # suite -> seconds

    @property
    def exit_status(self):
        if self.errors:
            return EXIT_NUMERICAL
        if all(r.passed for reps in self.reports.values() for r in reps):
            return EXIT_PASS
        return EXIT_FAIL

    def failing_records(self):
        out = []
        for name, reps in self.reports.items():
            for r in reps:
                for rec in r.failures():
                    out.append((r.suite, rec))
        return out


def plan_tasks(suites):
    """Ordered tasks (tuples of suite names); deformed-model suites are grouped."""
    chosen = [s for s in SUITES if s in set(suites)]
    tasks, grouped = [], tuple(s for s in chosen if s in DEFORMED_SUITES)
    for s in chosen:
        if s in DEFORMED_SUITES:
            if s == grouped[0]:
                tasks.append(grouped)
        else:
            tasks.append((s,))
    return tasks


def _run_task(cfg, names, negative_controls):
    out = {}
    for name in names:
        t0 = time.perf_counter()
        try:
            reps = run_suite(cfg, name, negative_controls)
            out[name] = ("ok", reps, time.perf_counter() - t0)
        except (AnosovLabError, ArithmeticError, ValueError, RuntimeError) as exc:
            mod = type(exc).__module__
            msg = f"{name}: {mod}.{type(exc).__name__}: {exc}"
            out[name] = ("error", msg + "\n" + traceback.format_exc(),
                         time.perf_counter() - t0)
    return out


def run(cfg: ExperimentConfig, suites=None, workers=None, negative_controls=None,
        out_dir=None):
    """Run the selected suites; write reports when ``out_dir`` is given."""
    suites = cfg.suites if suites is None else list(suites)
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite(s): {', '.join(unknown)}")
    workers = cfg["run"]["workers"] if workers is None else int(workers)
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    neg = cfg["run"]["negative_controls"] if negative_controls is None else negative_controls
    tasks = plan_tasks(suites)
    res = RunResult()
    if workers == 1 or len(tasks) <= 1:
        done = [_run_task(cfg, t, neg) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
            futs = [ex.submit(_run_task, cfg, t, neg) for t in tasks]
            done = [f.result() for f in futs]
    for part in done:
        for name, (status, payload, dt) in part.items():
            res.timing[name] = dt
            if status == "ok":
                res.reports[name] = payload
            else:
                res.errors[name] = payload
    # suite order, independent of completion order
    res.reports = {s: res.reports[s] for s in SUITES if s in res.reports}
    if out_dir is not None:
        write_reports(res, out_dir)
    return res


def write_reports(res: RunResult, out_dir):
    """One JSON document per report, a manifest, error logs and a timing sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"suites": {}, "errors": sorted(res.errors)}
    for name, reps in res.reports.items():
        entry = []
        for r in reps:
            path = os.path.join(out_dir, f"{r.suite}.json")
            r.save(path)
            entry.append({"report": f"{r.suite}.json", "digest": r.digest(),
                          "passed": r.passed, "n_failed": len(r.failures())})
        manifest["suites"][name] = entry
    for name, msg in res.errors.items():
        with open(os.path.join(out_dir, f"{name}.error.txt"), "w", encoding="utf-8") as fh:
            fh.write(msg)
    manifest["exit_status"] = res.exit_status
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(manifest))
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="utf-8") as fh:
        for name in sorted(res.timing):
            fh.write(f"{name} {res.timing[name]:.2f}s\n")

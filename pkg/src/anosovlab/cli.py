"""Command line: ``anosovlab run | emit | list-suites``.

Exit status: 0 all checks pass, 1 a verification failure, 2 a configuration
error, 3 a numerical or pipeline error.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ExperimentConfig, _defaults, _validate, load_config
from .errors import ConfigError
from .report import load_report, write_curve_csv
from .runner import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERICAL, EXIT_PASS, run
from .suites import describe_suites

__all__ = ["main", "build_parser", "emit"]


def build_parser():
    p = argparse.ArgumentParser(prog="anosovlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run verification suites")
    r.add_argument("--config", metavar="PATH", help="INI experiment config")
    r.add_argument("--suite", action="append", metavar="NAME",
                   help="suite to run (repeatable; default: the config's [run] suites)")
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--workers", type=int, help="worker processes")
    r.add_argument("--out", metavar="DIR", help="output directory")
    r.add_argument("--negative-controls", action="store_true",
                   help="also run the negative controls (expected to fail)")

    e = sub.add_parser("emit", help="re-emit a saved report as a report or curve CSVs")
    e.add_argument("report", help="path of a saved report (digest is verified)")
    e.add_argument("--format", choices=("report", "csv"), default="csv")
    e.add_argument("--lemma", action="append", help="lemma(s) to export (default: all with t)")
    e.add_argument("--out", metavar="DIR", default=".")

    sub.add_parser("list-suites", help="list the available suites")
    return p


def _config_from_args(a):
    cfg = load_config(a.config) if a.config else ExperimentConfig(_validated_defaults())
    kw = {}
    if a.seed is not None:
        kw["seed"] = a.seed
    if a.workers is not None:
        kw["workers"] = a.workers
    if a.out is not None:
        kw["out"] = a.out
    if a.negative_controls:
        kw["negative_controls"] = True
    if a.suite:
        kw["suites"] = list(a.suite)
    return cfg.with_run(**kw) if kw else cfg


def _validated_defaults():
    secs = _defaults()
    _validate(secs)
    return secs


def emit(report_path, fmt="csv", lemmas=None, out_dir="."):
    """Write the report back out (``report``) or its margin-vs-t curves (``csv``)."""
    rep = load_report(report_path)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt == "report":
        path = os.path.join(out_dir, f"{rep.suite}.json")
        rep.save(path)
        return [path]
    names = lemmas or sorted({r["lemma"] for r in rep.records if "t" in r})
    for lemma in names:
        rows = rep.curve(lemma)
        if not rows:
            continue
        path = os.path.join(out_dir, f"{rep.suite}__{lemma.replace('/', '_')}.csv")
        write_curve_csv(path, ["t", "worst_margin"], [(float(t), float(m)) for t, m in rows])
        written.append(path)
    return written


def main(argv=None):
    a = build_parser().parse_args(argv)
    if a.command == "list-suites":
        for name, doc in describe_suites():
            print(f"{name:18s} {doc}")
        return EXIT_PASS
    if a.command == "emit":
        try:
            for path in emit(a.report, a.format, a.lemma, a.out):
                print(path)
        except (OSError, ValueError, KeyError) as exc:
            print(f"emit: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_PASS
    try:
        cfg = _config_from_args(a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg["run"]["out"]
    try:
        res = run(cfg, out_dir=out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, reps in res.reports.items():
        for r in reps:
            s = r.summary()
            tag = "PASS" if r.passed else "FAIL"
            print(f"{tag} {r.suite:28s} records={s['n_records']:4d} "
                  f"failed={s['n_failed']:3d} worst={s['worst_margin']}")
    for name, msg in res.errors.items():
        print(f"ERROR {msg.splitlines()[0]}", file=sys.stderr)
    for suite, rec in res.failing_records()[:20]:
        where = ", ".join(f"{k}={rec[k]}" for k in ("sample", "t", "eta", "m", "order")
                          if k in rec)
        print(f"  failing: {suite} {rec['lemma']} margin={rec['margin']:.3e} {where}")
    status = res.exit_status
    if status == EXIT_NUMERICAL:
        return EXIT_NUMERICAL
    return EXIT_FAIL if status == EXIT_FAIL else EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())

"""Verification reports: per-check records plus a recomputable summary.

Reports serialise to canonical JSON (sorted keys, fixed separators, round-trip
float repr) so that identical inputs give identical bytes.  Curve CSVs use 17
significant digits.  Wall-clock time is deliberately kept out of the document.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math

import numpy as np

__all__ = ["VerificationReport", "canonical_json", "load_report", "write_curve_csv",
           "fmt_float"]


def fmt_float(x):
    return format(float(x), ".17g")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return x
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, fixed separators; floats use the shortest round-trip repr."""
    return json.dumps(_clean(obj), sort_keys=True, indent=1, separators=(",", ": "),
                      ensure_ascii=False, allow_nan=False) + "\n"


class VerificationReport:
    """Per-lemma pass/fail record set."""

    def __init__(self, suite, params=None):
        self.suite = suite
        self.params = dict(params or {})
        self.records = []
        self.digests = {}
        self.notes = {}

    def add(self, lemma, sample, margin, passed, **extra):
        rec = {"lemma": lemma, "sample": int(sample), "margin": float(margin),
               "passed": bool(passed)}
        rec.update(extra)
        self.records.append(rec)
        return rec

    def note(self, key, value):
        self.notes[key] = value

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.records)

    def failures(self):
        return [r for r in self.records if not r["passed"]]

    def summary(self):
        if not self.records:
            return {"n_records": 0, "n_failed": 0, "pass_rate": 1.0,
                    "worst_margin": None, "passed": True}
        m = [r["margin"] for r in self.records]
        nf = sum(not r["passed"] for r in self.records)
        return {"n_records": len(self.records), "n_failed": nf,
                "pass_rate": 1.0 - nf / len(self.records),
                "worst_margin": min(m), "passed": nf == 0}

    def worst(self, lemma=None):
        recs = [r for r in self.records if lemma is None or r["lemma"] == lemma]
        return min(recs, key=lambda r: r["margin"]) if recs else None

    def merge(self, other, prefix=None):
        for r in other.records:
            r = dict(r)
            if prefix:
                r["lemma"] = f"{prefix}/{r['lemma']}"
            self.records.append(r)
        for k, v in other.notes.items():
            self.notes[f"{prefix}/{k}" if prefix else k] = v
        self.digests.update(other.digests)
        return self

    def as_dict(self):
        return {"suite": self.suite, "params": self.params, "records": self.records,
                "summary": self.summary(), "digests": self.digests, "notes": self.notes}

    def to_json(self) -> str:
        return canonical_json(self.as_dict())

    def digest(self) -> str:
        body = canonical_json({k: v for k, v in self.as_dict().items() if k != "digests"})
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def save(self, path):
        doc = self.as_dict()
        doc["digest"] = self.digest()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical_json(doc))

    def curve(self, lemma):
        """``(t, worst_margin)`` pairs for records carrying a time."""
        best = {}
        for r in self.records:
            if r["lemma"] == lemma and "t" in r:
                t = r["t"]
                best[t] = min(best.get(t, math.inf), r["margin"])
        return sorted(best.items())


def load_report(path, verify=True):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    rep = VerificationReport(doc["suite"], doc["params"])
    rep.records = doc["records"]
    rep.digests = doc.get("digests", {})
    rep.notes = doc.get("notes", {})
    if verify and doc.get("digest") != rep.digest():
        raise ValueError(f"digest mismatch in {path}")
    return rep


def write_curve_csv(path_or_buf, header, rows):
    """CSV with a one-line header and 17-significant-digit floats."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if own:
            fh.close()


def csv_text(header, rows):
    buf = io.StringIO()
    write_curve_csv(buf, header, rows)
    return buf.getvalue()

"""Acceptance oracles, one test per criterion.

The full default configuration runs once per session with the negative
controls enabled; each test reads its suite's reports and checks the
criterion's numbers against independent expectations.  Each test prints a
single ``criterion N ... PASS|FAIL`` line (also collected in the terminal
summary).
"""
import filecmp
import math
from pathlib import Path

import numpy as np
import pytest

from anosovlab import resolvent_probe as rp
from anosovlab.config import load_config
from anosovlab.runner import run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def full(tmp_path_factory):
    cfg = load_config(CONFIGS / "all.ini")
    out = tmp_path_factory.mktemp("full")
    res = run(cfg, workers=2, negative_controls=True, out_dir=out)
    assert not res.errors, res.errors
    return res


@pytest.fixture
def say(request):
    def _say(n, title, ok, detail=""):
        line = f"criterion {n} {title:22s} {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        request.config.acceptance_lines[n] = line
        print(line)
    return _say


def reports(res, suite):
    reps = {r.suite: r for r in res.reports[suite]}
    return reps[suite], reps.get(suite + ".control")


def recs(rep, lemma):
    return [r for r in rep.records if r["lemma"] == lemma]


def worst(rs):
    return min(r["margin"] for r in rs)


def test_metric_lemma(full, say):
    rep, ctl = reports(full, "metric_lemma")
    tg = sorted({r["t"] for r in rep.records})
    checks = {
        "grid": len(tg) == 51 and tg[0] == 0.0 and abs(tg[-1] - 5.0) < 1e-12,
        "points": rep.params["metric_lemma"]["n_points"] == 200,
        "sigma": rep.params["sigma/canonical"] == math.log((3 + math.sqrt(5)) / 2)
        and rep.params["sigma/wobbled"] > 0,
        "canonical": worst([r for r in rep.records if r["lemma"].startswith("canonical/")]) >= -1e-6,
        "wobbled": worst([r for r in rep.records if r["lemma"].startswith("wobbled/")]) >= -1e-6,
        "control-fails": ctl is not None and not ctl.passed,
        "time": full.timing["metric_lemma"] <= 120,
    }
    ok = all(checks.values())
    say(1, "metric lemma", ok, f"worst={rep.summary()['worst_margin']:.2e} "
        f"control_failed={len(ctl.failures())} t={full.timing['metric_lemma']:.1f}s")
    assert ok, checks


def test_cone_corollary(full, say):
    rep, ctl = reports(full, "cone_corollary")
    names = {r["lemma"].split("/")[1] for r in rep.records}
    checks = {
        "four": names == {"backward-cone", "forward-complement", "backward-expansion",
                          "forward-bound"},
        "size": rep.params["cone_corollary"]["n_points"] == 200
        and rep.params["cone_corollary"]["n_dir"] == 64,
        "margin": worst(rep.records) >= -1e-6,
        "pass": rep.passed,
        "control-fails": not ctl.passed,
    }
    ok = all(checks.values())
    say(2, "cone corollary", ok, f"worst={rep.summary()['worst_margin']:.2e} "
        f"control_failed={len(ctl.failures())}")
    assert ok, checks


def test_flow_smoothness(full, say):
    rep, _ = reports(full, "flow_smoothness")
    p = rep.params
    fs = recs(rep, "flow-smoothness")
    dbl = recs(rep, "push-doubling")[0]
    N_expected = math.ceil(p["N_eps"] * math.log(1 / p["rho"]) - 1e-9)
    checks = {
        "rho": p["rho"] == 0.05 and p["model"] == "wobbled",
        "N": p["N"] == N_expected,
        "eps": abs(p["eps"] - p["varsigma"] / 20) < 1e-15,
        "times": all(0 < r["t"] <= 1 for r in fs),
        "sup": max(r["ratio"] for r in fs) <= p["eps"],
        "doubling": dbl["sup_N"] / dbl["sup_2N"] >= 2,
        "time": full.timing["flow_smoothness"] <= 300,
    }
    ok = all(checks.values())
    say(3, "flow smoothness", ok, f"N={p['N']} sup={max(r['ratio'] for r in fs):.3e} "
        f"eps={p['eps']:.3e} reduction={dbl['sup_N'] / dbl['sup_2N']:.1f}")
    assert ok, checks


def test_good_expansion(full, say):
    rep, ctl = reports(full, "good_expansion")
    e0 = rep.params["eta0"]
    want = sorted([0.0, e0 / 2, -e0 / 2, e0, -e0])
    etas = sorted({r["eta"] for r in rep.records})
    checks = {
        "etas": np.allclose(etas, want, rtol=0, atol=1e-15 * e0),
        "three": {r["lemma"] for r in rep.records} == {"backward-expansion",
                                                       "unstable-expansion",
                                                       "cone-contraction"},
        "pass": rep.passed,
        "control-fails": not ctl.passed,
        "control-eta": np.isclose(max(abs(r["eta"]) for r in ctl.records), 10 * e0),
    }
    ok = all(checks.values())
    say(4, "good expansion", ok, f"eta0={e0:.3e} worst={rep.summary()['worst_margin']:.2e} "
        f"control_failed={len(ctl.failures())}")
    assert ok, checks


def test_graph_oracle(full, say):
    rep, _ = reports(full, "graph_oracle")
    slope = recs(rep, "slope-oracle")[0]
    jets = recs(rep, "jet-oracle")
    lin = recs(rep, "linear-slope-scaling")
    checks = {
        "leaves": slope["count"] == 50,
        "slope": slope["error"] <= 1e-5,
        "jets": sorted(r["order"] for r in jets) == [1, 2, 3]
        and max(r["error"] for r in jets) <= 1e-5,
        "linear-order1": len(lin) >= 1 and max(r["error"] for r in lin) <= 1e-9,
        "pass": rep.passed,
    }
    ok = all(checks.values())
    say(5, "graph oracle", ok, f"slope_err={slope['error']:.1e} "
        f"jet_err={max(r['error'] for r in jets):.1e} "
        f"linear_err={max(r['error'] for r in lin):.1e}")
    assert ok, checks


def test_sigma_invariance(full, say):
    rep, ctl = reports(full, "sigma_invariance")
    e0 = rep.params["eta0"]
    jb = recs(rep, "jet-bound")
    fits = recs(rep, "perturbation-fit-stability")
    checks = {
        "etas": sorted({r["eta"] for r in jb}) == sorted([0.0, e0, -e0]),
        "times": all(0 < r["t"] <= 2 for r in jb),
        "bounds": all(r["passed"] for r in jb + recs(rep, "initial-jet-bound")),
        "halved-fails": not ctl.passed,
        "perturbation-bound": all(r["passed"] for r in recs(rep, "perturbation-bound")),
    }
    stable = all(r["passed"] for r in fits)
    ok = all(checks.values()) and stable
    spread = ", ".join(f"r'={r['order']}: {r['C_first_half']:.3g} vs {r['C_second_half']:.3g}"
                       for r in fits)
    say(6, "sigma invariance", ok,
        f"M={rep.params['M']:.0f} bounds={'ok' if checks['bounds'] else 'violated'} "
        f"C-stability={'ok' if stable else 'unstable'} ({spread})")
    assert all(checks.values()), checks
    if not stable:
        pytest.xfail("fitted perturbation constant C is not stable across leaves "
                     "within the required spread")


def test_covering(full, say):
    rep, _ = reports(full, "covering")
    C_cover = rep.params["covering"]["C_cover"]
    ts = sorted({r["t"] for r in rep.records if "t" in r})
    items = ("covering", "containment", "overlap", "partition-support", "partition-norm")
    ov = recs(rep, "overlap")
    net = recs(rep, "net-size-oracle")
    checks = {
        "times": ts == [0.5, 1.0, 2.0],
        "items": all(r["passed"] for k in items for r in recs(rep, k)),
        "sum": all(r["margin"] >= 0 for r in recs(rep, "partition-sum"))
        and rep.params["covering"]["n_partition"] >= 10_000,
        "overlap": max(r["overlap"] for r in ov) <= C_cover,
        "net": all(abs(r["size"] - r["oracle"]) <= 1 for r in net),
        "pass": rep.passed,
    }
    ok = all(checks.values())
    by_t = {t: max(r["overlap"] for r in ov if r["t"] == t) for t in ts}
    say(7, "covering", ok, f"overlap_by_t={by_t} C_cover={C_cover:g}")
    assert ok, checks


def test_resolvent(full, say):
    rep, _ = reports(full, "resolvent")
    # independent closed forms
    b, z = 0.5, 1.0
    R = rp.resolvent(z, rp.SemigroupSample.scalar(b))[0, 0]
    # head of the scalar sample b=1 at z=1, K=1: P(m, 6) / 2^m
    heads = [rp.split_head_tail(1.0, m, 1.0, rp.SemigroupSample.scalar(1.0)).head[0, 0].real
             for m in range(1, 7)]
    exact = [(1 - sum(math.exp(-6.0) * 6.0 ** j / math.factorial(j) for j in range(m))) / 2.0 ** m
             for m in range(1, 7)]
    split = recs(rep, "split-identity")
    head = recs(rep, "head-bound")
    checks = {
        "scalar": abs(R - 1 / (z + b)) < 1e-13,
        "scalar-head": np.allclose(heads, exact, rtol=1e-10),
        "closed-form": all(r["passed"] for r in recs(rep, "closed-form")),
        "split": {r["m"] for r in split} == set(range(1, 7)) and all(r["passed"] for r in split),
        "head": {r["m"] for r in head} == set(range(1, 13))
        and all(r["passed"] for r in head + recs(rep, "ratio-test")),
        "pass": rep.passed,
        "time": full.timing["resolvent"] <= 30,
    }
    ok = all(checks.values())
    say(8, "resolvent", ok, f"worst={rep.summary()['worst_margin']:.2e} "
        f"t={full.timing['resolvent']:.1f}s")
    assert ok, checks


def test_determinism(tmp_path, say):
    cfg = load_config(CONFIGS / "smoke.ini")
    outs = []
    for w in (1, 3):
        out = tmp_path / f"w{w}"
        run(cfg, workers=w, out_dir=out)
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.json"))
    same, diff, _ = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    ok = len(names) > 8 and not diff and len(same) == len(names)
    say(9, "determinism", ok, f"{len(same)}/{len(names)} reports byte-identical (workers 1 vs 3)")
    assert ok, diff

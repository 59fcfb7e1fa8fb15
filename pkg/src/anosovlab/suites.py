"""Verification suites: each builds what it needs from a config and returns reports.

A suite returns a list of :class:`VerificationReport`; the first one is the
suite itself and any further ones are negative controls (named
``<suite>.control``), which are expected to fail.  Shared intermediate
objects (averaging parameters, the deformed-model foliations, calibrated
constants) are memoised per process and depend only on the config and the
master seed, never on which suite asked first.
"""
from __future__ import annotations

import math

import numpy as np

from . import adapted_metric as am
from . import cone_fields as cf
from . import flow_core as fc
from . import leaves as lv
from . import resolvent_probe as rp
from .config import ExperimentConfig, suite_seed
from .report import VerificationReport

__all__ = ["REGISTRY", "DEFORMED_SUITES", "run_suite", "describe_suites", "clear_cache"]

_CACHE = {}


def clear_cache():
    _CACHE.clear()


def _memo(key, build):
    if key not in _CACHE:
        _CACHE[key] = build()
    return _CACHE[key]


def _key(cfg: ExperimentConfig, *sections):
    frozen = []
    for s in sections:
        frozen.append((s, tuple((k, tuple(v) if isinstance(v, list) else v)
                                for k, v in sorted(cfg[s].items()))))
    return (cfg.seed, tuple(frozen))


def _time_grid(t_max, step):
    return np.round(np.arange(0.0, t_max + 0.5 * step, step), 10)


def _rng(cfg, name):
    return np.random.default_rng(suite_seed(cfg.seed, name))


def _constant_metric_two(model, params):
    es, eu = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    return am.MetricTwo(model, params, lambda P: np.tile(es, (len(P), 1)),
                        lambda P: np.tile(eu, (len(P), 1)))


# -- shared stages -------------------------------------------------------------------

def model_setup(cfg, name):
    """Model and averaging parameters for a shipped model."""
    mc = cfg["model"]

    def build():
        m = fc.make_model(name, kappa=mc["kappa"], wobble=mc["wobble"])
        lam, cs = am.hyperbolicity_constants(m)
        K = mc["K_deformed"] if name == "deformed" else mc["K_linear"]
        return m, am.choose_averaging_params(m, lam, cs, K=K)

    return _memo(("model", name, _key(cfg, "model")), build)


def sigma_for(cfg, name, P, t_grid, log_ratios):
    """Exact rate on the canonical model, calibrated otherwise."""
    if name == "canonical":
        return fc.LOG_LAMBDA
    return am.calibrate_sigma(log_ratios, t_grid)


def deformed_pipeline(cfg):
    """Smoothed, pushed foliations of the deformed model and the metric they define."""
    pc = cfg["pipeline"]

    def build():
        m, p = model_setup(cfg, "deformed")
        g = (pc["grid"],) * 3
        pushed = {}
        for kind in ("unstable", "stable"):
            raw = cf.raw_distribution(m, p, kind, g, horizon=pc["field_horizon"])
            sm = cf.smooth_distribution(raw, pc["smoothing"])
            pushed[kind] = cf.build_pushed_foliation(sm, pc["push"])
        m2 = am.MetricTwo(m, p, pushed["stable"].vectors, pushed["unstable"].vectors)
        return {"model": m, "params": p, "foliations": pushed, "metric2": m2}

    return _memo(("deformed", _key(cfg, "model", "pipeline")), build)


def expansion_constants(cfg):
    """``(varsigma, varsigma_max, eta0, raw0, points)`` for the deformed model."""
    pc, gc = cfg["pipeline"], cfg["good_expansion"]

    def build():
        d = deformed_pipeline(cfg)
        P = _rng(cfg, "pipeline").random((gc["n_points"], 3))
        tg = np.asarray(pc["t_grid"], float)
        raw0 = cf.good_expansion_raw(d["model"], d["metric2"], P, tg, pc["rho"], gc["n_dir"])
        vmax = cf.calibrate_varsigma(raw0, tg, pc["rho"], gc["slack"])
        vs = pc["varsigma_fraction"] * vmax
        eta0 = cf.calibrate_eta0(d["model"], d["metric2"], fc.default_perturbation(r=2),
                                 P[:gc["calibration_points"]], tg, pc["rho"], vs,
                                 n_dir=gc["calibration_dirs"], slack=gc["slack"])
        return {"varsigma": vs, "varsigma_max": vmax, "eta0": eta0, "raw0": raw0, "points": P}

    return _memo(("expansion", _key(cfg, "model", "pipeline", "good_expansion")), build)


def _control(suite, main_params, control_rep, what):
    """Wrap a control report: it passes as a control iff its checks fail."""
    control_rep.suite = f"{suite}.control"
    control_rep.params = {**main_params, **control_rep.params, "control": what}
    w = control_rep.worst()
    control_rep.note("expected", "fail")
    if w is not None:
        control_rep.note("first_failure", {k: w[k] for k in ("lemma", "sample", "margin")
                                           if k in w} | {k: w[k] for k in ("t", "eta", "m")
                                                          if k in w})
    return control_rep


# -- suites --------------------------------------------------------------------------

def metric_lemma(cfg):
    """Expansion/contraction rates of the averaged metric on the linear models."""
    c = cfg["metric_lemma"]
    rep = VerificationReport("metric_lemma", cfg.echo("metric_lemma", "model"))
    ctl = VerificationReport("metric_lemma.control")
    tg = _time_grid(c["t_max"], c["t_step"])
    for name in c["models"]:
        m, p = model_setup(cfg, name)
        P = _rng(cfg, f"metric_lemma/{name}").random((c["n_points"], 3))
        lr = am.metric_lemma_log_ratios(m, p, P, tg, cfg["model"]["horizon"])
        sig = sigma_for(cfg, name, P, tg, lr)
        r = am.verify_metric_lemma(m, p, P, tg, sigma=sig, slack=c["slack"], log_ratios=lr)
        rep.merge(r, prefix=name)
        rep.params[f"sigma/{name}"] = sig
        rep.params[f"averaging/{name}"] = p.as_dict()
        rc = am.verify_metric_lemma(m, p, P, tg, sigma=sig * c["sigma_inflation"],
                                    slack=c["slack"], log_ratios=lr)
        ctl.merge(rc, prefix=name)
    return [rep, _control("metric_lemma", rep.params, ctl,
                          f"sigma x {c['sigma_inflation']!r}")]


def cone_corollary(cfg):
    """Invariance and expansion of the metric-one cones at calibrated aperture."""
    c = cfg["cone_corollary"]
    rep = VerificationReport("cone_corollary", cfg.echo("cone_corollary", "model"))
    ctl = VerificationReport("cone_corollary.control")
    tg = _time_grid(c["t_max"], c["t_step"])
    hz = cfg["model"]["horizon"]
    for name in c["models"]:
        m, p = model_setup(cfg, name)
        P = _rng(cfg, f"cone_corollary/{name}").random((c["n_points"], 3))
        lr = am.metric_lemma_log_ratios(m, p, P, tg, hz)
        sig = sigma_for(cfg, name, P, tg, lr)
        grams = cf._corollary_grams(m, p, P, tg, hz)
        r0 = cf.calibrate_rho0(*grams, tg, sig, c["n_dir"], c["slack"])
        rho1 = c["rho1_fraction"] * r0
        r = cf.verify_cone_corollary(m, p, P, tg, rho1, sig, c["n_dir"], c["slack"], hz, grams)
        rep.merge(r, prefix=name)
        rep.params.update({f"sigma/{name}": sig, f"rho0/{name}": r0, f"rho1/{name}": rho1})
        rc = cf.verify_cone_corollary(m, p, P, tg, rho1 * c["aperture_inflation"], sig,
                                      c["n_dir"], c["slack"], hz, grams)
        ctl.merge(rc, prefix=name)
    return [rep, _control("cone_corollary", rep.params, ctl,
                          f"aperture x {c['aperture_inflation']!r}")]


def flow_smoothness(cfg):
    """Flow derivative of the pushed, mollified unstable distribution."""
    c, pc = cfg["flow_smoothness"], cfg["pipeline"]
    m, p = model_setup(cfg, c["model"])
    rng = _rng(cfg, "flow_smoothness")
    P = rng.random((c["n_points"], 3))
    tg = np.asarray(pc["t_grid"], float)
    m2 = _constant_metric_two(m, p) if m.is_linear else deformed_pipeline(cfg)["metric2"]
    raw0 = cf.good_expansion_raw(m, m2, P, tg, pc["rho"], cfg["good_expansion"]["calibration_dirs"])
    vs = pc["varsigma_fraction"] * cf.calibrate_varsigma(raw0, tg, pc["rho"])
    eps = vs / c["eps_divisor"]
    rho_m = c["smoothing"]
    raw = cf.raw_distribution(m, p, "unstable", (pc["grid"],) * 3, horizon=pc["field_horizon"],
                              seed_amplitude=c["seed_amplitude"] if m.is_linear else 0.0)
    sm = cf.smooth_distribution(raw, rho_m)
    n_star, _ = cf.calibrate_contraction(m, p, P[:20], rho_m)
    t_s = np.linspace(1.0 / c["n_t"], 1.0, c["n_t"])
    _, N_eps, R0 = cf.calibrate_push(p, sm, P, t_s, eps, n_star)
    N = int(math.ceil(N_eps * math.log(1.0 / rho_m) - 1e-9))
    fol = cf.build_pushed_foliation(sm, N, N_eps)
    r1 = cf.flow_smoothness_ratios(p, fol, P, t_s)
    rep = cf.verify_flow_smoothness(p, fol, P, t_s, eps, ratios=r1)
    rep.params.update(cfg.echo("flow_smoothness"))
    rep.params.update({"varsigma": vs, "N": N, "N_eps": N_eps, "N_star": n_star,
                       "unpushed_sup": R0})
    r2, _ = cf.flow_smoothness_ratios(p, cf.build_pushed_foliation(sm, 2 * N), P, t_s)
    s1, s2 = float(r1[0].max()), float(r2.max())
    red = s1 / s2 if s2 > 0 else math.inf
    rep.add("push-doubling", sample=0, margin=min(red, 1e300) - c["min_reduction"],
            passed=bool(red >= c["min_reduction"]), sup_N=s1, sup_2N=s2, N=N)
    rep.note("smoothing", {k: v for k, v in sm.provenance.items()
                           if isinstance(v, (int, float, str, bool))})
    return [rep]


def good_expansion(cfg):
    """Metric-two expansion and cone contraction under small perturbations."""
    c, pc = cfg["good_expansion"], cfg["pipeline"]
    d = deformed_pipeline(cfg)
    e = expansion_constants(cfg)
    eta0, vs = e["eta0"], e["varsigma"]
    tg = np.asarray(pc["t_grid"], float)
    k = c["control_factor"]
    pert = fc.default_perturbation(r=2).with_eta(0.0, eta_cap=k * eta0)
    etas = [0.0, eta0 / 2, -eta0 / 2, eta0, -eta0]
    rep = cf.verify_good_expansion(d["model"], d["metric2"], pert, etas, e["points"], tg,
                                   pc["rho"], vs, c["n_dir"], c["slack"],
                                   raws={0.0: e["raw0"]})
    rep.params.update({"eta0": eta0, "varsigma_max": e["varsigma_max"],
                       **cfg.echo("good_expansion", "pipeline")})
    ctl = cf.verify_good_expansion(d["model"], d["metric2"], pert, [k * eta0, -k * eta0],
                                   e["points"], tg, pc["rho"], vs, c["n_dir"], c["slack"])
    return [rep, _control("good_expansion", rep.params, ctl, f"eta = +-{k!r} eta0")]


def graph_oracle(cfg):
    """Transported leaf jets against a finite-difference oracle."""
    c = cfg["graph_oracle"]
    d = deformed_pipeline(cfg)
    rng = _rng(cfg, "graph_oracle")
    rep = VerificationReport("graph_oracle", cfg.echo("graph_oracle"))
    L = lv.random_leaves(d["metric2"], rng.random((c["n_leaves"], 3)), rng, M0=c["M0"])
    res = lv.evolve_leaf(d["model"], d["metric2"], L, c["t"])
    orc = lv.slope_oracle(d["model"], d["metric2"], L, c["t"])
    se, je = lv.oracle_errors(res, orc)
    w = int(np.argmax(se))
    rep.add("slope-oracle", sample=w, margin=c["tol"] - se[w], passed=bool(se[w] <= c["tol"]),
            t=c["t"], error=float(se[w]), count=len(L))
    for k in range(je.shape[1]):
        w = int(np.argmax(je[:, k]))
        rep.add("jet-oracle", sample=w, margin=c["tol"] - je[w, k],
                passed=bool(je[w, k] <= c["tol"]), t=c["t"], order=k + 1,
                error=float(je[w, k]), count=len(L))
    ser = lv.transport_jets(res.blocks, res.slope_initial, res.xi_map)
    err = float(np.abs(ser - res.jets).max() / max(np.abs(res.jets).max(), 1e-300))
    rep.add("series-vs-composition", sample=0, margin=c["tol"] - err, passed=bool(err <= c["tol"]),
            t=c["t"], error=err)
    # linear model in the splitting frame: D^k S scales by lambda^-(k+2)t
    m, p = model_setup(cfg, "canonical")
    m2 = _constant_metric_two(m, p)
    Lc = lv.random_leaves(m2, rng.random((c["linear_leaves"], 3)), rng, M0=c["M0"])
    for j, lf in enumerate(Lc):
        # tilt the tangent off the stable axis so the slope itself is non-zero
        tilt = np.zeros_like(lf.coeffs)
        tilt[1] = 0.1 * fc.REF_FRAME[:, 1] * (1 + j / len(Lc))
        Lc[j] = lv.AdmissibleLeaf(lf.center, lf.coeffs + tilt, lf.delta, lf.B, lf.M, lf.rho)
    lam = fc.LAMBDA_PLUS
    for t in c["linear_times"]:
        r = lv.evolve_leaf(m, m2, Lc, t, frame="splitting")
        for k in range(r.jets.shape[1]):
            want = r.jets_initial[:, k, 0] * lam ** (-(k + 2) * t)
            scale = np.maximum(np.abs(r.jets_initial[:, k, 0]), 1e-300)
            e_k = np.abs(r.jets[:, k, 0] - want) / scale
            w = int(np.argmax(e_k))
            rep.add("linear-slope-scaling" if k == 0 else "linear-jet-scaling", sample=w,
                    margin=c["linear_tol"] - e_k[w], passed=bool(e_k[w] <= c["linear_tol"]),
                    t=float(t), order=k + 1, error=float(e_k[w]))
    return [rep]


def _leaf_scale(cfg):
    pc = cfg["pipeline"]
    return lv.admissible_delta(pc["M_leaf"], pc["B_leaf"], pc["rho"])


def sigma_invariance(cfg):
    """Jet bounds of evolved leaves and their dependence on the perturbation."""
    c = cfg["sigma_invariance"]
    d = deformed_pipeline(cfg)
    eta0 = expansion_constants(cfg)["eta0"]
    rng = _rng(cfg, "sigma_invariance")
    delta = _leaf_scale(cfg)
    L = lv.random_leaves(d["metric2"], rng.random((c["n_leaves"], 3)), rng, M0=c["M0"],
                         delta=delta, B=cfg["pipeline"]["B_leaf"], rho=cfg["pipeline"]["rho"])
    pert = fc.default_perturbation(r=2).with_eta(0.0, eta_cap=eta0)
    etas = [0.0, eta0, -eta0]
    tabs, owner = lv.sigma_jet_tables(d["model"], d["metric2"], pert, etas, L, c["t_grid"],
                                      c["n_points"])
    M = lv.calibrate_M(list(tabs.values()), c["M_start"])
    rep = lv.verify_sigma_invariance(tabs, owner, M, etas, c["t_grid"], spread=c["fit_spread"])
    rep.params.update({"eta0": eta0, "delta": delta, **cfg.echo("sigma_invariance")})
    M_leaf = cfg["pipeline"]["M_leaf"]
    rep.add("leaf-scale", sample=0, margin=math.log(M_leaf / M), passed=bool(M <= M_leaf),
            M=M, M_leaf=M_leaf)
    ctl = lv.verify_sigma_invariance(tabs, owner, M / 2, etas, c["t_grid"])
    ctl.records = [r for r in ctl.records if r["lemma"] in ("jet-bound", "initial-jet-bound")]
    return [rep, _control("sigma_invariance", rep.params, ctl, "M / 2")]


def covering(cfg):
    """Greedy nets and partitions of unity on images of admissible leaves."""
    c, pc = cfg["covering"], cfg["pipeline"]
    d = deformed_pipeline(cfg)
    rng = _rng(cfg, "covering")
    delta = _leaf_scale(cfg)
    L = lv.random_leaves(d["metric2"], rng.random((c["n_leaves"], 3)), rng, M0=1.0,
                         delta=delta, B=pc["B_leaf"], rho=pc["rho"])
    rep = VerificationReport("covering", cfg.echo("covering"))
    slopes = max(float(lv.cone_slopes(d["metric2"], lf).max()) for lf in L)
    rep.add("leaves-in-cone", sample=0, margin=pc["rho"] - slopes, passed=bool(slopes <= pc["rho"]))
    tg = [float(t) for t in c["t_grid"]]
    arcs = lv.leaf_image_arcs(d["model"], d["metric2"], L, tg)
    lo = min(lv.expansion_rates([arcs[(i, t)][2] for i in range(len(L))], t)[0] for t in tg)
    hi = max(lv.expansion_rates([arcs[(i, t)][2] for i in range(len(L))], t)[1] for t in tg)
    Lam = c["rate_margin"] * hi
    B = lv.choose_B(lo, Lam, tg)
    rep.params.update({"delta": delta, "Lambda": Lam, "varsigma_leaf": lo, "B": B})
    rep.add("B-admissible", sample=0, margin=L[0].B - B, passed=bool(B <= L[0].B), B=B)
    sizes = {}
    for t in tg:
        for i in range(len(L)):
            u, s, _ = arcs[(i, t)]
            cov = lv.vitali_cover(s, u, t, Lam, delta, B)
            lv.partition_of_unity(cov, n=c["n_partition"])
            lv.verify_cover(cov, c["C_cover"], c["C_part"], rep=rep, sample=i)
            sizes[f"{i}/{t!r}"] = [cov.size, cov.overlap, cov.ell_max]
    rep.note("size_overlap_ellmax", sizes)
    return [rep]


def resolvent(cfg):
    """Quadrature resolvents, head/tail split and head bound for matrix semigroups."""
    c = cfg["resolvent"]
    rng = _rng(cfg, "resolvent")
    rep = VerificationReport("resolvent", cfg.echo("resolvent"))
    z, K, tol = c["z"], c["K"], c["tol"]
    zs = [z, z + 0.5 + 1.0j, 2.0 * z]
    sc = rp.SemigroupSample.scalar(c["scalar_b"])
    rp.verify_resolvent_identities(sc, zs, tol=tol, rep=rep, rng=rng)
    for m in range(1, c["m_split"] + 1):
        q = rp.check_scalar_head(c["scalar_b"], z, K, m)
        sp = rp.split_head_tail(z, m, K, sc)
        err = abs(float(sp.head[0, 0].real) - q) / max(abs(q), 1e-300)
        rep.add("scalar-head", sample=m, margin=tol - err, passed=bool(err <= tol), m=m,
                error=err)
    g = rp.SemigroupSample.random(c["dim"], rng)
    rp.verify_resolvent_identities(g, zs, tol=tol, rep=rep, rng=rng)
    for sample in (sc, g):
        for m in range(1, c["m_split"] + 1):
            sp = rp.split_head_tail(z, m, K, sample)
            for key in ("reconstruction_error", "factorised_error"):
                e = sp.meta[key]
                rep.add("split-identity" if key[0] == "r" else "split-factorised", sample=m,
                        margin=tol - e, passed=bool(e <= tol), m=m, sample_name=sample.name,
                        error=e)
        rp.verify_head_bound(sample, z, K, range(1, c["m_head"] + 1), c["ratio_tol"], rep=rep)
    g8 = rp.SemigroupSample.random(c["probe_dim"], rng, real_spectrum=True)
    rp.covering_radius_probe(g8, z, range(5, 21), rep=rep)
    rp.covering_radius_probe(sc, z, range(1, 11), rep=rep)
    rep.note("C_L", {sc.name: sc.C_L, g.name: g.C_L, g8.name: g8.C_L})
    return [rep]


REGISTRY = {
    "metric_lemma": metric_lemma,
    "cone_corollary": cone_corollary,
    "flow_smoothness": flow_smoothness,
    "good_expansion": good_expansion,
    "graph_oracle": graph_oracle,
    "sigma_invariance": sigma_invariance,
    "covering": covering,
    "resolvent": resolvent,
}

# suites sharing the deformed-model pipeline; scheduled together so it is built once
DEFORMED_SUITES = ("good_expansion", "graph_oracle", "sigma_invariance", "covering")


def run_suite(cfg: ExperimentConfig, name, negative_controls=True):
    reps = REGISTRY[name](cfg)
    return reps if negative_controls else reps[:1]


def describe_suites():
    rows = []
    for name, fn in REGISTRY.items():
        doc = (fn.__doc__ or "").strip().splitlines()
        rows.append((name, doc[0] if doc else ""))
    return rows

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from anosovlab import cli
from anosovlab.config import load_config, parse_config, suite_seed
from anosovlab.errors import ConfigError
from anosovlab.report import VerificationReport, load_report

ROOT = Path(__file__).resolve().parents[1]


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[metric_lemma]\nn_pionts = 3\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[metrics]\nn_points = 3\n")


def test_constraint_named():
    with pytest.raises(ConfigError, match=r"\[pipeline\] rho"):
        parse_config("[pipeline]\nrho = 1.5\n")


def test_seed_derivation_is_stable():
    assert suite_seed(0, "resolvent") == suite_seed(0, "resolvent")
    assert suite_seed(0, "resolvent") != suite_seed(1, "resolvent")
    assert suite_seed(0, "resolvent") != suite_seed(0, "covering")


@pytest.mark.parametrize("path", sorted((ROOT / "configs").glob("*.ini")))
def test_example_configs_load(path):
    cfg = load_config(path)
    assert cfg.suites


def test_list_suites(capsys):
    assert cli.main(["list-suites"]) == 0
    assert "resolvent" in capsys.readouterr().out


def test_empty_selection_is_noop(tmp_path):
    cfg = tmp_path / "empty.ini"
    cfg.write_text("[run]\nsuites =\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["suites"] == {}


def test_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[resolvent]\nz = -1\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2


def test_scalar_resolvent_run_is_fast(tmp_path):
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(ROOT / "configs" / "resolvent_scalar.ini"),
                     "--out", str(tmp_path)])
    assert code == 0
    assert time.perf_counter() - t0 < 5


def test_negative_control_gives_nonzero_exit(tmp_path, capsys):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[run]\nsuites = metric_lemma\n[metric_lemma]\nmodels = canonical\n"
                   "n_points = 10\nt_max = 1.0\n")
    code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--negative-controls"])
    assert code == 1
    assert "failing: metric_lemma.control" in capsys.readouterr().out


def test_emit_curve_csv(tmp_path):
    rep = VerificationReport("demo")
    for t in (0.0, 0.5, 1.0):
        rep.add("expansion", sample=0, margin=-t, passed=True, t=t)
        rep.add("expansion", sample=1, margin=1 - t, passed=True, t=t)
    path = tmp_path / "demo.json"
    rep.save(path)
    out = cli.emit(str(path), "csv", None, str(tmp_path))
    lines = Path(out[0]).read_text().splitlines()
    assert lines[0] == "t,worst_margin"
    assert lines[2] == "0.5,-0.5"


def test_digest_verified_on_reload(tmp_path):
    rep = VerificationReport("demo")
    rep.add("x", 0, 1.0, True)
    path = tmp_path / "r.json"
    rep.save(path)
    assert load_report(path).records == rep.records
    doc = json.loads(path.read_text())
    doc["records"][0]["margin"] = 2.0
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="digest"):
        load_report(path)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "anosovlab", "list-suites"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and "covering" in r.stdout

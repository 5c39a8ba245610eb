import json

import pytest
from click.testing import CliRunner

from nelson_gibbs import __version__
from nelson_gibbs.cli import main
from nelson_gibbs.config import loads_config
from nelson_gibbs.io import load_samples

from conftest import PINNED_TOML, ZERO_TOML

QUICK_ZERO = ZERO_TOML.replace("n_samples = 1500", "n_samples = 100").replace("density_min_ess = 1000",
                                                                              "density_min_ess = 100")


def _invoke(*args):
    res = CliRunner().invoke(main, list(args), catch_exceptions=False)
    return res


@pytest.fixture
def zero_cfg(tmp_path):
    f = tmp_path / "zero.toml"
    f.write_text(QUICK_ZERO)
    return f


def test_check_and_oracle(tmp_path, zero_cfg):
    out = tmp_path / "o"
    res = _invoke("check", "--config", str(zero_cfg), "--out", str(out))
    assert res.exit_code == 0
    data = json.loads((out / "check.json").read_text())
    fp = loads_config(zero_cfg.read_text()).fingerprint()
    assert data["config_fingerprint"] == fp and data["tool_version"] == __version__
    res = _invoke("oracle", "--config", str(zero_cfg), "--out", str(out))
    assert res.exit_code == 0
    pred = json.loads((out / "oracle.json").read_text())
    assert "zero_coupling" in pred["predictions"] and "closed_form_w" in pred["predictions"]


def test_tabulate_w(tmp_path):
    cfg = tmp_path / "small.toml"
    cfg.write_text("[sampler]\nT = 4.0\ndt = 0.1\nmargin = 1.0\ntau_max = 1.0\n")
    out = tmp_path / "o"
    res = _invoke("tabulate-w", "--config", str(cfg), "--out", str(out))
    assert res.exit_code == 0
    lines = (out / "w_table.csv").read_text().splitlines()
    assert lines[0].startswith("# config_fingerprint=")
    assert any(line == "r,tau,W" for line in lines)


def test_zero_coupling_verify_and_determinism(tmp_path, zero_cfg):
    out = tmp_path / "o"
    assert _invoke("sample", "--config", str(zero_cfg), "--out", str(out)).exit_code == 0
    first = (out / "paths.npz").read_bytes()
    # same seed on more threads writes the same archive
    out2 = tmp_path / "o2"
    assert _invoke("sample", "--config", str(zero_cfg), "--out", str(out2), "--threads", "2").exit_code == 0
    assert (out2 / "paths.npz").read_bytes() == first
    s = load_samples(out / "paths.npz", loads_config(zero_cfg.read_text()).fingerprint())
    assert s.n == 400
    assert _invoke("estimate", "--config", str(zero_cfg), "--out", str(out)).exit_code == 0
    rep = {p.name: p.read_bytes() for p in (out / "reports").iterdir()}
    assert _invoke("estimate", "--config", str(zero_cfg), "--out", str(out)).exit_code == 0
    again = {p.name: p.read_bytes() for p in (out / "reports").iterdir()}
    assert rep == again
    res = _invoke("verify", "--config", str(zero_cfg), "--out", str(out))
    assert res.exit_code == 0
    ledger = json.loads((out / "ledger.json").read_text())
    assert ledger["passed"] and ledger["n_checks"] > 0


def test_archive_fingerprint_mismatch(tmp_path, zero_cfg):
    out = tmp_path / "o"
    assert _invoke("sample", "--config", str(zero_cfg), "--out", str(out)).exit_code == 0
    res = CliRunner().invoke(main, ["estimate", "--config", str(zero_cfg), "--out", str(out), "--seed", "99"])
    assert res.exit_code != 0
    assert "fingerprint" in res.output


def test_verify_fault_injection(tmp_path):
    cfg = tmp_path / "pinned.toml"
    cfg.write_text(PINNED_TOML.replace("[observables]", '[observables]\nselect = ["momentum_density"]'))
    out = tmp_path / "o"
    assert _invoke("verify", "--config", str(cfg), "--out", str(out)).exit_code == 0
    path = out / "reports" / "momentum_density.json"
    data = json.loads(path.read_text())
    data["estimates"]["n_k"] = [1.5 * v for v in data["estimates"]["n_k"]]
    path.write_text(json.dumps(data))
    res = CliRunner().invoke(main, ["verify", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 1
    assert "FAIL" in res.output
    assert not json.loads((out / "ledger.json").read_text())["passed"]


def test_missing_archive_is_an_error(tmp_path, zero_cfg):
    res = CliRunner().invoke(main, ["estimate", "--config", str(zero_cfg), "--out", str(tmp_path),
                                    "--archive", str(tmp_path / "none.npz")])
    assert res.exit_code != 0


def test_bad_config_reports_error(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text("[form_factor]\nir_cutoff = 6.0\n")
    res = CliRunner().invoke(main, ["check", "--config", str(f), "--out", str(tmp_path)])
    assert res.exit_code != 0
    assert "cutoff" in res.output

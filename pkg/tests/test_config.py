import math

import pytest

from nelson_gibbs.config import ConfigError, dumps_config, loads_config, parse_config
from nelson_gibbs.model import compute_constants


def test_minimal_file_fills_defaults(tmp_path):
    f = tmp_path / "run.toml"
    f.write_text("[model]\ndimension = 3\n")
    a = parse_config(f)
    b = parse_config(f)
    assert a.fingerprint() == b.fingerprint()
    assert a.sampler.T == 20.0 and a.sampler.dt == 0.05
    assert a.model.form_factor.uv_cutoff == 5.0
    assert a.tolerances["z_threshold"] == 3.0


def test_round_trip_lossless():
    cfg = loads_config("""
[form_factor]
c_rho_target = 0.5
[potential]
kind = "general"
coefficients = [0.0, 0.0, 0.5, 0.1]
[observables]
select = ["pn", "momentum_density"]
k_edges = [0.5, 1.0, 5.0]
[run]
seed = 17
""")
    back = loads_config(dumps_config(cfg))
    assert back == cfg
    assert back.fingerprint() == cfg.fingerprint()
    assert compute_constants(back.model).c_rho == pytest.approx(0.5, rel=1e-10)


def test_fingerprint_ignores_out_and_threads():
    a = loads_config("")
    b = a.with_overrides(threads=4, out="/tmp/elsewhere")
    assert a.fingerprint() == b.fingerprint()
    assert a.with_overrides(seed=1).fingerprint() != a.fingerprint()


def test_infinite_cutoff_round_trip():
    cfg = loads_config('[form_factor]\nprofile = "gaussian"\nir_cutoff = 0.0\nuv_cutoff = "inf"\n[model]\nmass = 1.0\n')
    assert math.isinf(cfg.model.form_factor.uv_cutoff)
    assert loads_config(dumps_config(cfg)) == cfg


@pytest.mark.parametrize("text, fragment", [
    ("[form_factor]\nir_cutoff = 5.0\nuv_cutoff = 0.5\n", "cutoff"),
    ("[model]\ndimension = 3\ndimension = 1\n", "parse error"),
    ("[model]\ncolour = 1\n", "colour"),
    ("[nonsense]\nx = 1\n", "nonsense"),
    ("[form_factor]\namplitude = 1.0\nc_rho_target = 1.0\n", "c_rho_target"),
    ("[sampler]\nthin = 0\n", "thin"),
    ('[observables]\nselect = ["nothing"]\n', "nothing"),
    ('[model]\ndimension = "three"\n', "dimension"),
])
def test_invalid_configs(text, fragment):
    with pytest.raises(ConfigError) as exc:
        loads_config(text)
    assert fragment in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.toml")

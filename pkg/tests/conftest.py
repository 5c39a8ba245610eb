import pytest

from nelson_gibbs.config import loads_config
from nelson_gibbs.pipeline import prepare, sample

ACCEPTANCE_KEY = pytest.StashKey[list]()

ZERO_TOML = """
[form_factor]
amplitude = 0.0
[sampler]
T = 3.0
dt = 0.1
margin = 1.0
n_chains = 4
n_samples = 1500
burn_in = 50
thin = 1
[observables]
n_max = 4
density_min_ess = 1000
density_r_max = 3.0
density_bins = 20
"""

PINNED_TOML = """
[form_factor]
c_rho_target = 0.5
[potential]
kind = "pinned"
[sampler]
T = 25.0
dt = 0.01
margin = 0.0
n_chains = 1
n_samples = 2
burn_in = 0
[tolerances]
eps_tail = 1e-4
[observables]
n_max = 6
k_edges = [0.5, 0.75, 1.0, 1.25, 2.0, 3.0, 4.0, 5.0]
"""

SMALL_TOML = """
[model]
mass = 1.0
[form_factor]
c_rho_target = 1.0
[sampler]
T = 10.0
dt = 0.1
margin = 4.0
n_chains = 4
n_samples = 400
burn_in = 200
thin = 2
[tolerances]
eps_tail = 1e-3
[observables]
n_max = 8
position_max_samples = 20
"""


def _run(text):
    cfg = loads_config(text)
    prep = prepare(cfg)
    return prep, sample(prep)


@pytest.fixture(scope="session")
def zero_run():
    return _run(ZERO_TOML)


@pytest.fixture(scope="session")
def pinned_run():
    return _run(PINNED_TOML)


@pytest.fixture(scope="session")
def small_run():
    return _run(SMALL_TOML)


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)

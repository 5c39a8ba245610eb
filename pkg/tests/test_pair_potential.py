import io
import math
from types import SimpleNamespace

import numpy as np
import pytest

from nelson_gibbs.model import compute_constants, shell_model, with_c_rho
from nelson_gibbs.oracles import analytic_w
from nelson_gibbs.pair_potential import (
    build_w_table,
    choose_tau_max,
    cross_half_line_energy,
    half_line_tail_bound,
    pinned_cross_energy,
    read_table_csv,
    square_interaction,
    table_for_model,
    w_exact,
    w_interp,
    window_interaction,
    write_table_csv,
)
from nelson_gibbs.sampler import ParticlePath

KAP, K = 0.5, 5.0


def _w0_closed(tau):
    # W(0, tau) for the massless d=3 shell with g=1
    return -math.pi * (math.exp(-KAP * tau) * (1 + KAP * tau) - math.exp(-K * tau) * (1 + K * tau)) / tau**2


@pytest.fixture(scope="module")
def model():
    return shell_model()


@pytest.fixture(scope="module")
def small_table(model):
    return build_w_table(model, 2.0, 2.0, 81, 41, tol=1e-3)


def test_w_origin_closed_form(model):
    assert w_exact(model, 0.0, 1.0) == pytest.approx(_w0_closed(1.0), rel=1e-10)
    assert w_exact(model, 0.0, 1.0) == pytest.approx(-2.7313, abs=1e-4)


def test_w_off_origin_matches_antiderivative(model):
    r, tau = 2.0, 1.0
    z = complex(-tau, r)
    im = ((np.exp(z * K) - np.exp(z * KAP)) / z).imag
    assert w_exact(model, r, tau) == pytest.approx(-math.pi / r * im, rel=1e-10)
    assert w_exact(model, r, tau) == pytest.approx(analytic_w(model, r, tau), rel=1e-10)


def test_zero_coupling_is_zero():
    m = shell_model(amplitude=0.0)
    assert np.all(w_exact(m, np.array([0.0, 1.0, 3.0]), 0.5) == 0.0)
    t = build_w_table(m, 1.0, 1.0, 5, 5)
    assert t.is_zero
    path = ParticlePath.constant(1.0, 0.25, 3)
    assert cross_half_line_energy(path, t) == 0.0
    assert window_interaction(path, t, None, 1.0) == 0.0


def test_table_on_grid_and_midpoint(model, small_table):
    t = small_table
    j, i = 20, 0  # (r, tau) = (0, 1)
    assert t.tau_grid[j] == pytest.approx(1.0)
    assert w_interp(t, t.r_grid[i], t.tau_grid[j]) == t.values[j, i]
    assert t.values[j, i] == pytest.approx(w_exact(model, 0.0, 1.0), rel=t.tol)
    r_mid = 0.5 * (t.r_grid[10] + t.r_grid[11])
    tau_mid = 0.5 * (t.tau_grid[20] + t.tau_grid[21])
    env = abs(w_exact(model, 0.0, tau_mid))
    assert abs(w_interp(t, r_mid, tau_mid) - w_exact(model, r_mid, tau_mid)) <= 10 * t.tol * env
    assert t.interp_error <= 10 * t.tol


def test_interp_truncation_and_symmetry(small_table):
    t = small_table
    assert w_interp(t, 0.3, t.tau_max + 1.0) == 0.0
    assert w_interp(t, 0.3, -0.7) == w_interp(t, 0.3, 0.7)


def test_interp_bilinear_convex_combination(small_table):
    t = small_table
    i, j = 7, 13
    fr, ft = 0.3, 0.6
    r = t.r_grid[i] + fr * t.dr
    tau = t.tau_grid[j] + ft * t.dtau
    v = t.values
    expect = ((1 - ft) * ((1 - fr) * v[j, i] + fr * v[j, i + 1])
              + ft * ((1 - fr) * v[j + 1, i] + fr * v[j + 1, i + 1]))
    assert w_interp(t, r, tau) == pytest.approx(expect, rel=1e-13)
    lo = min(v[j, i], v[j, i + 1], v[j + 1, i], v[j + 1, i + 1])
    hi = max(v[j, i], v[j, i + 1], v[j + 1, i], v[j + 1, i + 1])
    assert lo <= w_interp(t, r, tau) <= hi


def test_interp_beyond_r_max_falls_back(model, small_table):
    assert w_interp(small_table, 3.0, 0.5) == pytest.approx(w_exact(model, 3.0, 0.5), rel=1e-8)


def test_build_rejects_bad_grids(model):
    with pytest.raises(ValueError):
        build_w_table(model, 0.0, 1.0, 5, 5)
    with pytest.raises(ValueError):
        build_w_table(model, 1.0, 1.0, 1, 5)


def test_sign_symmetry_decay(model):
    taus = np.linspace(0.0, 40.0, 1000)
    w0 = w_exact(model, 0.0, taus)
    assert np.all(w0 < 0.0)
    assert np.all(np.diff(np.abs(w0)) <= 0.0)
    r = np.array([0.0, 0.4, 1.3, 2.7])
    assert np.array_equal(w_exact(model, r, 0.8), w_exact(model, r, -0.8))


def test_pinned_cross_energy_approaches_c_rho(model):
    c = compute_constants(model).c_rho
    dt = 0.02
    tau_max = choose_tau_max(model, 1e-3 * c, dt)
    assert half_line_tail_bound(model, tau_max) <= 1e-3 * c
    t = table_for_model(model, tau_max, dt, 1.0, tol=1e-3, n_probes=0)
    D = pinned_cross_energy(t, dt, tau_max)
    # trapezoid error O((K dt)^2) plus the lag tail
    assert D == pytest.approx(c, rel=5e-3)
    assert D == pytest.approx(14.4676, rel=5e-3)


def test_pinned_cross_energy_amplitude_scaling(model):
    m = with_c_rho(model, 0.5)
    assert m.form_factor.amplitude == pytest.approx(math.sqrt(0.5 / (2 * math.pi * math.log(10))))
    dt = 0.02
    tau_max = choose_tau_max(m, 1e-3 * 0.5, dt)
    t = table_for_model(m, tau_max, dt, 1.0, tol=1e-3, n_probes=0)
    path = ParticlePath.constant(tau_max, dt, 3)
    D = cross_half_line_energy(path, t)
    assert D == pytest.approx(0.5, rel=5e-3)
    assert D == pinned_cross_energy(t, dt, tau_max)


def test_cross_energy_bounded_by_pinned(model):
    dt = 0.1
    t = table_for_model(model, 3.0, dt, 6.0, tol=1e-3, n_probes=0)
    rng = np.random.default_rng(1)
    pinned = pinned_cross_energy(t, dt, 3.0)
    for _ in range(5):
        q = np.cumsum(rng.normal(scale=0.2, size=(61, 3)), axis=0)
        D = cross_half_line_energy(ParticlePath(3.0, dt, q), t)
        assert 0.0 <= D <= pinned


def test_grid_misalignment():
    m = shell_model()
    t = build_w_table(m, 1.0, 1.0, 11, 11, n_probes=0)
    with pytest.raises(ValueError):
        cross_half_line_energy(SimpleNamespace(positions=np.zeros((10, 3)), dt=0.1, T=0.45), t)
    with pytest.raises(ValueError):
        ParticlePath(0.45, 0.1, np.zeros((10, 3)))
    with pytest.raises(ValueError):
        t.lag_table(0.033)


def test_window_additivity(model):
    dt = 0.1
    t = table_for_model(model, 2.0, dt, 4.0, tol=1e-3, n_probes=0)
    rng = np.random.default_rng(2)
    q = np.cumsum(rng.normal(scale=0.1, size=(61, 3)), axis=0)
    path = ParticlePath(3.0, dt, q)
    full = window_interaction(path, t, None, 2.0)
    inner = window_interaction(path, t, None, 1.0)
    ring = window_interaction(path, t, 1.0, 2.0)
    assert full == pytest.approx(inner + ring, rel=1e-12)
    with pytest.raises(ValueError):
        window_interaction(path, t, 2.0, 1.0)


def test_square_pinned_matches_lag_integral(model):
    dt, T = 0.05, 1.0
    t = table_for_model(model, 2 * T, dt, 1.0, tol=1e-4, n_probes=0)
    path = ParticlePath.constant(T, dt, 3)
    val = square_interaction(path, t)
    # trapezoid in both times of W(0, t - s) over [-T, T]^2
    w = np.ones(41)
    w[0] = w[-1] = 0.5
    ref = sum(w[i] * w[j] * w_exact(model, 0.0, (i - j) * dt) for i in range(41) for j in range(41)) * dt * dt
    assert val == pytest.approx(ref, rel=1e-4)
    # continuum analogue: int (2T - |u|) W(0, u) du
    uu = np.linspace(-2 * T, 2 * T, 4001)
    cont = np.trapezoid((2 * T - np.abs(uu)) * w_exact(model, 0.0, uu), uu)
    assert val == pytest.approx(cont, rel=5e-2)


def test_csv_round_trip_bit_exact(model, small_table):
    buf = io.StringIO()
    write_table_csv(small_table, buf)
    back = read_table_csv(io.StringIO(buf.getvalue()), model)
    assert back.same_as(small_table)
    assert back.tol == small_table.tol
    assert back.interp_error == small_table.interp_error
    with pytest.raises(ValueError):
        read_table_csv(io.StringIO(buf.getvalue()), shell_model(amplitude=2.0))

import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcap.loads import (
    LoadSimulator,
    QoSChannel,
    SimulationError,
    ThermalParams,
    baseline_power,
    discretize,
    _raw_signal,
    lti_gain2,
    qos_signal,
    simulate_bilinear,
    simulate_lti,
    steps_from_seconds,
)
from flexcap.spectra import FrequencyGrid, SpectralDensity, apply_lti_sd, periodogram
from flexcap.signalgen import synthesize_batch

TABLE = ThermalParams()


def loop_lti(a, b, u, T0=0.0):
    out = [T0]
    for uk in u[:-1]:
        out.append(a * out[-1] + b * uk)
    return np.array(out)


def implicit_step_oracle(p, dt, u, T0=0.0):
    """Backward Euler with each implicit equation solved by root finding."""
    h = dt / 3600.0
    pbar = baseline_power(p, nonlinear=True)
    out = [T0]
    for uk in u[:-1]:
        Tk = out[-1]

        def resid(T):
            rhs = -T / p.R + p.eta_bar * uk + p.alpha1 * pbar * T + p.alpha1 * T * uk
            return p.Cth * (T - Tk) - h * rhs

        out.append(scipy.optimize.brentq(resid, -1e3, 1e3, xtol=1e-14))
    return np.array(out)


# ---- parameters ----


def test_params_validation():
    with pytest.raises(ValueError):
        ThermalParams(R=0)
    with pytest.raises(ValueError):
        ThermalParams(alpha1=1.0)  # eta_bar = 3.5 - 8 < 0


def test_baseline_power():
    assert baseline_power(ThermalParams(Ta=22.0, Tbar=22.0)) == 0.0
    assert baseline_power(TABLE) == pytest.approx(8 / 28, rel=1e-12)
    assert baseline_power(ThermalParams(Ta=38.0)) == pytest.approx(2 * baseline_power(TABLE))
    p = ThermalParams(alpha1=0.15, alpha2=1.175)
    assert p.eta_bar == pytest.approx(3.475)
    assert baseline_power(p, nonlinear=True) == pytest.approx(8 / (3.475 * 8))


# ---- discretization ----


def test_discretize_closed_form():
    d = discretize(TABLE, 60.0)
    assert d.gamma == pytest.approx(1 / 176)
    assert d.a == pytest.approx(math.exp(-(1 / 60) / 176), rel=1e-15)
    assert d.b / (1 - d.a) == pytest.approx(3.5 * 8, rel=1e-12)
    assert 0 < d.a < 1 and d.b > 0


def test_discretize_small_step_limit():
    d = discretize(TABLE, 1e-6)
    assert d.a == pytest.approx(1.0) and d.b == pytest.approx(0.0, abs=1e-8)


def test_discretize_methods():
    d = discretize(TABLE, 20.0, method="backward_euler")
    assert d.b / (1 - d.a) == pytest.approx(28.0)
    with pytest.raises(ValueError):
        discretize(TABLE, 20.0, method="rk4")
    with pytest.raises(ValueError):
        discretize(TABLE, 0.0)


# ---- LTI simulation ----


def test_simulate_lti_zero():
    assert np.all(simulate_lti(discretize(TABLE, 60.0), np.zeros(50)) == 0)


def test_simulate_lti_step_response():
    d = discretize(TABLE, 60.0)
    k = np.arange(200)
    got = simulate_lti(d, np.ones(200))
    assert np.allclose(got, d.b * (1 - d.a**k) / (1 - d.a), rtol=1e-12, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2))
def test_simulate_lti_matches_loop(seed, T0):
    d = discretize(TABLE, 600.0)
    u = np.random.default_rng(seed).standard_normal(64)
    assert np.allclose(simulate_lti(d, u, T0), loop_lti(d.a, d.b, u, T0), atol=1e-12)


def test_simulate_lti_steady_state():
    d = discretize(TABLE, 3600.0)
    assert simulate_lti(d, np.full(5000, 0.5))[-1] == pytest.approx(28 * 0.5, rel=1e-9)


# ---- bilinear simulation ----


def test_bilinear_matches_implicit_oracle():
    p = ThermalParams(alpha1=0.15, alpha2=1.175)
    u = np.random.default_rng(2).standard_normal(300) * 0.2
    got = simulate_bilinear(p, 600.0, u, T0=0.3)
    assert np.allclose(got, implicit_step_oracle(p, 600.0, u, T0=0.3), atol=1e-10)


def test_bilinear_zero_and_alpha_zero():
    p = ThermalParams()
    assert np.all(simulate_bilinear(p, 60.0, np.zeros(40)) == 0)
    u = np.random.default_rng(4).standard_normal((3, 500))
    d = discretize(p, 60.0, method="backward_euler")
    assert np.max(np.abs(simulate_bilinear(p, 60.0, u) - simulate_lti(d, u))) < 1e-10


def test_bilinear_converges_to_linear():
    u = np.random.default_rng(6).standard_normal(2000) * 0.3
    d = discretize(TABLE, 60.0, method="backward_euler")
    ref = simulate_lti(d, u)
    gaps = [np.max(np.abs(simulate_bilinear(ThermalParams(alpha1=a1), 60.0, u) - ref)) for a1 in (0.1, 0.01, 0.001)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_bilinear_long_sequence_is_finite():
    p = ThermalParams(alpha1=0.15, alpha2=1.175)
    u = np.random.default_rng(0).standard_normal(200_000) * 0.05
    out = simulate_bilinear(p, 20.0, u)
    assert np.all(np.isfinite(out))


def test_bilinear_ill_posed_step():
    p = ThermalParams(alpha1=0.15, alpha2=1.175)
    u = np.zeros(10)
    u[4] = 1e6
    with pytest.raises(SimulationError, match="step 4"):
        simulate_bilinear(p, 3600.0, u)


# ---- channels ----


def test_channel_validation_and_steps():
    with pytest.raises(ValueError):
        QoSChannel("voltage")
    with pytest.raises(ValueError):
        QoSChannel("ramp", delta_steps=0)
    assert steps_from_seconds(20, 20) == 1
    assert steps_from_seconds(5 * 3600, 60) == 300
    with pytest.raises(ValueError):
        steps_from_seconds(20, 60)


def test_power_and_ramp_channels():
    d = discretize(TABLE, 60.0)
    u = np.random.default_rng(1).standard_normal(100)
    assert np.array_equal(qos_signal(QoSChannel("power"), u, TABLE, d), u)
    ramp = qos_signal(QoSChannel("ramp", delta_steps=3), np.full(100, 2.0), TABLE, d)
    assert ramp.size == 97 and np.all(ramp == 0)
    ramp = qos_signal(QoSChannel("ramp", delta_steps=3), u, TABLE, d)
    assert np.allclose(ramp, u[3:] - u[:-3])


def test_energy_channel_constant_input():
    d = discretize(TABLE, 60.0)
    z = qos_signal(QoSChannel("energy", window_steps=300), np.ones(1000), TABLE, d)
    assert np.allclose(z, 5.0)


def test_energy_channel_matches_window_sum():
    d = discretize(TABLE, 60.0)
    u = np.random.default_rng(3).standard_normal(200)
    z = qos_signal(QoSChannel("energy", window_steps=7), u, TABLE, d, warmup=7)
    want = [u[k - 6 : k + 1].sum() / 60 for k in range(7, 200)]
    assert np.allclose(z, want)


def test_short_sequence_rejected():
    d = discretize(TABLE, 60.0)
    with pytest.raises(ValueError):
        qos_signal(QoSChannel("energy", window_steps=300), np.ones(100), TABLE, d)


# ---- frequency responses ----


def test_gain2_special_values():
    d = discretize(TABLE, 60.0)
    g = FrequencyGrid(64, 60.0)
    dc = g.n_freq // 2
    assert np.all(lti_gain2(QoSChannel("power"), d, g) == 1)
    ramp = lti_gain2(QoSChannel("ramp", delta_steps=2), d, g)
    assert ramp[dc] == 0.0
    assert ramp[np.argmin(np.abs(g.omegas - np.pi / 2))] == pytest.approx(4.0)
    storage = lti_gain2(QoSChannel("storage"), d, g)
    assert storage[dc] == pytest.approx(28.0**2, rel=1e-9)
    energy = lti_gain2(QoSChannel("energy", window_steps=5), d, g)
    assert energy[dc] == pytest.approx(25 / 60**2)
    with pytest.raises(NotImplementedError):
        lti_gain2(QoSChannel("storage", model="bilinear"), d, g)


@pytest.mark.parametrize(
    "channel",
    [QoSChannel("power"), QoSChannel("ramp", delta_steps=3), QoSChannel("energy", window_steps=9), QoSChannel("storage")],
    ids=lambda c: c.kind,
)
def test_gain2_matches_impulse_response(channel):
    # |DFT of the impulse response|^2 is the oracle
    d = discretize(TABLE, 3600.0 * 5)
    n = 256
    g = FrequencyGrid(n, d.delta_t)
    # start the impulse after the ramp lag so no response is truncated
    impulse = np.zeros(4096)
    impulse[16] = 1.0
    h = _raw_signal(channel, impulse, TABLE, d)[16:]
    want = np.abs(np.exp(-1j * np.outer(g.omegas, np.arange(h.size))) @ h) ** 2
    assert np.allclose(lti_gain2(channel, d, g), want, rtol=1e-8, atol=1e-12)


def test_filter_law_band_limited_input():
    # a tapered window keeps input leakage away from the large DC gain
    d = discretize(TABLE, 20.0)
    g = FrequencyGrid(4096, 20.0)
    w = np.abs(g.omegas)
    target = SpectralDensity(g, np.where((w > 0.05) & (w < 0.5), 1.0, 0.0))
    ch = QoSChannel("storage")
    warm = d.warmup
    u = synthesize_batch(target, warm + 4096, range(10))
    z = qos_signal(ch, u, TABLE, d, warmup=warm)
    got = periodogram(z, g, window="hann").values
    want = apply_lti_sd(periodogram(u[:, warm:], g, window="hann"), lti_gain2(ch, d, g)).values
    assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 0.10


def test_simulator_warmup_and_storage_model():
    sim = LoadSimulator(TABLE, 20.0, "bilinear")
    chans = [QoSChannel("ramp", delta_steps=1), QoSChannel("storage")]
    assert sim.warmup(chans) == sim.disc.warmup == math.ceil(5 / (1 - sim.disc.a))
    assert sim.channel(QoSChannel("storage")).model == "bilinear"
    out = sim.run(chans, np.zeros((2, sim.warmup(chans) + 10)))
    assert [z.shape for z in out] == [(2, 10), (2, 10)]

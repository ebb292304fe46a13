import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaoscast.data import TimeSeriesDataset
from chaoscast.dynamics import (
    ETDRK4Solver,
    KSConfig,
    Lorenz96Config,
    integrate_ks,
    lorenz96_jacobian,
    lorenz96_jvp,
    lorenz96_rhs,
    rk4_step,
    simulate_ks,
    simulate_lorenz96,
    true_lyapunov_spectrum,
)
from chaoscast.errors import InvalidDimensionError, NonFiniteStateError, SimulationBlowupError


def l96_loop(x, F):
    # plain-loop oracle of the stencil
    J = len(x)
    return np.array([(x[(j + 1) % J] - x[(j - 2) % J]) * x[(j - 1) % J] - x[j] + F for j in range(J)])


@given(st.integers(4, 30), st.floats(-20, 20, allow_nan=False))
def test_uniform_state_is_equilibrium(J, F):
    assert np.array_equal(lorenz96_rhs(np.full(J, F), F), np.zeros(J))


def test_rhs_hand_values():
    x = np.array([1.0, 2, 3, 4, 5])
    out = lorenz96_rhs(x, 8.0)
    assert out[0] == -3.0  # (2 - 4) * 5 - 1 + 8
    np.testing.assert_array_equal(out, l96_loop(x, 8.0))


@settings(max_examples=30)
@given(st.integers(4, 20), st.integers(0, 19), st.integers(0, 2**31))
def test_rhs_translation_equivariance(J, shift, seed):
    x = np.random.default_rng(seed).normal(size=J)
    np.testing.assert_allclose(lorenz96_rhs(np.roll(x, shift), 8.0), np.roll(lorenz96_rhs(x, 8.0), shift), atol=1e-12)


def test_rhs_rejects_short_state():
    with pytest.raises(InvalidDimensionError):
        lorenz96_rhs(np.ones(3), 8.0)


def test_jacobian_matches_finite_difference():
    rng = np.random.default_rng(1)
    x = 8 + rng.normal(size=40)
    Jm = lorenz96_jacobian(x)
    h = 1e-7
    fd = np.stack([(lorenz96_rhs(x + h * e, 8.0) - lorenz96_rhs(x, 8.0)) / h for e in np.eye(40)], axis=1)
    assert np.linalg.norm(Jm - fd) / np.linalg.norm(Jm) < 1e-5
    V = rng.normal(size=(40, 3))
    np.testing.assert_allclose(lorenz96_jvp(x, V), Jm @ V, atol=1e-12)


def test_rk4_zero_field_and_exponential():
    x = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda y: 0 * y, x, 0.3), x)
    out = rk4_step(lambda y: -y, np.array([1.0]), 0.1)
    assert out[0] == pytest.approx(1 - 0.1 + 0.005 - 0.1**3 / 6 + 0.1**4 / 24, abs=1e-15)


def test_rk4_flags_nonfinite():
    with pytest.raises(NonFiniteStateError):
        rk4_step(lambda y: -y, np.array([np.nan]), 0.1)


def test_rk4_fourth_order_on_lorenz96():
    x0 = 8 + np.random.default_rng(2).normal(size=40)
    rhs = lambda y: lorenz96_rhs(y, 8.0)

    def run(dt):
        x = x0.copy()
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(rhs, x, dt)
        return x

    a, b, c = run(0.01), run(0.005), run(0.0025)
    ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
    assert 12 < ratio < 20


def test_simulate_lorenz96_shapes_and_stats():
    cfg = Lorenz96Config(J=8, F=8, dt=0.01, t_transient=5, t_total=25, seed=3)
    ds = simulate_lorenz96(cfg)
    assert ds.values.shape == (2000, 8)
    assert ds.split == 1000
    np.testing.assert_allclose(ds.mean, ds.values[:1000].mean(axis=0))
    assert np.all(ds.std > 0)
    again = simulate_lorenz96(cfg)
    assert np.array_equal(ds.values, again.values)


def test_simulate_lorenz96_blowup():
    cfg = Lorenz96Config(J=8, F=8, dt=0.5, t_transient=1, t_total=50)
    with pytest.raises((SimulationBlowupError, NonFiniteStateError)):
        simulate_lorenz96(cfg, x0=1e3 * np.arange(8.0))


def test_config_validation():
    with pytest.raises(ValueError):
        Lorenz96Config(J=3)
    with pytest.raises(ValueError):
        Lorenz96Config(t_transient=10, t_total=5)
    with pytest.raises(ValueError):
        KSConfig(D=7)


def test_ks_zero_field_stays_zero():
    u = integrate_ks(np.zeros(64), L=22, D=64, dt=0.25, n_steps=50)
    assert np.array_equal(u[-1], np.zeros(64))


def test_ks_low_mode_grows():
    L, D = 200.0, 256
    x = np.arange(D) * L / D
    u0 = 1e-3 * np.cos(2 * np.pi * x / L)
    u = integrate_ks(u0, L=L, D=D, dt=0.25, n_steps=400)
    k = 2 * np.pi / L
    rate = np.log(np.linalg.norm(u[-1]) / np.linalg.norm(u0)) / 100.0
    assert rate == pytest.approx(k**2 - k**4, rel=1e-3)


def test_ks_linear_part_exact():
    # with a tiny amplitude the nonlinearity is negligible: every mode evolves as exp(L_k t)
    s = ETDRK4Solver(L=22, D=64, dt=0.1)
    rng = np.random.default_rng(0)
    u0 = 1e-9 * rng.normal(size=64)
    u0 -= u0.mean()
    v = s.to_spectral(u0)
    for _ in range(10):
        v = s.step(v)
    expected = s.to_spectral(u0) * np.exp(s.lin * 1.0)
    # the quadratic term contributes O(1e-18); compare well above that
    np.testing.assert_allclose(v, expected, rtol=1e-6, atol=1e-16)


def test_ks_fourth_order_convergence():
    L, D = 22.0, 64
    x = np.arange(D) * L / D
    u0 = np.cos(2 * np.pi * x / L) * (1 + np.sin(2 * np.pi * x / L))

    def run(dt):
        return integrate_ks(u0, L=L, D=D, dt=dt, n_steps=int(round(2.0 / dt)))[-1]

    # stiff order reduction fades once dt resolves the fast modes
    a, b, c = run(0.0125), run(0.00625), run(0.003125)
    ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
    assert 12 < ratio < 20


def test_ks_tangent_matches_finite_difference():
    s = ETDRK4Solver(L=22, D=64, dt=0.25)
    rng = np.random.default_rng(4)
    u = rng.normal(size=64)
    u -= u.mean()
    v = s.to_spectral(u)
    dv = s.to_spectral(rng.normal(size=64))
    eps = 1e-6
    fd = (s.step(v + eps * dv) - s.step(v - eps * dv)) / (2 * eps)
    _, tan = s.step_tangent(v, dv[None, :])
    np.testing.assert_allclose(tan[0], fd, rtol=1e-6, atol=1e-8)


def test_simulate_ks_dataset():
    cfg = KSConfig(L=22, D=32, dt=0.25, t_transient=50, t_total=100, seed=1)
    ds = simulate_ks(cfg)
    assert ds.values.shape == (200, 32)
    assert np.all(np.isfinite(ds.values))


def test_lorenz96_spectrum_properties():
    cfg = Lorenz96Config(J=8, F=8, dt=0.01, t_transient=10, t_total=20)
    spec = true_lyapunov_spectrum(cfg, 8, T=100.0)
    assert np.all(np.diff(spec.exponents) <= 0)
    assert spec.exponents[0] > 0
    # phase-space contraction: the full spectrum sums to the divergence -J
    assert spec.exponents.sum() == pytest.approx(-8.0, abs=0.05)


def test_qr_interval_invariance():
    cfg = Lorenz96Config(J=8, F=8, dt=0.01, t_transient=10, t_total=20)
    ref = true_lyapunov_spectrum(cfg, 3, T_n=10, T=200.0).exponents
    for T_n in (5, 20):
        other = true_lyapunov_spectrum(cfg, 3, T_n=T_n, T=200.0).exponents
        assert abs(other[0] - ref[0]) <= 0.02 * abs(ref[0])


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    ds = TimeSeriesDataset(rng.normal(size=(30, 3)), 0.5, 20)
    ds.save(tmp_path / "d.chf")
    back = TimeSeriesDataset.load(tmp_path / "d.chf")
    assert np.array_equal(back.values, ds.values)
    assert back.dt == 0.5 and back.split == 20
    np.testing.assert_array_equal(back.mean, ds.mean)
    raw = (tmp_path / "d.chf").read_bytes()
    assert raw[:4] == b"CHF1"
    with pytest.raises(ValueError):
        TimeSeriesDataset.from_bytes(raw[:-8])
    with pytest.raises(ValueError):
        TimeSeriesDataset.from_bytes(b"XXXX" + raw[4:])


def test_dataset_normalized():
    rng = np.random.default_rng(0)
    ds = TimeSeriesDataset(3 + 2 * rng.normal(size=(100, 2)), 0.1, 60).normalized()
    np.testing.assert_allclose(ds.train.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(ds.train.std(axis=0), 1, atol=1e-12)

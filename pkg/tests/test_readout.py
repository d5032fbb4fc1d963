import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phonontls.readout import (
    FitError,
    PhononDistribution,
    RamseySignal,
    anharmonicity_for_shift,
    double_exp,
    double_exp_jacobian,
    double_exp_residual,
    dispersive_shift,
    exp_decay_jacobian,
    exp_decay_residual,
    fit_double_exp,
    fit_interference,
    fit_ramsey,
    fit_t2m,
    interference,
    interference_jacobian,
    mean_phonon,
    poisson_reference,
    ramsey_jacobian_quad,
    ramsey_jacobian_shared,
    ramsey_residual_quad,
    ramsey_residual_shared,
    synthesize_ramsey,
    total_variation,
)

TWO_PI = 2 * np.pi
CHI = TWO_PI * -0.74e6  # 2 chi / 2 pi = -1.48 MHz
KAPPA = 1 / 1.4e-6
OMEGA0 = TWO_PI * 20e6


def central_jacobian(fun, x, h=1e-6):
    cols = []
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((fun(xp) - fun(xm)) / (2 * step))
    return np.column_stack(cols)


def max_rel_error(analytic, numeric):
    scale = np.max(np.abs(numeric))
    return np.max(np.abs(analytic - numeric)) / scale


# --- distributions -----------------------------------------------------------


def test_distribution_normalises_and_validates():
    pn = PhononDistribution(np.array([2.0, 2.0]))
    np.testing.assert_allclose(pn.probs, [0.5, 0.5])
    assert pn.n_max == 1
    with pytest.raises(ValueError):
        PhononDistribution(np.array([0.5, -0.1]))
    with pytest.raises(ValueError):
        PhononDistribution(np.array([1.0]), sigmas=np.array([0.1, 0.1]))


def test_mean_phonon_examples():
    assert mean_phonon(np.array([1.0, 0, 0])) == 0
    assert mean_phonon(np.array([0, 0, 0, 1.0])) == 3
    assert poisson_reference(2.29, 20).mean() == pytest.approx(2.29, abs=1e-6)


def test_poisson_reference_examples():
    assert poisson_reference(0.0, 5).probs[0] == 1.0
    p = poisson_reference(1.0, 30).probs
    assert p[0] == pytest.approx(np.exp(-1), abs=1e-12)
    assert p[1] == pytest.approx(np.exp(-1), abs=1e-12)
    assert p[0] == pytest.approx(0.36788, abs=1e-5)
    with pytest.raises(ValueError):
        poisson_reference(-1.0, 3)


def test_total_variation_pads():
    assert total_variation([1.0], [0.5, 0.5]) == pytest.approx(0.5)
    assert total_variation([0.2, 0.8], [0.2, 0.8]) == 0


# --- Ramsey forward model ------------------------------------------------------


def test_vacuum_signal_is_single_damped_cosine():
    s = synthesize_ramsey(np.array([1.0, 0, 0]), OMEGA0, CHI, KAPPA)
    ref = np.exp(-KAPPA * s.times) * np.cos(OMEGA0 * s.times)
    np.testing.assert_allclose(s.values, ref, atol=1e-15)


def test_signal_is_linear_in_amplitudes():
    p = poisson_reference(2.0, 8)
    one = synthesize_ramsey(p, OMEGA0, CHI, KAPPA)
    two = synthesize_ramsey(p, OMEGA0, CHI, KAPPA, amplitude=2.0)
    np.testing.assert_array_equal(two.values, 2 * one.values)


def test_undamped_spectrum_peaks_follow_distribution():
    # long undamped record sampled finely; comb lines land on DFT bins
    p = poisson_reference(2.0, 8).probs
    df = 0.74e6 / 8
    n_samples = 4096
    dt = 1 / (n_samples * df)
    t = np.arange(n_samples) * dt
    w0 = TWO_PI * 400 * df
    s = synthesize_ramsey(p, w0, CHI, 0.0, times=t)
    spectrum = np.abs(np.fft.rfft(s.values))
    bins = 400 + np.arange(p.size) * (2 * CHI / TWO_PI) / df
    heights = spectrum[np.rint(bins).astype(int)]
    ratio = heights / heights[0]
    np.testing.assert_allclose(ratio[p > 1e-3], (p / p[0])[p > 1e-3], rtol=0.03)


def test_signal_requires_uniform_times():
    with pytest.raises(ValueError, match="uniformly"):
        RamseySignal(np.array([0, 1, 3.0]), np.zeros(3))


# --- Ramsey fit ------------------------------------------------------------------


def test_ramsey_roundtrip_poisson():
    p = poisson_reference(3.0, 10)
    s = synthesize_ramsey(p, OMEGA0, CHI, KAPPA)
    pn, fit = fit_ramsey(s, 10, {"omega0": OMEGA0, "chi": CHI, "kappa": KAPPA})
    assert np.max(np.abs(pn.probs - p.probs)) < 1e-3
    assert fit["chi"] == pytest.approx(CHI, rel=5e-3)
    assert fit.converged


def test_ramsey_vacuum():
    s = synthesize_ramsey(np.array([1.0]), OMEGA0, CHI, KAPPA)
    pn, _ = fit_ramsey(s, 4, {"omega0": OMEGA0, "chi": CHI})
    assert pn.probs[0] >= 0.999


def test_ramsey_recovers_every_parameter_without_hints():
    # random simplex with every level populated so the comb origin is identifiable
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n_max = int(rng.integers(2, 11))
        p = 0.8 * rng.dirichlet(np.ones(n_max + 1)) + 0.2 / (n_max + 1)
        phases = rng.uniform(-0.5, 0.5, n_max + 1)
        s = synthesize_ramsey(p, OMEGA0, CHI, KAPPA, phases=phases)
        pn, fit = fit_ramsey(s, n_max)
        errs = [
            abs(fit["omega0"] / OMEGA0 - 1),
            abs(fit["chi"] / CHI - 1),
            abs(fit["kappa"] / KAPPA - 1),
            np.max(np.abs(pn.probs - p) / p),
            np.max(np.abs(np.array([fit[f"phi_{n}"] for n in range(n_max + 1)]) - phases)),
        ]
        worst = max(worst, *errs)
    assert worst < 5e-3


def test_ramsey_noise_calibration():
    # 5% additive noise; in-phase Poisson signals, fitted with one shared phase
    rng = np.random.default_rng(5)
    errs = []
    for _ in range(100):
        p = poisson_reference(rng.uniform(0.2, 6.0), 10)
        s = synthesize_ramsey(p, OMEGA0, CHI, KAPPA)
        noisy = s.values + 0.05 * np.max(np.abs(s.values)) * rng.standard_normal(s.times.size)
        pn, _ = fit_ramsey(RamseySignal(s.times, noisy), 10, {"omega0": OMEGA0, "chi": CHI, "kappa": KAPPA},
                           phase_mode="shared")
        errs.append(pn.mean() / p.mean() - 1)
    assert np.mean(np.abs(errs)) < 0.05


def test_ramsey_uncertainties_and_report():
    rng = np.random.default_rng(2)
    p = poisson_reference(2.0, 6)
    s = synthesize_ramsey(p, OMEGA0, CHI, KAPPA)
    noisy = RamseySignal(s.times, s.values + 0.02 * rng.standard_normal(s.times.size))
    pn, fit = fit_ramsey(noisy, 6, {"omega0": OMEGA0, "chi": CHI, "kappa": KAPPA})
    assert np.all(pn.sigmas > 0) and np.all(pn.sigmas < 0.2)
    rep = json.loads(json.dumps(fit.to_dict()))
    names = [q["name"] for q in rep["parameters"]]
    assert names[:3] == ["omega0", "chi", "kappa"]
    assert {"rank_deficient", "clamped_levels"} <= set(rep["flags"])


def test_ramsey_shared_phase_clamps_negative_levels():
    p = np.array([0.5, 0.3, 0.2, 0.0])
    s = synthesize_ramsey(p, OMEGA0, CHI, KAPPA, phases=0.4)
    pn, fit = fit_ramsey(s, 3, {"omega0": OMEGA0, "chi": CHI}, phase_mode="shared")
    np.testing.assert_allclose(pn.probs, p, atol=1e-6)
    assert fit["phi"] == pytest.approx(0.4, abs=1e-6)


def test_ramsey_rejects_short_signal():
    s = synthesize_ramsey(np.array([1.0]), OMEGA0, CHI, KAPPA, times=np.linspace(0, 1e-7, 20))
    with pytest.raises((FitError, ValueError)):
        fit_ramsey(s, 10)


@pytest.mark.parametrize("mode", ["quad", "shared"])
def test_ramsey_jacobians_match_finite_differences(mode):
    rng = np.random.default_rng(3)
    n_levels = 5
    tau = np.linspace(0, 1, 141)
    if mode == "quad":
        x = np.concatenate([[80.0, -3.2, 0.5], rng.normal(size=2 * n_levels)])
        fun, jac = ramsey_residual_quad, ramsey_jacobian_quad
    else:
        x = np.concatenate([[80.0, -3.2, 0.5, 0.3], rng.uniform(0, 1, n_levels)])
        fun, jac = ramsey_residual_shared, ramsey_jacobian_shared
    y = fun(x, tau, np.zeros_like(tau), n_levels)
    num = central_jacobian(lambda v: fun(v, tau, y, n_levels), x)
    assert max_rel_error(jac(x, tau, y, n_levels), num) < 1e-5


# --- double exponential -------------------------------------------------------


def test_double_exp_roundtrip():
    taus = np.linspace(0, 50e-6, 51)
    k1, k2 = TWO_PI * 50e3, TWO_PI * 2e3
    fit = fit_double_exp(taus, double_exp(taus, 2.0, k1, 1.5, k2))
    for name, ref in zip(["a1", "kappa1", "a2", "kappa2"], [2.0, k1, 1.5, k2]):
        assert fit[name] == pytest.approx(ref, rel=1e-3)
    assert not fit.flags["degenerate"]


def test_double_exp_single_exponential():
    taus = np.linspace(0, 50e-6, 51)
    fit = fit_double_exp(taus, 3.0 * np.exp(-TWO_PI * 20e3 * taus))
    assert abs(fit["a2"]) < 1e-3 * fit["a1"]


def test_double_exp_fixed_fast_rate():
    taus = np.linspace(0, 50e-6, 51)
    k1 = TWO_PI * 50e3
    fit = fit_double_exp(taus, double_exp(taus, 1.0, k1, 0.8, TWO_PI * 2e3), fixed_kappa1=k1)
    assert fit["kappa1"] == k1
    assert fit["kappa2"] == pytest.approx(TWO_PI * 2e3, rel=1e-6)
    assert fit.covariance[1, 1] == 0


def test_double_exp_flags_degenerate_rates():
    taus = np.linspace(0, 50e-6, 51)
    y = double_exp(taus, 1.0, TWO_PI * 20e3, 1.0, TWO_PI * 21e3)
    try:
        fit = fit_double_exp(taus, y)
    except FitError:
        return
    assert fit.flags["degenerate"] or fit.flags["single_exponential"]


def test_double_exp_rejects_bad_input():
    taus = np.linspace(0, 1, 10)
    with pytest.raises(FitError):
        fit_double_exp(taus[:5], np.ones(5))
    with pytest.raises(FitError):
        fit_double_exp(taus, -np.ones(10))


@given(st.floats(1e-3, 1e3))
def test_double_exp_time_rescaling(c):
    taus = np.linspace(0, 50e-6, 51)
    y = double_exp(taus, 2.0, TWO_PI * 50e3, 1.5, TWO_PI * 2e3)
    a = fit_double_exp(taus, y)
    b = fit_double_exp(c * taus, y)
    for name in ("kappa1", "kappa2"):
        assert b[name] == pytest.approx(a[name] / c, rel=1e-9)


def test_double_exp_jacobian_matches_finite_differences():
    tau = np.linspace(0, 1, 51)
    x = np.array([0.6, 15.0, 0.4, 0.6])
    y = double_exp_residual(x, tau, np.zeros_like(tau))
    num = central_jacobian(lambda v: double_exp_residual(v, tau, y), x)
    assert max_rel_error(double_exp_jacobian(x, tau, y), num) < 1e-5
    x3 = x[[0, 2, 3]]
    num3 = central_jacobian(lambda v: double_exp_residual(v, tau, y, 15.0), x3)
    assert max_rel_error(double_exp_jacobian(x3, tau, y, 15.0), num3) < 1e-5


# --- interference -------------------------------------------------------------


PHIS = np.linspace(0, 2 * np.pi, 24, endpoint=False)


def test_interference_constant_input():
    fit = fit_interference(PHIS, np.full(PHIS.size, 3.3))
    assert fit["C"] < 1e-9
    assert fit["nbar_off"] == pytest.approx(3.3)


def test_interference_roundtrip():
    fit = fit_interference(PHIS, interference(PHIS, 4.2, 0.3, 4.5))
    assert fit["C"] == pytest.approx(4.2, abs=1e-6)
    assert fit["phi0"] == pytest.approx(0.3, abs=1e-6)
    assert fit["nbar_off"] == pytest.approx(4.5, abs=1e-6)


def test_interference_amplitude_kept_non_negative():
    fit = fit_interference(PHIS, interference(PHIS, -2.0, 0.0, 1.0))
    assert fit["C"] == pytest.approx(2.0)
    assert abs(abs(fit["phi0"]) - np.pi) < 1e-9


def test_interference_preconditions():
    with pytest.raises(FitError):
        fit_interference(PHIS[:4], np.ones(4))
    with pytest.raises(FitError):
        fit_interference(np.linspace(0, 1, 8), np.ones(8))


def test_interference_residuals_uncorrelated_with_phase():
    # tiny deterministic rounding noise keeps the statistic well defined
    rng = np.random.default_rng(0)
    y = interference(PHIS, 4.2, 0.3, 4.5) + 1e-12 * rng.standard_normal(PHIS.size)
    fit = fit_interference(PHIS, y)
    r = interference(PHIS, fit["C"], fit["phi0"], fit["nbar_off"]) - y
    dw = np.sum(np.diff(r) ** 2) / np.sum(r**2)
    assert dw > 1.5


def test_interference_jacobian_matches_finite_differences():
    x = np.array([4.2, 0.3, 4.5])
    num = central_jacobian(lambda v: interference(PHIS, *v), x)
    assert max_rel_error(interference_jacobian(x, PHIS), num) < 1e-5


# --- dephasing envelope -------------------------------------------------------


def test_t2m_roundtrip():
    taus = np.linspace(0, 6e-6, 13)
    fit = fit_t2m(taus, 3.0 * np.exp(-taus / 2.2e-6))
    assert fit["T2m"] == pytest.approx(2.2e-6, rel=1e-3)
    assert fit["C0"] == pytest.approx(3.0, rel=1e-6)


def test_t2m_constant_amplitudes():
    taus = np.linspace(0, 6e-6, 13)
    fit = fit_t2m(taus, np.full(13, 2.0))
    assert fit["gamma_2m"] < 1e-3 / 6e-6


def test_t2m_guards():
    taus = np.linspace(0, 6e-6, 13)
    with pytest.raises(FitError, match="grow"):
        fit_t2m(taus, np.exp(taus / 2e-6))
    with pytest.raises(FitError):
        fit_t2m(taus, -np.ones(13))


def test_t2m_jacobian_matches_finite_differences():
    tau = np.linspace(0, 1, 13)
    x = np.array([1.3, 2.7])
    y = exp_decay_residual(x, tau, np.zeros_like(tau))
    num = central_jacobian(lambda v: exp_decay_residual(v, tau, y), x)
    assert max_rel_error(exp_decay_jacobian(x, tau, y), num) < 1e-5


# --- dispersive shift --------------------------------------------------------


def test_dispersive_shift_zero_anharmonicity():
    assert dispersive_shift(1.0, 5.0, 0.0) == 0


def test_dispersive_shift_decreases_with_detuning():
    deltas = np.linspace(10, 1000, 50)
    vals = np.abs([dispersive_shift(1.0, d, -0.2) for d in deltas])
    assert np.all(np.diff(vals) < 0)


def test_dispersive_shift_inversion_roundtrip():
    g = TWO_PI * 10.5e6
    delta = TWO_PI * (2262e6 - 2339e6)
    chi = TWO_PI * -0.74e6
    alpha_q = anharmonicity_for_shift(g, delta, chi)
    assert dispersive_shift(g, delta, alpha_q) == pytest.approx(chi, rel=1e-9)


def test_dispersive_shift_singular_inputs():
    with pytest.raises(ValueError):
        dispersive_shift(1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        dispersive_shift(1.0, 0.2, 0.2)

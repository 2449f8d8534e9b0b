# test_spectra.py
import math
import time

import numpy as np
import pytest

from app.core.errors import OutOfRegime, ParameterError, SingularAtFrequency
from app.schemas.physics import Phase, SystemParams
from app.services import meanfield_service, spectra_service

ORACLE_PUMP = 1e5


def _point(mu, kappa, **fields):
    params = SystemParams.from_kappa(kappa, mu=mu, **fields)
    return params, meanfield_service.steady_state(params)


# --- Closed forms ---

def test_below_threshold_examples():
    report = spectra_service.variances_below_threshold(0.5, 1.0)
    assert report.squeezed == pytest.approx(2.0 / (1.5 * 2.5), abs=1e-12)
    assert report.squeezed == pytest.approx(0.533333, abs=1e-6)
    assert report.quadratures["x-"].normalized == pytest.approx(2.0 / (0.5 * 1.5))
    assert report.quadratures["x+"].normalized == report.quadratures["y-"].normalized
    markov = spectra_service.variances_below_threshold(0.5, math.inf)
    assert markov.squeezed == pytest.approx(1.0 / 1.5)
    assert markov.amplified == pytest.approx(2.0)


def test_below_threshold_at_and_beyond_threshold():
    at = spectra_service.variances_below_threshold(1.0, 1.0)
    assert at.quadratures["x-"].divergent and at.quadratures["y+"].divergent
    with pytest.raises(OutOfRegime):
        spectra_service.variances_below_threshold(1.2, 1.0)
    continued = spectra_service.variances_below_threshold(10.0, 0.2, continuation=True)
    assert continued.squeezed == pytest.approx(0.4 / (11.0 * 10.4))


def test_u1_examples():
    report = spectra_service.variances_above_threshold_u1(2.0, 1.0)
    assert report.quadratures["x+"].normalized == pytest.approx(0.7)
    assert report.quadratures["y+"].normalized == pytest.approx(5.0 / 3.0)
    assert report.quadratures["y-"].normalized == pytest.approx(1.0 / 3.0)
    assert report.quadratures["x-"].divergent
    markov = spectra_service.variances_above_threshold_u1(3.0, math.inf)
    assert markov.quadratures["x+"].normalized == pytest.approx(2.0 / 3.0 + 1.0 / 6.0)
    assert markov.quadratures["y+"].normalized == pytest.approx(1.25)
    assert markov.quadratures["y-"].normalized == pytest.approx(0.5)
    with pytest.raises(OutOfRegime):
        spectra_service.variances_above_threshold_u1(2.0, 0.2)


def test_u1_converges_to_markovian_limit():
    memory = spectra_service.variances_above_threshold_u1(2.5, 1e7)
    markov = spectra_service.variances_above_threshold_u1(2.5, math.inf)
    for label in ("x+", "y+", "y-"):
        assert memory.quadratures[label].normalized == pytest.approx(markov.quadratures[label].normalized, rel=1e-5)


def test_log_negativity():
    sigma_sq = spectra_service.variances_below_threshold(0.4, 0.2).squeezed
    assert sigma_sq == pytest.approx(0.357143, abs=1e-6)
    result = spectra_service.log_negativity(sigma_sq * 0.5)
    assert result.e_n == pytest.approx(0.742713, abs=1e-6)
    assert spectra_service.log_negativity(0.5).e_n == 0.0
    assert spectra_service.log_negativity(3.0).e_n == 0.0
    with pytest.raises(ParameterError):
        spectra_service.log_negativity(-0.1)
    with pytest.raises(ParameterError):
        spectra_service.log_negativity(float("nan"))


def test_squeezing_exponents():
    mu = np.linspace(10.0, 100.0, 91)
    for kappa, expected in ((0.2, -2.0), (math.inf, -1.0)):
        sigma = [spectra_service.variances_below_threshold(m, kappa, continuation=True).squeezed for m in mu]
        slope = np.polyfit(np.log(mu), np.log(sigma), 1)[0]
        assert abs(slope - expected) < 0.05, f"kappa={kappa}: slope {slope:.3f}, expected {expected}"


# --- Susceptibility ---

def test_susceptibility_diagonal_at_zero_drive():
    params, ss = _point(0.0, 0.7)
    sus = spectra_service.susceptibility_at(params, ss, 0.0)
    assert np.allclose(np.diag(sus), [-0.5, -0.5, -50.0, -0.5, -0.5, -50.0])
    assert np.allclose(sus - np.diag(np.diag(sus)), 0.0)


def test_markovian_susceptibility_is_constant_in_frequency():
    params, ss = _point(0.4, math.inf)
    shift = [spectra_service.susceptibility_at(params, ss, w) - 1j * w * np.eye(6) for w in (0.0, 3.0)]
    assert np.allclose(shift[0], shift[1])


def test_susceptibility_singular_at_threshold():
    params, ss = _point(1.0, 1.0)
    with pytest.raises(SingularAtFrequency) as excinfo:
        spectra_service.susceptibility_at(params, ss, 0.0)
    assert excinfo.value.omega == 0.0
    spectra_service.susceptibility_at(params, ss, 0.5)


# --- PSD ---

@pytest.mark.parametrize("mu, kappa", [(0.5, 1.0), (2.0, 1.0), (1.0, 0.2), (0.3, math.inf)])
def test_psd_is_positive_semidefinite(mu, kappa):
    params, ss = _point(mu, kappa, n_th_i=0.5, n_th_s=0.5)
    sd = spectra_service.psd(params, ss, np.linspace(-8.0, 8.0, 41))
    for omega, S in zip(sd.omega, sd.matrices):
        assert np.allclose(S, S.conj().T, atol=1e-12), f"S not Hermitian at omega={omega}"
        lowest = np.linalg.eigvalsh(S).min()
        assert lowest > -1e-10 * np.abs(S).max(), f"negative eigenvalue {lowest:.2e} at omega={omega}"


def test_diffusion_reduces_to_thermal_weight_in_static_frame():
    params, ss = _point(0.5, 1.0, n_th_i=2.0, n_th_s=2.0)
    D = spectra_service.diffusion_matrix(params, ss, 0.0, pump_noise=False)
    assert D[0, 0].real == pytest.approx(2.5)
    assert abs(D[0, 3]) < 1e-15, "no x-y cross terms without a frame shift"
    rotating_params, rotating = _point(1.0, 0.2)
    D = spectra_service.diffusion_matrix(rotating_params, rotating, 0.3, pump_noise=True)
    assert np.allclose(D, D.conj().T)
    assert abs(D[0, 4]) > 0, "frame shift couples x+ to y-"


def test_thermal_sum_rule_at_zero_drive():
    for kappa in (1.0, 0.2, math.inf):
        params, ss = _point(0.0, kappa, n_th_i=1.5, n_th_s=1.5)
        report = spectra_service.integrate_variances(spectra_service.psd(params, ss, []))
        for label, q in report.quadratures.items():
            assert abs(q.normalized - 1.0) < 1e-6, f"kappa={kappa} {label}: {q.normalized}"


def test_spectral_integration_matches_closed_forms_below_threshold():
    start = time.time()
    for kappa in np.logspace(math.log10(0.1), math.log10(3.0), 10):
        mu_cr = meanfield_service.critical_drive(kappa)
        for mu in mu_cr * np.linspace(0.05, 0.85, 10):
            params, ss = _point(mu, kappa)
            report = spectra_service.integrate_variances(spectra_service.psd(params, ss, []))
            expected = spectra_service.variances_below_threshold(mu, kappa)
            for label in spectra_service.REPORTED:
                got, want = report.normalized(label), expected.normalized(label)
                assert abs(got / want - 1.0) < 1e-3, f"mu={mu:.3f} kappa={kappa:.3f} {label}: {got} vs {want}"
    print(f"  ✅ SUCCESS: 100 below-threshold points in {time.time() - start:.1f}s.")


def test_spectral_integration_matches_closed_forms_u1():
    start = time.time()
    for kappa in np.linspace(0.6, 3.0, 10):
        for mu in np.linspace(1.2, 3.0, 10):
            params, ss = _point(mu, kappa, gammaP=ORACLE_PUMP)
            report = spectra_service.integrate_variances(spectra_service.psd(params, ss, []))
            expected = spectra_service.variances_above_threshold_u1(mu, kappa)
            assert report.quadratures["x-"].divergent, f"x- must diverge at mu={mu}, kappa={kappa}"
            for label in ("x+", "y+", "y-"):
                got, want = report.normalized(label), expected.normalized(label)
                assert abs(got / want - 1.0) < 1e-3, f"mu={mu:.3f} kappa={kappa:.3f} {label}: {got} vs {want}"
    elapsed = time.time() - start
    assert elapsed < 60.0, f"U1 oracle took {elapsed:.1f}s"


@pytest.mark.parametrize("mu, kappa", [(0.5, 1.0), (0.25, 0.2), (2.0, 1.0), (1.0, 0.2), (0.9, 0.3), (1.5, math.inf)])
def test_spectral_integration_matches_lyapunov(mu, kappa):
    params, ss = _point(mu, kappa, n_th_i=0.3, n_th_s=0.3, n_th_P=0.1)
    spectral = spectra_service.integrate_variances(spectra_service.psd(params, ss, []))
    lyapunov = spectra_service.covariance_report(params, ss)
    for label in spectra_service.REPORTED:
        a, b = spectral.quadratures[label], lyapunov.quadratures[label]
        assert a.divergent == b.divergent, f"{label}: divergence flags disagree"
        if not a.divergent:
            assert a.absolute == pytest.approx(b.absolute, rel=1e-5), f"{label}: {a.absolute} vs {b.absolute}"


def test_u1xz2_mixed_squeezing():
    params, ss = _point(1.0, 0.2)
    report = spectra_service.variances_u1xz2(params, ss)
    assert report.phase == Phase.U1XZ2
    assert report.quadratures["x-"].divergent
    assert report.mixing_angle is not None and 0.0 <= report.mixing_angle < math.pi
    single = min(report.quadratures[label].normalized for label in ("x+", "y-"))
    assert report.squeezed <= single + 1e-12
    with pytest.raises(OutOfRegime):
        spectra_service.variances_u1xz2(*_point(2.0, 1.0))


def test_u1xz2_branches_give_identical_reports():
    params, plus = _point(1.0, 0.2, gammaP=ORACLE_PUMP)
    minus = meanfield_service.steady_state(params, z2_branch=-1)
    assert minus.signed_delta == pytest.approx(-plus.signed_delta)
    a = spectra_service.variances_u1xz2(params, plus)
    b = spectra_service.variances_u1xz2(params, minus)
    assert a.squeezed == pytest.approx(b.squeezed, rel=1e-6)
    for label in spectra_service.REPORTED:
        qa, qb = a.quadratures[label], b.quadratures[label]
        assert qa.divergent == qb.divergent, label
        if not qa.divergent:
            assert qa.normalized == pytest.approx(qb.normalized, rel=1e-6), f"{label}: {qa.normalized} vs {qb.normalized}"


def test_u1xz2_squeezing_continuous_at_threshold():
    report = spectra_service.variances_u1xz2(*_point(0.4001, 0.2, gammaP=ORACLE_PUMP))
    below = spectra_service.variances_below_threshold(0.4, 0.2)
    assert below.squeezed == pytest.approx(0.357143, abs=1e-6)
    assert report.squeezed == pytest.approx(below.squeezed, rel=1e-3)


def test_u1xz2_approach_to_u1_boundary():
    # x+ and y- meet the U1 values; y+ keeps a finite extra share from the slow
    # relative-phase mode, whose coupling and damping both vanish with delta**2.
    u1 = spectra_service.variances_above_threshold_u1(2.0, 0.5)
    near = spectra_service.variances_u1xz2(*_point(2.0, 0.499, gammaP=ORACLE_PUMP))
    nearer = spectra_service.variances_u1xz2(*_point(2.0, 0.4999, gammaP=ORACLE_PUMP))
    for label in ("x+", "y-"):
        got, want = nearer.normalized(label), u1.normalized(label)
        assert abs(got / want - 1.0) < 0.01, f"{label}: {got} vs U1 {want}"
    y_near, y_nearer = near.normalized("y+"), nearer.normalized("y+")
    assert math.isfinite(y_nearer)
    assert y_nearer > 1.1 * u1.normalized("y+"), f"y+ {y_nearer} vs U1 {u1.normalized('y+')}"
    assert y_nearer == pytest.approx(y_near, rel=0.05)


def test_squeezing_scan_finds_rotated_minimum():
    cov = np.zeros((6, 6))
    cov[0, 0], cov[4, 4], cov[0, 4] = 1.0, 1.0, 0.8
    cov[4, 0] = 0.8
    theta, value = spectra_service.squeezing_scan(cov)
    assert value == pytest.approx(0.2, abs=1e-9)
    assert theta == pytest.approx(3.0 * math.pi / 4.0, abs=1e-5)


def test_variances_by_method_agree():
    params = SystemParams.from_kappa(1.0, mu=0.5)
    results = {m: spectra_service.variances_by_method(params, m).squeezed for m in spectra_service.VARIANCE_METHODS}
    assert results["closed-form"] == pytest.approx(results["auto"], rel=1e-6)
    assert results["closed-form"] == pytest.approx(results["lyapunov"], rel=1e-8)
    with pytest.raises(ValueError):
        spectra_service.variances_by_method(params, "guess")


@pytest.mark.parametrize("mu, kappa", [(1.0, 1.0), (0.4, 0.2), (1.0, math.inf)])
def test_lyapunov_refuses_critical_points(mu, kappa):
    params = SystemParams.from_kappa(kappa, mu=mu)
    with pytest.raises(SingularAtFrequency) as excinfo:
        spectra_service.variances_by_method(params, "lyapunov")
    assert excinfo.value.omega == 0.0
    assert excinfo.value.point["mu"] == mu


def test_lyapunov_just_below_threshold_stays_finite():
    params = SystemParams.from_kappa(1.0, mu=0.999)
    report = spectra_service.variances_by_method(params, "lyapunov")
    expected = spectra_service.variances_below_threshold(0.999, 1.0)
    assert report.squeezed == pytest.approx(expected.squeezed, rel=1e-6)
    assert all(q.normalized > 0 for q in report.quadratures.values() if not q.divergent)


# --- Negativity ---

def test_negativity_map_layout_and_comparator():
    rows = spectra_service.negativity_map([0.2, 0.3], [0.2, 1.0], n_th=[0.0, 1.0], markovian_comparator=True)
    assert len(rows) == 2 * 2 * 2 + 2 * 2
    assert [r.comparator for r in rows].count(True) == 4
    assert all(math.isinf(r.kappa) for r in rows if r.comparator)
    assert all(r.error is None for r in rows)
    first = rows[0]
    assert first.n_th == 0.0 and first.kappa == 0.2 and first.mu == 0.2
    assert first.e_n > 0


@pytest.mark.parametrize("kappa, mu_grid", [(0.2, [0.1, 0.2, 0.3, 0.39]), (1.0, [0.5, 0.9, 1.5, 2.5])])
def test_negativity_never_grows_with_occupancy(kappa, mu_grid):
    n_th = [0.0, 0.5, 1.0, 2.0, 5.0]
    rows = spectra_service.negativity_map(mu_grid, [kappa], n_th=n_th)
    assert all(r.error is None for r in rows), [r.error for r in rows if r.error]
    for mu in mu_grid:
        curve = [r.e_n for r in sorted((r for r in rows if r.mu == mu), key=lambda r: r.n_th)]
        assert len(curve) == len(n_th)
        assert curve[0] > 0, f"mu={mu}: no entanglement at zero temperature"
        assert all(b <= a + 1e-12 for a, b in zip(curve, curve[1:])), f"mu={mu}: E_N rose with n_th {curve}"


def test_negativity_survives_thermal_noise_with_memory():
    base = SystemParams(gammaP=1e4)
    mu_grid = list(np.linspace(20.0, 80.0, 7))
    rows = spectra_service.negativity_map(mu_grid, [0.2], n_th=[5.0], n_th_P=0.0,
                                          markovian_comparator=True, base=base)
    memory = {r.mu: r for r in rows if not r.comparator}
    markov = {r.mu: r for r in rows if r.comparator}
    assert all(r.error is None for r in rows), [r.error for r in rows if r.error]
    entangled = [mu for mu, r in memory.items() if r.e_n > 0]
    assert entangled, f"no entanglement at n_th=5: {[r.e_n for r in memory.values()]}"
    for mu in entangled:
        assert memory[mu].e_n > markov[mu].e_n, f"mu={mu}: {memory[mu].e_n} vs comparator {markov[mu].e_n}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

import numpy as np
import pytest

from sagnacsim.errors import DegenerateCurve, FitDiverged, InvalidParams
from sagnacsim.measurement import (
    AnalyzerSetting, CoincidenceRecord, CorrelationCurve, CurveSample, accidental_rate,
    analyzer_vector, coincidence_probability, expected_record, predicted_rate, projector,
    simulate_record, singles_rates, sweep_curve, visibility_bootstrap, visibility_fit,
    visibility_minmax,
)
from sagnacsim.source import SourceParams
from sagnacsim.states import bell_density, random_density, werner

PSI_M = bell_density("psi-minus")
H = AnalyzerSetting(0)


def _curve(y, thetas=None, duration=1.0):
    thetas = np.arange(16) * 22.5 if thetas is None else thetas
    return CorrelationCurve(0.0, [CurveSample(t, c, duration) for t, c in zip(thetas, y)])


def test_angle_normalization():
    assert AnalyzerSetting(190).pol_angle == pytest.approx(10)
    assert AnalyzerSetting(-45, 270).pol_angle == pytest.approx(135)
    assert AnalyzerSetting(-45, 270).qwp_angle == pytest.approx(90)
    assert AnalyzerSetting(180 - 1e-12).pol_angle == 0
    assert AnalyzerSetting(30).perpendicular().pol_angle == pytest.approx(120)
    with pytest.raises(InvalidParams):
        AnalyzerSetting(float("nan"))


def test_projectors_linear():
    assert np.allclose(projector(H), [[1, 0], [0, 0]])
    assert np.allclose(projector(AnalyzerSetting(45)), np.full((2, 2), 0.5))


def test_projector_circular():
    # oracle: QWP(0) = diag(1, i); transmitted state QWP^dag (1, 1)/sqrt2 = (1, -i)/sqrt2
    v = np.array([1, -1j]) / np.sqrt(2)
    expected = np.outer(v, v.conj())
    P = projector(AnalyzerSetting(45, 0))
    assert np.allclose(P, expected)
    assert P[0, 1] == pytest.approx(0.5j)
    assert P[1, 0] == pytest.approx(-0.5j)


def test_projector_orthogonality():
    for pol in np.linspace(0, 170, 18):
        for q in (None, 0.0, 30.0):
            a = AnalyzerSetting(pol, q)
            P, Q = projector(a), projector(a.perpendicular())
            assert np.allclose(P + Q, np.eye(2))
            assert abs(np.linalg.norm(analyzer_vector(a)) - 1) < 1e-12


def test_coincidence_probability_psi_minus():
    assert coincidence_probability(PSI_M, H, H) == pytest.approx(0, abs=1e-15)
    assert coincidence_probability(PSI_M, H, AnalyzerSetting(90)) == pytest.approx(0.5)
    assert coincidence_probability(PSI_M, H, AnalyzerSetting(45)) == pytest.approx(0.25)
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(0, 180, size=(50, 2)):
        p = coincidence_probability(PSI_M, AnalyzerSetting(a), AnalyzerSetting(b))
        assert p == pytest.approx(0.5 * np.sin(np.deg2rad(a - b)) ** 2, abs=1e-12)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rho = random_density(rng)
        a, b = AnalyzerSetting(*rng.uniform(0, 180, 2)), AnalyzerSetting(*rng.uniform(0, 180, 2))
        total = sum(coincidence_probability(rho, x, y)
                    for x in (a, a.perpendicular()) for y in (b, b.perpendicular()))
        assert total == pytest.approx(1, abs=1e-12)


def test_predicted_rate_zero_source():
    src = SourceParams(pair_rate=0, dark_rate=0)
    assert predicted_rate(PSI_M, H, H, src) == 0


def test_accidental_floor_at_operating_point():
    src = SourceParams()
    sa, sb = singles_rates(PSI_M, H, AnalyzerSetting(90), src)
    # singles at the analyzed operating point are the typical 30 kHz
    assert sa == pytest.approx(30e3, rel=1e-3)
    assert sb == pytest.approx(30e3, rel=1e-3)
    true = predicted_rate(PSI_M, H, H, src)
    assert true == pytest.approx(accidental_rate(sa, sb, 30e-9))
    assert true == pytest.approx(sa * sb * 30e-9)


def test_simulate_record_statistics():
    src = SourceParams()
    a, b = H, AnalyzerSetting(45)
    mean = predicted_rate(PSI_M, a, b, src) * 0.01
    draws = np.array([simulate_record(PSI_M, a, b, src, 0.01, s).coincidences for s in range(10_000)])
    assert abs(draws.mean() - mean) <= 3 * np.sqrt(mean) / np.sqrt(10_000)


def test_simulate_record_deterministic_and_consistent():
    src = SourceParams()
    r1 = simulate_record(PSI_M, H, AnalyzerSetting(90), src, 1.0, 42)
    r2 = simulate_record(PSI_M, H, AnalyzerSetting(90), src, 1.0, 42)
    assert r1 == r2
    assert r1.coincidences <= min(r1.singles_a, r1.singles_b)


def test_zero_rate_zero_counts():
    src = SourceParams(pair_rate=0, dark_rate=0)
    for s in range(20):
        r = simulate_record(PSI_M, H, H, src, 10.0, s)
        assert r.coincidences == r.singles_a == r.singles_b == 0


def test_record_validation():
    with pytest.raises(InvalidParams):
        CoincidenceRecord(H, H, 1, 1, 1, 0)
    with pytest.raises(InvalidParams):
        CoincidenceRecord(H, H, -1, 1, 1, 1)
    with pytest.raises(InvalidParams):
        simulate_record(PSI_M, H, H, SourceParams(), 0, 1)


def test_minmax_arithmetic():
    v, dv = visibility_minmax(_curve([1, 50, 199, 50]))
    assert v == pytest.approx(0.99)
    assert dv > 0


def test_minmax_werner_noiseless():
    src = SourceParams(dark_rate=0, coinc_window=0)
    rho = werner(0.9)
    thetas = np.linspace(0, 180, 721)
    for fixed in (0.0, 45.0, 30.0):
        curve = sweep_curve(rho, fixed, src, thetas=thetas)
        assert visibility_minmax(curve)[0] == pytest.approx(0.9, abs=1e-9)


def test_minmax_subtracts_accidentals():
    src = SourceParams(dark_rate=0)
    curve = sweep_curve(PSI_M, 0.0, src)
    assert visibility_minmax(curve)[0] < 0.995
    assert visibility_minmax(curve, src.coinc_window)[0] == pytest.approx(1, abs=1e-12)


def test_minmax_degenerate():
    with pytest.raises(DegenerateCurve):
        visibility_minmax(_curve([0] * 16))


def test_bootstrap_matches_propagation():
    src = SourceParams()
    curve = sweep_curve(werner(0.95), 45.0, src, 1.0, seed=3)
    v, dv = visibility_minmax(curve, src.coinc_window)
    boot = visibility_bootstrap(curve, 2000, 4, src.coinc_window)
    # both extremes are unique bins here, so the two error estimates agree
    assert boot == pytest.approx(dv, rel=0.15)
    assert visibility_bootstrap(curve, 200, 5) == visibility_bootstrap(curve, 200, 5)


def test_fit_exact_model():
    th = np.arange(16) * 22.5
    y = 100 * np.sin(np.deg2rad(th - 10.0)) ** 2
    fit = visibility_fit(_curve(y, th, 1.0))
    assert fit.visibility == pytest.approx(1, abs=1e-6)
    assert fit.phase == pytest.approx(10, abs=1e-6)


def test_fit_noisy_coverage():
    rng = np.random.default_rng(7)
    th = np.arange(16) * 22.5
    scale = 1e4 / 98
    mean = scale * (98 * np.sin(np.deg2rad(th)) ** 2 + 1)
    target = 98 / (98 + 2)
    hits = 0
    for _ in range(200):
        fit = visibility_fit(_curve(rng.poisson(mean), th))
        hits += abs(fit.visibility - target) <= 3 * fit.visibility_err
    assert hits >= 0.9 * 200


def test_fit_constant_curve_is_flagged():
    try:
        fit = visibility_fit(_curve([500] * 16))
    except (FitDiverged, DegenerateCurve):
        return
    assert fit.degenerate
    assert abs(fit.visibility) < 0.05


def test_fit_requires_coverage():
    with pytest.raises(DegenerateCurve):
        visibility_fit(_curve([1, 2, 3, 4, 5, 6, 7], np.arange(7) * 10.0))
    assert not _curve([1] * 8, np.arange(8) * 10.0).fit_permitted


def test_sweep_seed_per_point():
    src = SourceParams()
    c1 = sweep_curve(PSI_M, 0.0, src, seed=11)
    c2 = sweep_curve(PSI_M, 0.0, src, seed=np.random.SeedSequence(11))
    assert np.array_equal(c1.counts, c2.counts)
    rec = expected_record(PSI_M, H, AnalyzerSetting(90), src, 1.0)
    assert rec.coincidences == pytest.approx(predicted_rate(PSI_M, H, AnalyzerSetting(90), src))

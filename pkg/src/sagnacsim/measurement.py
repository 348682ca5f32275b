"""Polarization analyzers, coincidence prediction and count simulation.

Each arm has a polarization stage made of an optional quarter-wave plate
followed by a linear polarizer. Jones matrices use

    R(t) = [[cos t, -sin t], [sin t, cos t]]
    QWP(t) = R(t) @ diag(1, i) @ R(-t)

and the analyzer transmits the state QWP(q)^dag @ (cos p, sin p).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import DegenerateCurve, FitDiverged, InvalidParams
from .states import reduced_state


def _norm_angle(angle: float) -> float:
    a = float(angle) % 180.0
    # fold round-off like 179.99999999999997 back onto 0
    if abs(a - 180.0) < 1e-9:
        a = 0.0
    return a


@dataclass(frozen=True)
class AnalyzerSetting:
    """Polarizer angle and optional QWP fast-axis angle, degrees from H."""

    pol_angle: float
    qwp_angle: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.pol_angle):
            raise InvalidParams("polarizer angle must be finite")
        object.__setattr__(self, "pol_angle", _norm_angle(self.pol_angle))
        if self.qwp_angle is not None:
            if not np.isfinite(self.qwp_angle):
                raise InvalidParams("QWP angle must be finite")
            object.__setattr__(self, "qwp_angle", _norm_angle(self.qwp_angle))

    def perpendicular(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.pol_angle + 90.0, self.qwp_angle)

    def key(self, ndigits: int = 6):
        q = None if self.qwp_angle is None else round(self.qwp_angle, ndigits) % 180.0
        return (round(self.pol_angle, ndigits) % 180.0, q)


def rotation(theta_deg: float) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]], dtype=complex)


def qwp(theta_deg: float) -> np.ndarray:
    return rotation(theta_deg) @ np.diag([1, 1j]) @ rotation(-theta_deg)


def hwp(theta_deg: float) -> np.ndarray:
    return rotation(theta_deg) @ np.diag([1, -1]).astype(complex) @ rotation(-theta_deg)


def polarizer(theta_deg: float) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    e = np.array([np.cos(t), np.sin(t)], dtype=complex)
    return np.outer(e, e)


def analyzer_vector(setting: AnalyzerSetting) -> np.ndarray:
    t = np.deg2rad(setting.pol_angle)
    e = np.array([np.cos(t), np.sin(t)], dtype=complex)
    if setting.qwp_angle is None:
        return e
    return qwp(setting.qwp_angle).conj().T @ e


def projector(setting: AnalyzerSetting) -> np.ndarray:
    a = analyzer_vector(setting)
    return np.outer(a, a.conj())


def coincidence_probability(rho, a: AnalyzerSetting, b: AnalyzerSetting) -> float:
    """tr(rho . Pi_a (x) Pi_b)."""
    va, vb = analyzer_vector(a), analyzer_vector(b)
    v = np.kron(va, vb)
    p = np.real(v.conj() @ np.asarray(rho) @ v)
    return float(min(max(p, 0.0), 1.0))


def single_probability(rho, setting: AnalyzerSetting, arm: int) -> float:
    v = analyzer_vector(setting)
    p = np.real(v.conj() @ reduced_state(rho, arm) @ v)
    return float(min(max(p, 0.0), 1.0))


def singles_rates(rho, a: AnalyzerSetting, b: AnalyzerSetting, src):
    """Detected singles rates (Hz) on both arms, dark counts included."""
    gain = src.pair_rate * src.eta_couple * src.eta_detect
    sa = gain * single_probability(rho, a, 0) + src.dark_rate
    sb = gain * single_probability(rho, b, 1) + src.dark_rate
    return sa, sb


def true_coincidence_rate(rho, a, b, src) -> float:
    return src.pair_rate * (src.eta_couple * src.eta_detect) ** 2 * coincidence_probability(rho, a, b)


def accidental_rate(singles_a: float, singles_b: float, window: float) -> float:
    return singles_a * singles_b * window


def predicted_rate(rho, a: AnalyzerSetting, b: AnalyzerSetting, src) -> float:
    """Expected coincidence rate in Hz: true pairs plus accidentals."""
    sa, sb = singles_rates(rho, a, b, src)
    return true_coincidence_rate(rho, a, b, src) + accidental_rate(sa, sb, src.coinc_window)


@dataclass(frozen=True)
class CoincidenceRecord:
    """One acquisition window. Counts may be non-integer expectation values
    for noiseless records."""

    setting_a: AnalyzerSetting
    setting_b: AnalyzerSetting
    coincidences: float
    singles_a: float
    singles_b: float
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidParams("duration must be positive")
        for name in ("coincidences", "singles_a", "singles_b"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be nonnegative")

    @property
    def rate(self) -> float:
        return self.coincidences / self.duration

    def accidentals(self, window: float | None) -> float:
        """Expected accidental counts in this window from the measured singles."""
        if not window:
            return 0.0
        return self.singles_a * self.singles_b * window / self.duration


def expected_record(rho, a, b, src, duration: float) -> CoincidenceRecord:
    """Noiseless record holding mean counts."""
    sa, sb = singles_rates(rho, a, b, src)
    return CoincidenceRecord(a, b, predicted_rate(rho, a, b, src) * duration,
                             sa * duration, sb * duration, duration)


def simulate_record(rho, a, b, src, duration: float, seed) -> CoincidenceRecord:
    """Poisson-sampled record, deterministic for a given seed.

    Coincident clicks are counted inside the singles: singles are drawn as
    coincidences plus an independent Poisson remainder, so the record always
    satisfies coincidences <= min(singles).
    """
    if not duration > 0:
        raise InvalidParams("duration must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sa, sb = singles_rates(rho, a, b, src)
    mean_c = predicted_rate(rho, a, b, src) * duration
    c = int(rng.poisson(mean_c))
    rest_a = max(sa * duration - mean_c, 0.0)
    rest_b = max(sb * duration - mean_c, 0.0)
    na = c + int(rng.poisson(rest_a))
    nb = c + int(rng.poisson(rest_b))
    return CoincidenceRecord(a, b, c, na, nb, duration)


# -- correlation curves ------------------------------------------------------

@dataclass(frozen=True)
class CurveSample:
    theta: float
    coincidences: float
    duration: float
    singles_a: float = 0.0
    singles_b: float = 0.0


@dataclass
class CorrelationCurve:
    """Coincidences versus the swept polarizer angle with the other arm fixed.

    ``theta`` values keep the raw sweep angle (not folded to [0, 180)).
    """

    fixed_angle: float
    samples: list = field(default_factory=list)
    fixed_arm: str = "A"
    fixed_qwp: Optional[float] = None

    def __post_init__(self):
        if self.fixed_arm not in ("A", "B"):
            raise InvalidParams("fixed_arm must be 'A' or 'B'")

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.samples], dtype=float)

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.coincidences for s in self.samples], dtype=float)

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.samples], dtype=float)

    def accidentals(self, window: float | None) -> np.ndarray:
        if not window:
            return np.zeros(len(self.samples))
        return np.array([s.singles_a * s.singles_b * window / s.duration for s in self.samples])

    @property
    def fit_permitted(self) -> bool:
        th = self.thetas
        return len(th) >= 8 and th.max() - th.min() >= 180.0 - 1e-9

    def settings(self, sample: CurveSample):
        fixed = AnalyzerSetting(self.fixed_angle, self.fixed_qwp)
        swept = AnalyzerSetting(sample.theta)
        return (fixed, swept) if self.fixed_arm == "A" else (swept, fixed)

    def to_records(self) -> list:
        out = []
        for s in self.samples:
            a, b = self.settings(s)
            out.append(CoincidenceRecord(a, b, s.coincidences, s.singles_a, s.singles_b, s.duration))
        return out


DEFAULT_SWEEP = tuple(np.arange(16) * 22.5)


def sweep_curve(rho, fixed_angle, src, duration=1.0, thetas=DEFAULT_SWEEP, seed=None,
                fixed_arm="A") -> CorrelationCurve:
    """Correlation curve from the source model; noiseless if ``seed`` is None.

    With a seed (int or SeedSequence), sample ``i`` draws from child ``i`` of
    the seed sequence, so each point is reproducible on its own.
    """
    curve = CorrelationCurve(fixed_angle, [], fixed_arm)
    children = None
    if seed is not None:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = ss.spawn(len(thetas))
    for i, th in enumerate(thetas):
        a, b = curve.settings(CurveSample(th, 0, duration))
        if children is None:
            rec = expected_record(rho, a, b, src, duration)
        else:
            rec = simulate_record(rho, a, b, src, duration, np.random.default_rng(children[i]))
        curve.samples.append(CurveSample(float(th), rec.coincidences, duration,
                                         rec.singles_a, rec.singles_b))
    return curve


def _visibility_from_extremes(cmax, cmin, var_max, var_min):
    total = cmax + cmin
    if total == 0:
        raise DegenerateCurve("C_max + C_min is zero")
    v = (cmax - cmin) / total
    # dV/dCmax = 2 Cmin / total^2, dV/dCmin = -2 Cmax / total^2
    dv = 2.0 * np.sqrt(cmin ** 2 * var_max + cmax ** 2 * var_min) / total ** 2
    return float(v), float(dv)


def visibility_minmax(curve: CorrelationCurve, coinc_window: float | None = None):
    """(C_max - C_min)/(C_max + C_min) on rate-normalized counts.

    With ``coinc_window`` the accidental floor estimated from the recorded
    singles is subtracted first. The error bar is first-order Poisson
    propagation from the two extreme bins. Returns ``(V, dV)``.
    """
    if len(curve.samples) < 2:
        raise DegenerateCurve("need at least two samples")
    n = curve.counts
    d = curve.durations
    rates = (n - curve.accidentals(coinc_window)) / d
    imax, imin = int(np.argmax(rates)), int(np.argmin(rates))
    return _visibility_from_extremes(rates[imax], rates[imin],
                                     n[imax] / d[imax] ** 2, n[imin] / d[imin] ** 2)


def visibility_bootstrap(curve: CorrelationCurve, n_resamples=1000, seed=0,
                         coinc_window: float | None = None) -> float:
    """Parametric (Poisson) bootstrap standard deviation of the min/max visibility."""
    rng = np.random.default_rng(seed)
    n = curve.counts
    d = curve.durations
    acc = curve.accidentals(coinc_window)
    draws = rng.poisson(n, size=(n_resamples, len(n)))
    rates = (draws - acc) / d
    cmax, cmin = rates.max(axis=1), rates.min(axis=1)
    total = cmax + cmin
    ok = total != 0
    if not ok.any():
        raise DegenerateCurve("all bootstrap resamples are empty")
    v = (cmax[ok] - cmin[ok]) / total[ok]
    return float(v.std(ddof=1))


@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    visibility_err: float
    phase: float
    phase_err: float
    offset: float
    offset_err: float
    amplitude: float
    amplitude_err: float
    degenerate: bool = False

    def as_tuple(self):
        return self.visibility, self.visibility_err, self.phase, self.offset


def _sin2_model(theta, amp, phase, offset):
    return amp * np.sin(np.deg2rad(theta - phase)) ** 2 + offset


def visibility_fit(curve: CorrelationCurve, coinc_window: float | None = None,
                   max_nfev: int = 2000) -> VisibilityFit:
    """Weighted least-squares fit of rate(theta) = A sin^2(theta - phase) + B.

    V = A / (A + 2B). The linear form m - r cos(2 theta - 2 phase) seeds the
    nonlinear fit; uncertainties come from the fit covariance with Poisson
    weights on the raw counts. Rates are in Hz, phase in degrees.
    """
    if not curve.fit_permitted:
        raise DegenerateCurve("fit requires >= 8 samples spanning >= 180 degrees")
    th = curve.thetas
    n = curve.counts
    d = curve.durations
    y = (n - curve.accidentals(coinc_window)) / d
    sigma = np.sqrt(np.maximum(n, 1.0)) / d

    x = np.deg2rad(2 * th)
    design = np.column_stack([np.ones_like(x), np.cos(x), np.sin(x)])
    coef, *_ = np.linalg.lstsq(design / sigma[:, None], y / sigma, rcond=None)
    m, bc, bs = coef
    r = np.hypot(bc, bs)
    # m - r cos(2 th - 2 phi) = m + bc cos 2th + bs sin 2th  =>  phase where cos term hits -r
    phase0 = 0.5 * np.rad2deg(np.arctan2(-bs, -bc))
    p0 = (2 * r, phase0, m - r)

    def residuals(p):
        return (_sin2_model(th, *p) - y) / sigma

    try:
        sol = optimize.least_squares(residuals, p0, method="lm", max_nfev=max_nfev,
                                     x_scale="jac")
    except Exception as exc:  # pragma: no cover - scipy internal failure
        raise FitDiverged(str(exc)) from exc
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitDiverged(f"least-squares fit failed: {sol.message}")
    r0 = np.linalg.norm(residuals(p0))
    if np.linalg.norm(sol.fun) > r0 * (1 + 1e-9) + 1e-12:
        raise FitDiverged("residual norm increased during the fit")

    amp, phase, offset = sol.x
    if amp < 0:
        amp, phase, offset = -amp, phase + 90.0, offset + amp
    phase = (phase + 90.0) % 180.0 - 90.0
    J = sol.jac
    dof = max(len(th) - 3, 1)
    chi2_red = float(np.sum(sol.fun ** 2) / dof)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.inf)
    # scale by reduced chi^2 only when the data over-disperse the Poisson model
    cov = cov * max(chi2_red, 1.0)
    amp_err, phase_err, off_err = np.sqrt(np.abs(np.diag(cov)))

    denom = amp + 2 * offset
    if denom == 0:
        raise DegenerateCurve("A + 2B is zero")
    vis = amp / denom
    # gradient of A/(A+2B) in (A, phase, B)
    g = np.array([2 * offset / denom ** 2, 0.0, -2 * amp / denom ** 2])
    with np.errstate(invalid="ignore"):
        vis_err = float(np.sqrt(max(g @ cov @ g, 0.0)))
    degenerate = bool(not np.isfinite(vis_err) or vis_err > abs(vis) or amp < 2 * amp_err)
    return VisibilityFit(float(vis), vis_err, float(phase), float(phase_err),
                         float(offset), float(off_err), float(amp), float(amp_err),
                         degenerate)

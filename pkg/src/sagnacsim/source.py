"""Sagnac SPDC source model and brightness estimates."""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import DegenerateCurve, Infeasible, InvalidParams, NonpositiveLength, ZeroSingles
from .measurement import AnalyzerSetting, coincidence_probability
from .states import density_from_ket

# single-mode bandwidth constant, nm * m
BANDWIDTH_CONSTANT = 5.52e-3


@dataclass(frozen=True)
class SourceParams:
    """Source configuration. Defaults follow the typical operating point:
    30 ns window, 500 Hz darks, 30 % detection efficiency, 15 mm crystal.

    ``pair_rate`` is the generated pair rate (Hz) and ``pump_power`` is in mW;
    the default pair rate gives 30 kHz analyzed singles for a balanced state.
    """

    theta_pump: float = 45.0
    phi: float = 180.0
    lambda_white: float = 0.0
    lambda_dephase: float = 0.0
    pair_rate: float = 597771.0
    eta_couple: float = 0.329
    eta_detect: float = 0.30
    dark_rate: float = 500.0
    coinc_window: float = 30e-9
    pump_power: float = 4.0
    crystal_length: float = 0.015
    pump_wavelength_nm: float = 405.0
    output_wavelength_nm: float = 810.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("theta_pump", "phi", "lambda_white", "lambda_dephase", "pair_rate",
                     "eta_couple", "eta_detect", "dark_rate", "coinc_window", "pump_power",
                     "crystal_length"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParams(f"{name} must be finite")
        lw, ld = self.lambda_white, self.lambda_dephase
        if lw < 0 or ld < 0 or lw + ld > 1 + 1e-12:
            raise InvalidParams("noise weights must be nonnegative with lambda_white + lambda_dephase <= 1")
        for name in ("pair_rate", "dark_rate", "coinc_window", "pump_power", "crystal_length"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be nonnegative")
        for name in ("eta_couple", "eta_detect"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidParams(f"{name} must lie in [0, 1]")

    def replace(self, **changes) -> "SourceParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_singles_rate(cls, singles_rate=30e3, **kwargs) -> "SourceParams":
        """Choose ``pair_rate`` so that the analyzed singles of a state with a
        maximally mixed marginal equal ``singles_rate`` (darks included)."""
        base = cls(**kwargs)
        gain = base.eta_couple * base.eta_detect * 0.5
        if gain <= 0:
            raise InvalidParams("zero efficiency")
        return base.replace(pair_rate=max(singles_rate - base.dark_rate, 0.0) / gain)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SourceParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParams(f"unknown source parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def load(cls, path) -> "SourceParams":
        """Read a JSON or TOML parameter file. A top-level ``params`` table is
        used when present, other top-level keys are treated as metadata."""
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ImportError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        if "params" in data:
            data = data["params"]
        return cls.from_dict(data)


def source_ket(theta_pump: float, phi: float) -> np.ndarray:
    t, f = np.deg2rad(theta_pump), np.deg2rad(phi)
    return np.array([0, np.cos(t), np.exp(1j * f) * np.sin(t), 0], dtype=complex)


def dephase(rho) -> np.ndarray:
    """Remove the HV <-> VH coherence."""
    out = np.array(rho, dtype=complex)
    out[1, 2] = out[2, 1] = 0
    return out


def source_state(p: SourceParams) -> np.ndarray:
    """(1 - lw - ld) |psi><psi| + ld D(|psi><psi|) + lw I/4 with
    |psi> = cos(theta)|HV> + exp(i phi) sin(theta)|VH>."""
    p.validate()
    pure = density_from_ket(source_ket(p.theta_pump, p.phi))
    lw, ld = p.lambda_white, p.lambda_dephase
    rho = (1 - lw - ld) * pure + ld * dephase(pure) + lw * np.eye(4) / 4
    return (rho + rho.conj().T) / 2


def curve_probabilities(rho, fixed_angle: float, thetas) -> np.ndarray:
    """Coincidence probability with arm A at ``fixed_angle`` and arm B swept."""
    t1 = np.deg2rad(fixed_angle)
    a = np.array([np.cos(t1), np.sin(t1)], dtype=complex)
    t = np.deg2rad(np.asarray(thetas, dtype=float))
    b = np.stack([np.cos(t), np.sin(t)], axis=-1).astype(complex)
    v = np.einsum("i,nj->nij", a, b).reshape(-1, 4)
    return np.real(np.einsum("ni,ij,nj->n", v.conj(), np.asarray(rho), v))


def curve_visibility(rho, fixed_angle: float, grid: int = 720) -> float:
    """Exact visibility of the linear correlation curve at ``fixed_angle``.

    Extrema are located on a grid over [0, 180) and refined with a bounded
    scalar search around the best grid points.
    """
    th = np.linspace(0.0, 180.0, grid, endpoint=False)
    p = curve_probabilities(rho, fixed_angle, th)
    step = 180.0 / grid

    def refine(i, sign):
        f = lambda x: sign * curve_probabilities(rho, fixed_angle, [x])[0]
        res = optimize.minimize_scalar(f, bounds=(th[i] - step, th[i] + step),
                                       method="bounded", options={"xatol": 1e-10})
        return sign * min(res.fun, f(th[i]))

    cmax = refine(int(np.argmax(p)), -1.0)
    cmin = max(refine(int(np.argmin(p)), 1.0), 0.0)
    if cmax + cmin <= 0:
        raise DegenerateCurve("correlation curve is identically zero")
    return float((cmax - cmin) / (cmax + cmin))


def analytic_visibilities(rho):
    """(V_HV, V_PM) with the fixed polarizer at 0 and 45 degrees."""
    return curve_visibility(rho, 0.0), curve_visibility(rho, 45.0)


def fit_source_to_visibilities(targets, base: SourceParams | None = None) -> SourceParams:
    """Noise weights (lambda_white, lambda_dephase) reproducing two visibilities.

    theta_pump = 45 and phi = 180 are imposed. Raises ``Infeasible`` when no
    point of the simplex gets within 1e-3 of the targets.
    """
    v_hv, v_pm = (float(x) for x in targets)
    if not (0 < v_pm <= v_hv <= 1):
        raise InvalidParams("targets must satisfy 0 < V_PM <= V_HV <= 1")
    base = (base or SourceParams()).replace(theta_pump=45.0, phi=180.0,
                                            lambda_white=0.0, lambda_dephase=0.0)

    def model(x):
        lw, ld = x
        if lw + ld > 1:
            # outside the simplex: keep residuals continuous but penalized
            scale = 1.0 / (lw + ld)
            lw, ld = lw * scale, ld * scale
        p = base.replace(lambda_white=lw, lambda_dephase=ld)
        return np.array(analytic_visibilities(source_state(p)))

    def residuals(x):
        r = model(x) - (v_hv, v_pm)
        excess = max(x[0] + x[1] - 1, 0.0)
        return np.append(r, 10 * excess)

    sol = optimize.least_squares(residuals, x0=(0.01, 0.01), bounds=([0, 0], [1, 1]),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf")
    lw, ld = (float(v) for v in sol.x)
    if lw + ld > 1:
        raise Infeasible("fit left the noise simplex")
    miss = np.abs(model(sol.x) - (v_hv, v_pm)).max()
    if miss > 1e-3:
        raise Infeasible(f"targets {targets} unreachable (closest miss {miss:.3g})")
    return base.replace(lambda_white=lw, lambda_dephase=ld)


# -- brightness -------------------------------------------------------------

class CorrectionModel(enum.Enum):
    """How detected coincidences are converted to generated pairs.

    COUPLING_DETECTION  R = S_C / (eta_C * eta_D)     (default)
    NONE                R = S_C
    DETECTION_SQUARED   R = S_C / eta_D**2
    HERALDING           R = S_i * S_s / S_C
    """

    COUPLING_DETECTION = "coupling-detection"
    NONE = "none"
    DETECTION_SQUARED = "detection-squared"
    HERALDING = "heralding"


def coupling_ratio(coinc_rate: float, idler_rate: float, signal_rate: float) -> float:
    """eta_C = S_C / sqrt(S_i S_s)."""
    if idler_rate <= 0 or signal_rate <= 0:
        raise ZeroSingles("singles rates must be positive")
    return float(coinc_rate / np.sqrt(idler_rate * signal_rate))


def single_mode_bandwidth(length_m: float) -> float:
    """Down-converted bandwidth in nm for a crystal of ``length_m`` metres."""
    if not length_m > 0:
        raise NonpositiveLength("crystal length must be positive")
    return BANDWIDTH_CONSTANT / length_m


@dataclass(frozen=True)
class BrightnessReport:
    eta_C: float
    delta_lambda: float
    generated_rate: float
    spectral_brightness: float
    brightness: float
    correction_model: str

    def as_dict(self):
        return dataclasses.asdict(self)


def generated_pair_rate(coinc_rate, idler_rate, signal_rate, eta_detect,
                        model=CorrectionModel.COUPLING_DETECTION) -> float:
    model = CorrectionModel(model)
    if model is CorrectionModel.NONE:
        return float(coinc_rate)
    if model is CorrectionModel.DETECTION_SQUARED:
        if eta_detect <= 0:
            raise InvalidParams("eta_detect must be positive")
        return float(coinc_rate / eta_detect ** 2)
    if model is CorrectionModel.HERALDING:
        if coinc_rate <= 0:
            raise InvalidParams("heralding correction needs a nonzero coincidence rate")
        return float(idler_rate * signal_rate / coinc_rate)
    eta_c = coupling_ratio(coinc_rate, idler_rate, signal_rate)
    if eta_c <= 0 or eta_detect <= 0:
        raise InvalidParams("coupling ratio and eta_detect must be positive")
    return float(coinc_rate / (eta_c * eta_detect))


def brightness_report(measured: dict, p: SourceParams,
                      model=CorrectionModel.COUPLING_DETECTION) -> BrightnessReport:
    """Spectral brightness and brightness from measured S_C, S_i, S_s (Hz).

    brightness = generated pairs / pump power, spectral brightness =
    brightness / bandwidth, so brightness == spectral * bandwidth exactly.
    """
    if not p.pump_power > 0:
        raise InvalidParams("pump_power must be positive")
    s_c, s_i, s_s = (float(measured[k]) for k in ("S_C", "S_i", "S_s"))
    eta_c = coupling_ratio(s_c, s_i, s_s)
    dl = single_mode_bandwidth(p.crystal_length)
    rate = generated_pair_rate(s_c, s_i, s_s, p.eta_detect, model)
    b = rate / p.pump_power
    spectral = b / dl
    # recompute brightness from spectral so the product identity is exact in floats
    return BrightnessReport(eta_c, dl, rate, spectral, spectral * dl,
                            CorrectionModel(model).value)

"""Two-qubit polarization state tomography.

Linear inversion provides a seed; the maximum-likelihood estimate is found
over the Cholesky-type parameterization rho = T^dag T / tr(T^dag T) with
lower-triangular complex T, which is positive semidefinite by construction.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (InvalidParams, MissingSetting, NotConvergedWarning, SingularSystem,
                     UnknownSet, ZeroTotal)
from .measurement import AnalyzerSetting, CoincidenceRecord, projector
from .states import hermitize_and_project, state_metrics, concurrence_spectrum

ANALYZER_STATES = {
    "H": AnalyzerSetting(0.0),
    "V": AnalyzerSetting(90.0),
    "D": AnalyzerSetting(45.0),
    "A": AnalyzerSetting(135.0),
    "R": AnalyzerSetting(45.0, 0.0),
    "L": AnalyzerSetting(135.0, 0.0),
}

# 16-setting sequence of the standard photonic two-qubit tomography protocol
_JAMES16 = ("HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH",
            "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL")

_COND_LIMIT = 1e10


@dataclass(frozen=True)
class TomographySet:
    name: str
    settings: tuple
    labels: tuple = ()

    def projectors(self) -> np.ndarray:
        return np.array([np.kron(projector(a), projector(b)) for a, b in self.settings])

    def gram(self) -> np.ndarray:
        P = self.projectors()
        return np.real(np.einsum("aij,bji->ab", P, P))

    def design_matrix(self) -> np.ndarray:
        """Rows map the 16 real Hermitian coordinates to tr(rho Pi_i)."""
        P = self.projectors()
        return np.real(np.einsum("kij,mji->mk", _HERMITIAN_BASIS, P))

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.design_matrix()))

    def __len__(self):
        return len(self.settings)


def _hermitian_basis():
    """Orthonormal (Hilbert-Schmidt) basis of 4x4 Hermitian matrices: Pauli products / 2."""
    s = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    return np.array([np.kron(a, b) / 2 for a in s for b in s], dtype=complex)


_HERMITIAN_BASIS = _hermitian_basis()


def _from_labels(name, labels):
    settings = tuple((ANALYZER_STATES[l[0]], ANALYZER_STATES[l[1]]) for l in labels)
    return TomographySet(name, settings, tuple(labels))


def standard_set(name: str) -> TomographySet:
    """``james16`` (minimal, 16 settings) or ``full36`` ({H,V,D,A,R,L}^2)."""
    if name == "james16":
        return _from_labels(name, _JAMES16)
    if name == "full36":
        labels = ["".join(p) for p in itertools.product("HVDARL", repeat=2)]
        return _from_labels(name, labels)
    raise UnknownSet(f"unknown tomography set {name!r}")


def custom_set(settings, name="custom") -> TomographySet:
    settings = tuple((a, b) for a, b in settings)
    tset = TomographySet(name, settings)
    if np.linalg.matrix_rank(tset.design_matrix(), tol=1e-9) < 16:
        raise SingularSystem("settings are not informationally complete")
    return tset


def align_records(records, tset: TomographySet):
    """Records reordered to match ``tset``; repeated settings are pooled."""
    table = {}
    for r in records:
        k = (r.setting_a.key(), r.setting_b.key())
        if k in table:
            p = table[k]
            r = CoincidenceRecord(p.setting_a, p.setting_b, p.coincidences + r.coincidences,
                                  p.singles_a + r.singles_a, p.singles_b + r.singles_b,
                                  p.duration + r.duration)
        table[k] = r
    out = []
    for i, (a, b) in enumerate(tset.settings):
        k = (a.key(), b.key())
        if k not in table:
            label = tset.labels[i] if tset.labels else f"#{i}"
            raise MissingSetting(f"tomography setting {label} has no record")
        out.append(table[k])
    return out


def _arrays(records, coinc_window):
    n = np.array([r.coincidences for r in records], dtype=float)
    d = np.array([r.duration for r in records], dtype=float)
    acc = np.array([r.accidentals(coinc_window) for r in records], dtype=float)
    return n, d, acc


def linear_inversion(records, tset: TomographySet | None = None, coinc_window=None,
                     return_intensity: bool = False):
    """Hermitian unit-trace matrix reproducing the measured rates.

    Solves tr(rho' Pi_i) = (n_i - accidentals_i) / t_i in the least-squares
    sense for an unnormalized Hermitian rho'; the intensity estimate is
    tr(rho') and the returned matrix is rho' / tr(rho'). May be non-PSD.
    """
    tset = tset or standard_set("james16")
    records = align_records(records, tset)
    A = tset.design_matrix()
    if np.linalg.cond(A) > _COND_LIMIT:
        raise SingularSystem("tomography design matrix is numerically singular")
    n, d, acc = _arrays(records, coinc_window)
    if n.sum() <= 0:
        raise ZeroTotal("no counts in tomography data")
    y = (n - acc) / d
    x, *_ = np.linalg.lstsq(A, y, rcond=None)
    rho = np.einsum("k,kij->ij", x, _HERMITIAN_BASIS)
    intensity = float(np.trace(rho).real)
    if not intensity > 0:
        raise ZeroTotal("linear inversion gives nonpositive intensity")
    rho = rho / intensity
    rho = (rho + rho.conj().T) / 2
    if return_intensity:
        return rho, intensity
    return rho


# -- maximum likelihood -----------------------------------------------------

_TRIL = [(i, j) for i in range(4) for j in range(i)]


def t_to_matrix(t) -> np.ndarray:
    """16 reals -> lower-triangular T: 4 real diagonal entries, then
    (re, im) pairs for the entries below the diagonal in row order."""
    T = np.zeros((4, 4), dtype=complex)
    T[np.diag_indices(4)] = t[:4]
    for k, (i, j) in enumerate(_TRIL):
        T[i, j] = t[4 + 2 * k] + 1j * t[5 + 2 * k]
    return T


def matrix_to_t(T) -> np.ndarray:
    t = np.empty(16)
    t[:4] = np.real(np.diag(T))
    for k, (i, j) in enumerate(_TRIL):
        t[4 + 2 * k] = T[i, j].real
        t[5 + 2 * k] = T[i, j].imag
    return t


def _gradient_to_t(M) -> np.ndarray:
    g = np.empty(16)
    g[:4] = np.real(np.diag(M))
    for k, (i, j) in enumerate(_TRIL):
        g[4 + 2 * k] = M[i, j].real
        g[5 + 2 * k] = M[i, j].imag
    return g


def cholesky_t(rho, ridge: float = 1e-6) -> np.ndarray:
    """Parameters t with T^dag T = rho + ridge * I (up to the ridge renormalization)."""
    rho = (np.asarray(rho) + ridge * np.eye(4)) / (1 + 4 * ridge)
    J = np.eye(4)[::-1]
    L = np.linalg.cholesky(J @ rho @ J)
    T = (J @ L @ J).conj().T
    return matrix_to_t(T)


def _t_basis() -> np.ndarray:
    """Complex 4x4 matrices E_k with T = sum_k t_k E_k."""
    E = np.zeros((16, 4, 4), dtype=complex)
    for i in range(4):
        E[i, i, i] = 1
    for k, (i, j) in enumerate(_TRIL):
        E[4 + 2 * k, i, j] = 1
        E[5 + 2 * k, i, j] = 1j
    return E


_T_BASIS = _t_basis()


class Likelihood:
    """Negative log-likelihood of counts given rho' = scale * T^dag T.

    Predicted counts are t_i * tr(rho' Pi_i) + accidentals_i, so rho' carries
    the intensity (Hz per unit probability). Values are divided by the total
    number of counts to keep the objective O(1).
    """

    def __init__(self, counts, durations, projectors, accidentals=None, kind="poisson",
                 scale=1.0):
        if kind not in ("poisson", "gaussian"):
            raise InvalidParams(f"unknown likelihood {kind!r}")
        self.n = np.asarray(counts, dtype=float)
        self.d = np.asarray(durations, dtype=float)
        self.P = np.asarray(projectors)
        self.acc = np.zeros_like(self.n) if accidentals is None else np.asarray(accidentals, float)
        self.kind = kind
        self.scale = float(scale)
        self.norm = max(self.n.sum(), 1.0)
        self.var = np.maximum(self.n, 1.0)
        # tr(Pi_i T^dag T) = t^T K_i t
        EE = np.einsum("kba,lbc->klac", _T_BASIS.conj(), _T_BASIS)
        K = np.real(np.einsum("mca,klac->mkl", self.P, EE))
        self.K = self.scale * (K + K.transpose(0, 2, 1)) / 2

    def rho_unnormalized(self, t) -> np.ndarray:
        T = t_to_matrix(t)
        return self.scale * (T.conj().T @ T)

    def predicted(self, rho_u) -> np.ndarray:
        p = np.real(np.einsum("mij,ji->m", self.P, rho_u))
        return self.d * p + self.acc

    def total(self, rho_u) -> float:
        """Unscaled negative log-likelihood (constant terms dropped)."""
        return self._value(self.predicted(rho_u)) * self.norm

    def _value(self, nbar) -> float:
        if self.kind == "poisson":
            pos = self.n > 0
            with np.errstate(divide="ignore"):
                logs = np.log(nbar[pos])
            if not np.all(np.isfinite(logs)):
                return np.inf
            return float((nbar.sum() - (self.n[pos] * logs).sum()) / self.norm)
        return float(((nbar - self.n) ** 2 / (2 * self.var)).sum() / self.norm)

    def _dnbar(self, nbar) -> np.ndarray:
        if self.kind == "poisson":
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(self.n > 0, self.n / nbar, 0.0)
            return 1.0 - ratio
        return (nbar - self.n) / self.var

    def __call__(self, t) -> float:
        return self._value(self.predicted(self.rho_unnormalized(t)))

    def gradient(self, t) -> np.ndarray:
        T = t_to_matrix(t)
        nbar = self.predicted(self.scale * (T.conj().T @ T))
        w = self._dnbar(nbar) * self.d / self.norm
        G = np.einsum("m,mij->ij", w, self.P)
        # d/d(Re T) = 2 s Re(T G), d/d(Im T) = 2 s Im(T G)
        return _gradient_to_t(2 * self.scale * (T @ G))

    def value_and_grad(self, t):
        return self(t), self.gradient(t)

    def _d2nbar(self, nbar) -> np.ndarray:
        if self.kind == "poisson":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(self.n > 0, self.n / nbar ** 2, 0.0)
        return 1.0 / self.var

    def hessian(self, t) -> np.ndarray:
        """Exact Hessian in t, using n_bar_i = t_i * t^T K_i t + accidentals_i."""
        Kt = np.einsum("mkl,l->mk", self.K, t)
        nbar = self.d * np.einsum("k,mk->m", t, Kt) + self.acc
        w1 = self._dnbar(nbar) * self.d / self.norm
        w2 = self._d2nbar(nbar) * self.d ** 2 / self.norm
        J = 2 * Kt
        return np.einsum("m,mk,ml->kl", w2, J, J) + 2 * np.einsum("m,mkl->kl", w1, self.K)


@dataclass
class TomographyResult:
    rho_linear: np.ndarray
    rho_ml: np.ndarray
    neg_log_likelihood: float
    iterations: int
    converged: bool
    intensity_estimate: float
    gradient_norm: float = float("nan")
    nll_linear: float = float("nan")
    likelihood: str = "poisson"
    history: list = field(default_factory=list, repr=False)


def ml_reconstruct(records, tset: TomographySet | None = None, likelihood: str = "poisson",
                   max_iters: int = 5000, tol: float = 1e-10, coinc_window=None,
                   ridge: float = 1e-6) -> TomographyResult:
    """Maximum-likelihood two-qubit state from tomography records.

    Starts from the projected linear-inversion estimate (Cholesky with a
    1e-6 ridge) and minimizes with a damped Newton method using the exact
    gradient and Hessian;
    ``converged`` means the gradient norm dropped below ``tol`` within
    ``max_iters`` iterations. A :class:`NotConvergedWarning` is emitted
    otherwise and the best point found is returned.
    """
    tset = tset or standard_set("james16")
    records = align_records(records, tset)
    rho_lin, intensity = linear_inversion(records, tset, coinc_window, return_intensity=True)
    n, d, acc = _arrays(records, coinc_window)
    rho0 = hermitize_and_project(rho_lin)
    nll = Likelihood(n, d, tset.projectors(), acc if coinc_window else None, likelihood,
                     scale=intensity)
    t0 = cholesky_t(rho0, ridge)
    nll_linear = nll.total(intensity * rho0)

    t, iterations, gnorm, history = _damped_newton(nll, t0, tol, max_iters)
    converged = bool(gnorm < tol)
    if not converged:
        warnings.warn(f"ML tomography stopped with gradient norm {gnorm:.3g} > {tol:g}",
                      NotConvergedWarning, stacklevel=2)
    rho_u = nll.rho_unnormalized(t)
    tr = float(np.trace(rho_u).real)
    rho_ml = rho_u / tr
    rho_ml = (rho_ml + rho_ml.conj().T) / 2
    return TomographyResult(rho_lin, rho_ml, nll.total(rho_u), iterations, converged, tr,
                            float(gnorm), nll_linear, likelihood, history)


_STALL = 25


def _damped_newton(f, t, tol, max_iters):
    """Levenberg-damped Newton iteration with Armijo backtracking.

    Steps are only accepted when the objective decreases, so the recorded
    history is monotone non-increasing. Iteration also stops after
    ``_STALL`` steps without a measurable decrease, which happens at
    rank-deficient optima where the parameterization has flat directions.
    """
    value = f(t)
    history = [value]
    g = f.gradient(t)
    gnorm = float(np.linalg.norm(g))
    mu = 1e-8
    it = 0
    stalled = 0
    while gnorm >= tol and it < max_iters:
        it += 1
        H = f.hessian(t)
        w, V = np.linalg.eigh(H)
        accepted = False
        for _ in range(60):
            shift = np.maximum(w, 0.0) + mu
            step = -V @ ((V.T @ g) / shift)
            slope = g @ step
            trial = t + step
            trial_value = f(trial)
            if np.isfinite(trial_value) and trial_value <= value + 1e-4 * slope:
                accepted = True
                break
            mu = max(mu * 10, 1e-12)
        if not accepted:
            break
        if trial_value == value and np.array_equal(trial, t):
            break
        stalled = stalled + 1 if value - trial_value <= 1e-14 * max(1.0, abs(value)) else 0
        t, value = trial, trial_value
        history.append(value)
        if stalled >= _STALL:
            g = f.gradient(t)
            gnorm = float(np.linalg.norm(g))
            break
        g = f.gradient(t)
        gnorm = float(np.linalg.norm(g))
        mu = max(mu / 10, 1e-15)
    return t, it, gnorm, history


def tomography_report(result: TomographyResult, target) -> dict:
    rho = result.rho_ml
    metrics = state_metrics(rho, target)
    return {
        "metrics": metrics.as_dict(),
        "eigenvalues": sorted(np.linalg.eigvalsh(rho).tolist(), reverse=True),
        "concurrence_spectrum": concurrence_spectrum(rho).tolist(),
        "neg_log_likelihood": result.neg_log_likelihood,
        "neg_log_likelihood_linear": result.nll_linear,
        "likelihood": result.likelihood,
        "iterations": result.iterations,
        "converged": result.converged,
        "gradient_norm": result.gradient_norm,
        "intensity_estimate": result.intensity_estimate,
    }

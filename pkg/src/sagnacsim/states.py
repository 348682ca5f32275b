"""Two-qubit polarization states and scalar state metrics.

Basis order is fixed everywhere as (HH, HV, VH, VV), first letter for
photon A. Kets are complex arrays of shape (4,), density matrices are
complex arrays of shape (4, 4).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure, ZeroTrace, InvalidParams

BASIS_LABELS = ("HH", "HV", "VH", "VV")

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
# eigenvalues in (-SILENT_CLIP, 0) are numerical noise and clipped without a flag
SILENT_CLIP = 1e-8
# relative eigenvalue floor below which a PSD square root treats the mode as zero
_SQRT_FLOOR = 1e-14

SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SPIN_FLIP = np.kron(SIGMA_Y, SIGMA_Y)


class Bell(enum.Enum):
    PSI_PLUS = "psi-plus"
    PSI_MINUS = "psi-minus"
    PHI_PLUS = "phi-plus"
    PHI_MINUS = "phi-minus"

    @classmethod
    def parse(cls, which) -> "Bell":
        """Accept members, values ("psi-minus"), enum names and camel case."""
        if isinstance(which, cls):
            return which
        key = str(which).strip().lower()
        if key.endswith(("+", "-")) and key[:-1] in ("psi", "phi"):
            key = key[:-1] + ("plus" if key[-1] == "+" else "minus")
        key = key.replace("_", "").replace("-", "")
        for member in cls:
            if key == member.value.replace("-", ""):
                return member
        raise InvalidParams(f"unknown Bell state {which!r}")


_BELL_AMPLITUDES = {
    Bell.PSI_PLUS: (0, 1, 1, 0),
    Bell.PSI_MINUS: (0, 1, -1, 0),
    Bell.PHI_PLUS: (1, 0, 0, 1),
    Bell.PHI_MINUS: (1, 0, 0, -1),
}


def normalize_ket(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(4)
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise InvalidParams("zero vector cannot be normalized")
    return psi / norm


def ket(*amplitudes) -> np.ndarray:
    """Normalized two-qubit ket from four amplitudes in (HH, HV, VH, VV) order."""
    if len(amplitudes) == 1:
        amplitudes = amplitudes[0]
    return normalize_ket(amplitudes)


def bell_state(which) -> np.ndarray:
    """Bell ket; ``psi-minus`` is (|HV> - |VH>)/sqrt(2)."""
    amps = np.array(_BELL_AMPLITUDES[Bell.parse(which)], dtype=complex)
    return amps / np.sqrt(2)


def product_ket(a, b) -> np.ndarray:
    return normalize_ket(np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)))


def density_from_ket(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(4)
    return np.outer(psi, psi.conj())


def bell_density(which) -> np.ndarray:
    return density_from_ket(bell_state(which))


def maximally_mixed() -> np.ndarray:
    return np.eye(4, dtype=complex) / 4


def werner(p: float, which="psi-minus") -> np.ndarray:
    """p * |Bell><Bell| + (1 - p) * I/4."""
    return p * bell_density(which) + (1 - p) * maximally_mixed()


@dataclass(frozen=True)
class ProjectionInfo:
    min_eigenvalue: float
    clipped_weight: float
    flagged: bool
    max_change: float


def hermitize_and_project(M, return_info: bool = False):
    """Nearest physical density matrix to a raw 4x4 matrix.

    The matrix is Hermitized as (M + M^dag)/2, negative eigenvalues are set
    to zero and the trace renormalized to one. Eigenvalues below
    ``-SILENT_CLIP`` still get clipped, but ``info.flagged`` is set.
    """
    M = np.asarray(M, dtype=complex)
    if M.shape != (4, 4) or not np.all(np.isfinite(M)):
        raise InvalidParams("expected a finite 4x4 matrix")
    H = (M + M.conj().T) / 2
    w, v = np.linalg.eigh(H)
    clipped = np.clip(w, 0.0, None)
    tr = clipped.sum()
    if abs(tr) < 1e-14:
        raise ZeroTrace("matrix has no positive spectral weight")
    rho = (v * (clipped / tr)) @ v.conj().T
    rho = (rho + rho.conj().T) / 2
    if not return_info:
        return rho
    info = ProjectionInfo(
        min_eigenvalue=float(w.min()),
        clipped_weight=float(-w[w < 0].sum()),
        flagged=bool(w.min() < -SILENT_CLIP),
        max_change=float(np.abs(rho - M).max()),
    )
    return rho, info


def is_physical(rho, tol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        return False
    if np.abs(rho - rho.conj().T).max() > tol:
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() >= -tol)


def psd_sqrt(rho) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via eigendecomposition.

    Modes below a relative floor of 1e-14 are treated as exactly zero so that
    rank-deficient inputs give rank-deficient roots.
    """
    try:
        w, v = np.linalg.eigh((rho + np.conj(rho).T) / 2)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    floor = _SQRT_FLOOR * max(w.max(), 0.0)
    w = np.where(w > floor, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.real(np.einsum("ij,ji->", rho, rho)))


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.

    Evaluated as the squared nuclear norm of sqrt(rho) sqrt(sigma), which is
    symmetric in its arguments and exact for pure inputs.
    """
    try:
        s = np.linalg.svd(psd_sqrt(rho) @ psd_sqrt(sigma), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed: {exc}") from exc
    return float(min(s.sum() ** 2, 1.0))


def spin_flip(rho) -> np.ndarray:
    return SPIN_FLIP @ np.conj(rho) @ SPIN_FLIP


def concurrence_spectrum(rho) -> np.ndarray:
    """Decreasing square roots of the eigenvalues of rho * spin_flip(rho).

    Computed as singular values of sqrt(rho) (Y x Y) sqrt(rho)^*, which share
    the spectrum but avoid a non-Hermitian eigenproblem.
    """
    r = psd_sqrt(rho)
    try:
        return np.linalg.svd(r @ SPIN_FLIP @ np.conj(r), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed: {exc}") from exc


def concurrence(rho) -> float:
    lam = concurrence_spectrum(rho)
    return float(min(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]), 1.0))


def trace_distance(rho, sigma) -> float:
    d = np.asarray(rho) - np.asarray(sigma)
    return float(0.5 * np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2)).sum())


def reduced_state(rho, keep: int) -> np.ndarray:
    """Partial trace; ``keep`` is 0 for photon A, 1 for photon B."""
    r = np.asarray(rho).reshape(2, 2, 2, 2)
    if keep == 0:
        return np.einsum("ajbj->ab", r)
    return np.einsum("jajb->ab", r)


@dataclass(frozen=True)
class StateMetrics:
    concurrence: float
    fidelity_to_target: float
    purity: float

    def as_dict(self):
        return {
            "concurrence": self.concurrence,
            "fidelity": self.fidelity_to_target,
            "purity": self.purity,
        }


def state_metrics(rho, target) -> StateMetrics:
    target = np.asarray(target, dtype=complex)
    if target.shape == (4,):
        target = density_from_ket(target)
    return StateMetrics(concurrence(rho), fidelity(rho, target), purity(rho))


def random_density(rng, rank: int | None = None) -> np.ndarray:
    """Random state from the induced (Ginibre) measure; full rank by default."""
    k = 4 if rank is None else rank
    G = rng.normal(size=(4, k)) + 1j * rng.normal(size=(4, k))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_ket(rng) -> np.ndarray:
    return normalize_ket(rng.normal(size=4) + 1j * rng.normal(size=4))


def random_unitary(rng, n: int = 2) -> np.ndarray:
    Z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


def random_separable(rng, terms: int = 3) -> np.ndarray:
    """Convex mixture of random product pure states."""
    weights = rng.dirichlet(np.ones(terms))
    rho = np.zeros((4, 4), dtype=complex)
    for w in weights:
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        b = rng.normal(size=2) + 1j * rng.normal(size=2)
        rho += w * density_from_ket(product_ket(a, b))
    return rho

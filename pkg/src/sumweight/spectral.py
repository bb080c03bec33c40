"""Second-moment spectral analysis of update-matrix families.

The decay rate of the squared error is governed by the contraction matrix
``R = ((I - J) (x) (I - J)) E[K (x) K]`` acting on ``N**2``-dimensional
vectors. Everything here is dense, so sizes are capped (``max_n``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import (
    AssumptionReport,
    FamilyError,
    Kind,
    UpdateMatrixSet,
    check_assumptions,
    expected_matrix,
)

DEFAULT_MAX_N = 40
PERRON_TOL = 1e-8
# radii below this are reported as exact finite-time convergence
ZERO_RADIUS = 1e-13


class AssumptionError(ValueError):
    """The family violates an assumption required by the requested analysis."""


class DegenerateFamilyError(ValueError):
    """Eigenvalue 1 of ``E[K (x) K]`` is not simple."""


__all__ = [
    "AssumptionError",
    "DegenerateFamilyError",
    "SpectralReport",
    "contraction_matrix",
    "deflated_Sv",
    "expected_kron",
    "expected_matrix",
    "gelfand_radius",
    "kappa",
    "kempe_closed_forms",
    "spectral_radius",
]


def _centering(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def expected_kron(fam: UpdateMatrixSet, max_n: int = DEFAULT_MAX_N) -> np.ndarray:
    """``E[K (x) K] = sum_i p_i K_i (x) K_i``, not ``E[K] (x) E[K]``."""
    n = fam.n
    if n > max_n:
        raise FamilyError(f"n={n} exceeds the dense second-moment cap {max_n}")
    if fam.kind is not Kind.EXPLICIT:
        return fam.closed_moments[1].copy()
    out = np.zeros((n, n, n, n))
    # chunked to bound the temporary for large failure families
    step = max(1, 2_000_000 // n**4)
    for lo in range(0, len(fam), step):
        sl = slice(lo, lo + step)
        out += np.einsum("m,mij,mkl->ikjl", fam.probs[sl], fam.matrices[sl], fam.matrices[sl])
    return out.reshape(n * n, n * n)


def contraction_matrix(fam: UpdateMatrixSet, max_n: int = DEFAULT_MAX_N) -> np.ndarray:
    """``R = ((I-J) (x) (I-J)) . E[K (x) K]``."""
    ekk = expected_kron(fam, max_n)
    c = _centering(fam.n)
    return np.kron(c, c) @ ekk


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus from a dense non-symmetric eigensolve."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(m)).max())


def gelfand_radius(m, squarings: int = 60) -> float:
    """Estimate ``rho(M)`` as ``||M^t||^(1/t)`` with ``t = 2**squarings``.

    The power is renormalised after every squaring and its log-norm carried
    separately, so nothing under- or overflows. Independent of any
    eigensolver; the error decays like ``log(cond) / t``.
    """
    a = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    norm = np.linalg.norm(a, np.inf)
    if norm == 0.0:
        return 0.0
    log_norm = math.log(norm)
    a = a / norm
    t = 1
    for _ in range(squarings):
        a = a @ a
        norm = np.linalg.norm(a, np.inf)
        if norm == 0.0:
            return 0.0
        log_norm = 2.0 * log_norm + math.log(norm)
        a /= norm
        t *= 2
    return math.exp(log_norm / t)


def _rate(rho: float) -> float:
    return math.inf if rho <= ZERO_RADIUS else -math.log(rho)


def deflated_Sv(fam: UpdateMatrixSet, max_n: int = DEFAULT_MAX_N) -> tuple[np.ndarray, float]:
    """Deflate the Perron eigenvalue of ``E[K (x) K]``.

    With ``v`` the left eigenvector for eigenvalue 1 scaled so that
    ``v . 1 = 1``, returns ``S_v = E[K (x) K] - 1 v^T`` and ``rho(S_v)``.
    """
    ekk = expected_kron(fam, max_n)
    vals, vecs = np.linalg.eig(ekk.T)
    near = np.flatnonzero(np.abs(vals - 1.0) < PERRON_TOL)
    if len(near) != 1:
        raise DegenerateFamilyError(
            f"eigenvalue 1 has {len(near)} copies within {PERRON_TOL}; assumption (B) fails numerically"
        )
    v = np.real(vecs[:, near[0]])
    v = v / v.sum()
    sv = ekk - np.outer(np.ones(len(v)), v)
    return sv, spectral_radius(sv)


@dataclass(frozen=True)
class SpectralReport:
    n: int
    rho_R: float
    kappa: float
    rho_Sv: float
    boyd_rho: float
    boyd_kappa: float
    assumptions: AssumptionReport

    @property
    def exact_finite_time(self) -> bool:
        return math.isinf(self.kappa)

    def to_dict(self) -> dict:
        def num(x):
            return "inf" if math.isinf(x) else x

        return {
            "n": self.n,
            "rho_R": self.rho_R,
            "kappa": num(self.kappa),
            "rho_Sv": self.rho_Sv,
            "boyd_rho": self.boyd_rho,
            "boyd_kappa": num(self.boyd_kappa),
            "assumptions": self.assumptions.to_dict(),
        }


def kappa(fam: UpdateMatrixSet, max_n: int = DEFAULT_MAX_N) -> SpectralReport:
    """Assemble ``rho(R)``, ``kappa = -ln rho(R)`` and the deflation bound.

    The deflation bound uses the normalised left Perron vector, which is the
    uniform ``1/N**2`` vector for doubly-stochastic families.
    """
    report = check_assumptions(fam)
    missing = report.failing()
    if missing:
        raise AssumptionError(f"assumption(s) {', '.join(missing)} fail for family {fam.name!r}")
    rho_r = spectral_radius(contraction_matrix(fam, max_n))
    if rho_r <= ZERO_RADIUS:
        rho_r = 0.0
    _, rho_sv = deflated_Sv(fam, max_n)
    return SpectralReport(
        n=fam.n,
        rho_R=rho_r,
        kappa=_rate(rho_r),
        rho_Sv=rho_sv,
        boyd_rho=rho_sv,
        boyd_kappa=_rate(rho_sv),
        assumptions=report,
    )


def kempe_closed_forms(n: int) -> dict:
    """Reference values for synchronous Push-Sum on ``K_n``."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    factor = 0.5 - 1.0 / (4 * n)
    e_kkt = factor * np.eye(n) + 0.75 * np.full((n, n), 1.0 / n)
    return {"E_KKt": e_kkt, "rho_R": factor, "recursion_factor": factor}

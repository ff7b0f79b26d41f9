"""Neumann cosine eigenbasis on (-a, a) and Galerkin coupling coefficients.

The basis is e_1(x) = 1/sqrt(2a), e_{k}(x) = sqrt(1/a) cos((k-1) pi (x+a) / (2a))
for k >= 2, orthonormal in L^2(-a, a), with eigenvalues lambda_k = b_k / (4 a^2)
where b_k = -(k-1)^2 pi^2.  The quadratic coupling integrals reduce to the
closed-form table eta^k_{ij} in {0, 1/2} by cosine orthogonality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResolutionError, ShapeError

__all__ = [
    "Basis",
    "CouplingTable",
    "b_coefficient",
    "eigenvalue",
    "eta_coefficient",
    "coupling_table",
    "project",
    "reconstruct",
]


def b_coefficient(k: int) -> float:
    """Return b_k = -(k-1)^2 pi^2; b_1 = 0 and b_k is nonincreasing in k."""
    if k < 1:
        raise DomainError(f"mode index must be >= 1, got {k}")
    return -((k - 1) ** 2) * math.pi**2


def eigenvalue(k: int, a: float) -> float:
    """Return the Neumann eigenvalue lambda_k = b_k / (4 a^2); lambda_1 = 0."""
    if k < 1:
        raise DomainError(f"mode index must be >= 1, got {k}")
    if a <= 0:
        raise DomainError(f"half-length a must be positive, got {a}")
    return b_coefficient(k) / (4.0 * a * a)


def eta_coefficient(k: int, i: int, j: int) -> float:
    """Closed-form coupling eta^k_{ij} for modes i, j, k >= 2.

    Equals 1/2 [i+j-2 == k-1] + 1/2 [|i-j| == k-1]; the two conditions are
    mutually exclusive for i, j >= 2, so the value is 0 or 1/2.
    """
    if min(i, j, k) < 2:
        raise DomainError(f"eta indices must be >= 2, got (k={k}, i={i}, j={j})")
    value = 0.0
    if i + j - 2 == k - 1:
        value += 0.5
    if abs(i - j) == k - 1:
        value += 0.5
    return value


@dataclass(frozen=True)
class Basis:
    """Truncated orthonormal basis e_1..e_k0 on the interval (-a, a)."""

    k0: int
    a: float

    def __post_init__(self) -> None:
        if self.k0 < 1:
            raise DomainError(f"k0 must be >= 1, got {self.k0}")
        if self.a <= 0:
            raise DomainError(f"a must be positive, got {self.a}")

    def eval(self, k: int, x):
        """Evaluate e_k at x (scalar or array)."""
        if not 1 <= k <= self.k0:
            raise DomainError(f"mode index {k} outside 1..{self.k0}")
        xv = np.asarray(x, dtype=float)
        if k == 1:
            out = np.full_like(xv, 1.0 / math.sqrt(2.0 * self.a))
        else:
            out = math.sqrt(1.0 / self.a) * np.cos(
                (k - 1) * math.pi * (xv + self.a) / (2.0 * self.a)
            )
        return out if out.ndim else float(out)

    def grid(self, n: int) -> np.ndarray:
        """Closed uniform grid of n points spanning [-a, a]."""
        if n < 2:
            raise ResolutionError(f"grid needs at least 2 points, got {n}")
        return np.linspace(-self.a, self.a, n)

    def eigenvalues(self) -> np.ndarray:
        return np.array([eigenvalue(k, self.a) for k in range(1, self.k0 + 1)])


@dataclass(frozen=True)
class CouplingTable:
    """All coupling values eta^k_{ij}, 2 <= k, i, j <= k0, plus the b_k row."""

    k0: int
    eta: dict
    b: np.ndarray

    def eta_array(self) -> np.ndarray:
        """Dense (k0-1)^3 array, axes (k, i, j) with offset 2."""
        m = self.k0 - 1
        out = np.zeros((m, m, m))
        for (k, i, j), value in self.eta.items():
            out[k - 2, i - 2, j - 2] = value
        return out


def coupling_table(k0: int) -> CouplingTable:
    """Build the CouplingTable for truncation level k0 (all triples kept)."""
    if k0 < 1:
        raise DomainError(f"k0 must be >= 1, got {k0}")
    rng = range(2, k0 + 1)
    eta = {(k, i, j): eta_coefficient(k, i, j) for k in rng for i in rng for j in rng}
    b = np.array([b_coefficient(k) for k in range(1, k0 + 1)])
    return CouplingTable(k0=k0, eta=eta, b=b)


def project(samples, basis: Basis) -> np.ndarray:
    """Project grid samples of f onto e_1..e_k0 by trapezoid quadrature.

    The samples must live on the closed uniform grid basis.grid(len(samples)).
    On that grid the trapezoid rule integrates products of basis cosines
    exactly (discrete orthogonality), so band-limited inputs project to
    machine precision.
    """
    f = np.asarray(samples, dtype=float)
    if f.ndim != 1:
        raise ShapeError(f"samples must be a 1-D array, got shape {f.shape}")
    n = f.shape[0]
    if n < 4 * basis.k0:
        raise ResolutionError(
            f"{n} samples is too coarse for k0={basis.k0}; need >= {4 * basis.k0}"
        )
    x = basis.grid(n)
    h = 2.0 * basis.a / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    modes = np.stack([basis.eval(k, x) for k in range(1, basis.k0 + 1)])
    return modes @ (w * f)


def reconstruct(coeffs, x, basis: Basis):
    """Evaluate sum_k coeffs_k e_k(x) for x in [-a, a] (scalar or array)."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (basis.k0,):
        raise ShapeError(f"expected {basis.k0} coefficients, got shape {c.shape}")
    xv = np.asarray(x, dtype=float)
    if np.any(np.abs(xv) > basis.a):
        raise DomainError(f"evaluation point outside [-{basis.a}, {basis.a}]")
    modes = np.stack([basis.eval(k, xv) for k in range(1, basis.k0 + 1)])
    out = np.tensordot(c, modes, axes=(0, 0))
    return out if np.ndim(out) else float(out)

"""Critical-manifold graphs, layer stability, fold boundaries, entry regions.

The critical set of the time-rescaled truncation is the graph v = f(u) on
which the fast field vanishes; stability is read from the layer Jacobian at
frozen slow variables, and the fold boundary is where its largest eigenvalue
crosses zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (
    BracketError,
    DomainError,
    RelaxationError,
    ShapeError,
)
from .integrate import IntegratorConfig, integrate
from .spectral import Basis
from .vectorfields import GalerkinState, ModelParams, _eta_tensor, rhs_rescaled

__all__ = [
    "CriticalPoint",
    "EntryRegionSpec",
    "ConvergenceReport",
    "critical_graph",
    "layer_jacobian",
    "classify",
    "critical_point",
    "fold_boundary",
    "g_paper",
    "slow_image_of_boundary",
    "boundary_v1_of_v2",
    "entry_predicate",
    "galerkin_convergence_check",
]

SQRT2 = math.sqrt(2.0)


def _check_u(u, basis: Basis) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (basis.k0,):
        raise ShapeError(f"expected {basis.k0} fast coordinates, got shape {u.shape}")
    return u


def critical_graph(u, basis: Basis) -> np.ndarray:
    """Slow coordinates v = f(u) on which the fast field vanishes.

    The linear-term sign follows from fast-field cancellation: the mode-k
    equation reads (1/4)a^{-2} b_k u_k - v_k + ... with b_k < 0.
    """
    u = _check_u(u, basis)
    k0 = basis.k0
    v = np.empty(k0)
    v[0] = np.dot(u, u) / SQRT2
    if k0 > 1:
        lin = basis.eigenvalues()[1:]
        coupling = np.zeros(k0 - 1)
        eta = _eta_tensor(k0)
        if eta.size:
            coupling = np.einsum("kij,i,j->k", eta, u[1:], u[1:])
        v[1:] = lin * u[1:] + SQRT2 * u[0] * u[1:] + coupling
    return v


def layer_jacobian(u, basis: Basis) -> np.ndarray:
    """Jacobian of the fast subsystem in u at frozen v."""
    u = _check_u(u, basis)
    k0 = basis.k0
    J = np.zeros((k0, k0))
    J[0, :] = SQRT2 * u
    if k0 > 1:
        lin = basis.eigenvalues()[1:]
        J[1:, 0] = SQRT2 * u[1:]
        J[1:, 1:] += np.diag(lin + SQRT2 * u[0])
        eta = _eta_tensor(k0)
        if eta.size:
            J[1:, 1:] += 2.0 * np.einsum("kim,i->km", eta, u[1:])
    return J


def classify(u, basis: Basis, tol: float = 1e-10) -> str:
    if tol <= 0:
        raise DomainError("tol must be positive")
    re = np.linalg.eigvals(layer_jacobian(u, basis)).real
    if np.any(np.abs(re) <= tol):
        return "nonhyperbolic"
    if np.all(re < -tol):
        return "attracting"
    return f"saddle({int(np.sum(re > tol))})"


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    u: np.ndarray
    v: np.ndarray
    classification: str
    eigenvalues: np.ndarray


def critical_point(u, basis: Basis, tol: float = 1e-10) -> CriticalPoint:
    u = _check_u(u, basis)
    return CriticalPoint(
        u=u,
        v=critical_graph(u, basis),
        classification=classify(u, basis, tol),
        eigenvalues=np.linalg.eigvals(layer_jacobian(u, basis)),
    )


def fold_boundary(u_slice, basis: Basis, bracket=(-3.0, 3.0)) -> float:
    """Root of the largest layer eigenvalue along the one free coordinate.

    u_slice fixes every fast coordinate except the one marked None.
    """
    slots = list(u_slice)
    if len(slots) != basis.k0:
        raise ShapeError(f"expected {basis.k0} slots, got {len(slots)}")
    free = [i for i, x in enumerate(slots) if x is None]
    if len(free) != 1:
        raise DomainError("exactly one coordinate must be None (free)")
    i_free = free[0]

    def max_real(x: float) -> float:
        pt = np.array(
            [x if j == i_free else float(slots[j]) for j in range(len(slots))]
        )
        return float(np.max(np.linalg.eigvals(layer_jacobian(pt, basis)).real))

    lo, hi = float(bracket[0]), float(bracket[1])
    f_lo, f_hi = max_real(lo), max_real(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(
            f"largest eigenvalue does not change sign on [{lo}, {hi}]"
        )
    root = float(brentq(max_real, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200))
    if abs(max_real(root)) >= 1e-10:
        raise BracketError(f"boundary residual too large at {root}")
    return root


def g_paper(u2: float) -> float:
    """Closed-form two-mode fold curve as printed; kept verbatim for reference
    and not used by the numeric boundary finder (the two disagree, including
    at u2 = 0 where the eigenvalue criterion puts the boundary at u1 = 0)."""
    return 0.5 * (math.pi**2 - math.sqrt(math.pi**2 + 4.0 * u2**2))


def slow_image_of_boundary(basis: Basis, u2_values=None) -> np.ndarray:
    """Fold boundary pushed through (f1, f2); rows are (v1, v2) samples."""
    if basis.k0 != 2:
        raise DomainError("slow image of the boundary is two-mode only")
    if u2_values is None:
        u2_values = np.linspace(-0.05, 0.05, 21)
    rows = []
    for u2 in np.asarray(u2_values, dtype=float):
        u1 = fold_boundary([None, u2], basis, bracket=(-2.0, 2.0))
        v = critical_graph([u1, u2], basis)
        rows.append((v[0], v[1]))
    return np.array(rows)


def boundary_v1_of_v2(v2: float, basis: Basis | None = None) -> float:
    """v1 = h(v2) along the slow image of the two-mode fold boundary."""
    if basis is None:
        basis = Basis(2, 0.5)
    if basis.k0 != 2:
        raise DomainError("boundary graph is two-mode only")
    if v2 == 0.0:
        u2_star = 0.0
    else:
        def mismatch(u2: float) -> float:
            u1 = fold_boundary([None, u2], basis, bracket=(-2.0, 2.0))
            return float(critical_graph([u1, u2], basis)[1] - v2)

        lo, hi = -0.9, 0.9
        if (mismatch(lo) > 0) == (mismatch(hi) > 0):
            raise BracketError(f"v2={v2} outside the sampled boundary range")
        u2_star = float(brentq(mismatch, lo, hi, xtol=1e-14, maxiter=200))
    u1_star = fold_boundary([None, u2_star], basis, bracket=(-2.0, 2.0))
    return float(critical_graph([u1_star, u2_star], basis)[0])


@dataclass(frozen=True)
class EntryRegionSpec:
    rho: float = 0.1
    C_in_u1: float = 0.05
    C_in_uk: float = 0.05
    C_in_vk: float = 0.05
    C: float = 0.05
    C_in_v2: float = 0.05
    k0: int = 2

    def __post_init__(self) -> None:
        for name in ("rho", "C_in_u1", "C_in_uk", "C_in_vk", "C", "C_in_v2"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1], got {val}")
        if self.k0 < 1:
            raise DomainError("k0 must be at least 1")


def entry_predicate(v1: float, v2: float, spec: EntryRegionSpec) -> bool:
    """Admissible slow entry point: |v2| under the exponential envelope and
    (v1, v2) on the attracting side of the fold image."""
    if spec.k0 != 2:
        raise DomainError("entry predicate is two-mode only")
    envelope = spec.C_in_v2 * math.exp(math.pi**2 / SQRT2 * (v1 - spec.rho**2))
    if abs(v2) > envelope:
        return False
    return v1 >= boundary_v1_of_v2(v2) - 1e-14


@dataclass(frozen=True)
class ConvergenceReport:
    k0_list: tuple
    distances: tuple
    exponent: float
    k_ref: int
    reference_distance: float
    resolution: float


def _relax_graph(
    v1: float,
    v2: float,
    k0: int,
    a: float,
    tol_fast: float,
    max_chunks: int,
) -> np.ndarray:
    """Relax the fast subsystem at frozen slow variables to its attracting
    equilibrium; returns the fast coordinates of the slow-manifold graph."""
    v = np.zeros(k0)
    v[0] = v1
    if k0 > 1:
        v[1] = v2
    u = np.zeros(k0)
    u[0] = -math.sqrt(SQRT2 * v1)
    p = ModelParams(k0=k0, eps=0.0, a=a)

    def fast(uu: np.ndarray) -> np.ndarray:
        return rhs_rescaled(GalerkinState(uu, v), p)[:k0]

    cfg = IntegratorConfig(
        rel_tol=1e-10, abs_tol=1e-12, stiff_mode="semi_implicit"
    )
    for _ in range(max_chunks):
        if float(np.max(np.abs(fast(u)))) < tol_fast:
            return u
        traj = integrate(fast, u, (0.0, 10.0), cfg)
        u = np.asarray(traj.final_state, dtype=float)
        if not np.all(np.isfinite(u)):
            raise RelaxationError("relaxation left the finite regime")
    raise RelaxationError(
        f"fast field above {tol_fast} after {max_chunks} relaxation chunks"
    )


def galerkin_convergence_check(
    k0_list,
    k_ref: int,
    region,
    a: float = 0.5,
    grid_points: int = 3,
    tol_fast: float = 1e-11,
    max_chunks: int = 30,
) -> ConvergenceReport:
    """Sup-distance between truncated slow-manifold graphs and a reference
    truncation over a box in the leading slow coordinates, with the fitted
    decay exponent of distance vs 1/k0.

    Distances indistinguishable from zero at the relaxation accuracy are
    reported at the resolution floor 10*tol_fast.
    """
    k0s = sorted(int(k) for k in k0_list)
    if not k0s:
        raise DomainError("k0_list must be nonempty")
    if min(k0s) < 1:
        raise DomainError("truncation sizes must be positive")
    if k_ref < 2 * max(k0s):
        raise DomainError("k_ref must be at least twice the largest k0")
    (v1_lo, v1_hi), (v2_lo, v2_hi) = region
    if v1_lo <= 0:
        raise DomainError("region must have v1 > 0 (attracting sheet)")
    v1s = np.linspace(v1_lo, v1_hi, grid_points)
    v2s = np.linspace(v2_lo, v2_hi, grid_points)
    points = [(v1, v2) for v1 in v1s for v2 in v2s]

    ref = [
        _relax_graph(v1, v2, k_ref, a, tol_fast, max_chunks) for v1, v2 in points
    ]
    resolution = 10.0 * tol_fast
    distances = []
    for k in k0s:
        worst = 0.0
        for (v1, v2), u_ref in zip(points, ref):
            u_k = _relax_graph(v1, v2, k, a, tol_fast, max_chunks)
            padded = np.zeros(k_ref)
            padded[:k] = u_k
            worst = max(worst, float(np.max(np.abs(padded - u_ref))))
        distances.append(max(worst, resolution))
    ref_self = max(
        float(np.max(np.abs(u_ref - u_ref))) for u_ref in ref
    )

    xs = np.log(1.0 / np.asarray(k0s, dtype=float))
    ys = np.log(np.asarray(distances))
    exponent = float(np.polyfit(xs, ys, 1)[0]) if len(k0s) >= 2 else math.nan

    return ConvergenceReport(
        k0_list=tuple(k0s),
        distances=tuple(distances),
        exponent=exponent,
        k_ref=int(k_ref),
        reference_distance=ref_self,
        resolution=resolution,
    )

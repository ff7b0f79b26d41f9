"""Blow-up charts around the fold: monomial transforms, chart-to-chart
changes, desingularised chart fields, closed-form chart solutions, the
Riccati connecting orbit, and numerical transition maps.

Coordinate weights are (1, 2, 3) for (u, v, eps).  Chart conventions:

  K1 (v-directional):   u1 = r1*u11,  v1 = r1**2,      eps = r1**3*eps1
  K2 (eps-directional): u1 = r2*u12,  v1 = r2**2*v12,  eps = r2**3
  K3 (u-directional):   u1 = r3,      v1 = r3**2*v13,  eps = r3**3*eps3

with modes u_k = r*uk, v_k = r**2*vk in every chart.  Flat state layout
is [head1, head2, uk(2..k0), vk(2..k0), tail] of dimension 2*k0 + 1:

  K1: (u11, r1, uk1, vk1, eps1)   smooth variant carries m = eps1**(1/3)
  K2: (u12, v12, uk2, vk2, r2)
  K3: (r3, v13, uk3, vk3, eps3)   time-rescaled variant carries m3 = eps3**(1/3)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ChartDomainError,
    ConfigurationError,
    DomainError,
    OrderingError,
    ShapeError,
    ShootingError,
    SingularRescaleError,
    TransitionError,
)
from .integrate import EventSpec, IntegratorConfig, Trajectory, integrate
from .vectorfields import SQRT2, ModelParams, _b_array, _eta_tensor

__all__ = [
    "OMEGA0",
    "ChartState",
    "SectionSpec3",
    "RiccatiOrbit",
    "ChartLeg",
    "BoundCheck",
    "TransitionReport",
    "TransitionGeometry",
    "EntryConstants",
    "StabilityWindow",
    "blowdown",
    "lift_to_chart",
    "kappa12",
    "kappa21",
    "kappa23",
    "rhs_K1",
    "rhs_K1_smooth",
    "rhs_K2",
    "rhs_K3",
    "rhs_K3_time_rescaled",
    "k1_closed_forms",
    "k3_closed_forms",
    "riccati_gamma2",
    "omega0_richardson",
    "omega0_longrun",
    "q0",
    "pi1",
    "pi2",
    "pi3",
    "canonical_entry",
    "full_transition",
    "transition_scaling",
    "transition_contraction",
    "k2_stability_window",
    "verify_chart_bounds",
]

# Asymptote level of the planar Riccati orbit: v -> -OMEGA0 as u -> +inf.
# Equals sqrt(2) times the magnitude of the first zero of the Airy function
# Ai; frozen from the two-method estimate in omega0_richardson/omega0_longrun.
OMEGA0 = 3.3065832101572403

_CHART_NAMES = ("K1", "K2", "K3")
_HEADS = {"K1": ("u11", "r1"), "K2": ("u12", "v12"), "K3": ("r3", "v13")}
_TAILS = {"K1": "eps1", "K2": "r2", "K3": "eps3"}
# positions of coordinates that must stay nonnegative
_NONNEG = {"K1": ((1, "r1"), (-1, "eps1")), "K2": ((-1, "r2"),), "K3": ((0, "r3"), (-1, "eps3"))}


@dataclass(frozen=True, eq=False)
class ChartState:
    """A point in one of the three blow-up charts, stored as a flat vector."""

    chart: str
    vec: np.ndarray

    def __post_init__(self) -> None:
        if self.chart not in _CHART_NAMES:
            raise DomainError(f"unknown chart {self.chart!r}")
        vec = np.array(self.vec, dtype=float)
        if vec.ndim != 1 or vec.shape[0] < 3 or vec.shape[0] % 2 == 0:
            raise ShapeError(
                f"chart state vector must be 1-D of odd length >= 3, got {vec.shape}"
            )
        if not np.all(np.isfinite(vec)):
            raise DomainError("chart state entries must be finite")
        for pos, name in _NONNEG[self.chart]:
            if vec[pos] < 0:
                raise DomainError(f"{name} must be >= 0, got {vec[pos]}")
        vec.setflags(write=False)
        object.__setattr__(self, "vec", vec)

    # -- constructors ------------------------------------------------------
    @classmethod
    def _build(cls, chart, h1, h2, uk, vk, tail) -> "ChartState":
        uk = np.atleast_1d(np.asarray(uk, dtype=float))
        vk = np.atleast_1d(np.asarray(vk, dtype=float))
        if uk.shape != vk.shape or uk.ndim != 1:
            raise ShapeError(
                f"mode blocks must be 1-D of equal length, got {uk.shape}, {vk.shape}"
            )
        return cls(chart, np.concatenate([[h1, h2], uk, vk, [tail]]))

    @classmethod
    def k1(cls, u11, r1, uk1=(), vk1=(), eps1=0.0) -> "ChartState":
        return cls._build("K1", u11, r1, uk1, vk1, eps1)

    @classmethod
    def k2(cls, u12, v12, uk2=(), vk2=(), r2=0.0) -> "ChartState":
        return cls._build("K2", u12, v12, uk2, vk2, r2)

    @classmethod
    def k3(cls, r3, v13, uk3=(), vk3=(), eps3=0.0) -> "ChartState":
        return cls._build("K3", r3, v13, uk3, vk3, eps3)

    @classmethod
    def from_vector(cls, chart, vec) -> "ChartState":
        return cls(chart, np.asarray(vec, dtype=float))

    # -- layout ------------------------------------------------------------
    @property
    def k0(self) -> int:
        return (self.vec.shape[0] - 1) // 2

    def vector(self) -> np.ndarray:
        return np.array(self.vec)

    @property
    def uk(self) -> np.ndarray:
        return self.vec[2 : 1 + self.k0]

    @property
    def vk(self) -> np.ndarray:
        return self.vec[1 + self.k0 : 2 * self.k0]

    def _head(self, chart, slot) -> float:
        if self.chart != chart:
            raise DomainError(
                f"{_HEADS[chart][slot]} is a {chart} coordinate; state is in {self.chart}"
            )
        return float(self.vec[slot])

    def _tail(self, chart) -> float:
        if self.chart != chart:
            raise DomainError(
                f"{_TAILS[chart]} is a {chart} coordinate; state is in {self.chart}"
            )
        return float(self.vec[-1])

    u11 = property(lambda self: self._head("K1", 0))
    r1 = property(lambda self: self._head("K1", 1))
    eps1 = property(lambda self: self._tail("K1"))
    u12 = property(lambda self: self._head("K2", 0))
    v12 = property(lambda self: self._head("K2", 1))
    r2 = property(lambda self: self._tail("K2"))
    r3 = property(lambda self: self._head("K3", 0))
    v13 = property(lambda self: self._head("K3", 1))
    eps3 = property(lambda self: self._tail("K3"))


@dataclass(frozen=True)
class SectionSpec3:
    """A chart section {coordinate = value} used as a transition boundary."""

    chart: str
    coordinate: str
    value: float

    _COORDS = {
        "K1": ("u11", "r1", "eps1"),
        "K2": ("u12", "v12", "r2"),
        "K3": ("r3", "v13", "eps3"),
    }

    def __post_init__(self) -> None:
        if self.chart not in _CHART_NAMES:
            raise DomainError(f"unknown chart {self.chart!r}")
        if self.coordinate not in self._COORDS[self.chart]:
            raise DomainError(
                f"{self.coordinate!r} is not a scalar coordinate of {self.chart}"
            )
        if not self.value > 0:
            raise DomainError(f"section value must be positive, got {self.value}")

    def index(self, k0: int) -> int:
        names = self._COORDS[self.chart]
        if self.coordinate == names[0]:
            return 0
        if self.coordinate == names[1]:
            return 1
        return 2 * k0  # tail slot


# ---------------------------------------------------------------------------
# monomial transforms
# ---------------------------------------------------------------------------

def blowdown(state: ChartState):
    """Map a chart state to downstairs (u, v, eps) via the weight-(1,2,3) monomials."""
    k0 = state.k0
    u = np.empty(k0)
    v = np.empty(k0)
    if state.chart == "K1":
        r = state.r1
        u[0], v[0] = r * state.u11, r * r
        eps = r**3 * state.eps1
    elif state.chart == "K2":
        r = state.r2
        u[0], v[0] = r * state.u12, r * r * state.v12
        eps = r**3
    else:
        r = state.r3
        u[0], v[0] = r, r * r * state.v13
        eps = r**3 * state.eps3
    u[1:] = r * state.uk
    v[1:] = r * r * state.vk
    return u, v, eps


def lift_to_chart(u, v, eps, chart) -> ChartState:
    """Invert the chart monomials; each chart covers its own half-space."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"u and v must be 1-D of equal length, got {u.shape}, {v.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.isfinite(eps)):
        raise DomainError("downstairs point must be finite")
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    if chart == "K1":
        if not v[0] > 0:
            raise ChartDomainError(f"K1 needs v1 > 0, got {v[0]}")
        r = math.sqrt(v[0])
        return ChartState.k1(u[0] / r, r, u[1:] / r, v[1:] / r**2, eps / r**3)
    if chart == "K2":
        if not eps > 0:
            raise ChartDomainError(f"K2 needs eps > 0, got {eps}")
        r = np.cbrt(eps)
        return ChartState.k2(u[0] / r, v[0] / r**2, u[1:] / r, v[1:] / r**2, r)
    if chart == "K3":
        if not u[0] > 0:
            raise ChartDomainError(f"K3 needs u1 > 0, got {u[0]}")
        r = u[0]
        return ChartState.k3(r, v[0] / r**2, u[1:] / r, v[1:] / r**2, eps / r**3)
    raise DomainError(f"unknown chart {chart!r}")


def kappa12(state: ChartState) -> ChartState:
    """K1 -> K2 on {eps1 > 0}."""
    if state.chart != "K1":
        raise DomainError(f"kappa12 maps K1 states, got {state.chart}")
    e = state.eps1
    if not e > 0:
        raise ChartDomainError(f"kappa12 needs eps1 > 0, got {e}")
    c = np.cbrt(e)
    return ChartState.k2(
        state.u11 / c, c**-2, state.uk / c, state.vk / c**2, c * state.r1
    )


def kappa21(state: ChartState) -> ChartState:
    """K2 -> K1 on {v12 > 0}."""
    if state.chart != "K2":
        raise DomainError(f"kappa21 maps K2 states, got {state.chart}")
    w = state.v12
    if not w > 0:
        raise ChartDomainError(f"kappa21 needs v12 > 0, got {w}")
    s = math.sqrt(w)
    return ChartState.k1(
        state.u12 / s, s * state.r2, state.uk / s, state.vk / w, w**-1.5
    )


def kappa23(state: ChartState) -> ChartState:
    """K2 -> K3 on {u12 > 0}."""
    if state.chart != "K2":
        raise DomainError(f"kappa23 maps K2 states, got {state.chart}")
    p = state.u12
    if not p > 0:
        raise ChartDomainError(f"kappa23 needs u12 > 0, got {p}")
    return ChartState.k3(
        p * state.r2, state.v12 / p**2, state.uk / p, state.vk / p**2, p**-3.0
    )


# ---------------------------------------------------------------------------
# chart vector fields
# ---------------------------------------------------------------------------

def _parts(y: np.ndarray, k0: int):
    m = k0 - 1
    return y[0], y[1], y[2 : 2 + m], y[2 + m : 2 + 2 * m], y[2 + 2 * m]


def _mode_coeffs(params: ModelParams):
    A = params.require_A()
    lin = _b_array(params.k0)[1:] / (4.0 * A * A)
    return lin, _eta_tensor(params.k0)


def _hot_down(params: ModelParams, u1, uk, v1, vk, eps):
    """Evaluate the higher-order terms at the blown-down point."""
    u = np.concatenate([[u1], uk])
    v = np.concatenate([[v1], vk])
    hu, hv = params.hot.eval(u, v, eps)
    return hu[0], hu[1:], hv[1:]


def rhs_K1(y, params: ModelParams) -> np.ndarray:
    """Desingularised K1 field in (u11, r1, uk1, vk1, eps1); raw eps1 powers."""
    y = np.asarray(y, dtype=float)
    u11, r1, uk, vk, eps1 = _parts(y, params.k0)
    lin, eta = _mode_coeffs(params)
    F1 = eps1 / SQRT2
    m = np.cbrt(eps1)
    quad = np.einsum("kij,i,j->k", eta, uk, uk)
    du11 = F1 * u11 - 1.0 + (u11 * u11 + uk @ uk) / SQRT2
    duk = F1 * uk + lin * m * uk - vk + SQRT2 * u11 * uk + quad
    dvk = 2.0 * F1 * vk + lin * r1**3 * eps1 * m * vk
    if not params.hot.is_zero:
        hu1, huk, hvk = _hot_down(params, r1 * u11, r1 * uk, r1 * r1, r1 * r1 * vk, r1**3 * eps1)
        if r1 > 0:  # admissible monomials give H/r^2 -> 0 with r, so skipping at r=0 is exact
            du11 += hu1 / r1**2
            duk = duk + huk / r1**2
        dvk = dvk + eps1 * hvk
    return np.concatenate([[du11, -F1 * r1], duk, dvk, [3.0 * F1 * eps1]])


def rhs_K1_smooth(y, params: ModelParams) -> np.ndarray:
    """K1 field in (u11, r1, uk1, vk1, m) with m = eps1**(1/3); polynomial in m."""
    y = np.asarray(y, dtype=float)
    u11, r1, uk, vk, m = _parts(y, params.k0)
    lin, eta = _mode_coeffs(params)
    F1 = m**3 / SQRT2
    quad = np.einsum("kij,i,j->k", eta, uk, uk)
    du11 = F1 * u11 - 1.0 + (u11 * u11 + uk @ uk) / SQRT2
    duk = F1 * uk + lin * m * uk - vk + SQRT2 * u11 * uk + quad
    dvk = 2.0 * F1 * vk + lin * r1**3 * m**4 * vk
    if not params.hot.is_zero:
        hu1, huk, hvk = _hot_down(
            params, r1 * u11, r1 * uk, r1 * r1, r1 * r1 * vk, r1**3 * m**3
        )
        if r1 > 0:
            du11 += hu1 / r1**2
            duk = duk + huk / r1**2
        dvk = dvk + m**3 * hvk
    return np.concatenate([[du11, -F1 * r1], duk, dvk, [F1 * m]])


def rhs_K2(y, params: ModelParams) -> np.ndarray:
    """Desingularised K2 field in (u12, v12, uk2, vk2, r2); r2 is constant."""
    y = np.asarray(y, dtype=float)
    u12, v12, uk, vk, r2 = _parts(y, params.k0)
    lin, eta = _mode_coeffs(params)
    quad = np.einsum("kij,i,j->k", eta, uk, uk)
    du12 = -v12 + (u12 * u12 + uk @ uk) / SQRT2
    duk = lin * uk - vk + SQRT2 * u12 * uk + quad
    dvk = lin * r2**3 * vk
    if not params.hot.is_zero:
        hu1, huk, hvk = _hot_down(
            params, r2 * u12, r2 * uk, r2 * r2 * v12, r2 * r2 * vk, r2**3
        )
        if r2 > 0:
            du12 += hu1 / r2**2
            duk = duk + huk / r2**2
        dvk = dvk + hvk
    return np.concatenate([[du12, -SQRT2], duk, dvk, [0.0]])


def _f3(v13, uk, r3, params):
    F3 = -v13 + (1.0 + uk @ uk) / SQRT2
    if not params.hot.is_zero and r3 > 0:
        u1 = r3
        hu1, _, _ = _hot_down(
            params, u1, r3 * uk, r3 * r3 * v13, r3 * r3 * np.zeros_like(uk), 0.0
        )
        F3 += hu1 / r3**2
    return F3


def rhs_K3(y, params: ModelParams) -> np.ndarray:
    """Desingularised K3 field in (r3, v13, uk3, vk3, eps3); raw eps3 powers."""
    y = np.asarray(y, dtype=float)
    r3, v13, uk, vk, eps3 = _parts(y, params.k0)
    lin, eta = _mode_coeffs(params)
    m3 = np.cbrt(eps3)
    quad = np.einsum("kij,i,j->k", eta, uk, uk)
    hu1 = huk = hvk = None
    if not params.hot.is_zero:
        hu1, huk, hvk = _hot_down(
            params, r3, r3 * uk, r3 * r3 * v13, r3 * r3 * vk, r3**3 * eps3
        )
    F3 = -v13 + (1.0 + uk @ uk) / SQRT2
    if hu1 is not None and r3 > 0:
        F3 += hu1 / r3**2
    dv13 = -2.0 * F3 * v13 - SQRT2 * eps3
    duk = (-F3 + lin * m3 + SQRT2) * uk - vk + quad
    dvk = (-2.0 * F3 + lin * r3**3 * eps3 * m3) * vk
    if hu1 is not None:
        if r3 > 0:
            duk = duk + huk / r3**2
        dvk = dvk + eps3 * hvk
    return np.concatenate([[r3 * F3, dv13], duk, dvk, [-3.0 * F3 * eps3]])


def rhs_K3_time_rescaled(y, params: ModelParams, f3_floor: float = 1e-6) -> np.ndarray:
    """K3 field divided by F3, in (r3, v13, uk3, vk3, m3) with m3 = eps3**(1/3).

    The division trades the resonant origin for a hyperbolic one; it is only
    valid while F3 stays positive, enforced via f3_floor.
    """
    y = np.asarray(y, dtype=float)
    r3, v13, uk, vk, m3 = _parts(y, params.k0)
    lin, eta = _mode_coeffs(params)
    hu1 = huk = hvk = None
    if not params.hot.is_zero:
        hu1, huk, hvk = _hot_down(
            params, r3, r3 * uk, r3 * r3 * v13, r3 * r3 * vk, r3**3 * m3**3
        )
    F3 = -v13 + (1.0 + uk @ uk) / SQRT2
    if hu1 is not None and r3 > 0:
        F3 += hu1 / r3**2
    if F3 < f3_floor:
        raise SingularRescaleError(
            f"time rescale needs F3 >= {f3_floor:g}, got {F3:.6g} at r3={r3:.6g}, v13={v13:.6g}"
        )
    quad = np.einsum("kij,i,j->k", eta, uk, uk)
    dv13 = -2.0 * v13 - SQRT2 * m3**3 / F3
    duk = (-1.0 + (lin * m3 + SQRT2) / F3) * uk - vk / F3 + quad / F3
    dvk = (-2.0 + lin * r3**3 * m3**4 / F3) * vk
    if hu1 is not None:
        if r3 > 0:
            duk = duk + huk / (r3**2 * F3)
        dvk = dvk + m3**3 * hvk / F3
    return np.concatenate([[r3, dv13], duk, dvk, [-m3]])


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class K1ClosedForms:
    """Explicit K1 solution on the invariant plane: eps1 blows up hyperbolically
    while r1 shrinks so that r1**3*eps1 stays constant."""

    eps1_0: float
    rho: float
    delta: float
    T1: float

    def _den(self, t):
        den = 2.0 - 3.0 * SQRT2 * self.eps1_0 * np.asarray(t, dtype=float)
        if np.any(den <= 0):
            raise DomainError("t beyond the eps1 blow-up time of the closed form")
        return den

    def eps1(self, t):
        return 2.0 * self.eps1_0 / self._den(t)

    def r1(self, t):
        return 2.0 ** (-1.0 / 3.0) * self.rho * self._den(t) ** (1.0 / 3.0)


def k1_closed_forms(eps1_0: float, rho: float, delta: float) -> K1ClosedForms:
    if not (eps1_0 > 0 and rho > 0 and delta > 0):
        raise DomainError("eps1_0, rho, delta must all be positive")
    if not eps1_0 < delta:
        raise OrderingError(f"need eps1(0) < delta, got {eps1_0} >= {delta}")
    T1 = SQRT2 / 3.0 * (1.0 / eps1_0 - 1.0 / delta)
    return K1ClosedForms(eps1_0, rho, delta, T1)


@dataclass(frozen=True)
class K3ClosedForms:
    """Explicit K3 solution on the invariant plane under the rescaled clock:
    r3 grows exactly exponentially while eps3 decays at rate 3."""

    r3_in: float
    delta: float
    rho: float
    T3: float

    def r3(self, t):
        return self.r3_in * np.exp(np.asarray(t, dtype=float))

    def eps3(self, t):
        return self.delta * np.exp(-3.0 * np.asarray(t, dtype=float))

    @property
    def eps3_exit(self) -> float:
        return self.delta * (self.r3_in / self.rho) ** 3

    @property
    def eps3_exit_cuberoot(self) -> float:
        """Value of delta**(1/3)*r3_in/rho: an alternative exit expression.
        The ratio to eps3_exit is (rho/r3_in)**2 * delta**(-2/3) > 1 whenever
        r3_in < rho and delta < 1, so the two never agree in-domain; kept so
        reports can flag the disagreement."""
        return np.cbrt(self.delta) * self.r3_in / self.rho

    @property
    def exit_forms_agree(self) -> bool:
        a, b = self.eps3_exit, self.eps3_exit_cuberoot
        return math.isclose(a, b, rel_tol=1e-9, abs_tol=0.0)


def k3_closed_forms(r3_in: float, delta: float, rho: float) -> K3ClosedForms:
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not 0 < r3_in < rho:
        raise OrderingError(f"need 0 < r3_in < rho, got r3_in={r3_in}, rho={rho}")
    return K3ClosedForms(r3_in, delta, rho, math.log(rho / r3_in))


# ---------------------------------------------------------------------------
# Riccati connecting orbit
# ---------------------------------------------------------------------------

def _series_left(u):
    # Matching dv/du = -sqrt(2)/(u^2/sqrt(2) - v) order by order forces the
    # 1/u correction; the next term is 2^(-1/2)/u^4.
    return u * u / SQRT2 + 1.0 / u


def _series_right(u, omega0=OMEGA0):
    # Same matching on the far side forces the 2/u correction; the next term
    # is -(2*sqrt(2)/3)*omega0/u^3.
    return -omega0 + 2.0 / u


# The orbit attracts at rate sqrt(2)/gap^2 per unit u (~1e4 near deep left
# starts), which is stiff for explicit steppers; integrate implicitly.
_RICCATI_CFG = IntegratorConfig(
    rel_tol=1e-12, abs_tol=1e-14, blowup_norm=1e9, stiff_mode="semi_implicit"
)


@dataclass(frozen=True, eq=False)
class RiccatiOrbit:
    """The connecting orbit v = s(u) of u' = -v + u^2/sqrt(2), v' = -sqrt(2),
    parametrised by u; s decreases from +inf to -OMEGA0."""

    u: np.ndarray
    s: np.ndarray
    omega0: float
    left_exponent: float
    right_exponent: float
    u_span: tuple
    _traj: Trajectory = field(repr=False)

    def evaluate(self, u: float) -> float:
        lo, hi = self.u_span
        if not lo <= u <= hi:
            raise DomainError(f"u={u} outside tabulated span [{lo}, {hi}]")
        return float(self._traj.state_at(u - lo)[0])

    def invert(self, s_value: float) -> float:
        """The unique u with s(u) = s_value (s is strictly decreasing)."""
        lo, hi = self.u_span
        s_lo, s_hi = self.evaluate(lo), self.evaluate(hi)
        if not s_hi < s_value < s_lo:
            raise ShootingError(
                f"s={s_value} outside orbit range ({s_hi:.6g}, {s_lo:.6g}); "
                "extend u_start/u_end"
            )
        return float(brentq(lambda u: self.evaluate(u) - s_value, lo, hi, xtol=1e-14))


def _fit_exponent(orbit_eval, series, us):
    res = np.array([abs(orbit_eval(u) - series(u)) for u in us])
    if np.any(res <= 0):
        return math.inf  # remainder below measurement floor
    slope = np.polyfit(np.log(np.abs(us)), np.log(res), 1)[0]
    return -slope


def riccati_gamma2(
    u_start: float = -50.0,
    u_end: float = 50.0,
    rel_tol: float = 1e-12,
    abs_tol: float = 1e-14,
) -> RiccatiOrbit:
    """Track the connecting orbit from the u -> -inf series to u_end.

    The orbit attracts neighbouring solutions super-exponentially for
    increasing u, so the O(u_start^-4) series error is flushed immediately.
    """
    if not u_start <= -20:
        raise DomainError(f"u_start must be <= -20, got {u_start}")
    if not u_end >= 20:
        raise DomainError(f"u_end must be >= 20, got {u_end}")

    def fieldfn(y):
        s, w = y
        gap = w * w / SQRT2 - s
        if gap <= 0:
            raise ShootingError(
                f"orbit left the wedge v < u^2/sqrt(2) at u={w:.6g}: gap={gap:.3e}"
            )
        return np.array([-SQRT2 / gap, 1.0])

    cfg = replace(_RICCATI_CFG, rel_tol=rel_tol, abs_tol=abs_tol)
    traj = integrate(
        fieldfn,
        [_series_left(u_start), u_start],
        (0.0, u_end - u_start),
        cfg,
    )
    if traj.status != "completed":
        raise ShootingError(
            f"orbit integration stopped early: status={traj.status}, "
            f"reached u={traj.final_state[1]:.6g}"
        )
    u_samples = traj.states[:, 1]
    s_samples = traj.states[:, 0]

    def ev(u):
        return float(traj.state_at(u - u_start)[0])

    def energy(u):
        return 2.0 / u - ev(u)  # removes the 2/u tail; -> OMEGA0 + O(u^-3)

    if u_end >= 40:
        omega0 = (8.0 * energy(u_end) - energy(u_end / 2.0)) / 7.0
    else:
        omega0 = energy(u_end)

    left_us = np.geomspace(0.8 * abs(u_start), 0.5 * abs(u_start), 5) * -1.0
    right_us = np.geomspace(0.5 * u_end, 0.8 * u_end, 5)
    left_exp = _fit_exponent(ev, _series_left, left_us)
    right_exp = _fit_exponent(ev, _series_right, right_us)

    return RiccatiOrbit(
        u=u_samples,
        s=s_samples,
        omega0=omega0,
        left_exponent=left_exp,
        right_exponent=right_exp,
        u_span=(u_start, u_end),
        _traj=traj,
    )


def omega0_richardson(u_ends=(20.0, 40.0, 80.0), u_start: float = -50.0) -> float:
    """Asymptote estimate with the u^-3 and u^-4 remainder orders removed by
    Richardson extrapolation over a doubling ladder of endpoints."""
    u_ends = tuple(float(u) for u in u_ends)
    if len(u_ends) != 3 or not all(
        abs(b / a - 2.0) < 1e-9 for a, b in zip(u_ends, u_ends[1:])
    ):
        raise DomainError(f"u_ends must be a doubling triple, got {u_ends}")
    orbit = riccati_gamma2(u_start=u_start, u_end=u_ends[-1])
    e1, e2, e3 = (2.0 / u - orbit.evaluate(u) for u in u_ends)
    r1a = (8.0 * e2 - e1) / 7.0
    r1b = (8.0 * e3 - e2) / 7.0
    return (16.0 * r1b - r1a) / 15.0


def omega0_longrun(u_end: float = 400.0, u_start: float = -50.0) -> float:
    """Asymptote estimate by brute-force continuation far to the right."""
    orbit = riccati_gamma2(u_start=u_start, u_end=u_end)
    return 2.0 / u_end - orbit.evaluate(u_end)


def q0(delta: float, k0: int = 2) -> ChartState:
    """Intersection of the connecting orbit with the K2 entry section
    {v12 = delta**(-2/3)}; all mode components and r2 vanish there."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if k0 < 1:
        raise DomainError(f"k0 must be >= 1, got {k0}")
    target = delta ** (-2.0 / 3.0)
    # the crossing sits near -2^(1/4)*delta^(-1/3); keep it well inside the span
    u_guess = -(2.0**0.25) * delta ** (-1.0 / 3.0)
    u_start = min(-50.0, 1.5 * u_guess - 5.0)
    orbit = riccati_gamma2(u_start=u_start, u_end=25.0)
    u12 = orbit.invert(target)
    zeros = np.zeros(k0 - 1)
    return ChartState.k2(u12, target, zeros, zeros, 0.0)


# ---------------------------------------------------------------------------
# transition maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionGeometry:
    """Section levels of the chart pipeline: entry radius rho and the eps1
    hand-off level delta."""

    rho: float = 0.1
    delta: float = 0.05

    def __post_init__(self) -> None:
        if not (self.rho > 0 and self.delta > 0):
            raise DomainError("rho and delta must be positive")


@dataclass(frozen=True)
class EntryConstants:
    """Half-widths of the chart entry sets (all dimensionless)."""

    c_u11: float = 0.05  # |u11 + 2^(1/4)| slack in K1
    c_uk1: float = 0.05
    c_vk1: float = 0.05  # scales eps1**(4/3)
    q0_radius: float = 1e-2  # K2 neighbourhood of q0 in (u12, uk, vk, r2)
    beta: float = 0.05  # |v13| entry half-width in K3
    c_uk3: float = 0.05
    c_vk3: float = 0.05
    c_out_u11: float = 0.05  # |u11 + 2^(1/4)| at the K1 exit
    c_out_vk1: float = 0.05  # scales delta**(2/3) at the K1 exit
    c_out_v12: float = 5.0  # |v12_exit + OMEGA0 - 2*delta^(1/3)| <= c * delta

    def __post_init__(self) -> None:
        for name, val in self.__dict__.items():
            if not val > 0:
                raise DomainError(f"{name} must be positive, got {val}")


@dataclass(frozen=True, eq=False)
class ChartLeg:
    """One integrated chart passage, from a validated entry to a section hit."""

    chart: str
    entry: ChartState
    exit: ChartState
    time: float
    trajectory: Trajectory
    section: tuple  # (coordinate name, value)

    @property
    def section_residual(self) -> float:
        name, value = self.section
        return abs(getattr(self.exit, name) - value)


# The K1 passage lasts O(rho^3/eps) desingularised time units with mode decay
# rates O(eps^(-1/3)), which is stiff; K2/K3 passages are short (O(delta^(-2/3))
# and O(log(rho/r3)) units) and explicit stepping is both faster and avoids the
# unbounded finite-difference probe escalation scipy's implicit Jacobian
# applies to structurally-zero columns (r2' = 0).
_K1_CFG = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13, stiff_mode="semi_implicit")
_K23_CFG = IntegratorConfig(rel_tol=1e-11, abs_tol=1e-13)


def _require_section_hit(traj: Trajectory, event_name: str, stage: str):
    hits = [rec for rec in traj.events if rec[2] == event_name]
    if traj.status != "event_terminated" or not hits:
        raise TransitionError(
            f"{stage}: failed to reach the exit section "
            f"(status={traj.status}, t_end={traj.t_end:.6g}, final={traj.final_state})"
        )
    t_star, y_star, _ = hits[-1]
    return t_star, y_star


def pi1(
    entry: ChartState,
    delta: float,
    params: ModelParams,
    cfg: IntegratorConfig = None,
    constants: EntryConstants = None,
) -> ChartLeg:
    """Transit K1 from {r1 = rho} to {eps1 = delta} (integrated in m = eps1^(1/3))."""
    constants = constants or EntryConstants()
    cfg = cfg or _K1_CFG
    if entry.chart != "K1":
        raise DomainError(f"pi1 needs a K1 state, got {entry.chart}")
    if entry.k0 != params.k0:
        raise ShapeError(f"entry has k0={entry.k0}, params k0={params.k0}")
    rho = entry.r1
    if not rho > 0:
        raise TransitionError("pi1 entry must sit on r1 = rho > 0")
    e0 = entry.eps1
    if not 0 < e0 < delta:
        raise TransitionError(
            f"pi1 needs 0 < eps1 < delta for a finite transit, got eps1={e0}, delta={delta}"
        )
    if abs(entry.u11 + 2.0**0.25) > constants.c_u11:
        raise TransitionError(
            f"entry u11={entry.u11:.6g} outside |u11 + 2^(1/4)| <= {constants.c_u11}"
        )
    if np.any(np.abs(entry.uk) > constants.c_uk1):
        raise TransitionError(f"entry uk1={entry.uk} outside |uk1| <= {constants.c_uk1}")
    vk_cap = constants.c_vk1 * e0 ** (4.0 / 3.0)
    if np.any(np.abs(entry.vk) > vk_cap):
        raise TransitionError(
            f"entry vk1={entry.vk} outside |vk1| <= c_vk1*eps1^(4/3) = {vk_cap:.3e}"
        )

    y0 = np.concatenate([[entry.u11, rho], entry.uk, entry.vk, [np.cbrt(e0)]])
    t_guess = SQRT2 / 3.0 * (1.0 / e0 - 1.0 / delta)
    event = EventSpec(
        kind="coordinate_equals",
        index=y0.shape[0] - 1,
        value=float(np.cbrt(delta)),
        direction="increasing",
        terminal=True,
        name="eps1_section",
    )
    traj = integrate(
        lambda y: rhs_K1_smooth(y, params), y0, (0.0, 1.5 * t_guess + 10.0), cfg, [event]
    )
    t_star, y_star = _require_section_hit(traj, "eps1_section", "pi1")
    k0 = params.k0
    exit_state = ChartState.k1(
        y_star[0], y_star[1], y_star[2 : 1 + k0], y_star[1 + k0 : 2 * k0], y_star[-1] ** 3
    )
    return ChartLeg("K1", entry, exit_state, t_star, traj, ("eps1", delta))


def pi2(
    entry: ChartState,
    delta: float,
    params: ModelParams,
    cfg: IntegratorConfig = None,
    constants: EntryConstants = None,
) -> ChartLeg:
    """Transit K2 from {v12 = delta^(-2/3)} near q0 to {u12 = delta^(-1/3)}."""
    constants = constants or EntryConstants()
    cfg = cfg or _K23_CFG
    if entry.chart != "K2":
        raise DomainError(f"pi2 needs a K2 state, got {entry.chart}")
    if entry.k0 != params.k0:
        raise ShapeError(f"entry has k0={entry.k0}, params k0={params.k0}")
    section_in = delta ** (-2.0 / 3.0)
    if abs(entry.v12 - section_in) > 1e-9 * section_in:
        raise TransitionError(
            f"pi2 entry must sit on v12 = delta^(-2/3) = {section_in:.6g}, got {entry.v12:.6g}"
        )
    anchor = q0(delta, params.k0)
    r = constants.q0_radius
    offsets = {
        "u12": abs(entry.u12 - anchor.u12),
        "uk2": float(np.max(np.abs(entry.uk), initial=0.0)),
        "vk2": float(np.max(np.abs(entry.vk), initial=0.0)),
        "r2": entry.r2,
    }
    bad = {k: v for k, v in offsets.items() if v > r}
    if bad:
        raise TransitionError(f"pi2 entry outside the q0 neighbourhood (radius {r}): {bad}")

    event = EventSpec(
        kind="coordinate_equals",
        index=0,
        value=delta ** (-1.0 / 3.0),
        direction="increasing",
        terminal=True,
        name="u12_section",
    )
    t_guess = (section_in + OMEGA0) / SQRT2
    traj = integrate(
        lambda y: rhs_K2(y, params),
        entry.vector(),
        (0.0, 1.5 * t_guess + 20.0),
        cfg,
        [event],
    )
    t_star, y_star = _require_section_hit(traj, "u12_section", "pi2")
    exit_state = ChartState.from_vector("K2", y_star)
    return ChartLeg("K2", entry, exit_state, t_star, traj, ("u12", delta ** (-1.0 / 3.0)))


def pi3(
    entry: ChartState,
    rho: float,
    params: ModelParams,
    cfg: IntegratorConfig = None,
    constants: EntryConstants = None,
) -> ChartLeg:
    """Transit K3 from {eps3 = delta} to {r3 = rho} under the rescaled clock."""
    constants = constants or EntryConstants()
    cfg = cfg or _K23_CFG
    if entry.chart != "K3":
        raise DomainError(f"pi3 needs a K3 state, got {entry.chart}")
    if entry.k0 != params.k0:
        raise ShapeError(f"entry has k0={entry.k0}, params k0={params.k0}")
    if not 0 < entry.r3 < rho:
        raise TransitionError(f"pi3 needs 0 < r3 < rho, got r3={entry.r3}, rho={rho}")
    if abs(entry.v13) > constants.beta:
        raise TransitionError(f"entry v13={entry.v13:.6g} outside |v13| <= {constants.beta}")
    if np.any(np.abs(entry.uk) > constants.c_uk3):
        raise TransitionError(f"entry uk3={entry.uk} outside |uk3| <= {constants.c_uk3}")
    if np.any(np.abs(entry.vk) > constants.c_vk3):
        raise TransitionError(f"entry vk3={entry.vk} outside |vk3| <= {constants.c_vk3}")

    y0 = np.concatenate(
        [[entry.r3, entry.v13], entry.uk, entry.vk, [np.cbrt(entry.eps3)]]
    )
    event = EventSpec(
        kind="coordinate_equals",
        index=0,
        value=rho,
        direction="increasing",
        terminal=True,
        name="r3_section",
    )
    t_exact = math.log(rho / entry.r3)  # r3' = r3 under the rescaled clock
    traj = integrate(
        lambda y: rhs_K3_time_rescaled(y, params),
        y0,
        (0.0, 1.05 * t_exact + 2.0),
        cfg,
        [event],
    )
    t_star, y_star = _require_section_hit(traj, "r3_section", "pi3")
    k0 = params.k0
    exit_state = ChartState.k3(
        y_star[0], y_star[1], y_star[2 : 1 + k0], y_star[1 + k0 : 2 * k0], y_star[-1] ** 3
    )
    return ChartLeg("K3", entry, exit_state, t_star, traj, ("r3", rho))


# ---------------------------------------------------------------------------
# bound verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    bound: float
    observed: float
    ratio: float
    passed: bool


def _check_constants(constants, needed, chart):
    if constants is None:
        raise ConfigurationError(f"chart {chart} bounds need constants {needed}")
    missing = [k for k in needed if k not in constants]
    if missing:
        raise ConfigurationError(f"chart {chart} bounds missing constants {missing}")
    for k in needed:
        if not 0 < constants[k] <= 1:
            raise ConfigurationError(f"constant {k} must lie in (0, 1], got {constants[k]}")


def verify_chart_bounds(
    traj: Trajectory,
    chart: str,
    params: ModelParams,
    constants: dict,
    delta: float = None,
) -> list:
    """Check the mode envelopes along a K1 (smooth-variable) or K2 trajectory.

    K1 envelopes are time-independent; K2 envelopes decay from the entry
    values.  Returns one BoundCheck per mode channel with the max ratio of
    observed to envelope.
    """
    k0 = params.k0
    m = k0 - 1
    states = traj.states
    uk_cols = states[:, 2 : 2 + m]
    vk_cols = states[:, 2 + m : 2 + 2 * m]
    b = np.abs(_b_array(k0)[1:])
    checks = []
    if chart == "K1":
        _check_constants(constants, ("sigma_u", "sigma_v"), "K1")
        if delta is None:
            raise ConfigurationError("K1 bounds need the exit level delta")
        a = params.require_a()
        rho = states[0, 1]
        eps1_0 = states[0, -1] ** 3
        if not (rho > 0 and eps1_0 > 0):
            raise DomainError("K1 bound check needs r1(0) > 0 and eps1(0) > 0")
        su, sv = constants["sigma_u"], constants["sigma_v"]
        common = sv * eps1_0 ** (2.0 / 3.0) * rho**2 * delta ** (2.0 / 3.0)
        for j in range(m):
            ub = abs(uk_cols[0, j]) + (8 * a**2 * rho / b[j]) * (
                su + common * (1 + 8 * a**2 / b[j])
            )
            vb = (delta / eps1_0) ** (2.0 / 3.0) * abs(vk_cols[0, j]) + (
                eps1_0 ** (2.0 / 3.0) * delta ** (2.0 / 3.0) * 8 * a**2 * rho**2 / b[j]
            ) * sv
            for label, cols, bound in (("u", uk_cols, ub), ("v", vk_cols, vb)):
                obs = float(np.max(np.abs(cols[:, j])))
                ratio = obs / bound if bound > 0 else (0.0 if obs == 0 else math.inf)
                checks.append(
                    BoundCheck(f"K1.{label}{j + 2}", bound, obs, ratio, ratio <= 1 + 1e-9)
                )
    elif chart == "K2":
        _check_constants(constants, ("sigma",), "K2")
        A = params.require_A()
        r20 = states[0, -1]
        sigma = constants["sigma"]
        t = traj.times
        for j in range(m):
            u_env = np.exp(-b[j] * t / (16 * A**2)) * abs(uk_cols[0, j]) + (
                16 * A**2 / b[j]
            ) * (abs(vk_cols[0, j]) + (1 + 4 * A**2 * r20 / b[j]) * sigma)
            v_env = np.exp(-b[j] * r20**3 * t / (4 * A**2)) * abs(vk_cols[0, j]) + (
                4 * A**2 * r20 / b[j]
            ) * sigma
            for label, cols, env in (("u", uk_cols, u_env), ("v", vk_cols, v_env)):
                obs = np.abs(cols[:, j])
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratios = np.where(env > 0, obs / env, np.where(obs == 0, 0.0, np.inf))
                i = int(np.argmax(ratios))
                checks.append(
                    BoundCheck(
                        f"K2.{label}{j + 2}",
                        float(env[i]),
                        float(obs[i]),
                        float(ratios[i]),
                        bool(ratios[i] <= 1 + 1e-9),
                    )
                )
    else:
        raise DomainError(f"bound envelopes are defined for charts K1 and K2, not {chart!r}")
    return checks


# ---------------------------------------------------------------------------
# full transition
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransitionReport:
    entry: tuple  # downstairs (u, v, eps)
    exit: tuple  # downstairs (u, v, eps) on {u1 = rho}
    time: float  # summed leg durations (per-chart desingularised clocks)
    times: dict
    chart_path: tuple
    legs: tuple
    bounds: tuple
    eps_trace: tuple  # ((stage, blown-down eps), ...)
    geometry: TransitionGeometry

    @property
    def eps_max_drift(self) -> float:
        vals = np.array([v for _, v in self.eps_trace])
        ref = vals[0]
        return float(np.max(np.abs(vals - ref)) / ref)


def _with_A(params: ModelParams) -> ModelParams:
    if params.A is not None:
        return params
    a = params.require_a()
    if not params.eps > 0:
        raise ConfigurationError("deriving A = a*eps^(1/6) needs eps > 0")
    return replace(params, A=a * params.eps ** (1.0 / 6.0))


def canonical_entry(params: ModelParams, geometry: TransitionGeometry, du1: float = 0.0):
    """A downstairs entry point in the theorem's entry set: u1 at the folded
    rest state scaled by rho, v1 = rho^2, small modes with v_k = O(eps^(4/3))."""
    rho = geometry.rho
    k0 = params.k0
    u = np.full(k0, 0.01 * rho)
    v = np.full(k0, 0.01 * params.eps ** (4.0 / 3.0))
    u[0] = -(2.0**0.25) * rho + du1
    v[0] = rho * rho
    return u, v


def full_transition(
    u,
    v,
    params: ModelParams,
    geometry: TransitionGeometry = None,
    cfg: IntegratorConfig = None,
    constants: EntryConstants = None,
    bound_constants: dict = None,
) -> TransitionReport:
    """Compose lift -> pi1 -> kappa12 -> pi2 -> kappa23 -> pi3 -> blowdown.

    eps is taken from params.eps; the exit lies on the downstairs section
    {u1 = rho}.  bound_constants defaults to the loosest admissible envelope
    constants (all 1.0).  cfg=None lets each leg pick its solver (implicit
    for the long K1 passage, explicit for the short K2/K3 ones)."""
    geometry = geometry or TransitionGeometry()
    constants = constants or EntryConstants()
    if bound_constants is None:
        bound_constants = {"sigma": 1.0, "sigma_u": 1.0, "sigma_v": 1.0}
    params = _with_A(params)
    eps = params.eps
    if not eps > 0:
        raise TransitionError("full transition needs eps > 0")
    rho, delta = geometry.rho, geometry.delta

    trace = [("entry", eps)]

    def stage(label, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ChartDomainError, TransitionError, SingularRescaleError, ShootingError) as e:
            raise TransitionError(f"stage {label}: {e}") from e

    s1 = stage("lift K1", lift_to_chart, u, v, eps, "K1")
    if abs(s1.r1 - rho) > 1e-9 * rho:
        raise TransitionError(
            f"entry must sit on v1 = rho^2 (lifted r1={s1.r1:.6g}, rho={rho:.6g})"
        )
    trace.append(("lift K1", s1.r1**3 * s1.eps1))
    leg1 = stage("pi1", pi1, s1, delta, params, cfg, constants)
    trace.append(("pi1 exit", leg1.exit.r1**3 * leg1.exit.eps1))
    s2 = stage("kappa12", kappa12, leg1.exit)
    trace.append(("kappa12", s2.r2**3))
    leg2 = stage("pi2", pi2, s2, delta, params, cfg, constants)
    trace.append(("pi2 exit", leg2.exit.r2**3))
    d23 = delta ** (2.0 / 3.0)
    obs_u11 = abs(leg1.exit.u11 + 2.0**0.25)
    bounds_k1exit = [
        BoundCheck(
            "K1.u11_exit", constants.c_out_u11, obs_u11,
            obs_u11 / constants.c_out_u11, obs_u11 <= constants.c_out_u11,
        )
    ]
    obs_vk = float(np.max(np.abs(leg1.exit.vk), initial=0.0))
    vk_cap = constants.c_out_vk1 * d23
    bounds_k1exit.append(
        BoundCheck("K1.vk_exit", vk_cap, obs_vk, obs_vk / vk_cap, obs_vk <= vk_cap)
    )
    obs_v12 = abs(leg2.exit.v12 + OMEGA0 - 2.0 * np.cbrt(delta))
    v12_cap = constants.c_out_v12 * delta
    bounds_k1exit.append(
        BoundCheck("K2.v12_exit", v12_cap, obs_v12, obs_v12 / v12_cap, obs_v12 <= v12_cap)
    )
    s3 = stage("kappa23", kappa23, leg2.exit)
    trace.append(("kappa23", s3.r3**3 * s3.eps3))
    leg3 = stage("pi3", pi3, s3, rho, params, cfg, constants)
    trace.append(("pi3 exit", leg3.exit.r3**3 * leg3.exit.eps3))
    u_out, v_out, eps_out = blowdown(leg3.exit)
    trace.append(("blowdown", eps_out))

    bounds = list(bounds_k1exit)
    bounds += verify_chart_bounds(leg1.trajectory, "K1", params, bound_constants, delta=delta)
    bounds += verify_chart_bounds(leg2.trajectory, "K2", params, bound_constants)
    # K3 exit comparison: (r3_in/rho)^2 prefactor on the v-coordinate
    pref = (leg3.entry.r3 / rho) ** 2
    r3in = leg3.entry.r3
    v13_bound = pref * (abs(leg3.entry.v13) + 1.0 * (1.0 + r3in * math.log(r3in)))
    obs13 = abs(leg3.exit.v13)
    bounds.append(
        BoundCheck(
            "K3.v1_exit", v13_bound, obs13,
            obs13 / v13_bound if v13_bound > 0 else math.inf,
            obs13 <= v13_bound,
        )
    )
    # theorem-level comparisons downstairs (generic constants)
    u_in = np.atleast_1d(np.asarray(u, dtype=float))
    v_in = np.atleast_1d(np.asarray(v, dtype=float))
    v1_bound = 2.0 * OMEGA0 * eps ** (2.0 / 3.0)  # planar exit level is -OMEGA0*eps^(2/3)
    bounds.append(
        BoundCheck(
            "theorem.v1_out", v1_bound, abs(v_out[0]),
            abs(v_out[0]) / v1_bound, abs(v_out[0]) <= v1_bound,
        )
    )
    for j in range(1, params.k0):
        bu = max(abs(u_in[j]), 1e-12)
        bv = max(abs(v_in[j]), 1e-12)
        bounds.append(
            BoundCheck(
                f"theorem.u{j + 1}_out", bu, abs(u_out[j]),
                abs(u_out[j]) / bu, abs(u_out[j]) <= bu,
            )
        )
        bounds.append(
            BoundCheck(
                f"theorem.v{j + 1}_out", bv, abs(v_out[j]),
                abs(v_out[j]) / bv, abs(v_out[j]) <= bv,
            )
        )

    times = {"K1": leg1.time, "K2": leg2.time, "K3": leg3.time}
    return TransitionReport(
        entry=(u_in, v_in, eps),
        exit=(u_out, v_out, eps_out),
        time=sum(times.values()),
        times=times,
        chart_path=("K1", "K2", "K3"),
        legs=(leg1, leg2, leg3),
        bounds=tuple(bounds),
        eps_trace=tuple(trace),
        geometry=geometry,
    )


def transition_scaling(
    eps_values,
    k0: int = 3,
    a: float = 0.5,
    geometry: TransitionGeometry = None,
    constants: EntryConstants = None,
    cfg: IntegratorConfig = None,
) -> dict:
    """Run the full transition over an eps ladder and fit log|v1_out| vs log eps."""
    geometry = geometry or TransitionGeometry()
    eps_values = np.asarray(sorted(eps_values), dtype=float)
    v1_out = np.empty_like(eps_values)
    reports = []
    for i, eps in enumerate(eps_values):
        params = ModelParams(k0=k0, eps=float(eps), a=a, A=a * float(eps) ** (1.0 / 6.0))
        u, v = canonical_entry(params, geometry)
        rep = full_transition(u, v, params, geometry, cfg, constants)
        v1_out[i] = abs(rep.exit[1][0])
        reports.append(rep)
    slope = float(np.polyfit(np.log(eps_values), np.log(v1_out), 1)[0])
    return {"eps": eps_values, "v1_out": v1_out, "slope": slope, "reports": tuple(reports)}


def _paired_field(fieldfn, n):
    def doubled(y):
        return np.concatenate([fieldfn(y[:n]), fieldfn(y[n:])])

    return doubled


def transition_contraction(
    eps_values,
    du1: float = 1e-3,
    k0: int = 3,
    a: float = 0.5,
    geometry: TransitionGeometry = None,
    constants: EntryConstants = None,
    cfg: IntegratorConfig = None,
) -> dict:
    """Exit spread between two entries differing only in u1 by du1.

    Both copies are integrated as one doubled system so they share step
    selection; section events fire on the first copy and the second copy is
    read off at the same instant.  The contraction is exponentially strong in
    1/eps, so for small eps the copies absorb to bit-identical doubles before
    the exit; spreads below the integrator resolution are therefore reported
    as the accuracy floor (10 * rel_tol * coordinate scale).  The hand-off
    spread |u11_a - u11_b| at the K1 exit, where the decay law is still
    resolvable for the largest eps, is reported alongside the downstairs exit
    spread max|Delta(u, v)|.
    """
    geometry = geometry or TransitionGeometry()
    cfg1, cfg23 = cfg or _K1_CFG, cfg or _K23_CFG
    constants = constants or EntryConstants()
    eps_values = np.asarray(sorted(eps_values, reverse=True), dtype=float)
    rho, delta = geometry.rho, geometry.delta
    spreads = np.empty_like(eps_values)
    k1_exit_spreads = np.empty_like(eps_values)
    floor_exit = 10.0 * cfg23.rel_tol * max(rho, 1.0)
    floor_k1 = 10.0 * cfg1.rel_tol * 2.0 ** 0.25
    n = 2 * k0 + 1
    for i, eps in enumerate(eps_values):
        eps = float(eps)
        params = ModelParams(k0=k0, eps=eps, a=a, A=a * eps ** (1.0 / 6.0))
        u_a, v_a = canonical_entry(params, geometry)
        u_b, v_b = canonical_entry(params, geometry, du1=du1)
        sa, sb = lift_to_chart(u_a, v_a, eps, "K1"), lift_to_chart(u_b, v_b, eps, "K1")

        # leg 1 (K1, smooth clock), event on copy a's m coordinate
        ya = np.concatenate([[sa.u11, sa.r1], sa.uk, sa.vk, [np.cbrt(sa.eps1)]])
        yb = np.concatenate([[sb.u11, sb.r1], sb.uk, sb.vk, [np.cbrt(sb.eps1)]])
        t_guess = SQRT2 / 3.0 * (1.0 / sa.eps1 - 1.0 / delta)
        ev = EventSpec(
            "coordinate_equals", n - 1, float(np.cbrt(delta)), "increasing", True, "m_a"
        )
        traj = integrate(
            _paired_field(lambda y: rhs_K1_smooth(y, params), n),
            np.concatenate([ya, yb]),
            (0.0, 1.5 * t_guess + 10.0),
            cfg1,
            [ev],
        )
        _, y_star = _require_section_hit(traj, "m_a", f"contraction K1 (eps={eps:g})")
        k1_exit_spreads[i] = max(abs(y_star[0] - y_star[n]), floor_k1)

        def k1_state(h):
            return ChartState.k1(h[0], h[1], h[2 : 1 + k0], h[1 + k0 : 2 * k0], h[-1] ** 3)

        s2a, s2b = kappa12(k1_state(y_star[:n])), kappa12(k1_state(y_star[n:]))

        # leg 2 (K2), event on copy a's u12
        ev = EventSpec(
            "coordinate_equals", 0, delta ** (-1.0 / 3.0), "increasing", True, "u12_a"
        )
        t_guess = (delta ** (-2.0 / 3.0) + OMEGA0) / SQRT2
        traj = integrate(
            _paired_field(lambda y: rhs_K2(y, params), n),
            np.concatenate([s2a.vector(), s2b.vector()]),
            (0.0, 1.5 * t_guess + 20.0),
            cfg23,
            [ev],
        )
        _, y_star = _require_section_hit(traj, "u12_a", f"contraction K2 (eps={eps:g})")
        s3a = kappa23(ChartState.from_vector("K2", y_star[:n]))
        s3b = kappa23(ChartState.from_vector("K2", y_star[n:]))

        # leg 3 (K3, rescaled clock), event on copy a's r3
        def k3_vec(s):
            return np.concatenate([[s.r3, s.v13], s.uk, s.vk, [np.cbrt(s.eps3)]])

        ev = EventSpec("coordinate_equals", 0, rho, "increasing", True, "r3_a")
        traj = integrate(
            _paired_field(lambda y: rhs_K3_time_rescaled(y, params), n),
            np.concatenate([k3_vec(s3a), k3_vec(s3b)]),
            (0.0, 1.05 * math.log(rho / s3a.r3) + 2.0),
            cfg23,
            [ev],
        )
        _, y_star = _require_section_hit(traj, "r3_a", f"contraction K3 (eps={eps:g})")

        def k3_state(h):
            return ChartState.k3(h[0], h[1], h[2 : 1 + k0], h[1 + k0 : 2 * k0], h[-1] ** 3)

        ua, va, _ = blowdown(k3_state(y_star[:n]))
        ub, vb, _ = blowdown(k3_state(y_star[n:]))
        spreads[i] = max(
            float(np.max(np.abs(ua - ub))), float(np.max(np.abs(va - vb))), floor_exit
        )
    return {
        "eps": eps_values,
        "spreads": spreads,
        "k1_exit_spreads": k1_exit_spreads,
        "floor_exit": floor_exit,
        "floor_k1": floor_k1,
        "entry_offset": du1,
    }


# ---------------------------------------------------------------------------
# stability window
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityWindow:
    ok: bool
    lower: float
    upper: float
    lower_margin: float
    upper_margin: float


def k2_stability_window(delta: float, eps0: float, rho: float, a_param: float) -> StabilityWindow:
    """Strict window 8^3*a^6/pi^6 * eps0 < delta < eps0/rho^3 for linear
    stability of the mode-free plane along the K2 passage."""
    if not (delta > 0 and eps0 > 0 and rho > 0 and a_param > 0):
        raise DomainError("k2_stability_window needs positive inputs")
    lower = 512.0 * a_param**6 / math.pi**6 * eps0
    upper = eps0 / rho**3
    return StabilityWindow(
        ok=lower < delta < upper,
        lower=lower,
        upper=upper,
        lower_margin=delta - lower,
        upper_margin=upper - delta,
    )

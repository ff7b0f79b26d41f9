"""Right-hand sides of the truncated downstairs ODE systems.

State layout for the k0-mode systems is the flat vector
(u_1..u_k0, v_1..v_k0); the prepared system appends eps as a trailing
state coordinate.  Higher-order terms default to zero; polynomial mode
accepts only the admissible monomial classes of the truncation result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .spectral import b_coefficient, eta_coefficient

__all__ = [
    "GalerkinState",
    "ModelParams",
    "HigherOrderTerm",
    "HigherOrderSpec",
    "rhs_original",
    "rhs_rescaled",
    "rhs_slowtime",
    "rhs_example2",
    "rhs_prepared",
    "rhs_fold_normal",
]

SQRT2 = math.sqrt(2.0)


@lru_cache(maxsize=None)
def _b_array(k0: int) -> np.ndarray:
    out = np.array([b_coefficient(k) for k in range(1, k0 + 1)])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _eta_tensor(k0: int) -> np.ndarray:
    """Dense eta^k_{ij} with axes (k, i, j), indices offset by 2."""
    m = max(k0 - 1, 0)
    out = np.zeros((m, m, m))
    for k in range(2, k0 + 1):
        for i in range(2, k0 + 1):
            for j in range(2, k0 + 1):
                out[k - 2, i - 2, j - 2] = eta_coefficient(k, i, j)
    out.setflags(write=False)
    return out


def _parse_symbol(token: str):
    """Split 'eps' / 'u3' / 'v1' into (kind, index)."""
    if token == "eps":
        return ("eps", 0)
    kind, idx = token[0], token[1:]
    if kind in ("u", "v") and idx.isdigit() and int(idx) >= 1:
        return (kind, int(idx))
    raise DomainError(f"unrecognised monomial symbol {token!r}")


def _admissible_u1(factors) -> bool:
    kinds = [kind for kind, _ in factors]
    if factors == [("eps", 0)]:
        return True
    if len(factors) == 2:
        (ka, ia), (kb, ib) = factors
        if ka == kb == "v" and ia == ib:
            return True  # v_1^2 or v_j^2
        if ka == "u" and kb == "v":
            return (ia == 1 and ib == 1) or (ia == ib and ia >= 2)  # u_1 v_1, u_j v_j
    if len(factors) == 3 and kinds == ["u", "u", "u"]:
        idx = sorted(i for _, i in factors)
        if idx[0] >= 2:
            return True  # u_i u_j u_l
        if idx[0] == 1 and idx[1] == idx[2] and idx[1] >= 2:
            return True  # u_1 u_j^2
    return False


def _admissible_uk(factors, k: int) -> bool:
    kinds = [kind for kind, _ in factors]
    if len(factors) == 2:
        (ka, ia), (kb, ib) = factors
        if ka == kb == "v":
            if sorted((ia, ib)) == sorted((1, k)):
                return True  # v_1 v_k
            return ia >= 2 and ib >= 2  # v_i v_j
        if ka == "u" and kb == "v":
            if ia == 1 and ib == k:
                return True  # u_1 v_k
            if ia == k and ib == 1:
                return True  # u_k v_1
            return ia >= 2 and ib >= 2  # u_i v_j
    if len(factors) == 3 and kinds == ["u", "u", "u"]:
        idx = sorted(i for _, i in factors)
        if idx[0] >= 2:
            return True  # u_i u_j u_l
        if idx == [1, 1, k]:
            return True  # u_1^2 u_k
        if idx[0] == 1 and idx[1] >= 2:
            return True  # u_1 u_i u_j
    return False


def _admissible_vk(factors, k: int) -> bool:
    if len(factors) == 2 and all(kind == "v" for kind, _ in factors):
        (_, ia), (_, ib) = factors
        if sorted((ia, ib)) == sorted((1, k)):
            return True  # v_1 v_k
        return ia >= 2 and ib >= 2  # v_i v_j
    return False


@dataclass(frozen=True)
class HigherOrderTerm:
    """One admissible monomial: coefficient * product(factors) added to target."""

    target: str
    factors: tuple
    coefficient: float

    def __post_init__(self) -> None:
        tk, ti = _parse_symbol(self.target)
        if tk == "eps":
            raise DomainError("monomial target must be a u or v component")
        if tk == "v" and ti == 1:
            raise DomainError("H^v_1 vanishes structurally; target v1 not allowed")
        parsed = sorted(_parse_symbol(f) for f in self.factors)
        if tk == "u" and ti == 1:
            ok = _admissible_u1(parsed)
        elif tk == "u":
            ok = _admissible_uk(parsed, ti)
        else:
            ok = _admissible_vk(parsed, ti)
        if not ok:
            raise DomainError(
                f"monomial {self.factors} is not an admissible order class "
                f"for target {self.target}"
            )

    def value(self, u: np.ndarray, v: np.ndarray, eps: float) -> float:
        out = self.coefficient
        for token in self.factors:
            kind, idx = _parse_symbol(token)
            if kind == "eps":
                out *= eps
                continue
            if idx > len(u):
                raise DomainError(
                    f"monomial factor {token} exceeds truncation k0={len(u)}"
                )
            out *= u[idx - 1] if kind == "u" else v[idx - 1]
        return out


@dataclass(frozen=True)
class HigherOrderSpec:
    """Higher-order term configuration: identically zero, or a polynomial
    built from the admissible monomial whitelist."""

    mode: str = "zero"
    terms: tuple = ()

    def __post_init__(self) -> None:
        if self.mode not in ("zero", "polynomial"):
            raise ConfigurationError(f"unknown higher-order mode {self.mode!r}")
        if self.mode == "zero" and self.terms:
            raise ConfigurationError("zero mode admits no terms")
        normalised = tuple(
            t if isinstance(t, HigherOrderTerm) else HigherOrderTerm(*t)
            for t in self.terms
        )
        object.__setattr__(self, "terms", normalised)

    @property
    def is_zero(self) -> bool:
        return self.mode == "zero" or not self.terms

    def eval(self, u: np.ndarray, v: np.ndarray, eps: float):
        """Return (H^u, H^v) as length-k0 arrays; H^v_1 is always zero."""
        k0 = len(u)
        hu = np.zeros(k0)
        hv = np.zeros(k0)
        for term in self.terms:
            kind, idx = _parse_symbol(term.target)
            if idx > k0:
                raise DomainError(f"target {term.target} exceeds truncation k0={k0}")
            bucket = hu if kind == "u" else hv
            bucket[idx - 1] += term.value(u, v, eps)
        return hu, hv


@dataclass(frozen=True)
class ModelParams:
    """Truncation level, domain scale (a or its A-form), eps, and H terms."""

    k0: int
    eps: float
    a: float = None
    A: float = None
    hot: HigherOrderSpec = field(default_factory=HigherOrderSpec)

    def __post_init__(self) -> None:
        if self.k0 < 1:
            raise DomainError(f"k0 must be >= 1, got {self.k0}")
        if self.eps < 0:
            raise DomainError(f"eps must be >= 0, got {self.eps}")
        if self.a is not None and self.a <= 0:
            raise DomainError(f"a must be positive, got {self.a}")
        if self.A is not None and self.A <= 0:
            raise DomainError(f"A must be positive, got {self.A}")

    def require_a(self) -> float:
        if self.a is None:
            raise ConfigurationError("this system form needs the half-length a")
        return self.a

    def require_A(self) -> float:
        if self.A is None:
            raise ConfigurationError("this system form needs the blow-up scale A")
        return self.A


@dataclass
class GalerkinState:
    """State of a k0-mode downstairs system."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.ndim != 1 or self.u.shape != self.v.shape:
            raise ShapeError(
                f"u and v must be 1-D of equal length, got {self.u.shape} and {self.v.shape}"
            )
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise DomainError("state entries must be finite")

    @property
    def k0(self) -> int:
        return self.u.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    @classmethod
    def from_vector(cls, y, t: float = 0.0) -> "GalerkinState":
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.shape[0] % 2:
            raise ShapeError(f"state vector must have even length, got {y.shape}")
        half = y.shape[0] // 2
        return cls(u=y[:half], v=y[half:], t=t)


def _split_uv(s, k0: int):
    if isinstance(s, GalerkinState):
        u, v = s.u, s.v
    else:
        y = np.asarray(s, dtype=float)
        if y.ndim != 1:
            raise ShapeError(f"state must be 1-D, got shape {y.shape}")
        half = y.shape[0] // 2
        u, v = y[:half], y[half:]
    if u.shape[0] != k0 or v.shape[0] != k0:
        raise ShapeError(f"state has {u.shape[0]} modes, params expect {k0}")
    return u, v


def _mode_coupling(u: np.ndarray, k0: int) -> np.ndarray:
    """Quadratic sums sum_{i,j>=2} eta^k_{ij} u_i u_j for k = 2..k0."""
    if k0 < 2:
        return np.zeros(0)
    tail = u[1:]
    return np.einsum("kij,i,j->k", _eta_tensor(k0), tail, tail)


def rhs_original(s, p: ModelParams) -> np.ndarray:
    """Truncated system in the unit-norm basis variables."""
    a = p.require_a()
    u, v = _split_uv(s, p.k0)
    hu, hv = p.hot.eval(u, v, p.eps)
    b = _b_array(p.k0)
    du = np.empty(p.k0)
    dv = np.empty(p.k0)
    du[0] = -v[0] + np.sum(u * u) / math.sqrt(2 * a) + hu[0]
    dv[0] = -math.sqrt(2 * a) * p.eps
    if p.k0 >= 2:
        lin = 0.25 * a**-2 * b[1:]
        du[1:] = (
            lin * u[1:]
            - v[1:]
            + (2 / math.sqrt(2 * a)) * u[0] * u[1:]
            + _mode_coupling(u, p.k0) / math.sqrt(a)
            + hu[1:]
        )
        dv[1:] = p.eps * lin * v[1:] + p.eps * hv[1:]
    return np.concatenate([du, dv])


def rhs_rescaled(s, p: ModelParams) -> np.ndarray:
    """Fast-time system in the a^{-1/2}-rescaled variables."""
    a = p.require_a()
    u, v = _split_uv(s, p.k0)
    hu, hv = p.hot.eval(u, v, p.eps)
    b = _b_array(p.k0)
    du = np.empty(p.k0)
    dv = np.empty(p.k0)
    du[0] = -v[0] + (u[0] ** 2 + np.sum(u[1:] * u[1:])) / SQRT2 + hu[0]
    dv[0] = -SQRT2 * p.eps
    if p.k0 >= 2:
        lin = 0.25 * a**-2 * b[1:]
        du[1:] = (
            lin * u[1:]
            - v[1:]
            + SQRT2 * u[0] * u[1:]
            + _mode_coupling(u, p.k0)
            + hu[1:]
        )
        dv[1:] = p.eps * lin * v[1:] + p.eps * hv[1:]
    return np.concatenate([du, dv])


def rhs_slowtime(s, p: ModelParams) -> np.ndarray:
    """Slow-time form of the rescaled system (all components divided by eps)."""
    if p.eps <= 0:
        raise DomainError("slow-time form needs eps > 0")
    return rhs_rescaled(s, p) / p.eps


def rhs_example2(s, eps: float) -> np.ndarray:
    """Two-mode system in the order (u1, v1, u2, v2) at a = 1/2."""
    y = np.asarray(s, dtype=float)
    if y.shape != (4,):
        raise ShapeError(f"expected a 4-vector (u1, v1, u2, v2), got shape {y.shape}")
    u1, v1, u2, v2 = y
    pi2 = math.pi**2
    return np.array(
        [
            -v1 + u1 * u1 + u2 * u2,
            -eps,
            -v2 + u2 * (2 * u1 - pi2),
            -eps * pi2 * v2,
        ]
    )


def rhs_prepared(s, p: ModelParams) -> np.ndarray:
    """Rescaled system with eps promoted to a state coordinate and a = A eps^{-1/6}.

    State layout (u_1..u_k0, v_1..v_k0, eps); the trailing derivative is 0.
    """
    A = p.require_A()
    y = np.asarray(s, dtype=float)
    if y.ndim != 1 or y.shape[0] != 2 * p.k0 + 1:
        raise ShapeError(f"expected {2 * p.k0 + 1} state entries, got shape {y.shape}")
    eps = y[-1]
    if eps < 0:
        raise DomainError(f"eps state must be >= 0, got {eps}")
    u, v = y[: p.k0], y[p.k0 : 2 * p.k0]
    hu, hv = p.hot.eval(u, v, eps)
    b = _b_array(p.k0)
    du = np.empty(p.k0)
    dv = np.empty(p.k0)
    du[0] = -v[0] + (u[0] ** 2 + np.sum(u[1:] * u[1:])) / SQRT2 + hu[0]
    dv[0] = -SQRT2 * eps
    if p.k0 >= 2:
        stiff = b[1:] / (4 * A * A)
        du[1:] = (
            stiff * eps ** (1 / 3) * u[1:]
            - v[1:]
            + SQRT2 * u[0] * u[1:]
            + _mode_coupling(u, p.k0)
            + hu[1:]
        )
        dv[1:] = stiff * eps ** (4 / 3) * v[1:] + eps * hv[1:]
    return np.concatenate([du, dv, [0.0]])


def rhs_fold_normal(x, mu: float):
    """Normal-form fold field mu + x^2."""
    return mu + np.asarray(x, dtype=float) ** 2 if np.ndim(x) else mu + x * x

"""Finite-time blowup window for the two-mode fold system.

The two-mode truncation at half-length a = 1/2 with the fast modes rescaled
by 2^(-1/2) reads

    u1' = -v1 + u1^2 + u2^2          v1' = -eps
    u2' = -v2 + u2*(2*u1 - pi^2)     v2' = -eps * pi^2 * v2

with v1(0) > 0.  For v2(0) != 0 the second mode feeds u1' a positive offset
that pushes u1 across the fold while v1 is still positive, so u1 reaches
infinity before v1 changes sign -- provided eps is below an explicit
threshold.  The threshold chain is

    eta(v1_0, v2_0)  ->  mu = (e^(2 pi^2 eta) - 1) eta  ->  blowup time of
    x' = mu + x^2    ->  eps < eta^2 / (2 sqrt(2)).

Thresholds are evaluated in closed form (they are astronomically small for
O(1) data, far below anything integrable), while the dynamical statement is
verified by direct integration at moderate eps where the blowup is
empirically observable.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EstimationError,
    HypothesisError,
    IntegrationError,
    PreconditionError,
)
from .integrate import (
    EventSpec,
    IntegratorConfig,
    Trajectory,
    blowup_time_estimate,
    integrate,
)

__all__ = [
    "BlowupConfig",
    "BlowupVerdict",
    "comparison_check",
    "epsilon_threshold_eta",
    "epsilon_threshold_initial",
    "eta_bound",
    "fold_blowup_time",
    "mu_from_eta",
    "rhs_fold_normal",
    "rhs_two_mode",
    "verify_blowup_before_sign_change",
]

SQRT2 = math.sqrt(2.0)
PI2 = math.pi**2
PI4 = math.pi**4
_PP = math.pi + PI2  # pi + pi^2, the u2 relaxation rate floor


# ---------------------------------------------------------------------------
# threshold chain
# ---------------------------------------------------------------------------

def _check_initial_pair(v1_0: float, v2_0: float) -> None:
    if not 0.0 < v1_0 < PI2 / 16.0:
        raise PreconditionError(
            f"v1_0 must lie in (0, pi^2/16 = {PI2 / 16.0:.6g}), got {v1_0}"
        )
    if v2_0 == 0.0:
        raise PreconditionError("v2_0 must be nonzero")


def eta_bound(v1_0: float, v2_0: float) -> float:
    """Slow-variable level eta below which the mode forcing dominates v1.

    eta = (v2_0)^2 / (4 (pi + pi^2)^2) * exp(-pi^4/16 - 2 pi^2 v1_0).
    """
    _check_initial_pair(v1_0, v2_0)
    eta = v2_0**2 / (4.0 * _PP**2) * math.exp(-PI4 / 16.0 - 2.0 * PI2 * v1_0)
    # the defining inequality eta * e^(-2 pi^2 eta) < e^(-pi^4/16 - 2 pi^2 v1_0)
    # * (v2_0)^2 / (4 (pi+pi^2)^2) reduces to e^(-2 pi^2 eta) < 1; keep the
    # check explicit so a bad edit cannot silently break the chain
    rhs = v2_0**2 / (4.0 * _PP**2) * math.exp(-PI4 / 16.0 - 2.0 * PI2 * v1_0)
    if not eta * math.exp(-2.0 * PI2 * eta) < rhs:
        raise HypothesisError(
            f"eta = {eta:.6g} violates its own defining inequality"
        )
    return eta


def mu_from_eta(eta: float) -> float:
    """Forcing margin mu = (e^(2 pi^2 eta) - 1) * eta > 2 pi^2 eta^2."""
    if not eta > 0:
        raise PreconditionError(f"eta must be positive, got {eta}")
    return math.expm1(2.0 * PI2 * eta) * eta


def fold_blowup_time(mu: float, xi: float = 0.0) -> float:
    """Blowup time of x' = mu + x^2 from x(0) = xi; always below pi/sqrt(mu)."""
    if not mu > 0:
        raise PreconditionError(
            f"mu must be positive for guaranteed finite-time blowup, got {mu}"
        )
    root = math.sqrt(mu)
    return (math.pi / 2.0 - math.atan(xi / root)) / root


def rhs_fold_normal(y, mu: float) -> np.ndarray:
    """The scalar normal form x' = mu + x^2 as an integrable field."""
    return np.array([mu + float(y[0]) ** 2])


def epsilon_threshold_eta(eta: float) -> float:
    """eps below eta^2/(2 sqrt(2)) guarantees blowup before the sign change."""
    if not eta > 0:
        raise PreconditionError(f"eta must be positive, got {eta}")
    return eta * eta / (2.0 * SQRT2)


def epsilon_threshold_initial(v1_0: float, v2_0: float) -> float:
    """The same threshold written directly in the initial data."""
    _check_initial_pair(v1_0, v2_0)
    return (
        math.exp(-PI4 / 8.0)
        / (32.0 * SQRT2 * _PP**4)
        * math.exp(-4.0 * PI2 * v1_0)
        * v2_0**4
    )


# ---------------------------------------------------------------------------
# comparison principle
# ---------------------------------------------------------------------------

def comparison_check(
    f,
    g,
    x0: float,
    T: float,
    cfg: IntegratorConfig = None,
    box: tuple = None,
    samples: int = 41,
) -> bool:
    """Check the scalar comparison principle: f > g pointwise forces
    y_f >= y_g from equal initial data.

    f and g are callables (t, x) -> real.  The pointwise hypothesis is
    sampled on [0, T] x box (box defaults to the hull of both computed
    orbits, widened by 10%); a nonpositive gap raises HypothesisError.
    Returns whether y_f >= y_g - 10 * abs_tol held at all sample times.
    """
    cfg = cfg or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12)
    if not T > 0:
        raise PreconditionError(f"horizon T must be positive, got {T}")

    def clocked(field_t):
        # append the clock so autonomous integration covers t-dependent fields
        return lambda y: np.array([field_t(y[1], y[0]), 1.0])

    traj_f = integrate(clocked(f), [x0, 0.0], (0.0, T), cfg)
    traj_g = integrate(clocked(g), [x0, 0.0], (0.0, T), cfg)
    t_common = min(traj_f.t_end, traj_g.t_end)

    if box is None:
        hull = np.concatenate([traj_f.states[:, 0], traj_g.states[:, 0]])
        lo, hi = float(np.min(hull)), float(np.max(hull))
        pad = 0.1 * max(hi - lo, 1.0)
        box = (lo - pad, hi + pad)
    ts = np.linspace(0.0, t_common, samples)
    xs = np.linspace(box[0], box[1], samples)
    gaps = np.array([[f(t, x) - g(t, x) for x in xs] for t in ts])
    i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
    if gaps[i, j] <= 0:
        raise HypothesisError(
            f"f <= g at (t, x) = ({ts[i]:.6g}, {xs[j]:.6g}): "
            f"gap = {gaps[i, j]:.3e}"
        )

    slack = 10.0 * cfg.abs_tol
    for t in np.linspace(0.0, t_common, 201):
        if traj_f.state_at(t)[0] < traj_g.state_at(t)[0] - slack:
            return False
    return True


# ---------------------------------------------------------------------------
# dynamical verification
# ---------------------------------------------------------------------------

def rhs_two_mode(y, eps: float) -> np.ndarray:
    """The 4-dim system in the (u1, v1, u2, v2) ordering."""
    u1, v1, u2, v2 = y
    return np.array(
        [
            -v1 + u1 * u1 + u2 * u2,
            -eps,
            -v2 + u2 * (2.0 * u1 - PI2),
            -eps * PI2 * v2,
        ]
    )


@dataclass(frozen=True)
class BlowupConfig:
    """Initial data and eps for one two-mode blowup run."""

    u1_0: float
    u2_0: float
    v1_0: float
    v2_0: float
    eps: float

    def __post_init__(self) -> None:
        if not self.v1_0 > 0:
            raise PreconditionError(f"v1_0 must be positive, got {self.v1_0}")
        if not self.eps > 0:
            raise PreconditionError(f"eps must be positive, got {self.eps}")

    @property
    def sign_change_deadline(self) -> float:
        return self.v1_0 / self.eps  # v1' = -eps exactly

    @property
    def canonical(self) -> bool:
        """Whether the data already sits in the u2_0 < 0 < v2_0 half."""
        return self.u2_0 < 0 < self.v2_0


@dataclass(frozen=True)
class BlowupVerdict:
    """Outcome of one verification run, with the reduction diagnostics."""

    config: BlowupConfig
    blowup_time: float  # None if no blowup was observed
    sign_change_deadline: float
    before_sign_change: bool
    status: str
    t_end: float
    sign_change_time: float  # None if the run ended first
    u1_window_ok: bool  # -pi/2 < u1_0 <= pi/4
    u2_nonpositive: bool  # u2(t) <= 0 along the (possibly flipped) run
    v2_drift: float  # max relative drift of v2 * e^(eps pi^2 t)
    symmetry_flipped: bool
    final_state: np.ndarray = field(repr=False)


def verify_blowup_before_sign_change(
    cfg: BlowupConfig, icfg: IntegratorConfig = None
) -> BlowupVerdict:
    """Integrate the two-mode system with blowup detection and a terminal
    event on the v1 sign change; report which came first.

    A v2_0 < 0 configuration is folded onto v2_0 > 0 through the symmetry
    (u2, v2) -> (-u2, -v2), which leaves (u1, v1) unchanged.
    """
    icfg = icfg or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, blowup_norm=1e8)
    flip = cfg.v2_0 < 0
    sgn = -1.0 if flip else 1.0
    y0 = np.array([cfg.u1_0, cfg.v1_0, sgn * cfg.u2_0, sgn * cfg.v2_0])
    deadline = cfg.sign_change_deadline
    event = EventSpec(
        kind="coordinate_equals",
        index=1,
        value=0.0,
        direction="decreasing",
        terminal=True,
        name="v1_sign_change",
    )
    span = (0.0, deadline + max(1.0, 0.01 * deadline))
    try:
        traj = integrate(lambda y: rhs_two_mode(y, cfg.eps), y0, span, icfg, [event])
    except IntegrationError as e:
        return BlowupVerdict(
            config=cfg,
            blowup_time=None,
            sign_change_deadline=deadline,
            before_sign_change=False,
            status=f"integration_failed: {e}",
            t_end=math.nan,
            sign_change_time=None,
            u1_window_ok=-math.pi / 2.0 < cfg.u1_0 <= math.pi / 4.0,
            u2_nonpositive=False,
            v2_drift=math.nan,
            symmetry_flipped=flip,
            final_state=y0,
        )

    blowup_time = None
    if traj.status == "blowup_detected":
        try:
            blowup_time = blowup_time_estimate(traj)
        except EstimationError:
            blowup_time = traj.t_end
    hits = [rec for rec in traj.events if rec[2] == "v1_sign_change"]
    sign_change_time = hits[-1][0] if hits else None

    # slow-mode exactness: v2(t) = v2(0) * e^(-eps pi^2 t)
    v2_scaled = traj.states[:, 3] * np.exp(cfg.eps * PI2 * traj.times)
    v2_ref = y0[3]
    drift = (
        float(np.max(np.abs(v2_scaled - v2_ref)) / abs(v2_ref)) if v2_ref else 0.0
    )

    return BlowupVerdict(
        config=cfg,
        blowup_time=blowup_time,
        sign_change_deadline=deadline,
        before_sign_change=blowup_time is not None and blowup_time < deadline,
        status=traj.status,
        t_end=traj.t_end,
        sign_change_time=sign_change_time,
        u1_window_ok=-math.pi / 2.0 < cfg.u1_0 <= math.pi / 4.0,
        u2_nonpositive=bool(np.max(traj.states[:, 2]) <= 1e-9),
        v2_drift=drift,
        symmetry_flipped=flip,
        final_state=traj.final_state,
    )

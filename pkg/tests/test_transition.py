"""Connecting-orbit analysis and the composed K1 -> K2 -> K3 transition."""

import functools
import math

import numpy as np
import pytest

from specfold.charts import (
    OMEGA0,
    ChartState,
    EntryConstants,
    TransitionGeometry,
    canonical_entry,
    full_transition,
    kappa12,
    kappa21,
    omega0_richardson,
    pi1,
    pi2,
    pi3,
    q0,
    rhs_K2,
    riccati_gamma2,
    transition_contraction,
    transition_scaling,
)
from specfold.errors import (
    DomainError,
    ShapeError,
    ShootingError,
    TransitionError,
)
from specfold.integrate import EventSpec, IntegratorConfig, integrate
from specfold.vectorfields import ModelParams

SQRT2 = math.sqrt(2.0)
QUARTER = 2.0**0.25


@functools.lru_cache(maxsize=None)
def orbit(u_start=-50.0, u_end=50.0):
    return riccati_gamma2(u_start=u_start, u_end=u_end)


def params_for(k0, eps):
    return ModelParams(k0=k0, eps=eps, a=0.5, A=0.5 * eps ** (1.0 / 6.0))


# -- connecting orbit -----------------------------------------------------------

def test_orbit_is_decreasing_and_stays_in_the_wedge():
    orb = orbit()
    assert np.all(np.diff(orb.s) < 0)
    gaps = orb.u**2 / SQRT2 - orb.s
    assert np.all(gaps > 0)


def test_orbit_evaluate_and_invert_roundtrip():
    orb = orbit()
    for target in (50.0, 1.0, -3.0):
        u = orb.invert(target)
        assert orb.evaluate(u) == pytest.approx(target, abs=1e-10)
    with pytest.raises(ShootingError):
        orb.invert(orb.evaluate(50.0) - 1.0)  # below the right asymptote range
    with pytest.raises(DomainError):
        orb.evaluate(-60.0)


def test_orbit_domain_guards():
    with pytest.raises(DomainError):
        riccati_gamma2(u_start=-10.0)
    with pytest.raises(DomainError):
        riccati_gamma2(u_end=5.0)
    with pytest.raises(DomainError):
        omega0_richardson(u_ends=(20.0, 50.0, 80.0))  # not a doubling triple


def test_series_remainders_decay_at_corrected_orders():
    # left: s = u^2/sqrt(2) + 1/u + O(u^-4); right: s = -OMEGA0 + 2/u + O(u^-3)
    orb = orbit()
    assert orb.left_exponent >= 3.5
    assert orb.right_exponent >= 2.5


def test_first_order_coefficients_are_1_and_2():
    # residuals against the same series with the 1/u coefficients replaced by
    # 2^(-1/2) and 2^(1/2) decay only like 1/u: those coefficients are wrong
    orb = orbit()
    us = np.linspace(30.0, 48.0, 5)
    res = [abs(orb.evaluate(u) - (-OMEGA0 + SQRT2 / u)) for u in us]
    slope = -np.polyfit(np.log(us), np.log(res), 1)[0]
    assert slope < 2.0
    np.testing.assert_allclose(res, (2.0 - SQRT2) / us, rtol=0.2)
    res_left = [abs(orb.evaluate(-u) - (u * u / SQRT2 - 1.0 / (SQRT2 * u))) for u in us]
    np.testing.assert_allclose(res_left, (1.0 - 1.0 / SQRT2) / us, rtol=0.2)


def test_omega0_two_method_agreement():
    rich = omega0_richardson()
    long_end = 400.0
    orb = orbit(-50.0, long_end)
    longrun = 2.0 / long_end - orb.evaluate(long_end)
    assert rich == pytest.approx(longrun, abs=2e-7)
    assert rich == pytest.approx(OMEGA0, abs=5e-8)
    assert longrun == pytest.approx(OMEGA0, abs=2e-7)


def test_omega0_matches_airy_zero():
    from scipy.special import ai_zeros

    first = ai_zeros(1)[0][0]
    assert OMEGA0 == pytest.approx(SQRT2 * abs(first), rel=1e-13)


def test_orbit_reported_omega0_is_consistent():
    orb = orbit()
    assert orb.omega0 == pytest.approx(OMEGA0, abs=1e-6)


# -- singular-orbit tangents ------------------------------------------------------

def gamma1_angles(u12):
    """Angles between the K1 approach direction to the rest point and the two
    candidate tangents, measured on the connecting orbit at coordinate u12."""
    orb = orbit(-120.0, 25.0)
    v12 = orb.evaluate(u12)
    st = kappa21(ChartState.k2(u12, v12, [0.0], [0.0], 0.0))
    w = np.array([st.u11 + QUARTER, st.r1, st.uk[0], st.vk[0], st.eps1])
    w /= np.linalg.norm(w)

    def angle(d):
        d = np.asarray(d, dtype=float)
        d /= np.linalg.norm(d)
        return math.acos(min(1.0, abs(float(w @ d))))

    return angle([-1.0, 0.0, 0.0, 0.0, 2.0]), angle([-1.0, 0.0, 0.0, 0.0, 1.0])


def test_gamma1_tangent_direction():
    # the center direction at the K1 rest point is (-1, 0, ..., 0, 2)/sqrt(5):
    # eps1 leaves twice as fast as u11 returns
    ang_true, ang_legacy = gamma1_angles(-80.0)
    assert ang_true < 1e-3
    # the equal-weight direction (-1, 0, ..., 0, 1)/sqrt(2) misses by a fixed
    # angle (atan(2) - pi/4 ~ 0.322): the approach never aligns with it
    assert ang_legacy > 0.3
    far, _ = gamma1_angles(-110.0)
    assert far < ang_true  # alignment improves along the orbit


def test_gamma3_tangent_direction():
    # in K3 the orbit enters the exit rest point along the v13 axis
    orb = orbit(-50.0, 400.0)
    angles = []
    for u in (100.0, 400.0):
        v13 = orb.evaluate(u) / u**2
        eps3 = u**-3.0
        w = np.array([0.0, v13, 0.0, 0.0, eps3])
        w /= np.linalg.norm(w)
        angles.append(math.acos(min(1.0, abs(w[1]))))
    assert angles[1] < 1.2e-3
    assert angles[1] < angles[0]


# -- q0 and the K2 entry ------------------------------------------------------------

def test_q0_sits_on_the_entry_section():
    delta = 0.05
    p0 = q0(delta, k0=3)
    assert p0.chart == "K2"
    assert p0.v12 == pytest.approx(delta ** (-2.0 / 3.0), rel=1e-12)
    assert np.all(p0.uk == 0.0) and np.all(p0.vk == 0.0) and p0.r2 == 0.0
    # the crossing happens near u12 = -2^(1/4) delta^(-1/3)
    assert p0.u12 == pytest.approx(-QUARTER * delta ** (-1.0 / 3.0), rel=0.05)
    orb = orbit()
    assert orb.evaluate(p0.u12) == pytest.approx(p0.v12, rel=1e-10)


def test_q0_maps_to_eps1_equals_delta():
    # kappa21 sends the entry section {v12 = delta^(-2/3)} to {eps1 = delta}
    delta = 0.02
    st = kappa21(q0(delta, k0=2))
    assert st.eps1 == pytest.approx(delta, rel=1e-12)
    assert st.r1 == 0.0


def test_q0_guards():
    with pytest.raises(DomainError):
        q0(-0.1)
    with pytest.raises(DomainError):
        q0(0.05, k0=0)


# -- single legs -------------------------------------------------------------------

def test_pi1_entry_validation():
    p = params_for(2, 1e-3)
    good = ChartState.k1(-QUARTER, 0.1, [0.0], [0.0], 1e-3)
    with pytest.raises(DomainError):
        pi1(ChartState.k2(0.0, 1.0, [0.0], [0.0], 0.0), 0.05, p)
    with pytest.raises(ShapeError):
        pi1(ChartState.k1(-QUARTER, 0.1, [0.0, 0.0], [0.0, 0.0], 1e-3), 0.05, p)
    with pytest.raises(TransitionError):
        pi1(ChartState.k1(-QUARTER, 0.1, [0.0], [0.0], 0.2), 0.05, p)  # eps1 > delta
    with pytest.raises(TransitionError):
        pi1(ChartState.k1(-0.5, 0.1, [0.0], [0.0], 1e-3), 0.05, p)  # u11 off the slab
    with pytest.raises(TransitionError):
        pi1(ChartState.k1(-QUARTER, 0.1, [0.2], [0.0], 1e-3), 0.05, p)
    leg = pi1(good, 0.05, p)
    assert leg.chart == "K1"


def test_pi1_planar_duration_matches_closed_form():
    from specfold.charts import k1_closed_forms

    p = params_for(2, 1e-3)
    eps1_0, delta = 2e-3, 0.05
    entry = ChartState.k1(-QUARTER, 0.2, [0.0], [0.0], eps1_0)
    leg = pi1(entry, delta, p)
    cf = k1_closed_forms(eps1_0, 0.2, delta)
    assert leg.time == pytest.approx(cf.T1, rel=1e-8)
    assert leg.exit.eps1 == pytest.approx(delta, rel=1e-9)
    assert leg.exit.r1 == pytest.approx(cf.r1(cf.T1), rel=1e-9)
    assert leg.section_residual < 1e-9 * delta


def test_pi2_entry_validation():
    delta = 0.05
    p = params_for(3, 1e-3)
    anchor = q0(delta, 3)
    with pytest.raises(TransitionError):
        pi2(ChartState.k2(anchor.u12, 2.0, anchor.uk, anchor.vk, 0.0), delta, p)
    off = ChartState.k2(anchor.u12 + 0.5, anchor.v12, anchor.uk, anchor.vk, 0.0)
    with pytest.raises(TransitionError, match="u12"):
        pi2(off, delta, p)
    with pytest.raises(TransitionError, match="r2"):
        pi2(
            ChartState.k2(anchor.u12, anchor.v12, anchor.uk, anchor.vk, 0.5),
            delta,
            p,
        )


def test_pi2_exit_level_tracks_the_orbit_asymptote():
    # residual against -OMEGA0 + 2*delta^(1/3) shrinks ~linearly in delta;
    # against the 2^(1/2) coefficient it is pinned at (2 - 2^(1/2))*delta^(1/3)
    resid, resid_legacy = [], []
    deltas = (1e-2, 1e-3)
    for delta in deltas:
        p = params_for(2, 1e-3)
        leg = pi2(q0(delta, 2), delta, p)
        assert leg.exit.u12 == pytest.approx(delta ** (-1.0 / 3.0), rel=1e-9)
        v_exit = leg.exit.v12
        resid.append(abs(v_exit - (-OMEGA0 + 2.0 * np.cbrt(delta))))
        resid_legacy.append(abs(v_exit - (-OMEGA0 + SQRT2 * np.cbrt(delta))))
    slope = np.log(resid[0] / resid[1]) / np.log(deltas[0] / deltas[1])
    assert slope > 0.9
    np.testing.assert_allclose(
        resid_legacy, (2.0 - SQRT2) * np.cbrt(deltas), rtol=0.3
    )
    assert all(rl > 3 * r for rl, r in zip(resid_legacy, resid))


def test_pi3_entry_validation_and_exit():
    p = params_for(2, 1e-3)
    rho = 0.1
    with pytest.raises(TransitionError):
        pi3(ChartState.k3(0.2, 0.0, [0.0], [0.0], 0.05), rho, p)  # r3 >= rho
    with pytest.raises(TransitionError):
        pi3(ChartState.k3(0.01, 0.4, [0.0], [0.0], 0.05), rho, p)  # v13 too large
    leg = pi3(ChartState.k3(0.01, 0.0, [0.0], [0.0], 0.05), rho, p)
    assert leg.exit.r3 == pytest.approx(rho, rel=1e-9)
    # planar closed form: T3 = log(rho/r3_in), eps3_exit = delta*(r3_in/rho)^3
    assert leg.time == pytest.approx(math.log(10.0), rel=1e-8)
    assert leg.exit.eps3 == pytest.approx(0.05 * 1e-3, rel=1e-8)


# -- composed transition --------------------------------------------------------------

GEOM = TransitionGeometry(rho=0.3, delta=0.05)
CONS = EntryConstants(q0_radius=0.15, beta=0.5)


@functools.lru_cache(maxsize=None)
def shipped_report(eps=1e-3):
    p = params_for(3, eps)
    u, v = canonical_entry(p, GEOM)
    return full_transition(u, v, p, geometry=GEOM, constants=CONS)


def test_full_transition_exits_on_the_fold_section():
    rep = shipped_report()
    u_out, v_out, eps_out = rep.exit
    assert u_out[0] == pytest.approx(GEOM.rho, rel=1e-9)
    assert eps_out == pytest.approx(1e-3, rel=1e-9)
    assert rep.chart_path == ("K1", "K2", "K3")
    assert rep.time == pytest.approx(sum(rep.times.values()), rel=1e-12)
    assert all(leg.time > 0 for leg in rep.legs)


def test_full_transition_preserves_eps():
    rep = shipped_report()
    assert rep.eps_max_drift < 1e-9
    # chart changes and lifts are exact algebra: adjacent trace entries agree
    # to machine precision at every hand-off
    vals = dict(rep.eps_trace)
    for left, right in (
        ("entry", "lift K1"),
        ("pi1 exit", "kappa12"),
        ("pi2 exit", "kappa23"),
        ("pi3 exit", "blowdown"),
    ):
        assert vals[left] == pytest.approx(vals[right], rel=1e-12)


def test_full_transition_bounds_all_pass():
    rep = shipped_report()
    names = {b.name for b in rep.bounds}
    assert {"K1.u11_exit", "K1.vk_exit", "K2.v12_exit", "K3.v1_exit",
            "theorem.v1_out"} <= names
    failing = [b.name for b in rep.bounds if not b.passed]
    assert failing == []


def test_full_transition_exit_level_scales_with_eps():
    rep = shipped_report()
    v1_out = abs(rep.exit[1][0])
    level = OMEGA0 * 1e-3 ** (2.0 / 3.0)
    assert 0.5 * level < v1_out < 1.2 * level


def test_full_transition_stage_labels_in_errors():
    p = params_for(3, 1e-3)
    u, v = canonical_entry(p, GEOM, du1=0.5)  # far outside the K1 entry slab
    with pytest.raises(TransitionError, match="stage pi1"):
        full_transition(u, v, p, geometry=GEOM, constants=CONS)
    u, v = canonical_entry(p, GEOM)
    v[0] *= 2.0  # no longer on the section v1 = rho^2
    with pytest.raises(TransitionError, match="must sit on v1"):
        full_transition(u, v, p, geometry=GEOM, constants=CONS)


def test_full_transition_needs_positive_eps():
    p = ModelParams(k0=3, eps=0.0, a=0.5, A=0.5)
    u, v = canonical_entry(params_for(3, 1e-3), GEOM)
    with pytest.raises(TransitionError):
        full_transition(u, v, p, geometry=GEOM, constants=CONS)


def test_chart_overlap_coherence():
    # push a mid-flight K1 state through kappa12, flow it in K2 to the entry
    # section, and compare with the direct K1 exit image
    eps = 1e-3
    p = params_for(3, eps)
    u, v = canonical_entry(p, GEOM)
    from specfold.charts import lift_to_chart

    s1 = lift_to_chart(u, v, eps, "K1")
    leg = pi1(s1, GEOM.delta, p)
    target = kappa12(leg.exit)

    y_mid = leg.trajectory.state_at(0.6 * leg.time)
    mid = ChartState.k1(y_mid[0], y_mid[1], y_mid[2:4], y_mid[4:6], y_mid[-1] ** 3)
    start = kappa12(mid)
    event = EventSpec(
        kind="coordinate_equals",
        index=1,
        value=GEOM.delta ** (-2.0 / 3.0),
        direction="decreasing",
        terminal=True,
        name="entry_section",
    )
    cfg = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)
    traj = integrate(
        lambda y: rhs_K2(y, p),
        start.vector(),
        (0.0, (start.v12 - target.v12) / SQRT2 + 5.0),
        cfg,
        [event],
    )
    hits = [rec for rec in traj.events if rec[2] == "entry_section"]
    assert hits
    np.testing.assert_allclose(hits[-1][1], target.vec, rtol=1e-8, atol=1e-8)


def test_transition_scaling_mini_ladder():
    out = transition_scaling(
        (1e-4, 3e-4, 1e-3), k0=3, a=0.5, geometry=GEOM, constants=CONS
    )
    assert np.all(np.diff(out["v1_out"]) > 0)  # exit level grows with eps
    assert 0.5 < out["slope"] < 0.8
    assert len(out["reports"]) == 3


def test_transition_contraction_mini_ladder():
    out = transition_contraction(
        (3e-4, 1e-3), du1=1e-3, k0=3, a=0.5, geometry=GEOM, constants=CONS
    )
    assert np.all(np.diff(out["eps"]) < 0)  # descending eps
    spreads = out["spreads"]
    handoff = out["k1_exit_spreads"]
    assert np.all(np.diff(spreads) <= 0)
    assert np.all(np.diff(handoff) <= 0)
    # at the largest eps the K1 hand-off gap is still resolvable and far below
    # the entry offset; by the next rung it has collapsed to the floor
    assert out["floor_k1"] < handoff[0] < 0.1 * out["entry_offset"]
    assert handoff[-1] == pytest.approx(out["floor_k1"])
    assert np.all(spreads <= out["entry_offset"])

"""Integration driver: tolerances, events, blowup detection, trajectory dumps."""

import math
import warnings

import numpy as np
import pytest

from specfold.errors import (
    ConfigurationError,
    DomainError,
    EstimationError,
    IntegrationError,
)
from specfold.integrate import (
    EventSpec,
    IntegratorConfig,
    blowup_time_estimate,
    dump_trajectory_csv,
    integrate,
    locate_section_hit,
)
from specfold.vectorfields import (
    GalerkinState,
    ModelParams,
    rhs_fold_normal,
    rhs_rescaled,
)

TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


def test_linear_decay_matches_exponential():
    # v_2 component of the two-mode system in isolation: v' = -eps pi^2 v
    eps = 0.1
    traj = integrate(lambda y: -eps * math.pi**2 * y, [1.0], (0.0, 10.0), TIGHT)
    assert traj.status == "completed"
    assert abs(traj.final_state[0] - math.exp(-math.pi**2)) < 1e-8


def test_tolerance_halving_reduces_error_at_least_twofold():
    eps = 0.1
    exact = math.exp(-math.pi**2)
    cfg = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-9)
    field = lambda y: -eps * math.pi**2 * y
    e_coarse = abs(integrate(field, [1.0], (0.0, 10.0), cfg).final_state[0] - exact)
    e_fine = abs(
        integrate(field, [1.0], (0.0, 10.0), cfg.halved()).final_state[0] - exact
    )
    assert e_coarse >= 2.0 * e_fine


def test_semi_implicit_mode_agrees_on_linear_decay():
    eps = 0.1
    cfg = IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, stiff_mode="semi_implicit")
    traj = integrate(lambda y: -eps * math.pi**2 * y, [1.0], (0.0, 10.0), cfg)
    assert traj.status == "completed"
    assert abs(traj.final_state[0] - math.exp(-math.pi**2)) < 1e-9


def test_fold_normal_form_blowup_detected_near_half_pi():
    traj = integrate(
        lambda x: rhs_fold_normal(x, 1.0), [0.0], (0.0, 50.0), TIGHT
    )
    assert traj.status == "blowup_detected"
    assert abs(traj.t_end - math.pi / 2) < 1e-3
    assert traj.events[-1][2] == "blowup_guard"


def test_equilibrium_on_critical_set_stays_put():
    # u = (-1, 0, 0, 0) with v on the critical graph is a layer equilibrium
    p = ModelParams(k0=4, eps=0.0, a=0.5)
    u = np.array([-1.0, 0.0, 0.0, 0.0])
    v = np.array([1.0 / math.sqrt(2.0), 0.0, 0.0, 0.0])
    s0 = np.concatenate([u, v])
    cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10)
    traj = integrate(
        lambda y: rhs_rescaled(GalerkinState(y[:4], y[4:]), p), s0, (0.0, 5.0), cfg
    )
    assert traj.status == "completed"
    assert np.max(np.abs(traj.states - s0)) < 10 * cfg.abs_tol


def test_section_hit_on_quadratic_growth_field():
    # y' = (3/sqrt2) y^2 from 0.01 reaches 0.1 at t = 30 sqrt2
    c = 3.0 / math.sqrt(2.0)
    spec = EventSpec(
        kind="coordinate_equals", index=0, value=0.1, direction="increasing",
        terminal=True, name="delta_exit",
    )
    traj = integrate(lambda y: c * y * y, [0.01], (0.0, 100.0), TIGHT, events=[spec])
    assert traj.status == "event_terminated"
    hit = locate_section_hit(traj, spec)
    assert hit is not None
    t_hit, y_hit = hit
    assert abs(t_hit - 30.0 * math.sqrt(2.0)) < 1e-6
    assert abs(y_hit[0] - 0.1) < 1e-10


def test_section_hit_on_exponential_growth_field():
    # y' = y from 0.01 reaches 0.1 at t = log 10
    spec = EventSpec(kind="coordinate_equals", index=0, value=0.1, terminal=True)
    traj = integrate(lambda y: y, [0.01], (0.0, 10.0), TIGHT, events=[spec])
    hit = locate_section_hit(traj, spec)
    assert abs(hit[0] - math.log(10.0)) < 1e-8


def test_section_hit_absent_when_value_never_attained():
    spec = EventSpec(kind="coordinate_equals", index=0, value=5.0)
    traj = integrate(lambda y: -y, [1.0], (0.0, 4.0), TIGHT)
    assert locate_section_hit(traj, spec) is None


def test_event_idempotence_and_record_consistency():
    spec = EventSpec(
        kind="coordinate_equals", index=0, value=0.1, direction="increasing",
        terminal=True, name="delta_exit",
    )
    traj = integrate(
        lambda y: (3.0 / math.sqrt(2.0)) * y * y, [0.01], (0.0, 100.0), TIGHT,
        events=[spec],
    )
    t_a = locate_section_hit(traj, spec)[0]
    t_b = locate_section_hit(traj, spec)[0]
    assert abs(t_a - t_b) <= 1e-12
    recorded = [t for t, _, eid in traj.events if eid == "delta_exit"]
    assert len(recorded) == 1
    assert abs(recorded[0] - t_a) < 1e-9


def test_unregistered_section_located_post_hoc():
    spec = EventSpec(kind="coordinate_equals", index=0, value=0.05)
    traj = integrate(lambda y: y, [0.01], (0.0, 3.0), TIGHT)
    t_hit, y_hit = locate_section_hit(traj, spec)
    assert abs(t_hit - math.log(5.0)) < 1e-8
    assert abs(y_hit[0] - 0.05) < 1e-10


def test_nonterminal_sign_change_records_every_crossing():
    # harmonic oscillator from (1, 0): x = cos t, zeros at odd multiples of pi/2
    spec = EventSpec(kind="sign_change", index=0, name="x_axis")
    field = lambda s: np.array([s[1], -s[0]])
    traj = integrate(field, [1.0, 0.0], (0.0, 10.0), TIGHT, events=[spec])
    assert traj.status == "completed"
    hits = [t for t, _, eid in traj.events if eid == "x_axis"]
    expected = [math.pi / 2, 3 * math.pi / 2, 5 * math.pi / 2]
    assert len(hits) == len(expected)
    for got, want in zip(hits, expected):
        assert abs(got - want) < 1e-9


def test_directed_events_filter_crossings():
    field = lambda s: np.array([s[1], -s[0]])
    down = EventSpec(kind="sign_change", index=0, direction="decreasing", name="down")
    up = EventSpec(kind="sign_change", index=0, direction="increasing", name="up")
    traj = integrate(field, [1.0, 0.0], (0.0, 10.0), TIGHT, events=[down, up])
    downs = [t for t, _, eid in traj.events if eid == "down"]
    ups = [t for t, _, eid in traj.events if eid == "up"]
    assert len(downs) == 2 and len(ups) == 1
    assert abs(downs[0] - math.pi / 2) < 1e-9
    assert abs(ups[0] - 3 * math.pi / 2) < 1e-9


def test_trajectory_invariants_hold():
    spec = EventSpec(kind="sign_change", index=0, name="x_axis")
    field = lambda s: np.array([s[1], -s[0]])
    traj = integrate(field, [1.0, 0.0], (0.0, 10.0), TIGHT, events=[spec])
    assert np.all(np.diff(traj.times) > 0)
    for t, _, _ in traj.events:
        assert traj.times[0] <= t <= traj.times[-1]
        i = np.searchsorted(traj.times, t)
        assert 0 < i <= len(traj.times)


@pytest.mark.parametrize(
    "mu,xi",
    [(1.0, 0.0), (4.0, 0.0), (1.0, 1.0)],
)
def test_blowup_time_estimate_matches_closed_form(mu, xi):
    traj = integrate(lambda x: rhs_fold_normal(x, mu), [xi], (0.0, 50.0), TIGHT)
    t_est = blowup_time_estimate(traj)
    t_exact = (math.pi / 2 - math.atan(xi / math.sqrt(mu))) / math.sqrt(mu)
    assert abs(t_est - t_exact) < 0.01 * t_exact


def test_blowup_estimate_requires_blowup_status():
    traj = integrate(lambda y: -y, [1.0], (0.0, 1.0), TIGHT)
    with pytest.raises(EstimationError):
        blowup_time_estimate(traj)


def test_step_underflow_status():
    # integrable-in-state but singular-in-clock field forces vanishing steps
    def field(s):
        return np.array([1.0 / (1.0 - s[1]), 1.0])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = integrate(
            field, [0.0, 0.0], (0.0, 2.0), IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10)
        )
    assert traj.status == "step_underflow"
    assert traj.t_end < 2.0


def test_nonfinite_derivative_raises_with_last_state():
    def field(y):
        return np.array([1.0 if y[0] < 1.0 else float("nan")])

    with pytest.raises(IntegrationError) as err:
        integrate(field, [0.0], (0.0, 5.0), IntegratorConfig())
    assert "last valid state" in str(err.value)


def test_input_validation():
    with pytest.raises(DomainError):
        integrate(lambda y: -y, [1.0], (1.0, 0.0), TIGHT)
    with pytest.raises(DomainError):
        integrate(lambda y: -y, [float("inf")], (0.0, 1.0), TIGHT)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(rel_tol=0.0)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(min_step=1.0, max_step=0.5)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(stiff_mode="implicit")
    with pytest.raises(ConfigurationError):
        EventSpec(kind="norm_below")
    with pytest.raises(ConfigurationError):
        EventSpec(kind="sign_change", direction="upward")
    bad = EventSpec(kind="sign_change", index=7)
    with pytest.raises(ConfigurationError):
        integrate(lambda y: -y, [1.0], (0.0, 1.0), TIGHT, events=[bad])


def test_trajectory_csv_round_trip(tmp_path):
    spec = EventSpec(
        kind="coordinate_equals", index=0, value=0.1, direction="increasing",
        terminal=True, name="delta_exit",
    )
    traj = integrate(
        lambda y: (3.0 / math.sqrt(2.0)) * y * y, [0.01], (0.0, 100.0), TIGHT,
        events=[spec],
    )
    path = tmp_path / "traj.csv"
    dump_trajectory_csv(traj, path, names=["eps1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "t,eps1"
    event_lines = [ln for ln in lines if ln.startswith("# event,")]
    assert len(event_lines) == 1
    assert event_lines[0].startswith("# event,delta_exit,")
    data = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    assert data.shape == (len(traj.times), 2)
    # 17 significant digits round-trip doubles exactly
    assert np.array_equal(data[:, 0], traj.times)
    assert np.array_equal(data[:, 1], traj.states[:, 0])


def test_csv_default_names_and_validation(tmp_path):
    traj = integrate(
        lambda s: np.array([s[1], -s[0]]), [1.0, 0.0], (0.0, 1.0), TIGHT
    )
    path = tmp_path / "osc.csv"
    dump_trajectory_csv(traj, path)
    assert path.read_text().splitlines()[0] == "t,u1,v1"
    with pytest.raises(ConfigurationError):
        dump_trajectory_csv(traj, tmp_path / "bad.csv", names=["only_one"])

"""Config-driven batch driver.

Each subcommand reads a TOML run config, executes one experiment against the
library, and writes CSV/JSON outputs plus a run manifest (config echo, golden
constants, SHA-256 of every emitted file).  Reruns with the same config and
seed reproduce all numeric outputs byte for byte.

Exit status: 0 on success, 2 on validation failure (field-level messages),
1 on runtime failure (stage label).
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib  # python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import __version__
from .charts import (
    OMEGA0,
    ChartState,
    EntryConstants,
    SectionSpec3,
    TransitionGeometry,
    blowdown,
    canonical_entry,
    full_transition,
    k2_stability_window,
    omega0_longrun,
    omega0_richardson,
    rhs_K1,
    rhs_K2,
    rhs_K3,
    riccati_gamma2,
    transition_contraction,
)
from .errors import SpecfoldError
from .foldbound import BlowupConfig, verify_blowup_before_sign_change
from .integrate import EventSpec, IntegratorConfig, dump_trajectory_csv, integrate
from .manifold import classify, fold_boundary, galerkin_convergence_check, layer_jacobian
from .spectral import Basis, coupling_table
from .vectorfields import (
    HigherOrderSpec,
    ModelParams,
    rhs_original,
    rhs_prepared,
    rhs_rescaled,
    rhs_slowtime,
)

OMEGA0_TOLERANCE = 1e-6  # agreement required between the two estimators
OUT_ENV = "SPECFOLD_OUT"
EXPERIMENTS = (
    "coeffs",
    "simulate",
    "manifold",
    "chart",
    "riccati",
    "transition",
    "blowup-check",
    "sweep",
)

_FIELDS = {
    "original": rhs_original,
    "rescaled": rhs_rescaled,
    "slowtime": rhs_slowtime,
    "prepared": rhs_prepared,
}
_CHART_RHS = {"K1": rhs_K1, "K2": rhs_K2, "K3": rhs_K3}


def _fmt(x) -> str:
    """Shortest round-trippable decimal form."""
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row) + "\n")


# ---------------------------------------------------------------------------
# config parsing + validation
# ---------------------------------------------------------------------------

class ValidationFailure(Exception):
    def __init__(self, violations):
        super().__init__(f"{len(violations)} validation violation(s)")
        self.violations = violations


def _violation(rule, field_name, value, message) -> dict:
    return {"rule": rule, "field": field_name, "value": _jsonable(value), "message": message}


@dataclass
class RunConfig:
    experiment: str
    seed: int
    out: str
    model: dict
    integrator_block: dict
    block: dict
    raw: dict
    config_dir: str
    workers: int = 1

    def integrator(self, default=None) -> IntegratorConfig:
        if not self.integrator_block:
            return default
        return IntegratorConfig(**self.integrator_block)

    def model_params(self, need_eps: bool = True) -> ModelParams:
        kwargs = dict(self.model)
        hot = kwargs.pop("hot", None)
        if hot is not None:
            terms = tuple(tuple(t) if isinstance(t, list) else t for t in hot.get("terms", ()))
            kwargs["hot"] = HigherOrderSpec(mode=hot.get("mode", "zero"), terms=terms)
        kwargs.setdefault("a", 0.5)
        if not need_eps:
            kwargs.setdefault("eps", 0.0)
        p = ModelParams(**kwargs)
        if p.a is not None and p.A is None and p.eps > 0:
            p = ModelParams(k0=p.k0, eps=p.eps, a=p.a, A=p.a * p.eps ** (1.0 / 6.0), hot=p.hot)
        return p


def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ValidationFailure([_violation("config", "config", path, f"unreadable: {exc}")])
    except tomllib.TOMLDecodeError as exc:
        raise ValidationFailure([_violation("config", "config", path, f"not valid TOML: {exc}")])


def _resolve_out(args_out, raw, experiment):
    if args_out:
        return args_out
    if raw.get("out"):
        return str(raw["out"])
    root = os.environ.get(OUT_ENV, "specfold_out")
    return os.path.join(root, experiment)


def validate_config(raw, experiment, config_dir=".") -> tuple:
    """Structural and paper-side validation; returns (RunConfig, violations)."""
    violations = []

    def bad(rule, field_name, value, message):
        violations.append(_violation(rule, field_name, value, message))

    if not isinstance(raw, dict):
        raise ValidationFailure([_violation("config", "config", None, "top level must be a table")])
    cfg_exp = raw.get("experiment")
    if cfg_exp is not None and cfg_exp != experiment:
        bad("config", "experiment", cfg_exp, f"config names experiment {cfg_exp!r} but {experiment!r} was requested")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        bad("config", "seed", seed, "seed must be a nonnegative integer")
        seed = 0

    model = raw.get("model", {})
    if not isinstance(model, dict):
        bad("config", "model", model, "model must be a table")
        model = {}
    integrator_block = raw.get("integrator", {})
    if not isinstance(integrator_block, dict):
        bad("config", "integrator", integrator_block, "integrator must be a table")
        integrator_block = {}
    block = raw.get(experiment, {})
    if not isinstance(block, dict):
        bad("config", experiment, block, "experiment block must be a table")
        block = {}

    rc = RunConfig(
        experiment=experiment,
        seed=seed,
        out="",
        model=model,
        integrator_block=integrator_block,
        block=block,
        raw=raw,
        config_dir=config_dir,
    )

    if integrator_block:
        try:
            rc.integrator()
        except (TypeError, SpecfoldError) as exc:
            bad("config", "integrator", integrator_block, str(exc))

    needs_model = experiment in ("coeffs", "simulate", "manifold", "transition", "sweep")
    if needs_model:
        if experiment in ("simulate", "transition") and "eps" not in model:
            bad("config", "model.eps", None, "model.eps is required")
        if "k0" not in model and experiment != "sweep":
            bad("config", "model.k0", None, "model.k0 is required")
        try:
            rc.model_params(need_eps=experiment in ("simulate", "transition"))
        except (TypeError, SpecfoldError) as exc:
            bad("config", "model", model, str(exc))

    if experiment == "simulate":
        _validate_simulate(rc, bad)
    elif experiment == "chart":
        _validate_chart(rc, bad)
    elif experiment == "blowup-check":
        _validate_blowup(rc, bad)
    elif experiment in ("transition", "sweep"):
        _validate_transition_like(rc, bad)

    return rc, violations


def _validate_simulate(rc, bad):
    block = rc.block
    u, v = block.get("u"), block.get("v")
    if not isinstance(u, list) or not isinstance(v, list) or len(u) != len(v) or not u:
        bad("config", "simulate.u/v", (u, v), "u and v must be equal-length nonempty arrays")
        return
    if rc.model.get("k0") is not None and len(u) != rc.model["k0"]:
        bad("config", "simulate.u", u, f"initial data has {len(u)} modes but model.k0 = {rc.model['k0']}")
    t_final = block.get("t_final")
    if not isinstance(t_final, (int, float)) or not t_final > 0:
        bad("config", "simulate.t_final", t_final, "t_final must be positive")
    if block.get("field", "original") not in _FIELDS:
        bad("config", "simulate.field", block.get("field"), f"field must be one of {sorted(_FIELDS)}")
    for i, ev in enumerate(block.get("events", [])):
        try:
            EventSpec(**ev)
        except (TypeError, SpecfoldError) as exc:
            bad("config", f"simulate.events[{i}]", ev, str(exc))
    # paper-side entry rule: mode amplitudes |v_k(0)| <= C * eps^(4/3), k >= 2
    eps = rc.model.get("eps")
    if eps:
        c_vk = block.get("C_in_vk", 1.0)
        if not 0.0 < c_vk <= 1.0:
            bad("config", "simulate.C_in_vk", c_vk, "entry constant must lie in (0, 1]")
        else:
            cap = c_vk * eps ** (4.0 / 3.0)
            for k, vk in enumerate(v[1:], start=2):
                if abs(vk) > cap:
                    bad(
                        "entry_scaling_eps43",
                        f"simulate.v[{k - 1}]",
                        vk,
                        f"|v_{k}(0)| = {abs(vk):.6g} exceeds C*eps^(4/3) = {cap:.6g}",
                    )


def _validate_chart(rc, bad):
    block = rc.block
    chart = str(block.get("chart", "")).upper()
    if chart not in _CHART_RHS:
        bad("config", "chart.chart", block.get("chart"), "chart must be one of k1, k2, k3")
        return
    entry = block.get("entry")
    if not entry:
        bad("config", "chart.entry", entry, "entry file is required")
    else:
        path = os.path.join(rc.config_dir, entry) if not os.path.isabs(entry) else entry
        if not os.path.exists(path):
            bad("file_exists", "chart.entry", entry, f"entry file not found: {path}")
        else:
            try:
                _load_chart_entry(chart, path)
            except (SpecfoldError, ValueError, OSError) as exc:
                bad("config", "chart.entry", entry, str(exc))
    section = block.get("exit_section")
    if not section:
        bad("config", "chart.exit_section", section, "exit_section is required (name=value)")
    else:
        try:
            name, value = _parse_section(section)
            SectionSpec3(chart, name, value)
        except (SpecfoldError, ValueError) as exc:
            bad("config", "chart.exit_section", section, str(exc))
    t_max = block.get("t_max", 100.0)
    if not isinstance(t_max, (int, float)) or not t_max > 0:
        bad("config", "chart.t_max", t_max, "t_max must be positive")


def _validate_blowup(rc, bad):
    cases = rc.block.get("cases")
    if not isinstance(cases, list) or not cases:
        bad("config", "blowup-check.cases", cases, "a nonempty list of cases is required")
        return
    for i, case in enumerate(cases):
        try:
            _blowup_config(case)
        except (TypeError, KeyError, SpecfoldError) as exc:
            bad("config", f"blowup-check.cases[{i}]", case, str(exc))


def _validate_transition_like(rc, bad):
    block = rc.block
    try:
        geometry = TransitionGeometry(**block.get("geometry", {}))
    except (TypeError, SpecfoldError) as exc:
        bad("config", f"{rc.experiment}.geometry", block.get("geometry"), str(exc))
        return
    try:
        EntryConstants(**block.get("constants", {}))
    except (TypeError, SpecfoldError) as exc:
        bad("config", f"{rc.experiment}.constants", block.get("constants"), str(exc))

    if rc.experiment == "sweep":
        eps_values = block.get("eps")
        if not isinstance(eps_values, list) or not eps_values or not all(
            isinstance(e, (int, float)) and e > 0 for e in eps_values
        ):
            bad("config", "sweep.eps", eps_values, "eps must be a nonempty list of positive numbers")
            return
        entries = block.get("entries")
        if entries is not None and (
            not isinstance(entries, dict)
            or not isinstance(entries.get("count"), int)
            or entries["count"] < 1
            or not isinstance(entries.get("jitter"), (int, float))
            or entries["jitter"] <= 0
        ):
            bad("config", "sweep.entries", entries, "entries needs integer count >= 1 and jitter > 0")
    else:
        eps_values = [rc.model.get("eps")] if rc.model.get("eps") else []

    # quasi-static stability of the mode-free plane along the K2 passage
    a_param = rc.model.get("a", 0.5)
    eps0 = block.get("eps0", 0.1)
    window = k2_stability_window(geometry.delta, eps0, geometry.rho, a_param)
    if not window.ok:
        bad(
            "k2_stability_window",
            f"{rc.experiment}.geometry.delta",
            geometry.delta,
            f"delta outside ({window.lower:.6g}, {window.upper:.6g}) for eps0 = {eps0:.6g}",
        )
    for eps in eps_values:
        if eps > eps0:
            bad("k2_stability_window", "model.eps", eps, f"eps exceeds the window constant eps0 = {eps0:.6g}")
        if not eps / geometry.rho**3 < geometry.delta:
            bad(
                "k1_entry_feasible",
                "model.eps",
                eps,
                f"eps/rho^3 = {eps / geometry.rho ** 3:.6g} must stay below delta = {geometry.delta:.6g}",
            )


def _parse_section(spec: str) -> tuple:
    name, _, value = str(spec).partition("=")
    if not _:
        raise ValueError(f"exit section must be name=value, got {spec!r}")
    return name.strip(), float(value)


def _load_chart_entry(chart: str, path: str) -> ChartState:
    with open(path, "rb") as fh:
        data = tomllib.load(fh) if path.endswith(".toml") else json.load(fh)
    file_chart = str(data.get("chart", chart)).upper()
    if file_chart != chart:
        raise ValueError(f"entry file is for chart {file_chart}, run requested {chart}")
    if "vector" in data:
        return ChartState.from_vector(chart, data["vector"])
    heads = {"K1": ("u11", "r1", "eps1"), "K2": ("u12", "v12", "r2"), "K3": ("r3", "v13", "eps3")}[chart]
    h1, h2, tail = (float(data[name]) for name in heads)
    uk, vk = data.get("uk", []), data.get("vk", [])
    builder = {"K1": ChartState.k1, "K2": ChartState.k2, "K3": ChartState.k3}[chart]
    return builder(h1, h2, uk, vk, tail)


def _blowup_config(case) -> BlowupConfig:
    if isinstance(case, dict):
        return BlowupConfig(**case)
    u1, u2, v1, v2, eps = (float(x) for x in case)
    return BlowupConfig(u1, u2, v1, v2, eps)


def _chart_names(chart: str, k0: int) -> list:
    heads = {"K1": ("u11", "r1"), "K2": ("u12", "v12"), "K3": ("r3", "v13")}[chart]
    tail = {"K1": "eps1", "K2": "r2", "K3": "eps3"}[chart]
    modes = [f"uk{k}" for k in range(2, k0 + 1)] + [f"vk{k}" for k in range(2, k0 + 1)]
    return [*heads, *modes, tail]


# ---------------------------------------------------------------------------
# experiment runners (each returns the list of emitted file names)
# ---------------------------------------------------------------------------

def _run_coeffs(rc, outdir) -> list:
    table = coupling_table(rc.model_params(need_eps=False).k0)
    rows = [(k, i, j, table.eta[(k, i, j)]) for (k, i, j) in sorted(table.eta)]
    _write_csv(
        os.path.join(outdir, "coeffs.csv"),
        ["k", "i", "j", "eta"],
        [(str(k), str(i), str(j), eta) for k, i, j, eta in rows],
    )
    return ["coeffs.csv"]


def _run_simulate(rc, outdir) -> list:
    p = rc.model_params()
    block = rc.block
    fieldfn = _FIELDS[block.get("field", "original")]
    y0 = np.concatenate([block["u"], block["v"]])
    events = [EventSpec(**ev) for ev in block.get("events", [])]
    cfg = rc.integrator(IntegratorConfig())
    traj = integrate(lambda y: fieldfn(y, p), y0, (0.0, float(block["t_final"])), cfg, events)
    dump_trajectory_csv(traj, os.path.join(outdir, "trajectory.csv"))
    _write_json(
        os.path.join(outdir, "summary.json"),
        {
            "field": block.get("field", "original"),
            "status": traj.status,
            "t_end": traj.t_end,
            "steps": len(traj.times),
            "events": [{"t": t, "name": name} for t, _, name in traj.events],
            "final_state": traj.final_state,
        },
    )
    return ["trajectory.csv", "summary.json"]


def _run_manifold(rc, outdir) -> list:
    p = rc.model_params(need_eps=False)
    basis = Basis(p.k0, p.require_a())
    block = rc.block
    files = []

    grid = block.get("grid")
    if grid:
        (lo1, hi1, n1), (lo2, hi2, n2) = grid["u1"], grid["u2"]
        rows = []
        for u1 in np.linspace(lo1, hi1, int(n1)):
            for u2 in np.linspace(lo2, hi2, int(n2)):
                u = np.zeros(p.k0)
                u[0], u[1] = u1, u2
                lam = float(np.max(np.linalg.eigvals(layer_jacobian(u, basis)).real))
                rows.append((u1, u2, lam, classify(u, basis)))
        _write_csv(
            os.path.join(outdir, "classification.csv"),
            ["u1", "u2", "max_eigenvalue", "class"],
            rows,
        )
        files.append("classification.csv")

    boundary = block.get("boundary")
    if boundary:
        lo, hi, n = boundary["u2"]
        bracket = tuple(boundary.get("bracket", (-3.0, 3.0)))
        rows = []
        for u2 in np.linspace(lo, hi, int(n)):
            u_slice = [None] + [float(u2)] + [0.0] * (p.k0 - 2)
            rows.append((u2, fold_boundary(u_slice, basis, bracket)))
        _write_csv(os.path.join(outdir, "boundary.csv"), ["u2", "u1_fold"], rows)
        files.append("boundary.csv")

    conv = block.get("convergence")
    if conv:
        report = galerkin_convergence_check(
            conv["k0_list"],
            int(conv["k_ref"]),
            tuple(tuple(pair) for pair in conv["region"]),
            a=p.require_a(),
            grid_points=int(conv.get("grid_points", 3)),
        )
        _write_json(
            os.path.join(outdir, "convergence.json"),
            {
                "cases": [
                    {"k0": k, "distance": d}
                    for k, d in zip(report.k0_list, report.distances)
                ],
                "exponent_fit": report.exponent,
                "k_ref": report.k_ref,
                "reference_distance": report.reference_distance,
                "resolution": report.resolution,
            },
        )
        files.append("convergence.json")
    return files


def _run_chart(rc, outdir) -> list:
    block = rc.block
    chart = str(block["chart"]).upper()
    entry_path = block["entry"]
    if not os.path.isabs(entry_path):
        entry_path = os.path.join(rc.config_dir, entry_path)
    entry = _load_chart_entry(chart, entry_path)
    name, value = _parse_section(block["exit_section"])
    section = SectionSpec3(chart, name, value)

    eps = rc.model.get("eps") or blowdown(entry)[2]
    if not eps > 0:
        raise SpecfoldError("chart run needs eps > 0: give model.eps or an entry off the eps = 0 plane")
    a_param = rc.model.get("a", 0.5)
    params = ModelParams(k0=entry.k0, eps=float(eps), a=a_param, A=a_param * float(eps) ** (1.0 / 6.0))

    stiff = "semi_implicit" if chart == "K1" else "explicit"
    cfg = rc.integrator(IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12, stiff_mode=stiff))
    event = EventSpec(
        kind="coordinate_equals",
        index=section.index(entry.k0),
        value=section.value,
        direction=block.get("direction", "any"),
        terminal=True,
        name="exit_section",
    )
    rhs = _CHART_RHS[chart]
    traj = integrate(
        lambda y: rhs(y, params), entry.vector(), (0.0, float(block.get("t_max", 100.0))), cfg, [event]
    )
    dump_trajectory_csv(
        traj, os.path.join(outdir, "chart_trajectory.csv"), _chart_names(chart, entry.k0)
    )
    exit_state = ChartState.from_vector(chart, traj.final_state)
    u_out, v_out, eps_out = blowdown(exit_state)
    _write_json(
        os.path.join(outdir, "chart_summary.json"),
        {
            "chart": chart,
            "status": traj.status,
            "section": {"coordinate": section.coordinate, "value": section.value},
            "section_hit": any(name == "exit_section" for _, _, name in traj.events),
            "duration": traj.t_end,
            "entry": entry.vector(),
            "exit": exit_state.vector(),
            "exit_downstairs": {"u": u_out, "v": v_out, "eps": eps_out},
        },
    )
    return ["chart_trajectory.csv", "chart_summary.json"]


def _run_riccati(rc, outdir) -> list:
    block = rc.block
    u_start = float(block.get("u_start", -50.0))
    u_end = float(block.get("u_end", 50.0))
    orbit = riccati_gamma2(u_start=u_start, u_end=u_end)
    us = np.linspace(u_start, u_end, int(block.get("samples", 201)))
    _write_csv(
        os.path.join(outdir, "riccati_orbit.csv"),
        ["u", "s"],
        [(u, orbit.evaluate(float(u))) for u in us],
    )
    richardson = tuple(block.get("richardson", (20.0, 40.0, 80.0)))
    omega_r = omega0_richardson(richardson, u_start=u_start)
    payload = {
        "omega0_orbit": orbit.omega0,
        "omega0_richardson": omega_r,
        "golden": {"omega0": OMEGA0, "tolerance": OMEGA0_TOLERANCE},
        "richardson_vs_golden": abs(omega_r - OMEGA0),
        "left_exponent": orbit.left_exponent,
        "right_exponent": orbit.right_exponent,
        "u_span": orbit.u_span,
    }
    longrun = block.get("longrun")
    if longrun:
        omega_l = omega0_longrun(float(longrun), u_start=u_start)
        payload["omega0_longrun"] = omega_l
        payload["two_method_difference"] = abs(omega_r - omega_l)
    _write_json(os.path.join(outdir, "riccati.json"), payload)
    return ["riccati_orbit.csv", "riccati.json"]


def _transition_report_payload(rep) -> dict:
    (u_in, v_in, eps_in), (u_out, v_out, eps_out) = rep.entry, rep.exit
    return {
        "entry": {"u": u_in, "v": v_in, "eps": eps_in},
        "exit": {"u": u_out, "v": v_out, "eps": eps_out},
        "time": rep.time,
        "times": rep.times,
        "chart_path": rep.chart_path,
        "bounds": [
            {"name": b.name, "bound": b.bound, "observed": b.observed, "pass": b.passed}
            for b in rep.bounds
        ],
        "eps_max_drift": rep.eps_max_drift,
        "geometry": {"rho": rep.geometry.rho, "delta": rep.geometry.delta},
    }


def _run_transition(rc, outdir) -> list:
    block = rc.block
    geometry = TransitionGeometry(**block.get("geometry", {}))
    constants = EntryConstants(**block.get("constants", {}))
    params = rc.model_params()
    u, v = canonical_entry(params, geometry, du1=float(block.get("du1", 0.0)))
    rep = full_transition(
        u, v, params, geometry, rc.integrator(), constants, block.get("bound_constants")
    )
    _write_json(os.path.join(outdir, "transition.json"), _transition_report_payload(rep))
    return ["transition.json"]


def _sweep_case(payload: dict) -> dict:
    """One sweep case: the full transition at a single eps for each entry offset."""
    geometry = TransitionGeometry(**payload["geometry"])
    constants = EntryConstants(**payload["constants"])
    rows, failure = [], None
    for du1 in payload["offsets"]:
        params = ModelParams(
            k0=payload["k0"],
            eps=payload["eps"],
            a=payload["a"],
            A=payload["a"] * payload["eps"] ** (1.0 / 6.0),
        )
        try:
            u, v = canonical_entry(params, geometry, du1=du1)
            rep = full_transition(u, v, params, geometry, None, constants)
        except SpecfoldError as exc:
            failure = str(exc)
            break
        rows.append(
            {
                "du1": du1,
                "v1_out": abs(rep.exit[1][0]),
                "time": rep.time,
                "bounds_failed": sum(not b.passed for b in rep.bounds),
            }
        )
    return {"index": payload["index"], "eps": payload["eps"], "rows": rows, "error": failure}


def _run_sweep(rc, outdir) -> list:
    block = rc.block
    geometry = dict(block.get("geometry", {}))
    constants = dict(block.get("constants", {}))
    k0 = int(rc.model.get("k0", 3))
    a_param = float(rc.model.get("a", 0.5))
    eps_values = sorted(float(e) for e in block["eps"])

    entries = block.get("entries")
    payloads = []
    for i, eps in enumerate(eps_values):
        offsets = [0.0]
        if entries:
            rng = np.random.Generator(np.random.Philox(key=np.array([rc.seed, i], dtype=np.uint64)))
            offsets += [float(x) for x in entries["jitter"] * rng.uniform(-1.0, 1.0, entries["count"])]
        payloads.append(
            {
                "index": i,
                "eps": eps,
                "offsets": offsets,
                "k0": k0,
                "a": a_param,
                "geometry": geometry,
                "constants": constants,
            }
        )

    if rc.workers > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            results = list(pool.map(_sweep_case, payloads))
    else:
        results = [_sweep_case(p) for p in payloads]
    results.sort(key=lambda r: r["index"])

    files = []
    header = ["index", "eps", "entry_du1", "v1_out", "time", "bounds_failed"]
    merged = []
    for res in results:
        if res["error"]:
            raise SpecfoldError(f"sweep case {res['index']} (eps = {res['eps']:.6g}): {res['error']}")
        case_rows = [
            (str(res["index"]), res["eps"], row["du1"], row["v1_out"], row["time"], str(row["bounds_failed"]))
            for row in res["rows"]
        ]
        name = f"case_{res['index']:04d}.csv"
        _write_csv(os.path.join(outdir, name), header, case_rows)
        files.append(name)
        merged.extend(case_rows)
    _write_csv(os.path.join(outdir, "sweep_cases.csv"), header, merged)
    files.append("sweep_cases.csv")

    v1_out = np.array([res["rows"][0]["v1_out"] for res in results])
    slope = float(np.polyfit(np.log(eps_values), np.log(v1_out), 1)[0])
    payload = {
        "eps": eps_values,
        "v1_out": v1_out,
        "slope": slope,
        "k0": k0,
        "a": a_param,
        "geometry": geometry or {"rho": TransitionGeometry().rho, "delta": TransitionGeometry().delta},
    }
    du1 = block.get("du1")
    if du1:
        contraction = transition_contraction(
            eps_values,
            du1=float(du1),
            k0=k0,
            a=a_param,
            geometry=TransitionGeometry(**geometry),
            constants=EntryConstants(**constants),
        )
        payload["contraction"] = {
            "eps": contraction["eps"],
            "exit_spreads": contraction["spreads"],
            "k1_exit_spreads": contraction["k1_exit_spreads"],
            "floor_exit": contraction["floor_exit"],
            "floor_k1": contraction["floor_k1"],
            "entry_offset": contraction["entry_offset"],
        }
    _write_json(os.path.join(outdir, "sweep.json"), payload)
    files.append("sweep.json")
    return files


def _run_blowup_check(rc, outdir) -> list:
    cases = [_blowup_config(case) for case in rc.block["cases"]]
    icfg = rc.integrator()
    if rc.workers > 1:
        with ProcessPoolExecutor(max_workers=rc.workers) as pool:
            verdicts = list(pool.map(verify_blowup_before_sign_change, cases, [icfg] * len(cases)))
    else:
        verdicts = [verify_blowup_before_sign_change(c, icfg) for c in cases]

    rows = []
    for v in verdicts:
        c = v.config
        rows.append(
            (
                c.u1_0,
                c.u2_0,
                c.v1_0,
                c.v2_0,
                c.eps,
                math.nan if v.blowup_time is None else v.blowup_time,
                v.sign_change_deadline,
                str(v.before_sign_change).lower(),
            )
        )
    _write_csv(
        os.path.join(outdir, "verdicts.csv"),
        ["u1_0", "u2_0", "v1_0", "v2_0", "eps", "blowup_time", "deadline", "before_sign_change"],
        rows,
    )
    _write_json(
        os.path.join(outdir, "blowup_summary.json"),
        {
            "n_cases": len(verdicts),
            "n_blowup_before_sign_change": sum(v.before_sign_change for v in verdicts),
            "cases": [
                {
                    "config": {
                        "u1_0": v.config.u1_0,
                        "u2_0": v.config.u2_0,
                        "v1_0": v.config.v1_0,
                        "v2_0": v.config.v2_0,
                        "eps": v.config.eps,
                    },
                    "blowup_time": v.blowup_time,
                    "deadline": v.sign_change_deadline,
                    "before_sign_change": v.before_sign_change,
                    "status": v.status,
                    "sign_change_time": v.sign_change_time,
                    "u1_window_ok": v.u1_window_ok,
                    "u2_nonpositive": v.u2_nonpositive,
                    "v2_drift": v.v2_drift,
                    "symmetry_flipped": v.symmetry_flipped,
                }
                for v in verdicts
            ],
        },
    )
    return ["verdicts.csv", "blowup_summary.json"]


_RUNNERS = {
    "coeffs": _run_coeffs,
    "simulate": _run_simulate,
    "manifold": _run_manifold,
    "chart": _run_chart,
    "riccati": _run_riccati,
    "transition": _run_transition,
    "blowup-check": _run_blowup_check,
    "sweep": _run_sweep,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir, rc, files, wall_time) -> None:
    _write_json(
        os.path.join(outdir, "manifest.json"),
        {
            "tool": f"specfold {__version__}",
            "experiment": rc.experiment,
            "seed": rc.seed,
            "config": rc.raw,
            "golden_constants": {"omega0": OMEGA0, "omega0_tolerance": OMEGA0_TOLERANCE},
            "wall_time_s": wall_time,
            "files": sorted(
                (
                    {
                        "path": name,
                        "sha256": _sha256(os.path.join(outdir, name)),
                        "bytes": os.path.getsize(os.path.join(outdir, name)),
                    }
                    for name in files
                ),
                key=lambda rec: rec["path"],
            ),
        },
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specfold",
        description="Fast-slow fold system experiments: truncations, blow-up charts, blow-up bounds.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run config")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<experiment>)")
    common.add_argument("--workers", type=int, default=1, help="parallel cases for sweep/blowup-check")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
        if name == "chart":
            p.add_argument("--chart", choices=["k1", "k2", "k3"], help="override chart.chart")
            p.add_argument("--entry", help="override chart.entry")
            p.add_argument("--exit-section", help="override chart.exit_section (name=value)")
    sub.add_parser("validate", parents=[common], help="validate a config without running it")
    return parser


def _prepare(args) -> RunConfig:
    experiment = args.command
    raw = _load_toml(args.config)
    config_dir = os.path.dirname(os.path.abspath(args.config))
    if experiment == "chart":
        block = dict(raw.get("chart", {}))
        for key, attr in (("chart", "chart"), ("entry", "entry"), ("exit_section", "exit_section")):
            if getattr(args, attr, None):
                block[key] = getattr(args, attr)
        raw = dict(raw)
        raw["chart"] = block
    rc, violations = validate_config(raw, experiment, config_dir)
    rc.out = _resolve_out(args.out, raw, experiment)
    rc.workers = max(1, args.workers)
    try:
        os.makedirs(rc.out, exist_ok=True)
        if not os.access(rc.out, os.W_OK):
            raise OSError("not writable")
    except OSError as exc:
        violations.append(_violation("output_writable", "out", rc.out, str(exc)))
    if violations:
        raise ValidationFailure(violations)
    return rc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "validate":
        experiment = None
        try:
            raw = _load_toml(args.config)
            experiment = raw.get("experiment")
            if experiment not in EXPERIMENTS:
                report = [
                    _violation(
                        "config", "experiment", experiment, f"experiment must be one of {list(EXPERIMENTS)}"
                    )
                ]
            else:
                _, report = validate_config(
                    raw, experiment, os.path.dirname(os.path.abspath(args.config))
                )
        except ValidationFailure as exc:
            report = exc.violations
        print(json.dumps({"config": args.config, "violations": report}, indent=2, sort_keys=True))
        return 2 if report else 0

    try:
        rc = _prepare(args)
    except ValidationFailure as exc:
        json.dump({"error": "validation", "violations": exc.violations}, sys.stderr, indent=2, sort_keys=True)
        sys.stderr.write("\n")
        return 2

    start = time.monotonic()
    try:
        files = _RUNNERS[rc.experiment](rc, rc.out)
    except SpecfoldError as exc:
        json.dump(
            {"error": "runtime", "stage": rc.experiment, "message": str(exc)},
            sys.stderr,
            indent=2,
            sort_keys=True,
        )
        sys.stderr.write("\n")
        return 1
    wall = time.monotonic() - start
    _write_manifest(rc.out, rc, files, wall)
    if not args.quiet:
        for name in [*files, "manifest.json"]:
            print(os.path.join(rc.out, name))
        print(f"ok {rc.experiment} ({len(files)} files, {wall:.2f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Experiment presets, run orchestration, on-disk runs, diagnosis and sweeps."""

from __future__ import annotations

import copy
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .evolution import BlowupReport, EvolutionTrace, StepperConfig, StiffnessError, evolve
from .grid import Field, GridSpec, PhysParams
from .groundstate import GroundState, Kind, gn_constant, solve_ground_state, threshold_family
from .io import (
    read_json,
    read_report,
    read_snapshot,
    read_trace_csv,
    read_yaml,
    write_json,
    write_manifest,
    write_report,
    write_series_csv,
    write_snapshot,
    write_trace_csv,
    write_yaml,
)

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "NLSBLOWUP_OUTPUT_DIR"
WORKERS_ENV = "NLSBLOWUP_WORKERS"


class ConfigError(ValueError):
    pass


class Preset(str, Enum):
    THRESHOLD31 = "Threshold31"
    CONCENTRATION42 = "Concentration42"
    PROFILE43 = "Profile43"
    DIRAC44 = "Dirac44"
    RATE45 = "Rate45"
    SUPERCRITICAL52 = "Supercritical52"
    CUSTOM = "Custom"


@dataclass
class InitialData:
    """Either the ground-state family c rho^{N/2} Q(rho (x - center)) or a Gaussian
    amplitude exp(-|x - center|^2 / width^2).

    focus_time T0, when set, multiplies the data by the lens phase exp(-i |x - center|^2 / (4 T0)),
    which focuses the free flow at t = T0.
    """

    kind: str = "threshold"
    c: float = 1.1
    rho: float = 3.0
    amplitude: float = 1.0
    width: float = 1.0
    center: float = 0.0
    focus_time: float | None = None

    def __post_init__(self):
        if self.kind not in ("threshold", "gaussian"):
            raise ConfigError(f"unknown initial data kind {self.kind!r}")
        if self.rho <= 0 or self.width <= 0:
            raise ConfigError("rho and width must be positive")
        if self.focus_time is not None and not self.focus_time > 0:
            raise ConfigError("focus_time must be positive")


@dataclass
class DiagConfig:
    delta: float = 0.5
    tolerances: dict = field(default_factory=lambda: dict(
        concentration_fraction=0.95,
        profile_h1_fraction=0.2,
        dirac_variance_slope=1.5,
        rate_min_slope=0.9,
        supercritical_fraction=0.5,
        critical_mass_rtol=1e-6,
        virial_rel_error=1e-4,
    ))
    # Q is solved on its own box and resampled onto the run grid
    gs_extent: float = 48.0
    gs_points: int = 1024
    hsc_cap: float | None = None


@dataclass
class ExperimentConfig:
    preset: Preset = Preset.CUSTOM
    params: PhysParams = field(default_factory=lambda: PhysParams(-1.0, 1.0, 4.0, 2.0, 1))
    grid: GridSpec = field(default_factory=lambda: GridSpec(1, 16.0, 1024))
    stepper: StepperConfig = field(default_factory=StepperConfig)
    initial: InitialData = field(default_factory=InitialData)
    diag: DiagConfig = field(default_factory=DiagConfig)
    horizon: float = 5.0
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if self.params.dim != self.grid.dim:
            raise ConfigError("params.dim and grid.dim disagree")
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative")
        validate_preset(self)

    def to_dict(self) -> dict:
        p = self.params
        return dict(
            preset=self.preset.value,
            params=dict(lambda1=p.lambda1, lambda2=p.lambda2, p1=p.p1, p2=p.p2, dim=p.dim),
            grid=dict(dim=self.grid.dim, extent=self.grid.extent, points=self.grid.points),
            stepper=asdict(self.stepper),
            initial=asdict(self.initial),
            diag=asdict(self.diag),
            horizon=self.horizon,
            output_dir=self.output_dir,
            seed=self.seed,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        preset = Preset(d.get("preset", "Custom"))
        base = preset_config(preset).to_dict()
        merged = _deep_merge(base, d)
        try:
            return cls(
                preset=preset,
                params=PhysParams(**merged["params"]),
                grid=GridSpec(**merged["grid"]),
                stepper=StepperConfig(**merged["stepper"]),
                initial=InitialData(**merged["initial"]),
                diag=DiagConfig(**merged["diag"]),
                horizon=float(merged["horizon"]),
                output_dir=str(merged["output_dir"]),
                seed=int(merged["seed"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def validate_preset(cfg: ExperimentConfig) -> None:
    p, N = cfg.params, cfg.params.dim
    if cfg.preset in (Preset.THRESHOLD31, Preset.CONCENTRATION42, Preset.PROFILE43,
                      Preset.DIRAC44, Preset.RATE45):
        if not (p.lambda1 == -1 and p.lambda2 == 1 and np.isclose(p.p1, 4 / N) and p.p2 < 4 / N):
            raise ConfigError(f"{cfg.preset.value} needs lambda1=-1, lambda2=1, p1=4/N, p2<4/N")
    if cfg.preset == Preset.SUPERCRITICAL52:
        if not (p.lambda1 < 0 and p.p1 > 4 / N):
            raise ConfigError("Supercritical52 needs lambda1<0 and p1>4/N")


# Exactly critical mass cannot collapse while lambda2 > 0 (the defocusing term bounds the
# gradient), so the critical-mass presets run a near-critical surrogate: 1.01 Q at scale
# rho = 30, where the cubic term is weaker by 1/rho, focused by a lens phase at T0 = 0.25/rho^2.
_FOCUS = 0.25 / 30.0**2
_NEAR_CRITICAL = dict(
    grid=GridSpec(1, 1.0, 4096),
    initial=InitialData("threshold", c=1.01, rho=30.0, focus_time=_FOCUS),
    stepper=StepperConfig(dt_init=1e-3, snapshot_stride=20, grad_blowup_factor=20.0),
    horizon=3 * _FOCUS,
)


def preset_config(preset, **overrides) -> ExperimentConfig:
    preset = Preset(preset)
    crit = PhysParams(-1.0, 1.0, 4.0, 2.0, 1)
    if preset == Preset.THRESHOLD31:
        kw = dict(params=crit, grid=GridSpec(1, 16.0, 4096),
                  initial=InitialData("threshold", c=1.1, rho=3.0),
                  stepper=StepperConfig(dt_init=1e-3, snapshot_stride=20, grad_blowup_factor=10.0),
                  horizon=5.0)
    elif preset in (Preset.CONCENTRATION42, Preset.PROFILE43, Preset.DIRAC44, Preset.RATE45):
        kw = dict(params=crit, **copy.deepcopy(_NEAR_CRITICAL))
    elif preset == Preset.SUPERCRITICAL52:
        kw = dict(params=PhysParams(-1.0, 0.0, 6.0, 2.0, 1), grid=GridSpec(1, 16.0, 4096),
                  initial=InitialData("gaussian", amplitude=2.0, width=1.0),
                  stepper=StepperConfig(dt_init=1e-3, snapshot_stride=20, grad_blowup_factor=20.0),
                  horizon=2.0)
    else:
        kw = {}
    kw.update(overrides)
    return ExperimentConfig(preset=preset, **kw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    d = read_yaml(path)
    if overrides:
        d = _deep_merge(d, overrides)
    return ExperimentConfig.from_dict(d)


def save_config(path, cfg: ExperimentConfig) -> Path:
    return write_yaml(path, cfg.to_dict())


@lru_cache(maxsize=16)
def _critical_q(dim: int, p1: float, extent: float, points: int) -> GroundState:
    params = PhysParams(-1.0, 0.0, p1, p1 / 2, dim)
    return solve_ground_state(Kind.CRITICAL, params, GridSpec(dim, extent, points))


def critical_ground_state(cfg: ExperimentConfig) -> GroundState:
    """Critical ground state for p = 4/N; its equation does not involve lambda2 or p2."""
    N = cfg.params.dim
    return _critical_q(N, 4 / N, cfg.diag.gs_extent, cfg.diag.gs_points)


def build_initial(cfg: ExperimentConfig) -> Field:
    ini, grid = cfg.initial, cfg.grid
    if ini.kind == "gaussian":
        r2 = sum((x - ini.center) ** 2 for x in grid.coords())
        u0 = Field(grid, (ini.amplitude * np.exp(-r2 / ini.width**2)).astype(complex))
    else:
        Q = critical_ground_state(cfg)
        u0 = threshold_family(Q, ini.c, ini.rho, grid, rtol=1e-8)
        if ini.center:
            shift = int(round(ini.center / grid.h))
            u0 = u0.with_values(np.roll(u0.values, shift, axis=tuple(range(grid.dim))))
    if ini.focus_time is not None:
        r2 = sum((x - ini.center) ** 2 for x in grid.coords())
        u0 = u0.with_values(u0.values * np.exp(-1j * r2 / (4 * ini.focus_time)))
    return u0


# -- runs on disk --------------------------------------------------------------------


def resolve_output(path=None) -> Path:
    return Path(path or os.environ.get(OUTPUT_DIR_ENV) or "runs")


@dataclass
class RunResult:
    run_dir: Path
    trace: EvolutionTrace
    report: BlowupReport


def run_experiment(cfg: ExperimentConfig, run_dir=None) -> RunResult:
    """Evolve the configured initial data and write config, trace, snapshots, report, manifest."""
    run_dir = Path(run_dir or resolve_output(cfg.output_dir) / cfg.preset.value)
    run_dir.mkdir(parents=True, exist_ok=True)
    u0 = build_initial(cfg)
    try:
        trace, report = evolve(u0, cfg.params, cfg.stepper, cfg.horizon)
    except StiffnessError as e:
        trace, report = e.trace, e.report
    files = [save_config(run_dir / "config.yaml", cfg),
             write_trace_csv(run_dir / "trace.csv", trace),
             write_report(run_dir / "report.json", report)]
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for old in snap_dir.glob("snap_*.bin"):
        old.unlink()
    for i, s in enumerate(trace.snapshots):
        files.append(write_snapshot(snap_dir / f"snap_{i:06d}.bin", s))
    write_manifest(run_dir, cfg.to_dict(), [f.relative_to(run_dir) for f in files])
    return RunResult(run_dir, trace, report)


def load_run(run_dir) -> tuple[ExperimentConfig, EvolutionTrace, BlowupReport]:
    run_dir = Path(run_dir)
    for name in ("manifest.json", "config.yaml", "trace.csv", "report.json"):
        if not (run_dir / name).exists():
            raise FileNotFoundError(f"{run_dir / name} missing")
    cfg = load_config(run_dir / "config.yaml")
    cols = read_trace_csv(run_dir / "trace.csv")
    trace = EvolutionTrace(cfg.params, cfg.grid)
    trace.times = list(cols["t"])
    for name in ("mass", "energy", "grad_norm", "hsc_norm", "J", "Jprime"):
        setattr(trace, name, list(cols[name]))
    trace.snapshots = [read_snapshot(p) for p in sorted((run_dir / "snapshots").glob("snap_*.bin"))]
    return cfg, trace, read_report(run_dir / "report.json")


# -- diagnosis -------------------------------------------------------------------------

DIAGNOSTICS = ("concentration", "profile", "dirac", "rate", "supercritical", "virial")
_BLOWUP_ONLY = {"concentration", "profile", "dirac", "rate", "supercritical"}
_CRITICAL_ONLY = {"concentration", "profile", "dirac", "rate"}


class MissingSnapshotsError(RuntimeError):
    pass


def _verdict(v: dg.Verdict, **measured) -> dict:
    return dict(verdict=v.value, **measured)


def _monotone_fraction(x, decreasing=True) -> float:
    d = np.diff(np.asarray(x))
    if not len(d):
        return 1.0
    return float(np.mean(d <= 0 if decreasing else d >= 0))


def diagnose_trace(cfg: ExperimentConfig, trace: EvolutionTrace, report: BlowupReport,
                   which: str) -> tuple[dict, dict]:
    """One diagnostic on an in-memory run: (verdict dict, CSV columns)."""
    if which not in DIAGNOSTICS:
        raise ValueError(f"unknown diagnostic {which!r}; choose from {DIAGNOSTICS}")
    tol = cfg.diag.tolerances
    if which in _BLOWUP_ONLY and not report.blew_up:
        return _verdict(dg.Verdict.HYPOTHESES_UNMET, reason="run did not blow up"), {}
    if which in _CRITICAL_ONLY and not cfg.params.critical:
        return _verdict(dg.Verdict.HYPOTHESES_UNMET, reason="needs the L2-critical power p1 = 4/N"), {}
    # rate reads only the trace columns; the others need field snapshots
    need = {"virial": 3, "rate": 0}.get(which, 2)
    if len(trace.snapshots) < need:
        raise MissingSnapshotsError(
            f"{which} needs at least {need} snapshots; rerun with a smaller snapshot_stride "
            f"(currently {cfg.stepper.snapshot_stride})")
    p = cfg.params
    if which == "concentration":
        s = dg.concentration_track(trace, delta=cfg.diag.delta)
        Q = critical_ground_state(cfg)
        t, m = s.terminal()
        thr = tol["concentration_fraction"] * Q.mass
        v = dg.Verdict.PASS if m >= thr else dg.Verdict.FAIL
        cols = dict(t=s.times, a=s.a_of_t, center=s.center, window_mass=s.window_mass,
                    under_resolved=s.under_resolved)
        return _verdict(v, terminal_time=t, terminal_window_mass=m, threshold=thr,
                        Q_mass=Q.mass), cols
    if which == "profile":
        Q = critical_ground_state(cfg)
        # fitting every snapshot is costly and only the final decade enters the verdict
        sl = dg.final_decade(dg.snapshot_grads(trace))
        fits, bounds = dg.profile_series(trace, Q, p, sl)
        t = np.array([f.time for f in fits])
        h1 = np.array([f.h1_distance for f in fits])
        H = np.array([f.reduced_H for f in fits])
        # the bound holds with equality when E < 0, so discrete energy drift is the slack
        slack = np.array([f.rho**2 for f in fits]) * dg.energy_drift_at(trace, t)
        bound_ok = bool(np.all(np.abs(H) <= bounds + slack))
        C_gn = gn_constant(p.p2, Q.grid)
        gn_bounds = np.array([dg.gn_hamiltonian_bound(s, trace.energy[0], trace.mass[0], C_gn, Q, p)
                              for s in trace.snapshots[sl]])
        bound_ok = bound_ok and bool(np.all(bounds <= gn_bounds * (1 + 1e-12)))
        thr = tol["profile_h1_fraction"] * fits[0].h1_norm_Q
        mono = _monotone_fraction(h1)
        ok = bound_ok and mono == 1.0 and h1[-1] <= thr and _monotone_fraction(np.abs(H)) == 1.0
        cols = dict(t=t, rho=[f.rho for f in fits], h1_distance=h1, reduced_H=H, bound=bounds,
                    gn_bound=gn_bounds, drift_slack=slack)
        return _verdict(dg.Verdict.PASS if ok else dg.Verdict.FAIL, terminal_h1=float(h1[-1]),
                        threshold=thr, h1_monotone_fraction=mono, bound_holds=bound_ok), cols
    if which == "dirac":
        Q = critical_ground_state(cfg)
        w = dg.dirac_witness(trace, Q, tol["critical_mass_rtol"])
        sl = dg.final_decade(dg.snapshot_grads(trace))
        slope = dg.loglog_slope(w.times, w.variance_series, report.t_star_estimate, sl)
        cols = dict(t=w.times, com=w.com_series, variance=w.variance_series)
        conc = dg.concentration_track(trace, delta=cfg.diag.delta)
        gap = np.linalg.norm(np.asarray(conc.center) - w.com_series, axis=-1)[sl]
        allowed = 2 * np.maximum(cfg.grid.h, conc.a_of_t[sl])
        measured = dict(x0=w.x0, variance_slope=slope,
                        variance_monotone_fraction=_monotone_fraction(w.variance_series[sl]),
                        max_center_com_gap=float(gap.max()),
                        center_com_consistent=bool(np.all(gap <= allowed)))
        if not w.critical_mass:
            return _verdict(dg.Verdict.HYPOTHESES_UNMET, reason="initial mass is not ||Q||^2",
                            **measured), cols
        ok = (slope >= tol["dirac_variance_slope"] and measured["variance_monotone_fraction"] == 1.0
              and measured["center_com_consistent"])
        return _verdict(dg.Verdict.PASS if ok else dg.Verdict.FAIL, **measured), cols
    if which == "rate":
        try:
            rc = dg.rate_check(report, trace, min_slope=tol["rate_min_slope"])
        except dg.InsufficientDataError as e:
            return _verdict(dg.Verdict.FLAGGED, reason=str(e)), {}
        return _verdict(rc.verdict, C_lower=rc.C_lower, slope=rc.slope, r2=rc.r2,
                        points=rc.points), {}
    if which == "supercritical":
        if not p.p1 > 4 / p.dim:
            return _verdict(dg.Verdict.HYPOTHESES_UNMET, reason="p1 <= 4/N"), {}
        Q51, R52 = supercritical_ground_states(cfg)
        s = dg.supercritical_track(trace, Q51, R52, p, hsc_cap=cfg.diag.hsc_cap)
        i = s.terminal_index()
        thr = tol["supercritical_fraction"] * s.refs["Q_hsc_sq"]
        sl = dg.final_decade(dg.snapshot_grads(trace))
        lmono = _monotone_fraction(s.lpc_window[sl.start: i + 1], decreasing=False)
        ok = s.hsc_window[i] >= thr and s.lpc_window[i] > 0 and lmono == 1.0
        v = dg.Verdict.FLAGGED if s.hypothesis_violated else (
            dg.Verdict.PASS if ok else dg.Verdict.FAIL)
        cols = dict(t=s.times, lam=s.lambda_of_t, hsc_window=s.hsc_window,
                    lpc_window=s.lpc_window, under_resolved=s.under_resolved)
        return _verdict(v, terminal_hsc_window=float(s.hsc_window[i]), threshold=thr,
                        terminal_lpc_window=float(s.lpc_window[i]), R_lpc=s.refs["R_lpc"],
                        lpc_monotone_fraction=lmono, sup_hsc=s.sup_hsc,
                        Q51_residual=Q51.residual_Linf, R52_residual=R52.residual_Linf), cols
    vs = dg.virial_series(trace, p)
    err = vs.max_rel_error("formula")
    measured = dict(max_rel_error_formula=err, valid=vs.valid, notes=vs.notes)
    if vs.Jpp_reduced is not None:
        measured["max_rel_error_reduced"] = vs.max_rel_error("reduced")
    cols = dict(t=vs.times, J=vs.J, Jp=vs.Jp, Jpp_formula=vs.Jpp_formula, Jpp_fd=vs.Jpp_fd)
    tol_v = tol["virial_rel_error"]
    measured["threshold"] = tol_v
    if not vs.valid:
        v = dg.Verdict.FLAGGED
    else:
        v = dg.Verdict.PASS if err <= tol_v else dg.Verdict.FAIL
    return _verdict(v, **measured), cols


@lru_cache(maxsize=4)
def _super_states(p1: float, p2: float, extent: float, points: int):
    params = PhysParams(-1.0, 0.0, p1, p2, 1)
    g = GridSpec(1, extent, points)
    return (solve_ground_state(Kind.FRAC, params, g), solve_ground_state(Kind.MIXED, params, g))


def supercritical_ground_states(cfg: ExperimentConfig) -> tuple[GroundState, GroundState]:
    if cfg.params.dim != 1:
        raise ConfigError("supercritical reference states are provided for N=1")
    return _super_states(cfg.params.p1, cfg.params.p2, 64.0, 2048)


def diagnose_run(run_dir, which: list[str] | str = DIAGNOSTICS) -> dict:
    """Run diagnostics on a stored run, writing verdicts.json and one CSV per diagnostic."""
    run_dir = Path(run_dir)
    cfg, trace, report = load_run(run_dir)
    which = [which] if isinstance(which, str) else list(which)
    verdicts = {}
    for w in which:
        v, cols = diagnose_trace(cfg, trace, report, w)
        verdicts[w] = v
        if cols:
            write_series_csv(run_dir / f"diag_{w}.csv", cols)
    write_json(run_dir / "verdicts.json", verdicts)
    manifest = read_json(run_dir / "manifest.json")
    files = list(manifest["files"]) + ["verdicts.json"] + [
        f"diag_{w}.csv" for w in which if (run_dir / f"diag_{w}.csv").exists()]
    write_manifest(run_dir, cfg.to_dict(), sorted(set(files)),
                   {k: v["verdict"] for k, v in verdicts.items()})
    return verdicts


# -- sweeps ----------------------------------------------------------------------------

SWEEP_COLUMNS = ("value", "blew_up", "reason", "t_star", "final_grad", "mass_drift",
                 "energy_drift", "E0", "error")


def _sweep_point(args):
    cfg_dict, axis, value = args
    d = _deep_merge(cfg_dict, _axis_override(axis, value))
    row = dict(value=value, blew_up="", reason="", t_star="", final_grad="", mass_drift="",
               energy_drift="", E0="", error="")
    try:
        cfg = ExperimentConfig.from_dict(d)
        u0 = build_initial(cfg)
        try:
            trace, rep = evolve(u0, cfg.params, replace(cfg.stepper, snapshot_stride=10**9),
                                cfg.horizon)
        except StiffnessError as e:
            trace, rep = e.trace, e.report
        row.update(blew_up=rep.blew_up, reason=rep.reason.value,
                   t_star="" if rep.t_star_estimate is None else rep.t_star_estimate,
                   final_grad=rep.final_grad_norm, mass_drift=trace.mass_drift(),
                   energy_drift=trace.energy_drift(), E0=trace.energy[0])
    except Exception as e:  # recorded per row; the sweep carries on
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def _axis_override(axis: str, value) -> dict:
    """'initial.c' -> {'initial': {'c': value}}."""
    out: dict = {}
    cur = out
    parts = axis.split(".")
    for k in parts[:-1]:
        cur = cur.setdefault(k, {})
    cur[parts[-1]] = value
    return out


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else max(1, os.cpu_count() or 1)


def sweep(cfg: ExperimentConfig, axis: str, values, out_csv=None, workers: int | None = None
          ) -> list[dict]:
    cfg_dict = cfg.to_dict()
    jobs = [(cfg_dict, axis, v) for v in values]
    workers = workers or default_workers()
    if workers == 1 or len(jobs) <= 1:
        rows = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, jobs))
    if out_csv is not None:
        write_series_csv(out_csv, {c: [r[c] for r in rows] for c in SWEEP_COLUMNS})
    return rows

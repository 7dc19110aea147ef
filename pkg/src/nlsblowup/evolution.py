"""Strang split-step integration of i u_t + Lap u = l1|u|^p1 u + l2|u|^p2 u.

The nonlinear subflow is an exact pointwise phase rotation and the linear
subflow is exact in Fourier space, so mass is conserved to round-off (up to
whatever the optional 2/3 dealiasing removes).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .grid import Field, GridSpec, PhysParams, dealias_mask, gradient, integrate, spectral_energy

log = logging.getLogger(__name__)

# gradient growth (relative to t=0) that turns a dt underflow into a blow-up verdict
UNDERFLOW_GROWTH = 10.0


class NumericalOverflow(ArithmeticError):
    pass


class StiffnessError(RuntimeError):
    """dt fell below dt_min while the gradient stayed bounded."""

    def __init__(self, msg, trace=None, report=None):
        super().__init__(msg)
        self.trace = trace
        self.report = report


class Reason(str, Enum):
    GRAD_THRESHOLD = "GradThreshold"
    DT_UNDERFLOW = "DtUnderflow"
    TIME_HORIZON = "TimeHorizon"


@dataclass
class StepperConfig:
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    cfl_safety: float = 0.5
    dealias: bool = True
    snapshot_stride: int = 10
    grad_blowup_factor: float = 1e3
    # linear step limit is linear_limit_coeff * h^2
    linear_limit_coeff: float = 1 / np.pi
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not self.dt_min < self.dt_init:
            raise ValueError("need dt_min < dt_init")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if not self.grad_blowup_factor > 1:
            raise ValueError("grad_blowup_factor must exceed 1")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


@dataclass
class EvolutionTrace:
    params: PhysParams
    grid: GridSpec
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    hsc_norm: list = field(default_factory=list)
    J: list = field(default_factory=list)
    Jprime: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    COLUMNS = ("t", "mass", "energy", "grad_norm", "hsc_norm", "J", "Jprime")

    def __len__(self):
        return len(self.times)

    def rows(self):
        return zip(self.times, self.mass, self.energy, self.grad_norm, self.hsc_norm,
                   self.J, self.Jprime)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, "times" if name == "t" else name), dtype=float)

    def mass_drift(self) -> float:
        m = self.array("mass")
        return float(np.max(np.abs(m - m[0])) / m[0]) if len(m) else 0.0

    def energy_drift(self) -> float:
        e = self.array("energy")
        if not len(e):
            return 0.0
        scale = max(abs(e[0]), 1e-300)
        return float(np.max(np.abs(e - e[0])) / scale)


@dataclass
class BlowupReport:
    blew_up: bool
    t_star_estimate: float | None
    final_grad_norm: float
    reason: Reason
    rate_fit: tuple | None = None

    def as_dict(self) -> dict:
        d = dict(blew_up=self.blew_up, t_star_estimate=self.t_star_estimate,
                 final_grad_norm=self.final_grad_norm, reason=self.reason.value,
                 rate_fit=None)
        if self.rate_fit is not None:
            d["rate_fit"] = dict(zip(("C", "exponent", "r2"), map(float, self.rate_fit)))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlowupReport":
        rf = d.get("rate_fit")
        return cls(d["blew_up"], d["t_star_estimate"], d["final_grad_norm"], Reason(d["reason"]),
                   None if rf is None else (rf["C"], rf["exponent"], rf["r2"]))


def nonlinear_potential(values: np.ndarray, params: PhysParams) -> np.ndarray:
    a = np.abs(values)
    return params.lambda1 * a**params.p1 + params.lambda2 * a**params.p2


def energy(u: Field, params: PhysParams) -> float:
    spec = np.fft.fftn(u.values)
    return _energy(u.values, spec, u.grid, params)


def _energy(values, spec, grid, params):
    a = np.abs(values)
    kin = 0.5 * spectral_energy(spec, grid.k2(), grid)
    nl1 = params.lambda1 / (params.p1 + 2) * integrate(a ** (params.p1 + 2), grid)
    nl2 = params.lambda2 / (params.p2 + 2) * integrate(a ** (params.p2 + 2), grid)
    return kin + nl1 + nl2


def _strang(values, dt, params, k2, mask):
    u = values * np.exp(-0.5j * dt * nonlinear_potential(values, params))
    spec = np.fft.fftn(u)
    if mask is not None:
        spec *= mask
    u = np.fft.ifftn(spec * np.exp(-1j * dt * k2))
    u = u * np.exp(-0.5j * dt * nonlinear_potential(u, params))
    if mask is not None:
        u = np.fft.ifftn(np.fft.fftn(u) * mask)
    if not np.all(np.isfinite(u)):
        raise NumericalOverflow(f"non-finite values after a step of size {dt:g}")
    return u


def step(u: Field, dt: float, params: PhysParams, dealias: bool = False) -> Field:
    """One Strang step: half nonlinear rotation, exact linear flow, half rotation."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    mask = dealias_mask(u.grid) if dealias else None
    return Field(u.grid, _strang(u.values.astype(complex), dt, params, u.grid.k2(), mask),
                 u.time + dt)


def observables(values: np.ndarray, grid: GridSpec, params: PhysParams) -> dict:
    spec = np.fft.fftn(values)
    k2 = grid.k2()
    dens = np.abs(values) ** 2
    grads = [np.fft.ifftn(1j * k * spec) for k in grid.wavevectors()]
    xdotgrad = sum(x * g for x, g in zip(grid.coords(), grads))
    s = params.s_c
    hsc2 = spectral_energy(spec, k2**s, grid) if s > 0 else integrate(dens, grid)
    return dict(
        mass=integrate(dens, grid),
        energy=_energy(values, spec, grid, params),
        grad_norm=np.sqrt(spectral_energy(spec, k2, grid)),
        hsc_norm=np.sqrt(hsc2),
        J=integrate(grid.radius2() * dens, grid),
        Jprime=4 * integrate(np.imag(np.conj(values) * xdotgrad), grid),
    )


def virial_Jprime(values, grid):
    """-4 Im int u x.grad(conj u), written as 4 Im int conj(u) x.grad u."""
    grads = gradient(values, grid)
    xdotgrad = sum(x * g for x, g in zip(grid.coords(), grads))
    return 4 * integrate(np.imag(np.conj(values) * xdotgrad), grid)


def final_decade(grad: np.ndarray) -> slice:
    """Trailing stretch over which the gradient norm rises by the last factor of ten."""
    grad = np.asarray(grad)
    if not len(grad):
        return slice(0, 0)
    below = np.flatnonzero(grad < grad[-1] / 10)
    start = below[-1] + 1 if len(below) else 0
    return slice(int(start), len(grad))


def estimate_t_star(times, grad) -> float:
    """Zero of the least-squares line through 1/grad over the final decade."""
    times, grad = np.asarray(times), np.asarray(grad)
    sl = final_decade(grad)
    t, y = times[sl], 1 / grad[sl]
    if len(t) < 2:
        t, y = times[-2:], 1 / grad[-2:]
    slope, icpt = np.polyfit(t, y, 1)
    last = times[-1]
    t_star = -icpt / slope if slope < 0 else np.inf
    if not t_star > last:
        # a convex 1/grad can put the chord's zero behind the data
        gap = last - times[-2] if len(times) > 1 else 1e-12
        log.warning("t* fit %.6g precedes last sample %.6g; clamped", t_star, last)
        t_star = last + gap
    return float(t_star)


def fit_rate(times, grad, t_star) -> tuple[float, float, float]:
    """log grad = log C + slope * (-log(T* - t)) on the final decade; returns (C, slope, r2)."""
    times, grad = np.asarray(times), np.asarray(grad)
    sl = final_decade(grad)
    if sl.stop - sl.start < 3:
        raise ValueError(f"final decade holds {sl.stop - sl.start} samples; need at least 3")
    X = -np.log(t_star - times[sl])
    Y = np.log(grad[sl])
    slope, icpt = np.polyfit(X, Y, 1)
    pred = icpt + slope * X
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1 - np.sum((Y - pred) ** 2) / ss if ss > 0 else 1.0
    return float(np.exp(icpt)), float(slope), float(r2)


def adaptive_dt(values, grid, params, cfg) -> float:
    linear_limit = cfg.linear_limit_coeff * grid.h**2
    rate = np.max(np.abs(params.lambda1) * np.abs(values) ** params.p1
                  + np.abs(params.lambda2) * np.abs(values) ** params.p2)
    nl_limit = 1 / rate if rate > 0 else np.inf
    return cfg.cfl_safety * min(cfg.dt_init, linear_limit, nl_limit)


def evolve(u0: Field, params: PhysParams, cfg: StepperConfig, horizon: float
           ) -> tuple[EvolutionTrace, BlowupReport]:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    grid = u0.grid
    if params.dim != grid.dim:
        raise ValueError("params and grid disagree on dimension")
    k2 = grid.k2()
    mask = dealias_mask(grid) if cfg.dealias else None
    u = u0.values.astype(complex)
    t = float(u0.time)
    t_end = t + horizon
    trace = EvolutionTrace(params, grid)

    def record(u, t, snap):
        obs = observables(u, grid, params)
        trace.times.append(t)
        for name in ("mass", "energy", "grad_norm", "hsc_norm", "J", "Jprime"):
            getattr(trace, name).append(float(obs[name]))
        if snap:
            trace.snapshots.append(Field(grid, u.copy(), t))
        return obs["grad_norm"]

    g0 = record(u, t, True)
    grad = g0
    reason = Reason.TIME_HORIZON
    shrink = 1.0
    n = 0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        dt = adaptive_dt(u, grid, params, cfg) * shrink
        if dt < cfg.dt_min:
            reason = Reason.DT_UNDERFLOW
            break
        # a remainder that is a sliver of dt is absorbed rather than taken as its own step
        last = t_end - t <= dt * (1 + 1e-6)
        if last:
            dt = t_end - t
        try:
            u_new = _strang(u, dt, params, k2, mask)
        except NumericalOverflow:
            shrink /= 2
            continue
        shrink = min(1.0, shrink * 2)
        u, t, n = u_new, (t_end if last else t + dt), n + 1
        at_end = last
        grad = record(u, t, n % cfg.snapshot_stride == 0)
        if grad >= cfg.grad_blowup_factor * g0:
            reason = Reason.GRAD_THRESHOLD
            break
        if n >= cfg.max_steps:
            raise RuntimeError(f"max_steps={cfg.max_steps} reached at t={t}")
        if at_end:
            break
    if not trace.snapshots or trace.snapshots[-1].time != trace.times[-1]:
        trace.snapshots.append(Field(grid, u.copy(), t))

    if reason == Reason.DT_UNDERFLOW and grad < UNDERFLOW_GROWTH * g0:
        report = BlowupReport(False, None, float(grad), reason)
        raise StiffnessError(
            f"dt underflow at t={t:.6g} with bounded gradient ({grad:.3g} vs {g0:.3g} initially)",
            trace, report)
    blew_up = reason != Reason.TIME_HORIZON
    t_star = rate = None
    if blew_up:
        t_star = estimate_t_star(trace.times, trace.grad_norm)
        sl = final_decade(trace.array("grad_norm"))
        if sl.stop - sl.start >= 3:
            rate = fit_rate(trace.times, trace.grad_norm, t_star)
    log.info("evolve: %d steps to t=%.6g, reason %s", n, t, reason.value)
    return trace, BlowupReport(blew_up, t_star, float(grad), reason, rate)

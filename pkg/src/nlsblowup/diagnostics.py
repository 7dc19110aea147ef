"""Post-processing of evolution traces into concentration, profile and rate witnesses.

Every limit statement t -> T* is judged on the last resolvable snapshot, with the
desk-scale tolerances passed in by the caller.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .evolution import BlowupReport, EvolutionTrace, final_decade, fit_rate
from .grid import (
    Field,
    GridSpec,
    PhysParams,
    apply_fractional_laplacian,
    integrate,
    interpolate_field,
    norm_gradL2,
    norm_Hdot,
    norm_L2,
    norm_Lp,
    window_max,
)
from .groundstate import GroundState, Kind

log = logging.getLogger(__name__)


class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    FLAGGED = "flagged"
    HYPOTHESES_UNMET = "hypotheses_unmet"


class InsufficientDataError(ValueError):
    pass


def snapshot_grads(trace: EvolutionTrace) -> np.ndarray:
    return np.array([norm_gradL2(s) for s in trace.snapshots])


def snapshot_times(trace: EvolutionTrace) -> np.ndarray:
    return np.array([s.time for s in trace.snapshots])


# -- L^2 concentration ------------------------------------------------------------


@dataclass
class ConcentrationSeries:
    times: np.ndarray
    a_of_t: np.ndarray
    center: np.ndarray
    window_mass: np.ndarray
    delta: float
    total_mass: float
    under_resolved: np.ndarray

    def terminal(self) -> tuple[float, float]:
        """(time, window mass) at the last snapshot whose window is resolved."""
        ok = np.flatnonzero(~self.under_resolved)
        if not len(ok):
            raise InsufficientDataError("no resolved window in the series")
        i = ok[-1]
        return float(self.times[i]), float(self.window_mass[i])


def concentration_track(trace: EvolutionTrace, Q: GroundState | None = None,
                        delta: float = 0.5, radius_rule: Callable | None = None
                        ) -> ConcentrationSeries:
    """Maximal ball mass with radius a(t) = ||grad u||^{-(1-delta)} at every snapshot."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if not trace.snapshots:
        raise InsufficientDataError("trace carries no snapshots")
    grid = trace.grid
    grads = snapshot_grads(trace)
    times = snapshot_times(trace)
    a = grads ** (-(1 - delta)) if radius_rule is None else np.array(
        [radius_rule(t, g) for t, g in zip(times, grads)])
    centers, masses = [], []
    for snap, r in zip(trace.snapshots, a):
        c, m = window_max(np.abs(snap.values) ** 2, grid, min(r, grid.extent / 2))
        centers.append(c)
        masses.append(m)
    return ConcentrationSeries(times, a, np.array(centers), np.array(masses), delta,
                               trace.mass[0], a < 2 * grid.h)


# -- limiting profile --------------------------------------------------------------


@dataclass
class ProfileFit:
    time: float
    rho: float
    shift: np.ndarray
    phase: float
    h1_distance: float
    reduced_H: float
    grad_v: float
    h1_norm_Q: float


def h1_norm(values: np.ndarray, grid: GridSpec) -> float:
    f = Field(grid, values)
    return float(np.sqrt(norm_L2(f) ** 2 + norm_gradL2(f) ** 2))


def reduced_hamiltonian(values: np.ndarray, grid: GridSpec, params: PhysParams) -> float:
    """(1/2)||grad v||^2 + lambda1/(p1+2) ||v||^{p1+2}_{p1+2}."""
    f = Field(grid, values)
    return 0.5 * norm_gradL2(f) ** 2 + params.lambda1 / (params.p1 + 2) * integrate(
        np.abs(values) ** (params.p1 + 2), grid)


def _periodic_offset(idx, grid):
    m = np.asarray(idx, dtype=float)
    m = np.where(m >= grid.points // 2, m - grid.points, m)
    return m * grid.h


def profile_fit(u: Field, Q: GroundState, params: PhysParams) -> ProfileFit:
    """Rescale u to the gradient norm of Q, then align translation and phase.

    v(y) = rho^{N/2} u(rho y) lives on u's nodes stretched by 1/rho, so the rescaling
    is exact on the grid; Q is interpolated onto those nodes. The shift maximises the
    correlation of |v| with Q; the phase then makes <v(.+shift), Q> real positive.
    """
    if Q.kind != Kind.CRITICAL:
        raise ValueError("profile alignment is defined against the critical ground state")
    gu = norm_gradL2(u)
    if gu == 0:
        raise ValueError("degenerate field: zero gradient")
    gQ = norm_gradL2(Q.field)
    rho = gQ / gu
    N = u.grid.dim
    vgrid = u.grid if rho == 1 else u.grid.scaled(1 / rho)
    v = rho ** (N / 2) * u.values
    if vgrid == Q.grid:
        q = Q.values
    else:
        q = interpolate_field(Q.field, vgrid).real
    corr = np.fft.ifftn(np.fft.fftn(np.abs(v)) * np.conj(np.fft.fftn(q))).real
    top = corr.max()
    first = np.flatnonzero(corr.ravel() >= top - 1e-12 * abs(top))[0]
    idx = np.unravel_index(first, vgrid.shape)
    w = np.roll(v, tuple(-i for i in idx), axis=tuple(range(N)))
    overlap = np.sum(w * q)
    theta = float(np.mod(-np.angle(overlap), 2 * np.pi))
    d = np.exp(1j * theta) * w - q
    return ProfileFit(
        time=u.time,
        rho=float(rho),
        shift=_periodic_offset(idx, vgrid),
        phase=theta,
        h1_distance=h1_norm(d, vgrid),
        reduced_H=float(reduced_hamiltonian(v, vgrid, params)),
        grad_v=float(norm_gradL2(Field(vgrid, v))),
        h1_norm_Q=h1_norm(Q.values, Q.grid),
    )


def hamiltonian_bound(u: Field, E0: float, Q: GroundState, params: PhysParams) -> float:
    """rho^2 (|E(u0)| + |lambda2|/(p2+2) ||u||^{p2+2}_{p2+2}), which dominates |H(v)|."""
    rho2 = (norm_gradL2(Q.field) / norm_gradL2(u)) ** 2
    lp = integrate(np.abs(u.values) ** (params.p2 + 2), u.grid)
    return float(rho2 * (abs(E0) + abs(params.lambda2) / (params.p2 + 2) * lp))


def gn_hamiltonian_bound(u: Field, E0: float, mass0: float, C_gn: float, Q: GroundState,
                         params: PhysParams) -> float:
    """hamiltonian_bound with the potential term replaced by its Gagliardo-Nirenberg estimate

    |lambda2|/(p2+2) C_gn ||u0||_2^{p2+2-N p2/2} ||grad u||^{N p2/2}, so it dominates
    hamiltonian_bound whenever C_gn is at least the sharp constant for p2.
    """
    N, p2 = params.dim, params.p2
    g = norm_gradL2(u)
    rho2 = (norm_gradL2(Q.field) / g) ** 2
    gn = C_gn * np.sqrt(mass0) ** (p2 + 2 - N * p2 / 2) * g ** (N * p2 / 2)
    return float(rho2 * (abs(E0) + abs(params.lambda2) / (p2 + 2) * gn))


def profile_series(trace: EvolutionTrace, Q: GroundState, params: PhysParams,
                   snapshots: slice = slice(None)) -> tuple[list[ProfileFit], np.ndarray]:
    """Fits and Hamiltonian bounds over trace.snapshots[snapshots]."""
    snaps = trace.snapshots[snapshots]
    fits = [profile_fit(s, Q, params) for s in snaps]
    bounds = np.array([hamiltonian_bound(s, trace.energy[0], Q, params) for s in snaps])
    return fits, bounds


def energy_drift_at(trace: EvolutionTrace, times) -> np.ndarray:
    """|E(t) - E(0)| at the recorded step nearest each requested time."""
    t, E = trace.array("t"), trace.array("energy")
    idx = np.searchsorted(t, np.asarray(times) - 1e-300)
    idx = np.clip(idx, 0, len(t) - 1)
    return np.abs(E[idx] - E[0])


# -- mass collapse -----------------------------------------------------------------


@dataclass
class DiracWitness:
    x0: np.ndarray
    times: np.ndarray
    com_series: np.ndarray
    variance_series: np.ndarray
    critical_mass: bool


def dirac_witness(trace: EvolutionTrace, Q: GroundState, mass_rtol: float = 1e-6) -> DiracWitness:
    """Centre of mass, its terminal limit x0, and the variance about x0 per snapshot."""
    if not trace.snapshots:
        raise InsufficientDataError("trace carries no snapshots")
    grid = trace.grid
    m0 = trace.mass[0]
    critical = abs(m0 - Q.mass) <= mass_rtol * Q.mass
    if not critical:
        log.warning("initial mass %.9g differs from ||Q||^2 = %.9g: hypotheses unmet", m0, Q.mass)
    coords = grid.coords()
    com = []
    for s in trace.snapshots:
        dens = np.abs(s.values) ** 2
        com.append([integrate(c * dens, grid) / m0 for c in coords])
    com = np.array(com)
    sl = final_decade(snapshot_grads(trace))
    x0 = com[sl].mean(axis=0)
    var = []
    for s in trace.snapshots:
        dens = np.abs(s.values) ** 2
        r2 = sum((c - x) ** 2 for c, x in zip(coords, x0))
        var.append(integrate(r2 * dens, grid))
    return DiracWitness(x0, snapshot_times(trace), com, np.array(var), critical)


def loglog_slope(times, values, t_star, sl: slice | None = None) -> float:
    times, values = np.asarray(times), np.asarray(values)
    sl = sl or slice(None)
    X = np.log(t_star - times[sl])
    return float(np.polyfit(X, np.log(values[sl]), 1)[0])


# -- blow-up rate ------------------------------------------------------------------


@dataclass
class RateCheck:
    C_lower: float
    slope: float
    r2: float
    points: int
    min_slope: float

    @property
    def verdict(self) -> Verdict:
        return Verdict.PASS if self.slope >= self.min_slope and self.C_lower > 0 else Verdict.FAIL


def rate_check(report: BlowupReport, trace: EvolutionTrace, min_points: int = 10,
               min_slope: float = 0.9) -> RateCheck:
    """Fit log ||grad u|| against -log(T* - t) over the final decade of growth."""
    if not report.blew_up or report.t_star_estimate is None:
        raise ValueError("rate check needs a blow-up report with a T* estimate")
    t = trace.array("t")
    g = trace.array("grad_norm")
    sl = final_decade(g)
    n = sl.stop - sl.start
    if n < min_points:
        raise InsufficientDataError(f"{n} points in the final decade, need {min_points}")
    T = report.t_star_estimate
    C, slope, r2 = fit_rate(t, g, T)
    C_lower = float(np.min(g[sl] * (T - t[sl])))
    return RateCheck(C_lower, slope, r2, n, min_slope)


# -- supercritical concentration ------------------------------------------------------


@dataclass
class SupercriticalSeries:
    times: np.ndarray
    hsc_window: np.ndarray
    lpc_window: np.ndarray
    lambda_of_t: np.ndarray
    refs: dict
    under_resolved: np.ndarray
    sup_hsc: float
    hypothesis_violated: bool

    def terminal_index(self) -> int:
        ok = np.flatnonzero(~self.under_resolved)
        if not len(ok):
            raise InsufficientDataError("no resolved window in the series")
        return int(ok[-1])


def default_lambda_rule(s_c: float, delta: float = 0.5) -> Callable:
    """lambda(t) = ||grad u||^{-(1-delta)/(1-s_c)}.

    The profile scale is rho = ||grad u||^{-1/(1-s_c)}, so lambda/rho grows like
    ||grad u||^{delta/(1-s_c)}; since 1/s_c > 1/(1-s_c) for s_c < 1/2, lambda ||grad u||^{1/s_c}
    diverges as well.  At s_c = 0 this is the L2 window radius ||grad u||^{-(1-delta)}.
    """
    if not 0 <= s_c < 1:
        raise ValueError(f"need 0 <= s_c < 1, got {s_c}")
    return lambda t, grad: grad ** (-(1 - delta) / (1 - s_c))


def supercritical_track(trace: EvolutionTrace, Q51: GroundState | None, R52: GroundState | None,
                        params: PhysParams, lambda_rule: Callable | None = None,
                        hsc_cap: float | None = None) -> SupercriticalSeries:
    """Maximal ball integrals of |(-Lap)^{s_c/2} u|^2 and |u|^{p_c} with radius lambda(t)."""
    if Q51 is not None and Q51.kind != Kind.FRAC:
        raise ValueError("Q51 must be a fractional ground state")
    if R52 is not None and R52.kind != Kind.MIXED:
        raise ValueError("R52 must be a mixed ground state")
    s = params.s_c
    if lambda_rule is None:
        lambda_rule = default_lambda_rule(s)
    grid = trace.grid
    times = snapshot_times(trace)
    grads = snapshot_grads(trace)
    lam = np.array([lambda_rule(t, g) for t, g in zip(times, grads)])
    hw, lw = [], []
    for snap, r in zip(trace.snapshots, lam):
        w = apply_fractional_laplacian(snap, s / 2).values if s > 0 else snap.values
        r = min(r, grid.extent / 2)
        hw.append(window_max(np.abs(w) ** 2, grid, r)[1])
        lw.append(window_max(np.abs(snap.values) ** params.p_c, grid, r)[1])
    refs = {}
    if Q51 is not None:
        refs["Q_hsc_sq"] = norm_Hdot(Q51.field, s) ** 2
    if R52 is not None:
        refs["R_lpc"] = norm_Lp(R52.field, params.p_c) ** params.p_c
    hsc = trace.array("hsc_norm")
    sup = float(hsc.max()) if len(hsc) else 0.0
    violated = hsc_cap is not None and sup > hsc_cap
    return SupercriticalSeries(times, np.array(hw), np.array(lw), lam, refs, lam < 2 * grid.h,
                               sup, violated)


# -- virial identities ---------------------------------------------------------------


@dataclass
class VirialSeries:
    times: np.ndarray
    J: np.ndarray
    Jp: np.ndarray
    Jpp_formula: np.ndarray
    Jpp_fd: np.ndarray
    Jpp_reduced: np.ndarray | None
    valid: bool = True
    notes: list = field(default_factory=list)

    def interior(self) -> slice:
        return slice(1, len(self.times) - 1)

    def max_rel_error(self, which: str = "formula") -> float:
        ref = self.Jpp_formula if which == "formula" else self.Jpp_reduced
        sl = self.interior()
        return float(np.max(np.abs(self.Jpp_fd[sl] - ref[sl])) / np.max(np.abs(ref[sl])))


def second_derivative_formula(u: Field, params: PhysParams) -> float:
    """8||grad u||^2 + sum_i 4 N lambda_i p_i/(p_i+2) ||u||^{p_i+2}_{p_i+2}."""
    N = u.grid.dim
    a = np.abs(u.values)
    out = 8 * norm_gradL2(u) ** 2
    for lam, p in ((params.lambda1, params.p1), (params.lambda2, params.p2)):
        out += 4 * N * lam * p / (p + 2) * integrate(a ** (p + 2), u.grid)
    return float(out)


def reduced_second_derivative(u: Field, E0: float, params: PhysParams) -> float:
    """16 E(u0) + lambda2 (4 N p2 - 16)/(p2+2) ||u||^{p2+2}_{p2+2}; needs lambda1 = -1, p1 = 4/N."""
    N, p2 = u.grid.dim, params.p2
    return float(16 * E0 + params.lambda2 * (4 * N * p2 - 16) / (p2 + 2)
                 * integrate(np.abs(u.values) ** (p2 + 2), u.grid))


def _centered_derivative(t, f):
    d = np.full_like(f, np.nan)
    hm = t[1:-1] - t[:-2]
    hp = t[2:] - t[1:-1]
    d[1:-1] = (hm**2 * f[2:] - hp**2 * f[:-2] + (hp**2 - hm**2) * f[1:-1]) / (hm * hp * (hm + hp))
    return d


def virial_series(trace: EvolutionTrace, params: PhysParams) -> VirialSeries:
    from .evolution import virial_Jprime

    snaps = trace.snapshots
    if len(snaps) < 3:
        raise InsufficientDataError(f"{len(snaps)} snapshots; need at least 3 (lower snapshot_stride)")
    grid = trace.grid
    t = snapshot_times(trace)
    J = np.array([integrate(grid.radius2() * np.abs(s.values) ** 2, grid) for s in snaps])
    Jp = np.array([virial_Jprime(s.values, grid) for s in snaps])
    Jpp = np.array([second_derivative_formula(s, params) for s in snaps])
    reduced = None
    if params.critical and params.lambda1 == -1:
        E0 = trace.energy[0]
        reduced = np.array([reduced_second_derivative(s, E0, params) for s in snaps])
    # |x|^2 is discontinuous across the periodic seam; require the peak in the inner half
    valid, notes = True, []
    for s in snaps:
        idx = np.unravel_index(np.argmax(np.abs(s.values)), grid.shape)
        if any(abs(grid.x1d[i]) > grid.extent / 4 for i in idx):
            valid = False
            notes.append(f"peak near the boundary at t={s.time:.6g}")
            break
    return VirialSeries(t, J, Jp, Jpp, _centered_derivative(t, Jp), reduced, valid, notes)

"""Ground states of the three elliptic problems and the quantities built on them.

``critical``   -Lap Q + Q = |Q|^p Q with p = 4/N
``frac``       -Lap Q + (p1/2)(-Lap)^{s_c} Q = |Q|^{p1} Q,  s_c > 0
``mixed``      -Lap R + |R|^{p_c-2} R = |R|^{p1} R

The first two are solved by Petviashvili iteration. The mixed problem has no
scaling family, and a damped fixed point drifts to the trivial solution, so it
is solved by damped Newton iteration from a height/curvature matched Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import (
    Field,
    GridSpec,
    PhysParams,
    integrate as quad,
    interpolate_field,
    is_band_limited,
    norm_gradL2,
    norm_L2,
    norm_Lp,
)

log = logging.getLogger(__name__)


class Kind(str, Enum):
    CRITICAL = "critical"
    FRAC = "frac"
    MIXED = "mixed"


class GroundStateError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


class ConvergenceError(GroundStateError):
    pass


class TrivialSolutionError(GroundStateError):
    pass


class ResolutionError(GroundStateError):
    pass


class DomainTruncationError(GroundStateError):
    pass


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iters: int = 5000
    # mixed problem only
    newton_max_iters: int = 60


@dataclass
class GroundState:
    kind: Kind
    field: Field
    exponent: float
    params: PhysParams | None
    residual_Linf: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @property
    def relative_residual(self) -> float:
        return self.residual_Linf / np.abs(self.values).max()

    @property
    def mass(self) -> float:
        return norm_L2(self.field) ** 2


def _laplace_apply(values, grid):
    return np.real(np.fft.ifftn(grid.k2() * np.fft.fftn(values)))


def fractional_zero_symbol(grid: GridSpec, coeff: float, s: float) -> float:
    """Zero-mode value of |xi|^2 + coeff |xi|^{2s} on the torus.

    The continuum symbol vanishes at xi = 0, which makes the periodic problem
    unsolvable for positive data. The zero mode instead carries the harmonic
    mean of the symbol over its own Fourier cell, |xi_i| < pi/L, which mimics the
    integrable singularity of the whole-space inverse and vanishes as L grows.
    """
    half = np.pi / grid.extent

    def inv(r):
        return 1.0 / (r * r + coeff * r ** (2 * s))

    if grid.dim == 1:
        mean_inv = integrate.quad(inv, 0, half, limit=200)[0] / half
    else:
        mean_inv = integrate.dblquad(
            lambda b, a: inv(np.hypot(a, b)), 0, half, 0, half, epsabs=1e-13, epsrel=1e-11
        )[0] / half**2
    return 1.0 / mean_inv


def linear_symbol(kind: Kind, grid: GridSpec, params: PhysParams | None) -> np.ndarray:
    k2 = grid.k2()
    if kind == Kind.CRITICAL:
        return 1.0 + k2
    if kind == Kind.FRAC:
        coeff = params.p1 / 2
        sym = k2 + coeff * k2**params.s_c
        sym.flat[0] = fractional_zero_symbol(grid, coeff, params.s_c)
        return sym
    return k2.copy()


def residual(kind: Kind, values: np.ndarray, grid: GridSpec, exponent: float,
             params: PhysParams | None = None) -> np.ndarray:
    """Pointwise residual of the elliptic equation for ``values``."""
    lin = np.real(np.fft.ifftn(linear_symbol(kind, grid, params) * np.fft.fftn(values)))
    a = np.abs(values)
    out = lin - a**exponent * values
    if kind == Kind.MIXED:
        out = out + a ** (params.p_c - 2) * values
    return out


def _check_truncation(values, grid, tol=1e-12):
    edge = np.abs(values).max() * tol
    rim = np.abs(values[0]) if grid.dim == 1 else max(np.abs(values[0]).max(), np.abs(values[:, 0]).max())
    if rim > edge:
        raise DomainTruncationError(
            f"profile at box edge is {rim:.3e}, above {tol:g} of its maximum; enlarge L={grid.extent}"
        )


def closed_form_Q_1d(p: float, grid: GridSpec) -> GroundState:
    """The 1D soliton ((p+2)/2)^{1/p} sech^{2/p}(p x/2) sampled on ``grid``."""
    if grid.dim != 1:
        raise ValueError("closed form exists only in one dimension")
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    x = grid.x1d
    q = ((p + 2) / 2) ** (1 / p) / np.cosh(p * x / 2) ** (2 / p)
    _check_truncation(q, grid)
    params = PhysParams(-1.0, 0.0, p, p / 2, 1) if abs(p - 4) < 1e-12 else None
    res = np.abs(residual(Kind.CRITICAL, q, grid, p)).max()
    return GroundState(Kind.CRITICAL, Field(grid, q), p, params, float(res), 0)


def initial_guess(grid: GridSpec) -> np.ndarray:
    w = grid.extent / 16
    return np.exp(-grid.radius2() / w**2)


def _exponent_for(kind: Kind, params: PhysParams) -> float:
    if kind == Kind.CRITICAL:
        if not params.critical:
            raise ValueError(f"critical ground state needs p1 = 4/N, got p1={params.p1}")
        return params.p1
    if kind == Kind.FRAC and params.s_c <= 0:
        raise ValueError(f"fractional ground state needs p1 > 4/N (s_c > 0), got s_c={params.s_c}")
    if kind == Kind.MIXED and params.s_c <= 0:
        raise ValueError(f"mixed ground state needs p1 > 4/N, got p1={params.p1}")
    return params.p1


def solve_ground_state(kind, params: PhysParams, grid: GridSpec,
                       opts: SolverOptions | None = None) -> GroundState:
    kind = Kind(kind)
    opts = opts or SolverOptions()
    if params.dim != grid.dim:
        raise ValueError("params and grid disagree on dimension")
    p = _exponent_for(kind, params)
    if kind == Kind.MIXED:
        values, its, hist = _newton_mixed(params, grid, opts)
    else:
        values, its, hist = _petviashvili(kind, params, grid, p, opts)
    if not is_band_limited(values, grid, 1e-10):
        raise ResolutionError(
            f"{kind.value} ground state is not resolved on {grid.points} points over L={grid.extent}",
            hist,
        )
    res = float(np.abs(residual(kind, values, grid, p, params)).max())
    gs = GroundState(kind, Field(grid, values), p, params, res, its, hist)
    log.info("%s ground state: %d iterations, relative residual %.2e", kind.value, its,
             gs.relative_residual)
    return gs


def _petviashvili(kind, params, grid, p, opts):
    sym = linear_symbol(kind, grid, params)
    gamma = (p + 1) / p
    u = initial_guess(grid)
    hist = []
    for it in range(1, opts.max_iters + 1):
        U = np.fft.fftn(u)
        NU = np.fft.fftn(np.abs(u) ** p * u)
        denom = np.real(np.vdot(U, NU))
        if not denom > 0:
            raise TrivialSolutionError("stabilizing factor undefined; iterate lost positivity", hist)
        stab = np.sum(sym * np.abs(U) ** 2) / denom
        u = np.real(np.fft.ifftn(stab**gamma * NU / sym))
        top = np.abs(u).max()
        if top < 1e-14:
            raise TrivialSolutionError("iteration collapsed to zero", hist)
        r = np.abs(residual(kind, u, grid, p, params)).max() / top
        hist.append(r)
        if not np.isfinite(r):
            break
        if r <= opts.tol:
            return u, it, hist
    raise ConvergenceError(
        f"Petviashvili iteration stalled at relative residual {hist[-1]:.3e} after {len(hist)} steps",
        hist,
    )


def _reflect(v):
    """v(-x) on the box-centred grid: node j maps to node -j mod n along every axis."""
    axes = tuple(range(v.ndim))
    return np.roll(np.flip(v, axes), 1, axes)


def _newton_mixed(params, grid, opts):
    p1, pc, N = params.p1, params.p_c, grid.dim
    # height where the 1D first integral vanishes; curvature matched at the peak
    r0 = ((p1 + 2) / pc) ** (1 / (p1 + 2 - pc))
    w = np.sqrt(2 * N * r0 / (r0 ** (p1 + 1) - r0 ** (pc - 1)))
    R = r0 * np.exp(-grid.radius2() / w**2)
    k2 = grid.k2()
    n = R.size
    dense = None
    if n <= 4096:
        eye = np.eye(n).reshape((n,) + grid.shape)
        axes = tuple(range(1, grid.dim + 1))
        dense = np.real(np.fft.ifftn(k2 * np.fft.fftn(eye, axes=axes), axes=axes)).reshape(n, n).T

    def F(v):
        a = np.abs(v)
        return _laplace_apply(v, grid) + a ** (pc - 2) * v - a**p1 * v

    hist = []
    for it in range(1, opts.newton_max_iters + 1):
        res = F(R)
        top = np.abs(R).max()
        if top < 1e-14:
            raise TrivialSolutionError("Newton iterate collapsed to zero", hist)
        hist.append(np.abs(res).max() / top)
        if hist[-1] <= opts.tol:
            return R, it - 1, hist
        a = np.abs(R)
        pot = (pc - 1) * a ** (pc - 2) - (p1 + 1) * a**p1
        if dense is not None:
            d = np.linalg.solve(dense + np.diag(pot.ravel()), -res.ravel())
        else:
            shape = grid.shape
            A = LinearOperator((n, n), matvec=lambda v: (
                _laplace_apply(v.reshape(shape), grid) + pot * v.reshape(shape)).ravel())
            P = LinearOperator((n, n), matvec=lambda v: np.real(
                np.fft.ifftn(np.fft.fftn(v.reshape(shape)) / (k2 + 1))).ravel())
            d, _ = gmres(A, -res.ravel(), M=P, rtol=1e-12, atol=0, restart=200, maxiter=50)
        # keep the update even: this removes the translation zero mode of the linearization
        d = d.reshape(grid.shape)
        d = 0.5 * (d + _reflect(d))
        step, base = 1.0, np.linalg.norm(res)
        while step > 1e-4:
            trial = R + step * d
            if np.linalg.norm(F(trial)) < base:
                break
            step /= 2
        R = trial
    res = np.abs(F(R)).max() / np.abs(R).max()
    hist.append(res)
    if res <= opts.tol:
        return R, opts.newton_max_iters, hist
    raise ConvergenceError(f"Newton iteration stalled at relative residual {res:.3e}", hist)


def sharp_gn_constant(Q: GroundState, rtol: float = 1e-8) -> float:
    """||Q||_2^{-p}, after confirming Q attains equality in the sharp inequality."""
    if Q.kind != Kind.CRITICAL or abs(Q.exponent - 4 / Q.grid.dim) > 1e-12:
        raise ValueError("sharp constant is defined by the critical ground state with p = 4/N")
    p = Q.exponent
    C = norm_L2(Q.field) ** (-p)
    lhs, rhs = gn_sides(Q.field, p, C)
    if abs(lhs - rhs) > rtol * abs(rhs):
        raise ArithmeticError(f"Q does not attain equality: {lhs!r} vs {rhs!r}")
    return C


def gn_sides(f: Field, p: float, C: float) -> tuple[float, float]:
    """Left and right side of (1/(p+2))||f||^{p+2}_{p+2} <= (C/2)||f||_2^p ||grad f||_2^2."""
    lhs = norm_Lp(f, p + 2) ** (p + 2) / (p + 2)
    rhs = C / 2 * norm_L2(f) ** p * norm_gradL2(f) ** 2
    return lhs, rhs


def gn_constant(p: float, grid: GridSpec, opts: SolverOptions | None = None) -> float:
    """Sharp C in ||f||_{p+2}^{p+2} <= C ||f||_2^{p+2-Np/2} ||grad f||_2^{Np/2}, 0 < p <= 4/N.

    The optimiser is the positive solution of -Q'' + Q = Q^{p+1}, so C is the quotient at it.
    """
    N = grid.dim
    if not 0 < p <= 4 / N:
        raise ValueError(f"need 0 < p <= 4/N, got p={p}")
    values, _, _ = _petviashvili(Kind.CRITICAL, None, grid, p, opts or SolverOptions())
    f = Field(grid, values)
    return float(norm_Lp(f, p + 2) ** (p + 2)
                 / (norm_L2(f) ** (p + 2 - N * p / 2) * norm_gradL2(f) ** (N * p / 2)))


def pohozaev_residual(Q: GroundState) -> float:
    if Q.kind != Kind.CRITICAL:
        raise ValueError("Pohozaev identity is checked for the critical ground state only")
    p = Q.exponent
    g2 = norm_gradL2(Q.field) ** 2
    nl = quad(np.abs(Q.values) ** (p + 2), Q.grid) / (p + 2)
    return abs(g2 / 2 - nl) / g2


def threshold_family(Q: GroundState, c: complex, rho: float, grid: GridSpec | None = None,
                     rtol: float = 1e-10) -> Field:
    """c rho^{N/2} Q(rho x) sampled on ``grid`` (default: Q's own grid)."""
    grid = grid or Q.grid
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    vals = c * rho ** (grid.dim / 2) * interpolate_field(Q.field, grid.scaled(rho))
    u0 = Field(grid, vals.astype(complex))
    want = abs(c) ** 2 * Q.mass
    got = norm_L2(u0) ** 2
    if abs(got - want) > rtol * want:
        raise ValueError(
            f"rescaled profile is under-resolved or truncated: mass {got!r} vs {want!r}"
        )
    return u0


def min_rho(Q: GroundState, c: complex, params: PhysParams) -> float:
    """Smallest rho making the energy of c rho^{N/2} Q(rho x) non-positive."""
    if abs(c) <= 1:
        raise ValueError("need |c| > 1")
    N, p1, p2 = params.dim, params.p1, params.p2
    if not 0 < p2 < 4 / N:
        raise ValueError("need 0 < p2 < 4/N")
    a = abs(c)
    lp = quad(np.abs(Q.values) ** (p2 + 2), Q.grid)
    g2 = norm_gradL2(Q.field) ** 2
    ratio = 2 * a**p2 * lp / ((p2 + 2) * (a**p1 - 1) * g2)
    return ratio ** (1 / (2 - N * p2 / 2))


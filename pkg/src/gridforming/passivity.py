"""Per-inverter passivity certification in the frequency domain.

Each inverter, seen from its grid port (input: sign-inverted bus voltage,
output: output current), is certified strictly passive by checking that the
Hermitian part of its closed-loop transfer matrix ``G(jw)`` stays positive
definite over a wide log-spaced frequency grid, with a golden-section
refinement around the worst point.  Because the network interconnection is
itself passive, per-unit certificates compose into a grid-level stability
argument without any coordination between units — an inverter can be
certified before it is plugged in.

A matrix-inequality residual evaluator is included for externally supplied
storage matrices; there is deliberately no semidefinite-programming solver
here, the sweep is the primary path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .certificates import Certificate
from .linearize import (
    LinearizedSystem,
    build_linearized,
    nominal_operating_point,
    solve_equilibrium,
)
from .system import MicrogridSpec

__all__ = [
    "PassivitySweep",
    "hermitian_min_eig",
    "passivity_sweep",
    "certify_inverters",
    "find_passive_kI",
    "PassiveGainSearch",
    "storage_from_riccati",
    "kyp_lmi_residual",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class PassivitySweep:
    """Result of one port-passivity frequency sweep.

    ``min_eig[k]`` is the smallest eigenvalue of ``G(jw_k) + G(jw_k)^H``;
    ``margin`` is the overall minimum after local refinement and
    ``argmin_omega`` where it occurs.  ``stable`` records the Hurwitz
    pre-check of the state matrix; when it fails (and the sweep was not
    forced) the grid arrays are empty and the margin is ``-inf``.
    """

    omega: NDArray[np.float64]
    min_eig: NDArray[np.float64]
    margin: float
    argmin_omega: float
    stable: bool

    @property
    def passed(self) -> bool:
        return self.stable and self.margin > 0.0


def hermitian_min_eig(
    A: NDArray[np.float64],
    B: NDArray[np.float64],
    C: NDArray[np.float64],
    D: NDArray[np.float64] | None,
    omega: float,
) -> float:
    """Smallest eigenvalue of ``G(jw) + G(jw)^H`` for G = C (jwI - A)^-1 B + D."""
    N = A.shape[0]
    G = C @ np.linalg.solve(1j * omega * np.eye(N) - A, B)
    if D is not None:
        G = G + D
    H = G + G.conj().T
    return float(np.linalg.eigvalsh(H)[0])


def passivity_sweep(
    A: NDArray[np.float64],
    B: NDArray[np.float64],
    C: NDArray[np.float64],
    D: NDArray[np.float64] | None = None,
    omega_min: float = 1e-2,
    omega_max: float = 1e6,
    points: int = 1000,
    refine: bool = True,
    require_stable: bool = True,
) -> PassivitySweep:
    """Sweep the port transfer matrix for positive-realness.

    Strict positive-realness presumes an asymptotically stable realization,
    so a non-Hurwitz state matrix fails immediately; pass
    ``require_stable=False`` to sweep anyway (diagnostic curves for unstable
    or marginal tunings).
    """
    if not (0.0 < omega_min < omega_max):
        raise ValueError("need 0 < omega_min < omega_max")
    if points < 2:
        raise ValueError("need at least two grid points")
    stable = bool(np.all(np.linalg.eigvals(A).real < 0.0))
    if not stable and require_stable:
        return PassivitySweep(
            omega=np.empty(0), min_eig=np.empty(0),
            margin=-np.inf, argmin_omega=np.nan, stable=False,
        )
    grid = np.logspace(np.log10(omega_min), np.log10(omega_max), points)
    vals = np.array([hermitian_min_eig(A, B, C, D, w) for w in grid])
    k = int(np.argmin(vals))
    margin, argmin = float(vals[k]), float(grid[k])
    if refine:
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, points - 1)]
        w_star, v_star = _golden_min(
            lambda w: hermitian_min_eig(A, B, C, D, w), np.log(lo), np.log(hi)
        )
        if v_star < margin:
            margin, argmin = v_star, w_star
    return PassivitySweep(
        omega=grid, min_eig=vals, margin=margin, argmin_omega=argmin, stable=stable
    )


def _golden_min(f, log_lo: float, log_hi: float, iters: int = 40) -> tuple[float, float]:
    """Golden-section minimum of ``f(exp(u))`` on a log bracket."""
    a, b = log_lo, log_hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(np.exp(c)), f(np.exp(d))
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(np.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(np.exp(d))
    if fc < fd:
        return float(np.exp(c)), float(fc)
    return float(np.exp(d)), float(fd)


def certify_inverters(
    spec: MicrogridSpec,
    lin: LinearizedSystem | None = None,
    omega_min: float = 1e-2,
    omega_max: float = 1e6,
    points: int = 1000,
    keep_sweep: bool = False,
) -> list[Certificate]:
    """Port-passivity certificate for every inverter in ``spec``.

    Uses the supplied linearization, or linearizes at the no-load nominal
    point (the decentralized certification path — no grid knowledge needed).
    With ``keep_sweep`` each certificate's details carry the full
    :class:`PassivitySweep` under ``"sweep"`` (for plotting or export).
    """
    if lin is None:
        lin = build_linearized(spec, nominal_operating_point(spec))
    certs = []
    for j in range(spec.n_inverters):
        A, B, C = lin.unit(j)
        sw = passivity_sweep(A, B, C, omega_min=omega_min, omega_max=omega_max,
                             points=points)
        details = {
            "argmin_omega": sw.argmin_omega,
            "omega_range": (omega_min, omega_max),
            "points": points,
            "stable": sw.stable,
        }
        if keep_sweep:
            details["sweep"] = sw
        reason = None if sw.stable else "not asymptotically stable"
        certs.append(Certificate(
            name=f"passivity[{j}]", passed=sw.passed, margin=sw.margin,
            details=details, reason=reason,
        ))
    return certs


@dataclass
class PassiveGainSearch:
    """Margin curve over candidate angle-damping gains for one inverter."""

    inverter: int
    points: list[tuple[float, float]]

    @property
    def passing(self) -> list[float]:
        return [k for k, m in self.points if np.isfinite(m) and m > 0.0]


def find_passive_kI(
    spec: MicrogridSpec,
    inverter_index: int,
    kI_range: tuple[float, float] = (2.5, 50.0),
    kI_steps: int = 20,
    omega_min: float = 1e-2,
    omega_max: float = 1e6,
    points: int = 400,
    at_equilibrium: bool = True,
) -> PassiveGainSearch:
    """Sweep the passivity margin of one inverter over its ``k_I`` gain.

    Each candidate replaces the unit's gain, re-solves the system equilibrium
    (unless ``at_equilibrium=False``, which uses the nominal no-load point and
    needs no network solve), rebuilds the linearization, and sweeps.
    Candidates whose equilibrium fails to converge report a NaN margin.
    """
    lo, hi = kI_range
    if not (0.0 < lo <= hi):
        raise ValueError("kI_range must be positive")
    if not (0 <= inverter_index < spec.n_inverters):
        raise ValueError(f"inverter_index {inverter_index} out of range")
    grid = np.linspace(lo, hi, kI_steps) if kI_steps > 1 else np.array([lo])
    out = []
    for kI in grid:
        trial = _with_kI(spec, inverter_index, float(kI))
        try:
            if at_equilibrium:
                eq = solve_equilibrium(trial, secondary_on=True)
                if not eq.converged:
                    out.append((float(kI), float("nan")))
                    continue
                lin = build_linearized(trial, eq.point)
            else:
                lin = build_linearized(trial, nominal_operating_point(trial))
        except (RuntimeError, np.linalg.LinAlgError):
            out.append((float(kI), float("nan")))
            continue
        A, B, C = lin.unit(inverter_index)
        sw = passivity_sweep(A, B, C, omega_min=omega_min, omega_max=omega_max,
                             points=points)
        out.append((float(kI), sw.margin))
    return PassiveGainSearch(inverter=inverter_index, points=out)


def _with_kI(spec: MicrogridSpec, j: int, kI: float) -> MicrogridSpec:
    from dataclasses import replace

    g = spec.gains
    k_I = g.k_I.copy()
    k_I[j] = kI
    gains = replace(g, k_I=k_I)
    return replace(spec, gains=gains, comm_edges=list(spec.comm_edges))


def storage_from_riccati(
    A_cl: NDArray[np.float64],
    B_u: NDArray[np.float64],
    C: NDArray[np.float64],
    epsilon: float = 1e-6,
) -> NDArray[np.float64]:
    """Storage matrix for the port augmented with an ``epsilon*I`` feedthrough.

    With zero feedthrough the passivity matrix inequality is degenerate, so
    no Riccati equation produces a storage for the raw port.  Adding a small
    feedthrough makes the positive-real Riccati equation
    ``A^T P + P A + (P B - C^T)(2 eps I)^-1 (B^T P - C) = 0`` solvable; its
    stabilizing solution satisfies the inequality for the augmented port
    (check with ``kyp_lmi_residual(..., D_u=epsilon*np.eye(m))``) and bounds
    the raw port's supply up to an ``epsilon * ||u||^2`` slack.
    """
    from scipy.linalg import solve_continuous_are

    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    m = B_u.shape[1]
    R = 2.0 * epsilon * np.eye(m)
    P = solve_continuous_are(A_cl, B_u, np.zeros_like(A_cl), -R, s=-C.T)
    return 0.5 * (P + P.T)


def kyp_lmi_residual(
    A_cl: NDArray[np.float64],
    B_u: NDArray[np.float64],
    C: NDArray[np.float64],
    P: NDArray[np.float64],
    epsilon: float,
    D_u: NDArray[np.float64] | None = None,
) -> float:
    """Largest eigenvalue of the passivity matrix inequality for a given P.

    Assembles ``[[P A + A^T P + eps P, P B - C^T], [B^T P - C, -D - D^T]]``;
    a result <= 0 certifies strict passivity with storage ``x^T P x / 2``.
    With a zero feedthrough the lower-right block vanishes, so the nonstrict
    inequality hinges on ``P B = C^T`` along the off-diagonal; the residual is
    reported raw and interpretation is left to the caller.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    P = np.asarray(P, dtype=float)
    if P.shape != A_cl.shape:
        raise ValueError("P must match the state matrix size")
    if np.max(np.abs(P - P.T)) > 1e-10 * max(1.0, np.max(np.abs(P))):
        raise ValueError("P must be symmetric")
    N, m = B_u.shape
    if D_u is None:
        D_u = np.zeros((m, m))
    Sigma = P @ A_cl + A_cl.T @ P
    top = np.hstack([Sigma + epsilon * P, P @ B_u - C.T])
    bot = np.hstack([B_u.T @ P - C, -D_u.T - D_u])
    M = np.vstack([top, bot])
    M = 0.5 * (M + M.T)
    return float(np.linalg.eigvalsh(M)[-1])

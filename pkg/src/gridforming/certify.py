"""Convergence certificate for the distributed secondary (consensus) layer.

The secondary integrators evolve slowly compared with every electrical state,
so over their timescale the network acts as a static map from inverter angles
to injected currents.  Eliminating the fast states yields an ``n x n``
interaction matrix ``F`` (angle -> direct-axis current), from which the
reduced consensus dynamics follow:

    chi_dot = -alpha * L @ M(delta*) @ chi

with ``L`` the communication Laplacian and ``M`` an angle-dependent
correction built from ``F`` and the droop gains.  ``M(0)`` is symmetric
positive definite, so ``H = L @ M(0)`` has one zero eigenvalue and the rest
real positive; the Bauer-Fike eigenvalue-perturbation bound then guarantees
convergence at an operating point ``delta*`` whenever

    ||L @ (M(delta*) - M(0))||_2  <  lambda_{n-1}(H) / K

where ``lambda_{n-1}`` is the second-smallest eigenvalue of ``H`` and ``K``
conditions the bound.  :func:`secondary_consensus_certificate` evaluates that
margin and, alongside it, the sharp check: the spectrum of
``-alpha * L @ M(delta*)`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .certificates import Certificate
from .linearize import Equilibrium
from .network import dq_block, reduced_bus_admittance
from .system import MicrogridSpec, attachment_matrix, comm_laplacian

__all__ = [
    "ReducedModel",
    "ReducedTrajectory",
    "build_Y2",
    "build_F",
    "build_M",
    "reduced_model",
    "secondary_consensus_certificate",
    "consensus_spectrum",
    "reduced_secondary_simulate",
]

#: Relative threshold below which an eigenvalue counts as the consensus zero.
ZERO_EIG_RTOL = 1e-9


def _invert(matrix: NDArray[np.float64], what: str) -> NDArray[np.float64]:
    try:
        return np.linalg.inv(matrix)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"{what} is singular") from err


def build_Y2(
    spec: MicrogridSpec, equilibrium: Equilibrium | None = None
) -> NDArray[np.float64]:
    """Static admittance from the voltage-reference angle to output currents.

    Eliminating the network states and the output-coupling branch at their
    (rotating-frame) steady state leaves a linear relation
    ``i_o = Y2 @ v_ref`` between all stacked DQ reference voltages and all
    output currents.  ``Y2`` is the blockwise inverse of the total impedance
    seen from the reference: coupling branch plus network Thevenin impedance
    minus the reactive-droop voltage shift::

        Y2 = ((R_c - w0 L_c J) + Z_net - n_q E)^-1,   E = [[0, 1], [0, 0]]

    ``Z_net`` is the inverse of the reduced bus admittance, reduced again to
    the inverter ports when passive buses are present.  The operating point
    does not enter (the relation is linear); ``equilibrium`` is accepted for
    signature symmetry with the other certificate builders and only checked
    for size.
    """
    n = spec.n_inverters
    if equilibrium is not None and equilibrium.spec.n_inverters != n:
        raise ValueError(
            f"equilibrium has {equilibrium.spec.n_inverters} inverters, spec has {n}"
        )
    y1 = reduced_bus_admittance(spec.network, spec.omega0)
    z_net = _invert(y1, "reduced bus admittance matrix")
    att = attachment_matrix(spec)
    z_port = att.T @ z_net @ att

    bank, gains, w0 = spec.inverters, spec.gains, spec.omega0
    z_total = z_port.copy()
    for j in range(n):
        s = slice(2 * j, 2 * j + 2)
        z_total[s, s] += dq_block(bank.R_c[j], -w0 * bank.L_c[j])
        z_total[2 * j, 2 * j + 1] -= gains.n_q[j]
    return _invert(z_total, "total output impedance (coupling + network - droop shift)")


def build_F(
    y2: NDArray[np.float64], delta_star: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Angle-to-direct-axis-current interaction matrix.

    ``F[j, k]`` is the direct-axis current at inverter ``j`` produced per
    radian of angle (times ``V_n``) at inverter ``k``: row ``j`` picks the
    D component of ``Y2``'s block row, and column ``k`` applies the angle
    derivative of the rotated reference, ``(-sin d_k, cos d_k)``.  The
    nominal voltage does not appear here; it multiplies ``F`` where the
    reduced matrices are assembled.
    """
    delta_star = np.asarray(delta_star, dtype=float)
    n = delta_star.size
    if y2.shape != (2 * n, 2 * n):
        raise ValueError(f"y2 shape {y2.shape} does not match {n} angles")
    if np.any(np.abs(delta_star) >= np.pi / 2):
        worst = int(np.argmax(np.abs(delta_star)))
        raise ValueError(
            f"angle {delta_star[worst]:.4f} rad at inverter {worst} is outside "
            "(-pi/2, pi/2); the static reduction is only valid inside"
        )
    s, c = np.sin(delta_star), np.cos(delta_star)
    return -y2[0::2, 0::2] * s[None, :] + y2[0::2, 1::2] * c[None, :]


def build_M(
    f_matrix: NDArray[np.float64],
    k_p: NDArray[np.float64],
    k_I: NDArray[np.float64],
    V_n: float,
) -> NDArray[np.float64]:
    """Consensus correction matrix ``M = I + k_I (k_I k_p^-1 + F V_n)^-1 k_p^-1``.

    ``k_p`` and ``k_I`` enter as diagonal matrices.  When the ratio
    ``tau = k_I/k_p`` is uniform the expression equals the diagonal
    similarity ``K_p (I + (I + F V_n / tau)^-1) K_p^-1``; both routes are
    evaluated in that case and cross-checked, which guards against a badly
    conditioned inner inverse.  (They coincide entrywise only when ``k_p``
    itself is uniform.)
    """
    f_matrix = np.asarray(f_matrix, dtype=float)
    n = f_matrix.shape[0]
    k_p = np.broadcast_to(np.asarray(k_p, dtype=float), (n,))
    k_I = np.broadcast_to(np.asarray(k_I, dtype=float), (n,))
    if np.any(k_p <= 0) or np.any(k_I <= 0):
        raise ValueError("droop gains k_p and k_I must be positive")

    tau = k_I / k_p
    inner = np.diag(tau) + f_matrix * V_n
    core = _invert(inner, "gain-shifted interaction matrix (diag(k_I/k_p) + F V_n)")
    m_matrix = np.eye(n) + (k_I[:, None] * core) / k_p[None, :]

    if np.ptp(tau) <= 1e-9 * tau.mean():
        short = np.eye(n) + _invert(
            np.eye(n) + f_matrix * (V_n / tau.mean()),
            "interaction matrix (I + F V_n / tau)",
        )
        alt = (k_p[:, None] * short) / k_p[None, :]
        err = np.max(np.abs(m_matrix - alt))
        if err > 1e-9 * max(np.max(np.abs(alt)), 1.0):
            raise np.linalg.LinAlgError(
                "the two algebraically equal forms of M disagree; the "
                "interaction matrix is too badly conditioned to certify"
            )
    return m_matrix


@dataclass
class ReducedModel:
    """Static reduction of the network as seen by the consensus layer.

    ``y1`` is the reduced bus admittance (2nb x 2nb), ``y2`` the
    reference-to-current admittance at the inverter ports (2n x 2n),
    ``f_star``/``m_star`` the interaction and correction matrices at the
    operating angles ``delta_star``, ``m0`` the correction at zero angles,
    and ``h_hat = L @ m0`` the matrix whose spectrum anchors the certificate.
    """

    y1: NDArray[np.float64]
    y2: NDArray[np.float64]
    f_star: NDArray[np.float64]
    m_star: NDArray[np.float64]
    m0: NDArray[np.float64]
    h_hat: NDArray[np.float64]
    delta_star: NDArray[np.float64]
    laplacian: NDArray[np.float64]


def reduced_model(spec: MicrogridSpec, equilibrium: Equilibrium) -> ReducedModel:
    """Assemble every matrix of the static reduction at a solved equilibrium."""
    n = spec.n_inverters
    if equilibrium.spec.n_inverters != n:
        raise ValueError(
            f"equilibrium has {equilibrium.spec.n_inverters} inverters, spec has {n}"
        )
    delta_star = equilibrium.unpack()["delta"]
    y1 = reduced_bus_admittance(spec.network, spec.omega0)
    y2 = build_Y2(spec, equilibrium)
    gains = spec.gains
    f_star = build_F(y2, delta_star)
    m_star = build_M(f_star, gains.k_p, gains.k_I, gains.V_n)
    f0 = build_F(y2, np.zeros(n))
    m0 = build_M(f0, gains.k_p, gains.k_I, gains.V_n)
    lap = comm_laplacian(spec)
    return ReducedModel(
        y1=y1, y2=y2, f_star=f_star, m_star=m_star, m0=m0,
        h_hat=lap @ m0, delta_star=delta_star, laplacian=lap,
    )


def _require_uniform_tau(spec: MicrogridSpec) -> float:
    tau = spec.gains.k_I / spec.gains.k_p
    if np.ptp(tau) > 1e-9 * tau.mean():
        raise ValueError(
            "the consensus certificate's hypothesis requires a uniform ratio "
            f"k_I/k_p across inverters; got {np.round(tau, 6).tolist()}"
        )
    return float(tau.mean())


def _sym_route(
    m0: NDArray[np.float64], lap: NDArray[np.float64]
) -> tuple[NDArray[np.float64], float] | None:
    """Eigenvalues of ``L @ m0`` via the symmetric similarity ``R L R``.

    ``R = m0^(1/2)`` exists because ``m0`` is symmetric positive definite;
    then ``L @ m0 = R^-1 (R L R) R`` shares the (real) spectrum of the
    symmetric product and is diagonalized by ``R^-1 Q``.  Returns the
    eigenvalues and the condition number of that diagonalizer, or ``None``
    when ``m0`` is not symmetric positive definite.
    """
    if not np.allclose(m0, m0.T, rtol=1e-8, atol=1e-10):
        return None
    w, u = np.linalg.eigh(0.5 * (m0 + m0.T))
    if w[0] <= 0:
        return None
    root = (u * np.sqrt(w)[None, :]) @ u.T
    lam, q = np.linalg.eigh(root @ lap @ root)
    psi = np.linalg.solve(root, q)
    sv = np.linalg.svd(psi, compute_uv=False)
    return lam, float(sv[0] / sv[-1])


def _zero_eig_split(eigs: NDArray[np.complex128]) -> tuple[int, NDArray[np.complex128]]:
    """Count eigenvalues at the consensus zero and return the remainder."""
    scale = np.max(np.abs(eigs)) if eigs.size else 0.0
    is_zero = np.abs(eigs) < ZERO_EIG_RTOL * max(scale, 1.0)
    return int(np.count_nonzero(is_zero)), eigs[~is_zero]


def consensus_spectrum(
    spec: MicrogridSpec, equilibrium: Equilibrium
) -> NDArray[np.complex128]:
    """Spectrum of the reduced consensus dynamics ``-alpha L M(delta*)``.

    This is the sharp stability check (negative real parts apart from one
    zero) and needs no hypothesis on the gain ratios, so it remains
    informative where the certificate proper does not apply.
    """
    model = reduced_model(spec, equilibrium)
    eigs = np.linalg.eigvals(model.laplacian @ model.m_star)
    return -spec.secondary_alpha * eigs


def secondary_consensus_certificate(
    spec: MicrogridSpec, equilibrium: Equilibrium
) -> Certificate:
    """Certify convergence of the secondary layer at a solved equilibrium.

    Evaluates ``margin = lambda_{n-1}(H)/K - ||L (M(delta*) - M(0))||_2``
    with ``H = L M(0)``; a positive margin certifies that the reduced
    consensus dynamics converge at this operating point.  ``K`` is the
    condition number of a diagonalizing basis of ``H`` — both the raw
    eigenbasis and the better-conditioned basis from the symmetric
    similarity ``M(0)^(1/2) L M(0)^(1/2)`` are computed and the smaller is
    used, since the bound holds for any diagonalizer.  The spectrum of
    ``-alpha L M(delta*)`` is reported alongside as the sharp check.

    Raises ``ValueError`` when the gain ratio ``k_I/k_p`` is non-uniform
    (the certificate's hypothesis) and propagates eigendecomposition
    failures.
    """
    tau = _require_uniform_tau(spec)
    model = reduced_model(spec, equilibrium)
    lap = model.laplacian

    delta_m = lap @ (model.m_star - model.m0)
    norm_delta = float(np.linalg.norm(delta_m, 2))

    sym = _sym_route(model.m0, lap)
    w_raw, v_raw = np.linalg.eig(model.h_hat)
    sv = np.linalg.svd(v_raw, compute_uv=False)
    k_raw = float(sv[0] / sv[-1])
    if sym is not None:
        lam, k_sym = sym
        eigs_h = np.sort(lam)[::-1]
    else:
        k_sym = np.inf
        eigs_h = np.sort(w_raw.real)[::-1]
    k_used = min(k_raw, k_sym)

    # Descending order: lambda_1 >= ... >= lambda_n (~ 0); the gap that
    # matters is the second-smallest, lambda_{n-1}.
    lambda_n1 = float(eigs_h[-2])
    margin = lambda_n1 / k_used - norm_delta

    alpha = spec.secondary_alpha
    direct = np.linalg.eigvals(lap @ model.m_star)
    n_zero, rest = _zero_eig_split(direct)
    sharp_ok = n_zero == 1 and bool(np.all(rest.real > 0))

    order = np.argsort(direct.real)
    details = {
        "lambda_second_smallest": lambda_n1,
        "condition_number": k_used,
        "condition_number_raw": k_raw,
        "condition_number_symmetric": k_sym,
        "norm_delta": norm_delta,
        "h_hat_eigs": eigs_h.tolist(),
        "consensus_eigs": [complex(z) for z in (-alpha * direct)[order]],
        "zero_eigenvalues": n_zero,
        "sharp_spectrum_stable": sharp_ok,
        "alpha": float(alpha),
        "tau": tau,
    }
    reason = None
    if margin <= 0:
        reason = (
            f"perturbation bound violated: ||L dM|| = {norm_delta:.6g} >= "
            f"lambda/K = {lambda_n1 / k_used:.6g}"
        )
    return Certificate(
        name="secondary-consensus",
        passed=margin > 0,
        margin=float(margin),
        details=details,
        reason=reason,
    )


@dataclass
class ReducedTrajectory:
    """Trajectory of the reduced consensus state (deviations from setpoint)."""

    t: NDArray[np.float64]
    chi: NDArray[np.float64]
    model: str
    m_matrix: NDArray[np.float64]

    @property
    def final(self) -> NDArray[np.float64]:
        return self.chi[-1]


def reduced_secondary_simulate(
    spec: MicrogridSpec,
    equilibrium: Equilibrium,
    chi0: NDArray[np.float64],
    horizon: float,
    model: str = "feedback-plus",
    samples: int = 1001,
) -> ReducedTrajectory:
    """Integrate the reduced consensus dynamics ``chi_dot = -alpha L M chi``.

    ``chi0`` is the initial deviation from the consensus setpoint.  The step
    map is a matrix exponential, so the integration is exact for the linear
    model regardless of step size.  ``model`` selects the reduction matrix:

    - ``"feedback-plus"`` (default): ``M = I + k_I (k_I + k_p F V_n)^-1``,
      the matrix the certificate bounds.
    - ``"feedback-minus"``: ``M = I - k_I (k_I + k_p F V_n)^-1``, the sign
      produced by substituting this package's static angle response
      ``delta = +(k_I + k_p F V_n)^-1 chi`` into the consensus law.
    - ``"frozen-angle"``: ``M = I``, ignoring the network's angle response
      entirely; this tracks the full system best over horizons too short
      for the angles to follow (see the certificate's docstring for the
      timescale caveat).

    The column span of ``1`` is conserved exactly (the Laplacian's left
    kernel), so the mean of ``chi`` never moves.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    rm = reduced_model(spec, equilibrium)
    n = spec.n_inverters
    chi0 = np.asarray(chi0, dtype=float)
    if chi0.shape != (n,):
        raise ValueError(f"chi0 must have shape ({n},), got {chi0.shape}")

    if model == "feedback-plus":
        m_matrix = rm.m_star
    elif model == "feedback-minus":
        m_matrix = 2.0 * np.eye(n) - rm.m_star
    elif model == "frozen-angle":
        m_matrix = np.eye(n)
    else:
        raise ValueError(
            f"unknown model {model!r}; choose 'feedback-plus', "
            "'feedback-minus' or 'frozen-angle'"
        )

    t = np.linspace(0.0, horizon, samples)
    step = expm(-spec.secondary_alpha * (rm.laplacian @ m_matrix) * (t[1] - t[0]))
    chi = np.empty((samples, n))
    chi[0] = chi0
    for k in range(1, samples):
        chi[k] = step @ chi[k - 1]
    return ReducedTrajectory(t=t, chi=chi, model=model, m_matrix=m_matrix)

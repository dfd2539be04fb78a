"""Distributed secondary frequency control and power-sharing check.

Each inverter holds a correction state ``chi`` added to its frequency
command.  Neighbours on a communication graph exchange ``chi - k_I*delta``
and run consensus on it::

    dchi/dt = -alpha * L @ (chi - k_I * delta)

with ``L`` the communication Laplacian.  At consensus the droop relation
forces ``k_p * i_oD`` equal across units, i.e. active power shared in
inverse proportion to the droop gains, while every frequency returns to
nominal.  The sum of ``chi`` is invariant along trajectories, so the reached
equilibrium depends on the initial correction budget.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .certificates import Certificate

__all__ = ["secondary_derivative", "check_power_sharing"]


def secondary_derivative(
    chi: NDArray[np.float64],
    delta: NDArray[np.float64],
    k_I: NDArray[np.float64],
    alpha: float,
    laplacian: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Consensus update of the frequency-correction states."""
    return -alpha * (laplacian @ (chi - k_I * delta))


def check_power_sharing(
    k_p: NDArray[np.float64],
    i_oD: NDArray[np.float64],
    tol_rel: float = 0.02,
) -> Certificate:
    """Certify proportional power sharing from a steady operating point.

    Passes iff the weighted currents ``kappa_j = k_p_j * i_oD_j`` agree
    pairwise within ``tol_rel`` (relative to each pair's reference entry).
    The certificate reports the weighted currents and the implied per-unit
    current ratios.
    """
    kappa = np.asarray(k_p, dtype=float) * np.asarray(i_oD, dtype=float)
    n = kappa.size
    if n < 2:
        return Certificate(
            name="power-sharing", passed=True, margin=tol_rel,
            details={"kappa": kappa.tolist()},
        )
    worst = 0.0
    for j in range(n):
        if kappa[j] == 0.0:
            return Certificate(
                name="power-sharing", passed=False,
                details={"kappa": kappa.tolist()},
                reason=f"unit {j} carries zero weighted current; ratios undefined",
            )
        for k in range(n):
            if j != k:
                worst = max(worst, abs(kappa[j] - kappa[k]) / abs(kappa[j]))
    return Certificate(
        name="power-sharing",
        passed=worst <= tol_rel,
        margin=tol_rel - worst,
        details={
            "kappa": kappa.tolist(),
            "worst_pairwise_mismatch": worst,
            "current_ratios": (i_oD / i_oD[0]).tolist() if i_oD[0] != 0 else None,
        },
    )

"""Rotating-frame (DQ) primitives shared by the whole toolkit.

All electrical quantities live in a common frame rotating at the nominal
angular frequency.  Each inverter carries an angle ``delta`` relative to that
frame; ``rotation(delta)`` maps local coordinates into the common frame.  The
90-degree rotor ``J`` generates the frame coupling terms (``omega0 * J``) that
appear in every inductor/capacitor equation, and ``rotation_derivative`` is
the exact angle sensitivity used by the linearization.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "J",
    "E_D",
    "E_Q",
    "E_SWAP",
    "rotation",
    "rotation_derivative",
    "block_rotation",
    "block_rotation_derivative",
    "block_j",
    "d_axis_selector",
]

#: 90-degree rotation generator; J @ J = -I and J.T = -J.
J = np.array([[0.0, 1.0], [-1.0, 0.0]])

#: D-axis unit vector (2,).
E_D = np.array([1.0, 0.0])

#: Q-axis unit vector (2,).
E_Q = np.array([0.0, 1.0])

#: Picks the Q component into the D slot: E_SWAP @ (d, q) = (q, 0).
E_SWAP = np.array([[0.0, 1.0], [0.0, 0.0]])


def rotation(delta: float) -> NDArray[np.float64]:
    """Return the 2x2 rotation by angle ``delta`` (local -> common frame)."""
    c, s = np.cos(delta), np.sin(delta)
    return np.array([[c, -s], [s, c]])


def rotation_derivative(delta: float) -> NDArray[np.float64]:
    """Return d/d(delta) of ``rotation(delta)``, which equals J.T @ rotation(delta)."""
    c, s = np.cos(delta), np.sin(delta)
    return np.array([[-s, -c], [c, -s]])


def block_rotation(deltas: NDArray[np.float64]) -> NDArray[np.float64]:
    """Block-diagonal rotation for a vector of angles, shape (2n, 2n)."""
    deltas = np.asarray(deltas, dtype=float)
    n = deltas.size
    if n == 0:
        raise ValueError("empty system: need at least one angle")
    out = np.zeros((2 * n, 2 * n))
    c, s = np.cos(deltas), np.sin(deltas)
    for k in range(n):
        out[2 * k, 2 * k] = c[k]
        out[2 * k, 2 * k + 1] = -s[k]
        out[2 * k + 1, 2 * k] = s[k]
        out[2 * k + 1, 2 * k + 1] = c[k]
    return out


def block_rotation_derivative(deltas: NDArray[np.float64]) -> NDArray[np.float64]:
    """Blockwise d/d(delta_k) of ``block_rotation`` (each block differentiated)."""
    deltas = np.asarray(deltas, dtype=float)
    n = deltas.size
    out = np.zeros((2 * n, 2 * n))
    c, s = np.cos(deltas), np.sin(deltas)
    for k in range(n):
        out[2 * k, 2 * k] = -s[k]
        out[2 * k, 2 * k + 1] = -c[k]
        out[2 * k + 1, 2 * k] = c[k]
        out[2 * k + 1, 2 * k + 1] = -s[k]
    return out


def block_j(n: int) -> NDArray[np.float64]:
    """Block-diagonal stack of ``J``, shape (2n, 2n)."""
    return np.kron(np.eye(n), J)


def d_axis_selector(n: int) -> NDArray[np.float64]:
    """Return the (2n, n) selector with one D-axis unit column per unit.

    Column j is the D-axis basis vector of unit j, so ``selector.T @ x``
    collects the D components of a stacked DQ vector and
    ``selector @ v`` embeds per-unit scalars on the D axes.
    """
    return np.kron(np.eye(n), E_D.reshape(2, 1))

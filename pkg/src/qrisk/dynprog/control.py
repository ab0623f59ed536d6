"""Closed-form optimal controls of the two-level atom.

Both laws share one algebraic form in the gradient of a value function
``W(n, x, y, z)``:

    u_r = 2 kappa_f / (b n) * (x W_z - z W_x)
    u_i = 2 kappa_f / (b n) * (z W_y - y W_z)

For the risk-sensitive problem ``W = (n / mu) log(S / n)`` with ``S`` the
multiplicative value; for the risk-neutral problem ``W`` is the additive
value itself.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..model import TwoLevelParams
from . import _kernels_py
from .grid import RISK_SENSITIVE, ValueGrid


class ControlValue(NamedTuple):
    u: complex
    clamped: bool


def _stationary(p: TwoLevelParams, n, x, y, z, gradW) -> ControlValue:
    if not n > 0:
        raise ValueError(f"mass n must be positive, got {n}")
    wx, wy, wz = gradW
    scale = 2.0 * p.kappa_f / (p.b * n)
    u = complex(scale * (x * wz - z * wx), scale * (z * wy - y * wz))
    if abs(u) > p.u_max:
        return ControlValue(u * (p.u_max / abs(u)), True)
    return ControlValue(u, False)


def optimal_u_rs(p: TwoLevelParams, n: float, x: float, y: float, z: float, gradW) -> ControlValue:
    """Risk-sensitive stationary control from the gradient of ``W^mu``."""
    return _stationary(p, n, x, y, z, gradW)


def optimal_u_rn(p: TwoLevelParams, n: float, x: float, y: float, z: float, gradW) -> ControlValue:
    """Risk-neutral stationary control from the gradient of ``W``."""
    return _stationary(p, n, x, y, z, gradW)


def slice_gradient(vg: ValueGrid, slice_index: int, X, Y, Z):
    """Central-difference gradient of one stored value slice at normalized coordinates."""
    lat = vg.lattice
    return _kernels_py.value_gradient(vg.values[slice_index], lat.lo, lat.h, np.asarray(X, dtype=float),
                                      np.asarray(Y, dtype=float), np.asarray(Z, dtype=float))


def grad_w(vg: ValueGrid, n: float, x: float, y: float, z: float, slice_index: int = 0):
    """Gradient of ``W`` with respect to ``(x, y, z)`` at an unnormalized state.

    With ``S = n V(x/n, y/n, z/n)`` the chain rule gives ``grad W = grad V /
    (mu V)`` in the risk-sensitive case and ``grad W = grad V`` otherwise.
    """
    X, Y, Z = x / n, y / n, z / n
    g = [float(c) for c in slice_gradient(vg, slice_index, X, Y, Z)]
    if vg.mode == RISK_SENSITIVE:
        lat = vg.lattice
        v = float(lat.interpolate(vg.values[slice_index], X, Y, Z))
        return tuple(c / (vg.params.mu * v) for c in g)
    return tuple(g)


def optimal_u(vg: ValueGrid, n: float, x: float, y: float, z: float, slice_index: int = 0) -> ControlValue:
    """Closed-form control read off a solved value grid."""
    law = optimal_u_rs if vg.mode == RISK_SENSITIVE else optimal_u_rn
    return law(vg.params, n, x, y, z, grad_w(vg, n, x, y, z, slice_index))

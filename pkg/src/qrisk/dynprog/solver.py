"""Backward dynamic programming for the two-level atom.

Positive homogeneity of both value functions in the unnormalized state lets
the induction run on normalized Bloch coordinates. Removing the mass ``n``
by a change of measure leaves the normalized risk-sensitive filter driven by
its innovation, plus a running factor ``exp(mu a (1 - Z)/2 + mu b |u|^2/2)``
(risk-sensitive) or an additive rate ``(a (1 - Z) + b |u|^2)/2``
(risk-neutral). The diffusion is replaced by a two-point chain and
off-lattice successors are interpolated.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from ..model import TwoLevelParams, resolve_step
from . import kernels
from .grid import (
    RISK_NEUTRAL,
    RISK_SENSITIVE,
    DPConfig,
    Lattice,
    Policy,
    ValueGrid,
    control_grid,
    terminal_values,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Backward induction failed (instability or non-finite values)."""

    def __init__(self, message: str, max_dt: float | None = None):
        super().__init__(message)
        self.max_dt = max_dt


def kernel_params(p: TwoLevelParams, dt_dp: float, mode: str) -> tuple:
    mu = p.mu if mode == RISK_SENSITIVE else 0.0
    return (float(p.kappa_f), float(p.kappa_s * np.sqrt(p.eta)), float(mu), float(p.a), float(p.b),
            float(dt_dp), float(p.u_max), 0 if mode == RISK_SENSITIVE else 1)


def max_stable_dt(p: TwoLevelParams, lattice: Lattice, mode: str) -> float:
    """Largest DP step whose drift displacement stays within one lattice spacing."""
    X, Y, Z = lattice.X, lattice.Y, lattice.Z
    mu = p.mu if mode == RISK_SENSITIVE else 0.0
    ha = 0.5 * mu * p.a
    f0 = np.sqrt((-0.5 * X + ha * X * Z) ** 2 + (-0.5 * Y + ha * Y * Z) ** 2
                 + (-Z - 1.0 - ha * (1.0 - Z * Z)) ** 2)
    k2 = 2.0 * p.kappa_f
    fu = p.u_max * k2 * np.sqrt(2.0 * Z * Z + X * X + Y * Y)
    fmax = float(np.max(f0 + fu))
    return lattice.spacing / fmax


def backward_solve(p: TwoLevelParams, config: DPConfig | None = None, mode: str = RISK_SENSITIVE,
                   start: tuple | None = None) -> tuple[ValueGrid, Policy]:
    """Solve the dynamic programming equation backwards from ``T`` to ``0``.

    ``start=(k, values, u_r, u_i)`` restarts the induction from time index
    ``k`` with the given slices as terminal data.
    """
    config = config or DPConfig()
    if mode not in (RISK_SENSITIVE, RISK_NEUTRAL):
        raise ValueError(f"unknown mode {mode!r}")
    dt_dp, K = resolve_step(p.T, config.dt_dp)
    lattice = Lattice(config.n_x, config.n_y, config.n_z)
    limit = max_stable_dt(p, lattice, mode)
    if dt_dp > limit:
        raise SolverError(f"dt_dp={dt_dp:.4g} violates the stability bound; need dt_dp <= {limit:.4g}",
                          max_dt=limit)
    kern = kernels.get(config.backend)
    prm = kernel_params(p, dt_dp, mode)
    controls = control_grid(config.n_u, p.u_max)

    if start is None:
        k0 = K
        _, _, Zf = lattice.node_states()
        V = np.ascontiguousarray(terminal_values(p, mode, Zf, config.rn_terminal))
        ur = np.zeros(lattice.shape)
        ui = np.zeros(lattice.shape)
    else:
        k0, V, ur, ui = start
        V, ur, ui = (np.ascontiguousarray(a, dtype=float).copy() for a in (V, ur, ui))

    stored = [k for k in range(0, K + 1) if k % config.store_every == 0 or k == K]
    stored = [k for k in stored if k <= k0]
    slots = {k: s for s, k in enumerate(stored)}
    values = np.empty((len(stored),) + lattice.shape)
    pol_r = np.zeros_like(values)
    pol_i = np.zeros_like(values)
    if k0 in slots:
        values[slots[k0]], pol_r[slots[k0]], pol_i[slots[k0]] = V, ur, ui

    V_new, ur_new, ui_new = V.copy(), ur.copy(), ui.copy()
    t_start = time.perf_counter()
    for k in range(k0 - 1, -1, -1):
        do_search = 1 if k % config.search_every == 0 else 0
        kern.backward_step(V, ur, ui, lattice.idx, lattice.X, lattice.Y, lattice.Z, lattice.lo,
                           lattice.h, controls, prm, do_search, V_new, ur_new, ui_new)
        if not np.all(np.isfinite(V_new[lattice.active])):
            bad = np.argwhere(~np.isfinite(V_new) & lattice.active)[0]
            raise SolverError(f"non-finite value at node {tuple(bad)} time index {k}")
        V, V_new = V_new, V
        ur, ur_new = ur_new, ur
        ui, ui_new = ui_new, ui
        if k in slots:
            values[slots[k]], pol_r[slots[k]], pol_i[slots[k]] = V, ur, ui
        if k % 200 == 0:
            log.debug("dp %s step %d/%d (%.1fs)", mode, K - k, K, time.perf_counter() - t_start)

    times = np.array([k * dt_dp for k in stored])
    step_index = np.array(stored, dtype=np.int64)
    provenance = "grid-search" if K >= 1 else "closed-form"
    vg = ValueGrid(p, config, mode, times, step_index, values, lattice)
    pol = Policy(p, config, mode, times, step_index, pol_r, pol_i, provenance, lattice)
    return vg, pol


def rs_backward_solve(p: TwoLevelParams, config: DPConfig | None = None) -> tuple[ValueGrid, Policy]:
    return backward_solve(p, config, RISK_SENSITIVE)


def rn_backward_solve(p: TwoLevelParams, config: DPConfig | None = None) -> tuple[ValueGrid, Policy]:
    return backward_solve(p, config, RISK_NEUTRAL)

"""Lattice over normalized Bloch coordinates and the value/policy containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model import TwoLevelParams
from . import _kernels_py

RISK_SENSITIVE = "rs"
RISK_NEUTRAL = "rn"


@dataclass(frozen=True)
class DPConfig:
    """Discretization settings for backward induction.

    ``search_every`` sets how often (in DP steps, aligned on absolute time
    index) the full control grid is scanned; other steps refine from the
    previous step's control and the closed-form minimizer.
    """

    n_x: int = 41
    n_y: int = 41
    n_z: int = 41
    dt_dp: float = 2.5e-3
    n_u: int = 21
    search_every: int = 40
    store_every: int = 20
    rn_terminal: str = "linear-c"
    backend: str = "auto"

    def __post_init__(self):
        for name in ("n_x", "n_y", "n_z"):
            if getattr(self, name) < 3:
                raise ValueError(f"{name} must be >= 3")
        if self.n_u < 2:
            raise ValueError("n_u must be >= 2")
        if not self.dt_dp > 0:
            raise ValueError("dt_dp must be positive")
        if self.search_every < 1 or self.store_every < 1:
            raise ValueError("search_every and store_every must be >= 1")
        if self.rn_terminal not in ("linear-c", "exp-c"):
            raise ValueError(f"rn_terminal must be 'linear-c' or 'exp-c', got {self.rn_terminal!r}")

    def as_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)


class Lattice:
    """Regular grid on ``[-1, 1]^3``; nodes near the unit ball are active.

    Active nodes are those within ``1 + |h|`` of the origin (``|h|`` the cell
    diagonal), which covers every corner used when interpolating inside the
    ball. Nodes outside the ball carry the state of their radial projection.
    """

    def __init__(self, n_x: int, n_y: int, n_z: int):
        self.shape = (n_x, n_y, n_z)
        self.axes = tuple(np.linspace(-1.0, 1.0, n) for n in self.shape)
        self.lo = np.array([-1.0, -1.0, -1.0])
        self.h = np.array([2.0 / (n - 1) for n in self.shape])
        gx, gy, gz = np.meshgrid(*self.axes, indexing="ij")
        r = np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)
        band = 1.0 + float(np.sqrt(np.sum(self.h ** 2))) + 1e-12
        self.active = r <= band
        self.inside = r <= 1.0 + 1e-12
        self.idx = np.ascontiguousarray(np.argwhere(self.active).astype(np.intp))
        X, Y, Z = (g[self.active] for g in (gx, gy, gz))
        X, Y, Z = _kernels_py.clamp_ball(X, Y, Z)
        self.X = np.ascontiguousarray(X)
        self.Y = np.ascontiguousarray(Y)
        self.Z = np.ascontiguousarray(Z)
        self._grid = (gx, gy, gz)

    @property
    def spacing(self) -> float:
        return float(self.h.min())

    def node_states(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full-array node states with outside nodes projected onto the sphere."""
        return _kernels_py.clamp_ball(*self._grid)

    def nearest_index(self, X: float, Y: float, Z: float) -> tuple[int, int, int]:
        return tuple(int(round((c - self.lo[a]) / self.h[a])) for a, c in enumerate((X, Y, Z)))

    def interpolate(self, V: np.ndarray, X, Y, Z):
        """Trilinear interpolation of a node array at (clamped) points."""
        return _kernels_py.trilinear(V, self.lo, self.h, *_kernels_py.clamp_ball(
            np.asarray(X, dtype=float), np.asarray(Y, dtype=float), np.asarray(Z, dtype=float)))


def control_grid(n_u: int, u_max: float) -> np.ndarray:
    """Square ``n_u x n_u`` grid over ``[-u_max, u_max]^2`` restricted to the disc."""
    axis = np.linspace(-u_max, u_max, n_u)
    ur, ui = np.meshgrid(axis, axis, indexing="ij")
    keep = ur ** 2 + ui ** 2 <= u_max ** 2 * (1 + 1e-12)
    return np.ascontiguousarray(np.stack([ur[keep], ui[keep]], axis=1))


def terminal_values(p: TwoLevelParams, mode: str, Z: np.ndarray, rn_terminal: str = "linear-c") -> np.ndarray:
    """Terminal value per unit mass at normalized coordinate ``Z``.

    Risk-sensitive: ``<pi, exp(mu C2)> = (1+Z)/2 + (1-Z)/2 e^{mu c}``.
    Risk-neutral: ``(1-Z)/2 c`` or, with ``exp-c``, ``(1-Z)/2 e^c``.
    """
    if mode == RISK_SENSITIVE:
        return 0.5 * (1.0 + Z) + 0.5 * (1.0 - Z) * math.exp(p.mu * p.c)
    if rn_terminal == "exp-c":
        return 0.5 * (1.0 - Z) * math.exp(p.c)
    return 0.5 * (1.0 - Z) * p.c


@dataclass
class ValueGrid:
    """Value per unit mass on the lattice at stored times.

    The unnormalized value of ``sigma`` with Bloch coefficients
    ``(n, x, y, z)`` is ``n * value(x/n, y/n, z/n, t)``.
    """

    params: TwoLevelParams
    config: DPConfig
    mode: str
    times: np.ndarray
    step_index: np.ndarray
    values: np.ndarray
    lattice: Lattice = field(repr=False)

    def slice_at(self, t: float) -> int:
        """Index of the stored slice nearest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def value(self, X, Y, Z, t: float = 0.0):
        return self.lattice.interpolate(self.values[self.slice_at(t)], X, Y, Z)

    def unnormalized_value(self, n, x, y, z, t: float = 0.0):
        """Value of an unnormalized state via positive homogeneity."""
        return n * self.value(x / n, y / n, z / n, t)

    def w_mu(self, n, x, y, z, t: float = 0.0):
        """``W = (n/mu) log(S/n)`` for risk-sensitive grids; ``S`` itself for risk-neutral."""
        s = self.unnormalized_value(n, x, y, z, t)
        if self.mode == RISK_SENSITIVE:
            return (n / self.params.mu) * np.log(s / n)
        return s


@dataclass
class Policy:
    """Feedback control on the same lattice and stored times as a ValueGrid."""

    params: TwoLevelParams
    config: DPConfig
    mode: str
    times: np.ndarray
    step_index: np.ndarray
    u_r: np.ndarray
    u_i: np.ndarray
    provenance: str
    lattice: Lattice = field(repr=False)

    def slice_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def lookup(self, X, Y, Z, t: float):
        """Control at normalized coordinates; trilinear in space, nearest in time."""
        s = self.slice_at(t)
        ur = self.lattice.interpolate(self.u_r[s], X, Y, Z)
        ui = self.lattice.interpolate(self.u_i[s], X, Y, Z)
        mag = np.sqrt(ur * ur + ui * ui)
        umax = self.params.u_max
        scale = np.where(mag > umax, umax / np.maximum(mag, umax), 1.0)
        return ur * scale, ui * scale

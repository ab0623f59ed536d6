"""Problem definition: operators, cost weights, drift operators.

Natural units (hbar = 1). The two-level atom sets the time unit through
``kappa_f**2 + kappa_s**2 = 1``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .operators import (
    PROJ_DOWN,
    PROJ_UP,
    SIGMA_MINUS,
    DimensionError,
    as_operator,
    commutator,
    dag,
    decoherence_apply,
)

log = logging.getLogger(__name__)

KAPPA_TOL = 1e-12
PSD_TOL = 1e-12


class ModelError(ValueError):
    """Invalid model parameters."""


class ControlDomainError(ValueError):
    """Control value outside the admissible disc."""


def _check_psd(op: np.ndarray, name: str) -> None:
    if np.max(np.abs(op - dag(op)), initial=0.0) > PSD_TOL:
        raise ModelError(f"{name} is not Hermitian")
    if np.linalg.eigvalsh(op)[0] < -PSD_TOL:
        raise ModelError(f"{name} is not non-negative")


def resolve_step(T: float, dt: float) -> tuple[float, int]:
    """Return ``(dt, n_steps)`` with ``n_steps * dt == T``.

    A ``dt`` that does not divide ``T`` is rounded to the nearest divisor and
    a warning is logged.
    """
    if not (T > 0 and dt > 0):
        raise ModelError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    if dt > T:
        raise ModelError(f"dt={dt} exceeds horizon T={T}")
    n = max(1, int(round(T / dt)))
    if abs(n * dt - T) > 1e-12 * T:
        new_dt = T / n
        log.warning("dt=%g does not divide T=%g; using dt=%r (%d steps)", dt, T, new_dt, n)
        dt = new_dt
    return dt, n


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full problem definition for a finite-dimensional monitored system.

    ``c1_scalar(u)`` is the coefficient of the identity component of
    ``C1(u)`` that the filters integrate exactly as a scalar factor; models
    without such a split leave it ``None``.
    """

    L: np.ndarray
    M: np.ndarray
    hamiltonian: Callable[[complex], np.ndarray]
    c1: Callable[[complex], np.ndarray]
    c2: np.ndarray
    mu: float = 0.0
    eta: float = 1.0
    T: float = 5.0
    dt: float = 1e-3
    u_max: float = 5.0
    c1_scalar: Callable[[complex], float] | None = None
    pi0: np.ndarray | None = None
    params: "TwoLevelParams | None" = None
    n_steps: int = field(init=False)

    def __post_init__(self):
        d = self.L.shape[0]
        as_operator(self.L, d)
        as_operator(self.M, d)
        as_operator(self.c2, d)
        _check_psd(self.c2, "C2")
        _check_psd(np.asarray(self.c1(0.0)), "C1(0)")
        if self.mu < 0:
            raise ModelError(f"risk parameter mu must be >= 0, got {self.mu}")
        if not 0.0 <= self.eta <= 1.0:
            raise ModelError(f"efficiency eta must lie in [0, 1], got {self.eta}")
        if self.u_max <= 0:
            raise ModelError("u_max must be positive")
        dt, n = resolve_step(self.T, self.dt)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "n_steps", n)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    def check_control(self, u: complex) -> complex:
        if abs(u) > self.u_max * (1 + 1e-12):
            raise ControlDomainError(f"|u| = {abs(u):.6g} exceeds u_max = {self.u_max}")
        return u

    def with_(self, **changes) -> "ModelSpec":
        """Copy with fields replaced; two-level models are rebuilt from params."""
        if self.params is not None:
            return two_level_model(dataclasses.replace(self.params, **changes), pi0=self.pi0)
        changes.pop("n_steps", None)
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TwoLevelParams:
    """Parameters of the laser-driven two-level atom with homodyne monitoring."""

    kappa_f: float = math.sqrt(0.5)
    kappa_s: float = math.sqrt(0.5)
    a: float = 1.0
    b: float = 0.5
    c: float = 1.0
    mu: float = 0.1
    eta: float = 1.0
    T: float = 5.0
    dt: float = 1e-3
    u_max: float = 5.0

    def __post_init__(self):
        if self.kappa_f < 0 or self.kappa_s < 0:
            raise ModelError("couplings must be non-negative")
        if abs(self.kappa_f ** 2 + self.kappa_s ** 2 - 1.0) > KAPPA_TOL:
            raise ModelError(
                f"kappa_f^2 + kappa_s^2 must equal 1, got {self.kappa_f ** 2 + self.kappa_s ** 2!r}")
        if self.a < 0 or self.c < 0:
            raise ModelError("cost weights a and c must be >= 0")
        if not self.b > 0:
            raise ModelError("control weight b must be > 0")
        if self.mu < 0:
            raise ModelError("mu must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ModelError("eta must lie in [0, 1]")
        if not self.u_max > 0:
            raise ModelError("u_max must be > 0")
        dt, _ = resolve_step(self.T, self.dt)
        object.__setattr__(self, "dt", dt)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash of the parameter values."""
        blob = json.dumps({k: float(v).hex() for k, v in self.as_dict().items()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def two_level_model(p: TwoLevelParams, pi0: np.ndarray | None = None) -> ModelSpec:
    """Build the two-level atom model.

    ``L = kappa_f s-``, ``M = kappa_s s-``, ``H(u) = i(u* L - u L^+)``,
    ``C1(u) = a |down><down| + b|u|^2/2 I``, ``C2 = c |down><down|``.
    The initial state defaults to the excited state ``|up><up|``.
    """
    L = p.kappa_f * SIGMA_MINUS
    M = p.kappa_s * SIGMA_MINUS
    Ld = dag(L)

    def hamiltonian(u: complex) -> np.ndarray:
        return 1j * (np.conj(u) * L - u * Ld)

    def c1(u: complex) -> np.ndarray:
        return p.a * PROJ_DOWN + (0.5 * p.b * abs(u) ** 2) * np.eye(2, dtype=complex)

    def c1_scalar(u: complex) -> float:
        return 0.5 * p.b * abs(u) ** 2

    return ModelSpec(L=L, M=M, hamiltonian=hamiltonian, c1=c1, c2=p.c * PROJ_DOWN,
                     mu=p.mu, eta=p.eta, T=p.T, dt=p.dt, u_max=p.u_max,
                     c1_scalar=c1_scalar, pi0=PROJ_UP.copy() if pi0 is None else np.array(pi0, dtype=complex),
                     params=p)


def k_of_u(spec: ModelSpec, u: complex) -> np.ndarray:
    """``K(u) = i H(u) + (L^+ L + M^+ M) / 2``."""
    spec.check_control(u)
    L, M = spec.L, spec.M
    return 1j * spec.hamiltonian(u) + 0.5 * (dag(L) @ L) + 0.5 * (dag(M) @ M)


def k_mu_of_u(spec: ModelSpec, u: complex) -> np.ndarray:
    """``K^mu(u) = K(u) - mu C1(u) / 2``; exactly ``K(u)`` when ``mu == 0``."""
    k = k_of_u(spec, u)
    if spec.mu == 0:
        return k
    return k - 0.5 * spec.mu * spec.c1(u)


def k_mu_state_part(spec: ModelSpec, u: complex) -> tuple[np.ndarray, float]:
    """Split ``K^mu(u)`` into a non-scalar operator and a scalar growth rate.

    Returns ``(K', r)`` with ``K^mu(u) = K' - (r / 2) I``, so the filter
    drift ``-K^mu s - s K^mu+`` equals ``-K' s - s K'^+ + r s``.
    """
    if spec.c1_scalar is None or spec.mu == 0:
        return k_mu_of_u(spec, u), 0.0
    s = spec.c1_scalar(u)
    k = k_of_u(spec, u)
    c1_rest = spec.c1(u) - s * np.eye(spec.dim, dtype=complex)
    return k - 0.5 * spec.mu * c1_rest, spec.mu * s


def master_rhs(spec: ModelSpec, rho: np.ndarray, u: complex) -> np.ndarray:
    """Right-hand side of the master equation ``-i[H, rho] + D[L] rho + D[M] rho``."""
    if rho.shape != spec.L.shape:
        raise DimensionError(rho.shape[0], spec.dim, "state and model")
    spec.check_control(u)
    return (-1j * commutator(spec.hamiltonian(u), rho)
            + decoherence_apply(spec.L, rho) + decoherence_apply(spec.M, rho))

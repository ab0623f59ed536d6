"""Conditional-state dynamics in matrix form and two-level Bloch form.

Matrix filters work for any dimension. Each step is one Euler-Maruyama
update of the linear (unnormalized) filter equation, and the normalized
filters divide the result by its trace, which keeps ``pi = sigma / tr sigma``
exact along a shared record.

When the model declares an identity component of ``C1(u)`` it contributes a
scalar growth ``exp(mu * c1_scalar(u) * dt)`` per step. The filters apply it
as an exact factor, matching the Bloch form, where that growth is carried
separately as ``log_factor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelSpec, TwoLevelParams, k_mu_of_u, k_mu_state_part, k_of_u
from .operators import (
    TRACE_TOL,
    StateError,
    bloch_to_matrix,
    commutator,
    dag,
    decoherence_apply,
    h_apply,
    h_tilde_apply,
    hermitize,
)
from .stochastic import NumericalError

# Euler-Maruyama steps leave the state space by O(dt * g^2 * xi^2) for a
# diffusion coefficient g and a standard normal draw xi. At the default step
# these excursions stay near 1e-2 of the trace; an eigenvalue below
# -POSITIVITY_GUARD * trace means the step is too large for the model.
POSITIVITY_GUARD = 0.05


def _guard(sigma: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(sigma)):
        raise NumericalError("non-finite filter state")
    tr = np.trace(sigma).real
    lam = np.linalg.eigvalsh(sigma)[0]
    if lam < -POSITIVITY_GUARD * max(abs(tr), 1.0):
        raise StateError(f"filter state lost positivity (min eigenvalue {lam:.3e}); reduce dt")
    return sigma


def _linear_step(spec: ModelSpec, sigma, kmat, rate, dy, gain=1.0):
    L, M = spec.L, spec.M
    drift = -kmat @ sigma - sigma @ dag(kmat) + L @ sigma @ dag(L) + M @ sigma @ dag(M)
    out = sigma + drift * spec.dt + gain * (M @ sigma + sigma @ dag(M)) * dy
    if rate:
        out = out * math.exp(rate * spec.dt)
    return _guard(hermitize(out))


def filter_drift(spec: ModelSpec, sigma: np.ndarray, u: complex, mu: float | None = None) -> np.ndarray:
    """Drift ``-K^mu s - s K^mu+ + L s L^+ + M s M^+`` (no scalar factoring)."""
    spec_mu = spec if mu is None else spec.with_(mu=mu)
    k = k_mu_of_u(spec_mu, u)
    L, M = spec.L, spec.M
    return -k @ sigma - sigma @ dag(k) + L @ sigma @ dag(L) + M @ sigma @ dag(M)


def filter_drift_superop(spec: ModelSpec, sigma: np.ndarray, u: complex) -> np.ndarray:
    """Same drift assembled as ``-i[H,s] + D[L]s + D[M]s + (mu/2) Ht[C1] s``."""
    out = (-1j * commutator(spec.hamiltonian(u), sigma)
           + decoherence_apply(spec.L, sigma) + decoherence_apply(spec.M, sigma))
    if spec.mu:
        out = out + 0.5 * spec.mu * h_tilde_apply(spec.c1(u), sigma)
    return out


def belavkin_unnormalized_step(spec: ModelSpec, sigma: np.ndarray, u: complex, dy2: float) -> np.ndarray:
    """Linear stochastic master equation driven by the raw record increment."""
    return _linear_step(spec, sigma, k_of_u(spec, u), 0.0, dy2)


def rs_filter_step(spec: ModelSpec, sigma_mu: np.ndarray, u: complex, dy2: float) -> np.ndarray:
    """Risk-sensitive filter step (``K`` replaced by ``K^mu``)."""
    kmat, rate = k_mu_state_part(spec, u)
    return _linear_step(spec, sigma_mu, kmat, rate, dy2)


def rs_filter_eta_step(spec: ModelSpec, sigma_mu: np.ndarray, u: complex, dz: float) -> np.ndarray:
    """Risk-sensitive filter for a record detected with efficiency ``spec.eta``."""
    if not 0.0 <= spec.eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {spec.eta}")
    kmat, rate = k_mu_state_part(spec, u)
    return _linear_step(spec, sigma_mu, kmat, rate, dz, gain=math.sqrt(spec.eta))


def measurement_mean(spec: ModelSpec, pi: np.ndarray) -> float:
    """``tr[(M + M^+) pi]``."""
    return float(np.real(np.trace((spec.M + dag(spec.M)) @ pi)))


def _normalize(sigma: np.ndarray) -> np.ndarray:
    tr = np.trace(sigma).real
    if not tr > 0:
        raise StateError(f"cannot normalize state with trace {tr!r}")
    return sigma / tr


def _require_normalized(pi: np.ndarray) -> None:
    tr = np.trace(pi).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StateError(f"normalized filter needs tr = 1, got {tr!r}")


def belavkin_step(spec: ModelSpec, pi: np.ndarray, u: complex, dW: float) -> tuple[np.ndarray, float]:
    """Normalized Belavkin filter driven by its innovation ``dW``.

    Returns the updated state and the record increment
    ``dy2 = tr[(M + M^+) pi] dt + dW``.
    """
    _require_normalized(pi)
    dy2 = measurement_mean(spec, pi) * spec.dt + dW
    return _normalize(belavkin_unnormalized_step(spec, pi, u, dy2)), dy2


def rs_filter_normalized_step(spec: ModelSpec, pi_mu: np.ndarray, u: complex,
                              dW_mu: float) -> tuple[np.ndarray, float, float]:
    """Normalized risk-sensitive filter under its own innovation.

    Returns ``(pi_mu', dy2, tr(C1(u) pi_mu))``; the last entry is the running
    cost rate for the physical-measure cost estimator.
    """
    _require_normalized(pi_mu)
    rate = float(np.real(np.trace(spec.c1(u) @ pi_mu)))
    dy2 = measurement_mean(spec, pi_mu) * spec.dt + dW_mu
    return _normalize(rs_filter_step(spec, pi_mu, u, dy2)), dy2, rate


def normalized_drift_superop(spec: ModelSpec, pi: np.ndarray, u: complex) -> np.ndarray:
    """Drift of the normalized risk-sensitive state, ``... + (mu/2) H[C1] pi``."""
    out = (-1j * commutator(spec.hamiltonian(u), pi)
           + decoherence_apply(spec.L, pi) + decoherence_apply(spec.M, pi))
    if spec.mu:
        out = out + 0.5 * spec.mu * h_apply(spec.c1(u), pi)
    return out


# ---------------------------------------------------------------------------
# two-level Bloch form


@dataclass(frozen=True)
class BlochState:
    """Coefficients of ``sigma = (n I + x sx + y sy + z sz)/2 * exp(log_factor)``.

    Fields may be floats or equally shaped arrays (a batch of paths).
    """

    n: float | np.ndarray = 1.0
    x: float | np.ndarray = 0.0
    y: float | np.ndarray = 0.0
    z: float | np.ndarray = 1.0
    log_factor: float | np.ndarray = 0.0

    def reconstruct(self) -> np.ndarray:
        return bloch_to_matrix(self.n, self.x, self.y, self.z) * math.exp(self.log_factor)

    @classmethod
    def from_matrix(cls, sigma: np.ndarray) -> "BlochState":
        from .operators import matrix_to_bloch
        return cls(*matrix_to_bloch(sigma))

    def normalized(self) -> tuple:
        return self.x / self.n, self.y / self.n, self.z / self.n

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.x, self.y, self.z, self.log_factor], dtype=float)


def _check_finite(*arrs):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite Bloch coefficient")


def bloch_rs_coeffs(p: TwoLevelParams, n, x, y, z, ur, ui, dy2, mu: float | None = None):
    """Euler update of the risk-sensitive coefficient equations.

    Returns ``(n', x', y', z', dlog)`` where ``dlog = mu b |u|^2 dt / 2``.
    The record coefficients are scaled by ``sqrt(eta)``.
    """
    mu = p.mu if mu is None else mu
    dt = p.dt
    kf, ks = p.kappa_f, p.kappa_s
    if p.eta != 1.0:
        ks = ks * math.sqrt(p.eta)
    ma = mu * p.a
    dn = 0.5 * ma * (n - z) * dt + ks * x * dy2
    dx = (-0.5 * (1 - ma) * x + 2 * kf * ur * z) * dt + ks * (n + z) * dy2
    dyy = (-0.5 * (1 - ma) * y - 2 * kf * ui * z) * dt
    dz = (-(1 - 0.5 * ma) * z - (1 + 0.5 * ma) * n - 2 * kf * (ur * x - ui * y)) * dt - ks * x * dy2
    dlog = 0.5 * mu * p.b * (ur * ur + ui * ui) * dt
    out = (n + dn, x + dx, y + dyy, z + dz)
    _check_finite(*out)
    return out + (dlog,)


def bloch_rn_coeffs(p: TwoLevelParams, n, x, y, z, ur, ui, dy2):
    """Euler update of the standard (risk-neutral) coefficient equations."""
    dt = p.dt
    kf, ks = p.kappa_f, p.kappa_s
    if p.eta != 1.0:
        ks = ks * math.sqrt(p.eta)
    dn = ks * x * dy2
    dx = (-0.5 * x + 2 * kf * ur * z) * dt + ks * (n + z) * dy2
    dyy = (-0.5 * y - 2 * kf * ui * z) * dt
    dz = (-z - n - 2 * kf * (ur * x - ui * y)) * dt - ks * x * dy2
    out = (n + dn, x + dx, y + dyy, z + dz)
    _check_finite(*out)
    return out


def bloch_rs_step(p: TwoLevelParams, s: BlochState, u, dy2) -> BlochState:
    n, x, y, z, dlog = bloch_rs_coeffs(p, s.n, s.x, s.y, s.z, np.real(u), np.imag(u), dy2)
    return BlochState(n, x, y, z, s.log_factor + dlog)


def bloch_rn_step(p: TwoLevelParams, s: BlochState, u, dy2) -> BlochState:
    n, x, y, z = bloch_rn_coeffs(p, s.n, s.x, s.y, s.z, np.real(u), np.imag(u), dy2)
    return replace(s, n=n, x=x, y=y, z=z)


def bloch_normalized_step(p: TwoLevelParams, X, Y, Z, ur, ui, dw, mu: float | None = None):
    """Normalized two-level filter under its innovation.

    The record increment is ``dy2 = sqrt(eta) kappa_s X dt + dw``. Returns
    ``(X', Y', Z', dy2)``.
    """
    gain = p.kappa_s * math.sqrt(p.eta)
    dy2 = gain * X * p.dt + dw
    n, x, y, z, _ = bloch_rs_coeffs(p, 1.0, X, Y, Z, ur, ui, dy2, mu=mu)
    if np.any(n <= 0):
        raise NumericalError("normalization mass became non-positive; reduce dt")
    return x / n, y / n, z / n, dy2


def normalized_drift(p: TwoLevelParams, X, Y, Z, ur, ui, mu: float | None = None):
    """Drift of the normalized Bloch vector under the innovation measure."""
    mu = p.mu if mu is None else mu
    ha = 0.5 * mu * p.a
    kf2 = 2 * p.kappa_f
    fx = -0.5 * X + ha * X * Z + kf2 * ur * Z
    fy = -0.5 * Y + ha * Y * Z - kf2 * ui * Z
    fz = -Z - 1.0 - ha * (1.0 - Z * Z) - kf2 * (ur * X - ui * Y)
    return fx, fy, fz


def normalized_diffusion(p: TwoLevelParams, X, Y, Z):
    """Diffusion coefficients of the normalized Bloch vector (scalar noise)."""
    g = p.kappa_s * math.sqrt(p.eta)
    return g * (1.0 + Z - X * X), -g * X * Y, -g * X * (1.0 + Z)

"""Dense small-matrix operator algebra.

Operators and states are plain complex ``numpy`` arrays of shape ``(d, d)``.
The helpers here validate them and apply the three superoperators that the
filtering equations are written in:

    D[c] rho  = c rho c^+ - (c^+ c rho + rho c^+ c) / 2
    Ht[c] rho = c rho + rho c^+
    H[c] rho  = c rho + rho c^+ - rho tr(c rho + rho c^+)
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-12
STATE_HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_SLACK = 1e-9


class DimensionError(ValueError):
    """Raised when operator shapes are incompatible."""

    def __init__(self, left: int, right: int, what: str = "operands"):
        super().__init__(f"dimension mismatch between {what}: {left} vs {right}")
        self.left = left
        self.right = right


class StateError(ValueError):
    """Raised when a matrix violates the state invariants."""


IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# lowering operator: |up> = (1, 0) -> |down> = (0, 1)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
PROJ_UP = np.array([[1, 0], [0, 0]], dtype=complex)
PROJ_DOWN = np.array([[0, 0], [0, 1]], dtype=complex)


def dag(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def as_operator(entries, dim: int | None = None, hermitian: bool = False) -> np.ndarray:
    """Validate and return ``entries`` as a complex square matrix.

    With ``hermitian=True`` the matrix must equal its adjoint elementwise to
    within ``HERMITIAN_TOL``.
    """
    a = np.array(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(a.shape[0] if a.ndim else 0, a.shape[-1] if a.ndim else 0,
                             "operator rows and columns")
    if dim is not None and a.shape[0] != dim:
        raise DimensionError(a.shape[0], dim, "operator and declared dimension")
    if hermitian and np.max(np.abs(a - dag(a)), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("operator flagged hermitian is not self-adjoint")
    return a


def check_state(rho: np.ndarray, normalized: bool = True,
                positivity_slack: float = POSITIVITY_SLACK) -> np.ndarray:
    """Check the state-matrix invariants and return ``rho`` unchanged."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise StateError(f"state must be square, got shape {rho.shape}")
    asym = np.max(np.abs(rho - dag(rho)))
    if asym > STATE_HERMITIAN_TOL:
        raise StateError(f"state not Hermitian (max asymmetry {asym:.3e})")
    if normalized:
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateError(f"normalized state has trace {tr!r}")
    lam = np.linalg.eigvalsh(0.5 * (rho + dag(rho)))[0]
    scale = max(1.0, abs(np.trace(rho).real))
    if lam < -positivity_slack * scale:
        raise StateError(f"state not positive (min eigenvalue {lam:.3e})")
    return rho


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + dag(rho))


def _same_dim(c: np.ndarray, rho: np.ndarray) -> None:
    if c.shape != rho.shape:
        raise DimensionError(c.shape[0], rho.shape[0], "operator and state")


def decoherence_apply(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator ``D[c] rho``."""
    _same_dim(c, rho)
    cd = dag(c)
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def h_tilde_apply(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Linear measurement superoperator ``c rho + rho c^+``."""
    _same_dim(c, rho)
    return c @ rho + rho @ dag(c)


def h_apply(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Nonlinear (normalized) measurement superoperator.

    Requires ``tr rho = 1``; the trace correction assumes it.
    """
    _same_dim(c, rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise StateError(f"h_apply needs a normalized state, got trace {tr!r}")
    lin = h_tilde_apply(c, rho)
    return lin - rho * np.trace(lin)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def expectation(rho: np.ndarray, x: np.ndarray) -> float:
    """Real part of the pairing ``<rho, x> = tr(rho^+ x)``."""
    return float(np.real(np.trace(dag(rho) @ x)))


def bloch_to_matrix(n: float, x: float, y: float, z: float) -> np.ndarray:
    """``(n I + x sx + y sy + z sz) / 2``."""
    return 0.5 * np.array([[n + z, x - 1j * y], [x + 1j * y, n - z]], dtype=complex)


def matrix_to_bloch(rho: np.ndarray) -> tuple[float, float, float, float]:
    """Inverse of :func:`bloch_to_matrix` for a 2x2 Hermitian matrix."""
    if rho.shape != (2, 2):
        raise DimensionError(rho.shape[0], 2, "state and two-level space")
    n = float(np.real(rho[0, 0] + rho[1, 1]))
    z = float(np.real(rho[0, 0] - rho[1, 1]))
    x = float(2.0 * np.real(rho[1, 0]))
    y = float(2.0 * np.imag(rho[1, 0]))
    return n, x, y, z

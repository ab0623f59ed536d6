"""Closed-loop simulation, master-equation propagation and cost estimators.

The estimators simulate the two-level atom in Bloch form, vectorized over a
batch of paths. Path ``i`` always draws its noise from stream ``i`` of the
master seed and batches have a fixed layout, so every estimate is a
deterministic function of ``(seed, n_paths)`` whatever the thread count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynprog import kernels
from .dynprog._kernels_py import clamp_ball
from .dynprog.grid import RISK_SENSITIVE, Policy
from .filters import belavkin_step, bloch_rs_coeffs
from .model import ModelError, ModelSpec, TwoLevelParams, master_rhs
from .operators import matrix_to_bloch
from .stochastic import NoiseStream, NumericalError, TrajectoryRecord, increment_block, wiener_increments

LOG_PAYOFF_CAP = 700.0
TRACE_DRIFT_TOL = 1e-8
DEFAULT_BATCH = 500

STANDARD = "standard"
RISK_SENSITIVE_FILTER = "risk-sensitive"


# ---------------------------------------------------------------------------
# master equation


def propagate_master(spec: ModelSpec, rho0: np.ndarray, control_signal: Callable[[float], complex] | None = None,
                     T: float | None = None, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the master equation under an open-loop control.

    Returns ``(times, states)`` with ``states`` of shape ``(n + 1, d, d)``.
    """
    T = spec.T if T is None else T
    dt = spec.dt if dt is None else dt
    n = max(1, int(round(T / dt)))
    dt = T / n
    u_of = control_signal or (lambda t: 0.0)
    rho = np.array(rho0, dtype=complex)
    times = np.arange(n + 1) * dt
    out = np.empty((n + 1,) + rho.shape, dtype=complex)
    out[0] = rho
    tr0 = np.trace(rho).real
    for k in range(n):
        t = times[k]
        u0, uh, u1 = u_of(t), u_of(t + 0.5 * dt), u_of(t + dt)
        k1 = master_rhs(spec, rho, u0)
        k2 = master_rhs(spec, rho + 0.5 * dt * k1, uh)
        k3 = master_rhs(spec, rho + 0.5 * dt * k2, uh)
        k4 = master_rhs(spec, rho + dt * k3, u1)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if abs(np.trace(rho).real - tr0) > TRACE_DRIFT_TOL:
            raise NumericalError("master equation trace drifted", k + 1)
        out[k + 1] = rho
    return times, out


# ---------------------------------------------------------------------------
# controllers


@dataclass
class ControllerHandle:
    """Causal feedback law: a filter fed with record increments plus a control law.

    The filter state is the normalized Bloch vector ``(X, Y, Z)`` of either
    the standard conditional state or the risk-sensitive state with risk
    parameter ``filter_mu``. The law is one of ``"zero"``, ``"constant"``
    or ``"policy"``. All methods act on arrays holding one entry per path.
    """

    law: str = "zero"
    filter_kind: str = STANDARD
    constant: complex = 0.0
    policy: Policy | None = None
    filter_mu: float | None = None
    name: str = ""
    _trilinear: Callable = field(init=False, repr=False)

    def __post_init__(self):
        if self.law not in ("zero", "constant", "policy"):
            raise ValueError(f"unknown control law {self.law!r}")
        if self.filter_kind not in (STANDARD, RISK_SENSITIVE_FILTER):
            raise ValueError(f"unknown filter kind {self.filter_kind!r}")
        if self.law == "policy" and self.policy is None:
            raise ValueError("policy law needs a Policy")
        self._trilinear = kernels.get(None).trilinear
        if not self.name:
            self.name = self.law if self.law != "policy" else f"policy-{self.policy.mode}"

    def mu_for(self, p: TwoLevelParams) -> float:
        if self.filter_kind == STANDARD:
            return 0.0
        if self.filter_mu is not None:
            return self.filter_mu
        return self.policy.params.mu if self.policy is not None else p.mu

    def initial_state(self, spec: ModelSpec, n_paths: int):
        _, x, y, z = matrix_to_bloch(spec.pi0)
        return tuple(np.full(n_paths, v) for v in (x, y, z))

    def control(self, X, Y, Z, t: float):
        if self.law == "zero":
            return np.zeros_like(X), np.zeros_like(X)
        if self.law == "constant":
            return np.full_like(X, self.constant.real), np.full_like(X, self.constant.imag)
        pol = self.policy
        s = pol.slice_at(t)
        lat = pol.lattice
        Xc, Yc, Zc = clamp_ball(X, Y, Z)
        ur = self._trilinear(pol.u_r[s], lat.lo, lat.h, Xc, Yc, Zc)
        ui = self._trilinear(pol.u_i[s], lat.lo, lat.h, Xc, Yc, Zc)
        mag = np.sqrt(ur * ur + ui * ui)
        umax = pol.params.u_max
        scale = np.where(mag > umax, umax / np.maximum(mag, umax), 1.0)
        return ur * scale, ui * scale

    def advance(self, p: TwoLevelParams, X, Y, Z, ur, ui, dy2):
        """Feed one record increment; returns the updated normalized state."""
        m, x, y, z, _ = bloch_rs_coeffs(p, 1.0, X, Y, Z, ur, ui, dy2, mu=self.mu_for(p))
        return x / m, y / m, z / m


def zero_controller(filter_kind: str = STANDARD) -> ControllerHandle:
    return ControllerHandle("zero", filter_kind)


def constant_controller(u: complex, filter_kind: str = STANDARD) -> ControllerHandle:
    return ControllerHandle("constant", filter_kind, constant=complex(u), name=f"constant-{complex(u)}")


def policy_controller(policy: Policy, filter_kind: str | None = None) -> ControllerHandle:
    """Controller of the separated structure: its filter feeds the policy lookup.

    Risk-sensitive policies default to the risk-sensitive filter, risk-neutral
    policies to the standard filter.
    """
    if filter_kind is None:
        filter_kind = RISK_SENSITIVE_FILTER if policy.mode == RISK_SENSITIVE else STANDARD
    return ControllerHandle("policy", filter_kind, policy=policy)


# ---------------------------------------------------------------------------
# single closed-loop path


def _params(spec: ModelSpec) -> TwoLevelParams:
    if spec.params is None:
        raise ModelError("this operation needs a two-level model")
    return spec.params


def run_closed_loop(spec: ModelSpec, controller: ControllerHandle, stream: NoiseStream) -> TrajectoryRecord:
    """Simulate the conditional state under feedback along one path.

    The truth is the matrix-form normalized filter driven by its innovation;
    the controller sees only the resulting record increments.
    Rows of ``states`` and ``controller_states`` are ``(n, x, y, z)``.
    """
    p = _params(spec)
    n = spec.n_steps
    dt = spec.dt
    dW = wiener_increments(stream, dt, n)
    times = np.arange(n + 1) * dt
    pi = np.array(spec.pi0, dtype=complex)
    cX, cY, cZ = controller.initial_state(spec, 1)
    states = np.empty((n + 1, 4))
    cstates = np.empty((n + 1, 4))
    controls = np.empty(n, dtype=complex)
    dys = np.empty(n)
    running = np.empty(n)
    states[0] = matrix_to_bloch(pi)
    cstates[0] = (1.0, cX[0], cY[0], cZ[0])
    acc = 0.0
    for k in range(n):
        ur, ui = controller.control(cX, cY, cZ, times[k])
        u = complex(ur[0], ui[0])
        rate = float(np.real(np.trace(spec.c1(u) @ pi)))
        acc += rate * dt
        running[k] = acc
        pi, dy2 = belavkin_step(spec, pi, u, dW[k])
        cX, cY, cZ = controller.advance(p, cX, cY, cZ, ur, ui, dy2)
        controls[k] = u
        dys[k] = dy2
        states[k + 1] = matrix_to_bloch(pi)
        cstates[k + 1] = (1.0, cX[0], cY[0], cZ[0])
    return TrajectoryRecord(times, dys, states, cstates, controls, {"running_cost": running},
                            (stream.master_seed, stream.stream_index))


# ---------------------------------------------------------------------------
# batched estimators


@dataclass
class CostReport:
    estimator: str
    estimate: float
    stderr: float
    n_paths: int
    seed: int
    model_hash: str
    wall_time: float = 0.0
    saturated: int = 0
    controller: str = ""

    def as_dict(self, with_time: bool = False) -> dict:
        out = {k: getattr(self, k) for k in
               ("estimator", "estimate", "stderr", "n_paths", "seed", "model_hash", "saturated", "controller")}
        if with_time:
            out["wall_time"] = self.wall_time
        return out


def _log_terminal_rs(p: TwoLevelParams, mu: float, Z):
    """``log((1+Z)/2 + (1-Z)/2 e^{mu c})`` without forming ``e^{mu c}``."""
    with np.errstate(divide="ignore"):
        up = np.log(0.5 * np.maximum(1.0 + Z, 0.0))
        down = np.log(0.5 * np.maximum(1.0 - Z, 0.0))
    return np.logaddexp(up, down + mu * p.c)


def _terminal_rn(p: TwoLevelParams, Z, terminal: str):
    if terminal == "exp-c":
        return 0.5 * (1.0 - Z) * math.exp(p.c)
    if terminal != "linear-c":
        raise ValueError(f"unknown terminal cost {terminal!r}")
    return 0.5 * (1.0 - Z) * p.c


def _simulate_batch(spec: ModelSpec, controller: ControllerHandle, dW: np.ndarray, kind: str,
                    terminal: str) -> np.ndarray:
    """Per-path payoffs of one batch.

    ``kind`` selects the truth dynamics and the payoff:

    * ``rs-reference``: unnormalized risk-sensitive filter driven by a pure
      Wiener record; returns the log of the payoff.
    * ``rs-physical``: normalized risk-sensitive state driven by its own
      innovation; returns the log of the payoff.
    * ``rn-reference``: unnormalized standard filter, additive cost weighted
      by the mass.
    * ``rn-physical``: normalized standard filter, additive cost.
    """
    p = _params(spec)
    B, n = dW.shape
    dt = spec.dt
    mu_truth = p.mu if kind.startswith("rs") else 0.0
    physical = kind.endswith("physical")
    gain = p.kappa_s * math.sqrt(p.eta)
    X, Y, Z = controller.initial_state(spec, B)
    X, Y, Z = X.copy(), Y.copy(), Z.copy()
    cX, cY, cZ = controller.initial_state(spec, B)
    logn = np.zeros(B)
    acc = np.zeros(B)
    ha = 0.5 * p.a
    hb = 0.5 * p.b
    for k in range(n):
        ur, ui = controller.control(cX, cY, cZ, k * dt)
        u2 = ur * ur + ui * ui
        rate = ha * (1.0 - Z) + hb * u2
        if kind == "rn-reference":
            acc += np.exp(logn) * rate * dt
        elif kind == "rn-physical":
            acc += rate * dt
        elif kind == "rs-physical":
            acc += mu_truth * rate * dt
        dy2 = gain * X * dt + dW[:, k] if physical else dW[:, k]
        m, x, y, z, dlog = bloch_rs_coeffs(p, 1.0, X, Y, Z, ur, ui, dy2, mu=mu_truth)
        if np.any(m <= 0):
            raise NumericalError("filter mass became non-positive; reduce dt", k)
        X, Y, Z = x / m, y / m, z / m
        if kind == "rs-reference":
            logn += np.log(m)
            acc += dlog
        elif kind == "rn-reference":
            logn += np.log(m)
        cX, cY, cZ = controller.advance(p, cX, cY, cZ, ur, ui, dy2)
    if kind == "rs-reference":
        return logn + acc + _log_terminal_rs(p, mu_truth, Z)
    if kind == "rs-physical":
        return acc + _log_terminal_rs(p, mu_truth, Z)
    if kind == "rn-reference":
        return acc + np.exp(logn) * _terminal_rn(p, Z, terminal)
    return acc + _terminal_rn(p, Z, terminal)


def simulate_payoffs(spec: ModelSpec, controller: ControllerHandle, n_paths: int, seed: int, kind: str,
                     terminal: str = "linear-c", threads: int = 1, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """Per-path payoffs in path-index order (log payoffs for risk-sensitive kinds)."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    starts = list(range(0, n_paths, batch_size))

    def run(start):
        idx = range(start, min(start + batch_size, n_paths))
        dW = increment_block(seed, idx, spec.dt, spec.n_steps)
        return _simulate_batch(spec, controller, dW, kind, terminal)

    if threads == 1 or len(starts) == 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as ex:
            parts = list(ex.map(run, starts))
    return np.concatenate(parts)


def _report(name: str, values: np.ndarray, spec: ModelSpec, seed: int, t0: float, controller: ControllerHandle,
            saturated: int = 0) -> CostReport:
    n = len(values)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    digest = spec.params.digest() if spec.params is not None else ""
    return CostReport(name, float(np.mean(values)), se, n, int(seed), digest, time.perf_counter() - t0,
                      saturated, controller.name)


def _exp_capped(logs: np.ndarray) -> tuple[np.ndarray, int]:
    sat = int(np.count_nonzero(logs > LOG_PAYOFF_CAP))
    return np.exp(np.minimum(logs, LOG_PAYOFF_CAP)), sat


def estimate_cost_rs_reference(spec: ModelSpec, controller: ControllerHandle, n_paths: int, seed: int,
                               threads: int = 1, batch_size: int = DEFAULT_BATCH) -> CostReport:
    """``E0[exp(mu b/2 int |u|^2) <sigma_T, exp(mu C2)>]`` over a Wiener record."""
    _check_paths(n_paths)
    t0 = time.perf_counter()
    values, sat = _exp_capped(simulate_payoffs(spec, controller, n_paths, seed, "rs-reference", threads=threads,
                                               batch_size=batch_size))
    return _report("rs-ref", values, spec, seed, t0, controller, sat)


def estimate_cost_rs_physical(spec: ModelSpec, controller: ControllerHandle, n_paths: int, seed: int,
                              threads: int = 1, batch_size: int = DEFAULT_BATCH) -> CostReport:
    """``E^mu[exp(mu int tr(C1 pi^mu)) <pi^mu_T, exp(mu C2)>]`` under the innovation of ``pi^mu``."""
    _check_paths(n_paths)
    t0 = time.perf_counter()
    values, sat = _exp_capped(simulate_payoffs(spec, controller, n_paths, seed, "rs-physical", threads=threads,
                                               batch_size=batch_size))
    return _report("rs-phys", values, spec, seed, t0, controller, sat)


def estimate_cost_rn(spec: ModelSpec, controller: ControllerHandle, n_paths: int, seed: int,
                     measure: str = "physical", terminal: str = "linear-c", threads: int = 1,
                     batch_size: int = DEFAULT_BATCH) -> CostReport:
    """Additive cost ``int <state, C1(u)> dt + <state_T, C2>`` under either measure."""
    _check_paths(n_paths)
    if measure not in ("physical", "reference"):
        raise ValueError(f"measure must be 'physical' or 'reference', got {measure!r}")
    t0 = time.perf_counter()
    kind = "rn-physical" if measure == "physical" else "rn-reference"
    values = simulate_payoffs(spec, controller, n_paths, seed, kind, terminal=terminal, threads=threads,
                              batch_size=batch_size)
    return _report("rn-phys" if measure == "physical" else "rn-ref", values, spec, seed, t0, controller)


def _check_paths(n_paths: int) -> None:
    if n_paths < 100:
        raise ValueError(f"estimators need n_paths >= 100, got {n_paths}")

"""Monte Carlo check of the risk-sensitive filter generator.

For a cylindrical functional ``f(sigma) = g(<sigma, X_1>, ..., <sigma, X_k>)``
with ``<sigma, X> = tr(sigma X)`` the generator of the risk-sensitive filter
is

    Lf = sum_j g_j <sigma, A(X_j)> + 1/2 sum_jk g_jk <sigma, B(X_j)> <sigma, B(X_k)>

where ``A(X) = -K^mu+ X - X K^mu + L^+ X L + M^+ X M`` and
``B(X) = M^+ X + X M``. The oracle compares this assembly with the finite
difference ``(E0[f(sigma_h)] - f(sigma)) / h`` of one filter step under a
Wiener record.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..filters import rs_filter_step
from ..model import ModelSpec, k_mu_of_u
from ..operators import dag
from ..stochastic import NoiseStream


@dataclass(frozen=True)
class Cylindrical:
    """``f(sigma) = g(<sigma, X_1>, ..., <sigma, X_k>)`` with its first two derivatives.

    ``g``, ``grad`` and ``hess`` take a vector of pairings; ``g`` must also
    accept a ``(k, n)`` array and return ``n`` values.
    """

    observables: Sequence[np.ndarray]
    g: Callable
    grad: Callable
    hess: Callable

    def pairings(self, sigma: np.ndarray) -> np.ndarray:
        return np.array([np.trace(sigma @ X).real for X in self.observables])

    def __call__(self, sigma: np.ndarray) -> float:
        return float(self.g(self.pairings(sigma)))


def linear_functional(X: np.ndarray) -> Cylindrical:
    return Cylindrical([X], lambda v: v[0], lambda v: np.array([1.0]), lambda v: np.zeros((1, 1)))


def square_functional(X: np.ndarray) -> Cylindrical:
    return Cylindrical([X], lambda v: v[0] ** 2, lambda v: np.array([2.0 * v[0]]), lambda v: np.array([[2.0]]))


@dataclass(frozen=True)
class GeneratorEstimate:
    mc: float
    stderr: float
    analytic: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            # no diffusion contribution: the estimate is exact up to rounding
            close = abs(self.mc - self.analytic) <= 1e-9 * max(1.0, abs(self.analytic))
            return 0.0 if close else float("inf")
        return abs(self.mc - self.analytic) / self.stderr


def analytic_generator(spec: ModelSpec, f: Cylindrical, sigma: np.ndarray, u: complex) -> float:
    k = k_mu_of_u(spec, u)
    L, M = spec.L, spec.M
    v = f.pairings(sigma)
    drift = np.array([np.trace(sigma @ (-dag(k) @ X - X @ k + dag(L) @ X @ L + dag(M) @ X @ M)).real
                      for X in f.observables])
    diff = np.array([np.trace(sigma @ (dag(M) @ X + X @ M)).real for X in f.observables])
    return float(np.dot(f.grad(v), drift) + 0.5 * diff @ f.hess(v) @ diff)


def generator_oracle(spec: ModelSpec, f: Cylindrical, sigma: np.ndarray, u: complex, h: float,
                     n_paths: int, seed: int = 0) -> GeneratorEstimate:
    """MC finite-difference generator estimate next to the analytic value.

    One filter step of length ``h`` is affine in the record increment, so
    the step is evaluated at ``dy = 0`` and ``dy = sqrt(h)`` and the batch
    is formed by interpolation.
    """
    step_spec = spec.with_(dt=h, T=h)
    s0 = rs_filter_step(step_spec, sigma, u, 0.0)
    s1 = rs_filter_step(step_spec, sigma, u, np.sqrt(h))
    xi = NoiseStream(seed, 0).standard_normal(n_paths)
    v0 = f.pairings(s0)
    v1 = f.pairings(s1)
    vals = f.g(v0[:, None] + (v1 - v0)[:, None] * xi[None, :])
    diffs = (vals - f(sigma)) / h
    mc = float(np.mean(diffs))
    se = float(np.std(diffs, ddof=1) / np.sqrt(n_paths))
    return GeneratorEstimate(mc, se, analytic_generator(spec, f, sigma, u))

"""Seeded Wiener streams and the Euler-Maruyama stepping contract."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NumericalError(FloatingPointError):
    """Non-finite or otherwise invalid numbers produced during integration."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


@dataclass
class NoiseStream:
    """Replayable Gaussian stream keyed by ``(master_seed, stream_index)``.

    Stream ``i`` of a Monte Carlo run is derived from the master seed alone,
    so paths can be simulated in any order or batch layout.
    """

    master_seed: int
    stream_index: int = 0
    position: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        seq = np.random.SeedSequence(entropy=int(self.master_seed) & (2**64 - 1),
                                     spawn_key=(int(self.stream_index),))
        self._rng = np.random.Generator(np.random.PCG64(seq))
        if self.position:
            skip, self.position = self.position, 0
            self.standard_normal(skip)

    def standard_normal(self, size: int | None = None):
        out = self._rng.standard_normal(size)
        self.position += 1 if size is None else int(size)
        return out

    def replay(self) -> "NoiseStream":
        """Fresh stream with the same key, positioned at the start."""
        return NoiseStream(self.master_seed, self.stream_index)


def wiener_increment(stream: NoiseStream, dt: float) -> float:
    """One ``N(0, dt)`` draw; advances the stream by one position."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return float(np.sqrt(dt) * stream.standard_normal())


def wiener_increments(stream: NoiseStream, dt: float, n: int) -> np.ndarray:
    """``n`` consecutive increments; identical to ``n`` calls of :func:`wiener_increment`."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * stream.standard_normal(n)


def increment_block(master_seed: int, indices, dt: float, n_steps: int) -> np.ndarray:
    """Increments for a batch of streams, shape ``(len(indices), n_steps)``."""
    idx = list(indices)
    out = np.empty((len(idx), n_steps))
    for row, i in enumerate(idx):
        out[row] = wiener_increments(NoiseStream(master_seed, i), dt, n_steps)
    return out


def em_step(state, drift: Callable, diffusion: Callable, dW, dt: float, step: int | None = None):
    """Euler-Maruyama step ``state + drift(state) dt + diffusion(state) dW``.

    ``diffusion(state)`` may return ``None`` for a deterministic step.
    """
    out = state + drift(state) * dt
    g = diffusion(state)
    if g is not None:
        out = out + g * dW
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite state after Euler-Maruyama step", step)
    return out


@dataclass
class TrajectoryRecord:
    """Write-once record of one closed-loop path.

    ``states`` and ``controller_states`` hold ``n_steps + 1`` rows; the
    increment and control series hold ``n_steps``.
    """

    times: np.ndarray
    y_increments: np.ndarray
    states: np.ndarray
    controller_states: np.ndarray
    controls: np.ndarray
    cost_accumulators: dict
    stream: tuple[int, int]

    def __post_init__(self):
        n = len(self.times) - 1
        if len(self.states) != n + 1 or len(self.controller_states) != n + 1:
            raise ValueError("state series must have one row per time point")
        if len(self.y_increments) != n or len(self.controls) != n:
            raise ValueError("increment and control series must have one row per step")

"""Discrete current controllers and the command transport delay.

Both controllers take measurements in the PLL frame and return a converter
voltage command ``(v_id, v_iq)``. Integrators use forward Euler.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .synthesis import SynthesisResult


@dataclass(frozen=True)
class SisoPiConfig:
    k_p: float
    k_i: float
    decoupling: bool = True
    voltage_feedforward: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.k_p) and math.isfinite(self.k_i)) or self.k_p < 0 or self.k_i < 0:
            raise ValueError(f"SISO gains must be finite and non-negative: {self}")

    @classmethod
    def nominal(cls, z_base: float = 2.5, **kw) -> "SisoPiConfig":
        """Nominal gains (0.13 p.u., 11.25 p.u./s) scaled to ohms by ``z_base``."""
        return cls(0.13 * z_base, 11.25 * z_base, **kw)


@dataclass(frozen=True)
class MimoPiConfig:
    k_p: np.ndarray
    k_i: np.ndarray
    ff_map: np.ndarray
    voltage_feedforward: bool = False

    @classmethod
    def from_synthesis(cls, res: SynthesisResult, **kw) -> "MimoPiConfig":
        return cls(res.k_p.copy(), res.k_i.copy(), res.feedforward_map.copy(), **kw)


@dataclass(frozen=True)
class ControllerState:
    z_d: float = 0.0
    z_q: float = 0.0
    last_output: tuple[float, float] = (0.0, 0.0)


def siso_step(cfg: SisoPiConfig, st: ControllerState, meas, setpoint, omega: float,
              l_f: float, dt: float) -> tuple[tuple[float, float], ControllerState]:
    """Conventional per-axis PI with cross-coupling decoupling.

    ``meas`` is ``(i_id, i_iq, v_od, v_oq)``; the voltage terms are added as
    feedforward when enabled (pass filtered values to model a measurement
    filter).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    i_id, i_iq, v_od, v_oq = meas
    e_d = setpoint[0] - i_id
    e_q = setpoint[1] - i_iq
    v_id = cfg.k_p * e_d + cfg.k_i * st.z_d
    v_iq = cfg.k_p * e_q + cfg.k_i * st.z_q
    if cfg.decoupling:
        v_id -= omega * l_f * i_iq
        v_iq += omega * l_f * i_id
    if cfg.voltage_feedforward:
        v_id += v_od
        v_iq += v_oq
    cmd = (v_id, v_iq)
    return cmd, ControllerState(st.z_d + e_d * dt, st.z_q + e_q * dt, cmd)


def mimo_step(cfg: MimoPiConfig, st: ControllerState, meas, setpoint,
              dt: float) -> tuple[tuple[float, float], ControllerState]:
    """``u = K_P (x* - x) + K_I z + M x*`` plus optional voltage feedforward."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    i_id, i_iq, v_od, v_oq = meas
    e_d = setpoint[0] - i_id
    e_q = setpoint[1] - i_iq
    kp, ki, ff = cfg.k_p, cfg.k_i, cfg.ff_map
    v_id = (kp[0, 0] * e_d + kp[0, 1] * e_q + ki[0, 0] * st.z_d + ki[0, 1] * st.z_q
            + ff[0, 0] * setpoint[0] + ff[0, 1] * setpoint[1])
    v_iq = (kp[1, 0] * e_d + kp[1, 1] * e_q + ki[1, 0] * st.z_d + ki[1, 1] * st.z_q
            + ff[1, 0] * setpoint[0] + ff[1, 1] * setpoint[1])
    if cfg.voltage_feedforward:
        v_id += v_od
        v_iq += v_oq
    cmd = (float(v_id), float(v_iq))
    return cmd, ControllerState(st.z_d + e_d * dt, st.z_q + e_q * dt, cmd)


def clamp_magnitude(cmd, limit: float) -> tuple[float, float]:
    """Scale ``cmd`` down so that its dq magnitude does not exceed ``limit``."""
    mag = math.hypot(cmd[0], cmd[1])
    if mag <= limit:
        return cmd
    k = limit / mag
    return (cmd[0] * k, cmd[1] * k)


def delay_depth(t_d: float, dt: float) -> int:
    return int(round(t_d / dt + 1e-9))


@dataclass
class DelayLine:
    """Fixed-depth FIFO; ``push_pop`` returns the sample pushed ``depth`` calls ago."""

    depth: int
    initial: tuple[float, float] = (0.0, 0.0)
    buffer: deque = field(init=False)

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("delay depth must be non-negative")
        self.buffer = deque([self.initial] * self.depth)

    def push_pop(self, sample):
        if self.depth == 0:
            return sample
        self.buffer.append(sample)
        return self.buffer.popleft()

    def fill(self, sample) -> None:
        self.buffer = deque([sample] * self.depth)


def delay_push_pop(dl: DelayLine, sample):
    return dl.push_pop(sample)


class LowPass:
    """First-order measurement filter discretized exactly at a fixed step."""

    def __init__(self, tau: float, dt: float, initial=(0.0, 0.0)):
        self.alpha = 1.0 if tau <= 0 else 1.0 - math.exp(-dt / tau)
        self.y = tuple(initial)

    def update(self, x):
        a = self.alpha
        self.y = tuple(y + a * (xi - y) for y, xi in zip(self.y, x))
        return self.y

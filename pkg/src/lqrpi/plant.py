"""Physical models: dq-frame converter/LC-filter/grid dynamics, Thevenin grid
from short-circuit ratio, Park transforms and the SRF-PLL."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matops import StateSpace

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FilterParams:
    r_f: float = 0.02
    l_f: float = 600e-6
    c_f: float = 12e-6

    def __post_init__(self):
        if not (self.r_f > 0 and self.l_f > 0 and self.c_f > 0):
            raise ValueError(f"filter parameters must be positive: {self}")

    def scaled(self, r_scale: float = 1.0, l_scale: float = 1.0) -> "FilterParams":
        return FilterParams(self.r_f * r_scale, self.l_f * l_scale, self.c_f)


@dataclass(frozen=True)
class GridParams:
    r_g: float
    l_g: float
    v_g: float = 500.0
    f_nom: float = 50.0

    def __post_init__(self):
        if self.r_g < 0 or self.l_g < 0 or (self.r_g == 0 and self.l_g == 0):
            raise ValueError(f"grid impedance must be non-negative and nonzero: {self}")
        if self.v_g <= 0 or self.f_nom <= 0:
            raise ValueError(f"grid voltage and frequency must be positive: {self}")

    @property
    def omega_nom(self) -> float:
        return TWO_PI * self.f_nom

    @property
    def z_mag(self) -> float:
        return math.hypot(self.r_g, self.omega_nom * self.l_g)

    @property
    def v_pk(self) -> float:
        """Peak phase voltage of the Thevenin source."""
        return self.v_g * math.sqrt(2.0 / 3.0)


@dataclass(frozen=True)
class PerUnitBase:
    """Bases from rated power and line-line RMS voltage.

    Currents and voltages are amplitude-invariant (peak phase) so that a
    balanced set at rated conditions maps to 1 p.u. on the d axis.
    """

    s_base: float = 100e3
    v_base_ll: float = 500.0

    def __post_init__(self):
        if self.s_base <= 0 or self.v_base_ll <= 0:
            raise ValueError(f"bases must be positive: {self}")

    @property
    def z_base(self) -> float:
        return self.v_base_ll**2 / self.s_base

    @property
    def i_base_pk(self) -> float:
        return math.sqrt(2.0) * self.s_base / (math.sqrt(3.0) * self.v_base_ll)

    @property
    def v_base_pk(self) -> float:
        return self.v_base_ll * math.sqrt(2.0 / 3.0)


@dataclass
class PlantState:
    """Six dq states in the PLL frame (SI units)."""

    i_id: float = 0.0
    i_iq: float = 0.0
    v_od: float = 0.0
    v_oq: float = 0.0
    i_od: float = 0.0
    i_oq: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.i_id, self.i_iq, self.v_od, self.v_oq, self.i_od, self.i_oq])

    @classmethod
    def from_array(cls, x) -> "PlantState":
        return cls(*(float(v) for v in x[:6]))


@dataclass
class PllState:
    theta: float = 0.0
    omega_dev: float = 0.0
    integ: float = 0.0


def plant_matrices(fp: FilterParams, omega: float) -> StateSpace:
    """Two-state design model of the converter-side filter inductor."""
    a = np.array([[-fp.r_f / fp.l_f, omega], [-omega, -fp.r_f / fp.l_f]])
    b = np.eye(2) / fp.l_f
    return StateSpace(a, b, np.eye(2))


def grid_from_scr(scr: float, xr_ratio: float, base: PerUnitBase, f_nom: float = 50.0,
                  v_g: float | None = None) -> GridParams:
    """Thevenin impedance giving short-circuit ratio ``scr`` at ``X/R = xr_ratio``."""
    if not scr > 0:
        raise ValueError(f"scr must be positive, got {scr}")
    if xr_ratio < 0:
        raise ValueError(f"xr_ratio must be non-negative, got {xr_ratio}")
    z = base.z_base / scr
    if math.isinf(xr_ratio):
        r_g, x_g = 0.0, z
    else:
        r_g = z / math.sqrt(1.0 + xr_ratio**2)
        x_g = xr_ratio * r_g
    return GridParams(r_g, x_g / (TWO_PI * f_nom), base.v_base_ll if v_g is None else v_g, f_nom)


def wrap_angle(theta: float) -> float:
    return theta % TWO_PI


def park(abc, theta: float) -> tuple[float, float]:
    a, b, c = abc
    t2 = TWO_PI / 3.0
    d = (2.0 / 3.0) * (a * math.cos(theta) + b * math.cos(theta - t2) + c * math.cos(theta + t2))
    q = -(2.0 / 3.0) * (a * math.sin(theta) + b * math.sin(theta - t2) + c * math.sin(theta + t2))
    return d, q


def inverse_park(d: float, q: float, theta: float) -> tuple[float, float, float]:
    t2 = TWO_PI / 3.0
    return (
        d * math.cos(theta) - q * math.sin(theta),
        d * math.cos(theta - t2) - q * math.sin(theta - t2),
        d * math.cos(theta + t2) - q * math.sin(theta + t2),
    )


def pll_input(v_od: float, v_oq: float, v_base_pk: float) -> float:
    """q-axis voltage normalized by the measured magnitude (floored at 0.1 p.u.)."""
    mag = max(math.hypot(v_od, v_oq), 0.1 * v_base_pk)
    return v_oq / mag


def pll_update(integ: float, v_oq_pu: float, dt: float, kp: float, ki: float) -> tuple[float, float]:
    integ = integ + ki * v_oq_pu * dt
    return integ, kp * v_oq_pu + integ


def pll_step(pll: PllState, v_oq_pu: float, dt: float, gains=(48.0, 144.0),
             omega_nom: float = TWO_PI * 50.0) -> PllState:
    """One forward-Euler step of the SRF-PLL."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    integ, omega_dev = pll_update(pll.integ, v_oq_pu, dt, gains[0], gains[1])
    theta = wrap_angle(pll.theta + (omega_nom + omega_dev) * dt)
    return PllState(theta, omega_dev, integ)


def grid_voltage_dq(v_pk: float, angle_err: float) -> tuple[float, float]:
    """Grid Thevenin phasor in a frame leading the grid angle by ``angle_err``."""
    return v_pk * math.cos(angle_err), -v_pk * math.sin(angle_err)


def derivatives(x, v_id, v_iq, omega, v_gd, v_gq, r_f, l_f, c_f, r_g, l_g):
    """Scalar right-hand side of the six-state model; ``x`` is a 6-sequence.

    With ``l_g == 0`` the grid branch is algebraic and its derivatives are 0.
    """
    i_id, i_iq, v_od, v_oq, i_od, i_oq = x
    if l_g == 0.0:
        i_od = (v_od - v_gd) / r_g
        i_oq = (v_oq - v_gq) / r_g
        d_od = d_oq = 0.0
    else:
        d_od = (v_od - r_g * i_od + omega * l_g * i_oq - v_gd) / l_g
        d_oq = (v_oq - r_g * i_oq - omega * l_g * i_od - v_gq) / l_g
    return (
        (v_id - r_f * i_id + omega * l_f * i_iq - v_od) / l_f,
        (v_iq - r_f * i_iq - omega * l_f * i_id - v_oq) / l_f,
        (i_id - i_od) / c_f + omega * v_oq,
        (i_iq - i_oq) / c_f - omega * v_od,
        d_od,
        d_oq,
    )


def plant_derivatives(s: PlantState, u, grid: GridParams, fp: FilterParams, pll: PllState,
                      t: float = 0.0) -> PlantState:
    """Time derivative of the plant in the PLL frame.

    The frame rotates at ``omega_nom + pll.omega_dev``; the grid phasor is
    placed using the absolute grid angle ``omega_nom * t``.
    """
    omega_nom = grid.omega_nom
    angle_err = pll.theta - wrap_angle(omega_nom * t)
    v_gd, v_gq = grid_voltage_dq(grid.v_pk, angle_err)
    d = derivatives(
        (s.i_id, s.i_iq, s.v_od, s.v_oq, s.i_od, s.i_oq), u[0], u[1],
        omega_nom + pll.omega_dev, v_gd, v_gq,
        fp.r_f, fp.l_f, fp.c_f, grid.r_g, grid.l_g,
    )
    return PlantState(*d)


def steady_state(i_ref: complex, grid: GridParams, fp: FilterParams):
    """Locked-PLL operating point for a converter current ``i_ref`` (SI, dq).

    Returns ``(v_o, i_o, v_i, angle_err)`` as complex dq phasors plus the PLL
    angle lead over the grid, or ``None`` when no real solution exists (the
    requested current is beyond the static transfer limit).
    """
    w = grid.omega_nom
    zg = complex(grid.r_g, w * grid.l_g)
    # v_g e^{-j err} = v_o (1 + j w C zg) - zg i_ref, v_o real and positive
    alpha = 1.0 + 1j * w * fp.c_f * zg
    beta = zg * i_ref
    a2 = abs(alpha) ** 2
    b1 = -2.0 * (alpha.conjugate() * beta).real
    c0 = abs(beta) ** 2 - grid.v_pk**2
    disc = b1 * b1 - 4.0 * a2 * c0
    if disc < 0:
        return None
    v_od = (-b1 + math.sqrt(disc)) / (2.0 * a2)
    if v_od <= 0:
        return None
    vg_frame = v_od * alpha - beta
    angle_err = -math.atan2(vg_frame.imag, vg_frame.real)
    v_o = complex(v_od, 0.0)
    i_o = i_ref - 1j * w * fp.c_f * v_o
    v_i = v_o + complex(fp.r_f, w * fp.l_f) * i_ref
    return v_o, i_o, v_i, angle_err

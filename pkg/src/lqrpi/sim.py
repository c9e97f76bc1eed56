"""Fixed-step time-domain engine.

The six-state plant is integrated with RK4 at ``dt_plant``. The controller,
PLL and voltage-feedforward filter run once per ``dt_ctrl``; commands reach
the plant through a FIFO clocked ``delay_substeps`` times per control period
so that a 1.5-sample transport delay is represented exactly.

The PLL angle is carried relative to the grid angle ``omega_nom * t``; one
control period is then a time-invariant map of the flat engine state, which
``analysis`` differentiates for the sampled-data linearization.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import controllers as ctl
from .plant import (
    TWO_PI, FilterParams, GridParams, PerUnitBase, derivatives, grid_from_scr,
    inverse_park, pll_input, pll_update, steady_state,
)
from .synthesis import LqrWeights, augment, lqr_pi_gains
from .plant import plant_matrices

DIVERGENCE_FACTOR = 50.0
CSV_HEADER = (
    "t", "i_id", "i_iq", "i_id_ref", "i_iq_ref", "v_od", "v_oq",
    "omega_dev", "v_id_cmd", "v_iq_cmd", "diverged",
)

# flat engine state layout
I_ID, I_IQ, V_OD, V_OQ, I_OD, I_OQ, ANG, PLL_I, W_DEV, Z_D, Z_Q, F_D, F_Q = range(13)
N_CORE = 13
STATE_LABELS = (
    "i_id", "i_iq", "v_od", "v_oq", "i_od", "i_oq", "pll_angle", "pll_integ",
    "pll_omega_dev", "z_d", "z_q", "vff_d", "vff_q",
)


class ConfigError(ValueError):
    pass


def design_mimo(fp: FilterParams, f_nom: float, weights: LqrWeights | None = None,
                **kw) -> ctl.MimoPiConfig:
    res = lqr_pi_gains(augment(plant_matrices(fp, TWO_PI * f_nom)), weights or LqrWeights.nominal())
    return ctl.MimoPiConfig.from_synthesis(res, **kw)


@dataclass(frozen=True)
class ScenarioConfig:
    """One deterministic simulation run.

    Schedules are lists of ``(time, scr, xr_ratio)`` and
    ``(time, i_id*, i_iq*)`` / ``(time, i_id*, i_iq*, ramp_s)`` in p.u.
    Times are relative to the start of the recorded window; the first entry
    of each schedule must be at ``t <= 0`` and defines the initial condition.
    """

    controller: str = "mimo"
    scr_schedule: Sequence = ((0.0, 5.0, math.tan(math.radians(80.0))),)
    setpoint_schedule: Sequence = ((0.0, 0.6, 0.1), (0.4, 0.2, 0.1), (0.6, 0.6, 0.1))
    t_end: float = 1.6
    dt_plant: float = 10e-6
    dt_ctrl: float = 200e-6
    delay_substeps: int = 2
    t_d: float = 1.5 / 5000.0
    t_settle: float = 0.3
    base: PerUnitBase = PerUnitBase()
    filter: FilterParams = FilterParams()
    design_filter: FilterParams | None = None
    f_nom: float = 50.0
    v_g: float = 500.0
    pll_gains: tuple = (48.0, 144.0)
    vff_tau: float = 0.0
    command_limit_pu: float | None = None
    siso: ctl.SisoPiConfig | None = None
    mimo: ctl.MimoPiConfig | None = None

    def __post_init__(self):
        if self.controller not in ("siso", "mimo"):
            raise ConfigError(f"controller must be 'siso' or 'mimo', got {self.controller!r}")
        if not self.t_end > 0 or not self.dt_plant > 0 or not self.dt_ctrl > 0:
            raise ConfigError("t_end, dt_plant and dt_ctrl must be positive")
        if self.delay_substeps < 1:
            raise ConfigError("delay_substeps must be >= 1")
        sub = self.dt_ctrl / self.delay_substeps
        ratio = sub / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("dt_ctrl / delay_substeps must be an integer multiple of dt_plant")
        for name in ("scr_schedule", "setpoint_schedule"):
            sched = getattr(self, name)
            if not sched:
                raise ConfigError(f"{name} must not be empty")
            times = [e[0] for e in sched]
            if times != sorted(times):
                raise ConfigError(f"{name} must be time-sorted")
            if times[0] > 0:
                raise ConfigError(f"{name} must start at t <= 0")
        for e in self.scr_schedule:
            if not e[1] > 0 or e[2] < 0:
                raise ConfigError(f"invalid grid event {e}")
        if self.t_settle < 0:
            raise ConfigError("t_settle must be non-negative")
        if self.command_limit_pu is not None and not self.command_limit_pu > 0:
            raise ConfigError("command_limit_pu must be positive when set")

    # derived quantities
    @property
    def n_rk(self) -> int:
        return int(round(self.dt_ctrl / self.delay_substeps / self.dt_plant))

    @property
    def delay_depth(self) -> int:
        return ctl.delay_depth(self.t_d, self.dt_ctrl / self.delay_substeps)

    @property
    def omega_nom(self) -> float:
        return TWO_PI * self.f_nom

    @property
    def controller_filter(self) -> FilterParams:
        return self.design_filter or self.filter

    def siso_config(self) -> ctl.SisoPiConfig:
        return self.siso or ctl.SisoPiConfig.nominal(self.base.z_base)

    def mimo_config(self) -> ctl.MimoPiConfig:
        return self.mimo or _cached_mimo(self.controller_filter, self.f_nom)

    def grid_at(self, scr: float, xr: float) -> GridParams:
        return grid_from_scr(scr, xr, self.base, self.f_nom, self.v_g)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


_MIMO_CACHE: dict = {}


def _cached_mimo(fp: FilterParams, f_nom: float) -> ctl.MimoPiConfig:
    key = (fp, f_nom)
    if key not in _MIMO_CACHE:
        _MIMO_CACHE[key] = design_mimo(fp, f_nom)
    return _MIMO_CACHE[key]


@dataclass
class TimeSeries:
    t: np.ndarray
    i_id: np.ndarray
    i_iq: np.ndarray
    i_id_ref: np.ndarray
    i_iq_ref: np.ndarray
    v_od: np.ndarray
    v_oq: np.ndarray
    omega_dev: np.ndarray
    v_id_cmd: np.ndarray
    v_iq_cmd: np.ndarray
    diverged_flags: np.ndarray
    diverged: bool = False
    diverged_at: float | None = None
    pll_theta: np.ndarray | None = field(default=None, repr=False)
    event_times: tuple = ()

    def __len__(self) -> int:
        return len(self.t)

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def abc_currents(self) -> np.ndarray:
        """Converter currents in the stationary frame (p.u.), one row per sample."""
        return np.array([inverse_park(d, q, th) for d, q, th in zip(self.i_id, self.i_iq, self.pll_theta)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        cols = [getattr(self, c) for c in CSV_HEADER[:-1]]
        for i in range(len(self.t)):
            w.writerow([repr(float(c[i])) for c in cols] + [int(self.diverged_flags[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(CSV_HEADER))
        kw = {name: data[:, j] for j, name in enumerate(CSV_HEADER[:-1])}
        flags = data[:, -1].astype(bool)
        div_at = float(data[flags, 0][0]) if flags.any() else None
        return cls(**kw, diverged_flags=flags, diverged=bool(flags.any()), diverged_at=div_at)


# ------------------------------------------------------------------ engine


class Engine:
    """Constants for one (config, grid, setpoint) combination and the period map."""

    def __init__(self, cfg: ScenarioConfig, grid: GridParams, setpoint_si: tuple[float, float]):
        self.cfg = cfg
        self.grid = grid
        self.setpoint = setpoint_si
        fp = cfg.filter
        self.r_f, self.l_f, self.c_f = fp.r_f, fp.l_f, fp.c_f
        self.r_g, self.l_g = grid.r_g, grid.l_g
        self.v_pk = grid.v_pk
        self.omega_nom = cfg.omega_nom
        self.v_base = cfg.base.v_base_pk
        self.kp_pll, self.ki_pll = cfg.pll_gains
        self.dt = cfg.dt_ctrl
        self.sub = cfg.delay_substeps
        self.n_rk = cfg.n_rk
        self.h = cfg.dt_ctrl / cfg.delay_substeps / cfg.n_rk
        self.depth = cfg.delay_depth
        tau = cfg.vff_tau
        self.alpha = 1.0 if tau <= 0 else 1.0 - math.exp(-cfg.dt_ctrl / tau)
        self.kind = cfg.controller
        lim = cfg.command_limit_pu
        self.cmd_limit = None if lim is None else lim * cfg.base.v_base_pk
        if self.kind == "siso":
            self.siso = cfg.siso_config()
            self.design_l_f = cfg.controller_filter.l_f
        else:
            self.mimo = cfg.mimo_config()

    @property
    def n_state(self) -> int:
        return N_CORE + 2 * self.depth

    def command(self, x, setpoint, vff, omega_dev):
        meas = (x[I_ID], x[I_IQ], vff[0], vff[1])
        st = ctl.ControllerState(x[Z_D], x[Z_Q])
        if self.kind == "siso":
            cmd, st = ctl.siso_step(self.siso, st, meas, setpoint, self.omega_nom + omega_dev,
                                    self.design_l_f, self.dt)
        else:
            cmd, st = ctl.mimo_step(self.mimo, st, meas, setpoint, self.dt)
        if self.cmd_limit is not None:
            cmd = ctl.clamp_magnitude(cmd, self.cmd_limit)
        return cmd, st

    def _integrate(self, p, ang, w_dev, v_id, v_iq):
        """``n_rk`` RK4 steps with command and frame speed held."""
        h = self.h
        r_f, l_f, c_f, r_g, l_g = self.r_f, self.l_f, self.c_f, self.r_g, self.l_g
        w = self.omega_nom + w_dev
        v_pk = self.v_pk
        for _ in range(self.n_rk):
            c0, s0 = math.cos(ang), math.sin(ang)
            a_mid = ang + 0.5 * h * w_dev
            cm, sm = math.cos(a_mid), math.sin(a_mid)
            a_end = ang + h * w_dev
            ce, se = math.cos(a_end), math.sin(a_end)
            k1 = derivatives(p, v_id, v_iq, w, v_pk * c0, -v_pk * s0, r_f, l_f, c_f, r_g, l_g)
            p2 = [pi + 0.5 * h * ki for pi, ki in zip(p, k1)]
            k2 = derivatives(p2, v_id, v_iq, w, v_pk * cm, -v_pk * sm, r_f, l_f, c_f, r_g, l_g)
            p3 = [pi + 0.5 * h * ki for pi, ki in zip(p, k2)]
            k3 = derivatives(p3, v_id, v_iq, w, v_pk * cm, -v_pk * sm, r_f, l_f, c_f, r_g, l_g)
            p4 = [pi + h * ki for pi, ki in zip(p, k3)]
            k4 = derivatives(p4, v_id, v_iq, w, v_pk * ce, -v_pk * se, r_f, l_f, c_f, r_g, l_g)
            p = [pi + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
                 for pi, a, b, c, d in zip(p, k1, k2, k3, k4)]
            ang = a_end
        if l_g == 0.0:
            p[4] = (p[2] - v_pk * math.cos(ang)) / r_g
            p[5] = (p[3] + v_pk * math.sin(ang)) / r_g
        return p, ang

    def step(self, x, setpoint=None):
        """Advance the flat state by one control period; returns ``(x_next, cmd)``."""
        sp = self.setpoint if setpoint is None else setpoint
        x = list(x)
        vq_pu = pll_input(x[V_OD], x[V_OQ], self.v_base)
        integ, w_dev = pll_update(x[PLL_I], vq_pu, self.dt, self.kp_pll, self.ki_pll)
        a = self.alpha
        f_d = x[F_D] + a * (x[V_OD] - x[F_D])
        f_q = x[F_Q] + a * (x[V_OQ] - x[F_Q])
        cmd, st = self.command(x, sp, (f_d, f_q), w_dev)
        buf = x[N_CORE:]
        p = x[:6]
        ang = x[ANG]
        for _ in range(self.sub):
            if self.depth:
                buf.extend(cmd)
                applied = (buf[0], buf[1])
                buf = buf[2:]
            else:
                applied = cmd
            p, ang = self._integrate(p, ang, w_dev, applied[0], applied[1])
        nxt = p + [ang, integ, w_dev, st.z_d, st.z_q, f_d, f_q] + buf
        return nxt, cmd

    def equilibrium(self, setpoint=None):
        """Exact fixed point for a locked PLL at ``setpoint`` (SI), or None."""
        sp = self.setpoint if setpoint is None else setpoint
        ss = steady_state(complex(*sp), self.grid, self.cfg.filter)
        if ss is None:
            return None
        v_o, i_o, v_i, ang = ss
        x = [sp[0], sp[1], v_o.real, v_o.imag, i_o.real, i_o.imag, ang, 0.0, 0.0, 0.0, 0.0,
             v_o.real, v_o.imag]
        # integrator states that reproduce v_i at zero error
        cmd0, _ = self.command(x, sp, (v_o.real, v_o.imag), 0.0)
        resid = np.array([v_i.real - cmd0[0], v_i.imag - cmd0[1]])
        if self.kind == "siso":
            ki = self.siso.k_i
            if ki == 0:
                return None
            z = resid / ki
        else:
            z = np.linalg.solve(self.mimo.k_i, resid)
        x[Z_D], x[Z_Q] = float(z[0]), float(z[1])
        x += [v_i.real, v_i.imag] * self.depth
        return x

    def diverged(self, x) -> bool:
        ib = DIVERGENCE_FACTOR * self.cfg.base.i_base_pk
        vb = DIVERGENCE_FACTOR * self.v_base
        if not all(math.isfinite(v) for v in x[:N_CORE]):
            return True
        return (abs(x[I_ID]) > ib or abs(x[I_IQ]) > ib or abs(x[I_OD]) > ib or abs(x[I_OQ]) > ib
                or abs(x[V_OD]) > vb or abs(x[V_OQ]) > vb)


def _setpoint_at(sched, t: float) -> tuple[float, float]:
    """Piecewise-constant (or ramped) setpoint in p.u. at time ``t``."""
    cur = (sched[0][1], sched[0][2])
    for i, e in enumerate(sched):
        if e[0] > t + 1e-12:
            break
        ramp = e[3] if len(e) > 3 else 0.0
        target = (e[1], e[2])
        if ramp > 0 and t < e[0] + ramp:
            frac = (t - e[0]) / ramp
            cur = (cur[0] + frac * (target[0] - cur[0]), cur[1] + frac * (target[1] - cur[1]))
            return cur
        cur = target
    return cur


def _grid_at(sched, t: float):
    cur = sched[0]
    for e in sched:
        if e[0] > t + 1e-12:
            break
        cur = e
    return cur[1], cur[2]


def initial_state(cfg: ScenarioConfig, engine: Engine):
    """Analytic operating point for the first schedule entries, falling back
    to zero current when the requested setpoint has no static solution."""
    x = engine.equilibrium()
    if x is None:
        x = engine.equilibrium((0.0, 0.0))
    if x is None:
        raise ConfigError("no steady state exists even at zero current")
    return x


def run_scenario(cfg: ScenarioConfig) -> TimeSeries:
    """Simulate ``cfg``; divergence is reported in the result, not raised."""
    base = cfg.base
    ib, vb = base.i_base_pk, base.v_base_pk
    n_rec = int(round(cfg.t_end / cfg.dt_ctrl)) + 1
    n_settle = int(round(cfg.t_settle / cfg.dt_ctrl))

    engines: dict = {}

    def engine_for(scr, xr):
        key = (scr, xr)
        if key not in engines:
            engines[key] = Engine(cfg, cfg.grid_at(scr, xr), (0.0, 0.0))
        return engines[key]

    scr0, xr0 = _grid_at(cfg.scr_schedule, 0.0 if n_settle == 0 else -cfg.t_settle)
    sp0 = _setpoint_at(cfg.setpoint_schedule, -cfg.t_settle)
    eng0 = engine_for(scr0, xr0)
    eng0.setpoint = (sp0[0] * ib, sp0[1] * ib)
    x = initial_state(cfg, eng0)

    cols = np.full((11, n_rec), np.nan)
    theta = np.full(n_rec, np.nan)
    flags = np.zeros(n_rec, dtype=bool)
    diverged_at = None
    for k in range(-n_settle, n_rec):
        t = k * cfg.dt_ctrl
        scr, xr = _grid_at(cfg.scr_schedule, t)
        eng = engine_for(scr, xr)
        sp = _setpoint_at(cfg.setpoint_schedule, t)
        sp_si = (sp[0] * ib, sp[1] * ib)
        x_next, cmd = eng.step(x, sp_si)
        if k >= 0:
            cols[:, k] = (
                t, x[I_ID] / ib, x[I_IQ] / ib, sp[0], sp[1], x[V_OD] / vb, x[V_OQ] / vb,
                x_next[W_DEV], cmd[0] / vb, cmd[1] / vb, 0.0,
            )
            theta[k] = (x[ANG] + cfg.omega_nom * t) % TWO_PI
        x = x_next
        if eng.diverged(x):
            t_div = t + cfg.dt_ctrl
            diverged_at = max(t_div, 0.0)
            if k + 1 < n_rec:
                kk = max(k + 1, 0)
                cols[0, kk:] = np.arange(kk, n_rec) * cfg.dt_ctrl
                flags[kk:] = True
            break
    cols[0] = np.arange(n_rec) * cfg.dt_ctrl
    events = tuple(sorted({e[0] for e in cfg.setpoint_schedule if e[0] > 0}
                          | {e[0] for e in cfg.scr_schedule if e[0] > 0}))
    return TimeSeries(
        t=cols[0], i_id=cols[1], i_iq=cols[2], i_id_ref=cols[3], i_iq_ref=cols[4],
        v_od=cols[5], v_oq=cols[6], omega_dev=cols[7], v_id_cmd=cols[8], v_iq_cmd=cols[9],
        diverged_flags=flags, diverged=diverged_at is not None, diverged_at=diverged_at,
        pll_theta=theta, event_times=events,
    )


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class StepMetrics:
    rise_time_10_90: float
    overshoot_pct: float
    settling_time_5pct: float
    cross_coupling_peak: float
    iae: float
    defined: bool = True
    final_error: float = float("nan")

    @classmethod
    def undefined(cls) -> "StepMetrics":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, False, nan)


class NoStepError(ValueError):
    pass


def step_metrics(ts: TimeSeries, step_time: float, axis: str = "d") -> StepMetrics:
    """Step-response metrics on ``[step_time, next event)``.

    Overshoot is relative to the step magnitude. Settling is the last time
    the response is outside a band of 5 % of the final setpoint around the
    final setpoint, measured from ``step_time``; when the final setpoint is
    zero the band is 5 % of the step magnitude instead.
    """
    if axis not in ("d", "q"):
        raise ValueError("axis must be 'd' or 'q'")
    y_all = ts.i_id if axis == "d" else ts.i_iq
    other = ts.i_iq if axis == "d" else ts.i_id
    ref = ts.i_id_ref if axis == "d" else ts.i_iq_ref
    dt = ts.t[1] - ts.t[0] if len(ts.t) > 1 else 1.0
    k0 = int(round(step_time / dt))
    if k0 <= 0 or k0 >= len(ts.t):
        raise NoStepError(f"step time {step_time} outside the record")
    before, after = ref[k0 - 1], ref[k0]
    mag = after - before
    if abs(mag) < 1e-12:
        raise NoStepError(f"no {axis}-axis step at t={step_time}")
    later = [e for e in ts.event_times if e > step_time + 1e-9]
    k1 = int(round(later[0] / dt)) if later else len(ts.t)
    y = y_all[k0:k1]
    if ts.diverged_flags[k0:k1].any() or not np.all(np.isfinite(y)):
        return StepMetrics.undefined()
    t = ts.t[k0:k1] - ts.t[k0]
    frac = (y - before) / mag
    try:
        t10 = t[np.argmax(frac >= 0.1)] if (frac >= 0.1).any() else np.nan
        t90 = t[np.argmax(frac >= 0.9)] if (frac >= 0.9).any() else np.nan
    except ValueError:
        t10 = t90 = np.nan
    rise = float(t90 - t10)
    overshoot = float(max(0.0, np.max(frac) - 1.0) * 100.0)
    band = 0.05 * (abs(after) if abs(after) > 1e-12 else abs(mag))
    outside = np.abs(y - after) > band
    if outside.any():
        last = int(np.nonzero(outside)[0][-1])
        settle = float(t[last + 1]) if last + 1 < len(t) else float("inf")
    else:
        settle = 0.0
    o = other[k0:k1]
    cross = float(np.max(np.abs(o - o[0])))
    iae = float(np.sum(np.abs(ref[k0:k1] - y)) * dt)
    return StepMetrics(rise, overshoot, settle, cross, iae, True, float(abs(y[-1] - after)))


# ------------------------------------------------------------ limit search


@dataclass(frozen=True)
class TransferLimit:
    value: float
    lower: float
    upper: float
    at_cap: bool = False
    monotone: bool = True

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.lower, self.upper)


def probe_stable(template: ScenarioConfig, axis: str, magnitude: float, scr: float, xr: float,
                 ramp: float = 0.2, hold: float = 1.0, band_window: float = 0.2) -> bool:
    """Ramp from zero to ``magnitude`` on one axis, hold, and test the final
    ``band_window`` seconds against a 5 % band (of the magnitude, floor
    0.01 p.u.) with no divergence."""
    sp = (magnitude, 0.0) if axis == "P" else (0.0, -magnitude)
    cfg = template.with_(
        scr_schedule=((0.0, scr, xr),),
        setpoint_schedule=((0.0, 0.0, 0.0), (0.05, sp[0], sp[1], ramp)),
        t_end=0.05 + ramp + hold,
    )
    ts = run_scenario(cfg)
    if ts.diverged:
        return False
    n = int(round(band_window / cfg.dt_ctrl))
    band = 0.05 * max(abs(magnitude), 0.2)
    dev = max(np.max(np.abs(ts.i_id[-n:] - sp[0])), np.max(np.abs(ts.i_iq[-n:] - sp[1])))
    return bool(np.isfinite(dev) and dev <= band)


def transfer_limit_search(template: ScenarioConfig, axis: str, scr: float, xr: float,
                          resolution: float = 0.01, cap: float | None = None,
                          check_points: int = 4) -> TransferLimit:
    """Largest stably injectable current magnitude by bisection.

    ``axis`` 'P' steps the d-axis, 'Q' the q-axis (negative i_iq, i.e.
    reactive injection). The search interval is ``[0, 2 * scr]`` p.u. After
    bisection, ``check_points`` evenly spaced magnitudes below the result
    are re-probed; any failure marks the result non-monotone and the
    bracketing interval is reported instead of a point.
    """
    if axis not in ("P", "Q"):
        raise ValueError("axis must be 'P' or 'Q'")
    hi = 2.0 * scr if cap is None else cap
    if probe_stable(template, axis, hi, scr, xr):
        return TransferLimit(hi, hi, float("inf"), at_cap=True)
    lo = 0.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if probe_stable(template, axis, mid, scr, xr):
            lo = mid
        else:
            hi = mid
    monotone = True
    for j in range(1, check_points + 1):
        m = lo * j / (check_points + 1)
        if m > 0 and not probe_stable(template, axis, m, scr, xr):
            monotone = False
            break
    return TransferLimit(lo, lo, hi, monotone=monotone)

"""Small-signal analysis of the closed loop and static power-transfer limits.

Two linearizations are available:

``"sampled"`` (default)
    Central finite-difference Jacobian of one control period of the
    simulator (:meth:`lqrpi.sim.Engine.step`). The resulting transition
    matrix describes exactly the discrete system that ``run_scenario``
    integrates, including zero-order hold, the 1.5-sample delay line and the
    discrete PLL. Eigenvalues ``z`` are reported as ``s = ln(z) / dt_ctrl``.

``"pade"``
    Jacobian of a continuous vector field: the six-state plant, a
    continuous PLL, continuous PI integrators and a second-order Padé block
    per command channel for the transport delay.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import matops
from .plant import FilterParams, derivatives, pll_input, steady_state
from .sim import (
    ANG, F_D, F_Q, I_ID, I_IQ, N_CORE, PLL_I, STATE_LABELS, V_OD, V_OQ, W_DEV, Z_D, Z_Q,
    ConfigError, Engine, ScenarioConfig,
)

SAMPLED_EIG_FLOOR = 1e-6
METHODS = ("sampled", "pade")
SWEEP_PARAMS = ("SCR", "R_f", "L_f")

PADE_LABELS = (
    "i_id", "i_iq", "v_od", "v_oq", "i_od", "i_oq", "pll_angle", "pll_integ",
    "z_d", "z_q", "pade_d1", "pade_d2", "pade_q1", "pade_q2",
)


class LinearizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearizedClosedLoop:
    """Linear model about an operating point.

    ``a_cl`` is the continuous-time state matrix for the Padé method and the
    one-period transition matrix for the sampled method (``dt`` set).
    """

    a_cl: np.ndarray
    labels: tuple
    x_op: np.ndarray
    method: str = "pade"
    dt: float | None = None
    b_sp: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.a_cl.shape[0]
        if self.a_cl.shape != (n, n) or len(self.labels) != n or self.x_op.size != n:
            raise ValueError("matrix, labels and operating point dimensions disagree")

    @property
    def n_states(self) -> int:
        return self.a_cl.shape[0]

    def spectrum(self) -> np.ndarray:
        """Continuous-time eigenvalues sorted by decreasing real part.

        For the sampled model, transition eigenvalues with modulus below
        ``SAMPLED_EIG_FLOOR`` are dropped. These belong to states that are
        overwritten every period (delay-line slots, held commands); their
        finite-difference estimates are noise near the origin and they have
        no continuous counterpart. The floor corresponds to decay rates
        faster than about 7e4 1/s, far beyond every physical mode here.
        """
        ev = matops.eigenvalues(self.a_cl)
        if self.method == "sampled":
            ev = ev[np.abs(ev) > SAMPLED_EIG_FLOOR]
            ev = np.log(ev.astype(complex)) / self.dt
        return ev[np.lexsort((-ev.imag, -ev.real))]

    def max_real(self) -> float:
        s = self.spectrum()
        return float(np.max(s.real)) if s.size else float("-inf")


# ------------------------------------------------------------ operating point


def operating_point(cfg: ScenarioConfig):
    """Grid ``(scr, xr)`` and SI setpoint taken from the first schedule entries."""
    _, scr, xr = cfg.scr_schedule[0][:3]
    sp = cfg.setpoint_schedule[0]
    ib = cfg.base.i_base_pk
    return scr, xr, (sp[1] * ib, sp[2] * ib)


def _engine(cfg: ScenarioConfig) -> Engine:
    scr, xr, sp = operating_point(cfg)
    return Engine(cfg, cfg.grid_at(scr, xr), sp)


def _jacobian(fun, x0, rel_step: float) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    cols = []
    for k in range(n):
        h = rel_step * max(abs(x0[k]), 1.0)
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h))
    jac = np.column_stack(cols)
    if not np.all(np.isfinite(jac)):
        raise LinearizationError("Jacobian contains non-finite entries")
    return jac


def _check_equilibrium(resid: np.ndarray, scale: np.ndarray, tol: float) -> None:
    rel = float(np.max(np.abs(resid) / np.maximum(np.abs(scale), 1.0)))
    if rel > tol:
        raise LinearizationError(f"operating point is not an equilibrium (residual {rel:.3e})")


# ------------------------------------------------------------ sampled model


def _linearize_sampled(cfg: ScenarioConfig, rel_step: float, tol: float) -> LinearizedClosedLoop:
    eng = _engine(cfg)
    x0 = eng.equilibrium()
    if x0 is None:
        raise LinearizationError("no steady state exists at this operating point")
    x0 = np.asarray(x0, dtype=float)
    _check_equilibrium(np.asarray(eng.step(list(x0))[0]) - x0, x0, tol)
    jac = _jacobian(lambda x: eng.step(list(x))[0], x0, rel_step)

    def step_sp(sp):
        return eng.step(list(x0), (float(sp[0]), float(sp[1])))[0]

    b_sp = _jacobian(step_sp, np.asarray(eng.setpoint), rel_step)
    labels = STATE_LABELS + tuple(f"delay_{i}_{ax}" for i in range(eng.depth) for ax in "dq")
    return LinearizedClosedLoop(jac, labels, x0, "sampled", cfg.dt_ctrl, b_sp)


# ------------------------------------------------------------ Padé model


class PadeModel:
    """Continuous closed-loop vector field with Padé-approximated delay.

    State: plant (6), PLL angle lead and integrator (2), controller
    integrators (2), two Padé states per command channel (4), and, when
    voltage feedforward through a filter is active, two filter states.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.eng = _engine(cfg)
        td = cfg.t_d
        if not td > 0:
            raise ConfigError("the Padé model needs a positive delay")
        self.a1 = 6.0 / td
        self.a0 = 12.0 / td**2
        self.c1 = -12.0 / td
        self.with_filter = cfg.vff_tau > 0 and self._vff_enabled()
        self.labels = PADE_LABELS + (("vff_d", "vff_q") if self.with_filter else ())

    def _vff_enabled(self) -> bool:
        e = self.eng
        return (e.siso if e.kind == "siso" else e.mimo).voltage_feedforward

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def command(self, x, sp):
        e = self.eng
        vq_pu = pll_input(x[2], x[3], e.v_base)
        w_dev = e.kp_pll * vq_pu + x[7]
        vff = (x[14], x[15]) if self.with_filter else (x[2], x[3])
        fake = [0.0] * N_CORE
        fake[I_ID], fake[I_IQ], fake[Z_D], fake[Z_Q] = x[0], x[1], x[8], x[9]
        cmd, _ = e.command(fake, sp, vff, w_dev)
        return cmd, vq_pu, w_dev

    def rhs(self, x, sp=None) -> np.ndarray:
        e = self.eng
        sp = e.setpoint if sp is None else sp
        cmd, vq_pu, w_dev = self.command(x, sp)
        # delayed command y = u + c1 * xi2 per channel
        v_id = cmd[0] + self.c1 * x[11]
        v_iq = cmd[1] + self.c1 * x[13]
        ang = x[6]
        d = derivatives(
            x[:6], v_id, v_iq, e.omega_nom + w_dev, e.v_pk * math.cos(ang), -e.v_pk * math.sin(ang),
            e.r_f, e.l_f, e.c_f, e.r_g, e.l_g,
        )
        out = list(d) + [
            w_dev,
            e.ki_pll * vq_pu,
            sp[0] - x[0],
            sp[1] - x[1],
            x[11],
            -self.a0 * x[10] - self.a1 * x[11] + cmd[0],
            x[13],
            -self.a0 * x[12] - self.a1 * x[13] + cmd[1],
        ]
        if self.with_filter:
            tau = self.cfg.vff_tau
            out += [(x[2] - x[14]) / tau, (x[3] - x[15]) / tau]
        return np.array(out)

    def equilibrium(self) -> np.ndarray | None:
        e = self.eng
        ss = steady_state(complex(*e.setpoint), e.grid, self.cfg.filter)
        if ss is None:
            return None
        v_o, i_o, v_i, ang = ss
        x = np.zeros(self.n_states)
        x[:6] = (e.setpoint[0], e.setpoint[1], v_o.real, v_o.imag, i_o.real, i_o.imag)
        x[6] = ang
        if self.with_filter:
            x[14:16] = (v_o.real, v_o.imag)
        cmd0, _, _ = self.command(x, e.setpoint)
        resid = np.array([v_i.real - cmd0[0], v_i.imag - cmd0[1]])
        if e.kind == "siso":
            if e.siso.k_i == 0:
                return None
            z = resid / e.siso.k_i
        else:
            z = np.linalg.solve(e.mimo.k_i, resid)
        x[8:10] = z
        x[10] = v_i.real / self.a0
        x[12] = v_i.imag / self.a0
        return x


def _linearize_pade(cfg: ScenarioConfig, rel_step: float, tol: float) -> LinearizedClosedLoop:
    model = PadeModel(cfg)
    x0 = model.equilibrium()
    if x0 is None:
        raise LinearizationError("no steady state exists at this operating point")
    _check_equilibrium(model.rhs(x0), x0, tol)
    jac = _jacobian(model.rhs, x0, rel_step)
    b_sp = _jacobian(lambda sp: model.rhs(x0, (float(sp[0]), float(sp[1]))),
                     np.asarray(model.eng.setpoint), rel_step)
    return LinearizedClosedLoop(jac, model.labels, x0, "pade", None, b_sp)


def linearize(cfg: ScenarioConfig, method: str = "sampled", rel_step: float = 1e-6,
              eq_tol: float = 1e-6) -> LinearizedClosedLoop:
    """Linearize the closed loop at the operating point given by the first
    grid and setpoint schedule entries of ``cfg``.

    The operating point is the analytic steady state; it is checked to be an
    equilibrium of the chosen model to ``eq_tol`` (relative, floor 1).
    """
    if method == "sampled":
        return _linearize_sampled(cfg, rel_step, eq_tol)
    if method == "pade":
        return _linearize_pade(cfg, rel_step, eq_tol)
    raise ValueError(f"method must be one of {METHODS}, got {method!r}")


# ------------------------------------------------------------ sweeps


@dataclass
class SweepResult:
    param: str
    values: list
    spectra: list
    max_real_part: list
    first_unstable: float | None
    errors: dict = field(default_factory=dict)

    def unstable_count(self) -> int:
        return int(sum(1 for m in self.max_real_part if np.isfinite(m) and m >= 0.0))

    def to_csv(self) -> str:
        n = max((len(s) for s in self.spectra if s is not None), default=0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["param"]
        for i in range(1, n + 1):
            header += [f"re_{i}", f"im_{i}"]
        w.writerow(header + ["max_re"])
        for v, s, m in zip(self.values, self.spectra, self.max_real_part):
            row = [repr(float(v))]
            for i in range(n):
                if s is not None and i < len(s):
                    row += [repr(float(s[i].real)), repr(float(s[i].imag))]
                else:
                    row += ["nan", "nan"]
            w.writerow(row + [repr(float(m))])
        return buf.getvalue()


def sweep_config(template: ScenarioConfig, param: str, value: float) -> ScenarioConfig:
    """Template with one parameter replaced.

    ``R_f`` and ``L_f`` are multipliers on the plant filter; the controller
    keeps the gains designed for the template's nominal filter.
    """
    if param == "SCR":
        t0, _, xr = template.scr_schedule[0][:3]
        return template.with_(scr_schedule=((t0, float(value), xr),))
    if param in ("R_f", "L_f"):
        nominal = template.controller_filter
        fp = template.filter.scaled(value, 1.0) if param == "R_f" else template.filter.scaled(1.0, value)
        return template.with_(filter=fp, design_filter=nominal)
    raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")


def _sweep_point(args):
    template, param, value, method = args
    try:
        lin = linearize(sweep_config(template, param, value), method)
        return lin.spectrum(), None
    except (LinearizationError, ConfigError, matops.MatrixError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def sweep(param: str, values, template: ScenarioConfig, method: str = "sampled",
          workers: int = 1) -> SweepResult:
    """Linearize at each parameter value; failed points are recorded and skipped.

    ``first_unstable`` is the first value, in the given order, whose maximum
    real part is ``>= 0``.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep range is empty")
    jobs = [(template, param, v, method) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    spectra, max_re, errors = [], [], {}
    first = None
    for v, (spec, err) in zip(values, results):
        spectra.append(spec)
        if spec is None:
            errors[v] = err
            max_re.append(float("nan"))
            continue
        m = float(np.max(spec.real))
        max_re.append(m)
        if first is None and m >= 0.0:
            first = v
    return SweepResult(param, values, spectra, max_re, first, errors)


# ------------------------------------------------------------ validation


def linear_response(lin: LinearizedClosedLoop, d_sp, n_steps: int) -> np.ndarray:
    """Deviation trajectory of the sampled model for a constant setpoint offset (SI)."""
    if lin.method != "sampled":
        raise ValueError("time-domain response is provided for the sampled model")
    dx = np.zeros(lin.n_states)
    u = lin.b_sp @ np.asarray(d_sp, dtype=float)
    out = np.empty((n_steps + 1, lin.n_states))
    out[0] = dx
    for k in range(n_steps):
        dx = lin.a_cl @ dx + u
        out[k + 1] = dx
    return out


def validate_linearization(cfg: ScenarioConfig, delta_pu: float = 1e-3, horizon: float = 0.05,
                           axis: str = "d") -> float:
    """Relative RMS mismatch between linear and nonlinear ``i_i`` responses
    to a ``delta_pu`` setpoint step from the operating point."""
    lin = linearize(cfg, "sampled")
    eng = _engine(cfg)
    ib = cfg.base.i_base_pk
    d_sp = (delta_pu * ib, 0.0) if axis == "d" else (0.0, delta_pu * ib)
    n = int(round(horizon / cfg.dt_ctrl))
    lin_traj = linear_response(lin, d_sp, n)
    sp = (eng.setpoint[0] + d_sp[0], eng.setpoint[1] + d_sp[1])
    x = list(lin.x_op)
    nl = np.empty((n + 1, 2))
    nl[0] = 0.0
    for k in range(n):
        x, _ = eng.step(x, sp)
        nl[k + 1] = (x[I_ID] - lin.x_op[I_ID], x[I_IQ] - lin.x_op[I_IQ])
    li = lin_traj[:, [I_ID, I_IQ]]
    err = np.sqrt(np.mean((li - nl) ** 2))
    ref = np.sqrt(np.mean(nl ** 2))
    return float(err / ref)


# ------------------------------------------------------------ static limits


@dataclass(frozen=True)
class StaticLimits:
    p_max_pu: float
    q_pu: float
    scr: float
    xr_ratio: float
    vg_over_vo: float

    def delta_at_max(self) -> float:
        """Inverter voltage angle (rad) that maximizes the injected power."""
        return math.pi - _impedance_angle(self.xr_ratio)

    def to_json(self) -> str:
        doc = {
            "inputs": {"scr": self.scr, "xr_ratio": self.xr_ratio, "vg_over_vo": self.vg_over_vo},
            "outputs": {"p_max_pu": self.p_max_pu, "q_pu": self.q_pu,
                        "delta_at_max_rad": self.delta_at_max()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scr", "xr_ratio", "vg_over_vo", "p_max_pu", "q_pu"])
        w.writerow([repr(float(v)) for v in (self.scr, self.xr_ratio, self.vg_over_vo,
                                             self.p_max_pu, self.q_pu)])
        return buf.getvalue()


def _impedance_angle(xr: float) -> float:
    return math.pi / 2 if math.isinf(xr) else math.atan(xr)


def _r_over_z(xr: float) -> float:
    return 0.0 if math.isinf(xr) else 1.0 / math.sqrt(1.0 + xr * xr)


def _x_over_z(xr: float) -> float:
    return 1.0 if math.isinf(xr) else xr / math.sqrt(1.0 + xr * xr)


def static_limits(scr: float, xr_ratio: float, vg_over_vo: float = 1.0) -> StaticLimits:
    """Static active-power limit and the reactive power at that limit (p.u.)."""
    if not scr > 0:
        raise ValueError(f"scr must be positive, got {scr}")
    if xr_ratio < 0:
        raise ValueError(f"xr_ratio must be non-negative, got {xr_ratio}")
    p = scr * (vg_over_vo + _r_over_z(xr_ratio))
    q = scr * _x_over_z(xr_ratio)
    return StaticLimits(p, q, scr, xr_ratio, vg_over_vo)


def transfer_power(delta: float, v_o: float, v_g: float, scr: float, xr_ratio: float):
    """Injected ``(P, Q)`` in p.u. for inverter voltage ``v_o`` at angle ``delta``
    behind a Thevenin impedance of magnitude ``1 / scr`` p.u."""
    z = 1.0 / scr
    arg = delta - math.pi / 2 + _impedance_angle(xr_ratio)
    p = v_o * v_g / z * math.sin(arg) + v_o**2 * _r_over_z(xr_ratio) / z
    q = -v_o * v_g / z * math.cos(arg) + v_o**2 * _x_over_z(xr_ratio) / z
    return p, q

"""TOML scenario files.

Hardware parameters are in SI units and current setpoints in p.u. Every
section is optional; omitted keys take the nominal defaults, so an empty
file describes the strong-grid d-axis step scenario.

Example::

    [plant]
    r_f = 0.02
    l_f = 600e-6
    c_f = 12e-6

    [scenario]
    controller = "mimo"
    xr_deg = 80
    scr_events = [[0.0, 5.0]]                  # [t, scr] or [t, scr, xr]
    setpoints = [[0.0, 0.6, 0.1], [0.4, 0.2, 0.1]]
    t_end = 1.6

    [sweep]
    param = "SCR"
    start = 4.0
    stop = 2.0
    count = 50
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .controllers import SisoPiConfig
from .plant import FilterParams, PerUnitBase
from .sim import ConfigError, ScenarioConfig
from .synthesis import LqrWeights

NOMINAL_Q = (0.0769, 0.0769, 70.0, 70.0)

_SECTIONS = {
    "plant": {"r_f", "l_f", "c_f"},
    "base": {"s_base", "v_base_ll"},
    "grid": {"v_g", "f_nom"},
    "synthesis": {"q_diag", "q_bar", "r_bar", "a", "b", "c", "augment", "frequency"},
    "siso": {"k_p_pu", "k_i_pu", "decoupling", "voltage_feedforward"},
    "mimo": {"voltage_feedforward"},
    "scenario": {
        "controller", "xr_ratio", "xr_deg", "scr_events", "setpoints", "t_end", "dt_plant",
        "dt_ctrl", "delay_substeps", "t_d", "t_settle", "pll_gains", "vff_tau",
        "fail_on_instability", "command_limit_pu",
    },
    "sweep": {"param", "start", "stop", "count", "method"},
    "limits": {"scr", "xr_ratio", "xr_deg", "vg_over_vo", "search", "axes", "resolution"},
}


@dataclass(frozen=True)
class SynthesisSpec:
    q_bar: np.ndarray
    r_bar: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    augment: bool = True
    frequency: float = 50.0


@dataclass(frozen=True)
class SweepSpec:
    param: str = "SCR"
    start: float = 4.0
    stop: float = 2.0
    count: int = 50
    method: str = "sampled"

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class LimitsSpec:
    scr: float = 1.0
    xr_ratio: float = 1.0
    vg_over_vo: float = 1.0
    search: bool = False
    axes: tuple = ("P", "Q")
    resolution: float = 0.01


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    synthesis: SynthesisSpec
    sweep: SweepSpec
    limits: LimitsSpec
    fail_on_instability: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    def digest(self, *extra) -> str:
        """Short content hash of the parsed configuration (plus ``extra``)."""
        doc = json.dumps([self.raw, list(extra)], sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()[:12]


def _matrix(v, name: str) -> np.ndarray:
    try:
        m = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a numeric matrix") from exc
    if m.ndim != 2:
        raise ConfigError(f"{name} must be a 2-D array")
    return m


def _xr(sec: dict, default: float) -> float:
    if "xr_ratio" in sec and "xr_deg" in sec:
        raise ConfigError("give either xr_ratio or xr_deg, not both")
    if "xr_deg" in sec:
        return math.tan(math.radians(float(sec["xr_deg"])))
    return float(sec.get("xr_ratio", default))


def _events(rows, width: tuple, name: str) -> tuple:
    out = []
    for r in rows:
        if not isinstance(r, (list, tuple)) or len(r) not in width:
            raise ConfigError(f"each {name} entry needs {' or '.join(map(str, width))} numbers: {r!r}")
        out.append(tuple(float(v) for v in r))
    return tuple(out)


def parse_config(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed TOML document."""
    for sec, body in doc.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        unknown = set(body) - _SECTIONS[sec]
        if unknown:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(unknown)}")
    try:
        return _build(doc)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _build(doc: dict) -> RunConfig:
    pl, bs, gr = doc.get("plant", {}), doc.get("base", {}), doc.get("grid", {})
    fp = FilterParams(**{k: float(v) for k, v in pl.items()})
    base = PerUnitBase(**{k: float(v) for k, v in bs.items()})
    f_nom = float(gr.get("f_nom", 50.0))
    v_g = float(gr.get("v_g", base.v_base_ll))

    sy = doc.get("synthesis", {})
    if "q_diag" in sy and "q_bar" in sy:
        raise ConfigError("give either q_diag or q_bar, not both")
    q = _matrix(sy["q_bar"], "q_bar") if "q_bar" in sy else np.diag([float(v) for v in sy.get("q_diag", NOMINAL_Q)])
    r = _matrix(sy.get("r_bar", [[1.0, 0.0], [0.0, 1.0]]), "r_bar")
    syn = SynthesisSpec(
        q, r,
        *(None if k not in sy else _matrix(sy[k], k) for k in ("a", "b", "c")),
        augment=bool(sy.get("augment", True)),
        frequency=float(sy.get("frequency", f_nom)),
    )

    sc = doc.get("scenario", {})
    xr = _xr(sc, math.tan(math.radians(80.0)))
    scr_rows = _events(sc.get("scr_events", [[0.0, 5.0]]), (2, 3), "scr_events")
    scr_sched = tuple((e[0], e[1], e[2] if len(e) == 3 else xr) for e in scr_rows)
    sp_sched = _events(
        sc.get("setpoints", [[0.0, 0.6, 0.1], [0.4, 0.2, 0.1], [0.6, 0.6, 0.1]]), (3, 4), "setpoints"
    )
    si = doc.get("siso", {})
    siso = SisoPiConfig(
        float(si.get("k_p_pu", 0.13)) * base.z_base,
        float(si.get("k_i_pu", 11.25)) * base.z_base,
        decoupling=bool(si.get("decoupling", True)),
        voltage_feedforward=bool(si.get("voltage_feedforward", False)),
    )
    mimo_vff = bool(doc.get("mimo", {}).get("voltage_feedforward", False))
    mimo = None
    if mimo_vff or "synthesis" in doc:
        mimo = _mimo_from_spec(syn, fp, mimo_vff)
    kw = {}
    for key in ("t_end", "dt_plant", "dt_ctrl", "t_d", "t_settle", "vff_tau", "command_limit_pu"):
        if key in sc:
            kw[key] = float(sc[key])
    if "delay_substeps" in sc:
        kw["delay_substeps"] = int(sc["delay_substeps"])
    if "pll_gains" in sc:
        g = sc["pll_gains"]
        if len(g) != 2:
            raise ConfigError("pll_gains needs two numbers")
        kw["pll_gains"] = (float(g[0]), float(g[1]))
    scenario = ScenarioConfig(
        controller=str(sc.get("controller", "mimo")).lower(),
        scr_schedule=scr_sched, setpoint_schedule=sp_sched, base=base, filter=fp,
        f_nom=f_nom, v_g=v_g, siso=siso, mimo=mimo, **kw,
    )

    sw = doc.get("sweep", {})
    sweep = SweepSpec(
        str(sw.get("param", "SCR")), float(sw.get("start", 4.0)), float(sw.get("stop", 2.0)),
        int(sw.get("count", 50)), str(sw.get("method", "sampled")),
    )
    if sweep.param not in ("SCR", "R_f", "L_f"):
        raise ConfigError(f"sweep param must be SCR, R_f or L_f, got {sweep.param!r}")
    if sweep.count < 1:
        raise ConfigError("sweep count must be at least 1")
    if sweep.method not in ("sampled", "pade"):
        raise ConfigError(f"sweep method must be 'sampled' or 'pade', got {sweep.method!r}")

    li = doc.get("limits", {})
    axes = tuple(str(a).upper() for a in li.get("axes", ["P", "Q"]))
    if not axes or any(a not in ("P", "Q") for a in axes):
        raise ConfigError("limits axes must be a non-empty subset of ['P', 'Q']")
    limits = LimitsSpec(
        float(li.get("scr", 1.0)), _xr(li, 1.0), float(li.get("vg_over_vo", 1.0)),
        bool(li.get("search", False)), axes, float(li.get("resolution", 0.01)),
    )
    if not limits.scr > 0 or limits.xr_ratio < 0:
        raise ConfigError("limits need scr > 0 and xr_ratio >= 0")
    return RunConfig(scenario, syn, sweep, limits, bool(sc.get("fail_on_instability", False)), doc)


def _mimo_from_spec(syn: SynthesisSpec, fp: FilterParams, vff: bool):
    from .controllers import MimoPiConfig
    from .plant import TWO_PI, plant_matrices
    from .synthesis import augment, lqr_pi_gains

    if syn.a is not None or syn.b is not None or not syn.augment:
        return None
    res = lqr_pi_gains(augment(plant_matrices(fp, TWO_PI * syn.frequency)),
                       LqrWeights(syn.q_bar, syn.r_bar))
    return MimoPiConfig.from_synthesis(res, voltage_feedforward=vff)


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a TOML file; ``None`` gives the default profile."""
    if path is None:
        return parse_config({})
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return parse_config(doc)

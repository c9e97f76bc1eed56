"""Command-line entry point.

Commands: ``synthesize``, ``simulate``, ``compare``, ``sweep`` and
``limits``. Every command writes its artifacts plus a run manifest into
``--out``; file names are ``<command>_<param>_<hash>.<ext>`` where the hash
is taken over the parsed configuration and the command options, so reruns
of an unchanged configuration reproduce byte-identical files.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
failure, 4 instability detected while ``fail_on_instability`` is set.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, matops, synthesis
from .config import RunConfig, load_config
from .plant import TWO_PI, plant_matrices
from .sim import ConfigError, NoStepError, StepMetrics, TimeSeries, run_scenario, step_metrics, transfer_limit_search
from .synthesis import LqrWeights, UncontrollableError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_UNSTABLE = 4

METRICS_HEADER = (
    "controller", "axis", "step_time", "rise", "overshoot_pct", "settle_5pct", "cross_peak",
    "iae", "defined", "diverged",
)


class InstabilityError(RuntimeError):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    output_dir: str
    files: list = field(default_factory=list)

    def add(self, path: Path, content: str) -> None:
        path.write_text(content, encoding="utf-8", newline="\n")
        digest = hashlib.sha256(content.encode("utf-8")).hexdigest()
        self.files.append({"name": path.name, "sha256": digest})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    return repr(float(v))


# ------------------------------------------------------------ synthesize


def synthesis_report(cfg: RunConfig) -> dict:
    spec = cfg.synthesis
    if spec.a is None and spec.b is None:
        ss = plant_matrices(cfg.scenario.filter, TWO_PI * spec.frequency)
    else:
        a = spec.a if spec.a is not None else plant_matrices(cfg.scenario.filter, TWO_PI * spec.frequency).a
        b = spec.b if spec.b is not None else plant_matrices(cfg.scenario.filter, TWO_PI * spec.frequency).b
        c = spec.c if spec.c is not None else np.eye(a.shape[0])
        ss = matops.StateSpace(a, b, c)
    if not spec.augment:
        res = synthesis.lqr_gain(ss.a, ss.b, spec.q_bar, spec.r_bar)
        doc = res.report()
        doc["augmented"] = False
        return doc
    aug = synthesis.augment(ss)
    res = synthesis.lqr_pi_gains(aug, LqrWeights(spec.q_bar, spec.r_bar))
    doc = res.report()
    doc["augmented"] = True
    doc["frequency_hz"] = spec.frequency
    return doc


def _matrix_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "row", "col", "value"])
    for name in sorted(doc):
        val = doc[name]
        if isinstance(val, list) and val and isinstance(val[0], list):
            for i, row in enumerate(val):
                for j, x in enumerate(row):
                    w.writerow([name, i, j, _fmt(x)])
        elif isinstance(val, (int, float)) and not isinstance(val, bool):
            w.writerow([name, "", "", _fmt(val)])
    return buf.getvalue()


def cmd_synthesize(cfg: RunConfig, out: Path, fmt: str, man: RunManifest, h: str) -> None:
    doc = synthesis_report(cfg)
    if fmt == "json":
        man.add(out / f"synthesize_report_{h}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        man.add(out / f"synthesize_report_{h}.csv", _matrix_csv(doc))


# ------------------------------------------------------------ simulate / compare


def _controllers(cfg: RunConfig, choice: str | None) -> list:
    if choice in (None, ""):
        return [cfg.scenario.controller]
    return ["siso", "mimo"] if choice == "both" else [choice]


def _series_json(ts: TimeSeries) -> str:
    cols = {name: [None if not math.isfinite(v) else float(v) for v in ts.channel(name)]
            for name in ("t", "i_id", "i_iq", "i_id_ref", "i_iq_ref", "v_od", "v_oq",
                         "omega_dev", "v_id_cmd", "v_iq_cmd")}
    cols["diverged"] = [bool(v) for v in ts.diverged_flags]
    doc = {"diverged": ts.diverged, "diverged_at": ts.diverged_at, "channels": cols}
    return json.dumps(doc, sort_keys=True) + "\n"


def cmd_simulate(cfg: RunConfig, out: Path, fmt: str, man: RunManifest, h: str, choice) -> dict:
    runs = {}
    for c in _controllers(cfg, choice):
        ts = run_scenario(cfg.scenario.with_(controller=c))
        runs[c] = ts
        if fmt == "json":
            man.add(out / f"simulate_{c}_{h}.json", _series_json(ts))
        else:
            man.add(out / f"simulate_{c}_{h}.csv", ts.to_csv())
    return runs


def setpoint_steps(cfg: RunConfig) -> list:
    """``(time, axis)`` for every setpoint change inside the recorded window."""
    sched = cfg.scenario.setpoint_schedule
    steps = []
    for prev, cur in zip(sched, sched[1:]):
        if cur[0] <= 0 or cur[0] >= cfg.scenario.t_end:
            continue
        for axis, j in (("d", 1), ("q", 2)):
            if cur[j] != prev[j]:
                steps.append((cur[0], axis))
    return steps


def metrics_rows(controller: str, ts: TimeSeries, steps: list) -> list:
    rows = []
    if not steps:
        m = StepMetrics.undefined()
        return [(controller, "none", float("nan"), m, ts.diverged)]
    for t, axis in steps:
        try:
            m = step_metrics(ts, t, axis)
        except NoStepError:
            m = StepMetrics.undefined()
        rows.append((controller, axis, t, m, ts.diverged))
    return rows


def metrics_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for c, axis, t, m, div in rows:
        w.writerow([c, axis, _fmt(t), _fmt(m.rise_time_10_90), _fmt(m.overshoot_pct),
                    _fmt(m.settling_time_5pct), _fmt(m.cross_coupling_peak), _fmt(m.iae),
                    int(m.defined), int(div)])
    return buf.getvalue()


def deltas_csv(rows: list) -> str:
    """SISO minus MIMO for each step (positive favours MIMO)."""
    by = {(c, axis, t): m for c, axis, t, m, _ in rows}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "step_time", "d_rise", "d_overshoot_pct", "d_settle_5pct", "d_cross_peak", "iae_ratio"])
    for (c, axis, t), s in by.items():
        if c != "siso" or (("mimo", axis, t) not in by):
            continue
        m = by[("mimo", axis, t)]
        ratio = s.iae / m.iae if m.iae and math.isfinite(m.iae) else float("nan")
        w.writerow([axis, _fmt(t), _fmt(s.rise_time_10_90 - m.rise_time_10_90),
                    _fmt(s.overshoot_pct - m.overshoot_pct),
                    _fmt(s.settling_time_5pct - m.settling_time_5pct),
                    _fmt(s.cross_coupling_peak - m.cross_coupling_peak), _fmt(ratio)])
    return buf.getvalue()


def cmd_compare(cfg: RunConfig, out: Path, fmt: str, man: RunManifest, h: str, choice) -> dict:
    runs = cmd_simulate(cfg, out, fmt, man, h, choice or "both")
    steps = setpoint_steps(cfg)
    rows = []
    for c, ts in runs.items():
        rows += metrics_rows(c, ts, steps)
    man.add(out / f"compare_metrics_{h}.csv", metrics_csv(rows))
    if {"siso", "mimo"} <= set(runs):
        man.add(out / f"compare_deltas_{h}.csv", deltas_csv(rows))
    return runs


# ------------------------------------------------------------ sweep / limits


def cmd_sweep(cfg: RunConfig, out: Path, fmt: str, man: RunManifest, h: str, choice) -> dict:
    spec = cfg.sweep
    results = {}
    for c in _controllers(cfg, choice or "both"):
        res = analysis.sweep(spec.param, spec.values(), cfg.scenario.with_(controller=c), spec.method)
        results[c] = res
        if fmt == "json":
            doc = {
                "param": res.param, "values": res.values, "max_real_part": res.max_real_part,
                "first_unstable": res.first_unstable, "errors": {repr(k): v for k, v in res.errors.items()},
                "spectra": [None if s is None else [[float(z.real), float(z.imag)] for z in s]
                            for s in res.spectra],
            }
            man.add(out / f"sweep_{spec.param}_{c}_{h}.json", json.dumps(doc, sort_keys=True) + "\n")
        else:
            man.add(out / f"sweep_{spec.param}_{c}_{h}.csv", res.to_csv())
    summary = {c: {"first_unstable": r.first_unstable, "unstable_points": r.unstable_count(),
                   "failed_points": len(r.errors)} for c, r in results.items()}
    man.add(out / f"sweep_{spec.param}_summary_{h}.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return results


def cmd_limits(cfg: RunConfig, out: Path, fmt: str, man: RunManifest, h: str, choice) -> dict:
    spec = cfg.limits
    lim = analysis.static_limits(spec.scr, spec.xr_ratio, spec.vg_over_vo)
    doc = json.loads(lim.to_json())
    if spec.search:
        found = {}
        for c in _controllers(cfg, choice or "both"):
            for ax in spec.axes:
                r = transfer_limit_search(cfg.scenario.with_(controller=c), ax, spec.scr,
                                          spec.xr_ratio, resolution=spec.resolution)
                found[f"{c}_{ax}"] = {"value": r.value, "lower": r.lower, "upper": r.upper,
                                      "at_cap": r.at_cap, "monotone": r.monotone}
        doc["dynamic_limits"] = found
    if fmt == "json":
        man.add(out / f"limits_static_{h}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        text = lim.to_csv()
        if spec.search:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["key", "value", "lower", "upper", "at_cap", "monotone"])
            for k, v in doc["dynamic_limits"].items():
                w.writerow([k, _fmt(v["value"]), _fmt(v["lower"]), _fmt(v["upper"]),
                            int(v["at_cap"]), int(v["monotone"])])
            man.add(out / f"limits_dynamic_{h}.csv", buf.getvalue())
        man.add(out / f"limits_static_{h}.csv", text)
    return doc


# ------------------------------------------------------------ driver

COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "limits": cmd_limits,
}


def _check_instability(command: str, result) -> None:
    if command in ("simulate", "compare"):
        bad = [c for c, ts in result.items() if ts.diverged]
        if bad:
            raise InstabilityError(f"diverged runs: {bad}")
    elif command == "sweep":
        bad = [c for c, r in result.items() if r.first_unstable is not None]
        if bad:
            raise InstabilityError(f"unstable sweep points for: {bad}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lqrpi", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="TOML configuration file (default: built-in profile)")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--controller", choices=("siso", "mimo", "both"),
                   help="controller(s) to run; default depends on the command")
    p.add_argument("--format", choices=("csv", "json"), default=None,
                   help="artifact format (synthesize defaults to json, others to csv)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fmt = args.format or ("json" if args.command == "synthesize" else "csv")
    try:
        cfg = load_config(args.config)
        h = cfg.digest(args.command, args.controller, fmt)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(args.command, args.config, str(out))
        fn = COMMANDS[args.command]
        if args.command == "synthesize":
            result = fn(cfg, out, fmt, man, h)
        else:
            result = fn(cfg, out, fmt, man, h, args.controller)
        (out / f"manifest_{args.command}_{h}.json").write_text(man.to_json(), encoding="utf-8", newline="\n")
        if cfg.fail_on_instability:
            _check_instability(args.command, result)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UncontrollableError as exc:
        print(f"synthesis error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (matops.MatrixError, matops.ConvergenceError, analysis.LinearizationError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InstabilityError as exc:
        print(f"instability detected: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in man.files:
        print(out / f["name"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""SISO-PI versus LQR-PI current steps in a strong and a weak grid.

Writes one time-series CSV per run and a metrics table to ``--out``.

    python scripts/compare_steps.py --out results/steps
"""
import argparse
import csv
import math
from pathlib import Path

from lqrpi.sim import NoStepError, ScenarioConfig, run_scenario, step_metrics

STEPS = ((0.0, 0.6, 0.1), (0.4, 0.2, 0.1), (0.6, 0.6, 0.1))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="results/steps")
    ap.add_argument("--scr", type=float, nargs="+", default=[5.0, 1.95])
    ap.add_argument("--xr-deg", type=float, default=80.0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    xr = math.tan(math.radians(args.xr_deg))
    rows = []
    for scr in args.scr:
        for c in ("siso", "mimo"):
            cfg = ScenarioConfig(controller=c, scr_schedule=((0.0, scr, xr),),
                                 setpoint_schedule=STEPS, t_end=1.6)
            ts = run_scenario(cfg)
            (out / f"steps_scr{scr:g}_{c}.csv").write_text(ts.to_csv())
            for t in (0.4, 0.6):
                try:
                    m = step_metrics(ts, t, "d")
                except NoStepError:
                    continue
                rows.append([scr, c, t, m.rise_time_10_90, m.overshoot_pct, m.settling_time_5pct,
                             m.cross_coupling_peak, m.iae, ts.diverged])
                print(f"SCR {scr:5.2f} {c:4s} t={t}: overshoot {m.overshoot_pct:6.1f}%  "
                      f"settle {m.settling_time_5pct * 1e3:7.1f} ms  cross {m.cross_coupling_peak:.4f}  "
                      f"IAE {m.iae:.4f}  diverged {ts.diverged}")
    with open(out / "step_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scr", "controller", "step_time", "rise", "overshoot_pct", "settle_5pct",
                    "cross_peak", "iae", "diverged"])
        w.writerows(rows)


if __name__ == "__main__":
    main()

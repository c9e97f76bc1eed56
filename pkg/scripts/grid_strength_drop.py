"""Equal active and reactive injection while the grid weakens from SCR 4 to 2.

    python scripts/grid_strength_drop.py --out results/drop
"""
import argparse
import math
from pathlib import Path

import numpy as np

from lqrpi.sim import ScenarioConfig, run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="results/drop")
    ap.add_argument("--current", type=float, default=0.66, help="|i_d| = |i_q| in p.u.")
    ap.add_argument("--event", type=float, default=0.4)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    xr = math.tan(math.radians(80.0))
    sp = (args.current, -args.current)
    for c in ("siso", "mimo"):
        cfg = ScenarioConfig(controller=c, scr_schedule=((0.0, 4.0, xr), (args.event, 2.0, xr)),
                             setpoint_schedule=((0.0, *sp),), t_end=1.5)
        ts = run_scenario(cfg)
        (out / f"drop_{c}.csv").write_text(ts.to_csv())
        k0 = int(round(args.event / (ts.t[1] - ts.t[0])))
        dev = np.maximum(np.abs(ts.i_id[k0:] - sp[0]), np.abs(ts.i_iq[k0:] - sp[1])) / args.current
        outside = np.nonzero(~(dev <= 0.05))[0]
        settle = 0.0 if outside.size == 0 else (
            math.inf if outside[-1] + 1 >= dev.size else ts.t[k0 + outside[-1] + 1] - args.event)
        print(f"{c}: diverged {ts.diverged} (at {ts.diverged_at}), re-settle {settle:.3f} s after event")


if __name__ == "__main__":
    main()

"""Closed-loop eigenvalue sweeps over grid strength and filter parameters.

    python scripts/eigen_sweeps.py --out results/sweeps --points 50 --workers 4
"""
import argparse
import math
from pathlib import Path

import numpy as np

from lqrpi.analysis import sweep
from lqrpi.sim import ScenarioConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="results/sweeps")
    ap.add_argument("--points", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--method", choices=("sampled", "pade"), default="sampled")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    xr = math.tan(math.radians(80.0))
    studies = (
        ("SCR", np.linspace(4.0, 2.0, args.points), 4.0),
        ("R_f", np.linspace(1.0, 2.0, args.points), 2.0),
        ("L_f", np.linspace(1.0, 0.5, args.points), 2.0),
    )
    for param, values, scr in studies:
        for c in ("siso", "mimo"):
            tpl = ScenarioConfig(controller=c, scr_schedule=((0.0, scr, xr),),
                                 setpoint_schedule=((0.0, 0.6, 0.1),))
            res = sweep(param, values, tpl, method=args.method, workers=args.workers)
            (out / f"sweep_{param}_{c}.csv").write_text(res.to_csv())
            print(f"{param:3s} {c:4s}: first unstable {res.first_unstable}, unstable points "
                  f"{res.unstable_count()}/{len(values)}, max real part {np.nanmax(res.max_real_part):.3f}")


if __name__ == "__main__":
    main()

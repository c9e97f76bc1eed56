"""Static power-transfer limits and simulated current limits per controller.

    python scripts/transfer_limits.py --scr 1 --xr 1
"""
import argparse

from lqrpi.analysis import static_limits
from lqrpi.sim import ScenarioConfig, transfer_limit_search


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--scr", type=float, default=1.0)
    ap.add_argument("--xr", type=float, default=1.0)
    ap.add_argument("--resolution", type=float, default=0.01)
    ap.add_argument("--static-only", action="store_true")
    args = ap.parse_args()
    lim = static_limits(args.scr, args.xr)
    print(f"static: P_max {lim.p_max_pu:.4f} p.u., Q {lim.q_pu:.4f} p.u., "
          f"angle {lim.delta_at_max():.4f} rad")
    if args.static_only:
        return
    for c in ("siso", "mimo"):
        for axis in ("P", "Q"):
            r = transfer_limit_search(ScenarioConfig(controller=c), axis, args.scr, args.xr,
                                      resolution=args.resolution)
            print(f"{c:4s} {axis}: {r.value:.4f} p.u. (bracket {r.lower:.4f}..{r.upper:.4f}, "
                  f"at cap {r.at_cap}, monotone {r.monotone})")


if __name__ == "__main__":
    main()

"""LQR-PI gains for the nominal filter at 50 Hz and 60 Hz.

    python scripts/synthesize_nominal.py
"""
import numpy as np

from lqrpi import matops
from lqrpi.plant import TWO_PI, FilterParams, plant_matrices
from lqrpi.synthesis import LqrWeights, augment, lqr_pi_gains


def main() -> None:
    np.set_printoptions(precision=4, suppress=True)
    for f in (50.0, 60.0):
        res = lqr_pi_gains(augment(plant_matrices(FilterParams(), TWO_PI * f)), LqrWeights.nominal())
        print(f"--- {f:.0f} Hz")
        print("K_P =\n", res.k_p)
        print("K_I =\n", res.k_i)
        print("CARE residual", f"{res.care_residual:.2e}")
        print("closed-loop eigenvalues", matops.eigenvalues(res.closed_loop))


if __name__ == "__main__":
    main()

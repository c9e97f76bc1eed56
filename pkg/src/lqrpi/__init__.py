"""LQR-designed MIMO-PI current control for grid-following converters.

Modules
-------
matops       dense linear algebra: eigenvalues, Lyapunov and Riccati solvers
plant        dq-frame converter, LC filter and Thevenin grid; Park and PLL
synthesis    integral-augmented LQR design of the MIMO-PI gains
controllers  discrete SISO-PI and MIMO-PI laws and the command delay line
sim          fixed-step scenario engine, step metrics, transfer-limit search
analysis     closed-loop linearization, eigenvalue sweeps, static limits
config       TOML scenario files
cli          command-line entry point
"""

__version__ = "0.1.0"

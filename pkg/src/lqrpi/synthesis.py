"""LQR design of the MIMO-PI current controller.

The plant ``x' = A x + B u`` is augmented with the integral of the tracking
error, the resulting regulator problem is solved through the CARE and the
optimal state-feedback gain is split into proportional and integral blocks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import matops
from .matops import MatrixError, StateSpace


class UncontrollableError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentedSystem:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray


@dataclass(frozen=True)
class LqrWeights:
    q_bar: np.ndarray
    r_bar: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_bar, dtype=float)
        r = np.asarray(self.r_bar, dtype=float)
        if np.max(np.abs(q - q.T), initial=0.0) > 1e-12 or np.max(np.abs(r - r.T), initial=0.0) > 1e-12:
            raise MatrixError("LQR weights must be symmetric")
        if np.min(np.linalg.eigvalsh(q)) < -1e-12:
            raise MatrixError("q_bar must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(r)) <= 0:
            raise MatrixError("r_bar must be positive definite")
        object.__setattr__(self, "q_bar", q)
        object.__setattr__(self, "r_bar", r)

    @classmethod
    def nominal(cls) -> "LqrWeights":
        return cls(np.diag([0.0769, 0.0769, 70.0, 70.0]), np.eye(2))


@dataclass(frozen=True)
class ControllabilityReport:
    matrix: np.ndarray
    rank: int
    required: int

    @property
    def passed(self) -> bool:
        return self.rank == self.required


@dataclass(frozen=True)
class SynthesisResult:
    p: np.ndarray
    k_full: np.ndarray
    k_p: np.ndarray
    k_i: np.ndarray
    feedforward_map: np.ndarray
    aug: AugmentedSystem = field(repr=False)
    weights: LqrWeights = field(repr=False)
    care_residual: float = 0.0

    @property
    def closed_loop(self) -> np.ndarray:
        return self.aug.a_bar - self.aug.b_bar @ self.k_full

    def report(self) -> dict:
        """JSON-ready summary: matrices as nested lists, eigenvalues as [re, im]."""
        eig = matops.eigenvalues(self.closed_loop)
        eig = sorted(eig, key=lambda z: (z.real, z.imag))
        return {
            "a_bar": self.aug.a_bar.tolist(),
            "b_bar": self.aug.b_bar.tolist(),
            "c_bar": self.aug.c_bar.tolist(),
            "q_bar": self.weights.q_bar.tolist(),
            "r_bar": self.weights.r_bar.tolist(),
            "p": self.p.tolist(),
            "k_full": self.k_full.tolist(),
            "k_p": self.k_p.tolist(),
            "k_i": self.k_i.tolist(),
            "feedforward_map": self.feedforward_map.tolist(),
            "care_residual": self.care_residual,
            "closed_loop_eigenvalues": [[float(z.real), float(z.imag)] for z in eig],
        }

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def augment(ss: StateSpace) -> AugmentedSystem:
    """Append integrators of the output error: x_bar = [e_x; z]."""
    a, b, c = (np.asarray(m, dtype=float) for m in (ss.a, ss.b, ss.c))
    n, m = b.shape
    p = c.shape[0]
    if a.shape != (n, n) or c.shape[1] != n:
        raise MatrixError(f"dimension mismatch a{a.shape} b{b.shape} c{c.shape}")
    a_bar = np.zeros((n + p, n + p))
    a_bar[:n, :n] = a
    a_bar[n:, :n] = c
    b_bar = np.zeros((n + p, m))
    b_bar[:n, :] = b
    c_bar = np.zeros((p + p, n + p))
    c_bar[:p, :n] = c
    c_bar[p:, n:] = np.eye(p)
    return AugmentedSystem(a_bar, b_bar, c_bar)


def check_controllability(aug: AugmentedSystem) -> ControllabilityReport:
    """Kalman rank test on ``[B, AB, ..., A^(n-1) B]``.

    The rank is evaluated with every ``A^k B`` block scaled to unit norm;
    scaling columns does not change the exact rank but keeps stiff plants
    (large ``R_f / L_f``) from losing directions to round-off.
    """
    n = aug.a_bar.shape[0]
    blocks = [aug.b_bar]
    for _ in range(n - 1):
        blocks.append(aug.a_bar @ blocks[-1])
    ctrb = np.hstack(blocks)
    scaled = np.hstack([blk / np.linalg.norm(blk) if np.linalg.norm(blk) > 0 else blk for blk in blocks])
    return ControllabilityReport(ctrb, matops.rank(scaled), n)


def feedforward_map(ss: StateSpace) -> np.ndarray:
    """Matrix ``M`` with ``u* = M x*`` holding ``A x* + B u* = 0``."""
    b = np.asarray(ss.b, dtype=float)
    if b.shape[0] != b.shape[1] or matops.rank(b) < b.shape[0]:
        raise MatrixError("B must be square and invertible for the equilibrium feedforward")
    return -np.linalg.solve(b, ss.a)


def feedforward(x_star, ss: StateSpace) -> np.ndarray:
    return feedforward_map(ss) @ np.asarray(x_star, dtype=float)


def lqr_pi_gains(aug: AugmentedSystem, w: LqrWeights, n_plant: int | None = None) -> SynthesisResult:
    """Solve the LQR problem on the augmented system and split the gain.

    ``n_plant`` defaults to the number of inputs (square plant). The state
    weight passed to the Riccati solver is ``C_bar' Q_bar C_bar``.
    """
    report = check_controllability(aug)
    if not report.passed:
        raise UncontrollableError(
            f"augmented system not controllable: rank {report.rank} < {report.required}"
        )
    c_bar = aug.c_bar
    q_eff = c_bar.T @ w.q_bar @ c_bar
    q_eff = 0.5 * (q_eff + q_eff.T)
    p = matops.solve_care(aug.a_bar, aug.b_bar, q_eff, w.r_bar)
    k = np.linalg.solve(w.r_bar, aug.b_bar.T @ p)
    m = aug.b_bar.shape[1] if n_plant is None else n_plant
    ss = StateSpace(aug.a_bar[:m, :m], aug.b_bar[:m, :], aug.c_bar[:m, :m])
    try:
        ff = feedforward_map(ss)
    except MatrixError:
        ff = np.full((aug.b_bar.shape[1], m), np.nan)
    res = matops.care_residual(aug.a_bar, aug.b_bar, q_eff, w.r_bar, p)
    if not matops.is_hurwitz(aug.a_bar - aug.b_bar @ k):
        raise matops.ConvergenceError("LQR closed loop is not Hurwitz")
    return SynthesisResult(p, k, k[:, :m].copy(), k[:, m:].copy(), ff, aug, w, res)


def cost_to_go(p, x_bar0) -> float:
    """Optimal infinite-horizon cost ``0.5 x0' P x0``."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x_bar0, dtype=float)
    if p.shape != (x.size, x.size):
        raise MatrixError(f"p shape {p.shape} does not match state of size {x.size}")
    return 0.5 * float(x @ p @ x)


def integrated_cost(result: SynthesisResult, x_bar0, horizon: float = 1.0,
                    n_steps: int = 20000) -> float:
    """Trapezoid-rule cost of the closed-loop trajectory from ``x_bar0``.

    Independent of the Riccati solution: the trajectory comes from the matrix
    exponential of the closed loop and the integrand is evaluated directly.
    """
    import scipy.integrate
    import scipy.linalg

    acl = result.closed_loop
    q = result.aug.c_bar.T @ result.weights.q_bar @ result.aug.c_bar
    k, r = result.k_full, result.weights.r_bar
    dt = horizon / n_steps
    step = scipy.linalg.expm(acl * dt)
    x = np.asarray(x_bar0, dtype=float)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for i in range(n_steps):
        x = step @ x
        states[i + 1] = x
    u = states @ k.T
    integrand = np.einsum("ij,jk,ik->i", states, q, states) + np.einsum("ij,jk,ik->i", u, r, u)
    return 0.5 * float(scipy.integrate.trapezoid(integrand, dx=dt))


@dataclass(frozen=True)
class LqrResult:
    """Plain state-feedback LQR on ``(a, b)`` without integral augmentation."""

    p: np.ndarray
    k: np.ndarray
    care_residual: float
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def report(self) -> dict:
        eig = sorted(matops.eigenvalues(self.a - self.b @ self.k), key=lambda z: (z.real, z.imag))
        return {
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "p": self.p.tolist(),
            "k": self.k.tolist(),
            "care_residual": self.care_residual,
            "closed_loop_eigenvalues": [[float(z.real), float(z.imag)] for z in eig],
        }


def lqr_gain(a, b, q, r) -> LqrResult:
    """``K = R^-1 B' P`` for ``x' = A x + B u`` with cost weights ``q``, ``r``."""
    a, b, q, r = (np.asarray(m, dtype=float) for m in (a, b, q, r))
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    if matops.rank(np.hstack(blocks)) < a.shape[0] and not matops.is_hurwitz(a):
        raise UncontrollableError("(a, b) is not controllable and a is not Hurwitz")
    p = matops.solve_care(a, b, q, r)
    k = np.linalg.solve(r, b.T @ p)
    return LqrResult(p, k, matops.care_residual(a, b, q, r, p), a, b)

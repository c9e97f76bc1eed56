"""Dense real-matrix kernel.

Eigenvalues (Hessenberg reduction + Francis double-shift QR), Lyapunov
equations by Kronecker vectorization, the continuous algebraic Riccati
equation by Kleinman-Newton iteration with a Hamiltonian invariant-subspace
cross-check, and numerical rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

EPS = np.finfo(float).eps
LYAP_MAX_DIM = 20
EIG_MAX_DIM = 64


class MatrixError(ValueError):
    """Raised when a matrix violates an operation's preconditions."""


class ConvergenceError(ArithmeticError):
    """Raised when an iterative solver fails to converge."""


@dataclass(frozen=True)
class StateSpace:
    """Dense linear system ``x' = a x + b u``, ``y = c x``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, n) or self.b.shape[0] != n or self.c.shape[1] != n:
            raise MatrixError(
                f"inconsistent shapes a{self.a.shape} b{self.b.shape} c{self.c.shape}"
            )

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    if arr.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} has non-finite entries")
    return arr


def _square(m, name: str = "matrix") -> np.ndarray:
    arr = as_matrix(m, name)
    if arr.shape[0] != arr.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------- eigenvalues


def hessenberg(m) -> np.ndarray:
    """Upper Hessenberg form of ``m`` by Householder similarity transforms."""
    h = _square(m).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _reflector(x: np.ndarray) -> np.ndarray | None:
    alpha = np.linalg.norm(x)
    if alpha == 0.0:
        return None
    v = x.copy()
    v[0] += np.copysign(alpha, x[0])
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return None
    return v / nv


def _francis_qr(h: np.ndarray, max_sweeps: int) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix (modified in place).

    Deflates from the bottom; 1x1 and 2x2 trailing blocks are split off as
    they decouple. Exceptional shifts are used every 10 stalled sweeps.
    """
    n = h.shape[0]
    eig = np.zeros(n, dtype=complex)
    norm = max(np.abs(h).sum(), EPS)
    hi = n - 1
    stall = 0
    total = 0
    while hi >= 0:
        # find the lowest negligible subdiagonal in the active window
        lo = hi
        while lo > 0:
            # local scale, floored so that entries negligible against the
            # whole matrix always deflate
            s = max(abs(h[lo - 1, lo - 1]) + abs(h[lo, lo]), EPS * norm)
            if abs(h[lo, lo - 1]) <= EPS * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eig[hi] = h[hi, hi]
            hi -= 1
            stall = 0
            continue
        if lo == hi - 1:
            a, b = h[hi - 1, hi - 1], h[hi - 1, hi]
            c, d = h[hi, hi - 1], h[hi, hi]
            tr = 0.5 * (a + d)
            disc = 0.25 * (a - d) ** 2 + b * c
            if disc >= 0.0:
                r = np.sqrt(disc)
                # avoid cancellation in the smaller root
                big = tr + np.copysign(r, tr) if tr != 0.0 else r
                det = a * d - b * c
                small = det / big if big != 0.0 else tr - r
                eig[hi - 1], eig[hi] = big, small
            else:
                r = np.sqrt(-disc)
                eig[hi - 1], eig[hi] = complex(tr, r), complex(tr, -r)
            hi -= 2
            stall = 0
            continue

        total += 1
        stall += 1
        if total > max_sweeps:
            raise ConvergenceError(
                f"QR iteration did not converge after {max_sweeps} sweeps"
            )
        if stall % 10 == 0:
            # exceptional shift breaks symmetric stagnation cycles
            w = abs(h[hi, hi - 1]) + abs(h[hi - 1, hi - 2])
            s_sum = 1.5 * w + h[hi, hi]
            s_prod = w * w
        else:
            a, b = h[hi - 1, hi - 1], h[hi - 1, hi]
            c, d = h[hi, hi - 1], h[hi, hi]
            s_sum = a + d
            s_prod = a * d - b * c

        # first column of (H - s1)(H - s2)
        h00, h01 = h[lo, lo], h[lo, lo + 1]
        h10, h11 = h[lo + 1, lo], h[lo + 1, lo + 1]
        x = h00 * h00 + h01 * h10 - s_sum * h00 + s_prod
        y = h10 * (h00 + h11 - s_sum)
        z = h10 * h[lo + 2, lo + 1]

        for k in range(lo, hi - 1):
            v = _reflector(np.array([x, y, z]))
            if v is not None:
                c0 = max(lo, k - 1)
                blk = h[k:k + 3, c0:]
                blk -= 2.0 * np.outer(v, v @ blk)
                r1 = min(k + 4, hi + 1)
                blk = h[:r1, k:k + 3]
                blk -= 2.0 * np.outer(blk @ v, v)
            x = h[k + 1, k]
            y = h[k + 2, k]
            if k < hi - 2:
                z = h[k + 3, k]
        v = _reflector(np.array([x, y]))
        if v is not None:
            k = hi - 1
            blk = h[k:k + 2, k - 1:]
            blk -= 2.0 * np.outer(v, v @ blk)
            blk = h[:hi + 1, k:k + 2]
            blk -= 2.0 * np.outer(blk @ v, v)
    return eig


def eigenvalues(m, max_sweeps: int | None = None) -> np.ndarray:
    """All eigenvalues of a real square matrix.

    Conjugate pairs are returned with the positive imaginary part first.

    Raises:
        MatrixError: non-square input or dimension above 64.
        ConvergenceError: the QR iteration stalled.
    """
    a = _square(m)
    n = a.shape[0]
    if n > EIG_MAX_DIM:
        raise MatrixError(f"dimension {n} exceeds cap {EIG_MAX_DIM}")
    if n == 0:
        return np.zeros(0, dtype=complex)
    if max_sweeps is None:
        max_sweeps = 60 * n
    # balancing keeps the deflation test scale-aware for badly scaled plants
    # scipy's balancing casts its scale factors and warns for entries near
    # the bottom of the exponent range; the balanced matrix is still valid
    with np.errstate(invalid="ignore", over="ignore"):
        b, _ = scipy.linalg.matrix_balance(a, permute=False)
    # exact power-of-two scaling keeps the shift products away from
    # underflow and overflow
    peak = np.abs(b).max()
    if peak == 0.0:
        return np.zeros(n, dtype=complex)
    scale = np.ldexp(1.0, int(np.frexp(peak)[1]))
    return _francis_qr(hessenberg(b / scale), max_sweeps) * scale


def spectral_abscissa(m) -> float:
    return float(np.max(eigenvalues(m).real))


def is_hurwitz(m) -> bool:
    return spectral_abscissa(m) < 0.0


# ---------------------------------------------------------------------- rank


def rank(m) -> int:
    """Numerical rank via column-pivoted QR.

    Tolerance is ``max(rows, cols) * eps * |r_00|``; ``|r_00|`` of a pivoted
    QR is the largest column norm, which bounds the top singular value to
    within a factor sqrt(cols).
    """
    a = as_matrix(m)
    if a.size == 0:
        return 0
    r = scipy.linalg.qr(a, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0.0:
        return 0
    tol = max(a.shape) * EPS * d[0]
    return int(np.sum(d > tol))


# ---------------------------------------------------------------- Lyapunov


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve ``a.T @ x + x @ a + q = 0`` for symmetric ``x``.

    Uses the n^2 x n^2 Kronecker system, so dimension is capped at 20.
    """
    a = _square(a, "a")
    q = _square(q, "q")
    n = a.shape[0]
    if q.shape != (n, n):
        raise MatrixError(f"q shape {q.shape} does not match a {a.shape}")
    if n > LYAP_MAX_DIM:
        raise MatrixError(f"dimension {n} exceeds Lyapunov cap {LYAP_MAX_DIM}")
    if np.max(eigenvalues(a).real) >= 0.0:
        raise MatrixError("a is not Hurwitz; Lyapunov equation has no unique solution")
    eye = np.eye(n)
    # row-major vec: vec(a.T x) = (a.T kron I) vec(x), vec(x a) = (I kron a.T) vec(x)
    op = np.kron(a.T, eye) + np.kron(eye, a.T)
    x = np.linalg.solve(op, -q.reshape(-1)).reshape(n, n)
    return 0.5 * (x + x.T)


def lyapunov_residual(a, q, x) -> float:
    a, q, x = (np.asarray(v, dtype=float) for v in (a, q, x))
    res = a.T @ x + x @ a + q
    scale = np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(q)
    return float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))


# ------------------------------------------------------------------ Riccati


def care_residual(a, b, q, r, p) -> float:
    """Relative residual of ``p b r^-1 b' p - p a - a' p - q = 0``."""
    a, b, q, r, p = (np.asarray(v, dtype=float) for v in (a, b, q, r, p))
    g = b @ np.linalg.solve(r, b.T)
    res = p @ g @ p - p @ a - a.T @ p - q
    scale = (
        np.linalg.norm(p @ g @ p)
        + 2.0 * np.linalg.norm(p @ a)
        + np.linalg.norm(q)
    )
    if scale == 0.0:
        return float(np.linalg.norm(res))
    return float(np.linalg.norm(res) / scale)


def _check_care_inputs(a, b, q, r):
    a = _square(a, "a")
    b = as_matrix(b, "b")
    q = _square(q, "q")
    r = _square(r, "r")
    n, m = a.shape[0], b.shape[1]
    if b.shape[0] != n or q.shape != (n, n) or r.shape != (m, m):
        raise MatrixError(
            f"shape mismatch a{a.shape} b{b.shape} q{q.shape} r{r.shape}"
        )
    if not np.allclose(r, r.T, rtol=0, atol=1e-12 * max(1.0, np.abs(r).max())):
        raise MatrixError("r must be symmetric")
    if np.min(np.linalg.eigvalsh(r)) <= 0.0:
        raise MatrixError("r must be positive definite")
    if not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise MatrixError("q must be symmetric")
    return a, b, 0.5 * (q + q.T), 0.5 * (r + r.T)


def _bass_gain(a: np.ndarray, b: np.ndarray, r: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    lowest = float(np.min(eigenvalues(a).real))
    beta = max(-lowest, 0.0) + max(1.0, 1e-3 * np.linalg.norm(a))
    shifted = a + beta * np.eye(n)
    g = b @ np.linalg.solve(r, b.T)
    x0 = solve_lyapunov(-shifted.T, 2.0 * g)
    try:
        return np.linalg.solve(r, b.T @ np.linalg.solve(0.5 * (x0 + x0.T), np.eye(n)))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("pole-shifting Gramian is singular; pair not stabilizable") from exc


def initial_stabilizing_gain(a, b, r, max_stages: int = 4) -> np.ndarray:
    """Deterministic stabilizing gain by pole shifting (Bass).

    ``beta`` is chosen so that ``a + beta I`` has its whole spectrum in the
    open right half-plane. Then ``x0`` from
    ``(a + beta I) x0 + x0 (a + beta I)' = 2 b r^-1 b'`` is positive definite
    for a controllable pair, and ``k0 = r^-1 b' x0^-1`` moves every
    closed-loop eigenvalue to the line ``Re s = -beta``.

    For nearly uncontrollable pairs ``x0`` is badly conditioned and a weakly
    controllable unstable mode can survive rounding. The step is then
    repeated on the partially closed loop and the gains are summed.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.asarray(r, dtype=float)
    k = np.zeros((b.shape[1], a.shape[0]))
    for _ in range(max_stages):
        acl = a - b @ k
        if np.max(eigenvalues(acl).real) < 0.0:
            break
        k = k + _bass_gain(acl, b, r)
    return k


def _riccati_defect(a, g, q, p) -> np.ndarray:
    """Symmetric ``a' p + p a + q - p g p`` accumulated in ``np.longdouble``.

    For large ``p`` the terms cancel heavily; double precision leaves a
    floor of about ``eps * |p|^2 |g|`` that limits Newton refinement. The
    extended format (80-bit on x86) lowers that floor by three orders of
    magnitude; where it is plain double the behaviour is unchanged.
    """
    ld = np.longdouble
    al, gl, ql, pl = (np.asarray(m, dtype=ld) for m in (a, g, q, p))
    res = al.T @ pl + pl @ al + ql - pl @ gl @ pl
    res = np.asarray(0.5 * (res + res.T), dtype=float)
    return res


def care_kleinman(a, b, q, r, k0=None, tol: float = 1e-12, max_iter: int = 100,
                  refine_steps: int = 3) -> np.ndarray:
    """Kleinman-Newton iteration for the stabilizing CARE solution.

    Each step solves ``(a - b k)' p + p (a - b k) + q + k' r k = 0`` and
    updates ``k = r^-1 b' p``. The iteration stops when the update falls
    below ``tol`` or stops shrinking (rounding floor).

    When ``p`` is badly conditioned that floor can sit near 1e-6 relative.
    Up to ``refine_steps`` Newton corrections follow: with ``acl = a - g p``
    solve ``acl' dp + dp acl + res(p) = 0``, where the Riccati residual
    ``res`` is formed in extended precision (``_riccati_defect``). A
    correction is kept only if it lowers the residual and the closed loop
    stays Hurwitz.
    """
    a, b, q, r = _check_care_inputs(a, b, q, r)
    if k0 is None:
        if np.max(eigenvalues(a).real) < 0.0:
            k = np.zeros((b.shape[1], a.shape[0]))
        else:
            k = initial_stabilizing_gain(a, b, r)
    else:
        k = np.asarray(k0, dtype=float)
    if np.max(eigenvalues(a - b @ k).real) >= 0.0:
        raise ConvergenceError("no stabilizing initial gain found")

    p_prev = None
    prev_step = np.inf
    for _ in range(max_iter):
        acl = a - b @ k
        p = solve_lyapunov(acl, q + k.T @ r @ k)
        k = np.linalg.solve(r, b.T @ p)
        if p_prev is not None:
            step = np.linalg.norm(p - p_prev)
            scale = max(np.linalg.norm(p), 1.0)
            if step <= tol * scale:
                break
            if step <= 1e-6 * scale and step >= 0.5 * prev_step:
                break
            prev_step = step
        p_prev = p
    else:
        res = care_residual(a, b, q, r, p)
        if res > 1e-8:
            raise ConvergenceError(f"Kleinman iteration stagnated, residual {res:.2e}")
    p = 0.5 * (p + p.T)

    g = b @ np.linalg.solve(r, b.T)
    defect = _riccati_defect(a, g, q, p)
    for _ in range(refine_steps):
        acl = a - g @ p
        if np.max(eigenvalues(acl).real) >= 0.0:
            break
        dp = solve_lyapunov(acl, defect)
        cand = p + 0.5 * (dp + dp.T)
        cand_defect = _riccati_defect(a, g, q, cand)
        if np.linalg.norm(cand_defect) >= np.linalg.norm(defect):
            break
        p, defect = cand, cand_defect
    return p


def care_hamiltonian(a, b, q, r) -> np.ndarray:
    """Stabilizing CARE solution from the stable invariant subspace of the
    Hamiltonian ``[[a, -g], [-q, -a']]`` (ordered real Schur form)."""
    a, b, q, r = _check_care_inputs(a, b, q, r)
    n = a.shape[0]
    g = b @ np.linalg.solve(r, b.T)
    ham = np.block([[a, -g], [-q, -a.T]])
    _, z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise ConvergenceError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}"
        )
    u1, u2 = z[:n, :n], z[n:, :n]
    p = np.linalg.solve(u1.T, u2.T).T
    return 0.5 * (p + p.T)


def solve_care(a, b, q, r, *, cross_check: bool = True, check_tol: float = 1e-6) -> np.ndarray:
    """Stabilizing solution ``P`` of the continuous algebraic Riccati equation

        P b r^-1 b' P - P a - a' P - q = 0.

    Kleinman-Newton is the primary solver; with ``cross_check`` the
    Hamiltonian-subspace solution must agree to ``check_tol`` (relative).
    """
    p = care_kleinman(a, b, q, r)
    res = care_residual(a, b, q, r, p)
    if res > 1e-8:
        raise ConvergenceError(f"CARE residual {res:.2e} above tolerance")
    if cross_check:
        p_ham = care_hamiltonian(a, b, q, r)
        scale = max(np.linalg.norm(p), EPS)
        if np.linalg.norm(p - p_ham) > check_tol * scale and np.linalg.norm(p) > 0:
            raise ConvergenceError(
                "Kleinman and Hamiltonian CARE solutions disagree "
                f"({np.linalg.norm(p - p_ham) / scale:.2e} relative)"
            )
    return p

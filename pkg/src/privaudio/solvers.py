"""Matrix-free conjugate-gradient solvers.

Three solve shapes are needed:

* ``cgls``: least squares ``min ||b - A u||`` (filter design through ``H N``);
* :func:`least_norm_carrier`: ``s = H^T z`` with ``z`` from CGLS on ``H``;
* :func:`row_space_residual`: CGLS on ``min ||v - H^T z||``, returning the
  residual ``w = v - H^T z``, i.e. ``v`` projected onto the nullspace of H.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .channel import ChannelOperator, ChannelSet

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 2000
DIVERGENCE_WINDOW = 50


@dataclass
class SolveReport:
    """Outcome of one iterative solve.

    ``relative_residual`` is ``||b - A u|| / ||b||``; ``normal_residual`` is
    the normal-equation residual ``||A^T (b - A u)|| / ||A^T b||`` (CGLS only,
    NaN for plain CG).
    """

    iterations: int
    relative_residual: float
    converged: bool
    tolerance: float
    normal_residual: float = float("nan")
    monotone: bool = True
    residual_history: list[float] = field(default_factory=list, repr=False)

    def as_row(self, prefix: str = "") -> dict:
        return {
            f"{prefix}iterations": self.iterations,
            f"{prefix}relative_residual": self.relative_residual,
            f"{prefix}converged": int(self.converged),
            f"{prefix}tolerance": self.tolerance,
        }


def _diverging(history: list[float]) -> bool:
    if len(history) <= DIVERGENCE_WINDOW:
        return False
    tail = np.asarray(history[-DIVERGENCE_WINDOW - 1:])
    return bool(np.all(np.diff(tail) > 0))


def cgls(A, b, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, SolveReport]:
    """Conjugate gradients on the normal equations of ``A u = b``.

    Starts from ``u = 0``, so iterates stay in ``range(A^T)`` and a consistent
    system converges to its minimum-norm solution.  Stops when either the
    normal-equation residual or the plain residual drops to ``tol``.
    """
    u, _, report = _cgls(A, b, tol, max_iter, dual=False)
    return u, report


def _cgls(A, b, tol, max_iter, dual):
    # With ``dual`` set, also carry z with u = A^T z throughout: every search
    # direction is A^T of a message-space vector, so the same recurrence
    # applied to those vectors yields z for free.
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = aslinearoperator(A)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.shape[0],):
        raise ValueError(f"b has shape {b.shape}, operator expects ({A.shape[0]},)")
    u = np.zeros(A.shape[1])
    z = np.zeros(A.shape[0]) if dual else None
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return u, z, SolveReport(0, 0.0, True, tol, 0.0, True, [0.0])

    r = b.copy()
    s = A.rmatvec(r)
    s0_norm = np.linalg.norm(s)
    if s0_norm == 0:
        # b is orthogonal to range(A): u = 0 is already the LS solution.
        return u, z, SolveReport(0, 1.0, True, tol, 0.0, True, [1.0])
    p = s.copy()
    pz = r.copy() if dual else None
    gamma = s @ s
    history = [1.0]
    monotone = True
    converged = False
    it = 0
    normal = 1.0
    for it in range(1, max_iter + 1):
        q = A.matvec(p)
        qq = q @ q
        if qq == 0:
            break
        alpha = gamma / qq
        u += alpha * p
        if dual:
            z += alpha * pz
        r -= alpha * q
        s = A.rmatvec(r)
        gamma_new = s @ s
        rel = np.linalg.norm(r) / b_norm
        # Rounding slack: CGLS residuals are monotone in exact arithmetic.
        if rel > history[-1] * (1 + 1e-10) + 1e-15:
            monotone = False
        history.append(rel)
        normal = np.sqrt(gamma_new) / s0_norm
        if normal <= tol or rel <= tol:
            converged = True
            break
        if _diverging(history):
            break
        beta = gamma_new / gamma
        p = s + beta * p
        if dual:
            pz = r + beta * pz
        gamma = gamma_new
    return u, z, SolveReport(it, history[-1], converged, tol, float(normal), monotone, history)


def cg(A, b, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, SolveReport]:
    """Plain conjugate gradients for a symmetric positive semidefinite ``A``.

    Stops when ``||b - A z|| / ||b|| <= tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = aslinearoperator(A)
    b = np.asarray(b, dtype=np.float64)
    z = np.zeros(A.shape[1])
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return z, SolveReport(0, 0.0, True, tol, residual_history=[0.0])
    r = b.copy()
    p = r.copy()
    rr = r @ r
    history = [1.0]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        q = A.matvec(p)
        pq = p @ q
        if pq <= 0:
            break
        alpha = rr / pq
        z += alpha * p
        r -= alpha * q
        rr_new = r @ r
        rel = np.sqrt(rr_new) / b_norm
        history.append(rel)
        if rel <= tol:
            converged = True
            break
        if _diverging(history):
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return z, SolveReport(it, history[-1], converged, tol, residual_history=history)


def _operator(channels) -> ChannelOperator:
    return channels if isinstance(channels, ChannelOperator) else ChannelOperator(channels)


def gram_operator(H: LinearOperator) -> LinearOperator:
    """``H H^T`` as a symmetric operator on message space."""
    n = H.shape[0]
    return LinearOperator((n, n), matvec=lambda z: H.matvec(H.rmatvec(z)), dtype=np.float64)


@dataclass
class CarrierSolution:
    carrier: np.ndarray
    coefficients: np.ndarray
    report: SolveReport


def least_norm_carrier(channels: ChannelSet | ChannelOperator, y_in, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> CarrierSolution:
    """Minimum-norm ``s`` with ``H s = y_in``.

    The carrier is returned as ``s = H^T z``, so it lies in the row space of
    ``H`` by construction and is the minimum-norm solution whenever the
    system is consistent.  ``z`` is found by CGLS on ``H`` with the dual
    vector carried along; this minimizes ``||H s - y_in||`` at each step,
    where CG on ``H H^T z = y_in`` minimizes an error norm instead and is
    markedly less stable on reverberant channels.  ``cg(gram_operator(H), y)``
    remains available for that formulation.
    """
    H = _operator(channels)
    y_in = np.asarray(y_in, dtype=np.float64)
    if y_in.shape != (H.shape[0],):
        raise ValueError(f"y_in has shape {y_in.shape}, expected ({H.shape[0]},)")
    _, z, report = _cgls(H, y_in, tol, max_iter, dual=True)
    s = H.rmatvec(z)
    y_norm = np.linalg.norm(y_in)
    if y_norm > 0:
        report.relative_residual = float(np.linalg.norm(H.matvec(s) - y_in) / y_norm)
    return CarrierSolution(s, z, report)


@dataclass
class Projection:
    residual: np.ndarray
    coefficients: np.ndarray
    report: SolveReport


def row_space_residual(channels: ChannelSet | ChannelOperator, v, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> Projection:
    """Project ``v`` onto the nullspace of ``H`` as ``v - H^T z_hat``.

    ``z_hat`` is the CGLS solution of ``min ||v - H^T z||``; on convergence
    ``||H w|| <= tol * ||H v||``.
    """
    H = _operator(channels)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (H.shape[1],):
        raise ValueError(f"v has shape {v.shape}, expected ({H.shape[1]},)")
    z, report = cgls(H.H, v, tol, max_iter)
    return Projection(v - H.rmatvec(z), z, report)

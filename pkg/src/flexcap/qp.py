"""Small dense convex QP: ``min theta'A theta - 2 c'theta + const`` s.t. ``B theta <= b``, ``theta >= 0``.

Solved by a primal active-set method started from the feasible point
``theta = 0``, on a copy of the problem whose constraint rows are divided
by ``b`` and whose columns are scaled to give ``A`` a unit diagonal. Each
working-set subproblem is an equality-constrained QP solved from its KKT
system, so the final iterate satisfies the optimality conditions to
rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QPError(RuntimeError):
    def __init__(self, message, theta=None, residual=None):
        super().__init__(message)
        self.theta = theta
        self.residual = residual


@dataclass
class QPSolution:
    theta: np.ndarray
    lam: np.ndarray  # multipliers of B theta <= b (original units)
    mu: np.ndarray  # multipliers of theta >= 0
    objective: float
    kkt_residual: float
    iterations: int


def _scaling(A, B, b):
    diag = np.diag(A).copy()
    s = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    finite = np.isfinite(b)
    Bn = np.zeros_like(B)
    Bn[finite] = B[finite] / b[finite, None]
    return s, Bn * s[None, :], finite


def kkt_residual(A, c, B, b, theta, lam, mu) -> float:
    """Dimensionless KKT violation of a primal-dual point.

    Measured on the row-normalized constraints ``B theta / b <= 1`` and
    relative to the size of the gradient terms.
    """
    A, c, B, b = (np.asarray(x, dtype=float) for x in (A, c, B, b))
    finite = np.isfinite(b)
    grad = 2 * A @ theta - 2 * c
    stat = grad + B[finite].T @ lam[finite] - mu
    scale = max(1.0, np.max(np.abs(2 * c)), np.max(np.abs(2 * A @ theta)))
    g = (B[finite] @ theta) / b[finite] - 1.0 if finite.any() else np.zeros(0)
    lam_n = lam[finite] * b[finite]
    tscale = max(1.0, np.max(np.abs(theta), initial=0.0))
    parts = [
        np.max(np.abs(stat), initial=0.0) / scale,
        np.max(np.maximum(g, 0.0), initial=0.0),
        np.max(np.maximum(-theta, 0.0), initial=0.0) / tscale,
        np.max(np.maximum(-lam_n, 0.0), initial=0.0) / scale,
        np.max(np.maximum(-mu, 0.0), initial=0.0) / scale,
        np.max(np.minimum(np.abs(lam_n) / scale, np.abs(g)), initial=0.0),
        np.max(np.minimum(np.abs(mu) / scale, np.abs(theta) / tscale), initial=0.0),
    ]
    return float(max(parts))


def solve_qp(A, c, B, b, const: float = 0.0, max_iter: int | None = None, tol: float = 1e-6) -> QPSolution:
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    b = np.asarray(b, dtype=float)
    d = c.size
    if A.shape != (d, d) or B.shape[1] != d or B.shape[0] != b.size:
        raise ValueError("inconsistent QP dimensions")
    if np.any(B < 0) or np.any(b <= 0):
        raise ValueError("expected B >= 0 and b > 0 (theta = 0 must be feasible)")
    if not np.allclose(A, A.T, rtol=1e-10, atol=0):
        raise ValueError("A must be symmetric")

    s, Bn, finite = _scaling(A, B, b)
    H = 2 * (s[:, None] * A * s[None, :])
    g = -2 * s * c
    rows = np.flatnonzero(finite)
    G = Bn[rows]
    gscale = max(1.0, np.max(np.abs(g), initial=0.0))

    x = np.zeros(d)
    active = []  # constraint rows held at equality
    fixed = np.ones(d, dtype=bool)  # variables held at zero; all of them at the origin
    max_iter = max_iter or 50 * (d + G.shape[0] + 1)
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        free = ~fixed
        p = np.zeros(d)
        p_f, lam_a = _eqp(H[np.ix_(free, free)], grad[free], G[np.ix_(active, free)])
        p[free] = p_f
        xscale = max(1.0, np.max(np.abs(x)))
        if np.max(np.abs(p), initial=0.0) <= 1e-12 * xscale:
            mu = grad + G[active].T @ lam_a
            cand = [(lam_a[j], "row", j) for j in range(len(active))]
            cand += [(mu[i], "var", i) for i in np.flatnonzero(fixed)]
            if not cand:
                break
            worst = min(cand, key=lambda t: t[0])
            if worst[0] >= -1e-12 * gscale:
                break
            if worst[1] == "row":
                active.pop(worst[2])
            else:
                fixed[worst[2]] = False
            continue
        alpha, block = 1.0, None
        gp = G @ p
        pscale = np.max(np.abs(p))
        for r in range(G.shape[0]):
            if r in active or gp[r] <= 1e-14 * pscale * np.max(np.abs(G[r]), initial=0.0):
                continue
            step = (1.0 - G[r] @ x) / gp[r]
            if step < alpha:
                alpha, block = max(step, 0.0), ("row", r)
        for i in np.flatnonzero(~fixed & (p < 0)):
            step = -x[i] / p[i]
            if step < alpha:
                alpha, block = max(step, 0.0), ("var", i)
        x = x + alpha * p
        if block is not None:
            if block[0] == "row":
                active.append(block[1])
            else:
                fixed[block[1]] = True
        x[fixed] = 0.0
        x = _restore(x, G, active, fixed)
    else:
        raise QPError(
            f"active-set QP did not converge in {max_iter} iterations", theta=s * np.maximum(x, 0.0)
        )

    x = np.maximum(x, 0.0)
    theta = s * x
    grad = H @ x + g
    lam_rows = np.zeros(rows.size)
    if active:
        free = ~fixed
        Ga = G[np.ix_(active, free)]
        lam_rows[active] = np.maximum(np.linalg.lstsq(Ga.T, -grad[free], rcond=None)[0], 0.0)
    mu_n = np.where(fixed, np.maximum(grad + G.T @ lam_rows, 0.0), 0.0)
    lam = np.zeros(b.size)
    lam[rows] = lam_rows / b[rows]
    mu = mu_n / s
    objective = float(theta @ A @ theta - 2 * c @ theta + const)
    res = kkt_residual(A, c, B, b, theta, lam, mu)
    if res > tol:
        raise QPError(f"KKT residual {res:.3e} exceeds tolerance {tol:.1e}", theta=theta, residual=res)
    return QPSolution(theta, lam, mu, objective, res, it)


def _restore(x, G, active, fixed):
    """Remove rounding drift so active rows hold with equality."""
    if not active:
        return x
    free = ~fixed
    Ga = G[np.ix_(active, free)]
    resid = 1.0 - G[active] @ x
    if Ga.size == 0 or np.max(np.abs(resid)) == 0:
        return x
    x = x.copy()
    x[free] += np.linalg.lstsq(Ga, resid, rcond=None)[0]
    return x


def _eqp(H, grad, Gw):
    """Step ``p`` and multipliers for ``min 0.5 p'Hp + grad'p`` s.t. ``Gw p = 0`` (null-space method)."""
    d = grad.size
    if d == 0:
        return np.zeros(0), np.zeros(Gw.shape[0])
    if Gw.shape[0]:
        norms = np.linalg.norm(Gw, axis=1)
        Gn = Gw / np.where(norms > 0, norms, 1.0)[:, None]
        _, sv, vt = np.linalg.svd(Gn)
        rank = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
        Z = vt[rank:].T
    else:
        norms = np.zeros(0)
        Z = np.eye(d)
    if Z.shape[1]:
        Hz = Z.T @ H @ Z
        rhs = -Z.T @ grad
        try:
            pz = np.linalg.solve(Hz, rhs)
        except np.linalg.LinAlgError:
            pz = np.linalg.lstsq(Hz, rhs, rcond=None)[0]
        p = Z @ pz
    else:
        p = np.zeros(d)
    lam = np.zeros(Gw.shape[0])
    if Gw.shape[0]:
        lam = np.linalg.lstsq(Gw.T, -(grad + H @ p), rcond=None)[0]
    return p, lam

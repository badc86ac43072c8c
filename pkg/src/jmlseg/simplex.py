"""Dense two-phase simplex for small equality-form linear programs.

Solves ``min c @ x`` subject to ``A @ x = b`` and ``x >= 0``.  Pivoting follows
Bland's rule (lowest eligible index for both entering and leaving
variables), which rules out cycling on degenerate problems.
"""
import numpy as np


class InfeasibleError(ValueError):
    """The constraints admit no non-negative solution."""


class UnboundedError(ValueError):
    """The objective decreases without bound on the feasible set."""


def _pivot(T, row, col):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _run(T, basis, n_cols, tol):
    """Iterate until no reduced cost (last row) is negative."""
    while True:
        costs = T[-1, :n_cols]
        eligible = np.flatnonzero(costs < -tol)
        if eligible.size == 0:
            return
        col = eligible[0]
        column = T[:-1, col]
        positive = np.flatnonzero(column > tol)
        if positive.size == 0:
            raise UnboundedError("objective is unbounded below")
        ratios = T[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + tol * max(1.0, abs(best))]
        row = min(ties, key=lambda r: basis[r])
        _pivot(T, row, col)
        basis[row] = col


def linprog_eq(c, A, b, tol=1e-11):
    """Minimise ``c @ x`` s.t. ``A @ x = b``, ``x >= 0``.

    Returns ``(x, value)``.
    """
    c = np.asarray(c, dtype=np.float64)
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # phase 1: artificial variables n..n+m-1 start in the basis
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))
    _run(T, basis, n + m, tol)
    if -T[-1, -1] > 1e-9:
        raise InfeasibleError("no feasible point satisfies the constraints")

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            candidates = np.flatnonzero(np.abs(T[r, :n]) > tol)
            if candidates.size == 0:
                continue
            _pivot(T, r, candidates[0])
            basis[r] = candidates[0]
        keep.append(r)

    # phase 2 on the original columns
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    T2[-1, :n] = c
    for r, j in enumerate(basis):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[r]
    _run(T2, basis, n, tol)

    x = np.zeros(n)
    for r, j in enumerate(basis):
        x[j] = T2[r, -1]
    x[x < 0] = 0.0
    return x, float(c @ x)

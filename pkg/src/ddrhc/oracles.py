"""Reference computations kept independent of the synthesis code paths."""

from __future__ import annotations

import numpy as np


def riccati_lqr(A_seq, B_seq, Qx_seq, R_seq, Qx_terminal):
    """Textbook finite-horizon discrete Riccati recursion.

    ``P_N = Qf``, ``K_t = (R + B'PB)^-1 B'PA``, ``P_t = Qx + A'PA - A'PB K_t``.
    Returns gains ``K_0 .. K_{N-1}`` and ``P_0 .. P_N``.
    """
    N = len(A_seq)
    P = [None] * (N + 1)
    K = [None] * N
    P[N] = Qx_terminal
    for t in range(N - 1, -1, -1):
        A, B, Q, R = A_seq[t], B_seq[t], Qx_seq[t], R_seq[t]
        Pn = P[t + 1]
        K[t] = np.linalg.solve(R + B.T @ Pn @ B, B.T @ Pn @ A)
        Pt = Q + A.T @ Pn @ A - A.T @ Pn @ B @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
    return K, P


def coverage_defect(topology, k: int = 0) -> int:
    """Total count of pairs a unit would need but no out-neighbor stores.

    Zero exactly when the distributed recursion is free of masked terms on a
    time-invariant topology.
    """
    total = 0
    for i in range(topology.n_agents):
        psi = topology.psi(i, k)
        dp = topology.d_plus(i, k)
        for p in dp:
            for q in dp:
                need = {(r, s) for r in topology.d_plus(p, k) for s in topology.d_plus(q, k)}
                total += len(need - psi)
    return total

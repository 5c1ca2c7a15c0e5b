"""Normalized Laplacian and a cyclic Jacobi eigensolver."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class EigenFeatures:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def normalized_laplacian(g):
    """``I - D^-1/2 A D^-1/2`` with zero rows for isolated nodes.

    Accepts a ``Graph`` or a bare adjacency matrix.
    """
    a = np.asarray(getattr(g, "adjacency", g), dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("normalized_laplacian: negative edge weight")
    deg = a.sum(axis=1)
    connected = deg > 0
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[connected] = 1.0 / np.sqrt(deg[connected])
    lap = -(inv_sqrt[:, None] * a * inv_sqrt[None, :])
    lap[np.diag_indices_from(lap)] += connected.astype(np.float64)
    return 0.5 * (lap + lap.T)


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (circle method).

    ``n`` must be even; each round is a pair of index arrays (p, q) with p < q.
    """
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a):
    # explicit off-diagonal copy; ``sum(a*a) - sum(diag**2)`` cancels badly near convergence
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def jacobi_eigh(m, tol=1e-10, max_sweeps=100):
    """Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs that are rotated together. Stops when the off-diagonal
    Frobenius norm drops below ``tol``. Returns ascending eigenvalues and the
    matching unit eigenvectors as columns.
    """
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    if n and np.max(np.abs(a - a.T)) > 1e-12 * max(1.0, np.max(np.abs(a))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    size = n + (n % 2)
    if size != n:
        # pad with a decoupled dummy row/column
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(size)
    rounds = _round_robin(size) if size >= 2 else []

    for _ in range(max_sweeps):
        if _off_norm(a) < tol:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-30  # smaller pivots cannot affect the 1e-10 stopping test
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            tau = (aqq - app) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- J^T A J with J_pp = J_qq = c, J_pq = s, J_qp = -s
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        if _off_norm(a) >= tol:
            raise RuntimeError(f"jacobi_eigh did not converge in {max_sweeps} sweeps")

    vals = np.diag(a)[:n].copy()
    vecs = v[:n, :n].copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def _fix_signs(vecs):
    """Flip each column so its largest-magnitude entry is positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigen_features(g, k, order="smallest"):
    """The ``k`` Laplacian eigenvectors of smallest (default) or largest eigenvalue."""
    lap = normalized_laplacian(g)
    n = lap.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if order not in ("smallest", "largest"):
        raise ValueError(f"order must be 'smallest' or 'largest', got {order!r}")
    vals, vecs = jacobi_eigh(lap)
    sel = np.arange(k) if order == "smallest" else np.arange(n - 1, n - 1 - k, -1)
    return EigenFeatures(vals[sel], _fix_signs(vecs[:, sel]))

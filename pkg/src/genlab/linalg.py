"""Dense symmetric eigensolver, Jacobi SVD, null spaces and norms.

Everything here is built on Jacobi rotations.  Rotations are applied in
round-robin ("chess tournament") order so that each round rotates n/2
disjoint index pairs at once, which lets numpy do the inner loops.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EIG_TOL = 1e-12
MAX_SWEEPS = 100
RANK_TOL = 1e-10
SYM_TOL = 1e-10


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self):
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@dataclass(frozen=True)
class Norms:
    frobenius: float
    spectral: float
    max_abs: float
    l1_vector: float
    l2_vector: float
    linf_vector: float


@lru_cache(maxsize=64)
def _round_robin(n):
    """Pairings covering every (p, q), p < q, once; each round is disjoint."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs, dtype=np.intp).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _as_finite_matrix(a, name="matrix"):
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _off_norm(a):
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return np.linalg.norm(off)


def sym_eig(a, tol=EIG_TOL, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi.

    Sweeps stop once the off-diagonal Frobenius mass drops below
    ``tol * ||A||_F``.  Eigenvalues come back in descending order and each
    eigenvector is signed so its largest-magnitude entry is positive.
    """
    a = _as_finite_matrix(a)
    n, cols = a.shape
    if n != cols:
        raise ValueError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    asym = float(np.max(np.abs(a - a.T), initial=0.0))
    if asym > SYM_TOL * scale:
        raise ValueError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")

    a = 0.5 * (a + a.T)
    vt = np.eye(n)  # eigenvectors accumulate as rows
    threshold = tol * np.linalg.norm(a)
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        if _off_norm(a) <= threshold:
            break
        for p, q in rounds:
            apq = a[p, q]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[apq == 0.0] = 0.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = (t * c)[:, None]
            c = c[:, None]
            # J^T A J as two row rotations; A stays symmetric so the
            # transpose in between turns the column pass into a row pass
            for _pass in range(2):
                rp, rq = a[p], a[q]
                a[p] = c * rp - s * rq
                a[q] = s * rp + c * rq
                if _pass == 0:
                    a = a.T.copy()
            rp, rq = vt[p], vt[q]
            vt[p] = c * rp - s * rq
            vt[q] = s * rp + c * rq
    else:
        off = _off_norm(a)
        if off > threshold:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})")

    v = vt.T
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SymEig(eigenvalues=w[order], eigenvectors=_fix_signs(v[:, order]))


def jacobi_svd(m, tol=EIG_TOL, max_sweeps=MAX_SWEEPS):
    """One-sided (Hestenes) Jacobi SVD.

    Returns ``(sigma, v, av)`` with ``m @ v == av`` and mutually orthogonal
    columns of ``av``; ``sigma`` are their norms.  Null vectors of ``m`` show
    up as columns of ``v`` whose ``sigma`` is numerically zero, and their
    residual ``||m v_j||`` is exactly the computed column norm.
    """
    m = _as_finite_matrix(m)
    n = m.shape[1]
    av = m.copy()
    v = np.eye(n)
    # columns this small are roundoff; rotating them against each other never settles
    negligible = (np.finfo(float).eps * np.linalg.norm(m)) ** 2
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            ap, aq = av[:, p], av[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > negligible) & (beta > negligible)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = av[:, p].copy(), av[:, q]
            av[:, p] = c * ap - s * aq
            av[:, q] = s * ap + c * aq
            vp, vq = v[:, p].copy(), v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise ConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
    sigma = np.linalg.norm(av, axis=0)
    order = np.argsort(-sigma, kind="stable")
    return sigma[order], v[:, order], av[:, order]


def _split_by_rank(m):
    sigma, v, av = jacobi_svd(m)
    top = sigma[0] if sigma.size else 0.0
    keep = sigma > RANK_TOL * top if top > 0 else np.zeros_like(sigma, dtype=bool)
    return sigma, v, av, keep


def rank(m):
    return int(np.count_nonzero(_split_by_rank(m)[3]))


def null_space_basis(m):
    """Orthonormal basis (as columns) of Null(m); empty if m has full column rank."""
    _, v, _, keep = _split_by_rank(m)
    return _fix_signs(v[:, ~keep]) if np.any(~keep) else np.zeros((v.shape[0], 0))


def row_space_basis(m):
    _, v, _, keep = _split_by_rank(m)
    return v[:, keep]


def min_norm_solution(phi, y):
    """Minimum-Frobenius-norm ``w`` with ``phi @ w == y``.

    ``phi`` must have full row rank (as many independent rows as rows);
    otherwise the system is not solvable for arbitrary ``y`` and we refuse.
    """
    phi = _as_finite_matrix(phi, "phi")
    y = np.array(y, dtype=float)
    vector_rhs = y.ndim == 1
    y = _as_finite_matrix(y, "y")
    rows, cols = phi.shape
    if y.shape[0] != rows:
        raise ValueError(f"phi has {rows} rows but y has {y.shape[0]}")
    sigma, v, av, keep = _split_by_rank(phi)
    r = int(np.count_nonzero(keep))
    if r < rows:
        raise ValueError(f"phi is rank deficient: rank {r} < {rows} rows")
    u = av[:, keep] / sigma[keep]
    w = v[:, keep] @ ((u.T @ y) / sigma[keep][:, None])
    return w[:, 0] if vector_rhs else w


def lambda_max(a):
    return float(sym_eig(a).eigenvalues[0]) if np.size(a) else 0.0


def spectral_norm(a):
    a = _as_finite_matrix(a)
    if a.size == 0:
        return 0.0
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    return float(np.sqrt(max(lambda_max(gram), 0.0)))


def norms(a):
    a = _as_finite_matrix(a)
    flat = np.abs(a).ravel()
    l2 = float(np.sqrt(np.sum(flat * flat)))
    return Norms(
        frobenius=l2,
        spectral=spectral_norm(a),
        max_abs=float(flat.max(initial=0.0)),
        l1_vector=float(flat.sum()),
        l2_vector=l2,
        linf_vector=float(flat.max(initial=0.0)),
    )

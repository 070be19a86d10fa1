"""Over-parameterized linear models: exact memorization and norm inflation.

With more features than training points a linear model can fit any labels.
And whenever the stacked train/test feature matrix ``M`` has a null space,
weights can be pushed arbitrarily far along it without moving a single
train or test prediction.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import linalg

SCHEMA = "genlab.memorize/1"


class HypothesisFailure(ValueError):
    """A rank or realizability condition of the construction does not hold."""

    def __init__(self, condition, detail):
        super().__init__(f"{condition}: {detail}")
        self.condition = condition
        self.detail = detail


def _fro(a):
    return float(np.linalg.norm(a))


@dataclass(frozen=True)
class LinearInstance:
    phi: np.ndarray  # (m, n)
    phi_test: np.ndarray  # (m_test, n)
    y: np.ndarray  # (m, d_y)
    y_test: np.ndarray = None
    w_star: np.ndarray = None  # (n, d_y)

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        phi_test = np.atleast_2d(np.asarray(self.phi_test, dtype=float))
        y = np.asarray(self.y, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        if phi_test.shape[1] != phi.shape[1]:
            raise ValueError(f"train features have {phi.shape[1]} columns, test features {phi_test.shape[1]}")
        if y.shape[0] != phi.shape[0]:
            raise ValueError(f"{phi.shape[0]} training rows but {y.shape[0]} label rows")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_test", phi_test)
        object.__setattr__(self, "y", y)
        if self.w_star is not None:
            w = np.asarray(self.w_star, dtype=float)
            w = w[:, None] if w.ndim == 1 else w
            if w.shape != (phi.shape[1], y.shape[1]):
                raise ValueError(f"w_star must have shape {(phi.shape[1], y.shape[1])}, got {w.shape}")
            object.__setattr__(self, "w_star", w)
            if _fro(phi @ w - y) > 1e-10 * (1.0 + _fro(y)):
                raise ValueError("Y differs from phi @ w_star")
            if self.y_test is None:
                object.__setattr__(self, "y_test", phi_test @ w)
        if self.y_test is not None:
            yt = np.asarray(self.y_test, dtype=float)
            yt = yt[:, None] if yt.ndim == 1 else yt
            if yt.shape != (phi_test.shape[0], y.shape[1]):
                raise ValueError(f"y_test must have shape {(phi_test.shape[0], y.shape[1])}, got {yt.shape}")
            object.__setattr__(self, "y_test", yt)
            if self.w_star is not None and _fro(phi_test @ self.w_star - yt) > 1e-10 * (1.0 + _fro(yt)):
                raise ValueError("Y_test differs from phi_test @ w_star")

    @property
    def m(self):
        return self.phi.shape[0]

    @property
    def n(self):
        return self.phi.shape[1]

    @property
    def stacked(self):
        return np.vstack([self.phi, self.phi_test])

    def to_dict(self):
        doc = {"schema": SCHEMA + "#instance", "phi": self.phi.tolist(), "phi_test": self.phi_test.tolist(), "y": self.y.tolist()}
        doc["y_test"] = None if self.y_test is None else self.y_test.tolist()
        doc["w_star"] = None if self.w_star is None else self.w_star.tolist()
        return doc


def memorize(instance):
    """Minimum-norm ``w'`` with ``phi @ w' == Y`` for arbitrary labels ``Y``."""
    m, n = instance.phi.shape
    if n <= m:
        raise HypothesisFailure("n > m", f"need more features than training points, got n={n}, m={m}")
    r = linalg.rank(instance.phi)
    if r != m:
        raise HypothesisFailure("rank(phi) = m", f"rank(phi) = {r} but m = {m}")
    return linalg.min_norm_solution(instance.phi, instance.y)


def _least_squares(a, b):
    """Minimum-norm least-squares solution through the Jacobi SVD."""
    sigma, v, av, keep = linalg._split_by_rank(a)
    u = av[:, keep] / sigma[keep]
    return v[:, keep] @ ((u.T @ b) / sigma[keep][:, None])


def ground_truth(instance):
    """``w_star`` itself, or a least-squares fit that must reproduce Y and Y_test exactly."""
    if instance.w_star is not None:
        return instance.w_star
    if instance.y_test is None:
        raise HypothesisFailure("ground truth exists", "neither w_star nor Y_test was given")
    targets = np.vstack([instance.y, instance.y_test])
    w = _least_squares(instance.stacked, targets)
    resid = _fro(instance.stacked @ w - targets)
    if resid > 1e-8 * (1.0 + _fro(targets)):
        raise HypothesisFailure("ground truth exists", f"no w reproduces Y and Y_test (least-squares residual {resid:.3e})")
    return w


@dataclass
class Inflation:
    w: np.ndarray
    w_star: np.ndarray
    w_star_row: np.ndarray  # projection of w_star onto the row space of M
    C1: np.ndarray
    C2: np.ndarray  # unit-norm, columns in Null(M)
    epsilon: float
    alpha: float

    def at(self, alpha):
        """The same construction at another inflation level."""
        return self.w_star_row + self.epsilon * self.C1 + alpha * self.C2


def _canonical_C1(instance, row_basis):
    # rank-one C1 = c e_1^T, c the row-space unit direction that phi stretches most
    proj = instance.phi @ row_basis
    sigma, v, _ = linalg.jacobi_svd(proj)
    if sigma.size == 0 or sigma[0] == 0.0:
        sigma, v, _ = linalg.jacobi_svd(instance.stacked @ row_basis)
    c = linalg._fix_signs((row_basis @ v[:, :1]))[:, 0]
    C1 = np.zeros((instance.n, instance.y.shape[1]))
    C1[:, 0] = c
    scale = max(_fro(instance.phi @ C1), _fro(instance.phi_test @ C1))
    return C1 / scale


def inflate(instance, epsilon, delta_norm):
    """Weights within ``epsilon`` of the true train/test predictions but with norm at least ``delta_norm``.

    ``w = P_row(w_star) + epsilon C1 + alpha C2`` where ``C1`` lies in the row
    space of ``M = [phi; phi_test]`` (scaled so ``||phi C1||, ||phi_test C1|| <= 1``)
    and ``C2`` is a unit null-space direction of ``M``.  ``alpha`` is the
    smallest level meeting both norm targets, doubled for margin.
    """
    if epsilon < 0 or delta_norm < 0:
        raise ValueError("epsilon and delta_norm must be nonnegative")
    M = instance.stacked
    r = linalg.rank(M)
    if r >= instance.n:
        raise HypothesisFailure("rank(M) < n", f"rank(M) = {r} equals n = {instance.n}; Null(M) is trivial")
    w_star = ground_truth(instance)
    row = linalg.row_space_basis(M)
    null = linalg.null_space_basis(M)
    w1 = row @ (row.T @ w_star)
    w2 = w_star - w1
    C1 = _canonical_C1(instance, row)
    C2 = np.zeros_like(w_star)
    C2[:, 0] = null[:, 0]

    base = w1 + epsilon * C1
    if delta_norm == 0:
        alpha = 0.0
    else:
        # ||w||^2 = ||base||^2 + alpha^2 and ||w - w*|| >= alpha - ||w2|| (C1 and C2 orthogonal)
        for_norm = math.sqrt(max(delta_norm**2 - _fro(base) ** 2, 0.0))
        for_distance = _fro(w2) + math.sqrt(max(delta_norm**2 - (epsilon * _fro(C1)) ** 2, 0.0))
        alpha = 2.0 * max(for_norm, for_distance)
    return Inflation(base + alpha * C2, w_star, w1, C1, C2, float(epsilon), alpha)


@dataclass
class Certificate:
    memorization_residual: float
    train_deviation: float  # ||phi w - Y||_F, must be <= epsilon
    test_deviation: float
    w_norm: float
    distance_to_truth: float
    pythagoras_error: float
    invariance_error: float  # largest prediction change across inflation levels
    epsilon: float
    delta_norm: float
    alpha: float
    checks: dict

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if math.isnan(d["memorization_residual"]):
            d["memorization_residual"] = None
        d["schema"] = SCHEMA
        d["passed"] = self.passed
        return d


def certify(instance, epsilon, delta_norm, alphas=(0.0, 1.0, 1e3, 1e6), tol=1e-8):
    """Memorize, inflate and check every claimed property numerically."""
    memorization = float("nan")
    if instance.n > instance.m:
        w_mem = memorize(instance)
        memorization = _fro(instance.phi @ w_mem - instance.y)
    inf = inflate(instance, epsilon, delta_norm)
    w = inf.w
    y_test = instance.phi_test @ inf.w_star if instance.y_test is None else instance.y_test
    train_dev = _fro(instance.phi @ w - instance.y)
    test_dev = _fro(instance.phi_test @ w - y_test)
    slack = tol * (1.0 + _fro(instance.y) + _fro(y_test))
    norm_sq = _fro(w) ** 2
    pyth = abs(norm_sq - (_fro(inf.w_star_row + epsilon * inf.C1) ** 2 + inf.alpha**2 * _fro(inf.C2) ** 2))
    reference = [instance.phi @ inf.at(alphas[0]), instance.phi_test @ inf.at(alphas[0])]
    invariance = max(
        max(_fro(instance.phi @ inf.at(a) - reference[0]), _fro(instance.phi_test @ inf.at(a) - reference[1]))
        for a in alphas
    )
    checks = {
        "memorization": memorization <= tol * (1.0 + _fro(instance.y)) if memorization == memorization else True,
        "train_within_epsilon": train_dev <= epsilon + slack,
        "test_within_epsilon": test_dev <= epsilon + slack,
        "norm_at_least_delta": _fro(w) >= delta_norm,
        "distance_at_least_delta": _fro(w - inf.w_star) >= delta_norm,
        "pythagoras": pyth <= tol * max(1.0, norm_sq),
        "prediction_invariance": invariance <= tol,
    }
    return Certificate(
        memorization_residual=memorization,
        train_deviation=train_dev,
        test_deviation=test_dev,
        w_norm=_fro(w),
        distance_to_truth=_fro(w - inf.w_star),
        pythagoras_error=pyth,
        invariance_error=invariance,
        epsilon=float(epsilon),
        delta_norm=float(delta_norm),
        alpha=inf.alpha,
        checks=checks,
    )


def inflation_table(instance, epsilon, alphas):
    """Norm growth against inflation level with predictions held fixed."""
    inf = inflate(instance, epsilon, 0.0)
    rows = []
    for a in alphas:
        w = inf.at(a)
        rows.append({
            "alpha": float(a),
            "w_norm": _fro(w),
            "distance_to_truth": _fro(w - inf.w_star),
            "train_deviation": _fro(instance.phi @ w - instance.y),
            "test_deviation": _fro(instance.phi_test @ w - instance.phi_test @ inf.w_star),
        })
    return rows


def random_instance(rng, m, n, m_test, d_y, null_dim=1, realizable=True):
    """Random features whose stacked matrix has rank ``n - null_dim``."""
    rank_m = n - null_dim
    if rank_m < 1:
        raise ValueError("null_dim must be smaller than n")
    basis = rng.normal(size=(rank_m, n))
    phi = rng.normal(size=(m, rank_m)) @ basis
    phi_test = rng.normal(size=(m_test, rank_m)) @ basis
    if realizable:
        w_star = rng.normal(size=(n, d_y))
        return LinearInstance(phi, phi_test, phi @ w_star, w_star=w_star)
    return LinearInstance(phi, phi_test, rng.normal(size=(m, d_y)))

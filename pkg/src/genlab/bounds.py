"""Generalization-gap decomposition and concentration bounds.

Squared-loss results work in path space: with path features ``z`` and path
weights ``wbar_k`` the model output is ``z @ wbar_k``, so the gap between
expected and empirical risk splits exactly into a quadratic form in the
moment difference ``G``, a linear term in ``v_k`` and the label term ``c_y``.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import linalg
from .distribution import FiniteDistribution, empirical_risk, expected_risk, path_moments
from .netdag import PATH_CAP, forward, path_features, path_norm_squared


def _split_model(model):
    """``(weight_net, mask_net)`` for plain networks and two-network models."""
    if hasattr(model, "mask_network"):
        return model.weight_network, model.mask_network
    return model, model


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class BoundReport:
    bound_name: str
    inputs: dict
    value: float
    delta: float
    terms: dict = field(default_factory=dict)
    holds_on_instance: bool = None
    notes: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.bound_name}: bound value is not finite")
        _check_delta(self.delta)

    def to_dict(self):
        return _jsonable(asdict(self))


# -- exact decomposition --------------------------------------------------------


@dataclass
class GapDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    v: np.ndarray  # (d_y, d_z), one moment-difference vector per output
    c_y: float
    wbar_norms: np.ndarray  # (d_y,)
    cos_eig: np.ndarray  # (d_y, d_z): cos of angle between u_j and wbar_k
    cos_v: np.ndarray  # (d_y,): cos of angle between v_k and wbar_k
    reconstructed_gap: float
    exact_gap: float
    upper_bound: float
    expected_risk: float
    empirical_risk: float
    G: np.ndarray = field(repr=False)

    @property
    def residual(self):
        return abs(self.reconstructed_gap - self.exact_gap)

    @property
    def relative_residual(self):
        return self.residual / (1.0 + abs(self.exact_gap))

    def terms(self):
        """Per-output linear and quadratic contributions."""
        vn = np.linalg.norm(self.v, axis=1)
        linear = 2.0 * vn * self.wbar_norms * self.cos_v
        quadratic = self.wbar_norms**2 * (self.cos_eig**2 @ self.eigenvalues)
        return linear, quadratic

    def to_dict(self, include_vectors=False):
        linear, quadratic = self.terms()
        doc = {
            "schema": "genlab.gapdecomp/1",
            "d_z": int(self.eigenvalues.size),
            "eigenvalues": self.eigenvalues,
            "v_norms": np.linalg.norm(self.v, axis=1),
            "c_y": self.c_y,
            "wbar_norms": self.wbar_norms,
            "cos_v": self.cos_v,
            "linear_terms": linear,
            "quadratic_terms": quadratic,
            "reconstructed_gap": self.reconstructed_gap,
            "exact_gap": self.exact_gap,
            "upper_bound": self.upper_bound,
            "expected_risk": self.expected_risk,
            "empirical_risk": self.empirical_risk,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
        }
        if include_vectors:
            doc["cos_eig"] = self.cos_eig
            doc["eigenvectors"] = self.eigenvectors
            doc["v"] = self.v
        return _jsonable(doc)


def _cosines(a, b):
    """Row-wise cosines between rows of ``a`` and columns of ``b``; 0 where either is zero."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=0)
    dots = a @ b
    denom = np.multiply.outer(na, nb)
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=denom > 0)
    return np.clip(out, -1.0, 1.0)


def gap_decomposition(model, S, P, cap=PATH_CAP):
    """Exact squared-loss gap decomposition of ``model`` on ``(P, S)``.

    ``exact_gap`` comes from the risks evaluated by forward passes; the
    reconstruction goes through the eigendecomposition of ``G`` and the
    angles.  Their difference is the equality residual.
    """
    weight_net, mask_net = _split_model(model)
    Z, wbar = path_features(weight_net, S.x, cap=cap, mask_net=mask_net)
    ezz, eyz, ey2 = path_moments(weight_net, P, mask_net=mask_net, cap=cap)
    m = S.size
    G = ezz - (Z.T @ Z) / m
    G = 0.5 * (G + G.T)
    v = (S.y.T @ Z) / m - eyz
    c_y = ey2 - float(np.mean(np.sum(S.y**2, axis=1)))

    eig = linalg.sym_eig(G)
    norms = np.linalg.norm(wbar, axis=1)
    cos_eig = np.zeros((wbar.shape[0], eig.eigenvalues.size))
    live = norms > 0
    cos_eig[live] = np.clip((wbar[live] @ eig.eigenvectors) / norms[live, None], -1.0, 1.0)
    vn = np.linalg.norm(v, axis=1)
    cos_v = np.zeros_like(norms)
    both = (vn > 0) & live
    cos_v[both] = np.clip(np.sum(v[both] * wbar[both], axis=1) / (vn[both] * norms[both]), -1.0, 1.0)

    recon = float(np.sum(2.0 * vn * norms * cos_v + norms**2 * (cos_eig**2 @ eig.eigenvalues)) + c_y)
    upper = float(np.sum(2.0 * vn * norms + eig.eigenvalues[0] * norms**2) + c_y) if eig.eigenvalues.size else c_y
    r_true = expected_risk(model, P, "squared")
    r_emp = empirical_risk(model, S, "squared")
    return GapDecomposition(
        eigenvalues=eig.eigenvalues,
        eigenvectors=eig.eigenvectors,
        v=v,
        c_y=c_y,
        wbar_norms=norms,
        cos_eig=cos_eig,
        cos_v=cos_v,
        reconstructed_gap=recon,
        exact_gap=r_true - r_emp,
        upper_bound=upper,
        expected_risk=r_true,
        empirical_risk=r_emp,
        G=G,
    )


# -- scalar and matrix Bernstein ---------------------------------------------------


def scalar_bernstein_threshold(C, gamma_sq, n, delta, multiplicity=1.0):
    """Deviation ``eps`` such that a mean of ``n`` bounded terms exceeds it w.p. <= delta.

    Union-bounded over ``multiplicity`` events; uses the relaxed root
    ``2C L/(3n) + sqrt(2 gamma^2 L / n)`` with ``L = ln(multiplicity/delta)``.
    """
    _check_delta(delta)
    if n < 1 or C < 0 or gamma_sq < 0 or multiplicity < 1:
        raise ValueError("need n >= 1, C >= 0, gamma_sq >= 0, multiplicity >= 1")
    log_term = math.log(multiplicity / delta)
    return 2.0 * C * log_term / (3.0 * n) + math.sqrt(2.0 * gamma_sq * log_term / n)


def matrix_bernstein_threshold(R, gamma_sq, d, delta):
    _check_delta(delta)
    if R <= 0 or gamma_sq < 0 or d < 1:
        raise ValueError("need R > 0, gamma_sq >= 0, d >= 1")
    log_term = math.log(d / delta)
    return 2.0 * R * log_term / 3.0 + math.sqrt(2.0 * gamma_sq * log_term)


def validation_bound(m_val, delta, C, gamma_sq, card_F_val, R_val):
    """Held-out validation guarantee, union-bounded over a finite model set."""
    if card_F_val < 1:
        raise ValueError("the model set must be nonempty")
    extra = scalar_bernstein_threshold(C, gamma_sq, m_val, delta, multiplicity=card_F_val)
    return BoundReport(
        bound_name="validation",
        inputs={"m_val": m_val, "C": C, "gamma_sq": gamma_sq, "card_F_val": card_F_val, "R_val": R_val},
        value=R_val + extra,
        delta=delta,
        terms={"additive": extra},
    )


# -- two-phase constants and bound ---------------------------------------------------


@dataclass
class AssumptionConstants:
    C_zz: float
    gamma_sq_zz: float
    C_yz: float
    gamma_sq_yz: float
    C_y: float
    gamma_sq_y: float
    d_z: int
    d_y: int
    m_sigma: int = None

    def to_dict(self):
        return _jsonable(asdict(self))


def assumption_constants(P, mask_net, net=None, m_sigma=None, cap=PATH_CAP):
    """Tightest constants satisfying the per-sample boundedness and variance conditions.

    Computed exactly over the (positive-probability) support of ``P`` with
    path features ``z~ = xbar * sigmabar(x, w_sigma)``.
    """
    net = mask_net if net is None else net
    keep = P.probs > 0
    xs, ys, p = P.xs[keep], P.ys[keep], P.probs[keep]
    Z, _ = path_features(net, xs, cap=cap, mask_net=mask_net)
    ezz = (Z * p[:, None]).T @ Z
    eyz = (ys * p[:, None]).T @ Z
    ey2 = float(p @ np.sum(ys**2, axis=1))

    C_zz = max(linalg.lambda_max(ezz - np.outer(z, z)) for z in Z)
    # E[(G_i)^2] = E[|z|^2 z z^T] - E[z z^T]^2
    second = (Z * (p * np.sum(Z**2, axis=1))[:, None]).T @ Z - ezz @ ezz
    gamma_sq_zz = linalg.spectral_norm(0.5 * (second + second.T))

    V = ys[:, :, None] * Z[:, None, :] - eyz[None, :, :]  # (support, d_y, d_z)
    C_yz = float(np.max(np.abs(V)))
    gamma_sq_yz = float(np.max(np.tensordot(p, V**2, axes=1)))

    cy = ey2 - np.sum(ys**2, axis=1)
    return AssumptionConstants(
        C_zz=max(float(C_zz), 0.0),
        gamma_sq_zz=gamma_sq_zz,
        C_yz=C_yz,
        gamma_sq_yz=gamma_sq_yz,
        C_y=float(np.max(np.abs(cy))),
        gamma_sq_y=float(p @ cy**2),
        d_z=Z.shape[1],
        d_y=ys.shape[1],
        m_sigma=m_sigma,
    )


PAIRING_NOTE = (
    "value = beta1 * sum_k ||wbar_k||_2^2 + 2 * beta2 * sum_k ||wbar_k||_1 + beta3; "
    "beta1 carries the lambda_max(E[zz^T] - mean zz^T) deviation, beta2 the sup-norm deviation of "
    "mean(y_k z) - E[y_k z]. swapped_pairing_value pairs beta1 with the l1 sum and beta2 with the l2^2 sum."
)


def two_phase_bound(constants, path_l1, path_l2sq, delta, m_sigma=None):
    """High-probability gap bound for a model whose masks were frozen before seeing S minus S_am."""
    _check_delta(delta)
    m_sigma = constants.m_sigma if m_sigma is None else m_sigma
    if m_sigma is None or m_sigma < 1:
        raise ValueError("m_sigma must be at least 1")
    d_z, d_y = constants.d_z, constants.d_y
    l1 = math.log(3.0 * d_z / delta)
    l2 = math.log(6.0 * d_y * d_z / delta)
    l3 = math.log(3.0 / delta)
    beta1 = 2 * constants.C_zz / (3 * m_sigma) * l1 + math.sqrt(2 * constants.gamma_sq_zz / m_sigma * l1)
    beta2 = 2 * constants.C_yz / (3 * m_sigma) * l2 + math.sqrt(constants.gamma_sq_yz / m_sigma * l2)
    beta3 = 2 * constants.C_y / (3 * m_sigma) * l3 + math.sqrt(2 * constants.gamma_sq_y / m_sigma * l3)
    value = beta1 * path_l2sq + 2 * beta2 * path_l1 + beta3
    return BoundReport(
        bound_name="two_phase",
        inputs={**constants.to_dict(), "m_sigma": m_sigma, "path_l1": path_l1, "path_l2sq": path_l2sq},
        value=value,
        delta=delta,
        terms={
            "beta1": beta1,
            "beta2": beta2,
            "beta3": beta3,
            "swapped_pairing_value": beta1 * path_l1 + 2 * beta2 * path_l2sq + beta3,
        },
        notes=PAIRING_NOTE,
    )


def path_norm_sums(weight_net, cap=PATH_CAP):
    """``(sum_k ||wbar_k||_1, sum_k ||wbar_k||_2^2)``; the l1 sum needs path enumeration."""
    from .netdag import materialize_paths

    wbar = materialize_paths(weight_net, cap=cap).wbar
    return float(np.sum(np.abs(wbar))), float(np.sum(path_norm_squared(weight_net)))


# -- margin loss ------------------------------------------------------------------


def margins(Z, labels):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if Z.shape[1] < 2:
        raise ValueError("margins need at least two outputs")
    rows = np.arange(Z.shape[0])
    true = Z[rows, labels]
    others = Z.copy()
    others[rows, labels] = -np.inf
    return true - np.max(others, axis=1)


def ramp(t, rho):
    if rho <= 0:
        raise ValueError("rho must be positive")
    return np.clip(1.0 - np.asarray(t, dtype=float) / rho, 0.0, 1.0)


def margin_loss(outputs, label, rho):
    """Ramp loss of the margin: 0 beyond rho, 1 at or below 0, linear between."""
    return float(ramp(margins(outputs, [label])[0], rho))


def empirical_margin_risk(model, S, rho):
    return float(np.mean(ramp(margins(model.outputs(S.x), S.labels), rho)))


def margin_bound(rho, alpha, m, C_sigma, C_w, d_y, delta, empirical_margin_risk):
    _check_delta(delta)
    if rho <= 0 or C_sigma < 0 or C_w < 0 or not 0 <= alpha < 1:
        raise ValueError("need rho > 0, C_sigma, C_w >= 0 and alpha in [0, 1)")
    m_sigma = (1.0 - alpha) * m
    if m_sigma < 1:
        raise ValueError(f"(1 - alpha) * m = {m_sigma} must be at least 1")
    complexity = 2.0 * d_y**2 * (1.0 - alpha) ** -0.5 * C_sigma * C_w / (rho * math.sqrt(m_sigma))
    confidence = math.sqrt(math.log(1.0 / delta) / (2.0 * m_sigma))
    return BoundReport(
        bound_name="margin",
        inputs={
            "rho": rho, "alpha": alpha, "m": m, "C_sigma": C_sigma, "C_w": C_w, "d_y": d_y,
            "empirical_margin_risk": empirical_margin_risk,
        },
        value=empirical_margin_risk + complexity + confidence,
        delta=delta,
        terms={"complexity": complexity, "confidence": confidence, "m_sigma": m_sigma},
    )


def c_sigma_exact(P, weight_net, mask_net=None):
    """``sqrt(E ||xbar * sigmabar(x, w_sigma)||^2)`` without enumerating paths.

    ``||xbar * sigmabar||^2 = sum_j x_in(j)^2 sigmabar_j`` is the output of a
    linear pass with unit weights on input ``x**2`` under the frozen masks;
    every output unit sees the same path set, so output 0 is taken.
    """
    mask_net = weight_net if mask_net is None else mask_net
    masks = forward(mask_net, P.xs).masks
    ones = weight_net.with_weights([np.ones_like(w) for w in weight_net.weights()])
    sq = forward(ones, P.xs**2, masks=masks).pre[-1][:, 0]
    return float(math.sqrt(max(P.probs @ sq, 0.0)))


def c_w_exact(weight_net):
    return float(np.sqrt(np.max(path_norm_squared(weight_net))))


def validation_constants(models, P, loss="zero_one"):
    """Exact ``(C, gamma^2)`` for ``R[f] - loss(f(x), y)`` over P, maximized over the model set."""
    from .distribution import pointwise_loss

    keep = P.probs > 0
    xs, ys, p = P.xs[keep], P.ys[keep], P.probs[keep]
    C, gamma_sq = 0.0, 0.0
    for f in models:
        losses = pointwise_loss(f.outputs(xs), ys, loss)
        kappa = p @ losses - losses
        C = max(C, float(np.max(np.abs(kappa))))
        gamma_sq = max(gamma_sq, float(p @ kappa**2))
    return C, gamma_sq


def path_moment(P, model, cap=PATH_CAP):
    """``E[z z^T]`` under P for a plain or two-network model."""
    weight_net, mask_net = _split_model(model)
    return path_moments(weight_net, P, mask_net=mask_net, cap=cap)[0]

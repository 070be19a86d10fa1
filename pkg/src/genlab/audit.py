"""Monte Carlo coverage checks for the high-probability bounds.

Each check fixes a finite ground-truth distribution, redraws the random
sample many times with derived seeds, and counts how often the bound is
violated.  A valid bound at confidence ``1 - delta`` is violated with
frequency at most ``delta``; :func:`binomial_upper` gives the count that
an honest ``Binomial(trials, delta)`` stays below with 99% probability.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import bounds, linalg
from .distribution import Dataset, empirical_risk, expected_risk, random_finite_distribution, sample_dataset
from .netdag import DagNetwork
from .seeding import derive_seed, make_rng
from .train import TrainConfig, TwoPhaseModel, sgd_train


def binomial_upper(n, p, level=0.99):
    """Smallest k with ``P(Binomial(n, p) <= k) >= level``."""
    if p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    total = 0.0
    for k in range(n + 1):
        log_pmf = (math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
                   + k * math.log(p) + (n - k) * math.log1p(-p))
        total += math.exp(log_pmf)
        if total >= level:
            return k
    return n


@dataclass
class Coverage:
    name: str
    trials: int
    violations: int
    delta: float
    mean_value: float  # average bound value, for context
    mean_target: float  # average quantity being bounded

    @property
    def frequency(self):
        return self.violations / self.trials

    @property
    def allowed(self):
        return binomial_upper(self.trials, self.delta)

    @property
    def passed(self):
        return self.violations <= self.allowed

    def line(self):
        return (f"{self.name}: {self.violations}/{self.trials} violations "
                f"(freq {self.frequency:.4f}, allowed <= {self.allowed} at delta={self.delta})")


def validation_coverage(trials=500, delta=0.1, m_val=100, n_models=5, seed=0):
    """Validation-set bound over a fixed finite set of random classifiers."""
    rng = make_rng(seed, "validation-P")
    P = random_finite_distribution(rng, 16, 3, 3, "onehot")
    models = [DagNetwork.build((3, 5, 3), seed=derive_seed(seed, "model", i)) for i in range(n_models)]
    C, gamma_sq = bounds.validation_constants(models, P)
    true = np.array([expected_risk(f, P, "zero_one") for f in models])
    extra = bounds.validation_bound(m_val, delta, C, gamma_sq, n_models, 0.0).value
    violations, values = 0, []
    for t in range(trials):
        val = sample_dataset(P, m_val, derive_seed(seed, "validation", t))
        r_val = np.array([empirical_risk(f, val, "zero_one") for f in models])
        violations += bool(np.any(true > r_val + extra))
        values.append(float(np.min(r_val)) + extra)
    return Coverage("validation bound", trials, violations, delta, float(np.mean(values)), float(np.min(true)))


def _two_phase_setup(seed, m_alpha, support=12):
    rng = make_rng(seed, "two-phase-P")
    P = random_finite_distribution(rng, support, 2, 2, "onehot")
    net = DagNetwork.build((2, 4, 2), seed=derive_seed(seed, "init"))
    prefix = sample_dataset(P, m_alpha, derive_seed(seed, "prefix"))
    cfg = TrainConfig(learning_rate=0.05, epochs=20, batch_size=8, loss="squared", seed=derive_seed(seed, "shuffle"))
    mask_net = sgd_train(net, prefix, cfg).net
    return P, prefix, mask_net, cfg


def _freeze_trials(trials, seed, m_alpha, m_sigma, freeze_epochs):
    """Yield ``(P, model, rest)`` for fresh samples of the post-prefix data."""
    P, prefix, mask_net, cfg = _two_phase_setup(seed, m_alpha)
    alpha = m_alpha / (m_alpha + m_sigma)
    freeze_cfg = TrainConfig(learning_rate=cfg.learning_rate, epochs=freeze_epochs, batch_size=8, loss="squared")
    for t in range(trials):
        rest = sample_dataset(P, m_sigma, derive_seed(seed, "rest", t))
        S = Dataset(np.vstack([prefix.x, rest.x]), np.vstack([prefix.y, rest.y]), {"trial": t})
        weights = sgd_train(mask_net, S, TrainConfig(**{**freeze_cfg.to_dict(), "seed": derive_seed(seed, "freeze", t)}),
                            mask_net=mask_net, phase="freeze").net
        yield P, TwoPhaseModel(mask_net, weights, alpha, "untied"), rest, alpha


def two_phase_coverage(trials=500, delta=0.1, m_alpha=20, m_sigma=20, freeze_epochs=10, seed=0):
    """Squared-loss two-phase bound with frozen masks, fresh post-prefix data per trial."""
    violations, values, gaps = 0, [], []
    consts = None
    for P, model, rest, _ in _freeze_trials(trials, seed, m_alpha, m_sigma, freeze_epochs):
        if consts is None:
            consts = bounds.assumption_constants(P, model.mask_network, m_sigma=m_sigma)
        l1, l2sq = bounds.path_norm_sums(model.weight_network)
        value = bounds.two_phase_bound(consts, l1, l2sq, delta).value
        gap = expected_risk(model, P, "squared") - empirical_risk(model, rest, "squared")
        violations += gap > value
        values.append(value)
        gaps.append(gap)
    return Coverage("two-phase bound", trials, violations, delta, float(np.mean(values)), float(np.mean(gaps)))


def margin_coverage(trials=500, delta=0.1, rho=0.5, m_alpha=20, m_sigma=20, freeze_epochs=10, seed=0):
    """0-1 risk against the margin bound with frozen masks."""
    violations, values, risks = 0, [], []
    for P, model, rest, alpha in _freeze_trials(trials, seed, m_alpha, m_sigma, freeze_epochs):
        c_sigma = bounds.c_sigma_exact(P, model.weight_network, model.mask_network)
        c_w = bounds.c_w_exact(model.weight_network)
        emp = bounds.empirical_margin_risk(model, rest, rho)
        value = bounds.margin_bound(rho, alpha, m_alpha + m_sigma, c_sigma, c_w, P.ys.shape[1], delta, emp).value
        risk = expected_risk(model, P, "zero_one")
        violations += risk > value
        values.append(value)
        risks.append(risk)
    return Coverage("margin bound", trials, violations, delta, float(np.mean(values)), float(np.mean(risks)))


def matrix_bernstein_coverage(trials=2000, delta=0.1, d=3, n_terms=20, seed=0):
    """Rademacher sums of fixed symmetric matrices against the matrix Bernstein threshold."""
    rng = make_rng(seed, "bernstein-matrices")
    A = rng.normal(size=(n_terms, d, d))
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    R = max(linalg.spectral_norm(a) for a in A)
    gamma_sq = linalg.spectral_norm(np.einsum("nij,njk->ik", A, A))
    t = bounds.matrix_bernstein_threshold(R, gamma_sq, d, delta)
    signs = make_rng(seed, "bernstein-signs").choice([-1.0, 1.0], size=(trials, n_terms))
    sums = np.einsum("tn,nij->tij", signs, A)
    tops = np.array([linalg.lambda_max(s) for s in sums])
    return Coverage("matrix Bernstein", trials, int(np.sum(tops > t)), delta, t, float(np.mean(tops)))

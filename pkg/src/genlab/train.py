"""Mini-batch SGD with momentum, the DARC1 output regularizer and two-phase training.

Two-phase training first fits a network on a prefix of the data, then
freezes a copy of it as the *mask network* and keeps training only a
*weight network* whose units are switched on and off by the frozen copy.
"""

from dataclasses import dataclass, field, asdict
import csv
import hashlib
import io
import json
import math

import numpy as np

from .netdag import DagNetwork, backward, forward

TRAIN_LOSSES = ("squared", "softmax_cross_entropy")
METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy", "darc1_value")
TWO_PHASE_SCHEMA = "genlab.twophase/1"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, phase="standard"):
        super().__init__(f"{phase} training diverged (non-finite loss or parameters) in epoch {epoch}")
        self.epoch = epoch
        self.phase = phase


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.5
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    loss: str = "softmax_cross_entropy"
    darc1_coefficient: float = 0.0  # lambda / batch size; 0 disables

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.loss not in TRAIN_LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {TRAIN_LOSSES}")
        if self.darc1_coefficient < 0:
            raise ValueError("darc1_coefficient must be nonnegative")

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


# -- losses and regularizer -------------------------------------------------------


def batch_loss(Z, Y, loss):
    """Mean loss over the batch and its gradient w.r.t. the outputs."""
    b = Z.shape[0]
    if loss == "squared":
        diff = Z - Y
        return float(np.sum(diff**2) / b), 2.0 * diff / b
    if loss == "softmax_cross_entropy":
        shifted = Z - Z.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
        return float(-np.sum(Y * logp) / b), (np.exp(logp) - Y) / b
    raise ValueError(f"unknown loss {loss!r}")


def darc1_penalty(Z, coefficient):
    """``coefficient * max_k sum_i |Z[i, k]|`` over a nonempty batch of outputs."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        raise ValueError("darc1_penalty needs a nonempty batch")
    return float(coefficient * np.max(np.sum(np.abs(Z), axis=0)))


def darc1_gradient(Z, coefficient):
    """Subgradient of :func:`darc1_penalty`: ``sign`` on the winning column only.

    ``np.argmax`` breaks ties toward the lowest index and ``np.sign(0) = 0``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    grad = np.zeros_like(Z)
    k = int(np.argmax(np.sum(np.abs(Z), axis=0)))
    grad[:, k] = coefficient * np.sign(Z[:, k])
    return grad


def darc1_statistic(Z):
    """``(1/m) max_k sum_i |Z[i, k]|``, the size of the outputs DARC1 penalizes."""
    Z = np.atleast_2d(Z)
    return float(np.max(np.sum(np.abs(Z), axis=0)) / Z.shape[0])


def accuracy(Z, Y):
    return float(np.mean(np.argmax(Z, axis=1) == np.argmax(Y, axis=1)))


# -- SGD ------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: DagNetwork
    history: list = field(default_factory=list)  # rows keyed by METRIC_COLUMNS


def _evaluate(outputs_fn, data, loss, epoch, split):
    Z = outputs_fn(data.x)
    value, _ = batch_loss(Z, data.y, loss)
    return {
        "epoch": epoch,
        "split": split,
        "loss": value,
        "accuracy": accuracy(Z, data.y),
        "darc1_value": darc1_statistic(Z),
    }


def _masked_outputs(net, mask_net):
    if mask_net is None:
        return net.outputs
    return lambda X: forward(net, X, masks=forward(mask_net, X).masks).pre[-1]


def sgd_train(net, S, config, test=None, mask_net=None, phase="standard"):
    """Train ``net`` on ``S`` with momentum SGD; returns the final net and per-epoch metrics.

    With ``mask_net`` the hidden masks come from that (fixed) network, which
    is the freeze phase of two-phase training.  Metrics are recorded before
    the first epoch (epoch 0) and after each epoch, on ``train`` and, when
    given, ``test``.
    """
    if S.size < 1:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(config.seed)
    params = net.params.copy()
    velocity = np.zeros_like(params)
    history = []

    def record(epoch, current):
        fn = _masked_outputs(current, mask_net)
        with np.errstate(over="ignore", invalid="ignore"):
            history.append(_evaluate(fn, S, config.loss, epoch, "train"))
            if test is not None:
                history.append(_evaluate(fn, test, config.loss, epoch, "test"))

    record(0, net)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(S.size)
        for start in range(0, S.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = S.x[idx], S.y[idx]
            current = net.with_params(params)
            masks = forward(mask_net, xb).masks if mask_net is not None else None
            with np.errstate(over="ignore", invalid="ignore"):
                trace = forward(current, xb, masks=masks)
                Z = trace.pre[-1]
                value, gout = batch_loss(Z, yb, config.loss)
                if config.darc1_coefficient > 0:
                    value += darc1_penalty(Z, config.darc1_coefficient)
                    gout = gout + darc1_gradient(Z, config.darc1_coefficient)
                grad = backward(current, trace, gout)
                velocity = config.momentum * velocity - config.learning_rate * grad
                params = params + velocity
            if not (math.isfinite(value) and np.all(np.isfinite(params))):
                raise TrainingDiverged(epoch, phase)
        net = net.with_params(params)
        record(epoch, net)
    return TrainResult(net=net, history=history)


# -- two-network model ------------------------------------------------------------


def params_digest(net):
    return hashlib.sha256(net.param_bytes()).hexdigest()


@dataclass(frozen=True)
class TwoPhaseModel:
    mask_network: DagNetwork  # supplies the activation pattern (w_sigma)
    weight_network: DagNetwork  # supplies the path weights
    alpha: float
    tie_state: str = "untied"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.tie_state not in ("tied", "untied"):
            raise ValueError("tie_state must be 'tied' or 'untied'")
        a, b = self.mask_network, self.weight_network
        if (a.widths, a.edges, a.nonlinearity, a.pool_sizes) != (b.widths, b.edges, b.nonlinearity, b.pool_sizes):
            raise ValueError("mask and weight networks must share one architecture")
        if self.tie_state == "tied" and a.param_bytes() != b.param_bytes():
            raise ValueError("tied networks must hold identical parameters")

    def outputs(self, X):
        return two_phase_forward(self, np.atleast_2d(X))

    def to_dict(self):
        return {
            "schema": TWO_PHASE_SCHEMA,
            "alpha": self.alpha,
            "tie_state": self.tie_state,
            "mask_network": self.mask_network.to_dict(),
            "weight_network": self.weight_network.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != TWO_PHASE_SCHEMA:
            raise ValueError(f"expected schema {TWO_PHASE_SCHEMA}, got {doc.get('schema')!r}")
        return cls(
            DagNetwork.from_dict(doc["mask_network"]),
            DagNetwork.from_dict(doc["weight_network"]),
            float(doc["alpha"]),
            doc["tie_state"],
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def two_phase_forward(model, x):
    """Weight-network pass under the mask network's activation pattern."""
    masks = forward(model.mask_network, x).masks
    return forward(model.weight_network, x, masks=masks).output


def prefix_size(alpha, m):
    # round first so that e.g. 0.07 * 100 does not ceil to 8
    return int(math.ceil(round(alpha * m, 9)))


@dataclass
class TwoPhaseResult:
    model: TwoPhaseModel
    standard: TrainResult
    freeze: TrainResult
    prefix_size: int
    risks: dict  # final freeze-phase loss on all of S and on S minus the prefix
    mask_digest: str


def two_phase_train(net_template, S, alpha, standard_config, freeze_config=None, test=None):
    """Standard phase on the first ``ceil(alpha m)`` samples, then freeze the masks and train on all of S."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    m_alpha = prefix_size(alpha, S.size)
    if m_alpha < 1:
        raise ValueError("the standard phase needs at least one sample")
    freeze_config = standard_config if freeze_config is None else freeze_config

    standard = sgd_train(net_template, S.head(m_alpha), standard_config, test=test, phase="standard")
    mask_net = standard.net
    digest = params_digest(mask_net)
    freeze = sgd_train(standard.net, S, freeze_config, test=test, mask_net=mask_net, phase="freeze")
    if params_digest(mask_net) != digest:
        raise AssertionError("mask network changed during the freeze phase")

    model = TwoPhaseModel(mask_net, freeze.net, alpha, "untied")
    risks = {"loss_all": _evaluate(model.outputs, S, freeze_config.loss, freeze_config.epochs, "train")["loss"]}
    if m_alpha < S.size:
        rest = S.tail(m_alpha)
        risks["loss_rest"] = _evaluate(model.outputs, rest, freeze_config.loss, freeze_config.epochs, "rest")["loss"]
    return TwoPhaseResult(model, standard, freeze, m_alpha, risks, digest)


# -- metric output ----------------------------------------------------------------


def metrics_csv(rows, extra_columns=()):
    """CSV text for metric rows; floats use ``repr`` so reruns are byte-identical."""
    columns = tuple(extra_columns) + METRIC_COLUMNS
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def with_columns(rows, **values):
    return [{**values, **row} for row in rows]


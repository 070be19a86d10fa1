"""Finite ground-truth distributions, datasets, risks and IDX ingestion.

Targets are always real vectors; class labels are one-hot so squared-loss
and 0-1 / margin analyses share one data model.
"""

from dataclasses import dataclass, field
import json
import struct

import numpy as np

from .netdag import PATH_CAP, path_features

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
LOSSES = ("squared", "zero_one")


def _model_outputs(model, X):
    return model.outputs(np.atleast_2d(np.asarray(X, dtype=float)))


@dataclass(frozen=True)
class FiniteDistribution:
    xs: np.ndarray  # (support, n_0)
    ys: np.ndarray  # (support, d_y)
    probs: np.ndarray  # (support,)

    def __post_init__(self):
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        ys = np.asarray(self.ys, dtype=float)
        ys = ys[:, None] if ys.ndim == 1 else ys
        p = np.asarray(self.probs, dtype=float)
        if not (xs.shape[0] == ys.shape[0] == p.shape[0]) or p.ndim != 1 or xs.shape[0] == 0:
            raise ValueError(f"support sizes disagree: x {xs.shape}, y {ys.shape}, p {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum = {p.sum()!r})")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("support contains NaN or Inf")
        for name, arr in (("xs", xs), ("ys", ys), ("probs", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self):
        return self.probs.size

    @classmethod
    def empirical(cls, dataset):
        """Uniform mass on each sample (repeats keep their multiplicity)."""
        m = dataset.size
        return cls(dataset.x, dataset.y, np.full(m, 1.0 / m))

    def mix(self, other, weight):
        """``(1 - weight) * self + weight * other`` over the union of supports."""
        return FiniteDistribution(
            np.vstack([self.xs, other.xs]),
            np.vstack([self.ys, other.ys]),
            np.concatenate([(1 - weight) * self.probs, weight * other.probs]),
        )

    def to_dict(self):
        return {
            "schema": "genlab.finitedist/1",
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != "genlab.finitedist/1":
            raise ValueError(f"unsupported distribution schema {doc.get('schema')!r}")
        return cls(doc["xs"], doc["ys"], doc["probs"])


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (m, n_0)
    y: np.ndarray  # (m, d_y)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
            raise ValueError(f"dataset needs matching nonzero sample counts, got x {x.shape}, y {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def size(self):
        return self.x.shape[0]

    @property
    def labels(self):
        return np.argmax(self.y, axis=1)

    def subset(self, idx, **provenance):
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], {**self.provenance, **provenance})

    def head(self, n):
        return self.subset(np.arange(min(n, self.size)), prefix=int(min(n, self.size)))

    def tail(self, start):
        return self.subset(np.arange(start, self.size), suffix_from=int(start))

    def to_dict(self):
        return {
            "schema": "genlab.dataset/1",
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != "genlab.dataset/1":
            raise ValueError(f"unsupported dataset schema {doc.get('schema')!r}")
        return cls(doc["x"], doc["y"], doc.get("provenance", {}))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def sample_dataset(P, m, seed):
    """``m`` i.i.d. draws from ``P`` by inverse CDF."""
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(P.probs)
    idx = np.minimum(np.searchsorted(cdf, rng.random(m), side="right"), P.size - 1)
    return Dataset(P.xs[idx], P.ys[idx], {"kind": "sampled", "seed": int(seed), "m": int(m)})


def pointwise_loss(Z, Y, loss):
    Z = np.atleast_2d(Z)
    Y = np.atleast_2d(Y)
    if loss == "squared":
        return np.sum((Z - Y) ** 2, axis=1)
    if loss == "zero_one":
        return (np.argmax(Z, axis=1) != np.argmax(Y, axis=1)).astype(float)
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def expected_risk(model, P, loss="squared"):
    return float(P.probs @ pointwise_loss(_model_outputs(model, P.xs), P.ys, loss))


def empirical_risk(model, S, loss="squared"):
    return float(np.mean(pointwise_loss(_model_outputs(model, S.x), S.y, loss)))


def path_moments(net, P, mask_net=None, cap=PATH_CAP):
    """Exact ``E[z z^T]``, ``E[y_k z]`` (rows k) and ``E[||y||^2]`` under ``P``.

    ``z`` are path features of ``net`` with activation pattern taken from
    ``mask_net`` (default: ``net`` itself).
    """
    Z, _ = path_features(net, P.xs, cap=cap, mask_net=mask_net)
    zz = (Z * P.probs[:, None]).T @ Z
    yz = (P.ys * P.probs[:, None]).T @ Z
    return 0.5 * (zz + zz.T), yz, float(P.probs @ np.sum(P.ys**2, axis=1))


def exact_path_second_moment(net, P, w_ref=None):
    return path_moments(net, P, mask_net=w_ref)[0]


def exact_yz_moment(net, P, w_ref=None):
    return path_moments(net, P, mask_net=w_ref)[1]


def exact_y_sq(P):
    return float(P.probs @ np.sum(P.ys**2, axis=1))


def corrupt_labels(S, fraction, num_classes, seed):
    """Resample labels of a random ``floor(fraction * m)`` subset uniformly."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    k = int(np.floor(fraction * S.size))
    chosen = rng.choice(S.size, size=k, replace=False)
    labels = S.labels.copy()
    labels[chosen] = rng.integers(0, num_classes, size=k)
    y = one_hot(labels, max(num_classes, S.y.shape[1]))
    return Dataset(S.x, y, {**S.provenance, "corrupted": {"fraction": fraction, "seed": int(seed)}})


# -- synthetic data ------------------------------------------------------------


def random_finite_distribution(rng, support, n_in, d_y, targets="gaussian"):
    """Random finite distribution for audits.

    ``targets`` is ``"gaussian"`` (real vectors), ``"onehot"`` (labels that
    depend on x through a random linear rule) or ``"random"`` (one-hot labels
    drawn independently of x).
    """
    xs = rng.normal(size=(support, n_in))
    probs = rng.dirichlet(np.ones(support))
    if targets == "gaussian":
        ys = rng.normal(size=(support, d_y))
    elif targets == "onehot":
        ys = one_hot(np.argmax(xs @ rng.normal(size=(n_in, d_y)), axis=1), d_y)
    elif targets == "random":
        ys = one_hot(rng.integers(0, d_y, size=support), d_y)
    else:
        raise ValueError(f"unknown target kind {targets!r}")
    return FiniteDistribution(xs, ys, probs / probs.sum())


def gaussian_blobs(m, centers, scale, seed, bias=True):
    """Isotropic blobs, one class per center, one-hot targets."""
    centers = np.asarray(centers, dtype=float)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(centers), size=m)
    x = centers[labels] + scale * rng.normal(size=(m, centers.shape[1]))
    if bias:
        x = np.hstack([x, np.ones((m, 1))])
    return Dataset(x, one_hot(labels, len(centers)), {"kind": "blobs", "seed": int(seed), "m": int(m)})


def with_bias_coordinate(S):
    return Dataset(np.hstack([S.x, np.ones((S.size, 1))]), S.y, {**S.provenance, "bias_coordinate": True})


# -- IDX -----------------------------------------------------------------------


def _read_header(raw, path, magic_expected, ndim):
    need = 4 * (1 + ndim)
    if len(raw) >= 4:
        magic = struct.unpack(">i", raw[:4])[0]
        if magic != magic_expected:
            raise ValueError(f"{path}: bad magic {magic} at offset 0, expected {magic_expected}")
    if len(raw) < need:
        raise ValueError(f"{path}: truncated header, need {need} bytes at offset 0, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}i", raw[4:need])
    return dims, need


def read_idx_images(path):
    with open(path, "rb") as f:
        raw = f.read()
    (count, rows, cols), offset = _read_header(raw, path, IDX_IMAGES_MAGIC, 3)
    need = count * rows * cols
    have = len(raw) - offset
    if have < need:
        raise ValueError(f"{path}: truncated pixel data at offset {offset}: need {need} bytes, have {have}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset).reshape(count, rows, cols)


def read_idx_labels(path):
    with open(path, "rb") as f:
        raw = f.read()
    (count,), offset = _read_header(raw, path, IDX_LABELS_MAGIC, 1)
    have = len(raw) - offset
    if have < count:
        raise ValueError(f"{path}: truncated label data at offset {offset}: need {count} bytes, have {have}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).copy()


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, num_classes=10):
    """IDX image/label pair as a Dataset: flattened pixels in [0, 1], one-hot labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.size:
        raise ValueError(f"image count {images.shape[0]} does not match label count {labels.size}")
    if labels.size and labels.max() >= num_classes:
        raise ValueError(f"label {labels.max()} outside {num_classes} classes")
    x = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(
        x,
        one_hot(labels, num_classes),
        {"kind": "loaded", "images": str(images_path), "labels": str(labels_path), "shape": list(images.shape[1:])},
    )


def downscale(S, side, factor=2):
    """Average-pool square images (flattened rows of ``S.x``) by ``factor``."""
    m = S.size
    imgs = S.x.reshape(m, side, side)
    k = side // factor
    pooled = imgs[:, : k * factor, : k * factor].reshape(m, k, factor, k, factor).mean(axis=(2, 4))
    return Dataset(pooled.reshape(m, k * k), S.y, {**S.provenance, "downscaled": [k, k]})

"""Feed-forward DAG networks with ReLU / max-pool units, written in path form.

Layers are numbered 0 (input) .. L (output).  An edge ``(l, l')`` with
``l' < l`` carries a weight matrix of shape ``(n_l, n_l')`` and

    z[l] = sum over edges (l, l') of W(l, l') @ (mask[l'] * z[l'])

with ``mask[0] = 1`` and the output layer left linear.  No biases: append a
constant-1 input coordinate when an affine term is needed.

All weights are views into one flat parameter vector through a per-edge
integer *tie map*; ``-1`` entries are structural zeros.  Untied nets simply
give every entry its own parameter.
"""

from dataclasses import dataclass, field
import json

import numpy as np

SCHEMA = "genlab.dagnet/1"
PATH_CAP = 65536
NONLINEARITIES = ("relu", "maxpool")


def default_ties(widths, edges):
    """One fresh parameter per weight entry, numbered edge by edge, row-major."""
    ties, offset = [], 0
    for t, s in sorted(edges):
        n = widths[t] * widths[s]
        ties.append(np.arange(offset, offset + n).reshape(widths[t], widths[s]))
        offset += n
    return ties


@dataclass(frozen=True)
class DagNetwork:
    widths: tuple
    edges: tuple  # ((l, l'), ...) sorted by target then source
    nonlinearity: tuple  # one tag per hidden layer
    pool_sizes: tuple  # one per hidden layer; 1 for relu
    params: np.ndarray = field(repr=False)
    ties: tuple = field(repr=False)  # int arrays, one per edge
    seed: int = None

    def __post_init__(self):
        widths = tuple(int(n) for n in self.widths)
        edges = tuple(sorted((int(a), int(b)) for a, b in self.edges))
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "nonlinearity", tuple(self.nonlinearity))
        object.__setattr__(self, "pool_sizes", tuple(int(g) for g in self.pool_sizes))
        params = np.array(self.params, dtype=float)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        ties = tuple(np.asarray(t, dtype=np.intp) for t in self.ties)
        for t in ties:
            t.setflags(write=False)
        object.__setattr__(self, "ties", ties)
        self._validate()

    def _validate(self):
        L = len(self.widths) - 1
        if L < 1 or min(self.widths) < 1:
            raise ValueError(f"need at least input and output layers with positive widths, got {self.widths}")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges")
        for target, source in self.edges:
            if not 0 <= source < target <= L:
                raise ValueError(f"edge {(target, source)} does not respect the layer order")
        for l in range(1, L + 1):
            if not any(t == l for t, _ in self.edges):
                raise ValueError(f"layer {l} has no incoming edge")
        for l in range(0, L):
            if not any(s == l for _, s in self.edges):
                raise ValueError(f"layer {l} has no outgoing edge")
        if len(self.nonlinearity) != L - 1 or len(self.pool_sizes) != L - 1:
            raise ValueError(f"need one nonlinearity and pool size per hidden layer ({L - 1})")
        for h, (kind, g) in enumerate(zip(self.nonlinearity, self.pool_sizes), start=1):
            if kind not in NONLINEARITIES:
                raise ValueError(f"unknown nonlinearity {kind!r} at layer {h}")
            if g < 1 or self.widths[h] % g:
                raise ValueError(f"pool size {g} does not divide width {self.widths[h]} at layer {h}")
        if len(self.ties) != len(self.edges):
            raise ValueError("need one tie map per edge")
        for (target, source), t in zip(self.edges, self.ties):
            if t.shape != (self.widths[target], self.widths[source]):
                raise ValueError(f"tie map for edge {(target, source)} has shape {t.shape}")
            if t.size and (t.max() >= self.params.size or t.min() < -1):
                raise ValueError(f"tie map for edge {(target, source)} points outside the parameter vector")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("parameters contain NaN or Inf")

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def d_out(self):
        return self.widths[-1]

    @property
    def is_layered(self):
        return all(t - s == 1 for t, s in self.edges)

    def weight(self, i):
        t = self.ties[i]
        w = np.where(t >= 0, self.params[np.maximum(t, 0)], 0.0)
        return w

    def weights(self):
        return [self.weight(i) for i in range(len(self.edges))]

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {params.shape}")
        return DagNetwork(self.widths, self.edges, self.nonlinearity, self.pool_sizes, params, self.ties, self.seed)

    def with_weights(self, weights):
        """Untied copy whose edge matrices are exactly ``weights``."""
        ties = default_ties(self.widths, self.edges)
        params = np.concatenate([np.asarray(w, dtype=float).ravel() for w in weights]) if weights else np.zeros(0)
        return DagNetwork(self.widths, self.edges, self.nonlinearity, self.pool_sizes, params, ties, self.seed)

    def outputs(self, X):
        return forward(self, np.atleast_2d(X)).pre[-1]

    def param_bytes(self):
        return self.params.tobytes()

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, widths, edges=None, nonlinearity="relu", pool_sizes=None, ties=None, seed=0):
        """Randomly initialised network (uniform Glorot per edge, seeded).

        ``edges`` defaults to the plain layered chain.  ``nonlinearity`` and
        ``pool_sizes`` may be a single value or one per hidden layer.
        """
        widths = tuple(int(n) for n in widths)
        L = len(widths) - 1
        if edges is None:
            edges = [(l, l - 1) for l in range(1, L + 1)]
        edges = sorted((int(a), int(b)) for a, b in edges)
        if isinstance(nonlinearity, str):
            nonlinearity = [nonlinearity] * (L - 1)
        if pool_sizes is None:
            pool_sizes = [1] * (L - 1)
        elif np.isscalar(pool_sizes):
            pool_sizes = [int(pool_sizes)] * (L - 1)

        if ties is None:
            ties = default_ties(widths, edges)
        n_params = 1 + max((int(np.max(t, initial=-1)) for t in ties), default=-1)

        rng = np.random.default_rng(seed)
        params = np.zeros(n_params)
        assigned = np.zeros(n_params, dtype=bool)
        for (t, s), tie in zip(edges, ties):
            scale = np.sqrt(6.0 / (widths[t] + widths[s]))
            draws = rng.uniform(-scale, scale, size=tie.shape)
            fresh = (tie >= 0) & ~assigned[np.maximum(tie, 0)]
            idx, first = np.unique(tie[fresh], return_index=True)
            params[idx] = draws[fresh][first]
            assigned[idx] = True
        return cls(widths, edges, nonlinearity, pool_sizes, params, ties, seed)

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        untied = self.params.size == sum(t.size for t in self.ties) and all(
            np.array_equal(a, b) for a, b in zip(self.ties, default_ties(self.widths, self.edges))
        )
        return {
            "schema": SCHEMA,
            "widths": list(self.widths),
            "edges": [list(e) for e in self.edges],
            "nonlinearity": list(self.nonlinearity),
            "pool_sizes": list(self.pool_sizes),
            "weights": [w.ravel().tolist() for w in self.weights()],
            "ties": None if untied else [t.ravel().tolist() for t in self.ties],
            "params": None if untied else self.params.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unsupported network schema {doc.get('schema')!r}")
        widths = doc["widths"]
        edges = [tuple(e) for e in doc["edges"]]
        shapes = [(widths[t], widths[s]) for t, s in sorted(edges)]
        if doc.get("ties") is None:
            params = np.concatenate([np.asarray(w, dtype=float) for w in doc["weights"]])
            ties = default_ties(widths, edges)
        else:
            params = np.asarray(doc["params"], dtype=float)
            ties = [np.asarray(t, dtype=np.intp).reshape(shape) for t, shape in zip(doc["ties"], shapes)]
        return cls(widths, edges, doc["nonlinearity"], doc["pool_sizes"], params, ties, doc.get("seed"))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer pre-activations and 0/1 masks for a batch of inputs.

    ``pre[l]`` and ``masks[l]`` have shape ``(batch, n_l)``.  ``masks[0]`` and
    ``masks[L]`` are all ones.  Single-input traces keep a batch axis of 1.
    """

    pre: list
    masks: list
    single: bool = False

    @property
    def output(self):
        out = self.pre[-1]
        return out[0] if self.single else out

    def activation(self, l):
        return self.masks[l] * self.pre[l]


def activation_masks(kind, pool, z):
    if kind == "relu":
        return (z > 0).astype(float)
    # max-pool: the lowest-index maximal entry of each group stays on
    b, n = z.shape
    groups = z.reshape(b, n // pool, pool)
    winner = np.argmax(groups, axis=2)
    mask = np.zeros_like(groups)
    np.put_along_axis(mask, winner[..., None], 1.0, axis=2)
    return mask.reshape(b, n)


def forward(net, x, masks=None):
    """Forward pass for one input vector or a batch (rows of ``x``).

    ``masks`` overrides the hidden-layer masks (list indexed by layer, as in
    a trace); that is how the two-network construction evaluates a weight
    network under another network's activation pattern.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise ValueError(f"input has shape {x.shape}, network expects width {net.d_in}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or Inf")
    L = net.depth
    b = X.shape[0]
    W = net.weights()
    pre = [X] + [np.zeros((b, n)) for n in net.widths[1:]]
    mask_list = [np.ones_like(X)] + [None] * L
    post = [X] + [None] * L
    for i, (t, s) in enumerate(net.edges):
        # edges are sorted by target, so every source is final by now
        if post[s] is None:
            _finish_layer(net, s, pre, mask_list, post, masks)
        pre[t] += post[s] @ W[i].T
    _finish_layer(net, L, pre, mask_list, post, masks)
    return ForwardTrace(pre=pre, masks=mask_list, single=single)


def _finish_layer(net, l, pre, mask_list, post, override):
    if l == net.depth:
        mask_list[l] = np.ones_like(pre[l])
    elif override is not None:
        mask_list[l] = np.asarray(override[l], dtype=float)
    else:
        mask_list[l] = activation_masks(net.nonlinearity[l - 1], net.pool_sizes[l - 1], pre[l])
    post[l] = mask_list[l] * pre[l]


def backward(net, trace, output_grad):
    """Gradient of ``sum(output_grad * z[L])`` w.r.t. the flat parameters.

    Masks are held fixed, so this is the exact gradient wherever no
    pre-activation sits on a kink.  Tied entries sum their contributions.
    """
    g = np.asarray(output_grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    L = net.depth
    W = net.weights()
    delta = [None] * (L + 1)
    delta[L] = g
    grad = np.zeros(net.params.size)
    incoming = {l: [] for l in range(1, L + 1)}
    for i, (t, s) in enumerate(net.edges):
        incoming[t].append((i, s))
    for l in range(L, 0, -1):
        d = delta[l]
        if d is None:
            continue
        for i, s in incoming[l]:
            dW = d.T @ trace.activation(s)
            tie = net.ties[i]
            live = tie >= 0
            grad += np.bincount(tie[live], weights=dW[live], minlength=grad.size)
            if s > 0:
                back = (d @ W[i]) * trace.masks[s]
                delta[s] = back if delta[s] is None else delta[s] + back
    return grad


@dataclass(frozen=True)
class PathView:
    """Explicit path decomposition of a network.

    ``wbar[k, j]`` is the product of weights along path ``j`` into output
    ``k``; ``input_index[j]`` is the input coordinate that feeds it and
    ``units[j]`` the hidden units it passes through (global unit ids,
    ``-1`` where the path skips a layer).  With an input attached,
    ``sigma[j]`` is the 0/1 activity of the path and ``z = x[input_index] * sigma``.
    """

    wbar: np.ndarray
    input_index: np.ndarray
    units: np.ndarray
    sigma: np.ndarray = None
    z: np.ndarray = None

    @property
    def path_count(self):
        return self.wbar.shape[1]

    def outputs(self):
        return self.wbar @ self.z


def path_count(net):
    counts = [1] + [0] * net.depth
    for t, s in net.edges:
        counts[t] += net.widths[s] * counts[s]
    return counts[-1]


def _path_structure(net, cap):
    d_z = path_count(net)
    if d_z > cap:
        raise ValueError(f"network has {d_z} paths, above the cap of {cap}")
    L = net.depth
    H = max(L - 1, 0)
    offsets = np.concatenate([[0], np.cumsum(net.widths[1:L])]).astype(np.intp)  # hidden layer l -> offsets[l-1]
    W = net.weights()
    # per layer: wbar (n_l, P_l); shared path metadata input_index (P_l,), units (P_l, H)
    wbar = {0: None}
    meta = {}
    for l in range(1, L + 1):
        w_blocks, x_blocks, u_blocks = [], [], []
        for i, (t, s) in enumerate(net.edges):
            if t != l:
                continue
            n_s = net.widths[s]
            if s == 0:
                w_blocks.append(W[i])
                x_blocks.append(np.arange(n_s, dtype=np.intp))
                u_blocks.append(np.full((n_s, H), -1, dtype=np.intp))
            else:
                prev_w = wbar[s]
                prev_x, prev_u = meta[s]
                P = prev_x.size
                w_blocks.append((W[i][:, :, None] * prev_w[None, :, :]).reshape(net.widths[l], n_s * P))
                x_blocks.append(np.tile(prev_x, n_s))
                u = np.repeat(prev_u[None, :, :], n_s, axis=0)
                u[:, :, s - 1] = (offsets[s - 1] + np.arange(n_s))[:, None]
                u_blocks.append(u.reshape(n_s * P, H))
        wbar[l] = np.concatenate(w_blocks, axis=1)
        meta[l] = (np.concatenate(x_blocks), np.concatenate(u_blocks, axis=0))
    input_index, units = meta[L]
    return wbar[L], input_index, units


def path_sigma(net, units, X, mask_net=None):
    """0/1 path activity for each row of ``X`` (shape ``(batch, d_z)``)."""
    source = net if mask_net is None else mask_net
    trace = forward(source, np.atleast_2d(X))
    L = net.depth
    if L == 1:
        return np.ones((trace.pre[0].shape[0], units.shape[0]))
    hidden = np.concatenate([trace.masks[l] for l in range(1, L)] + [np.ones((trace.pre[0].shape[0], 1))], axis=1)
    sigma = np.ones((hidden.shape[0], units.shape[0]))
    for h in range(units.shape[1]):
        sigma *= hidden[:, units[:, h]]  # -1 picks the trailing ones column
    return sigma


def materialize_paths(net, x=None, cap=PATH_CAP, mask_net=None):
    """Enumerate all input-to-output paths (tiny nets only).

    With ``x`` given, activity ``sigma`` and features ``z`` are attached;
    ``mask_net`` (same architecture) supplies the activation pattern
    instead of ``net`` itself.
    """
    wbar, input_index, units = _path_structure(net, cap)
    if x is None:
        return PathView(wbar=wbar, input_index=input_index, units=units)
    x = np.asarray(x, dtype=float)
    if x.shape != (net.d_in,):
        raise ValueError(f"input has shape {x.shape}, network expects ({net.d_in},)")
    sigma = path_sigma(net, units, x[None, :], mask_net)[0]
    return PathView(wbar=wbar, input_index=input_index, units=units, sigma=sigma, z=x[input_index] * sigma)


def path_features(net, X, cap=PATH_CAP, mask_net=None):
    """Rows ``z_i = xbar_i * sigmabar(x_i)`` for a batch, plus the path weights."""
    wbar, input_index, units = _path_structure(net, cap)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sigma = path_sigma(net, units, X, mask_net)
    return X[:, input_index] * sigma, wbar


def path_norm_squared(net, k=None):
    """``||wbar_k||_2^2`` from one linear pass with squared weights on an all-ones input."""
    W = net.weights()
    z = [np.ones(net.d_in)] + [np.zeros(n) for n in net.widths[1:]]
    for i, (t, s) in enumerate(net.edges):
        z[t] += (W[i] * W[i]) @ z[s]
    out = z[-1]
    return out if k is None else float(out[k])


def product_norm_bound(net):
    if not net.is_layered:
        raise ValueError("product bound is defined for layered networks (edges (l, l-1) only)")
    return float(np.prod([np.sum(w * w) for w in net.weights()]))

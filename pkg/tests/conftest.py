import itertools
import os
from pathlib import Path

import numpy as np
import pytest

from genlab.distribution import write_idx_images, write_idx_labels

ROOT = Path(__file__).resolve().parent.parent
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_paths(net, x=None):
    """Enumerate every input-to-output path of a layered-or-DAG net by plain recursion.

    Returns a list over outputs k of lists of (input index, weight product,
    mask product) tuples, in no particular order.  Independent of netdag's
    vectorized enumeration.
    """
    from genlab.netdag import forward

    W = {e: net.weight(i) for i, e in enumerate(net.edges)}
    masks = forward(net, x).masks if x is not None else None
    L = net.depth

    def walk(layer, unit):
        # all partial paths ending at (layer, unit), walked backwards to the input
        if layer == 0:
            return [(unit, 1.0, 1.0)]
        out = []
        for (t, s), w in W.items():
            if t != layer:
                continue
            for j in range(net.widths[s]):
                gate = 1.0 if (masks is None or s == 0) else masks[s][0, j]
                for i, prod, m in walk(s, j):
                    out.append((i, prod * w[unit, j], m * gate))
        return out

    return [walk(L, k) for k in range(net.d_out)]


@pytest.fixture(scope="session")
def digits_idx_dir(tmp_path_factory):
    """The bundled 8x8 digits written as IDX files (stand-in for MNIST)."""
    from sklearn.datasets import load_digits

    out = tmp_path_factory.mktemp("digits")
    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    write_idx_images(out / MNIST_FILES[0], images[:1200])
    write_idx_labels(out / MNIST_FILES[1], labels[:1200])
    write_idx_images(out / MNIST_FILES[2], images[1200:])
    write_idx_labels(out / MNIST_FILES[3], labels[1200:])
    return out


def real_mnist_dir():
    """Directory with the four official MNIST IDX files, if present."""
    for candidate in (os.environ.get("GENLAB_MNIST_DIR"), ROOT / "data" / "mnist"):
        if candidate and all((Path(candidate) / f).exists() for f in MNIST_FILES):
            return Path(candidate)
    return None


def all_subsets(n):
    return itertools.chain.from_iterable(itertools.combinations(range(n), r) for r in range(n + 1))

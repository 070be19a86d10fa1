"""Two-phase training on the small digits set: how much accuracy survives frozen masks.

Phase one trains a 64-64 ReLU net on the first alpha fraction of the data.
Phase two freezes its activation pattern and retrains the weights on all of
the data.  With masks frozen, the remaining samples only enter through the
weights, which is what the two-phase generalization bound exploits.

    python3 demos/make_digits_idx.py       # once, writes data/digits
    python3 demos/two_phase_digits.py
"""

from pathlib import Path

from genlab.distribution import load_idx, with_bias_coordinate
from genlab.netdag import DagNetwork
from genlab.train import TrainConfig, accuracy, sgd_train, two_phase_train

data = Path(__file__).resolve().parent.parent / "data" / "digits"
train = with_bias_coordinate(load_idx(data / "train-images-idx3-ubyte", data / "train-labels-idx1-ubyte"))
test = with_bias_coordinate(load_idx(data / "t10k-images-idx3-ubyte", data / "t10k-labels-idx1-ubyte"))

net = DagNetwork.build((train.x.shape[1], 64, 64, 10), seed=0)
cfg = TrainConfig(epochs=30)
base = accuracy(sgd_train(net, train, cfg).net.outputs(test.x), test.y)
print(f"standard training: test accuracy {base:.4f}")

for alpha in (0.05, 0.1, 0.25, 0.5, 1.0):
    result = two_phase_train(net, train, alpha, cfg)
    acc = accuracy(result.model.outputs(test.x), test.y)
    print(f"alpha={alpha:<5} prefix {result.prefix_size:>4} samples: accuracy {acc:.4f}, ratio {acc / base:.4f}")

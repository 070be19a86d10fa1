"""Write scikit-learn's bundled 8x8 handwritten digits as IDX files.

The MNIST-subset configs expect IDX image/label files.  When the real MNIST
files are not available, this small bundled digits set (1797 images) stands
in for them: the first 1200 images become the training file, the rest the
test file.  Pixel intensities 0..16 are rescaled to 0..255.

    python3 demos/make_digits_idx.py [out_dir]     (default: data/digits)
"""

from pathlib import Path
import sys

import numpy as np
from sklearn.datasets import load_digits

from genlab.distribution import write_idx_images, write_idx_labels

N_TRAIN = 1200


def write_digits_idx(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    write_idx_images(out / "train-images-idx3-ubyte", images[:N_TRAIN])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:N_TRAIN])
    write_idx_images(out / "t10k-images-idx3-ubyte", images[N_TRAIN:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[N_TRAIN:])
    return out


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "digits"
    print(f"wrote {write_digits_idx(target)}")

"""Fit random labels exactly with an over-parameterized linear model, then blow up its norm.

Part 1: 40 Gaussian feature vectors in 200 dimensions, labels drawn
uniformly at random.  The minimum-norm solution hits every label, so train
error is zero while the labels carry no signal at all.

Part 2: a realizable instance whose stacked train/test features leave a null
direction.  Pushing the weights along that direction leaves every prediction
in place while the weight norm grows without bound.

    python3 demos/random_label_memorization.py
"""

import numpy as np

from genlab.distribution import one_hot
from genlab.linmem import LinearInstance, certify, inflation_table, memorize, random_instance

rng = np.random.default_rng(0)

m, n, classes = 40, 200, 10
phi = rng.normal(size=(m, n))
y = one_hot(rng.integers(0, classes, size=m), classes)
w = memorize(LinearInstance(phi, phi[:1], y))
print(f"random labels: train accuracy {np.mean(np.argmax(phi @ w, axis=1) == np.argmax(y, axis=1)):.0%}, "
      f"residual {np.linalg.norm(phi @ w - y):.1e}")

inst = random_instance(rng, m=3, n=7, m_test=2, d_y=2, null_dim=1)
print("\nalpha      |w|          train dev    test dev")
for row in inflation_table(inst, epsilon=0.1, alphas=[0, 1, 1e2, 1e4, 1e6]):
    print(f"{row['alpha']:<10.0e} {row['w_norm']:<12.4e} {row['train_deviation']:<12.3e} {row['test_deviation']:.3e}")

cert = certify(inst, epsilon=0.1, delta_norm=1e6)
print("\ncertificate checks:")
for name, ok in cert.checks.items():
    print(f"  {name:<26} {'ok' if ok else 'FAILED'}")

"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line (visible even
under output capture) and then asserts.  Criteria 7 and 8 use real MNIST
when the four IDX files are available (``GENLAB_MNIST_DIR`` or
``data/mnist``) and the bundled 8x8 digits written as IDX otherwise.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from genlab import bounds, cli
from genlab.audit import matrix_bernstein_coverage, margin_coverage, two_phase_coverage, validation_coverage
from genlab.linmem import certify, inflate, random_instance
from genlab.netdag import DagNetwork, backward, forward, materialize_paths, path_features, path_norm_squared
from tests.conftest import MNIST_FILES, ROOT, real_mnist_dir


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if passed else 'FAIL'} {detail}")
        assert passed, detail
    return emit


@pytest.fixture(scope="module")
def image_data(digits_idx_dir):
    """``(directory, config template)`` for the image experiments."""
    mnist = real_mnist_dir()
    if mnist is not None:
        return mnist, "mnist"
    return digits_idx_dir, "digits"


def image_config(tmp_path, data_dir, flavor, kind, **overrides):
    doc = json.loads((ROOT / "configs" / f"{flavor}_{kind}.json").read_text())
    doc["dataset"].update({
        "train_images": str(data_dir / MNIST_FILES[0]), "train_labels": str(data_dir / MNIST_FILES[1]),
        "test_images": str(data_dir / MNIST_FILES[2]), "test_labels": str(data_dir / MNIST_FILES[3]),
    })
    doc.update(overrides)
    path = tmp_path / f"{kind}.json"
    path.write_text(json.dumps(doc))
    return path


def test_criterion_1_gap_decomposition_exact(report):
    start = time.perf_counter()
    rng = np.random.default_rng(20240)
    worst, n, labels = 0.0, 0, 0
    for i in range(120):
        net, S, P, _ = cli.audit_instance(rng, random_labels=i % 2 == 1)
        d = bounds.gap_decomposition(net, S, P)
        assert d.reconstructed_gap <= d.upper_bound + 1e-10 * (1 + abs(d.upper_bound))
        worst = max(worst, d.residual / (1 + abs(d.exact_gap)))
        n += 1
        labels += i % 2
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-8 and elapsed <= 60,
           f"{n} instances ({labels} random-label), max residual/(1+|gap|) {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_validation_worked_numbers(report):
    start = time.perf_counter()
    terms = [bounds.validation_bound(10000, 0.1, 1.0, g, 1e9, 0.0).terms["additive"] for g in (1.0, 0.05**2)]
    elapsed = time.perf_counter() - start
    ok = abs(terms[0] - 0.0694) <= 5e-5 and abs(terms[1] - 0.0049) <= 5e-5 and elapsed < 1
    report(2, ok, f"additive terms {100 * terms[0]:.4f}% and {100 * terms[1]:.4f}% in {elapsed * 1e3:.1f}ms")


def test_criterion_3_fast_path_norm(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, largest = 0.0, 0
    shapes = [(4, 32, 32, 3)] + [
        tuple([int(rng.integers(1, 5))] + [int(rng.integers(1, 17)) for _ in range(int(rng.integers(1, 3)))] + [int(rng.integers(1, 4))])
        for _ in range(59)
    ]
    for i, widths in enumerate(shapes):
        net = DagNetwork.build(widths, seed=i)
        net = net.with_params(net.params * float(rng.choice([0.1, 1.0, 10.0])))
        wbar = materialize_paths(net).wbar
        enum = np.sum(wbar**2, axis=1)
        fast = path_norm_squared(net)
        worst = max(worst, float(np.max(np.abs(fast - enum) / np.maximum(np.abs(enum), 1e-300))))
        largest = max(largest, wbar.shape[1])
    elapsed = time.perf_counter() - start
    report(3, worst <= 1e-10 and largest == 4096 and elapsed <= 30,
           f"{len(shapes)} nets, largest d_z {largest}, max relative error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_4_forward_equals_path_sum(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, pairs, dead = 0.0, 0, 0
    for i in range(50):
        kind = "maxpool" if i % 5 == 0 else "relu"
        widths = (3, 4, 6, 2) if kind == "maxpool" else (3, int(rng.integers(1, 7)), int(rng.integers(1, 7)), 2)
        edges = [(1, 0), (2, 1), (3, 2)] + ([(3, 1)] if i % 3 == 0 else [])
        net = DagNetwork.build(widths, edges=edges, nonlinearity=kind, pool_sizes=2 if kind == "maxpool" else None, seed=i)
        X = np.vstack([rng.normal(size=(3, 3)), np.zeros((1, 3))])  # x = 0 kills every path
        Z, wbar = path_features(net, X)
        out = forward(net, X)
        worst = max(worst, float(np.max(np.abs(Z @ wbar.T - out.output))))
        dead += sum(int(np.any(m == 0)) for m in out.masks[1])
        pairs += X.shape[0]
    elapsed = time.perf_counter() - start
    report(4, worst <= 1e-8 and pairs >= 200 and elapsed <= 30,
           f"{pairs} (net, x) pairs, {dead} with dead units, max |f(x) - z.wbar| {worst:.2e}, {elapsed:.1f}s")


def test_criterion_5_monte_carlo_coverage(report):
    start = time.perf_counter()
    results = [validation_coverage(), two_phase_coverage(), margin_coverage(), matrix_bernstein_coverage()]
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in results) and min(r.trials for r in results) >= 500 and elapsed <= 600
    report(5, ok, "; ".join(r.line() for r in results) + f"; {elapsed:.1f}s")


def test_criterion_6_memorization_certificate(report):
    start = time.perf_counter()
    inst = random_instance(np.random.default_rng(6), 3, 7, 2, 2)
    eps = 0.1
    cert = certify(inst, eps, 1e6)
    inf = inflate(inst, eps, 1e6)
    moved = max(np.linalg.norm(inst.phi @ inf.w - inst.y), np.linalg.norm(inst.phi_test @ inf.w - inst.y_test))
    elapsed = time.perf_counter() - start
    ok = (cert.passed and cert.memorization_residual <= 1e-8 and moved <= eps + 1e-8
          and cert.invariance_error <= 1e-8 and elapsed < 5)
    report(6, ok, f"memorization residual {cert.memorization_residual:.1e}, |w| {cert.w_norm:.3e}, "
                  f"prediction change {moved:.3f} <= {eps}, invariance error {cert.invariance_error:.1e}, {elapsed:.2f}s")


def test_criterion_7_two_phase_trend(report, image_data, tmp_path):
    data_dir, flavor = image_data
    start = time.perf_counter()
    trained = image_config(tmp_path, data_dir, flavor, "two_phase", alphas=[0.5, 1.0])
    assert cli.main(["two-phase-sweep", "--config", str(trained), "--out", str(tmp_path / "frz")]) == 0
    frozen = image_config(tmp_path, data_dir, flavor, "two_phase", alphas=[1.0], freeze_train={"epochs": 0})
    assert cli.main(["two-phase-sweep", "--config", str(frozen), "--out", str(tmp_path / "nofrz")]) == 0
    half, full = (s["ratio_mean"] for s in json.loads((tmp_path / "frz" / "two_phase_sweep.json").read_text())["summary"])
    exact = json.loads((tmp_path / "nofrz" / "two_phase_sweep.json").read_text())["summary"][0]["ratio_mean"]
    elapsed = time.perf_counter() - start
    ok = half >= 0.9 and full >= 0.97 and exact == 1.0 and elapsed <= 600
    report(7, ok, f"{flavor}: ratio {half:.4f} at alpha=0.5, {full:.4f} at alpha=1.0, "
                  f"{exact} at alpha=1.0 with no freeze epochs, {elapsed:.0f}s")


def test_criterion_8_darc1_effect(report, image_data, tmp_path):
    data_dir, flavor = image_data
    start = time.perf_counter()
    config = image_config(tmp_path, data_dir, flavor, "darc1", seeds=10, workers=os.cpu_count() or 1)
    assert cli.main(["darc1-compare", "--config", str(config), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "darc1_compare.json").read_text())["summary"]
    reg, err = summary["reg_value_ratio"], summary["test_error_ratio"]
    elapsed = time.perf_counter() - start
    ok = summary["runs"] == 10 and reg["mean"] <= 0.5 and set(err) == {"mean", "stdv"} and elapsed <= 1800
    report(8, ok, f"{flavor}, {summary['runs']} seeds: reg-value ratio {reg['mean']:.3f} (stdv {reg['stdv']:.3f}), "
                  f"test-error ratio {err['mean']:.3f} (stdv {err['stdv']:.3f}), {elapsed:.0f}s")


SMALL_CONFIGS = {
    "two-phase-sweep": {"dataset": {"kind": "blobs", "n_classes": 3}, "architecture": {"hidden": [8]},
                        "train": {"epochs": 5}, "alphas": [0.25, 1.0], "seeds": 2},
    "darc1-compare": {"dataset": {"kind": "blobs", "n_classes": 3}, "architecture": {"hidden": [8]},
                      "train": {"epochs": 5}, "seeds": 2},
    "gap-audit": {"n_instances": 10},
    "bound-report": {"m": 100, "m_val": 100, "train": {"epochs": 5}},
    "memorize-demo": {"instance": {"kind": "random"}},
}


def test_criterion_9_determinism(report, tmp_path):
    mismatched = []
    for command, doc in SMALL_CONFIGS.items():
        config = tmp_path / f"{command}.json"
        config.write_text(json.dumps({"experiment": command, **doc}))
        outputs = []
        for label, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            env = {**os.environ, "OPENBLAS_NUM_THREADS": threads, "OMP_NUM_THREADS": threads, "MKL_NUM_THREADS": threads}
            out = tmp_path / command / label
            subprocess.run([sys.executable, "-m", "genlab", command, "--config", str(config), "--seed", "7",
                            "--out", str(out)], check=True, env=env)
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not (outputs[0] == outputs[1] == outputs[2]):
            mismatched.append(command)
    report(9, not mismatched, f"{len(SMALL_CONFIGS)} experiments rerun twice and under 4 BLAS threads; "
                              f"mismatches: {mismatched or 'none'}")


def test_criterion_10_gradient_integrity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    worst, nets = 0.0, 0
    while nets < 60:
        widths = [int(rng.integers(1, 5))] + [int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 3)))] + [int(rng.integers(1, 4))]
        net = DagNetwork.build(widths, seed=int(rng.integers(2**31)))
        x = rng.normal(size=(2, widths[0]))
        trace = forward(net, x)
        if any(np.min(np.abs(p)) <= 1e-3 for p in trace.pre[1:-1]):
            continue  # too close to a ReLU kink for central differences
        upstream = rng.normal(size=trace.output.shape)
        g = backward(net, trace, upstream)
        h = 1e-6
        fd = np.empty_like(g)
        for j in range(net.params.size):
            e = np.zeros_like(net.params)
            e[j] = h
            plus = np.sum(upstream * forward(net.with_params(net.params + e), x).output)
            minus = np.sum(upstream * forward(net.with_params(net.params - e), x).output)
            fd[j] = (plus - minus) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2))))
        nets += 1
    elapsed = time.perf_counter() - start
    report(10, worst <= 1e-4 and elapsed <= 30, f"{nets} nets at kink-free points, max relative error {worst:.2e}, {elapsed:.1f}s")

"""Acceptance gate: one test per criterion, one pass/fail line each.

Training-based criteria use the built-in presets. The image-data
criterion needs the four standard IDX files in $COPSEL_MNIST_DIR and is
skipped otherwise; it and the full 1000-epoch run are marked slow.
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from copsel import networks as N
from copsel import tensor as T
from copsel.cli import PRESETS, resolve_datasets
from copsel.copula import CorrelationModel, sample_correlated_uniform
from copsel.evaluation import (copula_marginal_check, verify_theorem1,
                               verify_theorem2)
from copsel.idx import parse_idx
from copsel.samplers import SamplerParams, binary_mask, topk_relaxed
from copsel.synthetic import SyntheticSpec, generate
from copsel.tensor import Tensor

from gradcheck import finite_difference, relative_error


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"{criterion}: {detail}"


def run_preset(name: str, **training_overrides) -> dict:
    config = json.loads(json.dumps(PRESETS[name]))
    config["training"].update(training_overrides)
    train_ds, test_ds = resolve_datasets(config)
    tc = N.TrainingConfig(**config["training"])
    model = N.train(tc, train_ds)
    return N.evaluate(model, test_ds)


# -- criterion 1: Syn1 selection quality ----------------------------------

@pytest.mark.slow
def test_criterion1_syn1_full():
    m = run_preset("syn1-11d")
    ok = m["tpr"] >= 95.0 and m["fdr"] <= 5.0
    report("criterion 1 (Syn1 11-d, full budget)", ok,
           f"TPR {m['tpr']:.1f} (>= 95), FDR {m['fdr']:.1f} (<= 5)")


def test_criterion1_syn1_abbreviated():
    m = run_preset("syn1-11d", epochs=200)
    ok = m["tpr"] >= 90.0 and m["fdr"] <= 10.0
    report("criterion 1 (Syn1 11-d, 200-epoch variant)", ok,
           f"TPR {m['tpr']:.1f} (>= 90), FDR {m['fdr']:.1f} (<= 10)")


# -- criterion 2: Syn3 selection quality ----------------------------------

def test_criterion2_syn3():
    m = run_preset("syn3-11d")
    ok = m["tpr"] >= 90.0 and m["fdr"] <= 10.0
    report("criterion 2 (Syn3 11-d)", ok,
           f"TPR {m['tpr']:.1f} (>= 90), FDR {m['fdr']:.1f} (<= 10)")


# -- criterion 3: correlated 100-d Syn1, full vs independent noise ---------

@pytest.mark.slow
def test_criterion3_correlated_100d():
    full = run_preset("syn1-100d-corr")
    nola = run_preset("syn1-100d-corr", nola=True)
    quality = full["tpr"] >= 95.0 and full["fdr"] <= 10.0
    worse = nola["tpr"] < full["tpr"] or nola["fdr"] > full["fdr"]
    report("criterion 3 (Syn1 100-d correlated)", quality and worse,
           f"full TPR {full['tpr']:.1f} (>= 95) FDR {full['fdr']:.1f} "
           f"(<= 10); ablation TPR {nola['tpr']:.1f} FDR {nola['fdr']:.1f} "
           f"(strictly worse: {worse})")


# -- criteria 4-6: Monte-Carlo limit and copula checks ---------------------

def test_criterion4_wrs_limit():
    rep = verify_theorem1(np.array([1.0, 2.0, 3.0, 4.0]), k=2, t=0.01,
                          n_draws=100_000, rng=np.random.default_rng(0))
    report("criterion 4 (WRS limit)", rep.tv_distance <= 0.02,
           f"TV {rep.tv_distance:.4f} (<= 0.02) over 1e5 draws")


def test_criterion5_deterministic_limit():
    rep = verify_theorem2(np.array([1.0, 2.0, 3.0, 4.0]), k=2, t=0.01,
                          tau=1e4, n_draws=10_000,
                          rng=np.random.default_rng(0))
    report("criterion 5 (deterministic top-k limit)", rep.match_rate >= 0.999,
           f"match rate {rep.match_rate:.4f} (>= 0.999) over 1e4 draws")


def test_criterion6_copula_statistics():
    rho = 0.8
    L = np.zeros((5, 2))
    L[0, 0] = L[1, 0] = np.sqrt(rho)
    model = CorrelationModel(L=Tensor(L), sigma=Tensor(np.sqrt(1 - rho)),
                             mode="binary")
    out = copula_marginal_check(model, n_draws=100_000,
                                rng=np.random.default_rng(0))
    p_min = min(out["ks_pvalues"])
    emp = float(out["empirical_correlation"][0, 1])
    ok = p_min >= 0.01 and abs(emp - rho) <= 0.02
    report("criterion 6 (copula statistics)", ok,
           f"min KS p {p_min:.3f} (>= 0.01), empirical R12 {emp:.4f} "
           f"(0.8 +/- 0.02)")


# -- criterion 7: finite-difference gradient suite -------------------------

def _fd_check(fn, params, step=1e-5, tol=1e-4):
    """Backward vs central differences for scalar fn of Tensor params."""
    loss = fn()
    T.zero_grads(params)
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.array(p.grad) if p.grad is not None else \
            np.zeros_like(p.data)

        def scalar(values, p=p):
            p.data[...] = values
            with T.no_grad():
                return fn().item()

        fd = finite_difference(scalar, p.data.copy(), step=step)
        worst = max(worst, relative_error(analytic, fd))
    return worst


def test_criterion7_gradient_suite():
    rng = np.random.default_rng(0)
    worst = 0.0

    # (a) tensor-core ops
    x = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3)) * 0.5, requires_grad=True)
    a_raw = rng.standard_normal((3, 3))
    spd = Tensor(a_raw @ a_raw.T + 3.0 * np.eye(3), requires_grad=True)
    op_cases = [
        (lambda: T.sum_(T.matmul(x, w)), [x, w]),
        (lambda: T.sum_(T.sigmoid(x)), [x]),
        (lambda: T.sum_(T.tanh(x)), [x]),
        (lambda: T.sum_(T.relu(T.add(x, 0.1))), [x]),
        (lambda: T.sum_(T.selu(x)), [x]),
        (lambda: T.sum_(T.softplus(x)), [x]),
        (lambda: T.sum_(T.exp(T.mul(x, 0.3))), [x]),
        (lambda: T.sum_(T.log(T.add(T.absolute(x), 1.0))), [x]),
        (lambda: T.sum_(T.sqrt(T.add(T.mul(x, x), 0.5))), [x]),
        (lambda: T.sum_(T.mul(T.softmax(x, axis=-1),
                              T.softmax(x, axis=-1))), [x]),
        (lambda: T.sum_(T.normal_cdf(x)), [x]),
        (lambda: T.sum_(T.div(x, T.add(T.mul(x, x), 1.0))), [x]),
        (lambda: T.sum_(T.cholesky(spd)), [spd]),
        (lambda: T.sum_(T.log_one_minus(T.mul(T.sigmoid(x), 0.9))), [x]),
        (lambda: T.mean_(T.clamp(x, -0.4, 0.4)), [x]),
    ]
    for fn, params in op_cases:
        worst = max(worst, _fd_check(fn, params))

    # (b) copula path (L, sigma) -> u at fixed zeta
    L = Tensor(rng.standard_normal((4, 2)) * 0.4, requires_grad=True)
    sigma = Tensor(np.array(0.8), requires_grad=True)
    zeta = rng.standard_normal((6, 4))

    def copula_loss():
        model = CorrelationModel(L=L, sigma=sigma, mode="binary")
        draw = sample_correlated_uniform(model, np.random.default_rng(0),
                                         zeta=zeta)
        return T.sum_(T.mul(draw.u, draw.u))

    worst = max(worst, _fd_check(copula_loss, [L, sigma]))

    # (c) the full loss pipeline at fixed noise, both modes
    d, n = 4, 6
    xb = rng.standard_normal((n, d))
    yb = rng.integers(0, 2, size=n)
    zeta_b = rng.standard_normal((n, d))
    for mode in ("binary", "topk"):
        choice = N.ChoiceNet(d, h_c=5, rank=2, mode=mode,
                             rng=np.random.default_rng(1))
        predict = N.PredictNet(d, h_p=4, n_classes=2,
                               rng=np.random.default_rng(2))
        params = choice.parameters() + predict.parameters()
        sp = SamplerParams(t=1.0, k=2, lam=0.3)

        def pipeline_loss(mode=mode, choice=choice, predict=predict, sp=sp):
            alpha, corr = choice.forward(Tensor(xb), tau=1.0)
            noise = sample_correlated_uniform(corr, np.random.default_rng(0),
                                              zeta=zeta_b)
            if mode == "binary":
                mask = binary_mask(alpha, noise, sp)
                pred = predict.forward(T.mul(Tensor(xb), mask.soft), True)
                return N.loss_binary(pred, yb, mask.soft, sp.lam)
            mask = topk_relaxed(alpha, noise, sp)
            pred = predict.forward(T.mul(Tensor(xb), mask.soft), True)
            return N.loss_topk(pred, yb)

        worst = max(worst, _fd_check(pipeline_loss, params))

    report("criterion 7 (gradient suite)", worst <= 1e-4,
           f"worst relative error {worst:.2e} (<= 1e-4)")


# -- criterion 8: structural invariants -------------------------------------

def test_criterion8_invariants():
    rng = np.random.default_rng(0)
    n, d, k = 1000, 8, 3
    alpha = Tensor(rng.uniform(0.2, 4.0, size=(n, d)))
    u = Tensor(np.clip(rng.uniform(size=(n, d)), 1e-12, 1 - 1e-12))
    from copsel.copula import NoiseDraw
    noise = NoiseDraw(zeta=None, q=u, u=u)

    with T.no_grad():
        # soft mass conservation
        mask = topk_relaxed(alpha, noise, SamplerParams(t=0.5, k=k))
        mass_err = float(np.abs(mask.soft.data.sum(axis=1) - k).max())

        # hard invariance under alpha rescaling at small temperature
        params = SamplerParams(t=0.01, k=k)
        base = topk_relaxed(alpha, noise, params).hard
        mismatches = 0
        for c in (0.5, 2.0, 3.7):
            scaled = topk_relaxed(T.mul(alpha, c), noise, params).hard
            mismatches += int((scaled != base).any(axis=1).sum())

    # seeded 1-epoch bit-reproducibility
    train_ds, _ = generate(SyntheticSpec("syn1", n_train=2000, n_test=10,
                                         seed=0))
    cfg = N.TrainingConfig(mode="binary", lam=0.1, epochs=1,
                           batch_size=1000, seed=0)
    a = N.train(cfg, train_ds)
    b = N.train(cfg, train_ds)
    identical = all(np.array_equal(pa.data, pb.data) for pa, pb in
                    zip(a.choice.parameters() + a.predict.parameters(),
                        b.choice.parameters() + b.predict.parameters()))

    ok = mass_err <= 1e-6 and mismatches == 0 and identical
    report("criterion 8 (structural invariants)", ok,
           f"max |sum z - k| {mass_err:.2e} (<= 1e-6), rescaling "
           f"mismatches {mismatches}/3000 (= 0), 1-epoch bit-identical "
           f"{identical}")


# -- criterion 9: image data (slow, optional) -------------------------------

def _mnist_paths():
    root = os.environ.get("COPSEL_MNIST_DIR")
    if not root:
        return None
    root = Path(root)
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    paths = []
    for name in names:
        for candidate in (root / name, root / (name + ".gz")):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            return None
    return paths


@pytest.mark.slow
def test_criterion9_mnist_topk():
    paths = _mnist_paths()
    if paths is None:
        pytest.skip("set COPSEL_MNIST_DIR to a directory with the four "
                    "standard IDX files")
    train_ds = parse_idx(paths[0], paths[1])
    test_ds = parse_idx(paths[2], paths[3])
    base = PRESETS["mnist-topk"]["training"]

    def run(k, nola=False):
        tc = N.TrainingConfig(**{**base, "k": k, "nola": nola})
        model = N.train(tc, train_ds)
        return N.evaluate(model, test_ds)["accuracy"]

    acc40 = run(40)
    pairs = {k: (run(k), run(k, nola=True)) for k in (10, 20)}
    ablation_ok = all(full > ab for full, ab in pairs.values())
    ok = acc40 >= 88.0 and ablation_ok
    report("criterion 9 (image top-k)", ok,
           f"k=40 accuracy {acc40:.2f} (>= 88); full vs independent-noise "
           + ", ".join(f"k={k}: {f:.2f} vs {a:.2f}"
                       for k, (f, a) in pairs.items()))

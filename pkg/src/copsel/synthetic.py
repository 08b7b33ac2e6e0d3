"""Synthetic benchmark generators (Syn1-Syn6).

Features are multivariate Gaussian: identity covariance in independent
mode, AR(1)-style covariance cov[i, j] = 0.5^|i-j| in correlated mode.
Labels are Bernoulli with P(y=1|x) = 1 / (1 + exp(gamma(x))) by default
(the literal convention; a flag flips the sign). Each sample carries its
ground-truth relevant-feature set (1-based indices).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("syn1", "syn2", "syn3", "syn4", "syn5", "syn6")


@dataclass
class SyntheticSpec:
    family: str
    d: int = 11
    correlated: bool = False
    n_train: int = 10_000
    n_test: int = 10_000
    seed: int = 0
    flip_label_sign: bool = False

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        self.family = fam
        if self.d < 11:
            raise ValueError("families reference x_11; need d >= 11")


@dataclass
class Dataset:
    """In-memory dataset: features, labels and optional truth sets."""

    x: np.ndarray
    y: np.ndarray
    relevant: list | None = None
    n_classes: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


def ar1_covariance(d: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_features(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, spec.d))
    if not spec.correlated:
        return z
    chol = np.linalg.cholesky(ar1_covariance(spec.d))
    return z @ chol.T


def gamma(family: str, x: np.ndarray) -> np.ndarray:
    """Logit-scale signal for one family; x is (n, d) with d >= 11."""
    x = np.atleast_2d(x)
    x1, x2 = x[:, 0], x[:, 1]
    quad = (x[:, 2] ** 2 + x[:, 3] ** 2 + x[:, 4] ** 2 + x[:, 5] ** 2) - 4.0
    nonlin = (-10.0 * np.sin(2.0 * x[:, 6]) + 2.0 * np.abs(x[:, 7])
              + x[:, 8] + np.exp(-x[:, 9]))
    switch = x[:, 10] < 0.0
    family = family.lower()
    if family == "syn1":
        return x1 * x2
    if family == "syn2":
        return x1 ** 2 + x2 ** 2 + x[:, 2] ** 2 - 4.0
    if family == "syn3":
        return nonlin
    if family == "syn4":
        return np.where(switch, x1 * x2, quad)
    if family == "syn5":
        return np.where(switch, x1 * x2, nonlin)
    if family == "syn6":
        return np.where(switch, quad, nonlin)
    raise ValueError(f"unknown family {family!r}")


def label(gamma_value: np.ndarray, rng: np.random.Generator,
          flip_sign: bool = False) -> np.ndarray:
    """Bernoulli labels with P(y=1) = 1/(1+exp(gamma)) (literal sign)."""
    g = np.asarray(gamma_value, dtype=np.float64)
    if flip_sign:
        g = -g
    p1 = 1.0 / (1.0 + np.exp(g))
    return (rng.uniform(size=g.shape) < p1).astype(np.int64)


_STATIC_TRUTH = {
    "syn1": {1, 2},
    "syn2": {1, 2, 3},
    "syn3": {7, 8, 9, 10},
}

_BRANCH_TRUTH = {
    "syn4": ({1, 2, 11}, {3, 4, 5, 6, 11}),
    "syn5": ({1, 2, 11}, {7, 8, 9, 10, 11}),
    "syn6": ({3, 4, 5, 6, 11}, {7, 8, 9, 10, 11}),
}


def ground_truth(family: str, x: np.ndarray) -> list:
    """Per-sample relevant-feature sets (1-based).

    For the branching families the switch feature 11 is counted as
    relevant, since it determines which branch generates the label.
    """
    x = np.atleast_2d(x)
    family = family.lower()
    if family in _STATIC_TRUTH:
        return [set(_STATIC_TRUTH[family]) for _ in range(x.shape[0])]
    neg, pos = _BRANCH_TRUTH[family]
    return [set(neg) if xi < 0.0 else set(pos) for xi in x[:, 10]]


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Generate (train, test) datasets; bit-identical for a given seed."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for n in (spec.n_train, spec.n_test):
        x = gen_features(spec, n, rng)
        g = gamma(spec.family, x)
        y = label(g, rng, flip_sign=spec.flip_label_sign)
        out.append(Dataset(x=x, y=y, relevant=ground_truth(spec.family, x),
                           meta={"family": spec.family, "seed": spec.seed}))
    return out[0], out[1]


# -- file interface -----------------------------------------------------

def save_csv(dataset: Dataset, path) -> None:
    """CSV with columns x_1..x_d, y, relevant (pipe-separated indices)."""
    d = dataset.d
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i + 1}" for i in range(d)] + ["y", "relevant"])
        for i in range(dataset.n):
            rel = ""
            if dataset.relevant is not None:
                rel = "|".join(str(j) for j in sorted(dataset.relevant[i]))
            writer.writerow([repr(float(v)) for v in dataset.x[i]]
                            + [int(dataset.y[i]), rel])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["y", "relevant"]:
            raise ValueError(f"{path}: expected columns x_1..x_d, y, relevant")
        d = len(header) - 2
        xs, ys, rels = [], [], []
        for row in reader:
            xs.append([float(v) for v in row[:d]])
            ys.append(int(row[d]))
            rels.append(set(int(j) for j in row[d + 1].split("|"))
                        if row[d + 1] else set())
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.int64)
    relevant = rels if any(rels) else None
    return Dataset(x=x, y=y, relevant=relevant,
                   n_classes=int(y.max()) + 1 if y.size else 2)


def save_sidecar(spec: SyntheticSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump({"family": spec.family, "d": spec.d,
                   "correlated": spec.correlated, "n_train": spec.n_train,
                   "n_test": spec.n_test, "seed": spec.seed,
                   "flip_label_sign": spec.flip_label_sign}, fh, indent=2)
        fh.write("\n")

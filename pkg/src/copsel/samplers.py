"""Differentiable mask samplers.

Two schemes over correlated uniform noise: a relaxed Bernoulli binary
mask (logistic noise + temperature sigmoid) and a successive-softmax
top-k relaxation of weighted random sampling without replacement (WRS).
Exact small-d WRS oracles for testing live here too.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .copula import NoiseDraw
from .tensor import Tensor


@dataclass
class SamplerParams:
    """Sampler hyperparameters: temperature t, step exponent delta,
    selection count k (top-k) and L1 trade-off lambda (binary)."""

    t: float = 1.0
    delta: float = 0.8
    k: int = 1
    lam: float = 0.0

    def __post_init__(self):
        if self.t <= 0.0:
            raise ValueError("temperature t must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.lam < 0.0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class RelaxedMask:
    """Continuous inclusion vector plus its hard discretization."""

    soft: Tensor
    hard: np.ndarray
    mode: str  # binary | topk
    iterates: list = field(default_factory=list)


def binary_mask(alpha: Tensor, u: NoiseDraw, params: SamplerParams) -> RelaxedMask:
    """Relaxed Bernoulli mask: soft = sigmoid((logit(u) + alpha) / t).

    Hard mask is the half-to-even rounding of soft; gradients flow
    through soft into alpha and, via u, into the copula parameters.
    """
    uu = T.as_tensor(u.u)
    g = T.sub(T.log(uu), T.log(T.sub(1.0, uu)))
    soft = T.sigmoid(T.div(T.add(g, alpha), params.t))
    hard = np.round(soft.data)
    return RelaxedMask(soft=soft, hard=hard, mode="binary")


def marginal_inclusion_probability(alpha):
    """P(z_i = 1) = exp(alpha_i) / (1 + exp(alpha_i))."""
    from scipy.special import expit

    return expit(np.asarray(alpha, dtype=np.float64))


def trunc(soft: np.ndarray, k: int) -> np.ndarray:
    """k-hot mask over the k largest entries; ties go to the lowest index."""
    soft = np.asarray(soft, dtype=np.float64)
    d = soft.shape[-1]
    if k > d:
        raise ValueError(f"k={k} exceeds dimension {d}")
    order = np.argsort(-soft, axis=-1, kind="stable")
    hard = np.zeros_like(soft)
    np.put_along_axis(hard, order[..., :k], 1.0, axis=-1)
    return hard


def topk_relaxed(alpha: Tensor, u: NoiseDraw, params: SamplerParams) -> RelaxedMask:
    """Successive-softmax relaxation of WRS top-k selection.

    Keys v_i = log(u_i) / alpha_i; p^1 = softmax(v / t); each later
    iterate deflates the running winners via
    v^s = v^{s-1} + t^delta * log(1 - p^{s-1}). The soft mask is the sum
    of the k softmax iterates (so it always sums to k); the hard mask
    truncates it to the k largest entries.
    """
    alpha = T.as_tensor(alpha)
    if np.any(alpha.data <= 0.0):
        raise ValueError("top-k sampling requires strictly positive alpha")
    v = T.div(T.log(T.as_tensor(u.u)), alpha)
    step = params.t ** params.delta
    iterates = []
    soft = None
    for _ in range(params.k):
        p = T.softmax(v, temperature=params.t, axis=-1)
        iterates.append(p)
        soft = p if soft is None else T.add(soft, p)
        v = T.add(v, T.mul(T.log_one_minus(p), step))
    hard = trunc(soft.data, params.k)
    return RelaxedMask(soft=soft, hard=hard, mode="topk", iterates=iterates)


def exact_wrs_distribution(alpha, k: int) -> dict:
    """Enumerated distribution of ordered WRS draws (testing oracle).

    P(i_1, ..., i_k) = prod_s alpha_{i_s} / (total - sum of already
    drawn weights). Limited to d <= 8.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    d = alpha.shape[0]
    if d > 8:
        raise ValueError("enumeration oracle limited to d <= 8")
    if np.any(alpha <= 0.0):
        raise ValueError("weights must be positive")
    total = alpha.sum()
    dist = {}
    for tup in itertools.permutations(range(d), k):
        remaining = total
        prob = 1.0
        for i in tup:
            prob *= alpha[i] / remaining
            remaining -= alpha[i]
        dist[tup] = prob
    return dist


def exact_wrs_subset_distribution(alpha, k: int) -> dict:
    """Ordered WRS distribution marginalized to unordered k-subsets."""
    dist = {}
    for tup, prob in exact_wrs_distribution(alpha, k).items():
        key = frozenset(tup)
        dist[key] = dist.get(key, 0.0) + prob
    return dist


def wrs_reference_sampler(alpha, k: int, rng: np.random.Generator,
                          n_draws: int = 1) -> np.ndarray:
    """Classical WRS: keys u_i^(1/alpha_i), take the k largest.

    Returns an (n_draws, k) array of selected indices in key order.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0.0):
        raise ValueError("weights must be positive")
    u = rng.uniform(size=(n_draws, alpha.shape[0]))
    keys = np.log(u) / alpha  # monotone transform of u^(1/alpha)
    return np.argsort(-keys, axis=-1, kind="stable")[:, :k]

"""Selection metrics, accuracy, and Monte-Carlo theorem verifiers.

TPR/FDR are macro-averaged per sample and reported as percentages. The
verifiers draw hard masks through the actual relaxed sampler and compare
against exact enumeration (convergence to WRS at independent noise) or
the deterministic top-k limit (equicorrelated noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import samplers
from .copula import CorrelationModel, sample_correlated_uniform
from .samplers import SamplerParams
from .tensor import Tensor, no_grad


@dataclass
class SelectionMetrics:
    tpr: float
    fdr: float
    n_samples: int
    mean_selected: float

    def as_dict(self) -> dict:
        return {"tpr": self.tpr, "fdr": self.fdr,
                "n_samples": self.n_samples,
                "mean_selected": self.mean_selected}


@dataclass
class TheoremCheckReport:
    tv_distance: float | None
    match_rate: float | None
    n_draws: int
    settings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"tv_distance": self.tv_distance, "match_rate": self.match_rate,
                "n_draws": self.n_draws, "settings": self.settings}


def tpr_fdr(selected, truth) -> SelectionMetrics:
    """Macro-averaged TPR/FDR in percent.

    `selected` is an (n, d) 0/1 mask array; `truth` a list of 1-based
    relevant index sets. An empty selection contributes TPR 0 and FDR 0.
    """
    selected = np.atleast_2d(np.asarray(selected))
    if selected.shape[0] != len(truth):
        raise ValueError("selected and truth must align per sample")
    tprs, fdrs, counts = [], [], []
    for mask, rel in zip(selected, truth):
        chosen = {int(i) + 1 for i in np.flatnonzero(mask)}
        counts.append(len(chosen))
        if not rel:
            raise ValueError("ground truth sets must be nonempty")
        tprs.append(len(chosen & rel) / len(rel))
        fdrs.append(len(chosen - rel) / max(len(chosen), 1))
    return SelectionMetrics(tpr=100.0 * float(np.mean(tprs)),
                            fdr=100.0 * float(np.mean(fdrs)),
                            n_samples=selected.shape[0],
                            mean_selected=float(np.mean(counts)))


def accuracy(pred, y) -> float:
    """Argmax-match percentage; argmax ties go to the lowest class index."""
    pred = np.atleast_2d(np.asarray(pred))
    y = np.asarray(y)
    if pred.shape[0] != y.shape[0]:
        raise ValueError("pred and y must align")
    return 100.0 * float(np.mean(np.argmax(pred, axis=1) == y))


def _draw_hard_masks(alpha, k, t, tau, n_draws, rng, delta=0.8):
    """Hard top-k masks through the relaxed sampler, batched over draws."""
    alpha = np.asarray(alpha, dtype=np.float64)
    d = alpha.shape[0]
    params = SamplerParams(t=t, delta=delta, k=k)
    with no_grad():
        if tau == 0.0:
            L = Tensor(np.zeros((d, 1)))
        else:
            L = Tensor(np.ones((d, 1)))
        model = CorrelationModel(L=L, tau=tau, mode="topk")
        # batch the draws: replicate the (constant) correlation model
        R_draw = sample_correlated_uniform(
            model, rng, zeta=rng.standard_normal((n_draws, d)))
        alpha_b = Tensor(np.broadcast_to(alpha, (n_draws, d)).copy())
        mask = samplers.topk_relaxed(alpha_b, R_draw, params)
    return mask.hard


def verify_theorem1(alpha, k, t, n_draws, rng,
                    delta: float = 0.8) -> TheoremCheckReport:
    """TV distance between relaxed-sampler subsets and exact WRS (R = I)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] > 8:
        raise ValueError("enumeration oracle limited to d <= 8")
    exact = samplers.exact_wrs_subset_distribution(alpha, k)
    hard = _draw_hard_masks(alpha, k, t, tau=0.0, n_draws=n_draws,
                            rng=rng, delta=delta)
    counts: dict = {}
    for row in hard:
        key = frozenset(int(i) for i in np.flatnonzero(row))
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(counts.get(s, 0) / n_draws - p)
                   for s, p in exact.items())
    tv += 0.5 * sum(c / n_draws for s, c in counts.items() if s not in exact)
    return TheoremCheckReport(tv_distance=float(tv), match_rate=None,
                              n_draws=n_draws,
                              settings={"alpha": alpha.tolist(), "k": k,
                                        "t": t, "tau": 0.0})


def verify_theorem2(alpha, k, t, tau, n_draws, rng,
                    delta: float = 0.8) -> TheoremCheckReport:
    """Fraction of draws whose hard mask equals the top-k of alpha
    under the all-ones factor (equicorrelated noise, large tau)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    target = samplers.trunc(alpha, k)
    hard = _draw_hard_masks(alpha, k, t, tau=tau, n_draws=n_draws,
                            rng=rng, delta=delta)
    match = float(np.mean(np.all(hard == target, axis=-1)))
    return TheoremCheckReport(tv_distance=None, match_rate=match,
                              n_draws=n_draws,
                              settings={"alpha": alpha.tolist(), "k": k,
                                        "t": t, "tau": tau})


def copula_marginal_check(model: CorrelationModel, n_draws: int,
                          rng: np.random.Generator) -> dict:
    """KS uniformity per marginal plus empirical latent correlations.

    Returns per-coordinate KS statistics/p-values and the empirical
    Pearson correlation matrix of the latent Gaussians q alongside the
    model's target R.
    """
    from .copula import correlation

    with no_grad():
        d = model.d
        zeta = rng.standard_normal((n_draws, d))
        draw = sample_correlated_uniform(model, rng, zeta=zeta)
        target = correlation(model).data
    u = draw.u.data
    q = draw.q.data
    ks_stats, ks_pvalues = [], []
    for i in range(d):
        res = stats.kstest(u[:, i], "uniform")
        ks_stats.append(float(res.statistic))
        ks_pvalues.append(float(res.pvalue))
    empirical = np.corrcoef(q, rowvar=False)
    return {"ks_statistics": ks_stats, "ks_pvalues": ks_pvalues,
            "empirical_correlation": empirical, "target_correlation": target,
            "n_draws": n_draws}

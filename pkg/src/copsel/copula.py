"""Gaussian-copula correlated uniform noise from a factor parameterization.

A covariance is built as L L^T + sigma^2 I (binary mode) or
I + tau L L^T (top-k mode), rescaled to a correlation matrix R, and
factorized. Independent standard normals are colored by the Cholesky
factor of R and pushed through the standard normal CDF, giving a vector
of uniforms whose latent dependence is exactly R. Gradients flow from
the uniforms back into L and sigma.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

JITTER = 1e-8
U_FLOOR = 1e-12


@dataclass
class CorrelationModel:
    """Factor parameterization of the noise correlation.

    L is d x p (p = d in full-rank mode). Binary mode uses
    Sigma = L L^T + sigma^2 I; top-k mode uses Sigma = I + tau L L^T.
    L and sigma may be Tensors so that gradients reach them.
    """

    L: Tensor
    sigma: Tensor | None = None
    tau: float = 0.0
    rank_mode: str = "low"
    mode: str = "binary"  # binary | topk

    @property
    def d(self) -> int:
        return self.L.shape[-2]


@dataclass
class NoiseDraw:
    """One draw of the copula sampler: zeta -> q -> u."""

    zeta: np.ndarray
    q: Tensor
    u: Tensor


def build_covariance(model: CorrelationModel) -> Tensor:
    """Covariance induced by the factor model (symmetric by construction)."""
    L = T.as_tensor(model.L)
    outer = T.matmul(L, T.transpose_last(L))
    d = outer.shape[-1]
    eye = np.eye(d)
    if model.mode == "topk":
        return T.add(T.mul(outer, model.tau), eye)
    sigma = T.as_tensor(model.sigma)
    sig2 = T.mul(sigma, sigma)
    if sig2.ndim > 0 and sig2.size > 1:
        # one sigma per batch row: broadcast against the (d, d) identity
        sig2 = T.reshape(sig2, sig2.shape + (1, 1))
    return T.add(outer, T.mul(sig2, eye))


def normalize(sigma: Tensor) -> Tensor:
    """Map a covariance to a correlation matrix by diagonal rescaling."""
    sigma = T.as_tensor(sigma)
    diag = T.diagonal_part(sigma)
    if np.any(diag.data <= 0.0):
        raise T.TensorError("normalize requires positive diagonal entries")
    scale = T.sqrt(diag)
    row = T.reshape(scale, scale.shape[:-1] + (scale.shape[-1], 1))
    col = T.reshape(scale, scale.shape[:-1] + (1, scale.shape[-1]))
    return T.div(sigma, T.mul(row, col))


def correlation(model: CorrelationModel) -> Tensor:
    return normalize(build_covariance(model))


def sample_correlated_uniform(model: CorrelationModel,
                              rng: np.random.Generator,
                              zeta: np.ndarray | None = None) -> NoiseDraw:
    """Draw correlated uniforms u = Phi(V zeta) with V = chol(R).

    R has unit diagonal, so each coordinate of q = V zeta is standard
    normal and Phi(q_i) is marginally Uniform(0,1). Pass `zeta` to reuse
    a fixed noise realization (gradient checks, common random numbers).
    """
    R = correlation(model)
    d = R.shape[-1]
    V = T.cholesky(T.add(R, JITTER * np.eye(d)))
    if zeta is None:
        zeta = rng.standard_normal(R.shape[:-1])
    q = T.reshape(T.matmul(V, T.reshape(zeta, zeta.shape + (1,))),
                  zeta.shape)
    u = T.clamp(T.normal_cdf(q), U_FLOOR, 1.0 - U_FLOOR)
    return NoiseDraw(zeta=zeta, q=q, u=u)


def sample_factor_uniform(model: CorrelationModel,
                          rng: np.random.Generator,
                          zeta: np.ndarray | None = None) -> NoiseDraw:
    """Correlated uniforms without forming R: color the noise by the
    factor model directly.

    q_raw = L zeta_p + sigma zeta_d (binary) or
    q_raw = sqrt(tau) L zeta_p + zeta_d (top-k) has covariance Sigma;
    dividing by sqrt(diag Sigma) gives exactly the correlation R with
    standard normal marginals, so u = Phi(q) matches
    `sample_correlated_uniform` in distribution at O(d p) per sample
    instead of the O(d^3) Cholesky. `zeta` has shape (..., p + d).
    """
    L = T.as_tensor(model.L)
    p = L.shape[-1]
    d = model.d
    if zeta is None:
        zeta = rng.standard_normal(L.shape[:-2] + (p + d,))
    zeta_p, zeta_d = zeta[..., :p], zeta[..., p:]
    lead = np.broadcast_shapes(L.shape[:-2], zeta.shape[:-1])
    colored = T.reshape(T.matmul(L, T.reshape(zeta_p, zeta_p.shape + (1,))),
                        lead + (d,))
    row_sq = T.sum_(T.mul(L, L), axis=-1)
    if model.mode == "topk":
        q_raw = T.add(T.mul(colored, np.sqrt(model.tau)), zeta_d)
        variance = T.add(T.mul(row_sq, model.tau), 1.0)
    else:
        sigma = T.as_tensor(model.sigma)
        if sigma.ndim > 0 and sigma.size > 1:
            sigma = T.reshape(sigma, sigma.shape + (1,))
        q_raw = T.add(colored, T.mul(sigma, zeta_d))
        variance = T.add(row_sq, T.mul(sigma, sigma))
    q = T.div(q_raw, T.sqrt(variance))
    u = T.clamp(T.normal_cdf(q), U_FLOOR, 1.0 - U_FLOOR)
    return NoiseDraw(zeta=zeta, q=q, u=u)


def independent_uniform(shape, rng: np.random.Generator) -> NoiseDraw:
    """NOLA variant: iid uniforms with no parameter dependence."""
    zeta = rng.standard_normal(shape)
    q = Tensor(zeta)
    u = T.clamp(T.normal_cdf(q), U_FLOOR, 1.0 - U_FLOOR)
    return NoiseDraw(zeta=zeta, q=q, u=u)


def export_sigma(model: CorrelationModel, sigma_path, r_path=None) -> None:
    """Write Sigma (and optionally R) as full row-major CSV matrices.

    The header row lists feature indices 1..d; feeds external plotting.
    """
    with T.no_grad():
        sigma = build_covariance(model).data
        R = normalize(Tensor(sigma)).data
    _write_matrix(sigma_path, sigma)
    if r_path is not None:
        _write_matrix(r_path, R)


def _write_matrix(path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(mat)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([str(i + 1) for i in range(mat.shape[1])])
        for row in mat:
            writer.writerow([repr(float(v)) for v in row])

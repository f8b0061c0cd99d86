"""Log-likelihoods of the RNA-seq (negative binomial) and GWAS (logistic) sub-models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import GwasDataset, RnaSeqDataset

MAX_LINEAR = 700.0


class OverflowCounter:
    """Counts linear predictors clamped at +/-700 before exponentiation."""

    def __init__(self):
        self.count = 0

    def clamp(self, lin):
        lin = np.asarray(lin, dtype=float)
        over = np.abs(lin) > MAX_LINEAR
        if over.any():
            self.count += int(over.sum())
            lin = np.clip(lin, -MAX_LINEAR, MAX_LINEAR)
        return lin


def nb_log_pmf(y, mu, phi):
    """Negative binomial log pmf with mean ``mu`` and variance ``mu * (1 + mu * phi)``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if (y < 0).any() or (y != np.floor(y)).any():
        raise ValueError("y must be a non-negative integer")
    if not (mu > 0).all() or not (phi > 0).all():
        raise ValueError("mu and phi must be positive")
    out = _nb_kernel(y, np.log(mu), 1.0 / phi, special.gammaln(y + 1.0))
    return out if out.ndim else float(out)


def _nb_kernel(y, log_mu, size, lgamma_y1):
    # log pmf written with log(mu); log(size + mu) via logaddexp avoids overflow
    log_size = np.log(size)
    log_denom = np.logaddexp(log_size, log_mu)
    return (
        special.gammaln(y + size)
        - special.gammaln(size)
        - lgamma_y1
        + size * (log_size - log_denom)
        + y * (log_mu - log_denom)
    )


def rnaseq_mean(alpha_j, log_fc_j, k, L_i, M_j, covariate_dot=0.0, counter: OverflowCounter | None = None):
    lin = alpha_j + log_fc_j * k + L_i + M_j + covariate_dot
    lin = (counter or OverflowCounter()).clamp(lin)
    out = np.exp(lin)
    return out if out.ndim else float(out)


@dataclass
class RnaSeqParams:
    alpha: np.ndarray
    log_fc: np.ndarray
    phi: np.ndarray
    beta_rna: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.log_fc = np.asarray(self.log_fc, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.beta_rna = np.zeros(0) if self.beta_rna is None else np.asarray(self.beta_rna, dtype=float)


@dataclass
class GwasParams:
    """``beta_gwas[0]`` is the intercept; the rest match the covariate columns."""

    gamma: np.ndarray
    beta_gwas: np.ndarray | None = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.beta_gwas = np.zeros(1) if self.beta_gwas is None else np.asarray(self.beta_gwas, dtype=float)


def rnaseq_linear_predictor(dataset: RnaSeqDataset, params: RnaSeqParams, counter=None):
    """Samples x genes matrix of log means (clamped)."""
    xb = dataset.covariates @ params.beta_rna if params.beta_rna.size else 0.0
    lin = (
        params.alpha[None, :]
        + np.outer(dataset.treatment, params.log_fc)
        + dataset.log_library_size[:, None]
        + dataset.log_gene_length[None, :]
        + np.asarray(xb).reshape(-1, 1)
    )
    return (counter or OverflowCounter()).clamp(lin)


def rnaseq_loglik(dataset: RnaSeqDataset, params: RnaSeqParams, counter=None):
    """Total log-likelihood and the per-gene partial sums."""
    if dataset.n_samples == 0:
        return 0.0, np.zeros(dataset.n_genes)
    y = np.asarray(dataset.counts, dtype=float)
    lin = rnaseq_linear_predictor(dataset, params, counter)
    ll = _nb_kernel(y, lin, 1.0 / params.phi[None, :], special.gammaln(y + 1.0))
    per_gene = ll.sum(axis=0)
    return float(per_gene.sum()), per_gene


def gwas_design(dataset: GwasDataset) -> np.ndarray:
    """Covariate design with a leading intercept column."""
    return np.column_stack([np.ones(dataset.n_individuals), dataset.covariates])


def gwas_linear_predictor(dataset: GwasDataset, params: GwasParams) -> np.ndarray:
    return dataset.carrier @ params.gamma + gwas_design(dataset) @ params.beta_gwas


def logistic_terms(y, eta):
    """Per-individual Bernoulli log-likelihood ``y*eta - log(1 + exp(eta))``."""
    return y * eta - np.logaddexp(0.0, eta)


def logistic_loglik(dataset: GwasDataset, params: GwasParams) -> float:
    if dataset.n_individuals == 0:
        return 0.0
    eta = gwas_linear_predictor(dataset, params)
    return float(logistic_terms(dataset.outcome, eta).sum())


def logistic_toggle_delta(y, eta, rows, delta: float) -> float:
    """Change in log-likelihood when ``eta[rows]`` shifts by ``delta``.

    ``rows`` are the carriers of the gene whose effect changes, so the cost
    is proportional to the number of carriers, not the sample size.
    """
    e = eta[rows]
    yy = y[rows]
    return float(delta * yy.sum() - (np.logaddexp(0.0, e + delta) - np.logaddexp(0.0, e)).sum())


def logistic_grad_gamma(dataset: GwasDataset, params: GwasParams) -> np.ndarray:
    eta = gwas_linear_predictor(dataset, params)
    return dataset.carrier.T @ (dataset.outcome - special.expit(eta))


def joint_loglik(rna: RnaSeqDataset | None, gwas: GwasDataset | None,
                 rna_params: RnaSeqParams | None = None, gwas_params: GwasParams | None = None) -> float:
    """Sum of the sub-model log-likelihoods; labels couple them only through the prior."""
    total = 0.0
    if rna is not None and rna.n_samples and rna.n_genes:
        total += rnaseq_loglik(rna, rna_params)[0]
    if gwas is not None and gwas.n_individuals:
        total += logistic_loglik(gwas, gwas_params)
    return total

"""Reversible-jump MCMC for the three-groups model.

One sweep visits, in order: a label move per gene, random-walk updates of the
non-null effects, the nuisance and hyper-parameters, refreshes of parameters
belonging to genes absent from a modality, and a conjugate draw of the group
probabilities.

Labels are updated against the Dirichlet-categorical marginal (group
probabilities integrated out); the draw of ``lam`` given the labels is exact,
so it does not feed back into the label updates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import priors
from .likelihoods import (
    GwasParams,
    OverflowCounter,
    RnaSeqParams,
    _nb_kernel,
    gwas_design,
    logistic_loglik,
    logistic_terms,
    logistic_toggle_delta,
    rnaseq_loglik,
)
from .model import GeneAlignment, GeneLabel, GroupProbabilities, GwasDataset, RnaSeqDataset, align_genes
from .priors import HyperState, PriorConfig, PriorFamily
from .trace import Trace, TraceWriter

log = logging.getLogger(__name__)

MODALITY_SETS = {"rna": ("rna",), "gwas": ("gwas",), "joint": ("rna", "gwas")}
LABEL_OF_SIGN = {1: GeneLabel.DELETERIOUS, -1: GeneLabel.BENEFICIAL}
OTHER_LABELS = {1: (2, 3), 2: (1, 3), 3: (1, 2)}
SIGN_OF_LABEL = (0, 0, 1, -1)
PROPOSAL_INFLATION = 1.5

DEFAULT_SCALES = {
    "effect": 0.3,
    "alpha": 0.1,
    "log_phi": 0.3,
    "beta_rna": 0.05,
    "beta_gwas": 0.05,
    "tau0": 0.5,
    "hyper": 0.5,
}


class SamplerError(RuntimeError):
    pass


@dataclass
class ChainConfig:
    n_iter: int = 20000
    burn_in: int | None = None
    seed: int = 0
    thinning: int = 1
    modality: str = "joint"
    prior: PriorConfig = field(default_factory=PriorConfig)
    proposal_scales: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_SCALES))
    target_accept: float = 0.44
    adapt_every: int = 50
    checkpoint_every: int = 1000
    birth_proposal: str = "mixture"
    birth_prior_weight: float = 0.3

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.n_iter // 2
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.modality not in MODALITY_SETS:
            raise ValueError(f"modality must be one of {sorted(MODALITY_SETS)}")
        if self.birth_proposal not in ("prior", "mixture"):
            raise ValueError("birth_proposal must be 'prior' or 'mixture'")
        if not 0 < self.birth_prior_weight <= 1:
            raise ValueError("birth_prior_weight must lie in (0, 1]")
        scales = dict(DEFAULT_SCALES)
        scales.update(self.proposal_scales)
        if any(not v > 0 for v in scales.values()):
            raise ValueError("proposal scales must be positive")
        self.proposal_scales = scales


class _Scales:
    """Per-parameter random-walk scales, adapted in batches during burn-in."""

    def __init__(self, size, init):
        self.log_s = np.full(size, math.log(init))
        self.batch_acc = np.zeros(size)
        self.batch_n = np.zeros(size)
        self.acc = 0
        self.n = 0

    def __getitem__(self, idx):
        return np.exp(self.log_s[idx])

    def record(self, idx, accepted):
        np.add.at(self.batch_acc, idx, accepted)
        np.add.at(self.batch_n, idx, 1)
        self.acc += int(np.sum(accepted))
        self.n += int(np.size(accepted))

    def adapt(self, batch_no, target):
        seen = self.batch_n > 0
        rate = np.where(seen, self.batch_acc / np.maximum(self.batch_n, 1), target)
        step = min(0.1, 1.0 / math.sqrt(batch_no))
        self.log_s[seen & (rate > target)] += step
        self.log_s[seen & (rate < target)] -= step
        self.batch_acc[:] = 0
        self.batch_n[:] = 0

    def reset_totals(self):
        self.acc = 0
        self.n = 0

    @property
    def rate(self):
        return self.acc / self.n if self.n else float("nan")


def _log_slab(b, sign, params, r):
    """Scalar fast path of ``priors.log_slab``."""
    if sign * b <= 0:
        return -math.inf
    if params[0] == "pimom":
        tau = params[1]
        b2 = b * b
        return (0.5 * r * math.log(tau) - math.lgamma(0.5 * r) - 0.5 * (r + 1.0) * math.log(b2)
                - tau / b2 + priors.LOG2)
    _, mean, sigma = params
    z = (abs(b) - mean) / sigma
    return -0.5 * z * z - 0.5 * priors.LOG2PI - math.log(sigma) - float(special.log_ndtr(mean / sigma))


def _gwas_marginal(y, Z):
    """Per-column carrier log odds ratio and its variance (0.5 continuity correction)."""
    n1 = Z.sum(axis=0)
    y1 = y @ Z
    n0, y0 = y.size - n1, y.sum() - y1
    p1 = (y1 + 0.5) / (n1 + 1.0)
    p0 = (y0 + 0.5) / (n0 + 1.0)
    est = special.logit(p1) - special.logit(p0)
    var = 1.0 / ((n1 + 1.0) * p1 * (1 - p1)) + 1.0 / ((n0 + 1.0) * p0 * (1 - p0))
    bad = (n1 == 0) | (n0 == 0)
    return np.where(bad, np.nan, est), np.where(bad, np.nan, var)


def _rna_marginal(Y, k, L):
    """Per-gene treatment log fold change of library-normalised counts and its variance."""
    lib = np.exp(L)
    t = k == 1
    if not t.any() or t.all():
        nan = np.full(Y.shape[1], np.nan)
        return nan, nan
    s1, s0 = Y[t].sum(axis=0), Y[~t].sum(axis=0)
    e1, e0 = lib[t].sum(), lib[~t].sum()
    r1, r0 = (s1 + 0.5) / e1, (s0 + 0.5) / e0
    mu = np.where(t[:, None], lib[:, None] * r1, lib[:, None] * r0)
    phi = np.maximum(((Y - mu) ** 2 - mu).sum(axis=0) / (mu ** 2).sum(axis=0), 0.0)
    m1, m0 = lib[t][:, None] * r1, lib[~t][:, None] * r0
    var = (m1.sum(0) + phi * (m1 ** 2).sum(0)) / m1.sum(0) ** 2 + (m0.sum(0) + phi * (m0 ** 2).sum(0)) / m0.sum(0) ** 2
    return np.log(r1) - np.log(r0), var


@dataclass
class LabelProposal:
    gene: int
    old: int
    new: int
    kind: str
    effects: dict[str, float]
    log_accept: float
    logpost_delta: float
    cache: dict


class Chain:
    """State and update kernels for a single chain.

    Parameters
    ----------
    rna, gwas : dataset or None
        Datasets outside the configured modality set are ignored.
    config : ChainConfig
    chain_id : int
        Combined with ``config.seed`` to derive an independent RNG stream.
    """

    def __init__(self, rna: RnaSeqDataset | None, gwas: GwasDataset | None, config: ChainConfig, chain_id: int = 0):
        self.config = config
        self.prior = config.prior
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, chain_id]))
        wanted = MODALITY_SETS[config.modality]
        self.rna = rna if "rna" in wanted else None
        self.gwas = gwas if "gwas" in wanted else None
        self.modalities = tuple(m for m, d in (("rna", self.rna), ("gwas", self.gwas)) if d is not None)
        if not self.modalities:
            raise SamplerError(f"no dataset available for modality set {config.modality!r}")
        self.alignment: GeneAlignment = align_genes(
            self.rna.gene_ids if self.rna is not None else None,
            self.gwas.gene_ids if self.gwas is not None else None,
        )
        self.J = self.alignment.n_genes
        self.gene_ids = self.alignment.union_gene_ids
        self.overflow = OverflowCounter()
        self._prepare_data()
        self._setup_birth_proposal()
        self._init_state()
        sc = config.proposal_scales
        self.scales = {f"effect_{m}": _Scales(self.J, sc["effect"]) for m in self.modalities}
        if self.rna is not None:
            self.scales["alpha"] = _Scales(self.J, sc["alpha"])
            self.scales["log_phi"] = _Scales(self.J, sc["log_phi"])
            self.scales["beta_rna"] = _Scales(self.beta_rna.size, sc["beta_rna"])
            self.scales["tau0"] = _Scales(1, sc["tau0"])
        if self.gwas is not None:
            self.scales["beta_gwas"] = _Scales(self.beta_gwas.size, sc["beta_gwas"])
        self._hyper_keys = self._hyper_param_keys()
        self.scales["hyper"] = _Scales(len(self._hyper_keys), sc["hyper"])
        self.move_stats = {k: [0, 0] for k in ("birth", "death", "swap")}
        self.max_drift = 0.0

    # ------------------------------------------------------------------ setup

    def _prepare_data(self):
        aln = self.alignment
        if self.rna is not None:
            d = self.rna
            self.rna_idx = aln.index["rna"]
            self.rna_col = aln.column_of("rna")
            self.Y = np.asarray(d.counts, dtype=float)
            self.lgy1 = special.gammaln(self.Y + 1.0)
            self.k = np.asarray(d.treatment, dtype=float)
            self.L = d.log_library_size
            self.M = d.log_gene_length
            self.X_rna = d.covariates
        if self.gwas is not None:
            d = self.gwas
            self.gwas_idx = aln.index["gwas"]
            self.gwas_col = aln.column_of("gwas")
            self.y = np.asarray(d.outcome, dtype=float)
            self.Z = np.asarray(d.carrier, dtype=float)
            self.D = gwas_design(d)
            self.carriers = [np.flatnonzero(self.Z[:, c]) for c in range(self.Z.shape[1])]

    def _setup_birth_proposal(self):
        """Fixed per-gene birth proposals centred on single-gene marginal estimates.

        Genes without an estimate (absent, no variation, ``birth_proposal="prior"``)
        fall back to the slab prior, for which proposal and prior cancel.
        """
        w = self.config.birth_prior_weight
        self._log_w, self._log_1mw = math.log(w), (math.log1p(-w) if w < 1 else -math.inf)
        self.birth_centre, self.birth_sd = {}, {}
        for m in self.modalities:
            centre, var = np.full(self.J, np.nan), np.full(self.J, np.nan)
            if self.config.birth_proposal == "mixture" and w < 1:
                if m == "gwas" and self.y.size:
                    centre[self.gwas_idx], var[self.gwas_idx] = _gwas_marginal(self.y, self.Z)
                if m == "rna" and self.Y.shape[0]:
                    centre[self.rna_idx], var[self.rna_idx] = _rna_marginal(self.Y, self.k, self.L)
            bad = ~(np.isfinite(centre) & np.isfinite(var) & (var > 0))
            centre[bad] = np.nan
            self.birth_centre[m] = centre
            self.birth_sd[m] = PROPOSAL_INFLATION * np.sqrt(np.where(bad, 1.0, var))

    def _birth_logq(self, m, idx, b, sign, log_prior):
        """Log birth-proposal density of effects ``b`` (sign ``sign``) for genes ``idx``."""
        c = self.birth_centre[m][idx]
        ok = np.isfinite(c)
        if not ok.any():
            return log_prior
        sd = self.birth_sd[m][idx][ok]
        mean = sign * c[ok]
        z = (sign * b[ok] - mean) / sd
        ltn = -0.5 * z * z - 0.5 * priors.LOG2PI - np.log(sd) - special.log_ndtr(mean / sd)
        out = np.array(log_prior, dtype=float)
        out[ok] = np.logaddexp(self._log_w + out[ok], self._log_1mw + ltn)
        return out

    def _birth_draw(self, m, idx, sign):
        """Birth effects for genes ``idx``; returns (effects, log prior, log proposal)."""
        n = idx.size
        b = np.atleast_1d(priors.sample_effect_prior(LABEL_OF_SIGN[sign], m, self.prior, self.hyper, self.rng, n))
        c = self.birth_centre[m][idx]
        ok = np.isfinite(c)
        if ok.any():
            use = ok & (self.rng.random(n) >= self.config.birth_prior_weight)
            if use.any():
                mean, sd = sign * c[use], self.birth_sd[m][idx][use]
                v = stats.truncnorm.rvs(-mean / sd, np.inf, loc=mean, scale=sd, size=int(use.sum()),
                                        random_state=self.rng)
                b[use] = sign * v
        lp = priors.log_slab(b, sign, self._slab_params(m, sign), self.prior.r)
        return b, lp, self._birth_logq(m, idx, b, sign, lp)

    def _init_state(self):
        J = self.J
        self.labels = np.ones(J, dtype=np.int8)
        self.counts = [J, 0, 0]
        self.effects = {m: np.zeros(J) for m in self.modalities}
        self.hyper = HyperState.initial(self.prior, self.modalities)
        self.lam = GroupProbabilities((1 / 3, 1 / 3, 1 - 2 / 3))
        if self.rna is not None:
            self.alpha = np.zeros(J)
            self.log_phi = np.full(J, math.log(0.5))
            n = self.Y.shape[0]
            if n:
                mean = self.Y.mean(axis=0)
                self.alpha[self.rna_idx] = np.log(mean + 0.1) - self.L.mean() - self.M
            self.beta_rna = np.zeros(self.X_rna.shape[1])
            self._refresh_rna_base()
        if self.gwas is not None:
            self.beta_gwas = np.zeros(self.D.shape[1])
            self.eta = self.D @ self.beta_gwas
            self.gwas_ll = float(logistic_terms(self.y, self.eta).sum())
        self.logpost = self.full_log_posterior()
        if not math.isfinite(self.logpost):
            raise SamplerError(
                "initial log-posterior is not finite; check for genes with extreme counts "
                "or non-finite offsets/covariates"
            )

    def _hyper_param_keys(self):
        fam = self.prior.family
        if fam in (PriorFamily.NONLOCAL_PIMOM, PriorFamily.NONLOCAL_INVGAMMA):
            return [("tau", k) for k in self.hyper.tau]
        if fam is PriorFamily.LOCAL_HYPER:
            return [(name, k) for k in self.hyper.mu for name in ("mu", "sigma")]
        return []

    # ------------------------------------------------------- RNA-seq helpers

    def _refresh_rna_base(self):
        xb = self.X_rna @ self.beta_rna if self.beta_rna.size else np.zeros(self.Y.shape[0])
        self.rna_base = self.L[:, None] + self.M[None, :] + xb[:, None]
        self.rna_ll = self._rna_cols_ll(np.arange(self.Y.shape[1]))

    def _rna_cols_ll(self, cols, alpha=None, lfc=None, log_phi=None):
        """Per-column NB log-likelihood for RNA columns ``cols``.

        Parameter overrides are aligned with ``cols``; missing ones come from
        the current state.
        """
        u = self.rna_idx[cols]
        alpha = self.alpha[u] if alpha is None else alpha
        lfc = self.effects["rna"][u] if lfc is None else lfc
        log_phi = self.log_phi[u] if log_phi is None else log_phi
        if self.Y.shape[0] == 0:
            return np.zeros(len(u))
        lin = self.overflow.clamp(alpha[None, :] + self.k[:, None] * lfc[None, :] + self.rna_base[:, cols])
        ll = _nb_kernel(self.Y[:, cols], lin, np.exp(-log_phi)[None, :], self.lgy1[:, cols])
        return ll.sum(axis=0)

    # ---------------------------------------------------------- log density

    def _slab_params(self, m, sign):
        return priors.effect_prior_params(m, sign, self.prior, self.hyper)

    def _log_effect(self, m, j, b=None):
        lab = int(self.labels[j])
        b = self.effects[m][j] if b is None else b
        if lab == 1:
            return 0.0 if b == 0 else -math.inf
        s = SIGN_OF_LABEL[lab]
        return _log_slab(b, s, self._slab_params(m, s), self.prior.r)

    def _rna_nuisance_prior(self):
        p = self.prior
        return (float(np.sum(priors.log_normal(self.alpha, 0.0, p.alpha_precision)))
                + float(np.sum(priors.log_normal(self.log_phi, self.hyper.mu0, self.hyper.tau0)))
                + priors.log_normal(self.hyper.mu0, 0.0, p.mu0_precision)
                + priors.log_half_t(self.hyper.tau0, p.tau0_nu, p.tau0_scale)
                + float(np.sum(priors.log_normal(self.beta_rna, 0.0, p.beta_precision))))

    def full_log_posterior(self) -> float:
        """Log-posterior recomputed from scratch through the public likelihood API."""
        p = self.prior
        total = priors.log_model_prior(*self.counts, p.dirichlet)
        for m in self.modalities:
            for j in np.flatnonzero(self.labels != 1):
                total += priors.log_effect_prior(self.effects[m][j], int(self.labels[j]), m, p, self.hyper)
        total += priors.log_slab_hyper_prior(self.hyper, p)
        if self.rna is not None:
            u = self.rna_idx
            params = RnaSeqParams(self.alpha[u], self.effects["rna"][u], np.exp(self.log_phi[u]), self.beta_rna)
            total += rnaseq_loglik(self.rna, params)[0]
            total += self._rna_nuisance_prior()
        if self.gwas is not None:
            params = GwasParams(self.effects["gwas"][self.gwas_idx], self.beta_gwas)
            total += logistic_loglik(self.gwas, params)
            total += float(np.sum(priors.log_normal(self.beta_gwas, 0.0, p.beta_precision)))
        return float(total)

    # ------------------------------------------------------------ label moves

    def _lik_delta_gene(self, j, new_eff):
        """Likelihood change if gene ``j`` takes effects ``new_eff``; returns (delta, cache)."""
        delta = 0.0
        cache = {}
        if self.rna is not None:
            c = self.rna_col[j]
            if c >= 0:
                ll = float(self._rna_cols_ll(np.array([c]), lfc=np.array([new_eff["rna"]]))[0])
                delta += ll - self.rna_ll[c]
                cache["rna"] = (c, ll)
        if self.gwas is not None:
            c = self.gwas_col[j]
            if c >= 0:
                step = new_eff["gwas"] - self.effects["gwas"][j]
                rows = self.carriers[c]
                d = logistic_toggle_delta(self.y, self.eta, rows, step) if step != 0 else 0.0
                delta += d
                cache["gwas"] = (rows, step, d)
        return delta, cache

    def _commit_lik(self, cache):
        if "rna" in cache:
            c, ll = cache["rna"]
            self.rna_ll[c] = ll
        if "gwas" in cache:
            rows, step, d = cache["gwas"]
            if step != 0:
                self.eta[rows] += step
                self.gwas_ll += d

    def propose_label(self, j: int, new: int | None = None) -> LabelProposal:
        """Build a trans-dimensional proposal for gene ``j`` without applying it.

        Births draw the new effects from a mixture of the slab prior and a
        truncated normal around the gene's marginal estimate; deaths set effects to exactly zero; sign swaps mirror the
        effects through zero. ``new`` defaults to a uniform pick among the
        two other labels, which makes the move-probability ratio one.
        """
        old = int(self.labels[j])
        if new is None:
            new = OTHER_LABELS[old][self.rng.integers(2)]
        if new not in OTHER_LABELS[old]:
            raise ValueError(f"gene {j} already has label {old}")
        r = self.prior.r
        log_label = priors.log_label_move_ratio(self.counts, old, new, self.prior.dirichlet)
        new_eff = {}
        prior_delta = q_delta = 0.0
        at = np.array([j])
        if old == 1:
            kind = "birth"
            s = SIGN_OF_LABEL[new]
            for m in self.modalities:
                b, lp, lq = self._birth_draw(m, at, s)
                new_eff[m] = float(b[0])
                prior_delta += lp[0]
                q_delta += lp[0] - lq[0]
        elif new == 1:
            kind = "death"
            s = SIGN_OF_LABEL[old]
            for m in self.modalities:
                new_eff[m] = 0.0
                lp = self._log_effect(m, j)
                lq = self._birth_logq(m, at, np.array([self.effects[m][j]]), s, np.array([lp]))[0]
                prior_delta -= lp
                q_delta -= lp - lq
        else:
            kind = "swap"
            s = SIGN_OF_LABEL[new]
            for m in self.modalities:
                b = -self.effects[m][j]
                new_eff[m] = b
                prior_delta += _log_slab(b, s, self._slab_params(m, s), r) - self._log_effect(m, j)
        lik_delta, cache = self._lik_delta_gene(j, new_eff)
        log_acc = lik_delta + log_label + (prior_delta if kind == "swap" else q_delta)
        return LabelProposal(j, old, new, kind, new_eff, log_acc, lik_delta + log_label + prior_delta, cache)

    def apply_label(self, prop: LabelProposal):
        self._commit_lik(prop.cache)
        for m in self.modalities:
            self.effects[m][prop.gene] = prop.effects[m]
        self.labels[prop.gene] = prop.new
        self.counts[prop.old - 1] -= 1
        self.counts[prop.new - 1] += 1
        self.logpost += prop.logpost_delta

    def rj_label_move(self, j: int) -> bool:
        """Propose and accept/reject one label change for gene ``j``."""
        prop = self.propose_label(j)
        stats = self.move_stats[prop.kind]
        stats[1] += 1
        if not (math.log(self.rng.random()) < prop.log_accept):
            return False
        stats[0] += 1
        self.apply_label(prop)
        return True

    def rj_sweep(self):
        """One label move per gene, in gene order.

        Same kernel as calling ``rj_label_move`` for every gene. Each gene's
        proposal depends only on its own state, so proposals and the
        per-gene RNA-seq likelihoods are computed up front in one batch; the
        GWAS terms share the linear predictor and stay sequential.
        """
        J, r = self.J, self.prior.r
        old = self.labels.astype(np.int64)
        pick = self.rng.integers(2, size=J)
        new = np.where(old == 1, 2 + pick, np.where(old == 2, 1 + 2 * pick, 1 + pick))
        birth, death = old == 1, new == 1
        swap = ~birth & ~death
        new_sign = np.select([new == 2, new == 3], [1, -1], 0)
        old_sign = np.select([old == 2, old == 3], [1, -1], 0)
        new_eff, prior_delta, q_delta = {}, np.zeros(J), np.zeros(J)
        for m in self.modalities:
            cur = self.effects[m]
            ne = np.zeros(J)
            ne[swap] = -cur[swap]
            for s in (1, -1):
                params = self._slab_params(m, s)
                sel = np.flatnonzero(birth & (new_sign == s))
                if sel.size:
                    ne[sel], lp, lq = self._birth_draw(m, sel, s)
                    prior_delta[sel] += lp
                    q_delta[sel] += lp - lq
                sel = swap & (new_sign == s)
                if sel.any():
                    prior_delta[sel] += priors.log_slab(ne[sel], s, params, r)
                sel = np.flatnonzero(~birth & (old_sign == s))
                if sel.size:
                    lp = priors.log_slab(cur[sel], s, params, r)
                    prior_delta[sel] -= lp
                    dead = death[sel]
                    if dead.any():
                        q_delta[sel[dead]] -= lp[dead] - self._birth_logq(m, sel[dead], cur[sel[dead]], s, lp[dead])
            new_eff[m] = ne
        rna_delta = np.zeros(J)
        if self.rna is not None and self.rna_idx.size:
            u = self.rna_idx
            rna_new_ll = self._rna_cols_ll(np.arange(u.size), lfc=new_eff["rna"][u])
            rna_delta[u] = rna_new_ll - self.rna_ll
        alpha = self.prior.dirichlet.alpha
        log_u = np.log(self.rng.random(J))
        gwas_col = self.gwas_col if self.gwas is not None else None
        stats = self.move_stats
        for j in range(J):
            o, n = int(old[j]), int(new[j])
            kind = "birth" if birth[j] else ("death" if death[j] else "swap")
            log_label = math.log((alpha[n - 1] + self.counts[n - 1]) / (alpha[o - 1] + self.counts[o - 1] - 1))
            lik = rna_delta[j]
            d_g, rows, step = 0.0, None, 0.0
            if gwas_col is not None and gwas_col[j] >= 0:
                step = new_eff["gwas"][j] - self.effects["gwas"][j]
                rows = self.carriers[gwas_col[j]]
                if step != 0:
                    d_g = logistic_toggle_delta(self.y, self.eta, rows, step)
                lik += d_g
            log_acc = lik + log_label + (prior_delta[j] if kind == "swap" else q_delta[j])
            stats[kind][1] += 1
            if not log_u[j] < log_acc:
                continue
            stats[kind][0] += 1
            if self.rna is not None and self.rna_col[j] >= 0:
                self.rna_ll[self.rna_col[j]] += rna_delta[j]
            if rows is not None and step != 0:
                self.eta[rows] += step
                self.gwas_ll += d_g
            for m in self.modalities:
                self.effects[m][j] = new_eff[m][j]
            self.labels[j] = n
            self.counts[o - 1] -= 1
            self.counts[n - 1] += 1
            self.logpost += lik + log_label + prior_delta[j]

    # -------------------------------------------------------- effect updates

    def update_effects(self):
        """Random walk on log|effect| for non-null genes; the sign never changes."""
        r = self.prior.r
        nonnull = self.labels != 1
        if self.rna is not None:
            idx = np.flatnonzero(nonnull & self.alignment.present["rna"])
            if idx.size:
                sc = self.scales["effect_rna"]
                b = self.effects["rna"][idx]
                step = sc[idx] * self.rng.standard_normal(idx.size)
                b_new = b * np.exp(step)
                cols = self.rna_col[idx]
                ll_new = self._rna_cols_ll(cols, lfc=b_new)
                lp_old = self._log_slab_vec("rna", idx, b)
                lp_new = self._log_slab_vec("rna", idx, b_new)
                delta = ll_new - self.rna_ll[cols] + lp_new - lp_old
                acc = np.log(self.rng.random(idx.size)) < delta + step
                sc.record(idx, acc)
                self.effects["rna"][idx[acc]] = b_new[acc]
                self.rna_ll[cols[acc]] = ll_new[acc]
                self.logpost += float(delta[acc].sum())
        if self.gwas is not None:
            sc = self.scales["effect_gwas"]
            g = self.effects["gwas"]
            for j in np.flatnonzero(nonnull & self.alignment.present["gwas"]):
                s = SIGN_OF_LABEL[self.labels[j]]
                step = sc.log_s[j]
                step = math.exp(step) * self.rng.standard_normal()
                b = g[j]
                b_new = b * math.exp(step)
                params = self._slab_params("gwas", s)
                rows = self.carriers[self.gwas_col[j]]
                d_ll = logistic_toggle_delta(self.y, self.eta, rows, b_new - b)
                delta = d_ll + _log_slab(b_new, s, params, r) - _log_slab(b, s, params, r)
                ok = math.log(self.rng.random()) < delta + step
                sc.record(j, ok)
                if ok:
                    g[j] = b_new
                    self.eta[rows] += b_new - b
                    self.gwas_ll += d_ll
                    self.logpost += delta

    def _log_slab_vec(self, m, idx, b):
        out = np.empty(idx.size)
        lab = self.labels[idx]
        for s in (1, -1):
            sel = lab == LABEL_OF_SIGN[s]
            if sel.any():
                out[sel] = priors.log_slab(b[sel], s, self._slab_params(m, s), self.prior.r)
        return out

    # ------------------------------------------------------ nuisance updates

    def update_nuisance(self):
        if self.rna is not None:
            self._update_rna_gene_block("alpha")
            self._update_rna_gene_block("log_phi")
            self._update_beta_rna()
            self._update_mu0()
            self._update_tau0()
        if self.gwas is not None:
            self._update_beta_gwas()
        self._update_slab_hyper()

    def _update_rna_gene_block(self, name):
        idx = self.rna_idx
        if idx.size == 0:
            return
        sc = self.scales[name]
        cur = getattr(self, name)
        old = cur[idx]
        new = old + sc[idx] * self.rng.standard_normal(idx.size)
        cols = np.arange(idx.size)
        if name == "alpha":
            ll_new = self._rna_cols_ll(cols, alpha=new)
            prec, mean = self.prior.alpha_precision, 0.0
        else:
            ll_new = self._rna_cols_ll(cols, log_phi=new)
            prec, mean = self.hyper.tau0, self.hyper.mu0
        dprior = -0.5 * prec * ((new - mean) ** 2 - (old - mean) ** 2)
        delta = ll_new - self.rna_ll + dprior
        acc = np.log(self.rng.random(idx.size)) < delta
        sc.record(idx, acc)
        cur[idx[acc]] = new[acc]
        self.rna_ll[acc] = ll_new[acc]
        self.logpost += float(delta[acc].sum())

    def _update_beta_rna(self):
        sc = self.scales["beta_rna"]
        for l in range(self.beta_rna.size):
            old_beta, old_base, old_ll = self.beta_rna.copy(), self.rna_base, self.rna_ll
            step = sc[l] * self.rng.standard_normal()
            self.beta_rna[l] += step
            self._refresh_rna_base()
            prec = self.prior.beta_precision
            dprior = -0.5 * prec * (self.beta_rna[l] ** 2 - old_beta[l] ** 2)
            delta = float(self.rna_ll.sum() - old_ll.sum()) + dprior
            ok = math.log(self.rng.random()) < delta
            sc.record(l, ok)
            if ok:
                self.logpost += delta
            else:
                self.beta_rna, self.rna_base, self.rna_ll = old_beta, old_base, old_ll

    def _update_mu0(self):
        """Normal-normal conjugate draw of the dispersion location."""
        h, p = self.hyper, self.prior
        lp_old = (priors.log_normal(h.mu0, 0.0, p.mu0_precision)
                  + float(np.sum(priors.log_normal(self.log_phi, h.mu0, h.tau0))))
        post_prec = p.mu0_precision + self.J * h.tau0
        post_mean = h.tau0 * float(self.log_phi.sum()) / post_prec
        h.mu0 = post_mean + self.rng.standard_normal() / math.sqrt(post_prec)
        lp_new = (priors.log_normal(h.mu0, 0.0, p.mu0_precision)
                  + float(np.sum(priors.log_normal(self.log_phi, h.mu0, h.tau0))))
        self.logpost += lp_new - lp_old

    def _update_tau0(self):
        h, p = self.hyper, self.prior
        sc = self.scales["tau0"]

        def target(t0):
            return (priors.log_half_t(t0, p.tau0_nu, p.tau0_scale)
                    + float(np.sum(priors.log_normal(self.log_phi, h.mu0, t0))))

        step = sc[0] * self.rng.standard_normal()
        t_new = h.tau0 * math.exp(step)
        delta = target(t_new) - target(h.tau0)
        ok = math.log(self.rng.random()) < delta + step
        sc.record(0, ok)
        if ok:
            h.tau0 = t_new
            self.logpost += delta

    def _update_beta_gwas(self):
        sc = self.scales["beta_gwas"]
        prec = self.prior.beta_precision
        for l in range(self.beta_gwas.size):
            step = sc[l] * self.rng.standard_normal()
            eta_new = self.eta + step * self.D[:, l]
            ll_new = float(logistic_terms(self.y, eta_new).sum())
            b = self.beta_gwas[l]
            delta = ll_new - self.gwas_ll - 0.5 * prec * ((b + step) ** 2 - b * b)
            ok = math.log(self.rng.random()) < delta
            sc.record(l, ok)
            if ok:
                self.beta_gwas[l] = b + step
                self.eta = eta_new
                self.gwas_ll = ll_new
                self.logpost += delta

    def _slab_block_logpost(self, m, s):
        """Slab log density summed over all genes with sign ``s`` in modality ``m``."""
        b = self.effects[m][self.labels == LABEL_OF_SIGN[s]]
        if b.size == 0:
            return 0.0
        return float(np.sum(priors.log_slab(b, s, self._slab_params(m, s), self.prior.r)))

    def _update_slab_hyper(self):
        p = self.prior
        sc = self.scales["hyper"]
        for i, (name, key) in enumerate(self._hyper_keys):
            m, s = key[:-1], (1 if key[-1] == "+" else -1)
            store = getattr(self.hyper, name)
            old = store[key]

            def target():
                return self._slab_block_logpost(m, s) + priors.log_slab_hyper_prior(self.hyper, p)

            t_old = target()
            step = sc[i] * self.rng.standard_normal()
            store[key] = old * math.exp(step)
            t_new = target()
            delta = t_new - t_old
            ok = math.log(self.rng.random()) < delta + step
            sc.record(i, ok)
            if ok:
                self.logpost += delta
            else:
                store[key] = old

    # ---------------------------------------------------------- missing data

    def impute_missing_gene(self, j: int, modality: str):
        """Redraw the parameters gene ``j`` would have in ``modality`` from their priors.

        Only acts on genes absent from ``modality``; they carry no likelihood
        there, so a prior draw is an exact Gibbs step.
        """
        if modality not in self.modalities or self.alignment.present[modality][j]:
            return
        lab = int(self.labels[j])
        before = self._log_effect(modality, j)
        b = float(priors.sample_effect_prior(lab, modality, self.prior, self.hyper, self.rng))
        self.effects[modality][j] = b
        self.logpost += self._log_effect(modality, j) - before
        if modality == "rna":
            p, h = self.prior, self.hyper
            a_old, f_old = self.alpha[j], self.log_phi[j]
            self.alpha[j] = self.rng.normal(0.0, 1.0 / math.sqrt(p.alpha_precision))
            self.log_phi[j] = self.rng.normal(h.mu0, 1.0 / math.sqrt(h.tau0))
            self.logpost += (priors.log_normal(self.alpha[j], 0.0, p.alpha_precision)
                             - priors.log_normal(a_old, 0.0, p.alpha_precision)
                             + priors.log_normal(self.log_phi[j], h.mu0, h.tau0)
                             - priors.log_normal(f_old, h.mu0, h.tau0))

    def update_lambda(self):
        self.lam = priors.sample_lambda_given_labels(*self.counts, self.prior.dirichlet, self.rng)
        return self.lam

    # ----------------------------------------------------------------- sweep

    def sweep(self):
        self.rj_sweep()
        self.update_effects()
        self.update_nuisance()
        for m in self.modalities:
            for j in np.flatnonzero(~self.alignment.present[m]):
                self.impute_missing_gene(j, m)
        self.update_lambda()

    def check_log_posterior(self) -> float:
        """Compare the running log-posterior with a full recomputation and resync."""
        full = self.full_log_posterior()
        drift = abs(full - self.logpost)
        self.max_drift = max(self.max_drift, drift)
        self.logpost = full
        return drift

    def record(self) -> dict:
        rec = {
            "labels": self.labels.copy(),
            "effects": {m: self.effects[m].copy() for m in self.modalities},
            "hyper": self.hyper.as_dict(),
            "lam": self.lam.lam,
            "logpost": self.logpost,
        }
        if self.rna is not None:
            rec["phi"] = np.exp(self.log_phi)
        return rec

    def run(self, trace_path=None, header_extra=None) -> Trace:
        cfg = self.config
        trace = Trace.empty(
            gene_ids=self.gene_ids,
            modalities=self.modalities,
            present={m: self.alignment.present[m].copy() for m in self.modalities},
            hyper_names=list(self.hyper.as_dict()),
            family=self.prior.family.value,
            burn_in=cfg.burn_in,
        )
        writer = TraceWriter(trace_path, trace, header_extra) if trace_path else None
        try:
            batch = 0
            for it in range(cfg.n_iter):
                if it == cfg.burn_in:
                    for sc in self.scales.values():
                        sc.reset_totals()
                    for st in self.move_stats.values():
                        st[0] = st[1] = 0
                self.sweep()
                if it < cfg.burn_in and (it + 1) % cfg.adapt_every == 0:
                    batch += 1
                    for sc in self.scales.values():
                        sc.adapt(batch, cfg.target_accept)
                if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                    self.check_log_posterior()
                if it % cfg.thinning == 0:
                    rec = self.record()
                    trace.append(it, rec)
                    if writer:
                        writer.write(it, rec)
        except BaseException:
            if writer:
                writer.close()
            raise
        trace.acceptance = self.acceptance_rates()
        trace.diagnostics = {"max_logpost_drift": self.max_drift, "overflow_clamps": self.overflow.count}
        if writer:
            writer.close({"acceptance": trace.acceptance, "diagnostics": trace.diagnostics})
        return trace.finalize()

    def acceptance_rates(self) -> dict[str, float]:
        """Post-burn-in acceptance rates per move type and update block."""
        out = {f"rj_{k}": (a / n if n else float("nan")) for k, (a, n) in self.move_stats.items()}
        for name, sc in self.scales.items():
            if sc.n:
                out[name] = sc.rate
        return out


def run_chain(rna: RnaSeqDataset | None, gwas: GwasDataset | None, config: ChainConfig,
              chain_id: int = 0, trace_path=None, header_extra=None) -> Trace:
    """Run one chain and return its trace."""
    return Chain(rna, gwas, config, chain_id).run(trace_path, header_extra)

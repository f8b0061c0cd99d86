"""Simulated GWAS + RNA-seq replicates sharing ground-truth gene labels."""

from __future__ import annotations

import dataclasses
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import io
from .model import GeneLabel, GwasDataset, LabelVector, RnaSeqDataset

MIN_THIN_PROB = 1e-6


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Effect magnitudes are cycled over the non-null genes; the sign comes from
    the label (deleterious positive, beneficial negative). RNA-seq effects are
    given as log2 fold changes.
    """

    J: int = 250
    n_ben: int = 5
    n_del: int = 5
    n_gwas: int = 1000
    n_rna: int = 100
    gwas_effects: tuple[float, ...] = (0.5, 1.0)
    rna_log2fc: tuple[float, ...] = (0.5, 1.0)
    maf_beta: tuple[float, float] = (20.0, 35.0)
    intercept_mean: float = 0.0
    intercept_sd: float = 1.0
    baseline: str = "synthetic"
    baseline_path: str | None = None
    base_log_mean: float = math.log(100.0)
    base_log_mean_sd: float = 1.0
    dispersion_log_mean: float = math.log(0.1)
    dispersion_log_sd: float = 0.5
    library_sd: float = 0.2
    length_sd: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_ben < 0 or self.n_del < 0 or self.n_ben + self.n_del > self.J:
            raise ValueError("need 0 <= n_ben + n_del <= J")
        if self.baseline not in ("synthetic", "thin"):
            raise ValueError("baseline must be 'synthetic' or 'thin'")
        if self.baseline == "thin" and not self.baseline_path:
            raise ValueError("thinning baseline needs baseline_path")
        for name in ("gwas_effects", "rna_log2fc"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in vals))
            if any(v < 0 for v in getattr(self, name)):
                raise ValueError(f"{name} are magnitudes and must be non-negative")
        object.__setattr__(self, "maf_beta", tuple(float(v) for v in self.maf_beta))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SimTruth:
    gene_ids: list[str]
    labels: LabelVector
    gwas_effect: np.ndarray
    rna_log_fc: np.ndarray
    extras: dict = field(default_factory=dict)


def gene_names(J: int) -> list[str]:
    width = max(4, len(str(J)))
    return [f"G{i + 1:0{width}d}" for i in range(J)]


def _cycle(mags, n):
    if n == 0:
        return np.zeros(0)
    if not mags:
        raise ValueError("effect magnitudes must not be empty")
    return np.array([mags[i % len(mags)] for i in range(n)], dtype=float)


def draw_truth(cfg: SimConfig, rng: np.random.Generator, gene_ids=None) -> SimTruth:
    J = cfg.J
    labels = np.full(J, int(GeneLabel.NULL), dtype=np.int8)
    chosen = rng.permutation(J)[: cfg.n_del + cfg.n_ben]
    labels[chosen[: cfg.n_del]] = GeneLabel.DELETERIOUS
    labels[chosen[cfg.n_del:]] = GeneLabel.BENEFICIAL
    sign = np.select([labels == 2, labels == 3], [1.0, -1.0], 0.0)
    nonnull = np.sort(chosen)
    gwas = np.zeros(J)
    rna = np.zeros(J)
    gwas[nonnull] = _cycle(cfg.gwas_effects, nonnull.size)
    rna[nonnull] = _cycle(cfg.rna_log2fc, nonnull.size) * math.log(2.0)
    return SimTruth(list(gene_ids or gene_names(J)), LabelVector(labels), gwas * sign, rna * sign)


def gen_gwas(cfg: SimConfig, rng: np.random.Generator, truth: SimTruth | None = None,
             intercept: float | None = None):
    """Logistic-regression GWAS data on binary carrier indicators.

    Each gene gets a minor allele frequency from Beta(20, 35) by default and
    each individual carries the gene with that probability.
    """
    truth = truth or draw_truth(cfg, rng)
    J, n = cfg.J, cfg.n_gwas
    maf = rng.beta(*cfg.maf_beta, size=J)
    carrier = (rng.random((n, J)) < maf[None, :]).astype(np.int8)
    if intercept is None:
        intercept = rng.normal(cfg.intercept_mean, cfg.intercept_sd)
    eta = intercept + carrier @ truth.gwas_effect
    outcome = (rng.random(n) < special.expit(eta)).astype(np.int8)
    truth.extras.update(maf=maf, intercept=float(intercept))
    ids = [f"I{i + 1:05d}" for i in range(n)]
    return GwasDataset(outcome, carrier, truth.gene_ids, None, ids), truth


def _nb_draw(rng, mu, phi):
    size = 1.0 / phi
    return rng.negative_binomial(size, size / (size + mu))


def _split(n):
    return np.array([0] * (n // 2) + [1] * (n - n // 2), dtype=np.int8)


def gen_rnaseq_synthetic(cfg: SimConfig, rng: np.random.Generator, truth: SimTruth | None = None):
    """Negative-binomial counts with log-normal gene means and dispersions."""
    truth = truth or draw_truth(cfg, rng)
    J, n = cfg.J, cfg.n_rna
    base = rng.normal(cfg.base_log_mean, cfg.base_log_mean_sd, size=J)
    phi = np.exp(rng.normal(cfg.dispersion_log_mean, cfg.dispersion_log_sd, size=J))
    L = rng.normal(0.0, cfg.library_sd, size=n)
    M = rng.normal(0.0, cfg.length_sd, size=J)
    k = _split(n)
    mu = np.exp(base[None, :] + L[:, None] + M[None, :] + k[:, None] * truth.rna_log_fc[None, :])
    counts = _nb_draw(rng, mu, phi[None, :])
    truth.extras.update(base_log_mean=base, dispersion=phi)
    ids = [f"S{i + 1:04d}" for i in range(n)]
    return RnaSeqDataset(counts, k, L, M, truth.gene_ids, None, ids), truth


def thin_counts(counts, treatment, log2fc, rng):
    """Binomial thinning of samples x genes ``counts``.

    For a positive log2 fold change the control group is thinned, for a
    negative one the treatment group, each count y becoming
    Binomial(y, 2**-|b|); the expected treatment/control ratio is then 2**b.
    """
    counts = np.array(counts, dtype=np.int64, copy=True)
    log2fc = np.asarray(log2fc, dtype=float)
    treatment = np.asarray(treatment)
    prob = np.exp2(-np.abs(log2fc))
    if (prob < MIN_THIN_PROB).any():
        raise ValueError(f"|log2 fold change| too large: thinning probability below {MIN_THIN_PROB}")
    for g in np.flatnonzero(log2fc):
        rows = treatment == (0 if log2fc[g] > 0 else 1)
        counts[rows, g] = rng.binomial(counts[rows, g], prob[g])
    return counts


def gen_rnaseq_thinned(counts_matrix, cfg: SimConfig, rng: np.random.Generator, truth: SimTruth | None = None,
                       gene_ids=None):
    """Inject signal into a real genes x samples count matrix by binomial thinning.

    ``cfg.J`` genes and ``cfg.n_rna`` samples are drawn at random; samples
    are randomly split into two groups. Library-size offsets come from the
    baseline before thinning; gene-length offsets are zero.
    """
    base = np.asarray(counts_matrix)
    G, N = base.shape
    if G < cfg.J or N < cfg.n_rna:
        raise ValueError(f"baseline has {G} genes x {N} samples; need {cfg.J} x {cfg.n_rna}")
    genes = np.sort(rng.choice(G, cfg.J, replace=False))
    samples = rng.choice(N, cfg.n_rna, replace=False)
    ids = list(gene_ids) if gene_ids is not None else gene_names(G)
    picked_ids = [ids[g] for g in genes]
    truth = truth or draw_truth(cfg, rng, picked_ids)
    truth.gene_ids = picked_ids
    k = _split(cfg.n_rna)
    lib = np.log(np.maximum(base[:, samples].sum(axis=0), 1))
    counts = thin_counts(base[np.ix_(genes, samples)].T, k, truth.rna_log_fc / math.log(2.0), rng)
    ds = RnaSeqDataset(counts, k, lib - lib.mean(), np.zeros(cfg.J), picked_ids, None,
                       [f"S{s + 1:04d}" for s in samples])
    return ds, truth


def gen_replicate(cfg: SimConfig, seed, baseline=None):
    """One (GWAS, RNA-seq, truth) triple; components use independent streams."""
    ss = np.random.SeedSequence(seed)
    r_truth, r_gwas, r_rna = (np.random.default_rng(s) for s in ss.spawn(3))
    if cfg.baseline == "thin":
        if baseline is None:
            gene_ids, _, baseline = io.read_counts(cfg.baseline_path)
        else:
            gene_ids = None
        # the thinning path picks genes first, so it owns the truth draw
        rna, truth = gen_rnaseq_thinned(baseline, cfg, r_rna, gene_ids=gene_ids)
    else:
        truth = draw_truth(cfg, r_truth)
        rna, truth = gen_rnaseq_synthetic(cfg, r_rna, truth)
    gwas, truth = gen_gwas(cfg, r_gwas, truth)
    return gwas, rna, truth


def replicate_seeds(master_seed: int, n_reps: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n_reps)]


def gen_replicates(cfg: SimConfig, n_reps: int, out_dir, force: bool = False, workers: int = 1) -> Path:
    """Write ``n_reps`` replicates under ``out_dir`` with a manifest.

    Layout: ``out_dir/rep_000/`` holds the RNA-seq and GWAS files in the
    standard delimited formats plus ``truth.tsv``.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} exists and is not empty (use force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    h = io.config_hash(cfg_dict)
    seeds = replicate_seeds(cfg.seed, n_reps)
    baseline = None
    if cfg.baseline == "thin":
        baseline = io.read_counts(cfg.baseline_path)

    jobs = [(cfg, i, seed, str(out), h, baseline) for i, seed in enumerate(seeds)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            names = list(pool.map(_write_replicate, jobs))
    else:
        names = [_write_replicate(j) for j in jobs]

    manifest = {
        "schema": f"threegroups-archive/{io.SCHEMA_VERSION}",
        "config_hash": h,
        "config": cfg_dict,
        "replicates": [{"name": nm, "seed": sd} for nm, sd in zip(names, seeds)],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _write_replicate(job):
    cfg, i, seed, out, h, baseline = job
    base_counts = None
    gene_ids = None
    if baseline is not None:
        gene_ids, _, base_counts = baseline
    if cfg.baseline == "thin":
        ss = np.random.SeedSequence(seed)
        _, r_gwas, r_rna = (np.random.default_rng(s) for s in ss.spawn(3))
        rna, truth = gen_rnaseq_thinned(base_counts, cfg, r_rna, gene_ids=gene_ids)
        gwas, truth = gen_gwas(cfg, r_gwas, truth)
    else:
        gwas, rna, truth = gen_replicate(cfg, seed)
    name = f"rep_{i:03d}"
    d = Path(out) / name
    d.mkdir()
    io.save_rna_dataset(d, rna, h)
    io.save_gwas_dataset(d, gwas, h)
    io.write_truth(d / "truth.tsv", truth.gene_ids, truth.labels.labels, truth.gwas_effect, truth.rna_log_fc, h)
    return name

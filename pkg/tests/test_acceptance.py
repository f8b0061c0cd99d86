"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from threegroups import priors
from threegroups.cli import main
from threegroups.diagnostics import ess
from threegroups.likelihoods import nb_log_pmf
from threegroups.metrics import ScoredGeneSet, auc, brier_score, log_score
from threegroups.model import GwasDataset, RnaSeqDataset
from threegroups.priors import DirichletConfig
from threegroups.sampler import ChainConfig, run_chain
from threegroups.simgen import SimConfig, _nb_draw, gen_gwas, gen_replicate, replicate_seeds, thin_counts
from threegroups.trace import summarize


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return _report


def mc_se(x):
    x = np.asarray(x, dtype=float)
    return x.std() / math.sqrt(ess(x))


# 1 ----------------------------------------------------------------------

def test_c01_prior_pmf_sums_to_one(report):
    t0 = time.perf_counter()
    worst = 0.0
    for J in range(1, 7):
        total = 0.0
        for labels in itertools.product((1, 2, 3), repeat=J):
            k = [labels.count(g) for g in (1, 2, 3)]
            total += math.exp(priors.log_model_prior(*k))
        worst = max(worst, abs(total - 1.0))
    dt = time.perf_counter() - t0
    report(1, worst < 1e-10 and dt < 1.0, f"max |sum - 1| = {worst:.2e} (tol 1e-10), {dt:.2f} s (< 1 s)")


# 2 ----------------------------------------------------------------------

def test_c02_multiplicity_penalty(report):
    cfg = DirichletConfig(1.0, (1.0, 1.0, 1.0))
    gap = priors.log_model_prior(1000, 0, 0, cfg) - priors.log_model_prior(950, 25, 25, cfg)
    report(2, gap > math.log(1e3), f"log p(k=0) - log p(25,25) = {gap:.2f} > log(1000) = {math.log(1e3):.2f}")


# 3 ----------------------------------------------------------------------

def _mass(logpdf, lo, hi, peak):
    f = lambda x: math.exp(logpdf(x))  # noqa: E731
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=500)[0]
               for a, b in ((lo, peak), (peak, hi)))


def test_c03_density_normalization(report):
    masses = {
        "piMOM": _mass(lambda b: priors.log_pimom(b, 1.0, 2.0), 0, np.inf, 1.0)
        + _mass(lambda b: priors.log_pimom(b, 1.0, 2.0), -np.inf, 0, -1.0),
        "half-piMOM": _mass(lambda b: priors.log_half_pimom(b, 1.0, 2.0, "+"), 0, np.inf, 1.0),
        "half-piMOM(-)": _mass(lambda b: priors.log_half_pimom(b, 1.0, 2.0, "-"), -np.inf, 0, -1.0),
        "half-normal": _mass(lambda b: priors.log_half_normal(b, 1.0, "+"), 0, np.inf, 1.0),
        "half-t(4)": _mass(lambda x: priors.log_half_t(x, 4.0, 1.0), 0, np.inf, 1.0),
    }
    worst = max(abs(v - 1) for v in masses.values())
    detail = ", ".join(f"{k}={v:.9f}" for k, v in masses.items())
    report(3, worst < 1e-6, f"{detail} (tol 1e-6)")


# 4 ----------------------------------------------------------------------

def test_c04_negative_binomial(report):
    y = np.arange(200000)
    worst_sum, worst_z = 0.0, 0.0
    rng = np.random.default_rng(4)
    for mu, phi in itertools.product((1.0, 5.0, 50.0), (0.1, 0.5, 2.0)):
        worst_sum = max(worst_sum, abs(np.exp(nb_log_pmf(y, mu, phi)).sum() - 1.0))
        x = _nb_draw(rng, np.full(10**6, mu), phi).astype(float)
        v = x.var(ddof=1)
        m4 = np.mean((x - x.mean()) ** 4)
        se = math.sqrt((m4 - v * v) / x.size)
        worst_z = max(worst_z, abs(v - mu * (1 + mu * phi)) / se)
    report(4, worst_sum < 1e-8 and worst_z < 3,
           f"max |sum pmf - 1| = {worst_sum:.1e} (tol 1e-8); max variance z = {worst_z:.2f} (< 3)")


# 5 ----------------------------------------------------------------------

def test_c05_prior_recovery_flat_likelihood(report):
    J, n_iter = 20, 20000
    empty = GwasDataset(np.zeros(0), np.zeros((0, J)), [f"g{i}" for i in range(J)])
    # with a = (1, 1, 1) every composition (k1, k2, k3) is equally likely
    pk1 = np.array([J - m + 1 for m in range(J + 1)], float)
    pk1 /= pk1.sum()
    max_z, min_p, max_t = 0.0, 1.0, 0.0
    for seed in range(3):
        t0 = time.perf_counter()
        tr = run_chain(None, empty, ChainConfig(n_iter=n_iter, burn_in=0, seed=seed, modality="gwas"))
        max_t = max(max_t, time.perf_counter() - t0)
        for j in range(J):
            for g in (1, 2, 3):
                x = tr.labels[:, j] == g
                max_z = max(max_z, abs(x.mean() - 1 / 3) / mc_se(x))
        k1 = (tr.labels == 1).sum(axis=1)
        step = math.ceil(k1.size / ess(k1))
        obs = np.bincount(k1[::step], minlength=J + 1)
        min_p = min(min_p, stats.chisquare(obs, pk1 * obs.sum()).pvalue)
    ok = max_z <= 3 and min_p > 1e-3 and max_t < 120
    report(5, ok, f"max per-gene |z| = {max_z:.2f} (<= 3); min chi2 p = {min_p:.3g} (> 0.001); "
                  f"slowest seed {max_t:.0f} s (< 120 s)")


# 6 ----------------------------------------------------------------------

def test_c06_signal_recovery(report):
    cfg = SimConfig(J=50, n_ben=2, n_del=2, gwas_effects=(1.5,), rna_log2fc=(1.5,), n_gwas=1000, n_rna=100)
    t0 = time.perf_counter()
    good = 0
    tallies = []
    for i, seed in enumerate(replicate_seeds(6, 10)):
        gwas, rna, truth = gen_replicate(cfg, seed)
        s = summarize(run_chain(rna, gwas, ChainConfig(n_iter=2000, seed=i)))
        nonnull = truth.labels.labels != 1
        tp, fp = int((s.p_null[nonnull] < 0.5).sum()), int((s.p_null[~nonnull] < 0.5).sum())
        tallies.append(f"{tp}/{fp}")
        good += tp >= 3 and fp <= 2
    dt = time.perf_counter() - t0
    report(6, good >= 8 and dt < 1800,
           f"{good}/10 replicates with TP >= 3 and FP <= 2 (need 8); TP/FP {' '.join(tallies)}; {dt:.0f} s")


# 7 ----------------------------------------------------------------------

def test_c07_joint_not_worse_than_single_modality(report):
    cfg = SimConfig(J=50, n_ben=5, n_del=5, gwas_effects=(0.5,), rna_log2fc=(0.5,), n_gwas=1000, n_rna=100)
    aucs = {m: [] for m in ("joint", "gwas", "rna")}
    for i, seed in enumerate(replicate_seeds(7, 20)):
        gwas, rna, truth = gen_replicate(cfg, seed)
        for m in aucs:
            s = summarize(run_chain(rna, gwas, ChainConfig(n_iter=1500, seed=i, modality=m)))
            aucs[m].append(auc(ScoredGeneSet.from_labels(s.p_null, truth.labels.labels)))
    mean = {m: float(np.mean(v)) for m, v in aucs.items()}
    ok = mean["joint"] >= mean["gwas"] - 0.01 and mean["joint"] >= mean["rna"] - 0.01
    report(7, ok, f"mean AUC over 20 replicates: joint {mean['joint']:.4f}, GWAS-only {mean['gwas']:.4f}, "
                  f"RNA-only {mean['rna']:.4f} (margin >= -0.01)")


# 8 ----------------------------------------------------------------------

def test_c08_incremental_log_posterior(report):
    gwas, rna, _ = gen_replicate(SimConfig(J=20, n_ben=2, n_del=2, n_gwas=300, n_rna=20), 8)
    tr = run_chain(rna, gwas, ChainConfig(n_iter=10000, seed=8, checkpoint_every=100))
    drift = tr.diagnostics["max_logpost_drift"]
    null_exact = all(np.all(tr.effects[m][tr.labels == 1] == 0.0) for m in tr.modalities)
    report(8, drift < 1e-6 and null_exact,
           f"max checkpoint drift {drift:.2e} over 10k iterations (tol 1e-6); null effects exactly 0: {null_exact}")


# 9 ----------------------------------------------------------------------

def test_c09_missing_modality_equivalence(report):
    J = 10
    cfg = SimConfig(J=J, n_ben=1, n_del=1, n_gwas=1000, gwas_effects=(0.6,))
    gwas, _ = gen_gwas(cfg, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    # RNA-seq covers the first five genes only and carries no treatment contrast
    rna = RnaSeqDataset(rng.poisson(30, (40, 5)), np.zeros(40, int), np.zeros(40), np.zeros(5), gwas.gene_ids[:5])
    only = range(5, J)
    max_z = 0.0
    for seed in range(3):
        a = run_chain(rna, gwas, ChainConfig(n_iter=6000, seed=seed, modality="joint"))
        b = run_chain(None, gwas, ChainConfig(n_iter=6000, seed=seed + 100, modality="gwas"))
        ka, kb = a.retained(), b.retained()
        for j in only:
            for g in (1, 2, 3):
                x, y = a.labels[ka, j] == g, b.labels[kb, j] == g
                se = math.hypot(mc_se(x), mc_se(y))
                if se > 0:
                    max_z = max(max_z, abs(x.mean() - y.mean()) / se)
    report(9, max_z <= 3, f"GWAS-only genes, joint vs GWAS-only fit: max |diff| / s.e. = {max_z:.2f} (<= 3)")


# 10 ---------------------------------------------------------------------

def _brute_auc(score, truth):
    pos, neg = score[truth], score[~truth]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (pos.size * neg.size)


def test_c10_metric_oracles(report):
    rng = np.random.default_rng(10)
    mismatches = 0
    for _ in range(200):
        J = int(rng.integers(2, 51))
        truth = rng.random(J) < 0.4
        truth[0], truth[1] = True, False
        p_null = rng.choice(np.linspace(0, 1, 11), J) if rng.random() < 0.5 else rng.random(J)
        s = ScoredGeneSet(p_null, truth)
        mismatches += auc(s) != _brute_auc(s.score, truth)
    hand = ScoredGeneSet(np.array([0.9, 0.2, 0.5]), np.array([False, True, False]))
    log_err = abs(log_score(hand) - (-math.log(0.9) - math.log(0.8) - math.log(0.5)))
    brier_err = abs(brier_score(hand) - ((1 - 0.9) ** 2 + 0.2 ** 2 + 0.5 ** 2))
    ok = mismatches == 0 and log_err <= 1e-12 and brier_err <= 1e-12
    report(10, ok, f"AUC mismatches vs brute force: {mismatches}/200; hand-case log error {log_err:.1e}, "
                   f"Brier error {brier_err:.1e} (tol 1e-12)")


# 11 ---------------------------------------------------------------------

def test_c11_simulation_generator(report):
    cfg = SimConfig(J=10**6, n_ben=0, n_del=0, n_gwas=1)
    _, truth = gen_gwas(cfg, np.random.default_rng(11))
    maf = truth.extras["maf"]
    mass = float(np.mean((maf > 0.2) & (maf < 0.5)))
    rng = np.random.default_rng(12)
    base = rng.poisson(1000, (400, 4))
    k = np.repeat([0, 1], 200)
    target = np.array([0.5, -0.5, 1.0, -1.0])
    out = thin_counts(base, k, target, rng)
    realized = (out[k == 1].sum(0) / out[k == 0].sum(0)) / (base[k == 1].sum(0) / base[k == 0].sum(0))
    rel = np.abs(realized / np.exp2(target) - 1)
    totals_ok = bool(out.sum(0).min() >= 1e5)
    ok = abs(mass - 0.977) <= 0.002 and rel.max() < 0.05 and totals_ok
    report(11, ok, f"Beta(20,35) mass in (0.2,0.5) = {mass:.4f} (0.977 +/- 0.002); "
                   f"max thinning ratio error {rel.max():.2%} (< 5%) at totals >= 1e5: {totals_ok}")


# 12 ---------------------------------------------------------------------

def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c12_determinism(report, tmp_path):
    conf = tmp_path / "run.toml"
    conf.write_text("seed = 12\n[simulate]\nJ = 12\nn_ben = 1\nn_del = 1\nn_gwas = 150\nn_rna = 12\nreps = 2\n"
                    "[chain]\nn_iter = 150\nchains = 2\n")
    for d in ("a", "b"):
        root = tmp_path / d
        assert main(["simulate", "--config", str(conf), "--out", str(root / "sim")]) == 0
        for rep in ("rep_000", "rep_001"):
            assert main(["fit", "--config", str(conf), "--data", str(root / "sim" / rep),
                         "--out", str(root / "fit" / rep)]) == 0
        assert main(["summarize", "--trace", str(root / "fit" / "rep_000" / "trace_chain0.jsonl"),
                     str(root / "fit" / "rep_000" / "trace_chain1.jsonl"), "--out", str(root / "summary")]) == 0
        assert main(["score", "--out", str(root / "metrics.tsv"),
                     "--truth", str(root / "sim" / "rep_000" / "truth.tsv"), str(root / "sim" / "rep_001" / "truth.tsv"),
                     "--summary", f"joint={root / 'fit' / 'rep_000' / 'summary.tsv'}",
                     "--summary", f"joint={root / 'fit' / 'rep_001' / 'summary.tsv'}"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing
    report(12, ok, f"{len(a)} files across simulate/fit/summarize/score; byte-identical on rerun: "
                   f"{'all' if ok else differing}")

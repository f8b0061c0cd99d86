"""Command-line front end: ``threegroups {simulate,fit,score,summarize}``.

Settings come from an optional TOML file (``--config``) with sections
``[simulate]``, ``[data]``, ``[chain]`` and ``[prior]`` plus a top-level
``seed``; command-line flags override the file. Outputs contain no
timestamps, so reruns with the same settings are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import math
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__, diagnostics, io, metrics, priors, simgen
from .model import validate_dataset
from .priors import DirichletConfig, PriorConfig, PriorFamily
from .sampler import MODALITY_SETS, ChainConfig, SamplerError, run_chain
from .trace import read_trace, summarize

log = logging.getLogger("threegroups")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3
FAMILIES = [f.value for f in PriorFamily]


class ValidationError(ValueError):
    pass


# ----------------------------------------------------------------- config

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _build(cls, section: dict, what: str, **overrides):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ValidationError(f"[{what}] unknown keys: {', '.join(unknown)}")
    kw = dict(section)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"[{what}] {exc}") from None


def prior_from(section: dict, family=None) -> PriorConfig:
    section = dict(section)
    d = {k: section.pop(k) for k in ("kappa", "a") if k in section}
    if "a" in d:
        d["a"] = tuple(d["a"])
    dirichlet = _build(DirichletConfig, d, "prior")
    return _build(PriorConfig, section, "prior", family=family, dirichlet=dirichlet)


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise ValidationError(f"output {out} exists and is not empty (use --force)")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    section = dict(cfg.get("simulate", {}))
    reps = args.reps if args.reps is not None else section.pop("reps", 1)
    section.pop("reps", None)
    seed = args.seed if args.seed is not None else cfg.get("seed", section.pop("seed", 0))
    section.pop("seed", None)
    sim = _build(simgen.SimConfig, section, "simulate", seed=seed)
    if args.out is None:
        raise ValidationError("--out is required")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"output {out} exists and is not empty (use --force)")
    simgen.gen_replicates(sim, int(reps), out, force=args.force, workers=args.workers or 1)
    print(f"wrote {reps} replicate(s) to {out}")
    return EXIT_OK


# -------------------------------------------------------------------- fit

DATA_KEYS = ("dir", "rna_counts", "rna_samples", "rna_genes", "rna_covariates",
             "gwas_samples", "gwas_carriers", "gwas_genotypes", "variant_map", "gwas_covariates")


def _data_paths(section: dict, data_dir=None) -> dict:
    unknown = sorted(set(section) - set(DATA_KEYS))
    if unknown:
        raise ValidationError(f"[data] unknown keys: {', '.join(unknown)}")
    base = data_dir or section.get("dir")
    paths = {}
    if base is not None:
        base = Path(base)
        if not base.is_dir():
            raise ValidationError(f"data directory not found: {base}")
        defaults = {
            "rna_counts": io.RNA_FILES["counts"], "rna_samples": io.RNA_FILES["samples"],
            "rna_genes": io.RNA_FILES["genes"], "rna_covariates": "rna_covariates.tsv",
            "gwas_samples": io.GWAS_FILES["samples"], "gwas_carriers": io.GWAS_FILES["carriers"],
            "gwas_covariates": "gwas_covariates.tsv",
        }
        for k, name in defaults.items():
            if (base / name).exists():
                paths[k] = base / name
    for k in DATA_KEYS[1:]:
        if k in section:
            paths[k] = Path(section[k])
    return paths


def load_inputs(paths: dict, modality: str):
    """Load only the datasets the modality set needs and validate them."""
    wanted = MODALITY_SETS[modality]
    for k, p in paths.items():
        if k.split("_")[0] in wanted or (k == "variant_map" and "gwas" in wanted):
            if not Path(p).exists():
                raise ValidationError(f"input file not found: {p}")
    rna = gwas = None
    try:
        if "rna" in wanted:
            if "rna_counts" not in paths or "rna_samples" not in paths:
                raise ValidationError("RNA-seq input needs counts and samples tables")
            rna = io.load_rna_dataset(paths["rna_counts"], paths["rna_samples"],
                                      paths.get("rna_genes"), paths.get("rna_covariates"))
        if "gwas" in wanted:
            if "gwas_samples" not in paths:
                raise ValidationError("GWAS input needs a samples table with outcomes")
            gwas = io.load_gwas_dataset(paths["gwas_samples"], paths.get("gwas_carriers"),
                                        paths.get("gwas_genotypes"), paths.get("variant_map"),
                                        paths.get("gwas_covariates"))
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    problems = []
    for name, ds in (("rna", rna), ("gwas", gwas)):
        if ds is not None:
            problems += [f"{name}: {p}" for p in validate_dataset(ds)]
    if problems:
        raise ValidationError("invalid input:\n  " + "\n  ".join(problems))
    return rna, gwas


def ram_estimate(rna, gwas, n_iter, thinning, chains) -> int:
    """Rough bytes for data caches plus in-memory traces."""
    total = 0
    J = 0
    n_mod = 0
    if rna is not None:
        n, g = np.shape(rna.counts)
        total += 4 * n * g * 8  # counts, lgamma(y+1), offsets, linear predictor
        J = max(J, g)
        n_mod += 2  # effect + dispersion
    if gwas is not None:
        n, g = np.shape(gwas.carrier)
        total += n * g * 8 + 4 * n * 8
        J = max(J, g)
        n_mod += 1
    records = n_iter // thinning
    total += chains * records * J * (1 + 8 * n_mod)
    return total


def _chain_job(job):
    rna, gwas, cc, chain_id, path, extra = job
    return run_chain(rna, gwas, cc, chain_id, path, extra)


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    chain_sec = dict(cfg.get("chain", {}))
    n_chains = args.chains or chain_sec.pop("chains", 1)
    chain_sec.pop("chains", None)
    workers = args.workers or chain_sec.pop("workers", 1)
    chain_sec.pop("workers", None)
    seed = args.seed if args.seed is not None else cfg.get("seed", chain_sec.pop("seed", 0))
    chain_sec.pop("seed", None)
    prior = prior_from(cfg.get("prior", {}), args.family)
    cc = _build(ChainConfig, chain_sec, "chain", n_iter=args.iters, burn_in=args.burnin,
                modality=args.modality, seed=seed, prior=prior)
    paths = _data_paths(dict(cfg.get("data", {})), args.data)
    rna, gwas = load_inputs(paths, cc.modality)
    if args.out is None:
        raise ValidationError("--out is required")

    resolved = {
        "chain": {k: v for k, v in dataclasses.asdict(cc).items() if k != "prior"},
        "prior": dataclasses.asdict(prior),
        "chains": n_chains,
        "inputs": {k: Path(p).name for k, p in sorted(paths.items())},
        "version": __version__,
    }
    h = io.config_hash(resolved)
    if args.max_ram_estimate:
        est = ram_estimate(rna, gwas, cc.n_iter, cc.thinning, n_chains)
        print(f"estimated state size: {est / 2**20:.1f} MiB")
    out = _prepare_out(args.out, args.force)

    extra = {"config_hash": h, "seed": cc.seed,
             "dirichlet": {"kappa": prior.dirichlet.kappa, "a": list(prior.dirichlet.a)}}
    jobs = [(rna, gwas, cc, c, out / f"trace_chain{c}.jsonl", {**extra, "chain_id": c})
            for c in range(n_chains)]
    t0 = time.perf_counter()
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(min(workers, n_chains)) as pool:
            traces = list(pool.map(_chain_job, jobs))
    else:
        traces = [_chain_job(j) for j in jobs]
    log.info("sampling took %.1f s", time.perf_counter() - t0)

    summary = summarize(traces)
    io.write_summary(out / "summary.tsv", summary, h)
    io.write_table(out / "diagnostics.tsv", ["chain", "block", "metric", "value"],
                   diagnostic_rows(traces), "diagnostics", h)
    print(f"wrote {n_chains} trace(s), summary.tsv and diagnostics.tsv to {out}")
    return EXIT_OK


def diagnostic_rows(traces):
    rows = []
    for c, t in enumerate(traces):
        keep = t.retained()
        for k, v in sorted(t.acceptance.items()):
            rows.append((c, k, "acceptance", float(v)))
        for k, v in sorted(t.diagnostics.items()):
            rows.append((c, "chain", k, float(v)))
        if keep.sum() < 4:
            continue
        rows.append((c, "logpost", "ess", diagnostics.ess(t.logpost[keep])))
        lab_ess = diagnostics.label_ess(t.labels[keep])
        rows.append((c, "labels", "ess_min", float(lab_ess.min())))
        rows.append((c, "labels", "ess_median", float(np.median(lab_ess))))
        for m, eff in sorted(t.effects.items()):
            rows.append((c, f"effect_{m}", "ess_min",
                         float(min(diagnostics.ess(eff[keep][:, j]) for j in range(eff.shape[1])))))
        for i, name in enumerate(t.hyper_names):
            rows.append((c, name, "ess", diagnostics.ess(t.hyper[keep][:, i])))
        for g, name in enumerate(("null", "del", "ben")):
            rows.append((c, f"lambda_{name}", "ess", diagnostics.ess(t.lam[keep][:, g])))
    return rows


# ------------------------------------------------------------------ score

def _parse_summary_args(items):
    out = {}
    for item in items:
        model, sep, path = item.partition("=")
        if not sep or not model or not path:
            raise ValidationError(f"--summary expects MODEL=PATH, got {item!r}")
        out.setdefault(model, []).append(Path(path))
    return out


def cmd_score(args) -> int:
    truths = [Path(p) for p in args.truth]
    summaries = _parse_summary_args(args.summary)
    if not summaries:
        raise ValidationError("at least one --summary MODEL=PATH is required")
    sets = []
    for model, paths in summaries.items():
        if len(paths) != len(truths):
            raise ValidationError(f"model {model!r}: {len(paths)} summaries for {len(truths)} truth files")
        for tpath, spath in zip(truths, paths):
            t_ids, labels = io.read_truth(tpath)
            s_ids, p_null = io.read_summary_probs(spath)
            if set(t_ids) != set(s_ids):
                only_t = sorted(set(t_ids) - set(s_ids))
                only_s = sorted(set(s_ids) - set(t_ids))
                raise ValidationError(
                    f"gene ids differ between {tpath} and {spath}:\n"
                    f"  only in truth: {only_t[:20]}\n  only in summary: {only_s[:20]}")
            order = {g: i for i, g in enumerate(s_ids)}
            p = p_null[[order[g] for g in t_ids]]
            sets.append(metrics.ScoredGeneSet.from_labels(p, labels, model, tpath.parent.name or str(tpath)))
    rows = metrics.metrics_table(sets)
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
    h = io.config_hash({"truth": [digest(t) for t in truths],
                        "summaries": {m: [digest(p) for p in v] for m, v in summaries.items()}})
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ValidationError(f"output {out} exists (use --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_table(out, ["model", "replicate", "metric", "value"], rows, "metrics", h)
    print(f"wrote {len(rows)} metric rows to {out}")
    return EXIT_OK


# -------------------------------------------------------------- summarize

def log_prior_curve(J: int, config: DirichletConfig, step: int = 2):
    """(k, k2, k3, log prior) for k non-null genes split evenly, k = 0, step, ..., J."""
    rows = []
    for k in range(0, J + 1, step):
        k2 = k // 2
        k3 = k - k2
        rows.append((k, k2, k3, priors.log_model_prior(J - k, k2, k3, config)))
    return rows


def _ratio_cell(value, mostly_null):
    if mostly_null:
        return "*"
    return "NA" if math.isnan(value) else repr(float(math.exp(value)))


def report_rows(summary):
    mods = list(summary.cond_effect)
    selected = {s.gene_id: s.group for s in metrics.median_probability_select(summary)}
    rows = []
    for j, g in enumerate(summary.gene_ids):
        star = bool(summary.mostly_null[j])
        row = [g, summary.p_null[j], summary.p_ben[j], summary.p_del[j]]
        if "gwas" in mods:
            row.append(_ratio_cell(summary.cond_effect["gwas"][j], star))
        if "rna" in mods:
            row.append(_ratio_cell(summary.cond_effect["rna"][j], star))
            row.append(summary.dispersion[j])
        row += [int(g in selected), selected.get(g, "Null")]
        rows.append(row)
    cols = ["gene_id", "p_null", "p_ben", "p_del"]
    if "gwas" in mods:
        cols.append("odds_ratio")
    if "rna" in mods:
        cols += ["fold_change", "dispersion"]
    cols += ["mm_selected", "mm_group"]
    return cols, rows


def cmd_summarize(args) -> int:
    traces = []
    for p in args.trace:
        if not Path(p).exists():
            raise ValidationError(f"trace not found: {p}")
        try:
            t = read_trace(p)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if t.truncated:
            print(f"warning: {p} is truncated; report uses {len(t)} complete records", file=sys.stderr)
        traces.append(t)
    if len({tuple(t.gene_ids) for t in traces}) != 1:
        raise ValidationError("traces do not share the same genes")
    burn_in = args.burnin if args.burnin is not None else traces[0].burn_in
    try:
        summary = summarize(traces, burn_in)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    meta = traces[0].meta
    d = meta.get("dirichlet", {})
    dcfg = DirichletConfig(d.get("kappa", 1.0), tuple(d.get("a", (1.0, 1.0, 1.0))))
    h = io.config_hash({"traces": [t.meta.get("config_hash") for t in traces],
                        "records": [len(t) for t in traces], "burn_in": burn_in})
    out = _prepare_out(args.out, args.force)
    cols, rows = report_rows(summary)
    io.write_table(out / "report.tsv", cols, rows, "report", h)
    for m, pts in metrics.volcano_data(summary).items():
        io.write_table(out / f"volcano_{m}.tsv", ["gene_id", "marginal_log_effect", "p_nonnull", "mm_cutoff"],
                       [(g, x, y, metrics.MM_CUTOFF) for g, x, y in pts], "volcano", h)
    io.write_table(out / "log_prior.tsv", ["k", "k2", "k3", "log_prior"],
                   log_prior_curve(len(summary.gene_ids), dcfg), "log_prior", h)
    print(f"wrote report.tsv, volcano tables and log_prior.tsv to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="threegroups", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="TOML configuration file")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (file for score)")
        sp.add_argument("--force", action="store_true", help="overwrite existing output")
        sp.add_argument("--workers", type=int, help="worker processes")

    s = sub.add_parser("simulate", help="write simulated replicate archives")
    common(s)
    s.add_argument("--reps", type=int, help="number of replicates")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run MCMC chains on one dataset")
    common(f)
    f.add_argument("--data", help="directory holding the standard dataset files")
    f.add_argument("--modality", choices=sorted(MODALITY_SETS))
    f.add_argument("--family", choices=FAMILIES)
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--max-ram-estimate", action="store_true",
                   help="print the estimated state size before sampling")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("score", help="score summaries against truth files")
    common(c, seed=False)
    c.add_argument("--truth", nargs="+", required=True, help="truth files, one per replicate")
    c.add_argument("--summary", action="append", default=[],
                   help="MODEL=PATH, repeated once per replicate in --truth order")
    c.set_defaults(func=cmd_score)

    m = sub.add_parser("summarize", help="tables from one or more traces")
    common(m, seed=False)
    m.add_argument("--trace", nargs="+", required=True)
    m.add_argument("--burnin", type=int)
    m.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out", None) is None and args.command == "score":
        parser.error("score needs --out")
    try:
        return args.func(args)
    except (ValidationError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SamplerError, FloatingPointError, MemoryError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT

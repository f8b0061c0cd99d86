"""Delimited-text readers and writers.

Files ending in ``.csv`` are comma separated, everything else is tab
separated. Every file we write starts with a ``#`` comment line carrying the
schema version and the hash of the configuration that produced it; readers
skip ``#`` lines.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .model import GwasDataset, RnaSeqDataset, collapse_snvs

SCHEMA_VERSION = 1
MISSING = {"", "NA", "NaN", "nan", "NULL"}


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_line(kind: str, cfg_hash: str) -> str:
    return f"# threegroups schema={SCHEMA_VERSION} kind={kind} config={cfg_hash}"


def _delim(path) -> str:
    return "," if str(path).lower().endswith(".csv") else "\t"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "NA" if math.isnan(x) else repr(float(x))
    return str(x)


def write_table(path, columns, rows, kind: str, cfg_hash: str = "none") -> Path:
    path = Path(path)
    d = _delim(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header_line(kind, cfg_hash) + "\n")
        fh.write(d.join(columns) + "\n")
        for row in rows:
            fh.write(d.join(fmt(x) for x in row) + "\n")
    return path


def read_table(path, allow_missing=False):
    """Return (column names, list of string rows) with comment lines skipped."""
    path = Path(path)
    d = _delim(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty table")
    columns = lines[0].split(d)
    rows = []
    for n, ln in enumerate(lines[1:], start=2):
        fields = ln.split(d)
        if len(fields) != len(columns):
            raise ValueError(f"{path}: row {n} has {len(fields)} fields, expected {len(columns)}")
        if not allow_missing and any(f.strip() in MISSING for f in fields):
            raise ValueError(f"{path}: missing value in row {n}")
        rows.append(fields)
    return columns, rows


def read_table_header(path) -> dict[str, str]:
    """Parse the ``# threegroups`` header line into a dict (empty if absent)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith("# threegroups"):
        return {}
    return dict(tok.split("=", 1) for tok in first[2:].split()[1:] if "=" in tok)


def read_matrix(path, dtype=float):
    """Rows are individuals/samples: first column ids, remaining columns values."""
    columns, rows = read_table(path)
    ids = [r[0] for r in rows]
    values = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(columns) - 1)
    return ids, columns[1:], values.astype(dtype)


def read_counts(path):
    """Counts with genes as rows and samples as columns; returns (gene_ids, sample_ids, genes x samples)."""
    gene_ids, sample_ids, mat = read_matrix(path)
    if (mat < 0).any() or (mat != np.round(mat)).any():
        raise ValueError(f"{path}: counts must be non-negative integers")
    return gene_ids, sample_ids, mat.astype(np.int64)


def write_counts(path, gene_ids, sample_ids, genes_by_samples, cfg_hash="none"):
    rows = ([g, *map(int, row)] for g, row in zip(gene_ids, genes_by_samples))
    return write_table(path, ["gene_id", *sample_ids], rows, "counts", cfg_hash)


def read_variant_map(path):
    columns, rows = read_table(path)
    if len(columns) != 2:
        raise ValueError(f"{path}: variant-gene map must have exactly two columns")
    return [(r[0], r[1]) for r in rows]


# -------------------------------------------------------------- datasets

RNA_FILES = {"counts": "rna_counts.tsv", "samples": "rna_samples.tsv", "genes": "rna_genes.tsv"}
GWAS_FILES = {"carriers": "gwas_carriers.tsv", "samples": "gwas_samples.tsv"}


def _reorder(ids, values, wanted, what):
    pos = {x: i for i, x in enumerate(ids)}
    missing = [w for w in wanted if w not in pos]
    if missing:
        raise ValueError(f"{what}: no entry for {missing[:5]}")
    return values[[pos[w] for w in wanted]]


def load_rna_dataset(counts, samples, genes=None, covariates=None) -> RnaSeqDataset:
    """Assemble an RNA-seq dataset.

    ``samples`` holds ``sample_id, treatment, log_library_size``; ``genes``
    holds ``gene_id, log_gene_length`` (zeros when omitted).
    """
    gene_ids, sample_ids, mat = read_counts(counts)
    s_ids, s_cols, s_val = read_matrix(samples)
    need = ("treatment", "log_library_size")
    if any(c not in s_cols for c in need):
        raise ValueError(f"{samples}: needs columns {need}")
    s_val = _reorder(s_ids, s_val, sample_ids, str(samples))
    treatment = s_val[:, s_cols.index("treatment")].astype(int)
    lib = s_val[:, s_cols.index("log_library_size")]
    if genes is not None:
        g_ids, g_cols, g_val = read_matrix(genes)
        length = _reorder(g_ids, g_val, gene_ids, str(genes))[:, g_cols.index("log_gene_length")]
    else:
        length = np.zeros(len(gene_ids))
    cov = None
    if covariates is not None:
        c_ids, _, c_val = read_matrix(covariates)
        cov = _reorder(c_ids, c_val, sample_ids, str(covariates))
    return RnaSeqDataset(mat.T, treatment, lib, length, gene_ids, cov, sample_ids)


def save_rna_dataset(directory, ds: RnaSeqDataset, cfg_hash="none"):
    directory = Path(directory)
    write_counts(directory / RNA_FILES["counts"], ds.gene_ids, ds.sample_ids, np.asarray(ds.counts).T, cfg_hash)
    write_table(directory / RNA_FILES["samples"], ["sample_id", "treatment", "log_library_size"],
                zip(ds.sample_ids, np.asarray(ds.treatment, dtype=int), ds.log_library_size), "rna_samples", cfg_hash)
    write_table(directory / RNA_FILES["genes"], ["gene_id", "log_gene_length"],
                zip(ds.gene_ids, ds.log_gene_length), "rna_genes", cfg_hash)
    if ds.covariates.shape[1]:
        cols = ["sample_id"] + [f"x{i + 1}" for i in range(ds.covariates.shape[1])]
        write_table(directory / "rna_covariates.tsv", cols,
                    ([s, *row] for s, row in zip(ds.sample_ids, ds.covariates)), "covariates", cfg_hash)


def load_gwas_dataset(samples, carriers=None, genotypes=None, variant_map=None, covariates=None) -> GwasDataset:
    """Assemble a GWAS dataset from a carrier matrix or from genotypes plus a variant-gene map."""
    s_ids, s_cols, s_val = read_matrix(samples)
    if "outcome" not in s_cols:
        raise ValueError(f"{samples}: needs an 'outcome' column")
    outcome = s_val[:, s_cols.index("outcome")]
    if carriers is not None:
        ind, gene_ids, mat = read_matrix(carriers)
    elif genotypes is not None and variant_map is not None:
        ind, variant_ids, geno = read_matrix(genotypes)
        mat, gene_ids = collapse_snvs(read_variant_map(variant_map), geno.astype(int), variant_ids)
    else:
        raise ValueError("need a carrier matrix or genotypes with a variant-gene map")
    mat = _reorder(ind, np.asarray(mat), s_ids, "carrier matrix")
    cov = None
    if covariates is not None:
        c_ids, _, c_val = read_matrix(covariates)
        cov = _reorder(c_ids, c_val, s_ids, str(covariates))
    return GwasDataset(outcome.astype(int), mat.astype(np.int8), gene_ids, cov, s_ids)


def save_gwas_dataset(directory, ds: GwasDataset, cfg_hash="none"):
    directory = Path(directory)
    write_table(directory / GWAS_FILES["carriers"], ["individual_id", *ds.gene_ids],
                ([i, *map(int, row)] for i, row in zip(ds.individual_ids, ds.carrier)), "carriers", cfg_hash)
    write_table(directory / GWAS_FILES["samples"], ["individual_id", "outcome"],
                zip(ds.individual_ids, np.asarray(ds.outcome, dtype=int)), "gwas_samples", cfg_hash)
    if ds.covariates.shape[1]:
        cols = ["individual_id"] + [f"x{i + 1}" for i in range(ds.covariates.shape[1])]
        write_table(directory / "gwas_covariates.tsv", cols,
                    ([s, *row] for s, row in zip(ds.individual_ids, ds.covariates)), "covariates", cfg_hash)


# ------------------------------------------------------------ truth files

TRUTH_COLUMNS = ["gene_id", "label", "gwas_effect", "rna_log_fc"]


def write_truth(path, gene_ids, labels, gwas_effect, rna_log_fc, cfg_hash="none"):
    rows = zip(gene_ids, np.asarray(labels, dtype=int), gwas_effect, rna_log_fc)
    return write_table(path, TRUTH_COLUMNS, rows, "truth", cfg_hash)


def read_truth(path):
    """Return (gene_ids, labels as int array)."""
    columns, rows = read_table(path)
    if columns[:2] != TRUTH_COLUMNS[:2]:
        raise ValueError(f"{path}: not a truth file")
    return [r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int8)


# --------------------------------------------------------- summary tables

def summary_columns(modalities) -> list[str]:
    cols = ["gene_id", "p_null", "p_ben", "p_del"]
    for m in modalities:
        cols += [f"cond_{m}", f"marg_{m}", f"present_{m}"]
    if "rna" in modalities:
        cols.append("dispersion")
    return cols


def write_summary(path, summary, cfg_hash="none"):
    """Per-gene posterior summary; effects on the log scale, NA where undefined."""
    mods = list(summary.cond_effect)
    rows = []
    for j, g in enumerate(summary.gene_ids):
        row = [g, summary.p_null[j], summary.p_ben[j], summary.p_del[j]]
        for m in mods:
            row += [summary.cond_effect[m][j], summary.marginal_effect[m][j], bool(summary.present[m][j])]
        if "rna" in mods:
            row.append(summary.dispersion[j])
        rows.append(row)
    return write_table(path, summary_columns(mods), rows, "summary", cfg_hash)


def read_summary_probs(path):
    """Return (gene_ids, p_null) from a summary table."""
    columns, rows = read_table(path, allow_missing=True)
    if columns[:2] != ["gene_id", "p_null"]:
        raise ValueError(f"{path}: not a summary table")
    return [r[0] for r in rows], np.array([float(r[1]) for r in rows])

"""Domain types shared by every part of the three-groups model.

Labels are stored as small integers 1/2/3 (null, deleterious, beneficial)
so label vectors can live in plain numpy arrays.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

STICK_TOL = 1e-12


class GeneLabel(enum.IntEnum):
    NULL = 1
    DELETERIOUS = 2
    BENEFICIAL = 3

    @property
    def sign(self) -> int:
        """Sign of the effect carried by a gene with this label (0 for null)."""
        return {GeneLabel.NULL: 0, GeneLabel.DELETERIOUS: 1, GeneLabel.BENEFICIAL: -1}[self]

    @classmethod
    def from_sign(cls, sign: int) -> "GeneLabel":
        if sign > 0:
            return cls.DELETERIOUS
        if sign < 0:
            return cls.BENEFICIAL
        return cls.NULL


@dataclass
class LabelVector:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.size and not np.isin(self.labels, (1, 2, 3)).all():
            raise ValueError("labels must be 1 (null), 2 (deleterious) or 3 (beneficial)")

    @property
    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.labels, minlength=4)
        return int(c[1]), int(c[2]), int(c[3])

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class GroupProbabilities:
    """Group probability vector ``lam`` = (null, deleterious, beneficial)."""

    lam: tuple[float, float, float]

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != (3,) or (lam < 0).any() or (lam > 1).any():
            raise ValueError(f"invalid group probabilities {self.lam!r}")
        if abs(lam.sum() - 1.0) > STICK_TOL:
            raise ValueError(f"group probabilities sum to {lam.sum()!r}, not 1")

    @classmethod
    def from_sticks(cls, v1: float, v2: float) -> "GroupProbabilities":
        rest = 1.0 - v1
        return cls((float(v1), float(rest * v2), float(rest * (1.0 - v2))))

    def to_sticks(self) -> tuple[float, float]:
        l1, l2, l3 = self.lam
        tail = l2 + l3
        # v2 is arbitrary when the stick is used up; 0.5 keeps round trips exact
        v2 = l2 / tail if tail > 0 else 0.5
        return float(l1), float(v2)


def _as_design(cov, n):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        cov = cov.reshape(-1, 1)
    if cov.ndim != 2 or cov.shape[0] != n:
        raise ValueError(f"covariates must have {n} rows")
    return cov


@dataclass
class RnaSeqDataset:
    """Counts are stored samples x genes."""

    counts: np.ndarray
    treatment: np.ndarray
    log_library_size: np.ndarray
    log_gene_length: np.ndarray
    gene_ids: list[str]
    covariates: np.ndarray | None = None
    sample_ids: list[str] | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.treatment = np.asarray(self.treatment)
        self.log_library_size = np.asarray(self.log_library_size, dtype=float)
        self.log_gene_length = np.asarray(self.log_gene_length, dtype=float)
        self.gene_ids = [str(g) for g in self.gene_ids]
        n = self.counts.shape[0]
        if self.covariates is None:
            self.covariates = np.zeros((n, 0))
        self.covariates = _as_design(self.covariates, n)
        if self.sample_ids is None:
            self.sample_ids = [f"S{i + 1}" for i in range(n)]
        if self.counts.ndim != 2:
            raise ValueError("counts must be a samples x genes matrix")
        if self.counts.shape[1] != len(self.gene_ids):
            raise ValueError("counts columns do not match gene_ids")
        for name, arr, size in (
            ("treatment", self.treatment, n),
            ("log_library_size", self.log_library_size, n),
            ("log_gene_length", self.log_gene_length, len(self.gene_ids)),
            ("sample_ids", self.sample_ids, n),
        ):
            if len(arr) != size:
                raise ValueError(f"{name} has length {len(arr)}, expected {size}")

    @property
    def n_samples(self) -> int:
        return self.counts.shape[0]

    @property
    def n_genes(self) -> int:
        return self.counts.shape[1]


@dataclass
class GwasDataset:
    outcome: np.ndarray
    carrier: np.ndarray
    gene_ids: list[str]
    covariates: np.ndarray | None = None
    individual_ids: list[str] | None = None

    def __post_init__(self):
        self.outcome = np.asarray(self.outcome)
        self.carrier = np.asarray(self.carrier)
        self.gene_ids = [str(g) for g in self.gene_ids]
        n = len(self.outcome)
        self.carrier = self.carrier.reshape(n, len(self.gene_ids))
        if self.covariates is None:
            self.covariates = np.zeros((n, 0))
        self.covariates = _as_design(self.covariates, n)
        if self.individual_ids is None:
            self.individual_ids = [f"I{i + 1}" for i in range(n)]
        if len(self.individual_ids) != n:
            raise ValueError("individual_ids length does not match outcome")

    @property
    def n_individuals(self) -> int:
        return len(self.outcome)

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)


def validate_dataset(dataset) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems: list[str] = []

    def _nonfinite_rows(name, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim == 1:
            mat = mat[:, None]
        bad = np.where(~np.isfinite(mat).all(axis=1))[0]
        for row in bad:
            problems.append(f"{name}: non-finite value in row {row + 1}")

    if isinstance(dataset, RnaSeqDataset):
        counts = np.asarray(dataset.counts, dtype=float)
        if not np.isfinite(counts).all():
            problems.append("counts: non-finite entries")
        else:
            if (counts < 0).any():
                problems.append(f"counts: {(counts < 0).sum()} negative entries")
            if (counts != np.round(counts)).any():
                problems.append("counts: non-integer entries")
        if not np.isin(dataset.treatment, (0, 1)).all():
            problems.append("treatment: entries outside {0,1}")
        _nonfinite_rows("log_library_size", dataset.log_library_size)
        _nonfinite_rows("log_gene_length", dataset.log_gene_length)
        _nonfinite_rows("covariates", dataset.covariates)
    elif isinstance(dataset, GwasDataset):
        bad = ~np.isin(dataset.carrier, (0, 1))
        if bad.any():
            for i, g in zip(*np.where(bad)):
                problems.append(
                    f"carrier: entry {dataset.carrier[i, g]!r} outside {{0,1}} "
                    f"at row {i + 1}, gene {dataset.gene_ids[g]}"
                )
        if not np.isin(dataset.outcome, (0, 1)).all():
            problems.append("outcome: entries outside {0,1}")
        _nonfinite_rows("covariates", dataset.covariates)
    else:
        raise TypeError(f"cannot validate {type(dataset).__name__}")

    ids = dataset.gene_ids
    if len(set(ids)) != len(ids):
        problems.append("gene_ids: duplicate identifiers")
    return problems


@dataclass
class GeneAlignment:
    """Union of gene ids across modalities with per-modality index maps.

    ``index[m][c]`` is the union position of column ``c`` of modality ``m``;
    ``present[m]`` is a boolean mask over the union.
    """

    union_gene_ids: list[str]
    present: dict[str, np.ndarray] = field(default_factory=dict)
    index: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_genes(self) -> int:
        return len(self.union_gene_ids)

    def column_of(self, modality: str) -> np.ndarray:
        """Union-length array of modality column indices, -1 where absent."""
        col = np.full(self.n_genes, -1, dtype=np.int64)
        col[self.index[modality]] = np.arange(len(self.index[modality]))
        return col


def _check_unique(ids: Sequence[str], name: str) -> None:
    seen = set()
    for g in ids:
        if g in seen:
            raise ValueError(f"duplicate gene id {g!r} in {name} gene list")
        seen.add(g)


def align_genes(rna_ids: Sequence[str] | None, gwas_ids: Sequence[str] | None) -> GeneAlignment:
    """Union of gene ids in first-seen order (RNA-seq ids first)."""
    lists = {m: [str(g) for g in ids] for m, ids in (("rna", rna_ids), ("gwas", gwas_ids)) if ids is not None}
    for m, ids in lists.items():
        _check_unique(ids, m)
    union: list[str] = []
    pos: dict[str, int] = {}
    for ids in lists.values():
        for g in ids:
            if g not in pos:
                pos[g] = len(union)
                union.append(g)
    aln = GeneAlignment(union)
    for m, ids in lists.items():
        idx = np.array([pos[g] for g in ids], dtype=np.int64)
        mask = np.zeros(len(union), dtype=bool)
        mask[idx] = True
        aln.index[m] = idx
        aln.present[m] = mask
    return aln


def collapse_snvs(variant_gene_map, genotypes, variant_ids=None, gene_ids=None):
    """Collapse a genotype matrix to binary gene-carrier indicators.

    Dominant coding: an individual carries gene ``g`` when at least one minor
    allele is present among the variants mapped to ``g``.

    Parameters
    ----------
    variant_gene_map : iterable of (variant, gene)
        A variant may map to several genes.
    genotypes : array_like, shape (n_individuals, n_variants)
        Minor-allele counts in {0, 1, 2}.
    variant_ids : sequence, optional
        Column labels of ``genotypes``; defaults to ``0..n_variants-1``.
    gene_ids : sequence, optional
        Output column order; defaults to first-seen order in the map.

    Returns
    -------
    carrier : ndarray of int8, shape (n_individuals, n_genes)
    gene_ids : list of str
    """
    geno = np.asarray(genotypes)
    if geno.ndim != 2:
        raise ValueError("genotypes must be an individuals x variants matrix")
    if not np.isin(geno, (0, 1, 2)).all():
        raise ValueError("genotype entries must be 0, 1 or 2")
    if variant_ids is None:
        variant_ids = list(range(geno.shape[1]))
    col = {v: i for i, v in enumerate(variant_ids)}

    by_gene: dict[str, list[int]] = {}
    dropped = 0
    for variant, gene in variant_gene_map:
        if variant not in col:
            dropped += 1
            continue
        by_gene.setdefault(str(gene), []).append(col[variant])
    if dropped:
        log.warning("%d variant-gene pairs refer to variants absent from the genotypes", dropped)
    mapped = {c for cols in by_gene.values() for c in cols}
    unmapped = geno.shape[1] - len(mapped)
    if unmapped:
        log.warning("dropping %d variants with no gene mapping", unmapped)

    if gene_ids is None:
        gene_ids = list(by_gene)
    carrier = np.zeros((geno.shape[0], len(gene_ids)), dtype=np.int8)
    minor = geno > 0
    for g, gene in enumerate(gene_ids):
        cols = by_gene.get(str(gene), [])
        if cols:
            carrier[:, g] = minor[:, cols].any(axis=1)
    return carrier, [str(g) for g in gene_ids]

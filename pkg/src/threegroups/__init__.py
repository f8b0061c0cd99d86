"""Three-groups Bayesian models for joint GWAS and RNA-seq gene selection."""

from .model import (
    GeneAlignment,
    GeneLabel,
    GroupProbabilities,
    GwasDataset,
    LabelVector,
    RnaSeqDataset,
    align_genes,
    collapse_snvs,
    validate_dataset,
)
from .priors import DirichletConfig, HyperState, PriorConfig, PriorFamily
from .sampler import ChainConfig, run_chain
from .trace import PosteriorSummary, Trace, summarize

__version__ = "0.1.0"

"""Scoring rules and classification metrics for posterior null probabilities."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .trace import PosteriorSummary

log = logging.getLogger(__name__)

EPS = 1e-12
MM_CUTOFF = 0.5


@dataclass
class ScoredGeneSet:
    """Posterior null probabilities paired with truth for one model on one replicate."""

    p_null: np.ndarray
    truth_nonnull: np.ndarray
    model: str = ""
    replicate: str = ""

    def __post_init__(self):
        self.p_null = np.asarray(self.p_null, dtype=float)
        self.truth_nonnull = np.asarray(self.truth_nonnull, dtype=bool)
        if self.p_null.shape != self.truth_nonnull.shape:
            raise ValueError("p_null and truth must have the same length")
        if ((self.p_null < 0) | (self.p_null > 1) | np.isnan(self.p_null)).any():
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def from_labels(cls, p_null, labels, model="", replicate=""):
        return cls(p_null, np.asarray(labels) != 1, model, replicate)

    @property
    def score(self) -> np.ndarray:
        """Non-null score, 1 - p_null."""
        return 1.0 - self.p_null


def log_score(s: ScoredGeneSet) -> float:
    """Two-class log score; lower is better. Probabilities are clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(s.p_null, EPS, 1.0 - EPS)
    p_true = np.where(s.truth_nonnull, 1.0 - p, p)
    return float(-np.log(p_true).sum())


def brier_score(s: ScoredGeneSet) -> float:
    return float(((s.score - s.truth_nonnull) ** 2).sum())


def auc(s: ScoredGeneSet) -> float | None:
    """Mann-Whitney AUC with ties counted one half; ``None`` when one class is absent."""
    pos = s.truth_nonnull
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        return None
    ranks = stats.rankdata(s.score)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def _rates(sets, cutoff):
    fpr, tpr = [], []
    for s in sets:
        call = s.score > cutoff
        fpr.append(call[~s.truth_nonnull].mean())
        tpr.append(call[s.truth_nonnull].mean())
    return np.array(fpr), np.array(tpr)


@dataclass
class TprResult:
    cutoff: float
    mean_fpr: float
    tpr: np.ndarray
    reached: bool
    message: str = ""


def tpr_at_mean_fpr(sets, target_fpr: float) -> TprResult:
    """Per-replicate TPR at the cutoff whose replicate-averaged FPR hits ``target_fpr``.

    A gene is called non-null when its score ``1 - p_null`` exceeds the
    cutoff. Candidate cutoffs are the pooled distinct scores (plus one just
    below the smallest); mean FPR is non-increasing in the cutoff, so
    bisection finds the smallest cutoff with mean FPR <= target. When no
    cutoff lands exactly on the target the result is the nearest operating
    point not above it, and ``reached`` is False with a diagnostic message.
    """
    sets = [s for s in sets if s.truth_nonnull.any() and (~s.truth_nonnull).any()]
    if not sets:
        raise ValueError("need at least one replicate containing both classes")
    grid = np.unique(np.concatenate([s.score for s in sets]))
    grid = np.concatenate([[np.nextafter(grid[0], -np.inf)], grid])
    lo, hi = 0, len(grid) - 1  # mean FPR at grid[hi] is 0 (nothing called)
    while lo < hi:
        mid = (lo + hi) // 2
        if _rates(sets, grid[mid])[0].mean() <= target_fpr:
            hi = mid
        else:
            lo = mid + 1
    cutoff = float(grid[lo])
    fpr, tpr = _rates(sets, cutoff)
    mean_fpr = float(fpr.mean())
    reached = bool(np.isclose(mean_fpr, target_fpr, atol=1e-12))
    msg = ""
    if not reached:
        msg = f"target mean FPR {target_fpr} not attainable exactly; using {mean_fpr:.4g} at cutoff {cutoff:.6g}"
        log.debug(msg)
    return TprResult(cutoff, mean_fpr, tpr, reached, msg)


@dataclass
class Selection:
    gene_id: str
    p_null: float
    group: str


def median_probability_select(summary: PosteriorSummary) -> list[Selection]:
    """Genes with P_null strictly below 0.5, tagged by the larger of P_ben and P_del."""
    out = []
    for j, g in enumerate(summary.gene_ids):
        if summary.p_null[j] < MM_CUTOFF:
            group = "Beneficial" if summary.p_ben[j] > summary.p_del[j] else "Deleterious"
            out.append(Selection(g, float(summary.p_null[j]), group))
    return out


def volcano_data(summary: PosteriorSummary) -> dict[str, list[tuple[str, float, float]]]:
    """Per modality: (gene_id, marginal log effect, 1 - P_null) for genes with data there."""
    out = {}
    for m, eff in summary.marginal_effect.items():
        pres = summary.present[m]
        out[m] = [(g, float(eff[j]), float(1.0 - summary.p_null[j]))
                  for j, g in enumerate(summary.gene_ids) if pres[j]]
    return out


METRIC_NAMES = ("log_score", "brier", "auc", "tpr_fpr01", "tpr_fpr05")


def metrics_table(sets) -> list[tuple[str, str, str, float]]:
    """Tidy rows (model, replicate, metric, value) for every set, models scored separately.

    TPR cutoffs are chosen per model across its replicates. AUC is NaN for
    single-class replicates.
    """
    rows = []
    models = sorted({s.model for s in sets})
    for model in models:
        group = [s for s in sets if s.model == model]
        tprs = {}
        for name, target in (("tpr_fpr01", 0.01), ("tpr_fpr05", 0.05)):
            usable = [s for s in group if s.truth_nonnull.any() and (~s.truth_nonnull).any()]
            if usable:
                res = tpr_at_mean_fpr(usable, target)
                tprs[name] = {id(s): t for s, t in zip(usable, res.tpr)}
            else:
                tprs[name] = {}
        for s in group:
            a = auc(s)
            vals = {
                "log_score": log_score(s),
                "brier": brier_score(s),
                "auc": float("nan") if a is None else a,
                "tpr_fpr01": float(tprs["tpr_fpr01"].get(id(s), float("nan"))),
                "tpr_fpr05": float(tprs["tpr_fpr05"].get(id(s), float("nan"))),
            }
            rows.extend((model, s.replicate, k, vals[k]) for k in METRIC_NAMES)
    return rows

"""MCMC traces: in-memory storage, line-delimited JSON streaming and posterior summaries."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TRACE_SCHEMA = "threegroups-trace/1"
MOSTLY_NULL = 0.01


@dataclass
class Trace:
    gene_ids: list[str]
    modalities: tuple[str, ...]
    present: dict[str, np.ndarray]
    hyper_names: list[str]
    family: str = ""
    burn_in: int = 0
    iterations: list | np.ndarray = field(default_factory=list)
    labels: list | np.ndarray = field(default_factory=list)
    effects: dict = field(default_factory=dict)
    phi: list | np.ndarray | None = None
    hyper: list | np.ndarray = field(default_factory=list)
    lam: list | np.ndarray = field(default_factory=list)
    logpost: list | np.ndarray = field(default_factory=list)
    acceptance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    truncated: bool = False
    meta: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, gene_ids, modalities, present, hyper_names, family="", burn_in=0) -> "Trace":
        t = cls(list(gene_ids), tuple(modalities), dict(present), list(hyper_names), family, burn_in)
        t.effects = {m: [] for m in t.modalities}
        t.phi = [] if "rna" in t.modalities else None
        return t

    @classmethod
    def from_arrays(cls, gene_ids, labels, effects=None, phi=None, iterations=None, burn_in=0, present=None):
        """Build a finalized trace directly from arrays (one row per iteration)."""
        labels = np.atleast_2d(np.asarray(labels, dtype=np.int8))
        n, J = labels.shape
        effects = {m: np.asarray(v, dtype=float).reshape(n, J) for m, v in (effects or {}).items()}
        mods = tuple(effects)
        if present is None:
            present = {m: np.ones(J, dtype=bool) for m in mods}
        t = cls(list(gene_ids), mods, present, [], burn_in=burn_in)
        t.iterations = np.arange(n) if iterations is None else np.asarray(iterations)
        t.labels = labels
        t.effects = effects
        t.phi = None if phi is None else np.asarray(phi, dtype=float).reshape(n, J)
        t.hyper = np.zeros((n, 0))
        t.lam = np.full((n, 3), 1 / 3)
        t.logpost = np.zeros(n)
        return t

    def append(self, it, rec):
        self.iterations.append(it)
        self.labels.append(rec["labels"])
        for m in self.modalities:
            self.effects[m].append(rec["effects"][m])
        if self.phi is not None:
            self.phi.append(rec["phi"])
        self.hyper.append([rec["hyper"][k] for k in self.hyper_names])
        self.lam.append(rec["lam"])
        self.logpost.append(rec["logpost"])

    def finalize(self) -> "Trace":
        J = len(self.gene_ids)
        self.iterations = np.asarray(self.iterations, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1, J)
        self.effects = {m: np.asarray(v, dtype=float).reshape(-1, J) for m, v in self.effects.items()}
        if self.phi is not None:
            self.phi = np.asarray(self.phi, dtype=float).reshape(-1, J)
        self.hyper = np.asarray(self.hyper, dtype=float).reshape(-1, len(self.hyper_names))
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1, 3)
        self.logpost = np.asarray(self.logpost, dtype=float)
        return self

    def __len__(self):
        return len(self.iterations)

    def retained(self, burn_in=None) -> np.ndarray:
        burn_in = self.burn_in if burn_in is None else burn_in
        return np.asarray(self.iterations) >= burn_in

    def tallies(self, burn_in=None) -> np.ndarray:
        """Per-gene counts of retained iterations spent in each group (J x 3)."""
        lab = self.labels[self.retained(burn_in)]
        return np.stack([(lab == g).sum(axis=0) for g in (1, 2, 3)], axis=1)


class TraceWriter:
    """Streams a trace to disk as line-delimited JSON.

    The first line is a header with the schema version; each following line
    is one iteration with effects stored as sparse (gene index, value) pairs.
    A closing footer line marks a complete trace.
    """

    def __init__(self, path, trace: Trace, header_extra=None):
        self.path = Path(path)
        self.fh = open(self.path, "w", encoding="utf-8")
        header = {
            "schema": TRACE_SCHEMA,
            "gene_ids": trace.gene_ids,
            "modalities": list(trace.modalities),
            "present": {m: trace.present[m].astype(int).tolist() for m in trace.modalities},
            "hyper_names": trace.hyper_names,
            "family": trace.family,
            "burn_in": trace.burn_in,
        }
        header.update(header_extra or {})
        self._line(header)

    def _line(self, obj):
        self.fh.write(json.dumps(obj, separators=(",", ":")) + "\n")

    def write(self, it, rec):
        eff = {}
        for m, v in rec["effects"].items():
            nz = np.flatnonzero(v)
            eff[m] = [[int(j), float(v[j])] for j in nz]
        out = {
            "it": int(it),
            "labels": "".join(str(int(x)) for x in rec["labels"]),
            "eff": eff,
            "hyper": [float(x) for x in rec["hyper"].values()],
            "lam": [float(x) for x in rec["lam"]],
            "lp": float(rec["logpost"]),
        }
        if "phi" in rec:
            out["phi"] = [float(x) for x in rec["phi"]]
        self._line(out)

    def close(self, footer=None):
        if footer is not None:
            self._line({"end": True, **footer})
        self.fh.close()


def read_trace(path) -> Trace:
    """Load a streamed trace. A missing footer or a partial last line marks it truncated."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    try:
        header = json.loads(lines[0])
    except (json.JSONDecodeError, IndexError) as exc:
        raise ValueError(f"{path}: unreadable trace header") from exc
    if header.get("schema") != TRACE_SCHEMA:
        raise ValueError(f"{path}: unsupported trace schema {header.get('schema')!r}")
    J = len(header["gene_ids"])
    trace = Trace.empty(
        header["gene_ids"],
        header["modalities"],
        {m: np.asarray(v, dtype=bool) for m, v in header["present"].items()},
        header["hyper_names"],
        header.get("family", ""),
        header.get("burn_in", 0),
    )
    core = ("schema", "gene_ids", "modalities", "present", "hyper_names", "family", "burn_in")
    trace.meta = {k: v for k, v in header.items() if k not in core}
    complete = False
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            log.warning("%s: line %d is malformed; treating trace as truncated", path, n)
            break
        if rec.get("end"):
            trace.acceptance = rec.get("acceptance", {})
            trace.diagnostics = rec.get("diagnostics", {})
            complete = True
            break
        effects = {}
        for m in trace.modalities:
            v = np.zeros(J)
            for j, val in rec["eff"].get(m, []):
                v[j] = val
            effects[m] = v
        trace.append(rec["it"], {
            "labels": np.frombuffer(rec["labels"].encode(), dtype=np.uint8) - ord("0"),
            "effects": effects,
            "phi": rec.get("phi"),
            "hyper": dict(zip(trace.hyper_names, rec["hyper"])),
            "lam": rec["lam"],
            "logpost": rec["lp"],
        })
    trace.truncated = not complete
    if trace.truncated:
        log.warning("%s: trace is truncated after %d records", path, len(trace.iterations))
    return trace.finalize()


@dataclass
class PosteriorSummary:
    """Per-gene posterior group probabilities and effect summaries.

    ``cond_effect[m]`` is the mean log effect over retained iterations in
    which the gene was non-null (NaN when it never was, or when the gene has
    no data in ``m``). ``marginal_effect[m]`` averages over all retained
    iterations, zeros included.
    """

    gene_ids: list[str]
    p_null: np.ndarray
    p_del: np.ndarray
    p_ben: np.ndarray
    cond_effect: dict[str, np.ndarray]
    marginal_effect: dict[str, np.ndarray]
    dispersion: np.ndarray | None
    present: dict[str, np.ndarray]
    n_retained: int

    @property
    def mostly_null(self) -> np.ndarray:
        return (1.0 - self.p_null) < MOSTLY_NULL


def summarize(traces, burn_in=None) -> PosteriorSummary:
    """Pool retained iterations from one or more chains into a summary."""
    if isinstance(traces, Trace):
        traces = [traces]
    first = traces[0]
    keep = [t.retained(burn_in) for t in traces]
    n = int(sum(k.sum() for k in keep))
    if n == 0:
        raise ValueError("no iterations retained after burn-in")
    labels = np.concatenate([t.labels[k] for t, k in zip(traces, keep)])
    tallies = np.stack([(labels == g).sum(axis=0) for g in (1, 2, 3)], axis=1)
    nonnull = labels != 1
    n_nonnull = nonnull.sum(axis=0)
    cond, marg = {}, {}
    for m in first.modalities:
        eff = np.concatenate([t.effects[m][k] for t, k in zip(traces, keep)])
        marg[m] = eff.mean(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(nonnull, eff, 0.0).sum(axis=0) / n_nonnull
        c[n_nonnull == 0] = np.nan
        c[~first.present[m]] = np.nan
        cond[m] = c
        marg[m] = np.where(first.present[m], marg[m], np.nan)
    disp = None
    if first.phi is not None:
        disp = np.concatenate([t.phi[k] for t, k in zip(traces, keep)]).mean(axis=0)
        disp = np.where(first.present["rna"], disp, np.nan)
    return PosteriorSummary(
        gene_ids=list(first.gene_ids),
        p_null=tallies[:, 0] / n,
        p_del=tallies[:, 1] / n,
        p_ben=tallies[:, 2] / n,
        cond_effect=cond,
        marginal_effect=marg,
        dispersion=disp,
        present=dict(first.present),
        n_retained=n,
    )

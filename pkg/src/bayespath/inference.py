"""Posterior summaries, least-squares prediction and chain diagnostics."""
from __future__ import annotations

import csv
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph_data import Dataset, PathwayMembership
from .latent_scores import pathway_scores, pca_first_component
from .likelihood import Hyperparameters
from .priors import check_validity
from .sampler import ChainTrace

PATHWAY_THRESHOLD = 0.8
GENE_THRESHOLD = 0.5


class EmptyTraceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# bitsets
# ---------------------------------------------------------------------------


def to_hex(bits) -> str:
    """Hex string of a boolean vector; element ``i`` is bit ``i``."""
    bits = np.asarray(bits, dtype=bool)
    value = int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")
    return format(value, f"0{max((bits.size + 3) // 4, 1)}x")


def from_hex(text: str, length: int) -> np.ndarray:
    value = int(text, 16)
    if value >> length:
        raise ValueError(f"bitset {text!r} has bits beyond length {length}")
    return np.array([(value >> i) & 1 for i in range(length)], dtype=bool)


# ---------------------------------------------------------------------------
# frequency estimates
# ---------------------------------------------------------------------------


def _kept(trace: ChainTrace) -> np.ndarray:
    keep = trace.post_burn_in
    if not keep.any():
        raise EmptyTraceError("trace has no post-burn-in records")
    return keep


def pathway_marginals(trace: ChainTrace) -> np.ndarray:
    """Fraction of post-burn-in records that include each pathway."""
    keep = _kept(trace)
    return trace.theta[keep].mean(axis=0)


@dataclass(frozen=True)
class GeneConditionals:
    """Per-gene inclusion frequency among records where some pathway of
    ``pathway_set`` containing the gene is selected.  ``never_qualified``
    flags genes for which that never happened (probability reported as 0)."""

    probabilities: np.ndarray
    never_qualified: np.ndarray
    qualifying_counts: np.ndarray
    pathway_set: tuple[int, ...]


def gene_conditionals(trace: ChainTrace, membership: PathwayMembership,
                      pathway_set: Iterable[int] | None = None) -> GeneConditionals:
    """Conditional gene inclusion frequencies.

    By default ``pathway_set`` is every pathway, i.e. the condition is that
    at least one pathway containing the gene is in the model.
    """
    keep = _kept(trace)
    ks = np.arange(membership.n_pathways) if pathway_set is None else \
        np.unique(np.fromiter(pathway_set, dtype=np.int64))
    if ks.size == 0:
        raise ValueError("pathway_set must be nonempty")
    S = membership.membership[ks].astype(np.int64)
    qualifies = (trace.theta[keep][:, ks].astype(np.int64) @ S) > 0
    den = qualifies.sum(axis=0)
    num = (qualifies & trace.gamma[keep]).sum(axis=0)
    prob = np.divide(num, den, out=np.zeros(membership.n_genes), where=den > 0)
    return GeneConditionals(prob, den == 0, den, tuple(int(k) for k in ks))


@dataclass(frozen=True)
class VisitedModel:
    theta_hex: str
    gamma_hex: str
    count: int
    frequency: float


def visited_models(trace: ChainTrace) -> list[VisitedModel]:
    """Distinct post-burn-in (theta, gamma) pairs, most frequent first."""
    keep = _kept(trace)
    th, ga = trace.theta[keep], trace.gamma[keep]
    keys = [a.tobytes() + b"|" + b.tobytes()
            for a, b in zip(np.packbits(th, axis=1), np.packbits(ga, axis=1))]
    counts = Counter(keys)
    total = len(keys)
    first_rows: dict = {}
    for i, key in enumerate(keys):
        first_rows.setdefault(key, i)
    out = [VisitedModel(to_hex(th[i]), to_hex(ga[i]), c, c / total)
           for key, c in counts.items() for i in (first_rows[key],)]
    out.sort(key=lambda m: (-m.count, m.theta_hex, m.gamma_hex))
    return out


@dataclass(frozen=True)
class PosteriorSummary:
    pathway_marginals: np.ndarray
    gene_conditionals: GeneConditionals
    visited_models: list[VisitedModel]

    def selected_pathways(self, threshold: float = PATHWAY_THRESHOLD) -> np.ndarray:
        return np.flatnonzero(self.pathway_marginals >= threshold)

    def selected_genes(self, threshold: float = GENE_THRESHOLD) -> np.ndarray:
        return np.flatnonzero(self.gene_conditionals.probabilities >= threshold)


def pool_traces(traces: Sequence[ChainTrace]) -> ChainTrace:
    """Concatenate the post-burn-in records of several chains."""
    if not traces:
        raise ValueError("no traces to pool")
    parts = [(t, _kept(t)) for t in traces]
    return ChainTrace(
        np.concatenate([np.arange(1, k.sum() + 1) for _, k in parts]),
        np.concatenate([t.theta[k] for t, k in parts]),
        np.concatenate([t.gamma[k] for t, k in parts]),
        np.concatenate([t.eta[k] for t, k in parts]),
        np.concatenate([t.log_posterior[k] for t, k in parts]),
        burn_in=0, seed=None, pathway_ids=traces[0].pathway_ids, gene_ids=traces[0].gene_ids,
    )


def summarize(trace: ChainTrace | Sequence[ChainTrace], membership: PathwayMembership,
              pathway_set: Iterable[int] | None = None) -> PosteriorSummary:
    if not isinstance(trace, ChainTrace):
        trace = pool_traces(list(trace))
    return PosteriorSummary(pathway_marginals(trace),
                            gene_conditionals(trace, membership, pathway_set),
                            visited_models(trace))


def selection_from_summary(summary: PosteriorSummary, membership: PathwayMembership,
                           pathway_threshold: float = PATHWAY_THRESHOLD,
                           gene_threshold: float = GENE_THRESHOLD,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Thresholded (theta, gamma), repaired to a valid configuration.

    Selected genes outside every selected pathway are dropped, then
    pathways left without genes are dropped.  Duplicate gene subsets keep
    the pathway with the larger marginal.
    """
    theta = summary.pathway_marginals >= pathway_threshold
    gamma = summary.gene_conditionals.probabilities >= gene_threshold
    S = membership.membership
    for _ in range(2):
        gamma &= S[theta].any(axis=0)
        theta &= (S & gamma).any(axis=1)
    seen: dict[bytes, int] = {}
    for k in np.argsort(-summary.pathway_marginals, kind="stable"):
        if not theta[k]:
            continue
        key = np.packbits(S[k] & gamma).tobytes()
        if key in seen:
            theta[k] = False
        else:
            seen[key] = int(k)
    assert check_validity(membership, theta, gamma).valid
    return theta, gamma


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def ridge_coefficients(T: np.ndarray, y: np.ndarray, h: float) -> np.ndarray:
    """``(T'T + I/h)^-1 T'y``."""
    k = T.shape[1]
    if k == 0:
        return np.zeros(0)
    A = T.T @ T
    A.flat[:: k + 1] += 1.0 / h
    return np.linalg.solve(A, T.T @ y)


def predict(train: Dataset, test: Dataset, membership: PathwayMembership,
            selection: tuple[np.ndarray, np.ndarray], hp: Hyperparameters,
            y_train: np.ndarray | None = None) -> np.ndarray:
    """Least-squares prediction for ``test`` from a selected model.

    Training scores are the PLS components used in fitting; test scores use
    the first principal component of each selected pathway, with loadings
    estimated on the training data, sign-aligned with the training PLS
    scores and applied to the test expression (centered with the training
    means).  ``y_train`` overrides the training response, e.g. with
    posterior-mean latent log-times.
    """
    theta, gamma = (np.asarray(a, dtype=bool) for a in selection)
    report = check_validity(membership, theta, gamma)
    if not report.valid:
        raise ValueError(f"selection is not a valid configuration: {report.violations}")
    y = train.response if y_train is None else np.asarray(y_train, dtype=float)
    alpha = float(y.mean())
    scores = pathway_scores(train, membership, theta, gamma, y)
    beta = ridge_coefficients(scores.scores, y, hp.h)
    Tf = np.empty((test.n_samples, scores.n_columns))
    for c, genes in enumerate(scores.gene_index_lists):
        _, loading = pca_first_component(train.expression[:, genes],
                                         align_to=scores.scores[:, c])
        Tf[:, c] = test.expression[:, genes] @ loading
    return alpha + Tf @ beta


def prediction_mse(predicted, observed, censoring=None) -> float:
    """Mean squared error; with ``censoring`` only observed events (1) count."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {observed.shape}")
    mask = np.ones(predicted.shape, bool) if censoring is None else np.asarray(censoring) == 1
    if not mask.any():
        raise ValueError("no uncensored cases to score")
    return float(np.mean((predicted[mask] - observed[mask]) ** 2))


def chain_concordance(trace_a: ChainTrace, trace_b: ChainTrace) -> float:
    """Pearson correlation of the pathway marginals of two chains.

    Returns NaN (with a warning) when either marginal vector is constant.
    """
    a, b = pathway_marginals(trace_a), pathway_marginals(trace_b)
    if a.shape != b.shape:
        raise ValueError("traces cover different numbers of pathways")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        warnings.warn("concordance undefined: constant pathway marginals", RuntimeWarning,
                      stacklevel=2)
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_pathway_marginals(path: str | Path, membership: PathwayMembership,
                            marginals: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pathway_id", "probability"])
        for pid, v in zip(membership.pathway_ids, marginals):
            w.writerow([pid, _fmt(v)])


def write_gene_conditionals(path: str | Path, membership: PathwayMembership,
                            cond: GeneConditionals) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["gene_id", "probability", "flag"])
        for gid, v, f in zip(membership.gene_ids, cond.probabilities, cond.never_qualified):
            w.writerow([gid, _fmt(v), "never_qualified" if f else ""])


def write_predictions(path: str | Path, sample_ids: Sequence[str], y_hat) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "y_hat"])
        for sid, v in zip(sample_ids, y_hat):
            w.writerow([sid, _fmt(v)])


def write_models(path: str | Path, models: Sequence[VisitedModel]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "frequency", "theta", "gamma"])
        for rank, m in enumerate(models, start=1):
            w.writerow([rank, _fmt(m.frequency), m.theta_hex, m.gamma_hex])


def read_models(path: str | Path) -> list[tuple[int, float, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return [(int(r[0]), float(r[1]), r[2], r[3]) for r in rows[1:]]

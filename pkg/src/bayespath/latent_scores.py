"""Per-pathway latent summaries: first PLS component (fitting) and first
principal component (prediction)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .graph_data import Dataset, ModelState, PathwayMembership

logger = logging.getLogger(__name__)


class DegenerateCovarianceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    """Scores of the selected pathways, one column each in pathway order."""

    scores: np.ndarray
    loadings: tuple[np.ndarray, ...]
    gene_index_lists: tuple[np.ndarray, ...]
    pathway_indices: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.scores.shape[1]


def pls_first_component(x_sub: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First PLS latent component of ``y`` on the columns of ``x_sub``.

    The weight vector is the dominant eigenvector of ``C C^T`` with
    ``C = cov(x_sub, y)``.  That matrix has rank one, so the eigenvector is
    ``C / |C|`` and its sign already makes ``cov(scores, y) >= 0``.
    """
    x_sub = np.asarray(x_sub, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_sub.ndim != 2 or x_sub.shape[1] < 1:
        raise ValueError("x_sub must be an n x m matrix with m >= 1")
    n = x_sub.shape[0]
    yc = y - y.mean()
    c = x_sub.T @ yc / (n - 1)
    norm = np.sqrt(c @ c)
    scale = np.sqrt(np.einsum("ij,ij->", x_sub, x_sub) * (yc @ yc)) / (n - 1)
    if norm <= 1e-14 * max(scale, np.finfo(float).tiny):
        warnings.warn("response uncorrelated with every selected gene; "
                      "using the first gene as the component",
                      DegenerateCovarianceWarning, stacklevel=2)
        loading = np.zeros(x_sub.shape[1])
        loading[0] = 1.0
    else:
        loading = c / norm
    return x_sub @ loading, loading


def pca_first_component(x_sub: np.ndarray, align_to: np.ndarray | None = None,
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Scores and unit loading of the first principal component.

    If ``align_to`` is given the sign is chosen so that the scores correlate
    non-negatively with it (e.g. the training PLS scores).
    """
    x_sub = np.asarray(x_sub, dtype=float)
    if x_sub.ndim != 2 or x_sub.shape[1] < 1:
        raise ValueError("x_sub must be an n x m matrix with m >= 1")
    xc = x_sub - x_sub.mean(axis=0)
    if not np.any(xc):
        raise ValueError("rank-zero input: no variance to decompose")
    # right singular vectors of the centered data are the covariance eigenvectors
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    loading = vt[0]
    # deterministic sign before alignment: largest-magnitude entry positive
    if loading[np.argmax(np.abs(loading))] < 0:
        loading = -loading
    scores = x_sub @ loading
    if align_to is not None:
        a = np.asarray(align_to, dtype=float)
        if (scores - scores.mean()) @ (a - a.mean()) < 0:
            loading = -loading
            scores = -scores
    return scores, loading


def selected_genes(membership: PathwayMembership, k: int, gamma: np.ndarray) -> np.ndarray:
    genes = membership.pathway_genes[k]
    return genes[np.asarray(gamma, dtype=bool)[genes]]


def pathway_scores(data: Dataset, membership: PathwayMembership, theta: np.ndarray,
                   gamma: np.ndarray, y: np.ndarray | None = None) -> ScoreMatrix:
    """PLS scores for every selected pathway using its selected genes."""
    y = data.response if y is None else y
    theta = np.asarray(theta, dtype=bool)
    gamma = np.asarray(gamma, dtype=bool)
    ks = np.flatnonzero(theta)
    cols, loads, idx = [], [], []
    for k in ks:
        genes = selected_genes(membership, k, gamma)
        if genes.size == 0:
            raise ValueError(f"selected pathway {k} has no selected genes")
        t, u = pls_first_component(data.expression[:, genes], y)
        cols.append(t)
        loads.append(u)
        idx.append(genes)
    scores = np.column_stack(cols) if cols else np.empty((data.n_samples, 0))
    return ScoreMatrix(scores, tuple(loads), tuple(idx), ks)


def build_score_matrix(data: Dataset, membership: PathwayMembership,
                       state: ModelState) -> ScoreMatrix:
    """Score matrix of ``state``; survival states use their latent outcomes."""
    return pathway_scores(data, membership, state.theta, state.gamma, state.z_latent)

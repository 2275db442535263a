"""Marginal multivariate-t likelihood of the response given a pathway model.

Integrating out the intercept, the pathway coefficients and the error
variance leaves

    y ~ t_nu0( alpha0 1 + beta0 T 1,  sigma0^2 (I + h0 1 1' + h T T') ).

Two evaluation routes are provided: a dense Cholesky of the n x n scale
matrix, and a low-rank route through the (K+1)-dimensional core
``I + D^1/2 W'W D^1/2`` with ``W = [1, T]`` and ``D = diag(h0, h, ..., h)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

LOW_RANK_MIN_N = 65


class NotPositiveDefiniteError(linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed prior constants.  Defaults are the simulation-study settings:
    ``nu0 / 2 = 3`` and ``nu0 * sigma0_sq / 2 = 0.5``."""

    alpha0: float = 0.0
    beta0: float = 0.0
    h0: float = 1e6
    h: float = 0.02
    nu0: float = 6.0
    sigma0_sq: float = 1.0 / 6.0
    phi_star: float = 0.01
    mu_mrf: float = -3.5
    c0: float = 5.0
    d0: float = 2.0
    eta_pt: float = 0.092

    def __post_init__(self):
        for name in ("h0", "h", "nu0", "sigma0_sq", "c0", "d0", "eta_pt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive number, got {v!r}")
        if not 0.0 < self.phi_star < 1.0:
            raise ValueError(f"phi_star must lie in (0, 1), got {self.phi_star!r}")
        for name in ("alpha0", "beta0", "mu_mrf"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_dict(self) -> dict:
        return asdict(self)


def _t_constant(n: int, df: float) -> float:
    return gammaln((df + n) / 2.0) - gammaln(df / 2.0) - 0.5 * n * np.log(df * np.pi)


def mvt_log_density(y, location, scale, df: float) -> float:
    """Log density of a multivariate t with the given location and scale.

    Uses a Cholesky factor of ``scale``; no explicit inverse is formed.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = y - np.asarray(location, dtype=float)
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    n = y.size
    try:
        L = linalg.cholesky(scale, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError("scale not positive definite") from None
    if not np.all(np.diag(L) > 0):
        raise NotPositiveDefiniteError("scale not positive definite")
    v = linalg.solve_triangular(L, r, lower=True, check_finite=False)
    q = v @ v
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(_t_constant(n, df) - 0.5 * logdet - 0.5 * (df + n) * np.log1p(q / df))


def _location(n: int, T: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    loc = np.full(n, hp.alpha0)
    if hp.beta0 != 0.0 and T.shape[1]:
        loc = loc + hp.beta0 * T.sum(axis=1)
    return loc


def scale_matrix(T: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    n = T.shape[0]
    return hp.sigma0_sq * (np.eye(n) + hp.h0 * np.ones((n, n)) + hp.h * (T @ T.T))


def _as_scores(scores) -> np.ndarray:
    T = getattr(scores, "scores", scores)
    return np.asarray(T, dtype=float).reshape(np.shape(T)[0], -1)


def _t_from_parts(n: int, q_m: float, logdet_m: float, a: float, s: float,
                  hp: Hyperparameters) -> float:
    # Scale / sigma0^2 = M + h0 11'.  With a = 1'M^-1 r and s = 1'M^-1 1 the
    # rank-one term is handled analytically, which avoids the n*h0 condition
    # number a direct factorisation would carry.
    c = s + 1.0 / hp.h0
    q = (q_m - a * a / c) / hp.sigma0_sq
    logdet = n * np.log(hp.sigma0_sq) + logdet_m + np.log(hp.h0) + np.log(c)
    df = hp.nu0
    return float(_t_constant(n, df) - 0.5 * logdet - 0.5 * (df + n) * np.log1p(q / df))


def log_likelihood_dense(y, T, hp: Hyperparameters) -> float:
    """Cholesky of the n x n matrix ``M = I + h T T'``; the intercept's
    rank-one term enters through the determinant lemma and Sherman-Morrison."""
    T = _as_scores(T)
    y = np.asarray(y, dtype=float)
    n = y.size
    r = y - _location(n, T, hp)
    M = hp.h * (T @ T.T)
    M.flat[:: n + 1] += 1.0
    try:
        L = linalg.cholesky(M, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError("scale not positive definite") from None
    v = linalg.solve_triangular(L, np.column_stack([r, np.ones(n)]), lower=True,
                                check_finite=False)
    vr, v1 = v[:, 0], v[:, 1]
    return _t_from_parts(n, vr @ vr, 2.0 * np.log(np.diag(L)).sum(), v1 @ vr, v1 @ v1, hp)


def _core(T: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    """``B = I + h T'T``, the K x K core of ``M = I + h T T'``."""
    k = T.shape[1]
    B = hp.h * (T.T @ T)
    B.flat[:: k + 1] += 1.0
    return B


def log_likelihood_lowrank(y, T, hp: Hyperparameters) -> float:
    """Same value as :func:`log_likelihood_dense` in O(n K^2) work.

    ``|M| = |B|`` and ``M^-1 = I - h T B^-1 T'`` (Woodbury).
    """
    T = _as_scores(T)
    y = np.asarray(y, dtype=float)
    n = y.size
    r = y - _location(n, T, hp)
    q_m, a, s, logdet_m = r @ r, r.sum(), float(n), 0.0
    if T.shape[1]:
        B = _core(T, hp)
        try:
            # B is K x K; numpy's LAPACK wrappers are cheaper than scipy's here
            C = np.linalg.cholesky(B)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError("scale not positive definite") from None
        U = np.column_stack([T.T @ r, T.sum(axis=0)])
        V = np.linalg.solve(B, U)
        G = hp.h * (U.T @ V)
        q_m -= G[0, 0]
        a -= G[1, 0]
        s -= G[1, 1]
        logdet_m = 2.0 * np.log(C.diagonal()).sum()
    return _t_from_parts(n, q_m, logdet_m, a, s, hp)


def marginal_log_likelihood(y, scores, hp: Hyperparameters) -> float:
    """Marginal log-likelihood of ``y`` (response or latent log-times).

    ``scores`` is a :class:`~bayespath.latent_scores.ScoreMatrix` or an
    ``n x K`` array; ``K = 0`` gives the intercept-only model.
    """
    y = np.asarray(y, dtype=float)
    if y.size >= LOW_RANK_MIN_N:
        return log_likelihood_lowrank(y, scores, hp)
    return log_likelihood_dense(y, scores, hp)


def precision_and_location(T, hp: Hyperparameters) -> tuple[np.ndarray, np.ndarray]:
    """Inverse scale matrix and location vector of the marginal t model."""
    T = _as_scores(T)
    n, k = T.shape
    Minv = np.eye(n)
    if k:
        Minv -= hp.h * T @ np.linalg.solve(_core(T, hp), T.T)
    m1 = Minv.sum(axis=1)
    P = (Minv - np.outer(m1, m1) / (m1.sum() + 1.0 / hp.h0)) / hp.sigma0_sq
    return P, _location(n, T, hp)

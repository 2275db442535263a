"""Sampling gene-inclusion vectors from the MRF prior at fixed eta.

Provides systematic-scan Gibbs sweeps, monotone coupling-from-the-past
(exact draws for eta >= 0) and a grid scan of the expected number of
selected genes used to locate the phase transition.

The compiled kernels draw their uniforms from a counter-based generator:
the uniform used at site ``j`` of the sweep ``t`` steps in the past is a
pure function of ``(key, t, j)``.  Restarting CFTP further back in time
therefore reuses exactly the same randomness for the recent sweeps without
storing it.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .graph_data import GeneNetwork

logger = logging.getLogger(__name__)

T_MAX_DEFAULT = 2 ** 20

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


class CFTPError(RuntimeError):
    """Coupling from the past did not coalesce within the sweep cap."""


@numba.njit(cache=True, inline="always")
def _uniform(key, counter):
    # SplitMix64 output number `counter` of the stream seeded with `key`
    z = key + (np.uint64(counter) + _ONE) * _GOLDEN
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return np.float64(z >> _S11) * _INV53


@numba.njit(cache=True)
def _sweep(gamma, indptr, indices, mu, eta, u):
    p = gamma.shape[0]
    for j in range(p):
        m = 0
        for a in range(indptr[j], indptr[j + 1]):
            m += gamma[indices[a]]
        prob = 1.0 / (1.0 + np.exp(-(mu + 2.0 * eta * m)))
        gamma[j] = 1 if u[j] < prob else 0


@numba.njit(cache=True)
def _gibbs_run(gamma, indptr, indices, mu, eta, key, n_sweeps):
    """Run ``n_sweeps`` sweeps in place; return the selected count after each."""
    p = gamma.shape[0]
    totals = np.empty(n_sweeps, dtype=np.int64)
    for t in range(n_sweeps):
        base = t * p
        s = 0
        for j in range(p):
            m = 0
            for a in range(indptr[j], indptr[j + 1]):
                m += gamma[indices[a]]
            prob = 1.0 / (1.0 + np.exp(-(mu + 2.0 * eta * m)))
            gamma[j] = 1 if _uniform(key, base + j) < prob else 0
            s += gamma[j]
        totals[t] = s
    return totals


@numba.njit(cache=True)
def _cftp_from(indptr, indices, mu, eta, key, T, check):
    """Sandwich chains from all-zeros and all-ones run from time -T to 0.

    Returns (lower, upper, monotone_ok).
    """
    p = indptr.shape[0] - 1
    lo = np.zeros(p, dtype=np.uint8)
    hi = np.ones(p, dtype=np.uint8)
    ok = True
    for t in range(T, 0, -1):
        base = np.uint64(t - 1) * np.uint64(p)
        for j in range(p):
            mlo = 0
            mhi = 0
            for a in range(indptr[j], indptr[j + 1]):
                mlo += lo[indices[a]]
                mhi += hi[indices[a]]
            u = _uniform(key, base + np.uint64(j))
            plo = 1.0 / (1.0 + np.exp(-(mu + 2.0 * eta * mlo)))
            phi = 1.0 / (1.0 + np.exp(-(mu + 2.0 * eta * mhi)))
            lo[j] = 1 if u < plo else 0
            hi[j] = 1 if u < phi else 0
        if check:
            for j in range(p):
                if lo[j] > hi[j]:
                    ok = False
    return lo, hi, ok


@numba.njit(cache=True)
def _quad_count(x, indptr, indices):
    s = 0
    for i in range(x.shape[0]):
        if x[i]:
            for a in range(indptr[i], indptr[i + 1]):
                s += x[indices[a]]
    return s


def edge_statistic(gamma, adjacency) -> int:
    """``gamma' R gamma`` from the CSR form of ``adjacency``."""
    indptr, indices = as_csr(adjacency)
    return int(_quad_count(np.asarray(gamma, dtype=bool).view(np.uint8), indptr, indices))


def as_csr(adjacency) -> tuple[np.ndarray, np.ndarray]:
    """(indptr, indices) of a GeneNetwork, a dense matrix or an existing pair."""
    if isinstance(adjacency, GeneNetwork):
        return adjacency.csr
    if isinstance(adjacency, tuple) and len(adjacency) == 2:
        return adjacency
    return GeneNetwork(np.asarray(adjacency, dtype=bool)).csr


def _key(rng: np.random.Generator) -> np.uint64:
    return np.uint64(rng.integers(0, 2 ** 63, dtype=np.int64))


def gibbs_sweep(gamma, adjacency, mu: float, eta: float,
                rng: np.random.Generator) -> np.ndarray:
    """One systematic-scan Gibbs sweep in gene index order."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    indptr, indices = as_csr(adjacency)
    g = np.asarray(gamma, dtype=np.uint8).copy()
    _sweep(g, indptr, indices, float(mu), float(eta), rng.random(g.size))
    return g.astype(bool)


def gibbs_chain(adjacency, mu: float, eta: float, n_sweeps: int,
                rng: np.random.Generator, init=None) -> np.ndarray:
    """States after each of ``n_sweeps`` sweeps, as an (n_sweeps, p) bool array."""
    indptr, indices = as_csr(adjacency)
    p = indptr.size - 1
    g = np.zeros(p, np.uint8) if init is None else np.asarray(init, np.uint8).copy()
    out = np.empty((n_sweeps, p), dtype=bool)
    for t in range(n_sweeps):
        _sweep(g, indptr, indices, float(mu), float(eta), rng.random(p))
        out[t] = g
    return out


def cftp_perfect_sample(adjacency, mu: float, eta: float, rng: np.random.Generator,
                        t_max: int = T_MAX_DEFAULT, check_monotone: bool = False,
                        ) -> np.ndarray:
    """Exact draw from the MRF prior by monotone coupling from the past.

    Starting times are doubled (1, 2, 4, ...) until the chains started from
    all-zeros and all-ones agree at time 0.  Raises :class:`CFTPError` past
    ``t_max`` sweeps; truncating instead would bias the draw.
    """
    if eta < 0:
        raise ValueError("monotone coupling needs eta >= 0")
    indptr, indices = as_csr(adjacency)
    key = _key(rng)
    T = 1
    while T <= t_max:
        lo, hi, ok = _cftp_from(indptr, indices, float(mu), float(eta), key, T,
                                check_monotone)
        if check_monotone and not ok:
            raise AssertionError("monotone coupling violated: lower chain above upper chain")
        if np.array_equal(lo, hi):
            return lo.astype(bool)
        T *= 2
    raise CFTPError(f"CFTP failed to coalesce within {t_max} sweeps (eta={eta:g}); "
                    "eta is probably at or beyond the phase transition")


def cftp_coalescence_time(adjacency, mu: float, eta: float, rng: np.random.Generator,
                          t_max: int = T_MAX_DEFAULT) -> int:
    """Smallest doubling start time at which CFTP coalesces (diagnostic)."""
    indptr, indices = as_csr(adjacency)
    key = _key(rng)
    T = 1
    while T <= t_max:
        lo, hi, _ = _cftp_from(indptr, indices, float(mu), float(eta), key, T, False)
        if np.array_equal(lo, hi):
            return T
        T *= 2
    raise CFTPError(f"CFTP failed to coalesce within {t_max} sweeps")


@dataclass(frozen=True)
class GridScanResult:
    grid: np.ndarray
    mean_selected: np.ndarray
    std_error: np.ndarray
    eta_pt_estimate: float | None

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "mean_selected", "std_error"])
            for e, m, s in zip(self.grid, self.mean_selected, self.std_error):
                w.writerow([repr(float(e)), repr(float(m)), repr(float(s))])


def _batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    n = x.size // n_batches
    if n < 2:
        return float(x.std(ddof=1) / np.sqrt(max(x.size, 1))) if x.size > 1 else 0.0
    b = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(b.std(ddof=1) / np.sqrt(n_batches))


def phase_transition_scan(adjacency, mu: float, grid, sweeps: int,
                          rng: np.random.Generator, burn_in: int | None = None,
                          ) -> GridScanResult:
    """Monte-Carlo estimate of E[sum gamma] over an increasing eta grid.

    Every grid point reuses the same random stream and starts from the empty
    configuration, so the estimated curve is nondecreasing in eta (monotone
    coupling).  The transition estimate is the grid point with the largest
    forward jump; ``None`` is returned unless that jump exceeds twice the
    Monte-Carlo standard error at the first grid point.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    if grid[0] < 0:
        raise ValueError("eta grid must be non-negative")
    burn_in = max(sweeps // 5, 1) if burn_in is None else burn_in
    if sweeps <= burn_in:
        raise ValueError("sweeps must exceed the burn-in")
    indptr, indices = as_csr(adjacency)
    p = indptr.size - 1
    key = _key(rng)
    means, ses = [], []
    for eta in grid:
        g = np.zeros(p, dtype=np.uint8)
        totals = _gibbs_run(g, indptr, indices, float(mu), float(eta), key, sweeps)
        kept = totals[burn_in:].astype(float)
        means.append(kept.mean())
        ses.append(_batch_means_se(kept))
    means = np.array(means)
    ses = np.array(ses)
    jumps = np.diff(means)
    i = int(np.argmax(jumps))
    estimate = float(grid[i]) if jumps[i] > 2.0 * ses[0] else None
    return GridScanResult(grid, means, ses, estimate)

"""Log prior terms for pathway/gene indicators and the MRF parameter, and the
validity predicate for (theta, gamma) configurations.

Gene prior convention: with a symmetric adjacency ``R`` the quadratic form
``gamma' R gamma`` counts every selected-selected edge twice, so the full
conditional log-odds of one gene is ``mu + 2 eta * (selected neighbours)``.
All eta values in this package are on that scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, expit, xlog1py, xlogy

from .graph_data import GeneNetwork, ModelState, PathwayMembership, active_adjacency
from .likelihood import Hyperparameters

EMPTY_PATHWAY = "empty_pathway"
ORPHAN_GENE = "orphan_gene"
DUPLICATE_SUBSET = "duplicate_subset"


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[Violation, ...] = field(default=())

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def check_validity(membership: PathwayMembership, theta, gamma) -> ValidityReport:
    """Report empty pathways, orphan genes and duplicated selected-gene sets."""
    theta = np.asarray(theta, dtype=bool)
    gamma = np.asarray(gamma, dtype=bool)
    S = membership.membership
    out = []
    counts = S[:, gamma].sum(axis=1)
    for k in np.flatnonzero(theta & (counts == 0)):
        out.append(Violation(EMPTY_PATHWAY, (int(k),)))
    covered = S[theta].any(axis=0)
    for j in np.flatnonzero(gamma & ~covered):
        out.append(Violation(ORPHAN_GENE, (int(j),)))
    seen: dict[bytes, int] = {}
    for k in np.flatnonzero(theta):
        key = np.packbits(S[k] & gamma).tobytes()
        if key in seen:
            out.append(Violation(DUPLICATE_SUBSET, (seen[key], int(k))))
        else:
            seen[key] = int(k)
    return ValidityReport(tuple(out))


def is_valid(membership: PathwayMembership, theta, gamma) -> bool:
    return check_validity(membership, theta, gamma).valid


def phi_star_from_mixture(a0: float, b0: float, rho: float) -> float:
    """Bernoulli rate left after integrating out a point-mass/Beta mixture."""
    return a0 * (1.0 - rho) / (a0 + b0)


def theta_log_prior(theta, phi_star: float) -> float:
    theta = np.asarray(theta, dtype=bool)
    k_on = int(theta.sum())
    return k_on * np.log(phi_star) + (theta.size - k_on) * np.log1p(-phi_star)


def _adjacency(adjacency) -> np.ndarray:
    return getattr(adjacency, "adjacency", adjacency)


def quadratic_count(gamma, adjacency) -> int:
    """``gamma' R gamma``: twice the number of edges among selected genes."""
    sel = np.flatnonzero(np.asarray(gamma, dtype=bool))
    R = _adjacency(adjacency)
    return int(R[np.ix_(sel, sel)].sum())


def mrf_log_unnormalized(gamma, adjacency, mu: float, eta: float) -> float:
    gamma = np.asarray(gamma, dtype=bool)
    return mu * int(gamma.sum()) + eta * quadratic_count(gamma, adjacency)


def mrf_conditional(gamma, j: int, adjacency, mu: float, eta: float) -> float:
    """P(gamma_j = 1 | all other genes) under the MRF prior."""
    gamma = np.asarray(gamma, dtype=bool)
    m = int(_adjacency(adjacency)[j][gamma].sum())
    return float(expit(mu + 2.0 * eta * m))


def joint_log_prior(state: ModelState, membership: PathwayMembership,
                    network: GeneNetwork, hp: Hyperparameters, rule: str = "union") -> float:
    """Log prior of (theta, gamma) at fixed eta, up to the MRF normaliser.

    The gene term uses the network restricted to the selected pathways.
    Under the ``union`` rule that restriction never removes an edge between
    two selected genes of a valid state, so the value equals the full-network
    quadratic form there.
    """
    if not check_validity(membership, state.theta, state.gamma).valid:
        return -np.inf
    R = active_adjacency(network, membership, state.theta, rule)
    return (theta_log_prior(state.theta, hp.phi_star)
            + mrf_log_unnormalized(state.gamma, R, hp.mu_mrf, state.eta))


def eta_log_prior(eta: float, hp: Hyperparameters) -> float:
    """Beta(c0, d0) prior on eta / eta_pt, as a density in eta."""
    if not 0.0 <= eta <= hp.eta_pt:
        return -np.inf
    x = eta / hp.eta_pt
    return float(xlogy(hp.c0 - 1.0, x) + xlog1py(hp.d0 - 1.0, -x)
                 - betaln(hp.c0, hp.d0) - np.log(hp.eta_pt))

"""Synthetic pathway data: random pathway/network structures, a planted set
of true pathways and genes, and expression/response draws in which true
genes depend on their network parents."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph_data import CONTINUOUS, SURVIVAL, Dataset, GeneNetwork, PathwayMembership

PARENT_SUM = "sum"
PARENT_MEAN = "mean"


def random_pathway_structure(n_pathways: int, n_genes: int, rng: np.random.Generator, *,
                             overlap: float = 0.2, extra_edge_rate: float = 0.5,
                             size_spread: float = 0.6,
                             ) -> tuple[PathwayMembership, GeneNetwork]:
    """Random KEGG-like pathways over ``n_genes`` genes.

    Each gene gets a home pathway (pathway sizes are heterogeneous, drawn
    from a log-normal weight) and, with probability ``overlap``, one more
    pathway.  Within every pathway the genes are joined by a random
    spanning tree plus about ``extra_edge_rate`` extra edges per gene, so
    each pathway is a connected subnetwork and genes shared between
    pathways link them.
    """
    if n_pathways < 1 or n_genes < n_pathways:
        raise ValueError("need at least one pathway and one gene per pathway")
    weights = rng.lognormal(0.0, size_spread, n_pathways)
    home = np.concatenate([np.arange(n_pathways),
                           rng.choice(n_pathways, n_genes - n_pathways, p=weights / weights.sum())])
    home = rng.permutation(home)
    S = np.zeros((n_pathways, n_genes), dtype=bool)
    S[home, np.arange(n_genes)] = True
    for j in np.flatnonzero(rng.random(n_genes) < overlap):
        others = np.flatnonzero(~S[:, j])
        if others.size:
            S[rng.choice(others), j] = True
    R = np.zeros((n_genes, n_genes), dtype=bool)
    for k in range(n_pathways):
        genes = rng.permutation(np.flatnonzero(S[k]))
        for i in range(1, genes.size):
            a, b = genes[i], genes[rng.integers(i)]
            R[a, b] = R[b, a] = True
        n_extra = rng.poisson(extra_edge_rate * genes.size) if genes.size > 2 else 0
        for _ in range(n_extra):
            a, b = rng.choice(genes, 2, replace=False)
            R[a, b] = R[b, a] = True
    width = len(str(max(n_pathways, n_genes)))
    membership = PathwayMembership(tuple(f"P{k:0{width}d}" for k in range(n_pathways)),
                                   tuple(f"G{j:0{width}d}" for j in range(n_genes)), S)
    return membership, GeneNetwork(R, membership.gene_ids)


@dataclass(frozen=True)
class SimTruth:
    """True pathways, each with its true genes (seed gene first)."""

    pathways: tuple[int, ...]
    genes: tuple[tuple[int, ...], ...]

    @property
    def all_genes(self) -> np.ndarray:
        return np.array(sorted({j for g in self.genes for j in g}), dtype=np.int64)


def select_truth(membership: PathwayMembership, network: GeneNetwork, n_pathways: int,
                 rng: np.random.Generator) -> SimTruth:
    """Random true pathways; in each, a random seed gene and its direct
    neighbours inside that pathway.

    A gene is assigned to the first true pathway that claims it, so the
    per-pathway gene sets are disjoint.
    """
    if network.edge_count == 0:
        raise ValueError("network has no edges")
    if not 1 <= n_pathways <= membership.n_pathways:
        raise ValueError("n_pathways out of range")
    ks = rng.choice(membership.n_pathways, n_pathways, replace=False)
    taken: set[int] = set()
    out_k, out_g = [], []
    R = network.adjacency
    for k in ks:
        members = membership.pathway_genes[k]
        free = np.array([j for j in members if j not in taken], dtype=np.int64)
        if free.size == 0:
            continue
        seed = int(rng.choice(free))
        nb = [int(j) for j in members if R[seed, j] and j not in taken]
        genes = (seed, *sorted(nb))
        taken.update(genes)
        out_k.append(int(k))
        out_g.append(genes)
    return SimTruth(tuple(out_k), tuple(out_g))


@dataclass(frozen=True)
class SimConfig:
    membership: PathwayMembership
    network: GeneNetwork
    n_samples: int
    truth: SimTruth
    beta_magnitude: float = 1.5
    rho_sim: float = 0.7
    noise_sd: float = 1.0
    seed: int = 0
    signs: tuple[int, ...] | None = None
    parent_mean: str = PARENT_SUM
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if not -1.0 < self.rho_sim < 1.0:
            raise ValueError("rho_sim must lie in (-1, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.parent_mean not in (PARENT_SUM, PARENT_MEAN):
            raise ValueError("parent_mean must be 'sum' or 'mean'")
        S = self.membership.membership
        for k, genes in zip(self.truth.pathways, self.truth.genes):
            if not genes:
                raise ValueError(f"true pathway {k} has no true genes")
            if not S[k, list(genes)].all():
                raise ValueError(f"true genes of pathway {k} are not all members of it")
        if self.signs is not None and len(self.signs) != len(self.truth.pathways):
            raise ValueError("one sign per true pathway is required")

    @property
    def pathway_signs(self) -> tuple[int, ...]:
        if self.signs is not None:
            return tuple(int(np.sign(s)) for s in self.signs)
        return tuple(1 if i % 2 == 0 else -1 for i in range(len(self.truth.pathways)))

    def beta(self) -> np.ndarray:
        """Length-p coefficient vector; zero outside the true genes."""
        b = np.zeros(self.membership.n_genes)
        for s, genes in zip(self.pathway_signs, self.truth.genes):
            b[list(genes)] = s * self.beta_magnitude
        return b


def bfs_parents(genes: tuple[int, ...], adjacency: np.ndarray) -> list[tuple[int, list[int]]]:
    """Orient edges among ``genes`` by breadth-first order from ``genes[0]``.

    Returns (gene, parents) in visiting order; a parent is an adjacent gene
    visited earlier, so the result is acyclic.  Genes not reachable from
    the seed within ``genes`` start new roots in index order.
    """
    gset = set(genes)
    order: list[int] = []
    seen: set[int] = set()
    for root in genes:
        if root in seen:
            continue
        seen.add(root)
        queue = deque([root])
        while queue:
            v = queue.popleft()
            order.append(v)
            for u in sorted(gset):
                if u not in seen and adjacency[v, u]:
                    seen.add(u)
                    queue.append(u)
    pos = {v: i for i, v in enumerate(order)}
    return [(v, [u for u in order[:pos[v]] if adjacency[v, u]]) for v in order]


def generate(config: SimConfig) -> Dataset:
    """Draw expression and response.

    Irrelevant genes are i.i.d. N(0, 1).  Within each true pathway, a gene
    with no parents is N(0, 1) and any other gene is
    N(rho * (sum or mean of its parents), 1).  The response is
    ``X[:, true] @ beta + N(0, noise_sd^2)`` computed on the raw draws;
    the returned dataset holds the centered expression.
    """
    rng = np.random.default_rng(config.seed)
    n, p = config.n_samples, config.membership.n_genes
    X = rng.standard_normal((n, p))
    R = config.network.adjacency
    for genes in config.truth.genes:
        for v, parents in bfs_parents(genes, R):
            if parents:
                agg = X[:, parents].sum(axis=1)
                if config.parent_mean == PARENT_MEAN:
                    agg = agg / len(parents)
                X[:, v] = config.rho_sim * agg + rng.standard_normal(n)
    y = X @ config.beta() + config.noise_sd * rng.standard_normal(n)
    width = len(str(n))
    return Dataset.from_raw(X, y, sample_ids=[f"S{i:0{width}d}" for i in range(n)],
                            gene_ids=config.membership.gene_ids)


def to_survival(data: Dataset, censor_fraction: float, rng: np.random.Generator) -> Dataset:
    """Survival version of a continuous dataset (extension utility).

    Event times are ``exp(y)``; a random ``censor_fraction`` of samples is
    censored at a uniform fraction of their event time.
    """
    if data.outcome_kind != CONTINUOUS:
        raise ValueError("expects a continuous dataset")
    if not 0.0 <= censor_fraction < 1.0:
        raise ValueError("censor_fraction must lie in [0, 1)")
    n = data.n_samples
    times = np.exp(data.response)
    delta = np.ones(n, dtype=np.int8)
    cens = rng.permutation(n)[: int(round(censor_fraction * n))]
    delta[cens] = 0
    times[cens] *= rng.uniform(0.05, 1.0, cens.size)
    return Dataset.from_raw(data.raw_expression, times, outcome_kind=SURVIVAL, censoring=delta,
                            survival_times=True, sample_ids=data.sample_ids,
                            gene_ids=data.gene_ids)


def simulate_study(n_pathways: int = 20, n_genes: int = 300, n_samples: int = 100,
                   n_true: int = 4, beta: float = 1.5, rho: float = 0.7, seed: int = 0,
                   noise_sd: float = 1.0, parent_mean: str = PARENT_SUM,
                   ) -> tuple[SimConfig, Dataset]:
    """Structure, truth and data from a single seed."""
    rng = np.random.default_rng(seed)
    membership, network = random_pathway_structure(n_pathways, n_genes, rng)
    truth = select_truth(membership, network, n_true, rng)
    data_seed = int(rng.integers(2 ** 63))
    cfg = SimConfig(membership, network, n_samples, truth, beta, rho, noise_sd, data_seed,
                    parent_mean=parent_mean, extras={"study_seed": seed})
    return cfg, generate(cfg)


def write_truth(path: str | Path, config: SimConfig) -> None:
    m = config.membership
    beta = config.beta()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pathway_id", "gene_id", "beta", "is_seed", "rho", "seed"])
        for k, genes in zip(config.truth.pathways, config.truth.genes):
            for i, j in enumerate(genes):
                w.writerow([m.pathway_ids[k], m.gene_ids[j], repr(float(beta[j])), int(i == 0),
                            repr(config.rho_sim), config.seed])


def read_truth(path: str | Path, membership: PathwayMembership) -> SimTruth:
    by_k: dict[int, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            k = membership.pathway_index[row["pathway_id"]]
            j = membership.gene_index[row["gene_id"]]
            lst = by_k.setdefault(k, [])
            if row["is_seed"] == "1":
                lst.insert(0, j)
            else:
                lst.append(j)
    return SimTruth(tuple(by_k), tuple(tuple(v) for v in by_k.values()))

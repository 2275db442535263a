"""MCMC over pathway/gene indicators, the MRF parameter and AFT latent times.

Target (up to a constant)::

    p(theta, gamma, eta | y)  oc  L(y | T(theta, gamma))
                                 * prod_k Bernoulli(theta_k; phi*)
                                 * exp(mu |gamma| + eta gamma' R_theta gamma) / Z_eta(R)
                                 * p(eta)

restricted to valid (theta, gamma).  ``Z_eta(R)`` is the normaliser of the
MRF on the full network.  Under the default ``union`` edge rule every edge
between two selected genes of a valid state survives the restriction, so
``gamma' R_theta gamma = gamma' R gamma`` and the gene prior is exactly the
MRF on ``R``.  Each state of a (theta, gamma) move is evaluated with its own
restricted adjacency; with eta fixed the normaliser cancels.

The eta update is an auxiliary-variable Metropolis-Hastings step: the chain
carries an auxiliary gene vector ``w`` whose conditional is the MRF at a
fixed reference ``eta_ref``; a proposal draws ``(eta', w')`` with ``w'``
an exact CFTP draw at ``eta'`` on ``R`` so that ``Z_eta`` cancels.
"""
from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special

from . import moves as mv
from .graph_data import (EDGE_RULES, SURVIVAL, Dataset, GeneNetwork, ModelState,
                         PathwayMembership, active_adjacency)
from .latent_scores import DegenerateCovarianceWarning
from .likelihood import Hyperparameters, marginal_log_likelihood, precision_and_location
from .mrf_sim import T_MAX_DEFAULT, CFTPError, _quad_count, cftp_perfect_sample
from .priors import check_validity, eta_log_prior, quadratic_count

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# configuration and output containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainConfig:
    """Run settings of one chain.

    ``eta_step`` and ``eta_ref`` are fractions of ``eta_pt``.  ``eta_init``
    defaults to the prior mean.  With ``update_eta=False`` eta stays at
    ``eta_init`` for the whole run.
    """

    iterations: int = 300_000
    burn_in: int = 50_000
    thin: int = 1
    seed: int | None = None
    update_eta: bool = True
    eta_every: int = 1
    eta_init: float | None = None
    eta_step: float = 0.1
    eta_ref: float = 0.5
    init_pathways: int = 2
    init_genes: int = 0
    t_max: int = T_MAX_DEFAULT
    edge_rule: str = "union"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.thin < 1 or self.eta_every < 1:
            raise ValueError("thin and eta_every must be at least 1")
        if not self.eta_step > 0:
            raise ValueError("eta_step must be positive")
        if not 0.0 <= self.eta_ref <= 1.0:
            raise ValueError("eta_ref is a fraction of eta_pt in [0, 1]")
        if self.edge_rule not in EDGE_RULES:
            raise ValueError(f"edge_rule must be one of {EDGE_RULES}")
        if self.init_pathways < 0 or self.init_genes < 0:
            raise ValueError("initial sizes must be non-negative")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ChainTrace:
    """Recorded states of one chain.

    ``iteration`` is 1-based; records with ``iteration > burn_in`` are the
    post-burn-in sample.  ``log_posterior`` is the unnormalised log posterior
    without the MRF normaliser ``log Z_eta``.
    """

    iteration: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    log_posterior: np.ndarray
    burn_in: int
    seed: int | None = None
    pathway_ids: tuple[str, ...] = ()
    gene_ids: tuple[str, ...] = ()
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.iteration.size)

    @property
    def k_theta(self) -> np.ndarray:
        return self.theta.sum(axis=1)

    @property
    def n_selected_genes(self) -> np.ndarray:
        return self.gamma.sum(axis=1)

    @property
    def post_burn_in(self) -> np.ndarray:
        return self.iteration > self.burn_in

    def trim(self, n: int) -> "ChainTrace":
        return ChainTrace(self.iteration[:n], self.theta[:n], self.gamma[:n], self.eta[:n],
                          self.log_posterior[:n], self.burn_in, self.seed,
                          self.pathway_ids, self.gene_ids, dict(self.stats))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in zip(self.iteration, self.k_theta, self.n_selected_genes,
                           self.eta, self.log_posterior):
                w.writerow(_trace_row(*row))

    def save(self, path: str | Path) -> None:
        meta = dict(burn_in=self.burn_in, seed=self.seed, pathway_ids=list(self.pathway_ids),
                    gene_ids=list(self.gene_ids), stats=self.stats)
        np.savez_compressed(path, iteration=self.iteration, theta=self.theta,
                            gamma=self.gamma, eta=self.eta,
                            log_posterior=self.log_posterior, meta=json.dumps(meta))

    @classmethod
    def load(cls, path: str | Path) -> "ChainTrace":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["iteration"], z["theta"].astype(bool), z["gamma"].astype(bool),
                       z["eta"], z["log_posterior"], meta["burn_in"], meta["seed"],
                       tuple(meta["pathway_ids"]), tuple(meta["gene_ids"]), meta["stats"])


TRACE_COLUMNS = ("iteration", "k_theta", "n_genes", "eta", "log_posterior")


def _trace_row(it, k, g, eta, lp):
    return [int(it), int(k), int(g), repr(float(eta)), repr(float(lp))]


@dataclass(frozen=True)
class EtaUpdate:
    eta: float
    aux: np.ndarray
    aux_stat: int
    accepted: bool
    cftp_failed: bool


# ---------------------------------------------------------------------------
# stand-alone kernels
# ---------------------------------------------------------------------------


def reflect(x: float, upper: float) -> float:
    """Fold ``x`` into ``[0, upper]`` by reflection at both ends."""
    period = 2.0 * upper
    x = abs(x) % period
    return period - x if x > upper else x


def eta_log_ratio(eta_o: float, eta_p: float, gene_stat: float, aux_o_stat: float,
                  aux_p_stat: float, eta_ref: float, hp: Hyperparameters) -> float:
    """Log acceptance ratio of an auxiliary-variable eta move.

    ``gene_stat = gamma' R_theta gamma``; ``aux_*_stat = w' R w``.  The
    ``mu`` terms and all normalisers cancel; the reflected random walk is
    symmetric.
    """
    lp_p = eta_log_prior(eta_p, hp)
    if not np.isfinite(lp_p):
        return -np.inf
    return (lp_p - eta_log_prior(eta_o, hp) + (eta_p - eta_o) * gene_stat
            + (eta_ref - eta_p) * aux_p_stat - (eta_ref - eta_o) * aux_o_stat)


def _eta_move(eta_o: float, aux_o: np.ndarray, aux_o_stat: int, gene_stat: int,
              csr: tuple[np.ndarray, np.ndarray], hp: Hyperparameters,
              rng: np.random.Generator, step: float, eta_ref: float,
              t_max: int) -> EtaUpdate:
    eta_p = reflect(eta_o + step * rng.standard_normal(), hp.eta_pt)
    try:
        w = cftp_perfect_sample(csr, hp.mu_mrf, eta_p, rng, t_max=t_max)
    except CFTPError:
        return EtaUpdate(eta_o, aux_o, aux_o_stat, False, True)
    w_stat = int(_quad_count(w.view(np.uint8), *csr))
    log_h = eta_log_ratio(eta_o, eta_p, gene_stat, aux_o_stat, w_stat, eta_ref, hp)
    if np.log(rng.random()) < log_h:
        return EtaUpdate(eta_p, w, w_stat, True, False)
    return EtaUpdate(eta_o, aux_o, aux_o_stat, False, False)


def update_eta(state: ModelState, network: GeneNetwork, hp: Hyperparameters,
               rng: np.random.Generator, *, membership: PathwayMembership | None = None,
               edge_rule: str = "union", step: float = 0.1, eta_ref: float = 0.5,
               t_max: int = T_MAX_DEFAULT) -> EtaUpdate:
    """One auxiliary-variable MH update of eta.

    ``state.aux`` must hold the current auxiliary vector.  ``step`` and
    ``eta_ref`` are fractions of ``eta_pt``.  The gene statistic uses the
    adjacency restricted by ``membership``/``edge_rule`` when a membership
    is supplied, else the full network.
    """
    if state.aux is None:
        raise ValueError("state.aux (the auxiliary vector) is required")
    R = network if membership is None else active_adjacency(network, membership,
                                                            state.theta, edge_rule)
    gene_stat = quadratic_count(state.gamma, R)
    aux = np.asarray(state.aux, dtype=bool).copy()
    aux_stat = int(_quad_count(aux.view(np.uint8), *network.csr))
    return _eta_move(state.eta, aux, aux_stat, gene_stat, network.csr, hp, rng,
                     step * hp.eta_pt, eta_ref * hp.eta_pt, t_max)


def truncated_t_draw(df: float, lower: float, rng: np.random.Generator) -> float:
    """Standard Student-t draw conditioned on exceeding ``lower``.

    Inverse-CDF on the upper tail, so the cost is independent of how far
    out the truncation point lies.
    """
    tail = special.stdtr(df, -lower)
    u = rng.random()
    if tail <= 0.0:
        x = lower
    else:
        x = -special.stdtrit(df, u * tail)
    if not x > lower:
        x = np.nextafter(lower, np.inf)
    return float(x)


def augment_aft(z: np.ndarray, data: Dataset, scores, hp: Hyperparameters,
                rng: np.random.Generator) -> np.ndarray:
    """New latent log-times for the censored cases.

    Observed cases keep ``Z_i = log Y_i``.  Censored cases are updated one at
    a time from their conditional under the marginal multivariate t given
    the other entries of ``Z`` (scores held fixed), truncated to
    ``(log Y_i, inf)``.
    """
    if data.outcome_kind != SURVIVAL:
        raise ValueError("AFT augmentation needs survival data")
    y = data.response
    z = np.array(z, dtype=float)
    observed = data.censoring == 1
    z[observed] = y[observed]
    cens = np.flatnonzero(~observed)
    if cens.size == 0:
        return z
    n = z.size
    P, loc = precision_and_location(scores, hp)
    r = z - loc
    Pr = P @ r
    q = float(r @ Pr)
    df_c = hp.nu0 + n - 1
    for i in cens:
        pii = P[i, i]
        cond_mean = z[i] - Pr[i] / pii
        q_minus = max(q - Pr[i] ** 2 / pii, 0.0)
        scale = np.sqrt((hp.nu0 + q_minus) / (df_c * pii))
        x = truncated_t_draw(df_c, (y[i] - cond_mean) / scale, rng)
        new = cond_mean + scale * x
        if not new > y[i]:
            new = np.nextafter(y[i], np.inf)
        d = new - z[i]
        q += 2.0 * d * Pr[i] + d * d * pii
        Pr += d * P[:, i]
        z[i] = new
    return z


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------


def _pls_column(xs: np.ndarray, yc: np.ndarray) -> np.ndarray:
    # same computation as latent_scores.pls_first_component without validation
    c = xs.T @ yc
    norm = np.sqrt(c @ c)
    if norm <= 1e-14 * max(np.sqrt(np.einsum("ij,ij->", xs, xs) * (yc @ yc)),
                           np.finfo(float).tiny):
        warnings.warn("response uncorrelated with every selected gene; "
                      "using the first gene as the component",
                      DegenerateCovarianceWarning, stacklevel=3)
        return xs[:, 0].copy()
    return xs @ (c / norm)


class Chain:
    """Mutable sampler state; one instance per chain."""

    def __init__(self, data: Dataset, membership: PathwayMembership, network: GeneNetwork,
                 hp: Hyperparameters, config: ChainConfig, rng: np.random.Generator):
        if data.n_genes != membership.n_genes or network.n_genes != membership.n_genes:
            raise ValueError("data, membership and network disagree on the number of genes")
        self.data, self.membership, self.network = data, membership, network
        self.hp, self.config, self.rng = hp, config, rng
        self.space = mv.MoveSpace(membership)
        self.csr = network.csr
        self.X = data.expression
        self.survival = data.outcome_kind == SURVIVAL
        self.log_phi = np.log(hp.phi_star)
        self.log_1m_phi = np.log1p(-hp.phi_star)
        self.eta_step = config.eta_step * hp.eta_pt
        self.eta_ref = config.eta_ref * hp.eta_pt
        self.stats = dict(proposed={k: 0 for k in mv.KINDS}, accepted={k: 0 for k in mv.KINDS},
                          eta_proposed=0, eta_accepted=0, cftp_failures=0)
        self.iteration = 0

    # -- state setup ------------------------------------------------------

    def initialise(self, theta=None, gamma=None, eta=None, z=None, aux=None) -> None:
        cfg, hp = self.config, self.hp
        if theta is None:
            st = mv.random_valid_state(self.space, cfg.init_pathways, cfg.init_genes, self.rng)
        else:
            st = self.space.state(theta, gamma)
            report = check_validity(self.membership, st.theta, st.gamma)
            if not report.valid:
                raise ValueError(f"initial state is not valid: {report.violations}")
        if eta is None:
            eta = cfg.eta_init if cfg.eta_init is not None else hp.eta_pt * hp.c0 / (hp.c0 + hp.d0)
        if not 0.0 <= eta <= hp.eta_pt:
            raise ValueError("initial eta must lie in [0, eta_pt]")
        self.eta = float(eta)
        if aux is None and cfg.update_eta:
            aux = cftp_perfect_sample(self.csr, hp.mu_mrf, self.eta_ref,
                                      self.rng, t_max=cfg.t_max)
        self.aux = None if aux is None else np.asarray(aux, dtype=bool).copy()
        self.aux_stat = 0 if self.aux is None else int(_quad_count(self.aux.view(np.uint8),
                                                                   *self.csr))
        self._set_search_state(st)
        if self.survival:
            self.z = np.array(self.data.response if z is None else z, dtype=float)
            self._refresh_scores()
            if z is None:
                self.z = augment_aft(self.z, self.data, self._T(), hp, self.rng)
        else:
            self.z = None
        self._refresh_scores()

    def _set_search_state(self, st: mv.SearchState) -> None:
        self.st = st
        self.table = mv.move_table(self.space, st)
        self.gene_stat = self._gene_stat(st.theta, st.gamma)

    def _gene_stat(self, theta, gamma) -> int:
        if self.config.edge_rule == "union":
            return int(_quad_count(gamma.view(np.uint8), *self.csr))
        R = active_adjacency(self.network, self.membership, theta, self.config.edge_rule)
        return quadratic_count(gamma, R)

    @property
    def y(self) -> np.ndarray:
        return self.z if self.survival else self.data.response

    def _column(self, k: int, gamma: np.ndarray, yc: np.ndarray) -> np.ndarray:
        g = self.space.pathway_genes[k]
        return _pls_column(self.X[:, g[gamma[g]]], yc)

    def _refresh_scores(self) -> None:
        y = self.y
        self.yc = y - y.mean()
        self.cols = {int(k): self._column(k, self.st.gamma, self.yc)
                     for k in np.flatnonzero(self.st.theta)}
        self.loglik = marginal_log_likelihood(y, self._T(), self.hp)

    def _T(self, cols=None, theta=None) -> np.ndarray:
        cols = self.cols if cols is None else cols
        theta = self.st.theta if theta is None else theta
        ks = np.flatnonzero(theta)
        if ks.size == 0:
            return np.empty((self.data.n_samples, 0))
        return np.column_stack([cols[int(k)] for k in ks])

    def log_prior(self, k_on: int, n_genes: int, gene_stat: int, eta: float) -> float:
        K = self.membership.n_pathways
        return (k_on * self.log_phi + (K - k_on) * self.log_1m_phi
                + self.hp.mu_mrf * n_genes + eta * gene_stat)

    def current_log_prior(self) -> float:
        return self.log_prior(int(self.st.theta.sum()), int(self.st.gamma.sum()),
                              self.gene_stat, self.eta)

    def log_posterior(self) -> float:
        lp = self.loglik + self.current_log_prior()
        if self.config.update_eta:
            lp += eta_log_prior(self.eta, self.hp)
        return lp

    def model_state(self) -> ModelState:
        return ModelState(self.st.theta, self.st.gamma, self.eta,
                          None if self.z is None else self.z.copy(), self.aux)

    # -- kernels --------------------------------------------------------

    def step_theta_gamma(self) -> bool:
        st = self.st
        prop = mv.propose_move(self.space, st, self.rng, self.table)
        new = prop.new_state
        k, j = prop.pathway_index, prop.gene_index
        self.stats["proposed"][prop.kind] += 1

        affected: set[int] = set()
        if j is not None:
            affected.update(int(a) for a in self.space.gene_pathways[j] if new.theta[a])
        if k is not None and prop.direction == mv.ADD:
            affected.add(k)
        new_cols = {a: c for a, c in self.cols.items() if new.theta[a] and a not in affected}
        for a in affected:
            new_cols[a] = self._column(a, new.gamma, self.yc)
        T_new = self._T(new_cols, new.theta)
        ll_new = marginal_log_likelihood(self.y, T_new, self.hp)

        if j is None:
            gs_new = self.gene_stat if self.config.edge_rule == "union" else \
                self._gene_stat(new.theta, new.gamma)
        elif self.config.edge_rule == "union":
            nb = self.csr[1][self.csr[0][j]:self.csr[0][j + 1]]
            m = int(new.gamma[nb].sum())
            gs_new = self.gene_stat + (2 * m if prop.direction == mv.ADD else -2 * m)
        else:
            gs_new = self._gene_stat(new.theta, new.gamma)

        lp_old = self.current_log_prior()
        lp_new = self.log_prior(int(new.theta.sum()), int(new.gamma.sum()), gs_new, self.eta)
        log_a = ll_new - self.loglik + lp_new - lp_old + prop.log_proposal_ratio
        if np.log(self.rng.random()) < log_a:
            self.st, self.table, self.gene_stat = new, prop.new_table, gs_new
            self.cols, self.loglik = new_cols, ll_new
            self.stats["accepted"][prop.kind] += 1
            return True
        return False

    def step_eta(self) -> bool:
        self.stats["eta_proposed"] += 1
        up = _eta_move(self.eta, self.aux, self.aux_stat, self.gene_stat, self.csr, self.hp,
                       self.rng, self.eta_step, self.eta_ref, self.config.t_max)
        if up.cftp_failed:
            self.stats["cftp_failures"] += 1
            logger.warning("CFTP did not coalesce; eta proposal rejected")
        self.eta, self.aux, self.aux_stat = up.eta, up.aux, up.aux_stat
        self.stats["eta_accepted"] += int(up.accepted)
        return up.accepted

    def step_aft(self) -> None:
        self.z = augment_aft(self.z, self.data, self._T(), self.hp, self.rng)
        self._refresh_scores()

    def step(self) -> None:
        self.iteration += 1
        self.step_theta_gamma()
        if self.config.update_eta and self.iteration % self.config.eta_every == 0:
            self.step_eta()
        if self.survival:
            self.step_aft()

    # -- checkpoints ----------------------------------------------------

    def checkpoint_meta(self) -> dict:
        return dict(
            version=CHECKPOINT_VERSION, iteration=self.iteration,
            theta=self.st.theta.astype(int).tolist(), gamma=self.st.gamma.astype(int).tolist(),
            eta=self.eta, aux=None if self.aux is None else self.aux.astype(int).tolist(),
            z=None if self.z is None else [repr(float(v)) for v in self.z],
            rng_state=self.rng.bit_generator.state, config=self.config.as_dict(),
            hyperparameters=self.hp.as_dict(), stats=self.stats,
        )


def _initial_trace(chain: Chain, n_records: int) -> ChainTrace:
    m = chain.membership
    return ChainTrace(np.zeros(n_records, np.int64), np.zeros((n_records, m.n_pathways), bool),
                      np.zeros((n_records, m.n_genes), bool), np.zeros(n_records),
                      np.zeros(n_records), chain.config.burn_in, chain.config.seed,
                      m.pathway_ids, m.gene_ids)


def save_checkpoint(path: str | Path, chain: Chain, trace: ChainTrace, n_filled: int) -> None:
    """Atomically write a resumable snapshot (state, RNG, trace so far)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez_compressed(tmp, meta=json.dumps(chain.checkpoint_meta()),
                        iteration=trace.iteration[:n_filled], theta=trace.theta[:n_filled],
                        gamma=trace.gamma[:n_filled], eta=trace.eta[:n_filled],
                        log_posterior=trace.log_posterior[:n_filled])
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in ("iteration", "theta", "gamma", "eta", "log_posterior")}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    return meta, arrays


def run_chain(data: Dataset, membership: PathwayMembership, network: GeneNetwork,
              hp: Hyperparameters, config: ChainConfig,
              rng: np.random.Generator | None = None, *,
              checkpoint_path: str | Path | None = None,
              resume: bool = False, trace_path: str | Path | None = None,
              initial_state: ModelState | None = None) -> ChainTrace:
    """Run one chain and return its trace.

    Each iteration performs a (theta, gamma) MH step, an eta update every
    ``config.eta_every`` iterations and, for survival data, the latent-time
    augmentation.  With ``resume=True`` and an existing ``checkpoint_path``
    the run continues from the snapshot and produces the same trace as an
    uninterrupted run.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    chain = Chain(data, membership, network, hp, config, rng)
    n_records = config.iterations // config.thin
    trace = _initial_trace(chain, n_records)
    filled = 0
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        meta, arrays = load_checkpoint(checkpoint_path)
        if meta["config"] != config.as_dict() or meta["hyperparameters"] != hp.as_dict():
            raise ValueError("checkpoint was written with a different configuration")
        rng.bit_generator.state = meta["rng_state"]
        chain.initialise(np.array(meta["theta"], bool), np.array(meta["gamma"], bool),
                         meta["eta"], None if meta["z"] is None else np.array(meta["z"], float),
                         None if meta["aux"] is None else np.array(meta["aux"], bool))
        chain.iteration = meta["iteration"]
        chain.stats = meta["stats"]
        filled = arrays["iteration"].size
        for name, arr in arrays.items():
            getattr(trace, name)[:filled] = arr
        logger.info("resumed from iteration %d", chain.iteration)
    elif initial_state is not None:
        chain.initialise(initial_state.theta, initial_state.gamma, initial_state.eta,
                         initial_state.z_latent, initial_state.aux)
    else:
        chain.initialise()

    sink = writer = None
    if trace_path is not None:
        sink = open(trace_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(sink)
        writer.writerow(TRACE_COLUMNS)
        for i in range(filled):
            writer.writerow(_trace_row(trace.iteration[i], trace.theta[i].sum(),
                                       trace.gamma[i].sum(), trace.eta[i],
                                       trace.log_posterior[i]))
    t0 = time.perf_counter()
    try:
        while chain.iteration < config.iterations:
            chain.step()
            it = chain.iteration
            if it % config.thin == 0:
                lp = chain.log_posterior()
                trace.iteration[filled] = it
                trace.theta[filled] = chain.st.theta
                trace.gamma[filled] = chain.st.gamma
                trace.eta[filled] = chain.eta
                trace.log_posterior[filled] = lp
                filled += 1
                if writer is not None:
                    writer.writerow(_trace_row(it, chain.st.theta.sum(), chain.st.gamma.sum(),
                                               chain.eta, lp))
            if (checkpoint_path is not None and config.checkpoint_every
                    and it % config.checkpoint_every == 0):
                save_checkpoint(checkpoint_path, chain, trace, filled)
                if sink is not None:
                    sink.flush()
    finally:
        if sink is not None:
            sink.close()
    stats = dict(chain.stats)
    stats["seconds"] = time.perf_counter() - t0
    trace.stats = stats
    return trace


def mh_step_theta_gamma(state: ModelState, data: Dataset, membership: PathwayMembership,
                        network: GeneNetwork, hp: Hyperparameters, rng: np.random.Generator,
                        edge_rule: str = "union") -> ModelState:
    """One (theta, gamma) Metropolis-Hastings step from ``state`` at fixed eta.

    Convenience wrapper; long runs should use :func:`run_chain`, which keeps
    score columns and move tables between steps.
    """
    cfg = ChainConfig(iterations=1, burn_in=0, update_eta=False, edge_rule=edge_rule)
    chain = Chain(data, membership, network, hp, cfg, rng)
    chain.initialise(state.theta, state.gamma, state.eta, state.z_latent, state.aux)
    chain.step_theta_gamma()
    return state.replace(theta=chain.st.theta.copy(), gamma=chain.st.gamma.copy())

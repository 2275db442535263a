"""Pathway membership, gene network and expression data containers.

All containers are immutable after construction: arrays are copied and
marked read-only, so they can be shared freely between chains.

Genes and pathways are kept in lexicographic order of their identifiers,
which fixes every matrix layout independently of input file order.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
SURVIVAL = "survival"

EDGE_RULES = ("union", "shared")


class DataFormatError(ValueError):
    """Raised when an input file or matrix violates its format contract."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Pathway membership
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathwayMembership:
    """Binary K x p matrix linking pathways (rows) to genes (columns)."""

    pathway_ids: tuple[str, ...]
    gene_ids: tuple[str, ...]
    membership: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.membership)
        if S.ndim != 2 or S.shape != (len(self.pathway_ids), len(self.gene_ids)):
            raise DataFormatError(
                f"membership shape {S.shape} does not match "
                f"{len(self.pathway_ids)} pathways x {len(self.gene_ids)} genes"
            )
        if not np.isin(S, (0, 1)).all():
            raise DataFormatError("membership matrix must be binary")
        _check_unique(self.pathway_ids, "pathway")
        _check_unique(self.gene_ids, "gene")
        S = S.astype(bool)
        if S.shape[0] == 0 or S.shape[1] == 0:
            raise DataFormatError("membership needs at least one pathway and one gene")
        empty = np.flatnonzero(~S.any(axis=1))
        if empty.size:
            raise DataFormatError(
                f"empty pathway: {self.pathway_ids[empty[0]]!r} has no member genes"
            )
        orphans = np.flatnonzero(~S.any(axis=0))
        if orphans.size:
            raise DataFormatError(
                f"gene in no pathway: {self.gene_ids[orphans[0]]!r}"
            )
        object.__setattr__(self, "pathway_ids", tuple(self.pathway_ids))
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        object.__setattr__(self, "membership", _frozen(S))

    @classmethod
    def from_sets(cls, pathways: Mapping[str, Iterable[str]]) -> "PathwayMembership":
        """Build from ``{pathway_id: gene_ids}`` with canonical ordering."""
        for pid, genes in pathways.items():
            if not list(genes):
                raise DataFormatError(f"empty pathway: {pid!r} has no member genes")
        pids = sorted(pathways)
        gids = sorted({g for genes in pathways.values() for g in genes})
        gpos = {g: j for j, g in enumerate(gids)}
        S = np.zeros((len(pids), len(gids)), dtype=bool)
        for k, pid in enumerate(pids):
            for g in pathways[pid]:
                S[k, gpos[g]] = True
        return cls(tuple(pids), tuple(gids), S)

    @property
    def n_pathways(self) -> int:
        return self.membership.shape[0]

    @property
    def n_genes(self) -> int:
        return self.membership.shape[1]

    @cached_property
    def pathway_sizes(self) -> np.ndarray:
        return _frozen(self.membership.sum(axis=1))

    @cached_property
    def pathway_index(self) -> dict[str, int]:
        return {pid: k for k, pid in enumerate(self.pathway_ids)}

    @cached_property
    def gene_index(self) -> dict[str, int]:
        return {gid: j for j, gid in enumerate(self.gene_ids)}

    @cached_property
    def pathway_genes(self) -> tuple[np.ndarray, ...]:
        """Member gene indices of each pathway, ascending."""
        return tuple(_frozen(np.flatnonzero(row)) for row in self.membership)

    @cached_property
    def gene_pathways(self) -> tuple[np.ndarray, ...]:
        """Pathway indices containing each gene, ascending."""
        return tuple(_frozen(np.flatnonzero(col)) for col in self.membership.T)

    def restrict_genes(self, theta: np.ndarray) -> np.ndarray:
        """Boolean mask of genes belonging to at least one pathway with theta=1."""
        theta = np.asarray(theta, dtype=bool)
        return self.membership[theta].any(axis=0)


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DataFormatError(f"duplicate {what} identifier {i!r}")
        seen.add(i)


def _read_records(path: Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, [part.strip() for part in line.split("\t")]


def load_membership(path: str | Path) -> PathwayMembership:
    """Read a ``pathway_id<TAB>gene_id`` file.

    A line holding only a pathway identifier declares that pathway, which is
    then rejected as empty if no gene line follows for it.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    pathways: dict[str, list[str]] = {}
    seen: set[tuple[str, str]] = set()
    for lineno, parts in _read_records(path):
        if len(parts) == 1 or (len(parts) == 2 and parts[1] == ""):
            if not parts[0]:
                raise DataFormatError(f"{path}:{lineno}: malformed row")
            pathways.setdefault(parts[0], [])
            continue
        if len(parts) != 2:
            raise DataFormatError(
                f"{path}:{lineno}: malformed row, expected pathway_id<TAB>gene_id"
            )
        pid, gid = parts
        if not pid:
            raise DataFormatError(f"{path}:{lineno}: gene in no pathway: {gid!r}")
        if (pid, gid) in seen:
            raise DataFormatError(
                f"{path}:{lineno}: duplicate identifier pair ({pid!r}, {gid!r})"
            )
        seen.add((pid, gid))
        pathways.setdefault(pid, []).append(gid)
    if not pathways:
        raise DataFormatError(f"{path}: no membership records")
    return PathwayMembership.from_sets(pathways)


def write_membership(path: str | Path, membership: PathwayMembership) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, pid in enumerate(membership.pathway_ids):
            for j in membership.pathway_genes[k]:
                fh.write(f"{pid}\t{membership.gene_ids[j]}\n")


# ---------------------------------------------------------------------------
# Gene network
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeneNetwork:
    """Symmetric binary adjacency over genes with zero diagonal."""

    adjacency: np.ndarray
    gene_ids: tuple[str, ...] = ()

    def __post_init__(self):
        R = np.asarray(self.adjacency)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise DataFormatError(f"adjacency must be square, got {R.shape}")
        if not np.isin(R, (0, 1)).all():
            raise DataFormatError("adjacency must be binary")
        R = R.astype(bool)
        if (R != R.T).any():
            raise DataFormatError("adjacency must be symmetric")
        if R.diagonal().any():
            raise DataFormatError("adjacency must have a zero diagonal")
        if self.gene_ids and len(self.gene_ids) != R.shape[0]:
            raise DataFormatError("gene_ids length does not match adjacency")
        object.__setattr__(self, "adjacency", _frozen(R))
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))

    @classmethod
    def from_edges(cls, n_genes: int, edges: Iterable[tuple[int, int]],
                   gene_ids: Sequence[str] = ()) -> "GeneNetwork":
        R = np.zeros((n_genes, n_genes), dtype=bool)
        for i, j in edges:
            if i != j:
                R[i, j] = R[j, i] = True
        return cls(R, tuple(gene_ids))

    @property
    def n_genes(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indptr, indices)`` neighbour lists, int64, for compiled kernels."""
        deg = self.adjacency.sum(axis=1)
        indptr = np.zeros(self.n_genes + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.nonzero(self.adjacency)[1].astype(np.int64)
        return _frozen(indptr), _frozen(indices)

    @cached_property
    def degree(self) -> np.ndarray:
        return _frozen(self.adjacency.sum(axis=1))

    def edges(self) -> np.ndarray:
        """Upper-triangular edge list as an (m, 2) int array."""
        return np.argwhere(np.triu(self.adjacency, 1))


def load_network(path: str | Path, membership: PathwayMembership) -> GeneNetwork:
    """Read a ``gene_id<TAB>gene_id`` edge list aligned to ``membership``.

    Self-loops are dropped with a warning and repeated edges (in either
    orientation) are collapsed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    index = membership.gene_index
    edges = set()
    n_loops = 0
    for lineno, parts in _read_records(path):
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise DataFormatError(
                f"{path}:{lineno}: malformed line, expected gene_id<TAB>gene_id"
            )
        try:
            i, j = index[parts[0]], index[parts[1]]
        except KeyError as exc:
            raise DataFormatError(
                f"{path}:{lineno}: unknown gene identifier {exc.args[0]!r}"
            ) from None
        if i == j:
            n_loops += 1
            continue
        edges.add((min(i, j), max(i, j)))
    if n_loops:
        logger.warning("%s: dropped %d self-loop(s)", path, n_loops)
    return GeneNetwork.from_edges(membership.n_genes, edges, membership.gene_ids)


def write_network(path: str | Path, network: GeneNetwork) -> None:
    ids = network.gene_ids or tuple(str(j) for j in range(network.n_genes))
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in network.edges():
            fh.write(f"{ids[i]}\t{ids[j]}\n")


def active_adjacency(network: GeneNetwork, membership: PathwayMembership,
                     theta: np.ndarray, rule: str = "union") -> GeneNetwork:
    """Restrict the network to genes of the pathways selected in ``theta``.

    With ``rule="union"`` an edge survives when each endpoint lies in some
    selected pathway.  ``rule="shared"`` additionally requires a single
    selected pathway containing both endpoints.
    """
    theta = np.asarray(theta, dtype=bool)
    if theta.shape != (membership.n_pathways,):
        raise ValueError(f"theta must have length {membership.n_pathways}")
    R = network.adjacency
    if theta.all() and rule == "union":
        return network
    S_sel = membership.membership[theta]
    if rule == "union":
        inside = S_sel.any(axis=0)
        keep = R & inside[:, None] & inside[None, :]
    elif rule == "shared":
        S_int = S_sel.astype(np.int32)
        keep = R & ((S_int.T @ S_int) > 0)
    else:
        raise ValueError(f"unknown edge rule {rule!r}; expected one of {EDGE_RULES}")
    return GeneNetwork(keep, network.gene_ids)


# ---------------------------------------------------------------------------
# Expression data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Centered expression matrix with its response.

    ``response`` holds log survival times when ``outcome_kind`` is
    ``"survival"``; ``censoring`` then flags observed events with 1.
    ``column_means`` are the means that were subtracted, so a test set can be
    centered with training means via :meth:`from_raw`.
    """

    expression: np.ndarray
    response: np.ndarray
    outcome_kind: str = CONTINUOUS
    censoring: np.ndarray | None = None
    sample_ids: tuple[str, ...] = ()
    gene_ids: tuple[str, ...] = ()
    column_means: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.expression, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if X.ndim != 2:
            raise DataFormatError("expression must be a matrix")
        n = X.shape[0]
        if y.shape != (n,):
            raise DataFormatError(
                f"dimension mismatch: {n} expression rows but response of shape {y.shape}"
            )
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataFormatError("missing or non-finite values are not supported")
        if self.outcome_kind not in (CONTINUOUS, SURVIVAL):
            raise DataFormatError(f"unknown outcome kind {self.outcome_kind!r}")
        if (self.censoring is None) != (self.outcome_kind == CONTINUOUS):
            raise DataFormatError("censoring flags are required iff outcome is survival")
        if self.censoring is not None:
            d = np.asarray(self.censoring)
            if d.shape != (n,) or not np.isin(d, (0, 1)).all():
                raise DataFormatError("censoring must be a 0/1 vector of length n")
            object.__setattr__(self, "censoring", _frozen(d.astype(np.int8)))
        means = np.zeros(X.shape[1]) if self.column_means is None else self.column_means
        object.__setattr__(self, "expression", _frozen(X))
        object.__setattr__(self, "response", _frozen(y))
        object.__setattr__(self, "column_means", _frozen(np.asarray(means, dtype=float)))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids) or
                           tuple(f"s{i}" for i in range(n)))
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))

    @classmethod
    def from_raw(cls, raw_expression, response, *, outcome_kind: str = CONTINUOUS,
                 censoring=None, survival_times: bool = False,
                 sample_ids: Sequence[str] = (), gene_ids: Sequence[str] = (),
                 center_with: np.ndarray | None = None) -> "Dataset":
        """Center ``raw_expression`` and wrap it.

        ``center_with`` supplies external (training) column means; by default
        the data are centered on their own means.  With ``survival_times``
        the response is validated as strictly positive and log-transformed.
        """
        X = np.asarray(raw_expression, dtype=float)
        y = np.asarray(response, dtype=float)
        if survival_times:
            if (y <= 0).any():
                raise DataFormatError("non-positive survival time")
            y = np.log(y)
        means = X.mean(axis=0) if center_with is None else np.asarray(center_with, float)
        return cls(X - means, y, outcome_kind, censoring, tuple(sample_ids),
                   tuple(gene_ids), means)

    @property
    def n_samples(self) -> int:
        return self.expression.shape[0]

    @property
    def n_genes(self) -> int:
        return self.expression.shape[1]

    @property
    def raw_expression(self) -> np.ndarray:
        return self.expression + self.column_means

    def subset(self, rows: np.ndarray, center_with: np.ndarray | None = None) -> "Dataset":
        """Rows of the raw data, re-centered (own means unless given)."""
        rows = np.asarray(rows)
        cens = None if self.censoring is None else self.censoring[rows]
        return Dataset.from_raw(
            self.raw_expression[rows], self.response[rows],
            outcome_kind=self.outcome_kind, censoring=cens,
            sample_ids=[self.sample_ids[i] for i in rows], gene_ids=self.gene_ids,
            center_with=center_with,
        )


def center_columns(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X - X.mean(axis=0)


def _sniff_delimiter(path: Path) -> str:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    return "\t" if head.count("\t") > head.count(",") else ","


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    delim = _sniff_delimiter(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delim) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return [c.strip() for c in rows[0]], [[c.strip() for c in r] for r in rows[1:]]


def _parse_float(value: str, where: str) -> float:
    if value == "" or value.upper() in ("NA", "NAN", "NULL"):
        raise DataFormatError(f"{where}: missing value (imputation is not supported)")
    try:
        out = float(value)
    except ValueError:
        raise DataFormatError(f"{where}: not a number: {value!r}") from None
    if not np.isfinite(out):
        raise DataFormatError(f"{where}: missing value (imputation is not supported)")
    return out


def read_expression(x_path: str | Path, membership: PathwayMembership,
                    ) -> tuple[list[str], np.ndarray]:
    """Sample ids and raw (uncentered) expression, columns in membership order."""
    x_path = Path(x_path)
    header, rows = _read_table(x_path)
    genes = header[1:]
    _check_unique(genes, "gene")
    known = set(membership.gene_ids)
    unknown = [g for g in genes if g not in known]
    if unknown:
        raise DataFormatError(f"{x_path}: gene in no pathway: {unknown[0]!r}")
    missing = known.difference(genes)
    if missing:
        raise DataFormatError(
            f"{x_path}: dimension mismatch, {len(missing)} membership gene(s) absent, "
            f"e.g. {sorted(missing)[0]!r}"
        )
    order = [genes.index(g) for g in membership.gene_ids]
    sample_ids, X = [], []
    for r, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise DataFormatError(f"{x_path}:{r}: dimension mismatch, expected {len(header)} fields")
        sample_ids.append(row[0])
        vals = [_parse_float(v, f"{x_path}:{r}") for v in row[1:]]
        X.append([vals[c] for c in order])
    _check_unique(sample_ids, "sample")
    return sample_ids, np.array(X, dtype=float).reshape(len(sample_ids), membership.n_genes)


def load_dataset(x_path: str | Path, y_path: str | Path, membership: PathwayMembership,
                 outcome_kind: str | None = None,
                 center_with: np.ndarray | None = None) -> Dataset:
    """Load expression and response files, aligned to ``membership`` genes.

    The response file has columns ``sample_id, y`` and optionally ``delta``.
    A ``delta`` column makes the outcome survival (``y`` = survival time),
    unless ``outcome_kind`` says otherwise.  ``center_with`` gives external
    (e.g. training) column means.
    """
    x_path, y_path = Path(x_path), Path(y_path)
    sample_ids, X = read_expression(x_path, membership)

    yh, yrows = _read_table(y_path)
    cols = [c.lower() for c in yh]
    if "y" not in cols[1:]:
        raise DataFormatError(f"{y_path}: expected columns sample_id, y[, delta]")
    iy = cols.index("y")
    idelta = cols.index("delta") if "delta" in cols else None
    kind = outcome_kind or (SURVIVAL if idelta is not None else CONTINUOUS)
    if kind == SURVIVAL and idelta is None:
        raise DataFormatError(f"{y_path}: survival outcome needs a delta column")
    resp: dict[str, tuple[float, int | None]] = {}
    for r, row in enumerate(yrows, 2):
        if len(row) != len(yh):
            raise DataFormatError(f"{y_path}:{r}: malformed row")
        yv = _parse_float(row[iy], f"{y_path}:{r}")
        dv = None
        if kind == SURVIVAL:
            dv = int(_parse_float(row[idelta], f"{y_path}:{r}"))
            if dv not in (0, 1):
                raise DataFormatError(f"{y_path}:{r}: delta must be 0 or 1")
        if row[0] in resp:
            raise DataFormatError(f"{y_path}:{r}: duplicate sample identifier {row[0]!r}")
        resp[row[0]] = (yv, dv)
    if set(resp) != set(sample_ids):
        raise DataFormatError(
            f"dimension mismatch: sample identifiers in {x_path} and {y_path} differ"
        )
    y = np.array([resp[s][0] for s in sample_ids])
    delta = np.array([resp[s][1] for s in sample_ids]) if kind == SURVIVAL else None
    return Dataset.from_raw(
        X, y, outcome_kind=kind, censoring=delta, survival_times=(kind == SURVIVAL),
        sample_ids=sample_ids, gene_ids=membership.gene_ids, center_with=center_with,
    )


def write_dataset(x_path: str | Path, y_path: str | Path, data: Dataset) -> None:
    """Write raw (uncentered) expression and response files.

    Survival responses are written back as times, with a delta column.
    """
    gene_ids = data.gene_ids or tuple(f"g{j}" for j in range(data.n_genes))
    raw = data.raw_expression
    with open(x_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", *gene_ids])
        for sid, row in zip(data.sample_ids, raw):
            w.writerow([sid, *(repr(float(v)) for v in row)])
    with open(y_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if data.outcome_kind == SURVIVAL:
            w.writerow(["sample_id", "y", "delta"])
            for sid, yv, dv in zip(data.sample_ids, np.exp(data.response), data.censoring):
                w.writerow([sid, repr(float(yv)), int(dv)])
        else:
            w.writerow(["sample_id", "y"])
            for sid, yv in zip(data.sample_ids, data.response):
                w.writerow([sid, repr(float(yv))])


def train_test_split(data: Dataset, n_train: int, rng: np.random.Generator,
                     ) -> tuple[Dataset, Dataset]:
    """Random split, balanced on censoring status for survival data.

    The test set is centered with the training column means.
    """
    n = data.n_samples
    if not 0 < n_train < n:
        raise ValueError(f"n_train must lie in (0, {n})")
    if data.censoring is None:
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
    else:
        train_parts = []
        groups = [np.flatnonzero(data.censoring == v) for v in (1, 0)]
        frac = n_train / n
        quotas = [int(round(frac * g.size)) for g in groups]
        quotas[1] = n_train - quotas[0]
        for g, q in zip(groups, quotas):
            train_parts.append(rng.permutation(g)[:q])
        train = np.sort(np.concatenate(train_parts))
    test = np.setdiff1d(np.arange(n), train)
    train_set = data.subset(train)
    return train_set, data.subset(test, center_with=train_set.column_means)


# ---------------------------------------------------------------------------
# Model state
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelState:
    """Pathway and gene inclusion indicators plus the MRF parameter.

    ``z_latent`` carries the augmented log-times of a survival chain and
    ``aux`` the auxiliary gene vector of the exchange-type eta update.
    """

    theta: np.ndarray
    gamma: np.ndarray
    eta: float = 0.0
    z_latent: np.ndarray | None = None
    aux: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(np.asarray(self.theta, dtype=bool)))
        object.__setattr__(self, "gamma", _frozen(np.asarray(self.gamma, dtype=bool)))
        object.__setattr__(self, "eta", float(self.eta))
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.z_latent is not None:
            object.__setattr__(self, "z_latent", _frozen(np.asarray(self.z_latent, float)))
        if self.aux is not None:
            object.__setattr__(self, "aux", _frozen(np.asarray(self.aux, dtype=bool)))

    @classmethod
    def empty(cls, membership: PathwayMembership, eta: float = 0.0) -> "ModelState":
        return cls(np.zeros(membership.n_pathways, bool), np.zeros(membership.n_genes, bool), eta)

    @property
    def k_theta(self) -> int:
        return int(self.theta.sum())

    @property
    def n_selected_genes(self) -> int:
        return int(self.gamma.sum())

    def replace(self, **changes) -> "ModelState":
        fields = dict(theta=self.theta, gamma=self.gamma, eta=self.eta,
                      z_latent=self.z_latent, aux=self.aux)
        fields.update(changes)
        return ModelState(**fields)

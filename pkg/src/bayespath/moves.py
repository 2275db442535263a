"""Constrained single-step moves over (theta, gamma).

Three move kinds, each with an add and a remove direction:

* ``both``: add a pathway together with one of its genes, or remove a
  selected pathway together with one of its selected genes;
* ``gene``: add or remove one gene, pathways unchanged;
* ``pathway``: add or remove one pathway, genes unchanged.

A proposal draws the kind uniformly among kinds that have at least one
feasible direction, then a feasible direction uniformly, then a candidate
uniformly.  Candidate sets contain exactly the moves whose result is a valid
configuration (no empty pathway, no orphan gene, no two selected pathways
with identical selected-gene sets), so every move is reversible and the
proposal ratio follows from the candidate-set sizes on both sides.

Set identity between pathways is tracked with 64-bit additive hashes of the
selected genes; any hash match is confirmed by an exact comparison.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse

from .graph_data import PathwayMembership

BOTH, GENE, PATHWAY = "both", "gene", "pathway"
ADD, REMOVE = "add", "remove"
KINDS = (BOTH, GENE, PATHWAY)

_HASH_SEED = 0x5EED_CAFE
_MASK64 = (1 << 64) - 1


class MoveSpace:
    """Static indexing of a membership matrix used by the move machinery."""

    def __init__(self, membership: PathwayMembership):
        self.membership = membership
        S = membership.membership
        self.S = S
        self.K, self.p = S.shape
        rows = sparse.csr_matrix(S.astype(np.int64))
        cols = sparse.csr_matrix(S.T.astype(np.int64))
        self.row_ptr, self.row_idx = rows.indptr.astype(np.int64), rows.indices.astype(np.int64)
        self.col_ptr, self.col_idx = cols.indptr.astype(np.int64), cols.indices.astype(np.int64)
        self.pair_k, self.pair_j = np.nonzero(S)
        self.pathway_genes = membership.pathway_genes
        self.gene_pathways = membership.gene_pathways
        weights = np.random.default_rng(_HASH_SEED).integers(
            1, np.iinfo(np.uint64).max, size=self.p, dtype=np.uint64, endpoint=True)
        self.weights = weights
        self.weights_list = [int(v) for v in weights]

    def state(self, theta, gamma) -> "SearchState":
        theta = np.asarray(theta, dtype=bool).copy()
        gamma = np.asarray(gamma, dtype=bool).copy()
        count = _csr_matvec(self.row_ptr, self.row_idx, gamma.view(np.uint8))
        cover = _csr_matvec(self.col_ptr, self.col_idx, theta.view(np.uint8))
        wg = np.where(gamma, self.weights, np.uint64(0))
        h = np.array([np.add.reduce(wg[g], dtype=np.uint64) if g.size else np.uint64(0)
                      for g in self.pathway_genes], dtype=np.uint64)
        return SearchState(theta, gamma, count, cover, h)

    def selected_set(self, st: "SearchState", k: int) -> np.ndarray:
        g = self.pathway_genes[k]
        return g[st.gamma[g]]


@dataclass
class SearchState:
    theta: np.ndarray
    gamma: np.ndarray
    count: np.ndarray  # selected genes per pathway
    cover: np.ndarray  # selected pathways per gene
    hash: np.ndarray   # additive hash of each pathway's selected-gene set

    def copy(self) -> "SearchState":
        return SearchState(self.theta.copy(), self.gamma.copy(), self.count.copy(),
                           self.cover.copy(), self.hash.copy())


@dataclass
class MoveTable:
    """Feasible candidates of one state for each (kind, direction)."""

    both_add: tuple[np.ndarray, np.ndarray]
    both_remove: tuple[np.ndarray, np.ndarray]
    gene_add: np.ndarray
    gene_remove: np.ndarray
    pathway_add: np.ndarray
    pathway_remove: np.ndarray

    def __post_init__(self):
        self._sizes = {(kind, d): int(c[0].size if kind == BOTH else c.size)
                       for kind in KINDS for d in (ADD, REMOVE)
                       for c in (getattr(self, f"{kind}_{d}"),)}

    def size(self, kind: str, direction: str) -> int:
        return self._sizes[(kind, direction)]

    def candidates(self, kind: str, direction: str):
        return getattr(self, f"{kind}_{direction}")

    def directions(self, kind: str) -> list[str]:
        return [d for d in (ADD, REMOVE) if self.size(kind, d) > 0]

    def kinds(self) -> list[str]:
        return [k for k in KINDS if self.directions(k)]

    def log_prob(self, kind: str, direction: str) -> float:
        """Log probability of proposing one particular candidate."""
        return -np.log(len(self.kinds())) - np.log(len(self.directions(kind))) \
            - np.log(self.size(kind, direction))


@dataclass
class MoveProposal:
    kind: str
    direction: str
    pathway_index: int | None
    gene_index: int | None
    log_proposal_ratio: float
    new_state: SearchState
    new_table: MoveTable


def _same_selected_set(space: MoveSpace, st: SearchState, a: int, b: int,
                       drop_from_a: int | None = None) -> bool:
    sa = space.selected_set(st, a)
    if drop_from_a is not None:
        sa = sa[sa != drop_from_a]
    return np.array_equal(sa, space.selected_set(st, b))


@numba.njit(cache=True)
def _csr_matvec(indptr, indices, x):
    out = np.zeros(indptr.shape[0] - 1, dtype=np.int64)
    for r in range(out.shape[0]):
        s = 0
        for a in range(indptr[r], indptr[r + 1]):
            s += x[indices[a]]
        out[r] = s
    return out


def move_table(space: MoveSpace, st: SearchState) -> MoveTable:
    theta, gamma, count, cover, h = st.theta, st.gamma, st.count, st.cover, st.hash
    sel_k = np.flatnonzero(theta)
    by_hash: dict[int, list[int]] = {}
    for k in sel_k.tolist():
        by_hash.setdefault(int(h[k]), []).append(k)

    # pathway add: nonempty selected set, not identical to a selected pathway's
    pa = np.flatnonzero(~theta & (count >= 1))
    dup_unsel: list[tuple[int, int]] = []  # (unselected k, selected l) with equal sets
    if by_hash and pa.size:
        hp = h[pa].tolist()
        drop = [i for i, hk in enumerate(hp) if hk in by_hash]
        if drop:
            keep = np.ones(pa.size, dtype=bool)
            for i in drop:
                k = int(pa[i])
                for l in by_hash[hp[i]]:
                    if _same_selected_set(space, st, k, l):
                        keep[i] = False
                        dup_unsel.append((k, l))
            pa = pa[keep]

    # pathway remove: every selected gene of the pathway is covered elsewhere
    orphan_risk = gamma & (cover == 1)
    risk = _csr_matvec(space.row_ptr, space.row_idx, orphan_risk.view(np.uint8))
    pr = np.flatnonzero(theta & (risk == 0))

    # gene add: the gene lies in a selected pathway; cannot create duplicates
    ga = np.flatnonzero(~gamma & (cover >= 1))

    # gene remove: no selected pathway left empty, no duplicate created
    singles = theta & (count == 1)
    n_single = _csr_matvec(space.col_ptr, space.col_idx, singles.view(np.uint8))
    dup_pairs: dict[int, list[tuple[int, int]]] = {}
    if len(sel_k) > 1:
        w = space.weights_list
        for l in sel_k.tolist():
            hl = int(h[l])
            for j in space.selected_set(st, l).tolist():
                ms = by_hash.get((hl - w[j]) & _MASK64)
                if ms is None:
                    continue
                for m in ms:
                    if m != l and _same_selected_set(space, st, l, m, drop_from_a=j):
                        dup_pairs.setdefault(j, []).append((l, m))
    gr_mask = gamma & (n_single == 0)
    for j in dup_pairs:
        gr_mask[j] = False
    gr = np.flatnonzero(gr_mask)

    pk, pj = space.pair_k, space.pair_j
    # both add: (k, j) with k unselected, j unselected member of k; invalid only
    # if k's current selected set equals that of a selected pathway containing j
    m_add = ~theta[pk] & ~gamma[pj]
    for k, l in dup_unsel:
        m_add &= ~((pk == k) & space.S[l, pj])
    ba = (pk[m_add], pj[m_add])

    # both remove: (k, j) with k selected, j a selected member of k
    m_rem = theta[pk] & gamma[pj]
    m_rem &= (risk[pk] - orphan_risk[pj]) == 0
    m_rem &= (n_single[pj] - (count[pk] == 1)) == 0
    bk, bj = pk[m_rem], pj[m_rem]
    if dup_pairs:
        keep = np.ones(bk.size, dtype=bool)
        for i, (k, j) in enumerate(zip(bk.tolist(), bj.tolist())):
            pairs = dup_pairs.get(j)
            if pairs and any(l != k and m != k for l, m in pairs):
                keep[i] = False
        bk, bj = bk[keep], bj[keep]

    return MoveTable((ba[0], ba[1]), (bk, bj), ga, gr, pa, pr)


def apply_move(space: MoveSpace, st: SearchState, kind: str, direction: str,
               k: int | None, j: int | None) -> SearchState:
    new = st.copy()
    sign = 1 if direction == ADD else -1
    if j is not None:
        new.gamma[j] = direction == ADD
        gp = space.gene_pathways[j]
        new.count[gp] += sign
        if sign > 0:
            new.hash[gp] += space.weights[j]
        else:
            new.hash[gp] -= space.weights[j]
    if k is not None:
        new.theta[k] = direction == ADD
        new.cover[space.pathway_genes[k]] += sign
    return new


def _pick(table: MoveTable, kind: str, direction: str, i: int):
    c = table.candidates(kind, direction)
    if kind == BOTH:
        return int(c[0][i]), int(c[1][i])
    if kind == GENE:
        return None, int(c[i])
    return int(c[i]), None


def _reverse_index(table: MoveTable, kind: str, direction: str, k, j) -> int:
    c = table.candidates(kind, direction)
    if kind == BOTH:
        hit = np.flatnonzero((c[0] == k) & (c[1] == j))
    elif kind == GENE:
        hit = np.flatnonzero(c == j)
    else:
        hit = np.flatnonzero(c == k)
    return int(hit[0]) if hit.size else -1


def propose_move(space: MoveSpace, st: SearchState, rng: np.random.Generator,
                 table: MoveTable | None = None, check_reverse: bool = False,
                 ) -> MoveProposal:
    """Draw one move from ``st`` and compute its log proposal ratio.

    The empty model always admits a ``both``/``add`` move, so some kind is
    always feasible.
    """
    table = move_table(space, st) if table is None else table
    kinds = table.kinds()
    if not kinds:
        raise RuntimeError("no feasible move from this state")
    kind = kinds[rng.integers(len(kinds))]
    dirs = table.directions(kind)
    direction = dirs[rng.integers(len(dirs))]
    k, j = _pick(table, kind, direction, int(rng.integers(table.size(kind, direction))))
    new = apply_move(space, st, kind, direction, k, j)
    new_table = move_table(space, new)
    back = REMOVE if direction == ADD else ADD
    if check_reverse and _reverse_index(new_table, kind, back, k, j) < 0:
        raise AssertionError(f"reverse of {kind}/{direction} ({k}, {j}) is not feasible")
    log_ratio = new_table.log_prob(kind, back) - table.log_prob(kind, direction)
    return MoveProposal(kind, direction, k, j, float(log_ratio), new, new_table)


def random_valid_state(space: MoveSpace, n_pathways: int, n_genes: int,
                       rng: np.random.Generator) -> SearchState:
    """Random valid start: ``n_pathways`` pathway+gene additions from the
    empty model, followed by ``n_genes`` extra gene additions."""
    st = space.state(np.zeros(space.K, bool), np.zeros(space.p, bool))
    for _ in range(n_pathways):
        t = move_table(space, st)
        n = t.size(BOTH, ADD)
        if n == 0:
            break
        k, j = _pick(t, BOTH, ADD, int(rng.integers(n)))
        st = apply_move(space, st, BOTH, ADD, k, j)
    for _ in range(n_genes):
        t = move_table(space, st)
        n = t.size(GENE, ADD)
        if n == 0:
            break
        _, j = _pick(t, GENE, ADD, int(rng.integers(n)))
        st = apply_move(space, st, GENE, ADD, None, j)
    return st

import numpy as np
import pytest

from bayespath.graph_data import GeneNetwork, PathwayMembership
from bayespath.simgen import (SimConfig, SimTruth, bfs_parents, generate,
                              random_pathway_structure, read_truth, select_truth,
                              simulate_study, to_survival, write_truth)


@pytest.fixture
def chain3():
    m = PathwayMembership.from_sets({"A": ["g0", "g1", "g2"], "B": ["g3", "g4"]})
    net = GeneNetwork.from_edges(5, [(0, 1), (1, 2), (3, 4)])
    return m, net


class TestStructure:
    def test_shape_and_coverage(self, rng):
        m, net = random_pathway_structure(20, 300, rng)
        assert (m.n_pathways, m.n_genes) == (20, 300)
        assert m.membership.any(axis=0).all() and m.membership.any(axis=1).all()
        assert net.n_genes == 300 and net.edge_count > 0

    def test_pathways_are_connected(self, rng):
        m, net = random_pathway_structure(8, 80, rng)
        R = net.adjacency
        for genes in m.pathway_genes:
            seen = {int(genes[0])}
            frontier = [int(genes[0])]
            while frontier:
                v = frontier.pop()
                for u in genes:
                    if R[v, u] and int(u) not in seen:
                        seen.add(int(u))
                        frontier.append(int(u))
            assert len(seen) == genes.size


class TestTruth:
    def test_seed_plus_neighbours(self, chain3, rng):
        m, net = chain3
        truth = select_truth(m, net, 2, rng)
        for k, genes in zip(truth.pathways, truth.genes):
            seed = genes[0]
            expected = {seed} | {int(j) for j in m.pathway_genes[k] if net.adjacency[seed, j]}
            assert set(genes) == expected

    def test_isolated_seed(self):
        m = PathwayMembership.from_sets({"A": ["g0"], "B": ["g1", "g2"]})
        net = GeneNetwork.from_edges(3, [(1, 2)])
        truth = select_truth(m, net, 2, np.random.default_rng(0))
        assert dict(zip(truth.pathways, truth.genes))[0] == (0,)

    def test_deterministic(self, rng):
        m, net = random_pathway_structure(10, 100, np.random.default_rng(1))
        a = select_truth(m, net, 4, np.random.default_rng(9))
        b = select_truth(m, net, 4, np.random.default_rng(9))
        assert a == b

    def test_disjoint_genes(self):
        cfg, _ = simulate_study(seed=2)
        flat = [j for g in cfg.truth.genes for j in g]
        assert len(flat) == len(set(flat)) and len(cfg.truth.pathways) == 4

    def test_no_edges(self):
        m = PathwayMembership.from_sets({"A": ["g0"]})
        with pytest.raises(ValueError):
            select_truth(m, GeneNetwork.from_edges(1, []), 1, np.random.default_rng(0))


class TestGenerate:
    def test_bfs_orientation(self, chain3):
        _, net = chain3
        order = bfs_parents((1, 0, 2), net.adjacency)
        assert order == [(1, []), (0, [1]), (2, [1])]

    def test_root_and_slope(self, chain3):
        m, net = chain3
        truth = SimTruth((0,), ((0, 1, 2),))
        cfg = SimConfig(m, net, 20000, truth, rho_sim=0.7, seed=3)
        raw = generate(cfg).raw_expression
        assert abs(raw[:, 0].mean()) < 0.03 and abs(raw[:, 0].var() - 1) < 0.04
        slope = np.polyfit(raw[:, 0], raw[:, 1], 1)[0]
        assert slope == pytest.approx(0.7, abs=0.03)
        # grandchild regresses on its own parent, not on the root
        assert np.polyfit(raw[:, 1], raw[:, 2], 1)[0] == pytest.approx(0.7, abs=0.03)

    def test_seed_reproducible(self):
        _, a = simulate_study(seed=5)
        _, b = simulate_study(seed=5)
        _, c = simulate_study(seed=6)
        assert a.expression.tobytes() == b.expression.tobytes()
        assert a.expression.tobytes() != c.expression.tobytes()

    def test_irrelevant_genes(self):
        cfg, data = simulate_study(seed=1)
        irrelevant = np.setdiff1d(np.arange(cfg.membership.n_genes), cfg.truth.all_genes)
        r = np.array([np.corrcoef(data.expression[:, j], data.response)[0, 1]
                      for j in irrelevant])
        assert np.abs(r).max() < 4 / np.sqrt(data.n_samples)

    def test_signs(self):
        cfg, _ = simulate_study(seed=1, beta=0.5)
        beta = cfg.beta()
        signs = [np.sign(beta[list(g)]) for g in cfg.truth.genes]
        assert all(np.unique(s).size == 1 for s in signs)
        assert [int(s[0]) for s in signs] == [1, -1, 1, -1]
        assert np.all(np.abs(beta[cfg.truth.all_genes]) == 0.5)

    def test_mean_parent_variant(self, chain3):
        m, net = chain3
        cfg = SimConfig(m, net, 10, SimTruth((0,), ((0, 1, 2),)), parent_mean="mean")
        assert generate(cfg).n_samples == 10

    @pytest.mark.parametrize("kw", [dict(rho_sim=1.0), dict(noise_sd=-1.0),
                                    dict(n_samples=1), dict(parent_mean="median")])
    def test_rejects(self, chain3, kw):
        m, net = chain3
        base = dict(membership=m, network=net, n_samples=10, truth=SimTruth((0,), ((0,),)))
        with pytest.raises(ValueError):
            SimConfig(**{**base, **kw})

    def test_truth_must_be_members(self, chain3):
        m, net = chain3
        with pytest.raises(ValueError, match="not all members"):
            SimConfig(m, net, 10, SimTruth((1,), ((0,),)))

    def test_survival_extension(self, rng):
        _, data = simulate_study(seed=0, n_samples=40)
        surv = to_survival(data, 0.25, rng)
        assert surv.outcome_kind == "survival" and (surv.censoring == 0).sum() == 10
        obs = surv.censoring == 1
        np.testing.assert_allclose(surv.response[obs], data.response[obs])
        assert np.all(surv.response[~obs] <= data.response[~obs])


class TestTruthFile:
    def test_round_trip(self, tmp_path):
        cfg, _ = simulate_study(seed=4)
        write_truth(tmp_path / "truth.csv", cfg)
        assert read_truth(tmp_path / "truth.csv", cfg.membership) == cfg.truth
        rows = (tmp_path / "truth.csv").read_text().splitlines()
        assert rows[0] == "pathway_id,gene_id,beta,is_seed,rho,seed"
        assert all(r.split(",")[4] == "0.7" for r in rows[1:])

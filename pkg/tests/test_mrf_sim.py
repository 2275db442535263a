import numpy as np
import pytest
from scipy.special import comb, expit, logsumexp
from scipy.stats import chisquare

from bayespath.graph_data import GeneNetwork
from bayespath.mrf_sim import (CFTPError, as_csr, cftp_coalescence_time, cftp_perfect_sample,
                               edge_statistic, gibbs_chain, gibbs_sweep,
                               phase_transition_scan)
from bayespath.priors import quadratic_count
from conftest import random_graph
from oracles import mrf_enumeration


def _complete(p):
    R = np.ones((p, p), bool)
    np.fill_diagonal(R, False)
    return R


def _complete_mean(p, mu, eta):
    k = np.arange(p + 1)
    lw = np.log(comb(p, k)) + mu * k + eta * k * (k - 1)
    return float((k * np.exp(lw - logsumexp(lw))).sum())


def _tv(samples, G, prob):
    idx = {g.tobytes(): i for i, g in enumerate(G)}
    counts = np.zeros(len(G))
    for s in samples:
        counts[idx[s.tobytes()]] += 1
    return 0.5 * np.abs(counts / counts.sum() - prob).sum()


class TestCsr:
    def test_forms_agree(self, small_network):
        dense = as_csr(small_network.adjacency)
        for a, b in zip(dense, as_csr(small_network)):
            np.testing.assert_array_equal(a, b)

    def test_edge_statistic(self, rng):
        net = random_graph(rng, 12, 0.4)
        for _ in range(20):
            g = rng.random(12) < 0.5
            assert edge_statistic(g, net) == quadratic_count(g, net)


class TestGibbs:
    def test_eta_zero_is_bernoulli(self, rng):
        R = _complete(5)
        draws = np.array([gibbs_sweep(np.ones(5, bool), R, 0.4, 0.0, rng) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(0), expit(0.4), atol=4 * 0.5 / np.sqrt(20000))

    def test_very_negative_mu(self, rng):
        assert not gibbs_sweep(np.ones(6, bool), _complete(6), -1e4, 1.0, rng).any()

    def test_rejects_negative_eta(self, rng):
        with pytest.raises(ValueError):
            gibbs_sweep(np.zeros(3, bool), _complete(3), 0.0, -0.1, rng)

    def test_marginals_match_enumeration(self, rng):
        net = GeneNetwork.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)])
        G, prob = mrf_enumeration(net.adjacency, -1.0, 0.35)
        exact = prob @ G
        chain = gibbs_chain(net, -1.0, 0.35, 60000, rng)[1000:].astype(float)
        # batch-means standard error per gene
        b = chain[: 59000 // 50 * 50].reshape(50, -1, 6).mean(axis=1)
        se = b.std(axis=0, ddof=1) / np.sqrt(50)
        assert np.all(np.abs(chain.mean(0) - exact) < 3 * se + 1e-3)


class TestCFTP:
    def test_eta_zero(self, rng):
        draws = np.array([cftp_perfect_sample(_complete(4), -0.5, 0.0, rng) for _ in range(8000)])
        np.testing.assert_allclose(draws.mean(0), expit(-0.5), atol=0.025)
        assert cftp_coalescence_time(_complete(4), -0.5, 0.0, rng) == 1

    @pytest.mark.parametrize("seed", range(2))
    def test_matches_enumeration_dense(self, seed):
        # at mu = -1 the mass is spread over all 256 states, so even exact
        # draws sit near TV 0.06; compare with chi-square and with the
        # multinomial noise floor instead
        rng = np.random.default_rng(seed)
        net = random_graph(rng, 8, 0.35)
        G, prob = mrf_enumeration(net.adjacency, -1.0, 0.3)
        samples = [cftp_perfect_sample(net, -1.0, 0.3, rng) for _ in range(10000)]
        floor = np.mean([0.5 * np.abs(rng.multinomial(10000, prob) / 1e4 - prob).sum()
                         for _ in range(200)])
        assert _tv(samples, G, prob) < floor + 0.01
        idx = {g.tobytes(): i for i, g in enumerate(G)}
        counts = np.bincount([idx[s.tobytes()] for s in samples], minlength=len(G))
        big = prob * 1e4 > 5
        obs = np.append(counts[big], counts[~big].sum())
        exp = np.append(prob[big], prob[~big].sum()) * 1e4
        assert chisquare(obs, exp).pvalue > 0.01

    def test_matches_enumeration_sparse(self, rng):
        net = random_graph(rng, 8, 0.35)
        G, prob = mrf_enumeration(net.adjacency, -3.5, 0.3)
        samples = [cftp_perfect_sample(net, -3.5, 0.3, rng) for _ in range(10000)]
        assert _tv(samples, G, prob) < 0.02

    def test_monotone_check(self, rng):
        net = random_graph(rng, 10, 0.5)
        for _ in range(50):
            cftp_perfect_sample(net, -1.0, 0.3, rng, check_monotone=True)

    def test_same_seed_same_sample(self):
        net = _complete(9)
        a = [cftp_perfect_sample(net, -2.0, 0.2, np.random.default_rng(7)) for _ in range(3)]
        assert all(np.array_equal(a[0], x) for x in a)

    def test_failure_is_surfaced(self, rng):
        with pytest.raises(CFTPError, match="CFTP failed to coalesce"):
            cftp_perfect_sample(_complete(10), -10.0, 2.0, rng, t_max=64)

    def test_rejects_negative_eta(self, rng):
        with pytest.raises(ValueError):
            cftp_perfect_sample(_complete(3), 0.0, -0.5, rng)


class TestPhaseTransitionScan:
    def test_empty_graph(self, rng):
        p, mu = 30, -1.0
        res = phase_transition_scan(np.zeros((p, p), bool), mu, np.linspace(0, 1, 6), 4000, rng)
        assert res.eta_pt_estimate is None
        np.testing.assert_allclose(res.mean_selected, p * expit(mu), atol=0.2)
        # same random stream at every grid point: identical curve
        assert np.ptp(res.mean_selected) == 0

    def test_complete_graph_against_enumeration(self):
        grid = np.linspace(0, 1, 26)
        locs = []
        for mu in (-4.0, -3.0, -2.0):
            exact = np.array([_complete_mean(10, mu, e) for e in grid])
            res = phase_transition_scan(_complete(10), mu, grid, 20000, np.random.default_rng(1))
            assert res.eta_pt_estimate == pytest.approx(grid[np.argmax(np.diff(exact))])
            locs.append(res.eta_pt_estimate)
        assert locs[0] > locs[1] > locs[2]

    def test_monotone_curve(self, rng):
        net = random_graph(rng, 15, 0.3)
        res = phase_transition_scan(net, -2.0, np.linspace(0, 0.8, 9), 3000, rng)
        assert np.all(np.diff(res.mean_selected) >= 0)

    def test_csv(self, tmp_path, rng):
        res = phase_transition_scan(_complete(5), -1.0, [0.0, 0.1, 0.2], 500, rng)
        res.to_csv(tmp_path / "scan.csv")
        rows = (tmp_path / "scan.csv").read_text().splitlines()
        assert rows[0] == "eta,mean_selected,std_error" and len(rows) == 4
        assert float(rows[2].split(",")[0]) == 0.1

    @pytest.mark.parametrize("grid", [[0.1], [0.2, 0.1], [-0.1, 0.2]])
    def test_bad_grid(self, rng, grid):
        with pytest.raises(ValueError):
            phase_transition_scan(_complete(3), -1.0, grid, 100, rng)

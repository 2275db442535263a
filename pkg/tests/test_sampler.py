from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bayespath.graph_data import Dataset, GeneNetwork, ModelState, PathwayMembership
from bayespath.likelihood import Hyperparameters
from bayespath.mrf_sim import cftp_perfect_sample
from bayespath.priors import eta_log_prior, is_valid, mrf_log_unnormalized, quadratic_count
from bayespath.sampler import (TRACE_COLUMNS, Chain, ChainConfig, ChainTrace, augment_aft,
                               eta_log_ratio, load_checkpoint, mh_step_theta_gamma, reflect,
                               run_chain, truncated_t_draw, update_eta)
from conftest import random_graph
from oracles import enumerate_posterior


def _occupancy(trace, states):
    keep = trace.post_burn_in
    c = Counter(zip(map(bytes, trace.theta[keep]), map(bytes, trace.gamma[keep])))
    idx = {s: i for i, s in enumerate(states)}
    emp = np.zeros(len(states))
    for s, v in c.items():
        emp[idx[s]] = v
    return emp / emp.sum()


@pytest.fixture
def survival_data(rng):
    X = rng.standard_normal((12, 6))
    t = np.exp(0.5 * X[:, 1] + 0.5 * rng.standard_normal(12))
    delta = np.array([1, 0] * 6)
    return Dataset.from_raw(X, t, outcome_kind="survival", censoring=delta, survival_times=True)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(iterations=0), dict(iterations=10, burn_in=10),
                                    dict(eta_ref=1.5), dict(edge_rule="bogus"),
                                    dict(thin=0), dict(eta_step=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ChainConfig(**kw)

    def test_round_trip(self):
        cfg = ChainConfig(iterations=100, burn_in=10, seed=4, edge_rule="shared")
        assert ChainConfig.from_dict(cfg.as_dict()) == cfg

    def test_defaults(self):
        cfg = ChainConfig()
        assert (cfg.iterations, cfg.burn_in, cfg.eta_every, cfg.init_pathways) == \
            (300_000, 50_000, 1, 2)


class TestThetaGammaStep:
    def test_symmetric_two_state(self):
        # identical genes in two single-gene pathways: the two one-pathway
        # models have the same posterior mass
        rng = np.random.default_rng(1)
        x = rng.standard_normal(15)
        data = Dataset.from_raw(np.column_stack([x, x]), x + rng.standard_normal(15))
        m = PathwayMembership.from_sets({"A": ["g0"], "B": ["g1"]})
        net = GeneNetwork.from_edges(2, [])
        hp = Hyperparameters(phi_star=0.3, mu_mrf=0.0)
        cfg = ChainConfig(iterations=40000, burn_in=1000, seed=2, update_eta=False, eta_init=0.0)
        tr = run_chain(data, m, net, hp, cfg)
        keep = tr.post_burn_in
        a = (tr.theta[keep] == [True, False]).all(1).mean()
        b = (tr.theta[keep] == [False, True]).all(1).mean()
        assert a > 0.1 and abs(a - b) < 0.04

    def test_wrapper_keeps_validity(self, small_membership, small_network, small_data, rng):
        s = ModelState(np.array([1, 0], bool), np.array([1, 0, 0, 0, 0, 0], bool))
        for _ in range(30):
            s = mh_step_theta_gamma(s, small_data, small_membership, small_network,
                                    Hyperparameters(phi_star=0.5, mu_mrf=0.0), rng)
            assert is_valid(small_membership, s.theta, s.gamma)

    def test_invalid_start_rejected(self, small_membership, small_network, small_data, rng):
        chain = Chain(small_data, small_membership, small_network, Hyperparameters(),
                      ChainConfig(iterations=2, burn_in=0, update_eta=False), rng)
        with pytest.raises(ValueError, match="not valid"):
            chain.initialise(np.array([1, 0], bool), np.zeros(6, bool), 0.0)

    @pytest.mark.parametrize("rule", ["shared", "union"])
    def test_enumeration(self, rule):
        m = PathwayMembership.from_sets({"A": ["g0", "g1", "g2"], "B": ["g2", "g3", "g4"],
                                         "C": ["g0", "g4"]})
        net = GeneNetwork.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 3), (1, 4)])
        rng = np.random.default_rng(8)
        X = rng.standard_normal((15, 5))
        data = Dataset.from_raw(X, 0.5 * X[:, 0] - 0.4 * X[:, 3] + rng.standard_normal(15))
        hp = Hyperparameters(phi_star=0.4, mu_mrf=-0.3, h=1.0, eta_pt=2.0)
        states, prob = enumerate_posterior(data, m, net, hp, 0.6, rule)
        cfg = ChainConfig(iterations=30000, burn_in=1000, seed=3, update_eta=False,
                          eta_init=0.6, edge_rule=rule)
        tr = run_chain(data, m, net, hp, cfg)
        assert 0.5 * np.abs(_occupancy(tr, states) - prob).sum() < 0.05
        for t, g in zip(tr.theta, tr.gamma):
            assert is_valid(m, t, g)


class TestEtaUpdate:
    HP = Hyperparameters(mu_mrf=-1.0, eta_pt=0.5, c0=1.0, d0=1.0)

    def test_reflect(self):
        assert reflect(-0.1, 1.0) == pytest.approx(0.1)
        assert reflect(1.3, 1.0) == pytest.approx(0.7)
        assert reflect(2.4, 1.0) == pytest.approx(0.4)

    def test_identity_proposal(self):
        assert eta_log_ratio(0.2, 0.2, 14, 6, 6, 0.25, Hyperparameters(eta_pt=0.5)) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_against_full_ratio(self, seed):
        rng = np.random.default_rng(seed)
        net = random_graph(rng, 8, 0.4)
        hp = self.HP
        mu = hp.mu_mrf
        gamma, w_o, w_p = (rng.random((3, 8)) < 0.5)
        eo, ep, ref = rng.uniform(0, hp.eta_pt, 3)

        def q(x, e):
            return mrf_log_unnormalized(x, net, mu, e)

        full = (eta_log_prior(ep, hp) - eta_log_prior(eo, hp) + q(gamma, ep) - q(gamma, eo)
                + q(w_p, ref) - q(w_o, ref) + q(w_o, eo) - q(w_p, ep))
        s, to, tp = (quadratic_count(x, net) for x in (gamma, w_o, w_p))
        value = eta_log_ratio(eo, ep, s, to, tp, ref, hp)
        assert value == pytest.approx(full, abs=1e-10)
        # flat prior: difference form
        assert value == pytest.approx((ep - eo) * (s - tp) + (ref - eo) * (tp - to), abs=1e-10)

    def test_out_of_support(self):
        assert eta_log_ratio(0.2, 0.6, 3, 1, 1, 0.25, self.HP) == -np.inf

    def test_requires_aux(self, small_network, rng):
        with pytest.raises(ValueError, match="aux"):
            update_eta(ModelState(np.ones(2, bool), np.ones(6, bool), 0.1), small_network,
                       self.HP, rng)

    def test_cftp_failure_rejects(self, rng):
        R = np.ones((10, 10), bool)
        np.fill_diagonal(R, False)
        net = GeneNetwork(R)
        hp = Hyperparameters(mu_mrf=-10.0, eta_pt=2.0)
        s = ModelState(np.ones(1, bool), np.zeros(10, bool), 1.9, aux=np.zeros(10, bool))
        failures = 0
        for _ in range(40):
            up = update_eta(s, net, hp, rng, t_max=8)
            if up.cftp_failed:
                failures += 1
                assert up.eta == 1.9 and not up.accepted
        assert failures > 0

    def test_short_run_tracks_posterior(self, rng):
        # cheap version of the quadrature comparison: posterior mean of eta
        from scipy import integrate
        from oracles import log_partition
        p = 6
        net = GeneNetwork.from_edges(p, [(i, (i + 1) % p) for i in range(p)])
        hp = self.HP
        gamma = np.array([1, 1, 1, 0, 0, 0], bool)
        s = quadratic_count(gamma, net)

        def post(e):
            return np.exp(e * s - log_partition(net.adjacency, hp.mu_mrf, e))

        z = integrate.quad(post, 0, hp.eta_pt)[0]
        mean = integrate.quad(lambda e: e * post(e), 0, hp.eta_pt)[0] / z
        st_ = ModelState(np.ones(1, bool), gamma, 0.25,
                         aux=cftp_perfect_sample(net, hp.mu_mrf, 0.25, rng))
        draws = np.empty(30000)
        for i in range(draws.size):
            up = update_eta(st_, net, hp, rng, step=0.3)
            st_ = st_.replace(eta=up.eta, aux=up.aux)
            draws[i] = up.eta
        b = draws.reshape(30, -1).mean(1)
        assert abs(draws.mean() - mean) < 4 * b.std(ddof=1) / np.sqrt(30) + 1e-3


class TestAft:
    def test_truncated_t_support_and_law(self, rng):
        for lower in (-1.0, 0.5, 6.0):
            x = np.array([truncated_t_draw(7.0, lower, rng) for _ in range(4000)])
            assert np.all(x > lower)
            tail = stats.t.sf(lower, 7.0)
            ks = stats.kstest(x, lambda v: 1 - stats.t.sf(v, 7.0) / tail)
            assert ks.pvalue > 1e-3

    def test_extreme_truncation(self, rng):
        assert truncated_t_draw(5.0, 1e8, rng) > 1e8

    def test_all_observed(self, rng):
        X = rng.standard_normal((6, 2))
        t = rng.exponential(size=6) + 0.1
        data = Dataset.from_raw(X, t, outcome_kind="survival", censoring=np.ones(6, int),
                                survival_times=True)
        z = augment_aft(np.zeros(6), data, np.empty((6, 0)), Hyperparameters(), rng)
        np.testing.assert_array_equal(z, np.log(t))

    def test_censored_above_bound(self, survival_data, rng):
        T = survival_data.expression[:, :2]
        z = survival_data.response.copy()
        cens = survival_data.censoring == 0
        for _ in range(200):
            z = augment_aft(z, survival_data, T, Hyperparameters(), rng)
            assert np.all(z[cens] > survival_data.response[cens])
            np.testing.assert_array_equal(z[~cens], survival_data.response[~cens])

    def test_requires_survival(self, small_data, rng):
        with pytest.raises(ValueError):
            augment_aft(small_data.response, small_data, np.empty((20, 0)),
                        Hyperparameters(), rng)


class TestRunChain:
    @pytest.fixture
    def problem(self, small_membership, small_network, small_data):
        return small_data, small_membership, small_network, Hyperparameters(phi_star=0.3,
                                                                           mu_mrf=-1.0,
                                                                           eta_pt=0.5)

    def test_same_seed_same_trace(self, problem):
        cfg = ChainConfig(iterations=400, burn_in=100, seed=11)
        a, b = run_chain(*problem, cfg), run_chain(*problem, cfg)
        for name in ("iteration", "theta", "gamma", "eta", "log_posterior"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_trace_shape_and_validity(self, problem):
        data, m, net, hp = problem
        tr = run_chain(data, m, net, hp, ChainConfig(iterations=500, burn_in=100, seed=1))
        assert len(tr) == 500 and tr.iteration[0] == 1 and tr.iteration[-1] == 500
        assert tr.post_burn_in.sum() == 400
        assert np.all((tr.eta >= 0) & (tr.eta <= hp.eta_pt))
        assert all(is_valid(m, t, g) for t, g in zip(tr.theta, tr.gamma))
        assert tr.stats["cftp_failures"] == 0

    def test_thinning(self, problem):
        tr = run_chain(*problem, ChainConfig(iterations=300, burn_in=0, thin=3, seed=1))
        assert len(tr) == 100 and tr.iteration[:3].tolist() == [3, 6, 9]

    def test_trace_csv(self, problem, tmp_path):
        tr = run_chain(*problem, ChainConfig(iterations=50, burn_in=10, seed=2),
                       trace_path=tmp_path / "trace.csv")
        rows = (tmp_path / "trace.csv").read_text().splitlines()
        assert rows[0] == ",".join(TRACE_COLUMNS) and len(rows) == 51
        last = rows[-1].split(",")
        assert int(last[0]) == 50 and int(last[1]) == tr.k_theta[-1]
        assert int(last[2]) == tr.n_selected_genes[-1]

    def test_save_load(self, problem, tmp_path):
        tr = run_chain(*problem, ChainConfig(iterations=60, burn_in=10, seed=2))
        tr.save(tmp_path / "c.npz")
        back = ChainTrace.load(tmp_path / "c.npz")
        np.testing.assert_array_equal(back.gamma, tr.gamma)
        assert back.burn_in == 10 and back.pathway_ids == tr.pathway_ids

    @pytest.mark.parametrize("kind", ["continuous", "survival"])
    def test_resume_is_identical(self, problem, survival_data, tmp_path, monkeypatch, kind):
        data, m, net, hp = problem
        if kind == "survival":
            data = survival_data
        cfg = ChainConfig(iterations=600, burn_in=100, seed=5, checkpoint_every=200)
        full = run_chain(data, m, net, hp, cfg)

        original = Chain.step

        def crashing(self):
            if self.iteration == 450:
                raise KeyboardInterrupt
            original(self)

        ck = tmp_path / "ck.npz"
        monkeypatch.setattr(Chain, "step", crashing)
        with pytest.raises(KeyboardInterrupt):
            run_chain(data, m, net, hp, cfg, checkpoint_path=ck)
        monkeypatch.setattr(Chain, "step", original)
        meta, arrays = load_checkpoint(ck)
        assert meta["iteration"] == 400 and arrays["iteration"].size == 400
        resumed = run_chain(data, m, net, hp, cfg, checkpoint_path=ck, resume=True)
        for name in ("iteration", "theta", "gamma", "eta", "log_posterior"):
            assert getattr(resumed, name).tobytes() == getattr(full, name).tobytes()

    def test_resume_rejects_other_config(self, problem, tmp_path):
        ck = tmp_path / "ck.npz"
        run_chain(*problem, ChainConfig(iterations=100, burn_in=0, seed=1, checkpoint_every=50),
                  checkpoint_path=ck)
        with pytest.raises(ValueError, match="different configuration"):
            run_chain(*problem, ChainConfig(iterations=200, burn_in=0, seed=1,
                                            checkpoint_every=50),
                      checkpoint_path=ck, resume=True)

    def test_survival_chain(self, survival_data, small_membership, small_network):
        hp = Hyperparameters(phi_star=0.3, mu_mrf=-1.0, eta_pt=0.5)
        cfg = ChainConfig(iterations=300, burn_in=50, seed=3, checkpoint_every=100)
        chain = Chain(survival_data, small_membership, small_network, hp, cfg,
                      np.random.default_rng(3))
        chain.initialise()
        for _ in range(100):
            chain.step()
        cens = survival_data.censoring == 0
        assert np.all(chain.z[cens] > survival_data.response[cens])
        # cached likelihood agrees with a fresh evaluation on the current Z
        from bayespath.latent_scores import build_score_matrix
        from bayespath.likelihood import marginal_log_likelihood
        sm = build_score_matrix(survival_data, small_membership, chain.model_state())
        assert chain.loglik == pytest.approx(marginal_log_likelihood(chain.z, sm, hp), abs=1e-9)

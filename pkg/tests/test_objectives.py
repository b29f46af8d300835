import itertools
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imb_lab.exact import ExactNetwork, factorized_table, state_bits
from imb_lab.exceptions import ConfigError
from imb_lab.network import NetworkParams, grow_particles, sigmoid
from imb_lab.objectives import (
    bernoulli_kl,
    bernoulli_kl_logits,
    compression_term,
    joint_objective,
    leaf_groups,
    nll_term,
    resolve_weights,
    vcr_term,
)

from .conftest import random_params
from .oracles import mp_bernoulli_kl

unit = st.floats(0, 1, allow_nan=False)
interior = st.floats(1e-6, 1 - 1e-6, allow_nan=False)


def zero_params(n_in, hidden, n_classes):
    return NetworkParams.initialize(n_in, hidden, n_classes, np.random.default_rng(0)).zeros_like()


def enumerable_setup(seed, widths=(4, 4, 3), n_classes=2, scale=1.5):
    """Random net over every binary input of width ``widths[0]`` and a random ``p(x, y)``."""
    rng = np.random.default_rng(seed)
    params = random_params(rng, widths[0], widths[1:], n_classes, scale)
    inputs = state_bits(widths[0])
    pxy = rng.dirichlet(np.ones(len(inputs) * n_classes)).reshape(len(inputs), n_classes)
    return params, inputs, pxy


class TestBernoulliKL:
    def test_identical(self):
        assert bernoulli_kl(0.5, 0.5) == 0.0

    def test_deterministic_vs_fair(self):
        assert bernoulli_kl(1.0, 0.5) == pytest.approx(np.log(2), abs=1e-15)

    def test_high_precision_value(self):
        # closed form 0.3 ln(3/7) + 0.7 ln(7/3) = 0.4 ln(7/3)
        assert bernoulli_kl(0.3, 0.7) == pytest.approx(mp_bernoulli_kl(0.3, 0.7), abs=1e-15)
        assert bernoulli_kl(0.3, 0.7) == pytest.approx(0.3389191, abs=1e-7)

    def test_rejects_boundary_reference(self):
        with pytest.raises(ValueError):
            bernoulli_kl(0.5, 1.0)
        with pytest.raises(ValueError):
            bernoulli_kl(1.2, 0.5)

    @settings(max_examples=200, deadline=None)
    @given(unit, interior)
    def test_matches_oracle(self, p, r):
        assert bernoulli_kl(p, r) == pytest.approx(mp_bernoulli_kl(p, r), rel=1e-9, abs=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-20, 20), st.floats(-20, 20))
    def test_logit_form(self, a, rho):
        want = mp_bernoulli_kl(float(sigmoid(a)), float(sigmoid(rho)))
        assert bernoulli_kl_logits(a, rho) == pytest.approx(want, rel=1e-8, abs=1e-12)
        assert bernoulli_kl_logits(a, rho) >= -1e-15


class TestCompression:
    def test_encoder_equals_marginal(self, rng):
        params = zero_params(3, (4, 2), 2)
        cloud = grow_particles(params, rng.random((5, 3)), 8, "tree", rng)
        assert compression_term(cloud, params, 1) == 0.0
        assert compression_term(cloud, params, 2) == 0.0

    def test_certain_unit_against_fair_marginal(self, rng):
        params = zero_params(2, (1,), 2)
        params.biases[0][:] = 60.0
        cloud = grow_particles(params, rng.random((4, 2)), 8, "chain", rng)
        assert compression_term(cloud, params, 1) == pytest.approx(np.log(2), abs=1e-12)

    def test_bad_layer(self, rng):
        params = random_params(rng, 2, (2,), 2)
        cloud = grow_particles(params, np.zeros(2), 2, "chain", rng)
        with pytest.raises(ValueError):
            compression_term(cloud, params, 2)

    def test_monte_carlo_against_enumeration(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, 3, (3, 2), 2)
        x = rng.random(3)
        exact = ExactNetwork(params, x[None]).compression_bound(2, np.array([1.0]))
        cloud = grow_particles(params, x, 100_000, "chain", np.random.default_rng(4))
        mc = compression_term(cloud, params, 2)
        per = bernoulli_kl_logits(cloud.layer(2).pre, params.marginal_logits[1]).sum(axis=1)
        se = per.std() / np.sqrt(len(per))
        assert abs(mc - exact) < 3 * se

    def test_tree_uses_one_value_per_parent(self, rng):
        params = random_params(rng, 3, (3, 2), 2)
        cloud = grow_particles(params, rng.random((2, 3)), 4, "tree", rng)
        layer = cloud.layer(2)
        per_child = bernoulli_kl_logits(layer.pre, params.marginal_logits[1]).sum(axis=1)
        # every parent has the same number of children, so both means agree
        assert compression_term(cloud, params, 2) == pytest.approx(per_child.mean(), rel=1e-12)


class TestRelevance:
    def test_last_layer_is_plain_log_loss(self, rng):
        params = random_params(rng, 3, (3, 2), 4)
        cloud = grow_particles(params, rng.random((5, 3)), 6, "chain", rng)
        y = rng.integers(0, 4, 5)
        logits = cloud.layer(2).z @ params.head_weight.T + params.head_bias
        q = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        want = -np.mean(np.log(q[np.arange(30), np.repeat(y, 6)]))
        assert vcr_term(cloud, params, 2, y) == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("l", [0, 1, 2])
    def test_uniform_head(self, rng, l):
        params = random_params(rng, 3, (3, 2), 10)
        params.head_weight[:] = 0
        params.head_bias[:] = 0
        cloud = grow_particles(params, rng.random((4, 3)), 5, "tree", rng)
        y = rng.integers(0, 10, 4)
        assert vcr_term(cloud, params, l, y) == pytest.approx(np.log(10), abs=1e-12)

    def test_nll_is_input_layer_relevance_bitwise(self, rng):
        params = random_params(rng, 3, (4, 3), 3)
        cloud = grow_particles(params, rng.random((7, 3)), 9, "chain", rng, n_continuations=3)
        y = rng.integers(0, 3, 7)
        assert nll_term(cloud, params, y) == vcr_term(cloud, params, 0, y)

    def test_saturated_correct_network(self, rng):
        params = zero_params(2, (1,), 2)
        params.biases[0][:] = 60.0
        params.head_weight[:] = [[60.0], [-60.0]]
        cloud = grow_particles(params, rng.random((3, 2)), 4, "chain", rng)
        assert nll_term(cloud, params, [0, 0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_floor_warns(self, rng):
        params = zero_params(2, (1,), 2)
        params.head_bias[:] = [800.0, 0.0]
        cloud = grow_particles(params, rng.random((2, 2)), 2, "chain", rng)
        with pytest.warns(RuntimeWarning, match="clamped"):
            value = nll_term(cloud, params, [1, 1])
        assert value == pytest.approx(-np.log(1e-12))

    def test_label_count_mismatch(self, rng):
        params = random_params(rng, 2, (2,), 2)
        cloud = grow_particles(params, rng.random((3, 2)), 2, "chain", rng)
        with pytest.raises(ValueError):
            vcr_term(cloud, params, 0, [0, 1])

    @pytest.mark.parametrize("l,growth,m", [(0, "chain", 100_000), (1, "tree", 400), (2, "chain", 100_000)])
    def test_monte_carlo_against_enumeration(self, l, growth, m):
        rng = np.random.default_rng(11)
        params = random_params(rng, 2, (2, 2), 2)
        x, y = rng.random(2), 1
        pxy = np.array([[0.0, 1.0]])
        exact = ExactNetwork(params, x[None]).vcr(l, pxy)
        cloud = grow_particles(params, x, m, growth, np.random.default_rng(12))
        mc = vcr_term(cloud, params, l, [y])
        leaf_layers, index = leaf_groups(cloud, l)
        logits = leaf_layers[0].z @ params.head_weight.T + params.head_bias
        q = (np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True))[:, y]
        if l == 0:
            # delta method for -log of a mean
            se = q.std() / np.sqrt(len(q)) / q.mean()
        else:
            per = -np.log(q[index].mean(axis=1))
            se = per.std() / np.sqrt(len(per))
        assert abs(mc - exact) < 3 * se

    def test_continuations_converge_to_exact_decoder(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, 2, (2, 2, 2), 2)
        x = rng.random(2)
        exact = ExactNetwork(params, x[None]).vcr(1, np.array([[1.0, 0.0]]))
        cloud = grow_particles(params, x, 2000, "chain", np.random.default_rng(6), n_continuations=200)
        mc = vcr_term(cloud, params, 1, [0])
        leaf_layers, index = leaf_groups(cloud, 1)
        assert index.shape == (2000, 200)
        assert mc == pytest.approx(exact, abs=0.02)

    def test_root_convergence_rate(self):
        rng = np.random.default_rng(21)
        params = random_params(rng, 2, (2, 2), 2)
        x = rng.random(2)
        pxy = np.array([[0.0, 1.0]])
        net = ExactNetwork(params, x[None])
        targets = {"nll": net.vcr(0, pxy), "comp": net.compression_bound(2, np.array([1.0]))}
        errors = {k: [] for k in targets}
        sizes = [10**2, 10**4, 10**6]
        for m in sizes:
            cloud = grow_particles(params, x, m, "chain", np.random.default_rng(m))
            errors["nll"].append(abs(nll_term(cloud, params, [1]) - targets["nll"]))
            errors["comp"].append(abs(compression_term(cloud, params, 2) - targets["comp"]))
            cloud = None
        # per-sample spreads bound the error at about sigma / sqrt(M)
        probe = grow_particles(params, x, 10_000, "chain", np.random.default_rng(0))
        logits = probe.layer(2).z @ params.head_weight.T + params.head_bias
        q1 = (np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True))[:, 1]
        kl = bernoulli_kl_logits(probe.layer(2).pre, params.marginal_logits[1]).sum(axis=1)
        sigma = {"nll": q1.std() / q1.mean(), "comp": kl.std()}
        for k in targets:
            for m, err in zip(sizes, errors[k]):
                assert err <= 4 * sigma[k] / np.sqrt(m) + 1e-12, (k, m, err)


class TestJointObjective:
    def setup_cloud(self, rng, n_classes=3):
        params = random_params(rng, 3, (4, 3), n_classes)
        cloud = grow_particles(params, rng.random((6, 3)), 5, "chain", rng, n_continuations=2)
        return params, cloud, rng.integers(0, n_classes, 6)

    def test_mle_weights_give_nll(self, rng):
        params, cloud, y = self.setup_cloud(rng)
        bd = joint_objective(cloud, y, params, SimpleNamespace(beta=1e-4, gamma=[1, 0, 0]))
        assert bd.total == nll_term(cloud, params, y)

    def test_zero_weights(self, rng):
        params, cloud, y = self.setup_cloud(rng)
        assert joint_objective(cloud, y, params, SimpleNamespace(beta=1e-4, gamma=0.0)).total == 0.0

    def test_additivity(self, rng):
        params, cloud, y = self.setup_cloud(rng)
        bd = joint_objective(cloud, y, params, SimpleNamespace(beta=1e-4, gamma=[1, 1, 1]))
        expected = sum(bd.vcr[l] + 1e-4 * bd.comp[l] for l in range(3))
        assert bd.total == pytest.approx(expected, abs=1e-12)
        assert bd.comp[0] == 0.0
        for l in (1, 2):
            assert bd.comp[l] == compression_term(cloud, params, l)
            assert bd.vcr[l] == vcr_term(cloud, params, l, y)

    def test_weight_validation(self):
        with pytest.raises(ConfigError):
            resolve_weights([1, 2], 3, "gamma", positive=False)
        with pytest.raises(ConfigError):
            resolve_weights(0.0, 3, "beta", positive=True)
        assert resolve_weights(0.5, 2, "gamma", positive=False) == [0.5, 0.5, 0.5]


class TestExactBounds:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_bounds_hold_on_enumerable_nets(self, seed):
        params, inputs, pxy = enumerable_setup(seed)
        net = ExactNetwork(params, inputs)
        px = pxy.sum(axis=1)
        for l in range(params.n_layers + 1):
            assert net.conditional_entropy_y(l, pxy) <= net.vcr(l, pxy) + 1e-10
        for l in range(1, params.n_layers + 1):
            assert net.adjacent_information(l, px) <= net.compression_bound(l, px) + 1e-10
        assert net.vcr(params.n_layers, pxy) >= net.nll(pxy) - 1e-10
        assert net.vcr(0, pxy) == pytest.approx(net.nll(pxy), abs=1e-12)

    def test_multivariate_target_decomposes(self):
        # two conditionally independent binary outputs read from the last layer
        rng = np.random.default_rng(8)
        params = random_params(rng, 3, (3, 3), 2)
        inputs = state_bits(3)
        net = ExactNetwork(params, inputs)
        z_last = state_bits(3)
        out_w, out_b = rng.normal(0, 1.5, (2, 3)), rng.normal(0, 1, 2)
        q1 = factorized_table(z_last @ out_w.T + out_b)  # q(y1, y2 | z), little-endian y
        p_xy = rng.dirichlet(np.ones(8 * 4)).reshape(8, 4)
        cond = net.conditional(2)
        joint = -np.sum(p_xy * (cond @ np.log(q1)))
        parts = 0.0
        for k in range(2):
            qk = np.stack([1 - sigmoid(z_last @ out_w[k] + out_b[k]), sigmoid(z_last @ out_w[k] + out_b[k])], axis=1)
            bit = (np.arange(4) >> k) & 1
            p_xyk = np.stack([p_xy[:, bit == v].sum(axis=1) for v in (0, 1)], axis=1)
            parts += -np.sum(p_xyk * (cond @ np.log(qk)))
        assert joint == pytest.approx(parts, abs=1e-10)


class TestLeafGroups:
    def test_tree_grouping(self, rng):
        params = random_params(rng, 2, (2, 2), 2)
        cloud = grow_particles(params, rng.random((2, 2)), 3, "tree", rng)
        for l, width in [(0, 9), (1, 3), (2, 1)]:
            layers, index = leaf_groups(cloud, l)
            assert index.shape[1] == width
            assert sorted(index.ravel()) == list(range(18))

    def test_chain_owner_consistency(self, rng):
        params = random_params(rng, 2, (2, 2, 2), 2)
        cloud = grow_particles(params, rng.random((3, 2)), 4, "chain", rng, n_continuations=3)
        layers, index = leaf_groups(cloud, 1)
        assert len(layers) == 2 and index.shape == (12, 3)
        for j, rows in enumerate(index):
            assert rows[0] == j
            extra = rows[1:] - len(cloud.layers[-1])
            # the continuation leaves trace back to particle j
            roots = cloud.continuations[1][0].parent[cloud.continuations[1][1].parent[extra]]
            assert np.all(roots == j)


def test_enumeration_helper_matches_itertools():
    bits = state_bits(3)
    for s, combo in enumerate(itertools.product([0, 1], repeat=3)):
        assert tuple(bits[s][::-1].astype(int)) == combo

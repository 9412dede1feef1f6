import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import survmoe.autodiff as ad
from survmoe.errors import ConfigurationError, UsageError
from survmoe.losses import nll_loss, total_loss
from survmoe.model import (
    DualMoeConfig,
    DualMoeModel,
    HazardCurve,
    event_mass_from_hazards,
    survival_from_hazards,
)

from gradcheck import max_rel_error, numeric_grad


def tiny_config(**overrides) -> DualMoeConfig:
    base = dict(
        input_dim=5,
        max_bin=3,
        encoder_depth=2,
        hidden_width=4,
        feature_expert_depth=1,
        hazard_expert_depth=1,
        n_feature_experts=2,
        n_hazard_experts=2,
        time_embed_dim=3,
    )
    base.update(overrides)
    return DualMoeConfig(**base)


def _zero(store, *names):
    for name in names:
        store[name].value[...] = 0.0


def _mlp_numpy(store, name, x, n_layers, relu_output):
    for j in range(n_layers):
        x = x @ store[f"{name}.{j}.w"].value + store[f"{name}.{j}.b"].value
        if j < n_layers - 1 or relu_output:
            x = np.maximum(x, 0.0)
    return x


class TestConfig:
    def test_disabled_moe_requires_single_expert(self):
        with pytest.raises(ConfigurationError):
            tiny_config(feature_moe_enabled=False)
        with pytest.raises(ConfigurationError):
            tiny_config(hazard_moe_enabled=False)

    def test_naive_degenerate(self):
        naive = tiny_config().naive()
        assert naive.n_feature_experts == 1
        assert naive.n_hazard_experts == 1
        assert not naive.feature_moe_enabled
        assert not naive.hazard_moe_enabled

    def test_entries_roundtrip(self):
        cfg = tiny_config(hazard_router_input="time_only")
        back = DualMoeConfig.from_entries(cfg.to_entries())
        assert back == cfg

    def test_bad_router_input(self):
        with pytest.raises(ConfigurationError):
            tiny_config(hazard_router_input="nope")


class TestEncode:
    def test_single_expert_routing_is_exactly_one(self):
        model = DualMoeModel(tiny_config().naive(), seed=0)
        _, pi_feat, _ = model.predict(np.zeros((3, 5)))
        np.testing.assert_array_equal(pi_feat, np.ones((3, 1)))

    def test_zeroed_router_gives_uniform_mix(self):
        cfg = tiny_config(n_feature_experts=4)
        model = DualMoeModel(cfg, seed=1)
        _zero(model.store, "fr.0.w", "fr.0.b", "fr.1.w", "fr.1.b")
        x = np.random.default_rng(0).normal(size=(6, 5))
        z, pi = model.encode(ad.constant(x))
        np.testing.assert_allclose(pi.value, 0.25, atol=1e-15)

        hidden = _mlp_numpy(model.store, "enc", x, cfg.encoder_depth, relu_output=True)
        experts = [
            _mlp_numpy(model.store, f"fe.{k}", hidden, cfg.feature_expert_depth + 1, False)
            for k in range(4)
        ]
        np.testing.assert_allclose(z.value, np.mean(experts, axis=0), atol=1e-12)

    def test_stubbed_experts_mix_by_router_weights(self):
        cfg = tiny_config(n_feature_experts=2)
        model = DualMoeModel(cfg, seed=2)
        store = model.store
        a = np.arange(1.0, 5.0)
        b = np.arange(10.0, 14.0)
        for k, const in ((0, a), (1, b)):
            _zero(store, f"fe.{k}.0.w", f"fe.{k}.0.b", f"fe.{k}.1.w")
            store[f"fe.{k}.1.b"].value[...] = const
        _zero(store, "fr.0.w", "fr.0.b", "fr.1.w")
        store["fr.1.b"].value[...] = np.log([0.3, 0.7])

        z, pi = model.encode(ad.constant(np.zeros((2, 5))))
        np.testing.assert_allclose(pi.value, [[0.3, 0.7]] * 2, atol=1e-12)
        np.testing.assert_allclose(z.value, np.tile(0.3 * a + 0.7 * b, (2, 1)), atol=1e-12)

    def test_dimension_mismatch(self):
        model = DualMoeModel(tiny_config(), seed=0)
        with pytest.raises(ConfigurationError, match="width"):
            model.forward(np.zeros((2, 7)))


class TestHazardForward:
    def test_single_expert_rows_exactly_one(self):
        model = DualMoeModel(tiny_config().naive(), seed=3)
        _, _, pi_haz = model.predict(np.zeros((2, 5)))
        np.testing.assert_array_equal(pi_haz, np.ones((2, 4, 1)))

    def test_zero_logits_give_half_hazard(self):
        cfg = tiny_config()
        model = DualMoeModel(cfg, seed=4)
        for l in range(cfg.n_hazard_experts):
            _zero(model.store, f"he.{l}.0.w", f"he.{l}.0.b", f"he.{l}.1.w", f"he.{l}.1.b")
        hazards, _, _ = model.predict(np.random.default_rng(1).normal(size=(3, 5)))
        np.testing.assert_allclose(hazards, 0.5, atol=1e-15)

    def test_stubbed_expert_logits_mixed_in_logit_space(self):
        cfg = tiny_config(n_hazard_experts=2)
        model = DualMoeModel(cfg, seed=5)
        store = model.store
        for l, const in ((0, 2.0), (1, -2.0)):
            _zero(store, f"he.{l}.0.w", f"he.{l}.0.b", f"he.{l}.1.w")
            store[f"he.{l}.1.b"].value[...] = const
        _zero(store, "hr.0.w", "hr.0.b", "hr.1.w", "hr.1.b")  # uniform routing
        hazards, _, pi_haz = model.predict(np.random.default_rng(2).normal(size=(2, 5)))
        np.testing.assert_allclose(pi_haz, 0.5, atol=1e-15)
        np.testing.assert_allclose(hazards, 0.5, atol=1e-12)


class TestCurves:
    def test_zero_hazard(self):
        curve = HazardCurve(np.zeros(5))
        np.testing.assert_array_equal(curve.survival, np.ones(5))
        np.testing.assert_array_equal(curve.event_mass, np.zeros(5))

    def test_half_hazard_two_bins(self):
        curve = HazardCurve([0.5, 0.5])
        np.testing.assert_allclose(curve.survival, [0.5, 0.25])
        np.testing.assert_allclose(curve.event_mass, [0.5, 0.25])

    @given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_probability_identity(self, hazards):
        curve = HazardCurve(hazards)
        assert abs(curve.event_mass.sum() + curve.survival[-1] - 1.0) < 1e-9
        assert np.all(np.diff(curve.survival) <= 1e-15)

    def test_batch_helpers_match_single(self):
        rng = np.random.default_rng(3)
        lam = rng.uniform(0.01, 0.99, size=(4, 6))
        surv = survival_from_hazards(lam)
        mass = event_mass_from_hazards(lam)
        for i in range(4):
            curve = HazardCurve(lam[i])
            np.testing.assert_allclose(surv[i], curve.survival, atol=1e-15)
            np.testing.assert_allclose(mass[i], curve.event_mass, atol=1e-15)


class TestBatchForward:
    def test_batch_of_one_equals_single(self):
        model = DualMoeModel(tiny_config(), seed=6)
        x = np.random.default_rng(4).normal(size=5)
        curve, trace = model.predict_curve(x)
        hazards, pi_feat, pi_haz = model.predict(x[None, :])
        np.testing.assert_array_equal(hazards[0], curve.hazards)
        np.testing.assert_array_equal(pi_feat[0], trace.pi_feat)
        np.testing.assert_array_equal(pi_haz[0], trace.pi_haz)

    def test_batch_matches_singles(self):
        model = DualMoeModel(tiny_config(), seed=7)
        x = np.random.default_rng(5).normal(size=(8, 5))
        hazards, pi_feat, pi_haz = model.predict(x)
        for i in range(8):
            curve, trace = model.predict_curve(x[i])
            assert np.max(np.abs(hazards[i] - curve.hazards)) < 1e-12
            assert np.max(np.abs(pi_feat[i] - trace.pi_feat)) < 1e-12
            assert np.max(np.abs(pi_haz[i] - trace.pi_haz)) < 1e-12

    def test_permutation_equivariance(self):
        model = DualMoeModel(tiny_config(), seed=8)
        x = np.random.default_rng(6).normal(size=(6, 5))
        perm = np.array([3, 0, 5, 1, 4, 2])
        hazards, _, _ = model.predict(x)
        hazards_p, _, _ = model.predict(x[perm])
        assert np.max(np.abs(hazards_p - hazards[perm])) < 1e-12

    def test_empty_batch_rejected(self):
        model = DualMoeModel(tiny_config(), seed=9)
        with pytest.raises(UsageError, match="empty"):
            model.forward(np.zeros((0, 5)))


class TestInvariants:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_routing_simplex_and_hazard_range(self, seed):
        model = DualMoeModel(tiny_config(n_feature_experts=3, n_hazard_experts=3), seed=seed)
        x = np.random.default_rng(seed).normal(scale=2.0, size=(16, 5))
        hazards, pi_feat, pi_haz = model.predict(x)
        np.testing.assert_allclose(pi_feat.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(pi_haz.sum(axis=2), 1.0, atol=1e-9)
        assert np.all(hazards > 0.0)
        assert np.all(hazards < 1.0)

    def test_naive_config_matches_hand_built_single_network(self):
        cfg = tiny_config().naive()
        model = DualMoeModel(cfg, seed=10)
        store = model.store
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 5))
        tau = rng.integers(0, cfg.n_bins, size=6)
        delta = rng.integers(0, 2, size=6)

        graph = model.forward(x)
        loss, parts = total_loss(graph, tau, delta, cfg)
        ad.backward(loss)
        model_grads = {n: store[n].grad.copy() for n in store.names()}
        store.zero_grads()

        # independent wiring of the same weights: encoder -> expert -> hazard head
        xn = ad.constant(x)
        h = xn
        for j in range(cfg.encoder_depth):
            h = ad.relu(ad.matmul(h, store[f"enc.{j}.w"]) + store[f"enc.{j}.b"])
        z = h
        for j in range(cfg.feature_expert_depth + 1):
            z = ad.matmul(z, store[f"fe.0.{j}.w"]) + store[f"fe.0.{j}.b"]
            if j < cfg.feature_expert_depth:
                z = ad.relu(z)
        z_rep = ad.repeat_rows(z, cfg.n_bins)
        e_rep = ad.tile_rows(store["time_emb"], 6)
        u = ad.concat_cols([z_rep, e_rep])
        for j in range(cfg.hazard_expert_depth + 1):
            u = ad.matmul(u, store[f"he.0.{j}.w"]) + store[f"he.0.{j}.b"]
            if j < cfg.hazard_expert_depth:
                u = ad.relu(u)
        lam = ad.reshape(ad.sigmoid(u), (6, cfg.n_bins))
        loss2 = nll_loss(lam, tau, delta)

        assert parts.total == parts.nll
        assert loss2.item() == pytest.approx(loss.item(), abs=1e-15)
        ad.backward(loss2)
        for name in store.names():
            np.testing.assert_allclose(store[name].grad, model_grads[name], atol=1e-15)

    def test_full_model_gradients_match_finite_differences(self):
        cfg = tiny_config(hidden_width=4, n_feature_experts=2, n_hazard_experts=2)
        model = DualMoeModel(cfg, seed=11)
        store = model.store
        rng = np.random.default_rng(8)
        x = rng.uniform(-2, 2, size=(5, 5))
        tau = rng.integers(0, cfg.n_bins, size=5)
        delta = rng.integers(0, 2, size=5)

        loss, _ = total_loss(model.forward(x), tau, delta, cfg)
        ad.backward(loss)
        names = store.names()
        analytic = [store[n].grad.copy() for n in names]
        store.zero_grads()

        def forward():
            value, _ = total_loss(model.forward(x), tau, delta, cfg)
            return value.item()

        fd = numeric_grad(forward, [store[n].value for n in names])
        assert max_rel_error(analytic, fd) < 1e-4

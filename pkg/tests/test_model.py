import math

import numpy as np
import pytest

from convdysat import tensor as tn
from convdysat.graph import graph_from_edges
from convdysat.model import (
    ModelConfig, ParameterSet, check_params, context_loss, decayed_names, forward, init_params,
)
from convdysat.tensor import ShapeError, Tape, Tensor
from convdysat.training import AdamState, TrainConfig, adam_step

import oracle


class TestModelConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.structural_dims == (64,) and cfg.embedding_dim == 64

    @pytest.mark.parametrize("kwargs", [
        {"structural_dims": ()},
        {"structural_dims": (10,), "structural_heads": 4},
        {"temporal_dim": 10, "temporal_heads": 4},
        {"qk_kernel": 4},
        {"scale_dim": "diag"},
        {"reduction": "max"},
        {"negative_ratio": -1.0},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)


class TestParameters:
    def test_names_and_shapes(self, tiny_cfg):
        ps = init_params(tiny_cfg, 5, 3)
        assert ps["structural.0.weight"].shape == (5, 4)
        assert ps["structural.0.attention"].shape == (2, 4)
        assert ps["temporal.position"].shape == (3, 4)
        assert ps["temporal.query.kernel"].shape == (2, 4, 4)
        assert ps["temporal.value.kernel"].shape == (1, 4, 4)
        assert set(decayed_names(ps)) == {
            "structural.0.weight", "temporal.query.kernel", "temporal.key.kernel", "temporal.value.kernel"}

    def test_seeded(self, tiny_cfg):
        a, b = init_params(tiny_cfg, 5, 3, seed=1), init_params(tiny_cfg, 5, 3, seed=1)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        c = init_params(tiny_cfg, 5, 3, seed=2)
        assert not np.array_equal(a["structural.0.weight"].data, c["structural.0.weight"].data)

    def test_copy_is_independent(self, tiny_params):
        dup = tiny_params.copy()
        dup["temporal.position"].data[0, 0] += 1
        assert dup["temporal.position"].data[0, 0] != tiny_params["temporal.position"].data[0, 0]

    def test_check_params_shape_mismatch(self, tiny_cfg, tiny_params):
        check_params(tiny_params, tiny_cfg, 4, 3)
        with pytest.raises(ShapeError):
            check_params(tiny_params, tiny_cfg, 5, 3)
        with pytest.raises(ShapeError):
            check_params(tiny_params, ModelConfig(structural_dims=(4, 4), structural_heads=2,
                                                  temporal_dim=4, temporal_heads=2), 4, 3)


class TestForward:
    def test_matches_loop_oracle(self, path_graph, tiny_cfg, tiny_params):
        got = forward(path_graph, tiny_params, tiny_cfg).data
        want = oracle.full_forward(path_graph, tiny_params.arrays(), 2, 2, 3)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_two_structural_layers_match_oracle(self, path_graph):
        cfg = ModelConfig(structural_dims=(6, 4), structural_heads=2, temporal_dim=4, temporal_heads=1, qk_kernel=3)
        ps = init_params(cfg, 4, 3, seed=9)
        got = forward(path_graph, ps, cfg).data
        want = oracle.full_forward(path_graph, ps.arrays(), 2, 1, 3)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_first_step_is_value_projection(self, path_graph, tiny_cfg, tiny_params):
        emb = forward(path_graph, tiny_params, tiny_cfg, up_to=1).data
        h, _ = oracle.structural(path_graph.snapshot(1).adjacency, np.eye(4),
                                 tiny_params["structural.0.weight"].data, tiny_params["structural.0.attention"].data)
        x = h + tiny_params["temporal.position"].data[0]
        v = x @ tiny_params["temporal.value.kernel"].data[0] + tiny_params["temporal.value.bias"].data
        np.testing.assert_allclose(emb[0], v, rtol=0, atol=1e-12)

    def test_constant_graph_gives_constant_embeddings(self, tiny_cfg):
        g = graph_from_edges([[(0, 1), (1, 2), (2, 3)]] * 4, 4)
        ps = init_params(tiny_cfg, 4, 4, seed=5)
        ps["temporal.position"].data[:] = 0.0
        emb = forward(g, ps, tiny_cfg).data
        for t in range(1, 4):
            np.testing.assert_allclose(emb[t], emb[0], rtol=0, atol=1e-12)

    def test_later_snapshots_do_not_leak(self, tiny_cfg):
        a = graph_from_edges([[(0, 1)], [(0, 1), (1, 2)], [(2, 3)]], 4)
        b = graph_from_edges([[(0, 1)], [(0, 1), (1, 2)], [(0, 2), (0, 3), (1, 3), (2, 3)]], 4)
        ps = init_params(tiny_cfg, 4, 3, seed=2)
        ea, eb = forward(a, ps, tiny_cfg).data, forward(b, ps, tiny_cfg).data
        assert np.array_equal(ea[:2], eb[:2])
        assert not np.array_equal(ea[2], eb[2])

    def test_up_to_prefix(self, path_graph, tiny_cfg, tiny_params):
        full = forward(path_graph, tiny_params, tiny_cfg).data
        part = forward(path_graph, tiny_params, tiny_cfg, up_to=2).data
        assert np.array_equal(full[:2], part)

    def test_up_to_range(self, path_graph, tiny_cfg, tiny_params):
        for bad in (0, 4):
            with pytest.raises(ValueError):
                forward(path_graph, tiny_params, tiny_cfg, up_to=bad)

    def test_short_position_table(self, path_graph, tiny_cfg):
        ps = init_params(tiny_cfg, 4, 2)
        with pytest.raises(ShapeError):
            forward(path_graph, ps, tiny_cfg, up_to=3)


class TestContextLoss:
    def test_zero_embeddings_cost_log2(self):
        emb = Tensor(np.zeros((1, 2, 3)))
        loss = context_loss(emb, np.array([[0, 0, 1]]), None)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-15)

    def test_zero_negative_ratio_ignores_negatives(self, rng):
        emb = Tensor(rng.normal(size=(2, 4, 3)))
        pos = np.array([[0, 0, 1], [1, 2, 3]])
        neg = np.array([[0, 0, 2], [1, 2, 0]])
        assert context_loss(emb, pos, neg, 0.0).item() == context_loss(emb, pos, None).item()

    @pytest.mark.parametrize("reduction", ["mean", "sum"])
    def test_matches_scalar_evaluation(self, rng, reduction):
        emb = rng.normal(size=(3, 6, 4))
        pos = np.stack([rng.integers(0, 3, 20), rng.integers(0, 6, 20), rng.integers(0, 6, 20)], axis=1)
        neg = np.stack([rng.integers(0, 3, 50), rng.integers(0, 6, 50), rng.integers(0, 6, 50)], axis=1)
        got = context_loss(Tensor(emb), pos, neg, 0.7, reduction).item()
        want = oracle.context_loss(emb, pos, neg, 0.7, reduction)
        assert got == pytest.approx(want, rel=0, abs=1e-12)

    def test_saturated_scores_stay_finite(self):
        emb = np.zeros((1, 2, 1))
        emb[0, 0, 0], emb[0, 1, 0] = 100.0, -100.0
        loss = context_loss(Tensor(emb), np.array([[0, 0, 1]]), np.array([[0, 0, 0]]))
        assert math.isfinite(loss.item())
        assert loss.item() == pytest.approx(-2 * math.log(1e-12))

    def test_empty_positives(self):
        with pytest.raises(ValueError):
            context_loss(Tensor(np.zeros((1, 2, 2))), np.empty((0, 3)), None)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            context_loss(Tensor(np.zeros((1, 2, 2))), np.array([[0, 0, 2]]), None)
        with pytest.raises(IndexError):
            context_loss(Tensor(np.zeros((1, 2, 2))), np.array([[0, 0, 1]]), np.array([[1, 0, 1]]))

    def test_gradient_direction(self):
        # positives pull embeddings together: d loss / d score < 0
        emb = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]]), requires_grad=True)
        with Tape() as tape:
            loss = context_loss(emb, np.array([[0, 0, 1]]), None)
        tape.backward(loss)
        np.testing.assert_allclose(emb.grad[0, 0], [-0.5 * 0.0, -0.5 * 1.0])
        np.testing.assert_allclose(emb.grad[0, 1], [-0.5 * 1.0, -0.5 * 0.0])


def test_optimisation_reduces_fixed_loss(path_graph, tiny_cfg):
    """Ten Adam steps on fixed contexts cut the loss by at least a fifth."""
    ps = init_params(tiny_cfg, 4, 3, seed=0)
    pos = np.array([[t, u, v] for t in range(3) for u, v in ((0, 1), (1, 0), (1, 2), (2, 1), (0, 3), (3, 0))])
    neg = np.array([[t, u, v] for t in range(3) for u, v in ((0, 2), (2, 0), (1, 3), (3, 1))])
    cfg = TrainConfig(learning_rate=0.05, weight_decay=0.0)
    state = AdamState()
    losses = []
    for _ in range(11):
        with Tape() as tape:
            loss = context_loss(forward(path_graph, ps, tiny_cfg), pos, neg)
        losses.append(loss.item())
        for p in ps.values():
            p.grad = None
        tape.backward(loss)
        adam_step(ps, {k: p.grad for k, p in ps.items()}, state, cfg)
    assert losses[10] <= 0.8 * losses[0]


def test_parameter_set_mapping():
    ps = ParameterSet.from_arrays({"a": np.zeros(2), "b": np.ones((2, 2))})
    assert list(ps) == ["a", "b"] and len(ps) == 2
    assert ps["a"].name == "a" and ps["a"].requires_grad

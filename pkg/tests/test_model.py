import numpy as np
import pytest

from starctr.errors import ConfigError, ContractViolation, ShapeError
from starctr.gradcheck import check_model, random_examples, tiny_model_config
from starctr.layers import relu
from starctr.model import (
    Batch,
    BaselineModel,
    StarModel,
    build_baseline,
    build_model,
    embed_and_pool,
    star_layer_params,
)
from starctr.optim import Adam, bce_loss
from starctr.tensor import make_rng


def tiny_batch(config, n=6, domain=1, seed=5):
    return Batch.from_examples(random_examples(n, config, domain, seed))


class TestStarLayerParams:
    def test_ones_and_zeros_leave_shared_unchanged(self):
        rng = make_rng(40)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        w_star, b_star = star_layer_params(w, b, np.ones((4, 3)), np.zeros(3))
        assert np.array_equal(w_star, w)
        assert np.array_equal(b_star, b)

    def test_zero_domain_weights_gate_off_shared(self):
        rng = make_rng(41)
        w = rng.normal(size=(2, 2))
        w_star, _ = star_layer_params(w, np.zeros(2), np.zeros((2, 2)),
                                      np.zeros(2))
        assert np.array_equal(w_star, np.zeros((2, 2)))

    def test_hand_arithmetic(self):
        w_star, b_star = star_layer_params(
            np.array([[2.0]]), np.array([1.0]),
            np.array([[3.0]]), np.array([-1.0]),
        )
        assert w_star[0, 0] == 6.0
        assert b_star[0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            star_layer_params(np.zeros((2, 2)), np.zeros(2),
                              np.zeros((2, 3)), np.zeros(3))


class TestStarForward:
    def test_zero_shared_weights_give_half(self):
        config = tiny_model_config("star", "pn", aux=False)
        model = build_model(config)
        for layer in model.fcn.shared:
            layer.W.value[:] = 0.0
            layer.b.value[:] = 0.0
        yhat = model.forward(tiny_batch(config), mode="train")
        assert np.array_equal(yhat, np.full(6, 0.5))

    def test_aux_additivity_pre_sigmoid(self):
        config = tiny_model_config("star", "pn", aux=True)
        model = build_model(config)
        batch = tiny_batch(config)
        model.forward(batch, mode="train", update_stats=False)
        on = model.last_forward
        model.aux_enabled = False
        model.forward(batch, mode="train", update_stats=False)
        off = model.last_forward
        assert np.array_equal(on.logits, off.logits + on.s_aux)
        assert np.array_equal(on.s_main, off.s_main)

    def test_initialization_identity_across_domains(self):
        # Fresh domain stacks are ones/zeros, so with synced PN state the
        # forward pass is the shared model for every domain.
        config = tiny_model_config("star", "pn", aux=False)
        model = build_model(config)
        model.norm.moving_mean[:] = 0.5
        model.norm.moving_var[:] = 2.0
        model.norm.populated[:] = True
        ex1 = random_examples(6, config, domain=1, seed=8)
        ex2 = [e._replace(p=2) for e in ex1]
        out1 = model.forward(Batch.from_examples(ex1), mode="infer")
        out2 = model.forward(Batch.from_examples(ex2), mode="infer")
        assert np.allclose(out1, out2, atol=1e-12)

    def test_initialization_identity_vs_shared_stack(self):
        config = tiny_model_config("star", "bn", aux=False)
        model = build_model(config)
        batch = tiny_batch(config)
        yhat = model.forward(batch, mode="train", update_stats=False)
        # Oracle: manual forward through the shared parameters only.
        z = embed_and_pool(batch, model.tables)
        x = model.norm.forward_train(z, update_stats=False)
        for li, layer in enumerate(model.fcn.shared):
            pre = x @ layer.W.value + layer.b.value
            x = relu(pre) if layer.activation == "relu" else pre
        from starctr.layers import sigmoid
        assert np.allclose(yhat, sigmoid(x[:, 0]), atol=1e-12)

    def test_mixed_domain_batch_rejected(self):
        config = tiny_model_config()
        a = random_examples(2, config, domain=1)
        b = random_examples(2, config, domain=2)
        with pytest.raises(ContractViolation):
            Batch.from_examples(a + b)

    def test_train_requires_two_examples_for_pn(self):
        from starctr.errors import DegenerateInputError
        config = tiny_model_config("star", "pn", aux=False)
        model = build_model(config)
        with pytest.raises(DegenerateInputError):
            model.forward(tiny_batch(config, n=1), mode="train")


class TestStarBackward:
    def test_full_model_gradcheck(self):
        assert check_model(tiny_model_config("star", "pn", True)) < 1e-4

    def test_domain_q_gradients_structurally_zero(self):
        config = tiny_model_config("star", "pn", aux=True)
        model = build_model(config)
        batch = tiny_batch(config, domain=1)
        model.zero_grad()
        yhat = model.forward(batch, mode="train")
        _, dlogits = bce_loss(yhat, batch.y, logits=model.last_forward.logits)
        model.backward(dlogits)
        for param in model.domain_params(2):
            assert param.grad is None
        touched = [p for p in model.domain_params(1) if p.grad is not None]
        assert touched

    def test_dlogit_is_yhat_minus_y(self):
        config = tiny_model_config("star", "pn", aux=False)
        model = build_model(config)
        batch = tiny_batch(config, n=4)
        yhat = model.forward(batch, mode="train")
        _, dlogits = bce_loss(yhat, batch.y, logits=model.last_forward.logits)
        assert np.allclose(dlogits, (yhat - batch.y) / 4, atol=1e-16)

    def test_backward_without_forward(self):
        model = build_model(tiny_model_config())
        with pytest.raises(ContractViolation):
            model.backward(np.zeros(4))

    def test_domain_isolation_under_adam(self):
        config = tiny_model_config("star", "pn", aux=True)
        model = build_model(config)
        opt = Adam()
        snapshot = [(p.name, p.value.copy()) for p in model.domain_params(2)]
        stats_before = (model.norm.moving_mean[1].copy(),
                        model.norm.moving_var[1].copy())
        batch = tiny_batch(config, domain=1)
        model.zero_grad()
        yhat = model.forward(batch, mode="train")
        _, dlogits = bce_loss(yhat, batch.y, logits=model.last_forward.logits)
        model.backward(dlogits)
        opt.step(model.params(), model.embedding_tables())
        for (name, before), param in zip(snapshot, model.domain_params(2)):
            assert np.array_equal(param.value, before), name
        assert np.array_equal(model.norm.moving_mean[1], stats_before[0])
        assert np.array_equal(model.norm.moving_var[1], stats_before[1])


class TestBaselines:
    def test_base_equals_shared_bottom_at_m1(self):
        config = tiny_model_config("base", "bn", aux=False)
        config.num_domains = 1
        base = build_model(config)
        sb = build_baseline("shared_bottom", config)
        assert base.param_count() == sb.param_count()

    def test_shared_bottom_param_count(self):
        config = tiny_model_config("shared_bottom", "bn", aux=False)
        sb = build_model(config)
        base_config = tiny_model_config("base", "bn", aux=False)
        base = build_model(base_config)
        embed = sum(t.weights.size for t in sb.embedding_tables())
        fcn_base = sum(p.value.size
                       for stack in base.stacks for layer in stack
                       for p in layer.params())
        norm = sum(p.value.size for p in sb.norm.params())
        expected = embed + config.num_domains * fcn_base + norm
        assert sb.param_count() == expected

    def test_base_invariant_to_domain_indicator(self):
        config = tiny_model_config("base", "bn", aux=False)
        model = build_model(config)
        ex1 = random_examples(4, config, domain=1, seed=11)
        ex2 = [e._replace(p=2) for e in ex1]
        out1 = model.forward(Batch.from_examples(ex1), mode="train",
                             update_stats=False)
        out2 = model.forward(Batch.from_examples(ex2), mode="train",
                             update_stats=False)
        assert np.array_equal(out1, out2)

    def test_base_has_no_domain_indexed_fcn_parameters(self):
        model = build_model(tiny_model_config("base", "bn", aux=False))
        assert isinstance(model, BaselineModel)
        assert len(model.stacks) == 1
        assert model.domain_params(1) == []

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            build_baseline("ensemble", tiny_model_config())

    def test_shared_bottom_gradcheck(self):
        assert check_model(tiny_model_config("shared_bottom", "bn", True)) < 1e-4

    def test_base_gradcheck(self):
        assert check_model(tiny_model_config("base", "ln", False)) < 1e-4


class TestEmbedAndPool:
    def test_concatenation_order_and_width(self):
        config = tiny_model_config()
        model = build_model(config)
        batch = tiny_batch(config, n=3)
        z = embed_and_pool(batch, model.tables)
        assert z.shape == (3, config.input_dim)
        d = config.embed_dim
        expected = model.tables["profile"].weights[batch.profile]
        assert np.array_equal(z[:, d:2 * d], expected)

    def test_empty_behavior_contributes_zeros(self):
        config = tiny_model_config()
        model = build_model(config)
        from starctr.datagen import Example
        batch = Batch.from_examples([Example((), 0, 1, 2, 0, 1),
                                     Example((), 1, 0, 3, 1, 1)])
        z = embed_and_pool(batch, model.tables)
        assert np.array_equal(z[:, :config.embed_dim], np.zeros((2, 4)))


class TestConfigSurface:
    def test_one_shared_embedding_set_regardless_of_m(self):
        small = tiny_model_config("star", "pn", aux=False)
        big = tiny_model_config("star", "pn", aux=False)
        big.num_domains = 7
        m_small = build_model(small)
        m_big = build_model(big)
        assert len(m_small.tables) == len(m_big.tables) == 4
        for name in m_small.tables:
            assert np.array_equal(m_small.tables[name].weights,
                                  m_big.tables[name].weights)

    def test_unknown_combination_strategy_rejected(self):
        config = tiny_model_config()
        config.combine = "attention"
        with pytest.raises(ConfigError, match="combination strategy"):
            build_model(config)

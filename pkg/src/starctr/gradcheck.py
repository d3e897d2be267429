"""Finite-difference validation for every backward pass in the package."""

from __future__ import annotations

import numpy as np

from .datagen import Example
from .layers import BatchNorm, EmbeddingTable, FcLayer, LayerNorm, PartitionedNorm
from .model import Batch, ModelConfig, build_model
from .optim import bce_loss
from .tensor import grad_check, make_rng


def _pack(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a).ravel() for a in arrays])


def _scatter(theta: np.ndarray, arrays):
    offset = 0
    for a in arrays:
        n = a.size
        np.copyto(a, theta[offset:offset + n].reshape(a.shape))
        offset += n


def _grad_of(param) -> np.ndarray:
    return np.zeros_like(param.value) if param.grad is None else param.grad


def check_fc_layer(h: float = 1e-5) -> float:
    rng = make_rng(11)
    layer = FcLayer(5, 3, activation="relu", rng=rng, name="fc")
    x = rng.normal(size=(4, 5))
    r = rng.normal(size=(4, 3))
    arrays = [x, layer.W.value, layer.b.value]
    theta0 = _pack(arrays)

    def f(theta):
        _scatter(theta, arrays)
        return float((layer.forward(x) * r).sum())

    _scatter(theta0, arrays)
    layer.W.zero_grad()
    layer.b.zero_grad()
    layer.forward(x)
    dx = layer.backward(r.copy())
    analytic = _pack([dx, _grad_of(layer.W), _grad_of(layer.b)])
    return grad_check(f, theta0, analytic, h)


def check_embedding(h: float = 1e-5) -> float:
    rng = make_rng(12)
    table = EmbeddingTable(7, 3, rng=rng, name="field")
    flat = np.array([0, 2, 2, 5, 1, 4], dtype=np.int64)
    offsets = np.array([0, 3, 3, 4, 6], dtype=np.int64)  # includes an empty list
    r = rng.normal(size=(4, 3))
    arrays = [table.weights]
    theta0 = _pack(arrays)

    def f(theta):
        _scatter(theta, arrays)
        return float((table.pool(flat, offsets) * r).sum())

    _scatter(theta0, arrays)
    table.zero_grad()
    table.pool(flat, offsets)
    table.backward(r.copy())
    return grad_check(f, theta0, _pack([table._grad_dense]), h)


def _check_norm(norm, forward, params, h: float) -> float:
    rng = make_rng(13)
    x = rng.normal(1.5, 2.0, size=(6, 4))
    r = rng.normal(size=(6, 4))
    for p in params:
        p.value[:] = rng.normal(1.0, 0.3, size=p.value.shape)
    arrays = [x] + [p.value for p in params]
    theta0 = _pack(arrays)

    def f(theta):
        _scatter(theta, arrays)
        return float((forward(x) * r).sum())

    _scatter(theta0, arrays)
    for p in params:
        p.zero_grad()
    forward(x)
    dx = norm.backward(r.copy())
    analytic = _pack([dx] + [_grad_of(p) for p in params])
    return grad_check(f, theta0, analytic, h)


def check_batchnorm(h: float = 1e-5) -> float:
    norm = BatchNorm(4)
    return _check_norm(
        norm, lambda x: norm.forward_train(x, update_stats=False),
        norm.params(), h,
    )


def check_layernorm(h: float = 1e-5) -> float:
    norm = LayerNorm(4)
    return _check_norm(norm, norm.forward, norm.params(), h)


def check_partitioned_norm(h: float = 1e-5) -> float:
    # Domain 2 of 3 is on the compute path; the others' zero analytic
    # gradients are checked against zero numeric gradients.
    norm = PartitionedNorm(4, num_domains=3)
    return _check_norm(
        norm, lambda x: norm.forward_train(x, 2, update_stats=False),
        norm.params(), h,
    )


def tiny_model_config(variant: str = "star", normalizer: str = "pn",
                      aux: bool = True) -> ModelConfig:
    return ModelConfig(
        variant=variant,
        normalizer=normalizer,
        aux_enabled=aux,
        num_domains=2,
        embed_dim=4,
        vocab_items=12,
        vocab_profiles=6,
        vocab_contexts=4,
        layer_widths=(8, 4, 1),
        aux_embed_dim=3,
        aux_hidden=5,
        seed=3,
    )


def random_examples(n: int, config: ModelConfig, domain: int,
                    seed: int = 5) -> list[Example]:
    rng = make_rng(seed, stream=domain)
    out = []
    for i in range(n):
        length = int(rng.integers(0, 4)) if i else 0  # first one empty
        out.append(Example(
            behavior=tuple(int(v) for v in
                           rng.integers(0, config.vocab_items, size=length)),
            profile=int(rng.integers(0, config.vocab_profiles)),
            item=int(rng.integers(0, config.vocab_items)),
            context=int(rng.integers(0, config.vocab_contexts)),
            y=int(rng.integers(0, 2)),
            p=domain,
        ))
    return out


def check_model(config: ModelConfig, batch_size: int = 4,
                h: float = 1e-5) -> float:
    """End-to-end check of dL/d(theta) for every parameter of a model."""
    model = build_model(config)
    batch = Batch.from_examples(random_examples(batch_size, config, domain=1))
    params = model.params()
    tables = model.embedding_tables()
    arrays = [p.value for p in params] + [t.weights for t in tables]
    theta0 = _pack(arrays)

    def loss_value():
        yhat = model.forward(batch, mode="train", update_stats=False)
        loss, dlogits = bce_loss(yhat, batch.y,
                                 logits=model.last_forward.logits)
        return loss, dlogits

    def f(theta):
        _scatter(theta, arrays)
        return loss_value()[0]

    _scatter(theta0, arrays)
    model.zero_grad()
    _, dlogits = loss_value()
    model.backward(dlogits)
    analytic = _pack([_grad_of(p) for p in params]
                     + [t._grad_dense for t in tables])
    err = grad_check(f, theta0, analytic, h)
    _scatter(theta0, arrays)
    return err


def run_all(h: float = 1e-5) -> dict[str, float]:
    """Max relative error per module; everything must come in under 1e-4."""
    results = {
        "fc_layer": check_fc_layer(h),
        "embedding": check_embedding(h),
        "batch_norm": check_batchnorm(h),
        "layer_norm": check_layernorm(h),
        "partitioned_norm": check_partitioned_norm(h),
        "star_pn_aux": check_model(tiny_model_config("star", "pn", True), h=h),
        "star_bn_aux": check_model(tiny_model_config("star", "bn", True), h=h),
        "star_ln_noaux": check_model(tiny_model_config("star", "ln", False), h=h),
        "base_bn_aux": check_model(tiny_model_config("base", "bn", True), h=h),
        "shared_bottom_pn_aux": check_model(
            tiny_model_config("shared_bottom", "pn", True), h=h),
    }
    return results

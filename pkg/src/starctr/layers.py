"""Embedding, fully-connected, and normalization layers with manual backprop.

Layers follow one protocol: ``forward`` caches whatever the matching
``backward`` needs, ``backward`` takes dL/d(output), fills parameter
gradients, and returns dL/d(input).  Gradients accumulate across calls until
``zero_grad``; untouched parameters keep ``grad is None`` so the optimizer can
tell "zero gradient" from "not on the compute path".

All three normalizers share one arithmetic core so that partitioned
normalization with unit domain scale and zero domain bias is bitwise equal to
plain batch normalization.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ContractViolation,
    DegenerateInputError,
    DomainError,
    UninitializedStatsError,
)
from .tensor import make_rng


class Param:
    """A named trainable array and its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def _acc(param: Param, g: np.ndarray):
    if param.grad is None:
        param.grad = g.copy()
    else:
        param.grad += g


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[np.logical_not(pos)])
    out[np.logical_not(pos)] = ex / (1.0 + ex)
    return out


class EmbeddingTable:
    """Dense embedding matrix with sparse gradient accumulation.

    Lookups are batched: ``pool(flat_ids, offsets)`` mean-pools the rows for
    each example's slice of ``flat_ids`` (an empty slice pools to a zero
    vector).  Backward accumulates gradients only into looked-up rows.
    """

    def __init__(self, vocab_size: int, dim: int, rng=None, init_scale: float = 0.1,
                 name: str = "embed"):
        self.name = name
        self.vocab_size = vocab_size
        self.dim = dim
        if rng is None:
            rng = make_rng(0)
        self.weights = rng.normal(0.0, init_scale, size=(vocab_size, dim))
        self._grad_dense = np.zeros((vocab_size, dim))
        self._touched = np.zeros(vocab_size, dtype=bool)
        self._cache = None

    def _check_ids(self, flat_ids: np.ndarray):
        if flat_ids.size == 0:
            return
        bad = (flat_ids < 0) | (flat_ids >= self.vocab_size)
        if bad.any():
            offender = int(flat_ids[bad][0])
            raise IndexError(
                f"field '{self.name}': id {offender} outside vocab of "
                f"{self.vocab_size}"
            )

    def pool(self, flat_ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """Mean-pool each example's ids; caches the lookup for backward."""
        flat_ids = np.asarray(flat_ids, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        self._check_ids(flat_ids)
        n = offsets.size - 1
        counts = np.diff(offsets)
        out = np.zeros((n, self.dim))
        if flat_ids.size:
            owner = np.repeat(np.arange(n), counts)
            np.add.at(out, owner, self.weights[flat_ids])
            out /= np.maximum(counts, 1)[:, None]
        self._cache = (flat_ids, counts)
        return out

    def backward(self, upstream: np.ndarray):
        if self._cache is None:
            raise ContractViolation(f"{self.name}: backward without forward")
        flat_ids, counts = self._cache
        if flat_ids.size:
            scaled = upstream / np.maximum(counts, 1)[:, None]
            owner = np.repeat(np.arange(counts.size), counts)
            np.add.at(self._grad_dense, flat_ids, scaled[owner])
            self._touched[flat_ids] = True
        self._cache = None

    def add_row_grad(self, row: int, g: np.ndarray):
        """Accumulate a gradient into a single row (used by the aux network)."""
        self._grad_dense[row] += g
        self._touched[row] = True

    @property
    def grad_rows(self) -> np.ndarray:
        return np.nonzero(self._touched)[0]

    def sparse_grads(self) -> dict[int, np.ndarray]:
        """Accumulated gradients keyed by row index (touched rows only)."""
        return {int(r): self._grad_dense[r].copy() for r in self.grad_rows}

    def zero_grad(self):
        rows = self.grad_rows
        if rows.size:
            self._grad_dense[rows] = 0.0
        self._touched[:] = False


class FcLayer:
    """Fully connected layer ``out = act(x @ W + b)`` with W of shape (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng=None, name: str = "fc"):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.name = name
        self.activation = activation
        if rng is None:
            rng = make_rng(0)
        limit = np.sqrt(6.0 / in_dim)
        self.W = Param(f"{name}.W", rng.uniform(-limit, limit, size=(in_dim, out_dim)))
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = x @ self.W.value + self.b.value
        out = relu(pre) if self.activation == "relu" else pre
        self._cache = (x, pre)
        return out

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ContractViolation(f"{self.name}: backward without forward")
        x, pre = self._cache
        dpre = upstream * (pre > 0) if self.activation == "relu" else upstream
        _acc(self.W, x.T @ dpre)
        _acc(self.b, dpre.sum(axis=0))
        self._cache = None
        return dpre @ self.W.value.T

    def params(self) -> list[Param]:
        return [self.W, self.b]


def _norm_train_core(z, gamma_eff, beta_eff, epsilon):
    """Standardize by mini-batch column moments, then affine."""
    mu = z.mean(axis=0)
    diff = z - mu
    var = np.mean(diff * diff, axis=0)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = diff * inv
    out = gamma_eff * xhat + beta_eff
    return out, mu, var, inv, xhat


def _norm_train_backward(upstream, gamma_eff, inv, xhat):
    """Backprop through batch standardization + affine.

    Returns (dz, dgamma_eff, dbeta_eff)."""
    n = upstream.shape[0]
    dbeta = upstream.sum(axis=0)
    dgamma = (upstream * xhat).sum(axis=0)
    dxhat = upstream * gamma_eff
    dz = (inv / n) * (
        n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dz, dgamma, dbeta


class BatchNorm:
    """Batch normalization with moving moments for inference.

    The first training batch populates the moving statistics directly;
    subsequent batches blend with ``E <- (1-m) E + m mu``.
    """

    kind = "bn"

    def __init__(self, dim: int, momentum: float = 0.01, epsilon: float = 1e-5,
                 name: str = "bn"):
        self.name = name
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self.moving_mean = np.zeros(dim)
        self.moving_var = np.ones(dim)
        self.populated = False
        self._cache = None

    def _update_stats(self, mu, var):
        if not self.populated:
            self.moving_mean = mu.copy()
            self.moving_var = var.copy()
            self.populated = True
        else:
            m = self.momentum
            self.moving_mean = (1.0 - m) * self.moving_mean + m * mu
            self.moving_var = (1.0 - m) * self.moving_var + m * var

    def forward_train(self, z: np.ndarray, update_stats: bool = True) -> np.ndarray:
        if z.shape[0] < 2:
            raise DegenerateInputError(
                f"{self.name}: batch of {z.shape[0]} cannot be normalized"
            )
        out, mu, var, inv, xhat = _norm_train_core(
            z, self.gamma.value, self.beta.value, self.epsilon
        )
        if update_stats:
            self._update_stats(mu, var)
        self._cache = (inv, xhat)
        return out

    def forward_infer(self, z: np.ndarray) -> np.ndarray:
        if not self.populated:
            raise UninitializedStatsError(f"{self.name}: no training batch seen")
        inv = 1.0 / np.sqrt(self.moving_var + self.epsilon)
        return self.gamma.value * ((z - self.moving_mean) * inv) + self.beta.value

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ContractViolation(f"{self.name}: backward without forward")
        inv, xhat = self._cache
        dz, dgamma, dbeta = _norm_train_backward(
            upstream, self.gamma.value, inv, xhat
        )
        _acc(self.gamma, dgamma)
        _acc(self.beta, dbeta)
        self._cache = None
        return dz

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]


class PartitionedNorm:
    """Batch normalization privatized per domain.

    Training normalizes by the current (single-domain) mini-batch moments and
    applies scale ``gamma * gamma_p`` and bias ``beta + beta_p``; only domain
    p's moving moments are updated.  Inference standardizes with domain p's
    moving moments.
    """

    kind = "pn"

    def __init__(self, dim: int, num_domains: int, momentum: float = 0.01,
                 epsilon: float = 1e-5, name: str = "pn"):
        self.name = name
        self.dim = dim
        self.num_domains = num_domains
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self.domain_gamma = [
            Param(f"{name}.d{p}.gamma", np.ones(dim))
            for p in range(1, num_domains + 1)
        ]
        self.domain_beta = [
            Param(f"{name}.d{p}.beta", np.zeros(dim))
            for p in range(1, num_domains + 1)
        ]
        self.moving_mean = np.zeros((num_domains, dim))
        self.moving_var = np.ones((num_domains, dim))
        self.populated = np.zeros(num_domains, dtype=bool)
        self._cache = None

    def _check_domain(self, p: int):
        if not 1 <= p <= self.num_domains:
            raise DomainError(
                f"{self.name}: domain {p} outside 1..{self.num_domains}"
            )

    def forward_train(self, z: np.ndarray, p: int, update_stats: bool = True
                      ) -> np.ndarray:
        self._check_domain(p)
        if z.shape[0] < 2:
            raise DegenerateInputError(
                f"{self.name}: batch of {z.shape[0]} cannot be normalized"
            )
        i = p - 1
        gamma_eff = self.gamma.value * self.domain_gamma[i].value
        beta_eff = self.beta.value + self.domain_beta[i].value
        out, mu, var, inv, xhat = _norm_train_core(z, gamma_eff, beta_eff,
                                                   self.epsilon)
        if update_stats:
            if not self.populated[i]:
                self.moving_mean[i] = mu
                self.moving_var[i] = var
                self.populated[i] = True
            else:
                m = self.momentum
                self.moving_mean[i] = (1.0 - m) * self.moving_mean[i] + m * mu
                self.moving_var[i] = (1.0 - m) * self.moving_var[i] + m * var
        self._cache = (i, gamma_eff, inv, xhat)
        return out

    def forward_infer(self, z: np.ndarray, p: int) -> np.ndarray:
        self._check_domain(p)
        i = p - 1
        if not self.populated[i]:
            raise UninitializedStatsError(
                f"{self.name}: domain {p} has no populated statistics"
            )
        gamma_eff = self.gamma.value * self.domain_gamma[i].value
        beta_eff = self.beta.value + self.domain_beta[i].value
        inv = 1.0 / np.sqrt(self.moving_var[i] + self.epsilon)
        return gamma_eff * ((z - self.moving_mean[i]) * inv) + beta_eff

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ContractViolation(f"{self.name}: backward without forward")
        i, gamma_eff, inv, xhat = self._cache
        dz, dgamma_eff, dbeta_eff = _norm_train_backward(upstream, gamma_eff,
                                                         inv, xhat)
        _acc(self.gamma, dgamma_eff * self.domain_gamma[i].value)
        _acc(self.domain_gamma[i], dgamma_eff * self.gamma.value)
        _acc(self.beta, dbeta_eff)
        _acc(self.domain_beta[i], dbeta_eff)
        self._cache = None
        return dz

    def params(self) -> list[Param]:
        return [self.gamma, self.beta] + self.domain_gamma + self.domain_beta

    def domain_params(self, p: int) -> list[Param]:
        return [self.domain_gamma[p - 1], self.domain_beta[p - 1]]


class LayerNorm:
    """Per-row standardization with a learned per-feature affine.

    Identical in training and inference; rows need at least two features."""

    kind = "ln"

    def __init__(self, dim: int, epsilon: float = 1e-5, name: str = "ln"):
        self.name = name
        self.dim = dim
        self.epsilon = epsilon
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self._cache = None

    def forward(self, z: np.ndarray) -> np.ndarray:
        if z.shape[1] < 2:
            raise DegenerateInputError(
                f"{self.name}: feature width {z.shape[1]} cannot be normalized"
            )
        mu = z.mean(axis=1, keepdims=True)
        diff = z - mu
        var = np.mean(diff * diff, axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.epsilon)
        xhat = diff * inv
        self._cache = (inv, xhat)
        return self.gamma.value * xhat + self.beta.value

    # Same transform in both modes; aliases keep the normalizer protocol uniform.
    def forward_train(self, z: np.ndarray, update_stats: bool = True) -> np.ndarray:
        return self.forward(z)

    def forward_infer(self, z: np.ndarray) -> np.ndarray:
        return self.forward(z)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ContractViolation(f"{self.name}: backward without forward")
        inv, xhat = self._cache
        d = upstream.shape[1]
        _acc(self.gamma, (upstream * xhat).sum(axis=0))
        _acc(self.beta, upstream.sum(axis=0))
        dxhat = upstream * self.gamma.value
        dz = (inv / d) * (
            d * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        self._cache = None
        return dz

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

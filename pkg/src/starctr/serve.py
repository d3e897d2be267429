"""Per-domain weight folding and batch scoring.

At serving time the star factorization is collapsed: each domain gets its
pre-computed fused layer weights, and (for bn/pn) the frozen normalization
becomes a plain per-feature affine ``z * scale_p + shift_p``.  Folded
inference therefore never touches the shared-vs-domain split and its
per-example cost does not depend on the number of domains.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import Example, parse_example
from .errors import ConfigError, DataError, FoldError
from .layers import relu, sigmoid
from .model import Batch, StarModel, star_layer_params

_PRED_FMT = "{user}\t{p}\t{yhat:.17g}\t{y}\n"


def _clamp_probs(yhat: np.ndarray) -> np.ndarray:
    return np.clip(yhat, 1e-15, 1.0 - 1e-15)


@dataclass
class FoldedDomain:
    layers: list[tuple[np.ndarray, np.ndarray]]   # fused (W*, b*) per layer
    norm_scale: np.ndarray | None                 # None when normalizer is ln
    norm_shift: np.ndarray | None


class FoldedModel:
    """Immutable per-domain serving model produced by fold()."""

    def __init__(self, config, embeddings: dict[str, np.ndarray],
                 domains: list[FoldedDomain], ln_params, aux):
        self.config = config
        self.embeddings = embeddings
        self.domains = domains
        self.ln_params = ln_params          # (gamma, beta, epsilon) or None
        self.aux = aux                      # (embed, W1, b1, W2, b2) or None
        self.aux_uses_features = bool(getattr(config, "aux_use_features", True))

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    def _pool(self, batch: Batch) -> np.ndarray:
        d = self.config.embed_dim
        n = batch.size
        z = np.zeros((n, 4 * d))
        counts = np.diff(batch.behavior_offsets)
        if batch.behavior_flat.size:
            owner = np.repeat(np.arange(n), counts)
            np.add.at(z[:, 0:d], owner,
                      self.embeddings["behavior"][batch.behavior_flat])
            z[:, 0:d] /= np.maximum(counts, 1)[:, None]
        z[:, d:2 * d] = self.embeddings["profile"][batch.profile]
        z[:, 2 * d:3 * d] = self.embeddings["item"][batch.item]
        z[:, 3 * d:4 * d] = self.embeddings["context"][batch.context]
        return z

    def score_batch(self, batch: Batch) -> np.ndarray:
        p = batch.domain
        if not 1 <= p <= self.num_domains:
            raise DataError(f"unknown domain {p} (model serves 1..{self.num_domains})")
        folded = self.domains[p - 1]
        z = self._pool(batch)
        if folded.norm_scale is not None:
            x = z * folded.norm_scale + folded.norm_shift
        else:
            gamma, beta, eps = self.ln_params
            mu = z.mean(axis=1, keepdims=True)
            var = np.mean((z - mu) ** 2, axis=1, keepdims=True)
            x = gamma * ((z - mu) / np.sqrt(var + eps)) + beta
        last = len(folded.layers) - 1
        for li, (w, b) in enumerate(folded.layers):
            x = x @ w + b
            if li != last:
                x = relu(x)
        logits = x[:, 0]
        if self.aux is not None:
            embed, w1, b1, w2, b2 = self.aux
            e = np.tile(embed[p - 1], (batch.size, 1))
            x_aux = np.concatenate([e, z], axis=1) if self.aux_uses_features else e
            h = relu(x_aux @ w1 + b1)
            logits = logits + (h @ w2 + b2)[:, 0]
        return _clamp_probs(sigmoid(logits))

    def score_examples(self, examples: Sequence[Example],
                       batch_size: int = 4096) -> np.ndarray:
        return _score_grouped(self.score_batch, examples, batch_size)


def fold(model: StarModel) -> FoldedModel:
    """Pre-compute fused per-domain weights and frozen normalization affines."""
    if not isinstance(model, StarModel):
        raise ConfigError("fold requires a star-variant model")
    config = model.config
    norm = model.norm
    ln_params = None
    domains = []
    for p in range(1, config.num_domains + 1):
        layers = [
            star_layer_params(sl.W.value, sl.b.value, dl.W.value, dl.b.value)
            for sl, dl in zip(model.fcn.shared, model.fcn.domain[p - 1])
        ]
        if norm.kind == "pn":
            if not norm.populated[p - 1]:
                raise FoldError(f"domain {p}: statistics never populated")
            gamma_eff = norm.gamma.value * norm.domain_gamma[p - 1].value
            beta_eff = norm.beta.value + norm.domain_beta[p - 1].value
            scale = gamma_eff / np.sqrt(norm.moving_var[p - 1] + norm.epsilon)
            shift = beta_eff - scale * norm.moving_mean[p - 1]
        elif norm.kind == "bn":
            if not norm.populated:
                raise FoldError("normalizer statistics never populated")
            scale = norm.gamma.value / np.sqrt(norm.moving_var + norm.epsilon)
            shift = norm.beta.value - scale * norm.moving_mean
        else:
            scale = shift = None
        domains.append(FoldedDomain(layers, scale, shift))
    if norm.kind == "ln":
        ln_params = (norm.gamma.value.copy(), norm.beta.value.copy(),
                     norm.epsilon)
    embeddings = {name: model.tables[name].weights.copy()
                  for name in model.tables}
    aux = None
    if model.aux is not None and model.aux_enabled:
        a = model.aux
        aux = (a.embed.weights.copy(), a.fc1.W.value.copy(),
               a.fc1.b.value.copy(), a.fc2.W.value.copy(),
               a.fc2.b.value.copy())
    return FoldedModel(config, embeddings, domains, ln_params, aux)


def score_with_model(model, examples: Sequence[Example],
                     batch_size: int = 4096) -> np.ndarray:
    """Unfolded inference-mode scoring; the reference for fold equivalence."""

    def score_batch(batch: Batch) -> np.ndarray:
        return _clamp_probs(model.forward(batch, mode="infer"))

    return _score_grouped(score_batch, examples, batch_size)


def _score_grouped(score_batch, examples: Sequence[Example],
                   batch_size: int) -> np.ndarray:
    """Score per-domain chunks and scatter back into input order."""
    out = np.empty(len(examples))
    by_domain: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        by_domain.setdefault(ex.p, []).append(i)
    for p in sorted(by_domain):
        idx = by_domain[p]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            batch = Batch.from_examples([examples[i] for i in chunk])
            out[chunk] = score_batch(batch)
    return out


@dataclass
class ScoreSummary:
    n_scored: int
    n_skipped: int
    first_errors: list[str]

    def message(self) -> str:
        if self.n_skipped == 0:
            return f"scored {self.n_scored} examples"
        head = "; ".join(self.first_errors[:3])
        return (f"scored {self.n_scored} examples, skipped {self.n_skipped} "
                f"with unknown domains ({head})")


def score_file(folded: FoldedModel, data_path: str, out_path: str,
               batch_size: int = 4096) -> ScoreSummary:
    """Score a dataset file into ``user<TAB>p<TAB>yhat<TAB>y`` lines.

    Output order follows input order.  Lines whose domain the model does not
    serve are skipped and reported in the summary.
    """
    examples: list[Example] = []
    errors: list[str] = []
    n_skipped = 0
    keep_lineno: list[int] = []
    with open(data_path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ex = parse_example(line, lineno)
            if not 1 <= ex.p <= folded.num_domains:
                n_skipped += 1
                if len(errors) < 10:
                    errors.append(f"line {lineno}: unknown domain {ex.p}")
                continue
            examples.append(ex)
            keep_lineno.append(lineno)
    yhat = folded.score_examples(examples, batch_size) if examples else []
    with open(out_path, "w", encoding="ascii", newline="\n") as fh:
        for ex, prob in zip(examples, yhat):
            fh.write(_PRED_FMT.format(user=ex.profile, p=ex.p, yhat=prob,
                                      y=ex.y))
    return ScoreSummary(len(examples), n_skipped, errors)


# --------------------------------------------------------------------------
# Folded model file: little-endian binary, magic FOLD, version 1.  Header
# mirrors the checkpoint header; payload stores embeddings, per-domain fused
# layers + affine constants, optional ln params, optional aux tensors.
# --------------------------------------------------------------------------

_FOLD_MAGIC = b"FOLD"
_FOLD_VERSION = 1


def save_folded(folded: FoldedModel, path: str):
    import io
    import struct

    from .errors import VersionError  # noqa: F401  (kept near load_folded)

    config = folded.config
    buf = io.BytesIO()
    buf.write(_FOLD_MAGIC)
    buf.write(struct.pack("<H", _FOLD_VERSION))
    norm_kind = 1 if folded.ln_params is not None else 0
    aux_code = 0
    if folded.aux is not None:
        aux_code = 1 if folded.aux_uses_features else 2
    buf.write(struct.pack("<BB", norm_kind, aux_code))
    buf.write(struct.pack(
        "<IIIIII", folded.num_domains, config.embed_dim, config.vocab_items,
        config.vocab_profiles, config.vocab_contexts, config.aux_embed_dim,
    ))
    buf.write(struct.pack("<I", len(config.layer_widths)))
    for w in config.layer_widths:
        buf.write(struct.pack("<I", w))
    buf.write(struct.pack("<I", config.aux_hidden))
    buf.write(struct.pack("<d", config.epsilon))

    def put(arr):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    for name in ("behavior", "profile", "item", "context"):
        put(folded.embeddings[name])
    for dom in folded.domains:
        for w, b in dom.layers:
            put(w)
            put(b)
        if dom.norm_scale is not None:
            put(dom.norm_scale)
            put(dom.norm_shift)
    if folded.ln_params is not None:
        put(folded.ln_params[0])
        put(folded.ln_params[1])
    if folded.aux is not None:
        for arr in folded.aux:
            put(arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_folded(path: str) -> FoldedModel:
    import struct

    from .errors import CheckpointError, VersionError
    from .model import ModelConfig

    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError("truncated folded model file")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != _FOLD_MAGIC:
        raise CheckpointError("bad magic: not a folded model file")
    (version,) = struct.unpack("<H", take(2))
    if version != _FOLD_VERSION:
        raise VersionError(f"folded model version {version}, expected "
                           f"{_FOLD_VERSION}")
    norm_kind, aux_flag = struct.unpack("<BB", take(2))
    (m, embed_dim, vocab_items, vocab_profiles, vocab_contexts,
     aux_embed_dim) = struct.unpack("<IIIIII", take(24))
    (n_layers,) = struct.unpack("<I", take(4))
    widths = struct.unpack(f"<{n_layers}I", take(4 * n_layers))
    (aux_hidden,) = struct.unpack("<I", take(4))
    (epsilon,) = struct.unpack("<d", take(8))

    def arr(shape):
        count = int(np.prod(shape))
        return np.frombuffer(take(count * 8), dtype="<f8").astype(
            np.float64).reshape(shape)

    config = ModelConfig(
        variant="star", normalizer="ln" if norm_kind else "pn",
        aux_enabled=bool(aux_flag), aux_use_features=aux_flag == 1,
        num_domains=m, embed_dim=embed_dim,
        vocab_items=vocab_items, vocab_profiles=vocab_profiles,
        vocab_contexts=vocab_contexts, layer_widths=tuple(widths),
        aux_embed_dim=aux_embed_dim, aux_hidden=aux_hidden, epsilon=epsilon,
    )
    embeddings = {
        "behavior": arr((vocab_items, embed_dim)),
        "profile": arr((vocab_profiles, embed_dim)),
        "item": arr((vocab_items, embed_dim)),
        "context": arr((vocab_contexts, embed_dim)),
    }
    in_dim = 4 * embed_dim
    domains = []
    for _ in range(m):
        layers = []
        prev = in_dim
        for w in widths:
            layers.append((arr((prev, w)), arr((w,))))
            prev = w
        if norm_kind == 0:
            scale = arr((in_dim,))
            shift = arr((in_dim,))
        else:
            scale = shift = None
        domains.append(FoldedDomain(layers, scale, shift))
    ln_params = None
    if norm_kind == 1:
        ln_params = (arr((in_dim,)), arr((in_dim,)), epsilon)
    aux = None
    if aux_flag:
        aux_in = aux_embed_dim + (in_dim if aux_flag != 2 else 0)
        aux = (
            arr((m, aux_embed_dim)),
            arr((aux_in, aux_hidden)),
            arr((aux_hidden,)),
            arr((aux_hidden, 1)),
            arr((1,)),
        )
    if pos != len(raw):
        raise CheckpointError("trailing bytes after folded model payload")
    return FoldedModel(config, embeddings, domains, ln_params, aux)


def read_predictions(path: str) -> list[tuple[int, int, float, int]]:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"line {lineno}: expected 4 fields")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]),
                         int(parts[3])))
    return rows

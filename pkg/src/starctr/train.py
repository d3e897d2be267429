"""Streaming training loop, evaluation, and the ablation grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TextIO

from .config import ExperimentConfig, with_overrides
from .datagen import Example, validate_ids
from .metrics import MetricReport, Prediction, build_report
from .model import Batch, build_model
from .optim import Adam, bce_loss
from .pipeline import ShuffleBuffer, stream_batches
from .serve import score_with_model
from .tensor import make_rng

LOG_EVERY = 100


@dataclass
class TrainResult:
    model: object
    steps: int
    final_epoch_loss: float


def train_model(config: ExperimentConfig, examples: Sequence[Example],
                log: TextIO | None = None) -> TrainResult:
    """Train a model over the arrival stream via the shuffle buffer.

    Batches smaller than 2 (possible only while the buffer drains) are
    skipped: batch-statistics normalizers cannot consume them.
    """
    config.validate()
    validate_ids(examples, config.vocab_items, config.vocab_profiles,
                 config.vocab_contexts)
    model = build_model(config.model_config())
    opt = Adam(lr=config.lr)
    step = 0
    epoch_loss = 0.0
    for epoch in range(config.epochs):
        rng = make_rng(config.seed, stream=1000 + epoch)
        buffer = ShuffleBuffer(config.effective_buffer_capacity, rng)
        epoch_loss = 0.0
        epoch_examples = 0
        for batch_examples in stream_batches(examples, buffer,
                                             config.batch_size):
            if len(batch_examples) < 2:
                continue
            batch = Batch.from_examples(batch_examples)
            model.zero_grad()
            yhat = model.forward(batch, mode="train")
            loss, dlogits = bce_loss(yhat, batch.y,
                                     logits=model.last_forward.logits)
            model.backward(dlogits)
            opt.step(model.params(), model.embedding_tables())
            step += 1
            epoch_loss += loss * batch.size
            epoch_examples += batch.size
            if log is not None and step % LOG_EVERY == 0:
                log.write(f"{step}\t{loss!r}\n")
        epoch_loss = epoch_loss / max(epoch_examples, 1)
        if log is not None:
            log.write(f"# epoch {epoch + 1} mean_loss={epoch_loss!r} "
                      f"examples={epoch_examples}\n")
    return TrainResult(model, step, epoch_loss)


def predictions_for(model, examples: Sequence[Example],
                    batch_size: int = 4096) -> list[Prediction]:
    yhat = score_with_model(model, examples, batch_size)
    return [
        Prediction(user=ex.profile, p=ex.p, yhat=float(yh), y=ex.y)
        for ex, yh in zip(examples, yhat)
    ]


def evaluate_model(model, examples: Sequence[Example]) -> MetricReport:
    return build_report(predictions_for(model, examples))


ABLATION_VARIANTS = (
    ("base", "bn"),
    ("base", "pn"),
    ("star", "bn"),
    ("star", "ln"),
    ("star", "pn"),
)


@dataclass
class AblationRow:
    variant: str
    normalizer: str
    aux: bool
    overall_auc: float

    def format(self) -> str:
        aux = "on" if self.aux else "off"
        return (f"{self.variant}\t{self.normalizer}\taux={aux}\t"
                f"overall_auc={self.overall_auc!r}")


def run_ablation(config: ExperimentConfig, train_examples: Sequence[Example],
                 eval_examples: Sequence[Example],
                 log: TextIO | None = None) -> list[AblationRow]:
    """Overall AUC for the five architecture/normalizer cells, aux on and off."""
    rows = []
    for variant, normalizer in ABLATION_VARIANTS:
        for aux in (True, False):
            cell = with_overrides(config, variant=variant,
                                  normalizer=normalizer, aux=aux)
            result = train_model(cell, train_examples)
            report = evaluate_model(result.model, eval_examples)
            rows.append(AblationRow(variant, normalizer, aux,
                                    report.overall_auc))
            if log is not None:
                log.write(rows[-1].format() + "\n")
    return rows

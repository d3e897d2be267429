import hashlib
import time

import numpy as np
import pytest

from starctr.checkpoint import serialize
from starctr.datagen import write_dataset
from starctr.errors import ConfigError, FoldError
from starctr.gradcheck import random_examples
from starctr.model import ModelConfig, build_model
from starctr.serve import (
    fold,
    load_folded,
    read_predictions,
    save_folded,
    score_file,
    score_with_model,
)

def serving_config(normalizer="pn", aux=True, num_domains=5):
    return ModelConfig(
        variant="star", normalizer=normalizer, aux_enabled=aux,
        num_domains=num_domains, embed_dim=4, vocab_items=60,
        vocab_profiles=30, vocab_contexts=8, layer_widths=(12, 6, 1),
        aux_embed_dim=6, aux_hidden=8, seed=2,
    )


def small_trained_model(normalizer="pn", aux=True, num_domains=5):
    """A briefly trained star model with every domain's stats populated."""
    from starctr.model import Batch
    from starctr.optim import Adam, bce_loss

    config = serving_config(normalizer, aux, num_domains)
    model = build_model(config)
    opt = Adam()
    for step in range(4 * num_domains):
        domain = 1 + step % num_domains
        batch = Batch.from_examples(
            random_examples(16, config, domain, seed=100 + step))
        model.zero_grad()
        yhat = model.forward(batch, mode="train")
        _, dlogits = bce_loss(yhat, batch.y, logits=model.last_forward.logits)
        model.backward(dlogits)
        opt.step(model.params(), model.embedding_tables())
    return model


def random_eval_examples(config, per_domain, seed=0):
    out = []
    for p in range(1, config.num_domains + 1):
        out.extend(random_examples(per_domain, config, p, seed=seed + p))
    return out


class TestFold:
    @pytest.mark.parametrize("normalizer", ["pn", "bn", "ln"])
    def test_fold_equivalence(self, normalizer):
        model = small_trained_model(normalizer)
        folded = fold(model)
        examples = random_eval_examples(model.config, 200)
        a = folded.score_examples(examples)
        b = score_with_model(model, examples)
        assert np.abs(a - b).max() <= 1e-12

    def test_identity_domain_folds_to_shared_weights(self):
        model = small_trained_model("bn")
        for layer in model.fcn.domain[0]:
            layer.W.value[:] = 1.0
            layer.b.value[:] = 0.0
        folded = fold(model)
        for (w, b), shared in zip(folded.domains[0].layers, model.fcn.shared):
            assert np.array_equal(w, shared.W.value)
            assert np.array_equal(b, shared.b.value)

    def test_fold_deterministic_outputs(self):
        model = small_trained_model()
        examples = random_eval_examples(model.config, 50)
        a = fold(model).score_examples(examples)
        b = fold(model).score_examples(examples)
        assert np.array_equal(a, b)

    def test_unpopulated_domain_stats_named(self):
        config = serving_config("pn")
        model = build_model(config)
        from starctr.model import Batch
        batch = Batch.from_examples(random_examples(8, config, 1, seed=3))
        model.forward(batch, mode="train")  # populate only domain 1
        with pytest.raises(FoldError, match="domain 2"):
            fold(model)

    def test_fold_requires_star(self):
        from starctr.model import build_baseline
        base = build_baseline("base", serving_config())
        with pytest.raises(ConfigError):
            fold(base)

    def test_scoring_does_not_mutate_model(self):
        model = small_trained_model()
        digest_before = hashlib.sha256(serialize(model)).hexdigest()
        examples = random_eval_examples(model.config, 100)
        folded = fold(model)
        folded.score_examples(examples)
        score_with_model(model, examples)
        assert hashlib.sha256(serialize(model)).hexdigest() == digest_before


class TestScoreFile:
    def test_empty_file(self, tmp_path):
        model = small_trained_model()
        data = tmp_path / "empty.tsv"
        data.write_text("")
        out = tmp_path / "preds.tsv"
        summary = score_file(fold(model), str(data), str(out))
        assert summary.n_scored == 0
        assert summary.n_skipped == 0
        assert out.read_text() == ""

    def test_deterministic_output_bytes(self, tmp_path):
        model = small_trained_model()
        examples = random_eval_examples(model.config, 80)
        data = tmp_path / "d.tsv"
        write_dataset(examples, str(data))
        folded = fold(model)
        o1, o2 = tmp_path / "p1.tsv", tmp_path / "p2.tsv"
        score_file(folded, str(data), str(o1))
        score_file(folded, str(data), str(o2))
        assert o1.read_bytes() == o2.read_bytes()

    def test_row_format_and_order(self, tmp_path):
        model = small_trained_model()
        examples = random_eval_examples(model.config, 10)
        data = tmp_path / "d.tsv"
        write_dataset(examples, str(data))
        out = tmp_path / "p.tsv"
        score_file(fold(model), str(data), str(out))
        rows = read_predictions(str(out))
        assert len(rows) == len(examples)
        for row, ex in zip(rows, examples):
            assert row[0] == ex.profile
            assert row[1] == ex.p
            assert row[3] == ex.y
            assert 0.0 < row[2] < 1.0
        # 17 significant digits recorded
        first_line = out.read_text().splitlines()[0]
        assert len(first_line.split("\t")[2].replace(".", "").lstrip("0")) >= 15

    def test_unknown_domain_counted(self, tmp_path):
        model = small_trained_model(num_domains=2)
        examples = random_eval_examples(model.config, 5)
        bad = examples[0]._replace(p=9)
        data = tmp_path / "d.tsv"
        write_dataset(examples + [bad], str(data))
        out = tmp_path / "p.tsv"
        summary = score_file(fold(model), str(data), str(out))
        assert summary.n_skipped == 1
        assert summary.n_scored == len(examples)
        assert "unknown domain 9" in summary.message()

    def test_folded_round_trip(self, tmp_path):
        for normalizer in ("pn", "ln"):
            model = small_trained_model(normalizer)
            folded = fold(model)
            path = tmp_path / f"{normalizer}.fold"
            save_folded(folded, str(path))
            loaded = load_folded(str(path))
            examples = random_eval_examples(model.config, 40)
            assert np.array_equal(loaded.score_examples(examples),
                                  folded.score_examples(examples))


class TestThroughput:
    def test_folded_not_slower_than_unfolded(self):
        # Folded scoring skips the per-batch weight fusion; compare best-of-3
        # wall times on the same examples.
        model = small_trained_model()
        examples = random_eval_examples(model.config, 1500)
        folded = fold(model)

        def best_of(fn, repeats=3):
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            return min(times)

        t_folded = best_of(lambda: folded.score_examples(examples, 256))
        t_unfolded = best_of(lambda: score_with_model(model, examples, 256))
        assert t_folded <= t_unfolded * 1.10

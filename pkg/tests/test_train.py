import io

import pytest

from starctr.config import (
    ExperimentConfig,
    config_hash,
    format_experiment_config,
    parse_experiment_config,
)
from starctr.datagen import default_gen_config, generate_examples
from starctr.errors import ConfigError
from starctr.train import evaluate_model, run_ablation, train_model


@pytest.fixture(scope="module")
def tiny_data():
    gen = default_gen_config(num_domains=3, seed=4, n_examples=6_000,
                             vocab_items=300, vocab_profiles=120,
                             vocab_contexts=12)
    train = generate_examples(gen).examples
    gen_test = default_gen_config(num_domains=3, seed=4, n_examples=2_000,
                                  sample_seed=900, vocab_items=300,
                                  vocab_profiles=120, vocab_contexts=12)
    test = generate_examples(gen_test).examples
    return train, test


def tiny_config(**kw):
    defaults = dict(domains=3, vocab_items=300, vocab_profiles=120,
                    vocab_contexts=12, layers=(16, 8, 1), embed_dim=4,
                    aux_embed_dim=4, aux_hidden=6, batch_size=128, epochs=1,
                    seed=0)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestTrainLoop:
    def test_training_produces_finite_scores(self, tiny_data):
        train, test = tiny_data
        result = train_model(tiny_config(), train)
        report = evaluate_model(result.model, test)
        assert 0.0 < report.overall_auc < 1.0
        assert result.steps > 0

    def test_log_format(self, tiny_data):
        train, _ = tiny_data
        log = io.StringIO()
        train_model(tiny_config(epochs=3), train, log=log)
        lines = log.getvalue().splitlines()
        steps = [l for l in lines if not l.startswith("#")]
        epochs = [l for l in lines if l.startswith("# epoch")]
        assert len(epochs) == 3
        for line in steps:
            step, loss = line.split("\t")
            assert int(step) % 100 == 0
            assert float(loss) > 0

    def test_deterministic_given_seed(self, tiny_data):
        from starctr.checkpoint import serialize
        train, _ = tiny_data
        a = train_model(tiny_config(), train).model
        b = train_model(tiny_config(), train).model
        assert serialize(a) == serialize(b)

    def test_vocab_validation(self, tiny_data):
        train, _ = tiny_data
        bad = tiny_config(vocab_items=10)
        from starctr.errors import DataError
        with pytest.raises(DataError):
            train_model(bad, train)


class TestAblation:
    def test_grid_has_ten_rows(self, tiny_data):
        train, test = tiny_data
        rows = run_ablation(tiny_config(), train[:3000], test[:1000])
        assert len(rows) == 10
        cells = {(r.variant, r.normalizer, r.aux) for r in rows}
        assert len(cells) == 10
        for r in rows:
            assert 0.0 <= r.overall_auc <= 1.0

    def test_row_format(self, tiny_data):
        train, test = tiny_data
        rows = run_ablation(tiny_config(), train[:2000], test[:800])
        line = rows[0].format()
        assert line.count("\t") == 3
        assert "overall_auc=" in line


class TestExperimentConfig:
    def test_round_trip(self):
        config = tiny_config(variant="shared_bottom", normalizer="ln",
                             aux=False)
        parsed = parse_experiment_config(format_experiment_config(config))
        assert parsed == config

    def test_unknown_keys_listed(self):
        with pytest.raises(ConfigError, match="zap.*zip|zip.*zap"):
            parse_experiment_config("zip=1\nzap=2\n")

    def test_overrides_win(self):
        text = format_experiment_config(tiny_config())
        parsed = parse_experiment_config(text, {"epochs": "7", "lr": "0.01"})
        assert parsed.epochs == 7
        assert parsed.lr == 0.01

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_experiment_config("epochs=three\n")

    def test_invalid_variant(self):
        with pytest.raises(ConfigError):
            parse_experiment_config("variant=ensemble\n")

    def test_hash_stable_and_sensitive(self):
        a = config_hash(tiny_config())
        b = config_hash(tiny_config())
        c = config_hash(tiny_config(seed=1))
        assert a == b
        assert a != c

    def test_comments_and_blanks_ignored(self):
        parsed = parse_experiment_config("# a comment\n\nseed=5\n")
        assert parsed.seed == 5

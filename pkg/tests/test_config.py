import pytest

from ulm.config import ConfigError, load_config, parse_config, with_seed


class TestConfig:
    def test_defaults(self):
        cfg = parse_config(None)
        assert cfg.model.kind == "ulm" and cfg.train.lr == 1e-4
        assert cfg.data.ranges == "table" and cfg.data.validation_fraction == 0.1
        assert cfg.embeddings.dim == 64

    def test_mlp_lr_default(self):
        assert parse_config({"model": {"kind": "mlp_m"}}).train.lr == 1e-3
        assert parse_config({"model": {"kind": "mlp_b"}, "train": {"lr": 5e-3}}).train.lr == 5e-3

    def test_seed_propagates(self):
        cfg = parse_config({"seed": 9})
        assert (cfg.train.seed, cfg.synth.seed) == (9, 9)
        cfg = with_seed(cfg, 4)
        assert (cfg.seed, cfg.train.seed, cfg.synth.seed) == (4, 4, 4)

    @pytest.mark.parametrize("raw", [
        {"modle": {}},
        {"model": {"kind": "rnn"}},
        {"model": {"layers": 3}},
        {"train": {"lr": -1}},
        {"train": "fast"},
        {"synth": {"colour": 1}},
    ])
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_load_fixture(self, fixtures):
        cfg = load_config(fixtures / "toy.yaml")
        assert cfg.seed == 3 and cfg.model.heads == 2 and cfg.embeddings.dim == 16

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "c.yaml").write_text("model: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")

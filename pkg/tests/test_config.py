import pytest

from lidnet.config import SCHEMA, ConfigError, RunConfig, load_config, parse_text


def test_defaults_match_reference_hyperparameters():
    cfg = RunConfig.defaults()
    assert (cfg["model.blocks"], cfg["model.subblocks"], cfg["model.channels"]) == (15, 5, 512)
    assert cfg["model.attention_dim"] == 256 and cfg["model.dropout"] == 0.2
    assert cfg["train.lr"] == 0.005 and cfg["train.lr_min"] == 0.0001
    assert cfg["features.n_mels"] == 40 and cfg["features.window"] == 400 and cfg["features.hop"] == 160
    assert len(cfg.labels()) == 16
    assert cfg.encoder().kernel_schedule[0] == 33


def test_every_key_has_a_default():
    assert set(RunConfig.defaults().values) == set(SCHEMA)


def test_dump_load_roundtrip(tmp_path):
    cfg = load_config(overrides={"model.blocks": "3", "model.kernel_schedule": "5,7,9",
                                 "data.labels": "kab,eng", "augment.enabled": "true"})
    cfg.save(tmp_path / "run.config")
    again = load_config(tmp_path / "run.config")
    assert again.values == cfg.values
    assert again.dumps() == cfg.dumps()


def test_sections_and_comments(tmp_path):
    (tmp_path / "c.ini").write_text("# run\n[model]\nblocks = 2\nkernel_schedule = 3,5\n\n"
                                    "[train]\nlr = 0.01\naugment.enabled = yes\n")
    cfg = load_config(tmp_path / "c.ini")
    assert cfg["model.blocks"] == 2 and cfg["model.kernel_schedule"] == (3, 5)
    assert cfg["train.lr"] == 0.01 and cfg["augment.enabled"] is True


def test_unknown_key_rejected(tmp_path):
    (tmp_path / "c.ini").write_text("train.learning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(tmp_path / "c.ini")
    with pytest.raises(ConfigError):
        load_config(overrides={"model.chanels": "4"})


def test_bad_values():
    with pytest.raises(ConfigError):
        load_config(overrides={"model.blocks": "three"})
    with pytest.raises(ConfigError):
        load_config(overrides={"augment.enabled": "maybe"})
    with pytest.raises(ConfigError):
        load_config(overrides={"train.lr_min": "0.1"})
    with pytest.raises(ConfigError):
        load_config(overrides={"model.blocks": "2", "model.kernel_schedule": "3"})
    with pytest.raises(ConfigError):
        parse_text("just words")


def test_manifest_paths_resolved_against_config(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.ini").write_text("data.train_manifest = ../train.tsv\n")
    cfg = load_config(tmp_path / "sub" / "c.ini")
    assert cfg["data.train_manifest"] == str((tmp_path / "train.tsv").resolve())


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.config")

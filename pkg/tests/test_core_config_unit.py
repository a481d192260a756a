from pathlib import Path

import pytest

from transamba.core.config import (
    ExperimentConfig,
    LayerDesign,
    LocalizationSource,
    ModelConfig,
    OptimizerName,
    Variant,
    build_config,
    load_config,
    parse_pairs,
    read_model_config,
    write_model_config,
)
from transamba.core.errors import ConfigError, DataError, NumericalError

CONFIGS = Path(__file__).resolve().parents[1] / "meta" / "benchmarks" / "configs"


def test_defaults_without_a_file():
    cfg = load_config()
    assert cfg == ExperimentConfig()
    assert cfg.model.variant == Variant.V3
    assert cfg.model.layer_design == LayerDesign.CROSS_IN
    assert cfg.model.num_patches == 16


def test_file_with_comments_and_overrides(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# a comment\n\nvariant = V1\nlayers=2\nseed = 7\nplane_counts = 2, 4,8\n", encoding="utf-8")
    cfg = load_config(path, overrides=["layers=3", "threshold=0.25"])
    assert cfg.model.variant == Variant.V1
    assert cfg.model.layers == 3
    assert cfg.infer.threshold == 0.25
    assert cfg.bench.plane_counts == [2, 4, 8]
    assert cfg.seed == 7


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="unknown config key: colour"):
        build_config({"colour": "red"})


@pytest.mark.parametrize("line", ["no equals sign", " = 3"])
def test_malformed_lines_are_rejected(line):
    with pytest.raises(ConfigError):
        parse_pairs([line])


@pytest.mark.parametrize(
    "pairs",
    [
        {"layers": "0"},
        {"variant": "V9"},
        {"patch_size": "5"},
        {"model_dim": "10", "heads": "4"},
        {"radius_min": "9", "radius_max": "3"},
        {"plane_counts": "4,0"},
        {"variant": "V4", "localization_source": "c2p"},
        {"optimizer": "adam"},
        {"warmup_epochs": "-1"},
        {"checkpoint": "latest"},
    ],
)
def test_invalid_values_are_config_errors(pairs):
    with pytest.raises(ConfigError):
        build_config(pairs)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.conf")


def test_error_classes_carry_exit_codes():
    assert issubclass(ConfigError, ValueError) and ConfigError.exit_code == 2
    assert issubclass(DataError, ValueError) and DataError.exit_code == 3
    assert issubclass(NumericalError, FloatingPointError) and NumericalError.exit_code == 4


def test_localization_source_resolution():
    assert ModelConfig(variant=Variant.V3).localizes_with_attention
    assert not ModelConfig(variant=Variant.V4).localizes_with_attention
    assert not ModelConfig(variant=Variant.V3, localization_source=LocalizationSource.PATCH).localizes_with_attention


def test_model_config_file_round_trip(tmp_path):
    model = ModelConfig(
        variant=Variant.V5,
        layer_design=LayerDesign.PARALLEL,
        gwrp_decay=0.75,
        bissm_shared=True,
        planes=3,
        init_seed=11,
    )
    path = write_model_config(model, tmp_path / "model.conf")
    assert "layer_design=Parallel\n" in path.read_text(encoding="utf-8")
    assert read_model_config(path) == model


def test_model_config_file_rejects_foreign_keys(tmp_path):
    path = tmp_path / "model.conf"
    path.write_text("layers=2\nepochs=3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="epochs"):
        read_model_config(path)


@pytest.mark.parametrize("name", ["desk.conf", "smoke.conf", "scaling.conf"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.model.image_height % cfg.model.patch_size == 0
    if name == "scaling.conf":
        assert cfg.model.num_patches == 64
        assert cfg.bench.plane_counts == [2, 4, 8, 16, 32]
    if name == "desk.conf":
        assert cfg.train.optimizer == OptimizerName.ADAMW
        assert cfg.model.num_patches == 16 and cfg.model.planes == 16
        assert (cfg.data.volumes, cfg.data.test_volumes, cfg.data.contrast, cfg.data.noise_sd) == (100, 20, 0.4, 0.1)
        assert cfg.infer.checkpoint == "best"

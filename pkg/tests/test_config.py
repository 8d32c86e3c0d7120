import pytest

from issc.config import (
    ConfigError,
    ExperimentConfig,
    ExperimentRecord,
    ModelConfig,
    compression_ratio,
    derive_stage_shapes,
    k_for_ratio,
    load_config,
)


def table_config(height=224, width=224):
    return ModelConfig(
        height=height, width=width, embed_dim=96, depths=(2, 2, 18, 2),
        num_heads=(3, 6, 12, 24), window_size=7, mlp_ratio=4.0, k=256, n_cls=19,
    )


def test_stage_shapes_full_scale():
    shapes = derive_stage_shapes(table_config())
    assert shapes == [(56, 56, 96), (28, 28, 192), (14, 14, 384), (7, 7, 768)]


def test_stage_shapes_minimal():
    cfg = ModelConfig(
        height=32, width=32, embed_dim=8, depths=(2, 2, 2, 2),
        num_heads=(1, 1, 2, 2), window_size=2, mlp_ratio=2.0, k=8, n_cls=5,
    )
    assert derive_stage_shapes(cfg) == [(8, 8, 8), (4, 4, 16), (2, 2, 32), (1, 1, 64)]


def test_indivisible_height_rejected():
    with pytest.raises(ConfigError, match="height"):
        ModelConfig(height=33, width=64, embed_dim=8, depths=(2, 2, 2, 2),
                    num_heads=(1, 1, 2, 2), window_size=2, mlp_ratio=2.0, k=8, n_cls=5)


@pytest.mark.parametrize("k,expected", [(768, 1.0), (256, 3.0), (96, 8.0)])
def test_compression_ratio(k, expected):
    cfg = ModelConfig(height=64, width=64, embed_dim=8, depths=(2, 2, 2, 2),
                      num_heads=(1, 1, 2, 2), window_size=2, mlp_ratio=2.0,
                      k=k, n_cls=5)
    assert compression_ratio(cfg) == expected


def test_compression_ratio_counts_elements():
    # ratio times transmitted element count must equal the input element count
    cfg = ModelConfig(height=64, width=64, embed_dim=8, depths=(2, 2, 2, 2),
                      num_heads=(1, 1, 2, 2), window_size=2, mlp_ratio=2.0,
                      k=96, n_cls=5)
    transmitted = (64 // 16) * (64 // 16) * cfg.k
    assert compression_ratio(cfg) * transmitted == 64 * 64 * 3


def test_k_for_ratio_roundtrip():
    assert k_for_ratio(3.0) == 256
    assert k_for_ratio(12.0) == 64
    with pytest.raises(ConfigError):
        k_for_ratio(7.0)


def test_odd_depth_rejected():
    with pytest.raises(ConfigError, match="even"):
        ModelConfig(height=64, width=64, embed_dim=8, depths=(2, 3, 2, 2),
                    num_heads=(1, 1, 2, 2), window_size=2, mlp_ratio=2.0, k=8, n_cls=5)


def test_head_divisibility_rejected():
    with pytest.raises(ConfigError, match="num_heads"):
        ModelConfig(height=64, width=64, embed_dim=6, depths=(2, 2, 2, 2),
                    num_heads=(4, 4, 4, 4), window_size=2, mlp_ratio=2.0, k=8, n_cls=5)


def test_window_clamps_to_small_stages():
    # 64x64 input: stage 4 is 2x2, so a size-4 window shrinks to the extent
    cfg = ModelConfig(height=64, width=64, embed_dim=32, depths=(2, 2, 2, 2),
                      num_heads=(2, 2, 4, 4), window_size=4, mlp_ratio=4.0,
                      k=256, n_cls=5)
    assert [cfg.stage_window(s) for s in range(4)] == [4, 4, 4, 2]
    assert cfg.stage_shift(0) == 2
    assert cfg.stage_shift(2) == 0  # window covers the whole stage-3 extent


def test_experiment_record_roundtrip():
    record = ExperimentRecord("issc", "none", "none", 10.0, 3.0, 42, 0.5)
    assert ExperimentRecord.from_csv_row(record.to_csv_row()) == record


def test_experiment_record_validation():
    with pytest.raises(ConfigError):
        ExperimentRecord("issc", "none", "none", 10.0, 3.0, 42, 1.5)
    with pytest.raises(ConfigError):
        ExperimentRecord("quantum", "none", "none", 10.0, 3.0, 42, 0.5)


def test_load_config_table_names(tmp_path):
    cfg_path = tmp_path / "toy.yaml"
    cfg_path.write_text(
        "model:\n"
        "  height: 64\n"
        "  width: 64\n"
        "  embedding_dimension: 32\n"
        "  depths: [2, 2, 2, 2]\n"
        "  head_number: [2, 2, 4, 4]\n"
        "  window_size: 4\n"
        "  patch_size: 4\n"
        "  mlp_ratio: 4.0\n"
        "  k: 256\n"
        "  n_cls: 5\n"
        "train:\n"
        "  steps: 10\n"
        "  lr: 0.001\n"
        "data:\n"
        "  kind: synthetic\n"
        "  n_train: 8\n"
        "  n_test: 4\n"
    )
    cfg = load_config(cfg_path)
    assert cfg.model.embed_dim == 32
    assert cfg.model.num_heads == (2, 2, 4, 4)
    assert cfg.train.steps == 10
    assert cfg.data.n_train == 8


def test_load_config_unknown_field_named(tmp_path):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text("model:\n  flux_capacitance: 3\n")
    with pytest.raises(ConfigError, match="flux_capacitance"):
        load_config(cfg_path)


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.yaml")


def test_default_sections():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.model.embed_dim == 96
    assert cfg.train.snr_low_db == 1.0 and cfg.train.snr_high_db == 20.0
    assert cfg.train.ohem_threshold == 0.7

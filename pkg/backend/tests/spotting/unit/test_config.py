"""
Unit tests for run configuration loading, validation and seeded streams.
"""

from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from app.config.settings import AugmentPolicy, DataConfig, ModelConfig, RunConfig, load_run_config, parse_run_config
from app.core.errors import ConfigError
from app.core.providers.config_provider import EnvironmentConfigProvider
from app.core.seeding import child_seed, make_rng

TOY_RUN = Path(__file__).parents[2] / "config" / "toy_run.yaml"
SHIPPED = Path(__file__).parents[3] / "configs"


@pytest.fixture
def clean_env(monkeypatch):
    for key in ("SEED", "ITERATIONS", "OUTPUT_DIR", "PRECISION", "BATCH_SIZE", "LR"):
        monkeypatch.delenv(f"SPOTTER_{key}", raising=False)
    return monkeypatch


@pytest.mark.unit
def test_defaults():
    config = RunConfig()
    assert config.model.d_model == 256
    assert config.model.num_points == 25
    assert config.model.strides == [8, 16, 32, 64]
    assert config.loss.focal_alpha == 0.25
    assert config.augment.is_identity
    assert config.output_path == Path(config.output_dir)


@pytest.mark.unit
def test_model_dimension_checks():
    with pytest.raises(ValidationError):
        ModelConfig(d_model=18, n_heads=4)
    with pytest.raises(ValidationError):
        ModelConfig(d_model=6, n_heads=2)


@pytest.mark.unit
def test_data_range_checks():
    with pytest.raises(ValidationError):
        DataConfig(min_instances=3, max_instances=2)
    with pytest.raises(ValidationError):
        DataConfig(glyph_height=(6, 8))
    with pytest.raises(ValidationError):
        DataConfig(source="annotations")
    with pytest.raises(ValidationError):
        DataConfig(source="annotations", annotation_path="/no/such/file.json")


@pytest.mark.unit
def test_run_consistency_checks():
    with pytest.raises(ConfigError):
        parse_run_config({"model": {"num_points": 5}, "data": {"max_chars": 4}})
    with pytest.raises(ConfigError):
        parse_run_config({"model": {"num_proposals": 2}, "data": {"max_instances": 3}})
    with pytest.raises(ConfigError):
        parse_run_config({"data": {"image_size": 32}})
    with pytest.raises(ConfigError):
        parse_run_config({"init_checkpoint": "/no/such/checkpoint"})


@pytest.mark.unit
def test_extra_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_run_config({"learning_rate": 0.1})
    assert "learning_rate" in str(exc.value)
    with pytest.raises(ConfigError):
        parse_run_config({"model": {"depth": 3}})


@pytest.mark.unit
def test_augment_policy():
    assert AugmentPolicy().is_identity
    assert not AugmentPolicy(color_jitter=True).is_identity
    with pytest.raises(ValidationError):
        AugmentPolicy(resize_range=(1.2, 0.8))


@pytest.mark.unit
@pytest.mark.parametrize("name", ["toy_train.yaml", "toy_line.yaml"])
def test_shipped_overfit_configs(clean_env, name):
    config = load_run_config(SHIPPED / name)
    assert config.iterations <= 2000
    assert config.model.d_model == 64 and config.model.num_proposals == 20 and config.model.num_points == 13
    assert config.data.num_scenes == 32
    assert not (config.augment.rotate or config.augment.crop or config.augment.resize)
    assert all(step >= 0.75 * config.iterations for step in config.lr_decay_steps)
    assert config.line_mode == (name == "toy_line.yaml")
    if config.line_mode:
        assert config.loss.bd_weight == 0.0


@pytest.mark.unit
def test_load_yaml(clean_env):
    config = load_run_config(TOY_RUN)
    assert config.name == "cli_toy"
    assert config.model.stem_channels == (4, 4, 8)
    assert config.data.glyph_height == (10, 12)
    assert config.precision == "float64"


@pytest.mark.unit
def test_environment_overrides(clean_env, tmp_path):
    clean_env.setenv("SPOTTER_SEED", "7")
    clean_env.setenv("SPOTTER_LR", "2e-3")
    clean_env.setenv("SPOTTER_OUTPUT_DIR", str(tmp_path))
    config = load_run_config(TOY_RUN)
    assert config.seed == 7
    assert config.lr == pytest.approx(2e-3)
    assert config.output_dir == str(tmp_path)


@pytest.mark.unit
def test_explicit_overrides_beat_environment(clean_env):
    clean_env.setenv("SPOTTER_ITERATIONS", "50")
    assert load_run_config(TOY_RUN, {"iterations": 3}).iterations == 3


@pytest.mark.unit
def test_run_overrides_parse_types(clean_env):
    clean_env.setenv("SPOTTER_BATCH_SIZE", "4")
    clean_env.setenv("SPOTTER_PRECISION", "float32")
    overrides = EnvironmentConfigProvider().run_overrides()
    assert overrides == {"batch_size": 4, "precision": "float32"}


@pytest.mark.unit
def test_provider_prefix(clean_env):
    clean_env.setenv("DEMO_SEED", "11")
    clean_env.setenv("DEMO_OUTPUT_DIR", "1e3")
    clean_env.setenv("SPOTTER_SEED", "4")
    assert EnvironmentConfigProvider(prefix="DEMO_").run_overrides() == {"seed": 11, "output_dir": "1e3"}


@pytest.mark.unit
def test_load_errors(clean_env, tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_run_config(listing)
    broken = tmp_path / "broken.yaml"
    broken.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError):
        load_run_config(broken)


@pytest.mark.unit
def test_annotation_source(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text('{"images": []}')
    data = DataConfig(source="annotations", annotation_path=str(path), image_root=str(tmp_path))
    assert data.annotation_path == str(path)


@pytest.mark.unit
def test_named_streams_are_independent():
    a = make_rng(3, "batch-order").random(5)
    assert np.array_equal(a, make_rng(3, "batch-order").random(5))
    assert not np.array_equal(a, make_rng(3, "batch-seeds").random(5))
    assert not np.array_equal(a, make_rng(4, "batch-order").random(5))
    seed = child_seed(make_rng(0, "x"))
    assert 0 <= seed < 2**31 - 1

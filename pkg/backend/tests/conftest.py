"""
Shared fixtures for the spotting test suite.

Models here have a handful of channels and scenes sit on a 64 pixel canvas.
"""

import os
import sys

import numpy as np
import pytest

# Add backend to path
backend_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, backend_dir)

from app.config.settings import DataConfig, LossConfig, ModelConfig, RunConfig
from app.core.diffmath import precision
from app.services.glyphs import GlyphSet
from app.services.scene_generator import generate_scenes


@pytest.fixture(autouse=True)
def float64_precision():
    """Gradient checks and exact comparisons need double precision"""
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def glyphs():
    """Four-letter glyph set matching the toy model vocabulary"""
    return GlyphSet(4)


@pytest.fixture
def toy_model_config():
    return ModelConfig(
        d_model=16,
        n_heads=2,
        n_sample_points=2,
        n_enc_layers=1,
        n_dec_layers=2,
        num_proposals=4,
        num_points=5,
        n_levels=2,
        vocab_size=4,
        ffn_dim=16,
        stem_channels=(4, 4, 8),
    )


@pytest.fixture
def loss_config():
    return LossConfig()


@pytest.fixture
def tiny_data_config():
    return DataConfig(
        num_scenes=2,
        canvas_size=64,
        image_size=64,
        min_instances=1,
        max_instances=2,
        min_chars=2,
        max_chars=3,
        glyph_height=(10, 12),
        holdout_scenes=2,
    )


@pytest.fixture
def tiny_scenes(tiny_data_config, glyphs, toy_model_config):
    return generate_scenes(2, 0, tiny_data_config, glyphs, toy_model_config.num_points)


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def toy_run_config(toy_model_config, tiny_data_config, output_dir):
    return RunConfig(
        name="toy",
        seed=0,
        iterations=2,
        batch_size=2,
        lr=1e-3,
        precision="float64",
        finetune_iterations=1,
        output_dir=str(output_dir),
        model=toy_model_config,
        data=tiny_data_config,
    )

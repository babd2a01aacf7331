"""
Integration tests for the training loop: records, checkpoints, evaluation
cadence, determinism and divergence handling.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from app.config.settings import AugmentPolicy
from app.core.diffmath import DTensor, read_manifest
from app.core.errors import DataError, TrainingDivergedError
from app.services.glyphs import GlyphSet
from app.services.losses import COMPONENTS, LossBreakdown
from app.services.training import Trainer, build_source, to_model_frame


def _configure(config, **update):
    return config.model_copy(update=update)


@pytest.mark.integration
class TestTrainingRun:
    """Short runs of the toy model on two synthetic scenes"""

    def test_zero_iterations_still_checkpoints(self, toy_run_config, tiny_scenes):
        result = Trainer(_configure(toy_run_config, iterations=0), tiny_scenes).fit()
        assert result.history == []
        assert result.checkpoint.name == "checkpoint_final.json"
        assert result.checkpoint.exists()
        assert result.metrics_path.read_text() == ""
        assert read_manifest(result.checkpoint)["step"] == 0

    def test_run_manifest_records_scenes(self, toy_run_config, tiny_scenes):
        trainer = Trainer(_configure(toy_run_config, iterations=0), tiny_scenes)
        trainer.fit()
        manifest = json.loads((trainer.run_dir / "run.json").read_text())
        assert manifest["name"] == toy_run_config.name
        assert manifest["config"]["iterations"] == 0
        assert manifest["source"] == {"kind": "provided", "scenes": [s.name for s in tiny_scenes],
                                      "seeds": [s.seed for s in tiny_scenes]}

    def test_records_are_finite(self, toy_run_config, tiny_scenes):
        result = Trainer(toy_run_config, tiny_scenes).fit()
        assert [r["step"] for r in result.history] == [0, 1]
        for record in result.history:
            assert set(record) == {"step", *COMPONENTS, "total", "lr", "grad_norm"}
            assert all(np.isfinite(record[name]) for name in (*COMPONENTS, "total", "grad_norm"))
            assert record["l_bd"] > 0.0

        lines = result.metrics_path.read_text().splitlines()
        assert [json.loads(line) for line in lines] == result.history
        assert read_manifest(result.checkpoint)["step"] == 2

    def test_same_config_same_trace(self, toy_run_config, tiny_scenes):
        config = _configure(toy_run_config, augment=AugmentPolicy(rotate=True, crop=True, color_jitter=True))
        first = Trainer(config, tiny_scenes).fit().history
        second = Trainer(config, tiny_scenes).fit().history
        assert first == second

    def test_checkpoint_cadence(self, toy_run_config, tiny_scenes):
        trainer = Trainer(_configure(toy_run_config, checkpoint_every=1), tiny_scenes)
        trainer.fit()
        names = sorted(p.name for p in trainer.run_dir.glob("checkpoint_*.json"))
        assert names == ["checkpoint_final.json", "checkpoint_step1.json", "checkpoint_step2.json"]

    def test_periodic_evaluation(self, toy_run_config, tiny_scenes):
        trainer = Trainer(_configure(toy_run_config, eval_every=2), tiny_scenes)
        result = trainer.fit()
        assert len(result.evaluations) == 1
        entries = [json.loads(line) for line in (trainer.run_dir / "eval.jsonl").read_text().splitlines()]
        assert entries == result.evaluations
        assert entries[0]["step"] == 2
        assert {"detection", "none", "full"} <= set(entries[0])

    def test_learning_rate_decay(self, toy_run_config, tiny_scenes):
        history = Trainer(_configure(toy_run_config, lr_decay_steps=[1]), tiny_scenes).fit().history
        assert history[0]["lr"] == pytest.approx(1e-3)
        assert history[1]["lr"] == pytest.approx(1e-4)

    def test_init_checkpoint(self, toy_run_config, tiny_scenes):
        trained = Trainer(toy_run_config, tiny_scenes)
        checkpoint = trained.fit().checkpoint
        resumed = Trainer(_configure(toy_run_config, name="resumed", seed=9, init_checkpoint=str(checkpoint)),
                          tiny_scenes)
        for name, values in trained.model.state_dict().items():
            assert np.array_equal(resumed.model.state_dict()[name], values)

    def test_line_mode(self, toy_run_config, tiny_scenes):
        trainer = Trainer(_configure(toy_run_config, line_mode=True), tiny_scenes)
        assert all(not gt.has_boundary for scene in trainer.train_scenes for gt in scene.instances)
        assert all(gt.has_boundary for scene in trainer.eval_scenes for gt in scene.instances)
        history = trainer.fit().history
        assert all(record["l_bd"] == 0.0 for record in history)
        assert set(trainer.evaluate()) == {"line"}


@pytest.mark.integration
class TestDivergence:
    def test_non_finite_loss_aborts_with_dump(self, toy_run_config, tiny_scenes, mocker):
        components = {name: float("nan") for name in COMPONENTS}
        mocker.patch("app.services.training.batch_loss",
                     return_value=LossBreakdown(total=DTensor(np.nan), components=components))
        trainer = Trainer(toy_run_config, tiny_scenes)
        with pytest.raises(TrainingDivergedError) as exc:
            trainer.fit()
        assert exc.value.step == 0
        dump = json.loads(Path(exc.value.dump_path).read_text())
        assert dump["step"] == 0
        assert len(dump["batch_indices"]) == 2
        assert set(dump["scene_names"]) <= {s.name for s in tiny_scenes}
        assert "batch_seed" in dump


@pytest.mark.integration
class TestSources:
    def test_holdout_scenes(self, toy_run_config):
        glyphs = GlyphSet(toy_run_config.model.vocab_size)
        holdout = build_source(toy_run_config, glyphs, holdout=True).load()
        training = build_source(toy_run_config, glyphs).load()
        assert len(holdout) == toy_run_config.data.holdout_scenes
        assert all(scene.name.startswith("holdout_") for scene in holdout)
        assert {s.seed for s in holdout}.isdisjoint({s.seed for s in training})

    def test_synthetic_provenance(self, toy_run_config):
        trainer = Trainer(_configure(toy_run_config, iterations=0))
        trainer.fit()
        source = json.loads((trainer.run_dir / "run.json").read_text())["source"]
        data = toy_run_config.data
        assert source["kind"] == "synthetic"
        assert source["count"] == data.num_scenes
        assert source["scene_seeds"] == [s.seed for s in trainer.train_scenes]

    def test_annotation_provenance(self, toy_run_config, tiny_scenes, tmp_path):
        from app.services.dataset import export_annotations

        path = export_annotations(tiny_scenes, tmp_path / "data" / "ann.json")
        data = toy_run_config.data.model_copy(update={"source": "annotations", "annotation_path": str(path)})
        trainer = Trainer(_configure(toy_run_config, data=data))
        assert trainer.provenance == {"kind": "annotations", "path": str(path), "image_root": str(path.parent)}
        assert [s.name for s in trainer.train_scenes] == [s.name for s in tiny_scenes]

    def test_annotation_source_has_no_holdout(self, toy_run_config, tmp_path):
        path = tmp_path / "ann.json"
        path.write_text('{"images": []}')
        data = toy_run_config.data.model_copy(update={"source": "annotations", "annotation_path": str(path)})
        with pytest.raises(DataError):
            build_source(_configure(toy_run_config, data=data), GlyphSet(4), holdout=True)

    def test_empty_scene_list(self, toy_run_config):
        with pytest.raises(DataError):
            Trainer(toy_run_config, [])

    def test_model_frame(self, tiny_scenes):
        gts = tiny_scenes[0].instances
        assert to_model_frame(gts, 64, 64, 16) == gts
        moved = to_model_frame(gts, 60, 50, 16)
        assert np.allclose(moved[0].center, gts[0].center * np.array([50 / 64, 60 / 64]))

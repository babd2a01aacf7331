"""
Training Service
AdamW loop over padded batches with per-component loss logging, checkpoint
cadence and periodic evaluation.

Every random draw comes from a named stream derived from the run seed, so two
runs with the same config produce identical loss traces.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.config.runtime import CHECKPOINT_PREFIX, METRICS_FILENAME, RUN_MANIFEST_FILENAME
from app.config.settings import RunConfig
from app.core.diffmath import AdamW, Tape, clip_grad_norm, load_checkpoint, precision, save_checkpoint, step_decay_lr
from app.core.errors import DataError, TrainingDivergedError
from app.core.interfaces import SceneSource
from app.core.seeding import child_seed, make_rng
from app.models.geometry import TextInstanceGT
from app.models.scene import Scene
from app.services.augmentation import augment
from app.services.dataset import make_batch, to_line_annotations
from app.services.glyphs import GlyphSet
from app.services.inference import Spotter, checkpoint_metadata, evaluate_scenes, padded_canvas
from app.services.losses import COMPONENTS, SetCriterion, batch_loss
from app.services.network import PointQuerySpotter

logger = logging.getLogger(__name__)

EVAL_FILENAME = "eval.jsonl"


def build_source(config: RunConfig, glyphs: GlyphSet, holdout: bool = False) -> SceneSource:
    """Scene source named by the data config"""
    from app.core.providers.annotation_source import AnnotationSceneSource
    from app.core.providers.synthetic_source import SyntheticSceneSource

    data = config.data
    if data.source == "annotations":
        if holdout:
            raise DataError("held-out scenes are only defined for the synthetic source")
        return AnnotationSceneSource(data.annotation_path, glyphs, config.model.num_points, data.image_root)
    if holdout:
        return SyntheticSceneSource(data, glyphs, config.model.num_points, count=data.holdout_scenes,
                                    seed=data.holdout_seed, prefix="holdout")
    return SyntheticSceneSource(data, glyphs, config.model.num_points)


def to_model_frame(gts: Sequence[TextInstanceGT], height: int, width: int, stride: int) -> List[TextInstanceGT]:
    """Renormalize ground truth from the batch canvas to the stride-padded model canvas"""
    padded_h, padded_w = padded_canvas(height, width, stride)
    if (padded_h, padded_w) == (height, width):
        return list(gts)
    ratio = np.array([width / padded_w, height / padded_h])
    return [gt.transformed(lambda p: p * ratio) for gt in gts]


@dataclass
class TrainResult:
    checkpoint: Path
    metrics_path: Path
    history: List[Dict[str, float]] = field(default_factory=list)
    evaluations: List[Dict[str, Any]] = field(default_factory=list)


class Trainer:
    """Owns the model, optimizer and data streams of one run"""

    def __init__(self, config: RunConfig, scenes: Optional[List[Scene]] = None):
        """
        Initialize trainer

        Args:
            config: Validated run configuration
            scenes: Training scenes; loaded from the configured source when omitted
        """
        self.config = config
        self.glyphs = GlyphSet(config.model.vocab_size)
        with precision(config.precision):
            self.model = PointQuerySpotter(config.model, seed=config.seed)
        if config.init_checkpoint:
            load_checkpoint(config.init_checkpoint, self.model)
            logger.info(f"Initialized from {config.init_checkpoint}")

        self.criterion = SetCriterion(config.loss, self.glyphs, line_mode=config.line_mode)
        self.optimizer = AdamW(
            [
                {"params": self.model.backbone_parameters(), "lr_scale": config.backbone_lr_scale},
                {"params": self.model.transformer_parameters(), "lr_scale": 1.0},
            ],
            lr=config.lr,
            weight_decay=config.weight_decay,
        )

        if scenes is None:
            source = build_source(config, self.glyphs)
            scenes = source.load()
            self.provenance = source.describe()
        else:
            self.provenance = {"kind": "provided", "scenes": [s.name for s in scenes],
                               "seeds": [s.seed for s in scenes]}
        self.eval_scenes = scenes
        if not self.eval_scenes:
            raise DataError("no training scenes")
        self.train_scenes = self.eval_scenes
        if config.line_mode:
            self.train_scenes = to_line_annotations(self.eval_scenes, config.line_shift, config.line_shrink,
                                                    make_rng(config.seed, "line-labels"))

        self.run_dir = config.output_path / config.name
        self.metrics_path = self.run_dir / METRICS_FILENAME
        self._order_rng = make_rng(config.seed, "batch-order")
        self._seed_rng = make_rng(config.seed, "batch-seeds")
        self._order: List[int] = []
        self.step = 0

    def next_indices(self) -> List[int]:
        """Batch indices drawn epoch by epoch from seeded permutations"""
        count = len(self.train_scenes)
        size = min(self.config.batch_size, count)
        while len(self._order) < size:
            self._order.extend(int(i) for i in self._order_rng.permutation(count))
        indices, self._order = self._order[:size], self._order[size:]
        return indices

    def _prepare(self, indices: Sequence[int], batch_seed: int):
        rng = np.random.default_rng(batch_seed)
        augmented = []
        for i in indices:
            scene = self.train_scenes[i]
            image, gts = augment(scene.image, scene.instances, rng, self.config.augment, self.config.line_mode)
            augmented.append(Scene(name=scene.name, image=image, instances=gts, seed=scene.seed))
        return make_batch(augmented, range(len(augmented)), self.config.data.image_size)

    def _dump(self, step: int, indices: Sequence[int], batch_seed: int, components: Dict[str, float]) -> Path:
        path = self.run_dir / f"diverged_step{step}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({
            "step": step,
            "batch_indices": list(indices),
            "batch_seed": batch_seed,
            "scene_names": [self.train_scenes[i].name for i in indices],
            "components": components,
        }, indent=2, default=float))
        return path

    def train_step(self) -> Dict[str, float]:
        """One optimizer update; returns the logged record"""
        step = self.step
        indices = self.next_indices()
        batch_seed = child_seed(self._seed_rng)
        batch = self._prepare(indices, batch_seed)
        stride = self.config.model.coarsest_stride

        self.optimizer.zero_grad()
        with precision(self.config.precision), Tape() as tape:
            outputs, targets = [], []
            for slot in range(len(batch)):
                image = batch.images[slot]
                outputs.append(self.model(image, batch.masks[slot]))
                targets.append(to_model_frame(batch.instances[slot], image.shape[0], image.shape[1], stride))
            loss = batch_loss(self.criterion, targets, outputs)
            total = float(loss.total.item())
            if not math.isfinite(total) or not all(math.isfinite(v) for v in loss.components.values()):
                dump = self._dump(step, indices, batch_seed, {**loss.components, "total": total})
                raise TrainingDivergedError(step, str(dump))
            tape.backward(loss.total)

        grad_norm = clip_grad_norm(self.optimizer.parameters, self.config.clip_grad_norm)
        lr = step_decay_lr(self.config.lr, step, self.config.lr_decay_steps, self.config.lr_decay_factor)
        self.optimizer.set_lr(lr)
        self.optimizer.step()
        self.step += 1

        record = {"step": step, **{name: loss.components[name] for name in COMPONENTS}, "total": total,
                  "lr": lr, "grad_norm": grad_norm}
        logger.debug(f"step {step}: total={total:.5f}")
        return record

    def spotter(self) -> Spotter:
        return Spotter(self.model, self.glyphs, self.config.data.image_size, line_mode=self.config.line_mode,
                       threshold=self.config.score_threshold, dtype=self.config.precision)

    def evaluate(self, scenes: Optional[Sequence[Scene]] = None) -> Dict[str, Any]:
        """Detection and end-to-end (or line-protocol) metrics on scenes with boundary ground truth"""
        scenes = self.eval_scenes if scenes is None else scenes
        protocol = "line" if self.config.line_mode else "e2e"
        return evaluate_scenes(self.spotter(), scenes, protocol)

    def save(self, tag: str) -> Path:
        return save_checkpoint(self.run_dir / f"{CHECKPOINT_PREFIX}_{tag}", self.model, self.step,
                               checkpoint_metadata(self.config))

    def _write_manifest(self) -> Path:
        path = self.run_dir / RUN_MANIFEST_FILENAME
        path.write_text(json.dumps({"name": self.config.name, "config": self.config.model_dump(mode="json"),
                                    "source": self.provenance}, indent=2))
        return path

    def fit(self) -> TrainResult:
        """Run the configured number of iterations"""
        config = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._write_manifest()
        history, evaluations = [], []
        logger.info(f"Training '{config.name}' for {config.iterations} iterations on "
                    f"{len(self.train_scenes)} scenes ({self.model.num_parameters()} parameters)")
        with open(self.metrics_path, "w") as metrics:
            for _ in range(config.iterations):
                record = self.train_step()
                history.append(record)
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
                if config.checkpoint_every and self.step % config.checkpoint_every == 0:
                    self.save(f"step{self.step}")
                if config.eval_every and self.step % config.eval_every == 0:
                    evaluations.append(self._log_eval())
        checkpoint = self.save("final")
        logger.info(f"Training '{config.name}' finished at step {self.step}")
        return TrainResult(checkpoint=checkpoint, metrics_path=self.metrics_path, history=history,
                           evaluations=evaluations)

    def _log_eval(self) -> Dict[str, Any]:
        entry = {"step": self.step, **self.evaluate()}
        with open(self.run_dir / EVAL_FILENAME, "a") as fh:
            fh.write(json.dumps(entry) + "\n")
        logger.info(f"eval at step {self.step}: {json.dumps(entry)}")
        return entry


def cmd_train(config: RunConfig, scenes: Optional[List[Scene]] = None) -> TrainResult:
    return Trainer(config, scenes).fit()

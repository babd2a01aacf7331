"""
Inference Service
Turns final-layer predictions into spotted instances and drives the infer and
eval commands.

An instance is kept when the mean of its N point probabilities reaches the
threshold. Transcripts come from greedy CTC decoding. There is no
non-maximum suppression.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from app.config.runtime import DEFAULT_OUTPUT_DIR, DEFAULT_SCORE_THRESHOLD, RESULTS_FILENAME
from app.config.settings import ModelConfig, RunConfig
from app.core.diffmath import load_checkpoint, no_record, precision, read_manifest
from app.core.errors import CheckpointError, ConfigError, DataError
from app.models.geometry import TextInstanceGT
from app.models.predictions import PredictionSet
from app.models.results import SpotInstance, SpotResult, SpotResults
from app.models.scene import Scene
from app.services.ctc import ctc_greedy_decode
from app.services.dataset import fit_to_canvas, load_annotations
from app.services.evaluation import Prediction, eval_detection, eval_e2e, eval_line_protocol
from app.services.geometry import polygon_from_boundary, polygon_is_valid
from app.services.glyphs import GlyphSet
from app.services.network import PointQuerySpotter

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
PROTOCOLS = ("detection", "e2e", "line")


def checkpoint_metadata(config: RunConfig) -> Dict[str, Any]:
    """What inference needs to rebuild a model from its checkpoint"""
    return {
        "run_name": config.name,
        "seed": config.seed,
        "model": config.model.model_dump(mode="json"),
        "image_size": config.data.image_size,
        "line_mode": config.line_mode,
        "score_threshold": config.score_threshold,
        "precision": config.precision,
    }


def padded_canvas(height: int, width: int, multiple: int) -> Tuple[int, int]:
    return -(-height // multiple) * multiple, -(-width // multiple) * multiple


class Spotter:
    """A trained model plus the decoding rules for its outputs"""

    def __init__(self, model: PointQuerySpotter, glyphs: GlyphSet, image_size: int, line_mode: bool = False,
                 threshold: float = DEFAULT_SCORE_THRESHOLD, dtype: str = "float64"):
        self.model = model
        self.glyphs = glyphs
        self.image_size = image_size
        self.line_mode = line_mode
        self.threshold = threshold
        self.dtype = dtype

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], threshold: Optional[float] = None) -> "Spotter":
        manifest = read_manifest(path)
        metadata = manifest.get("metadata", {})
        if "model" not in metadata:
            raise CheckpointError(f"checkpoint {path} carries no model config")
        model_config = ModelConfig.model_validate(metadata["model"])
        dtype = metadata.get("precision", manifest.get("precision", "float64"))
        with precision(dtype):
            model = PointQuerySpotter(model_config, seed=metadata.get("seed", 0))
            load_checkpoint(path, model)
        return cls(
            model=model,
            glyphs=GlyphSet(model_config.vocab_size),
            image_size=metadata.get("image_size", 96),
            line_mode=metadata.get("line_mode", False),
            threshold=metadata.get("score_threshold", DEFAULT_SCORE_THRESHOLD) if threshold is None else threshold,
            dtype=dtype,
        )

    def predict(self, image: np.ndarray) -> Tuple[PredictionSet, float, Tuple[int, int]]:
        """Final-layer predictions for an image; returns (predictions, resize factor, padded canvas)"""
        if image.ndim != 3 or image.shape[2] != 3:
            raise DataError(f"expected an RGB image, got shape {image.shape}")
        resized, factor = fit_to_canvas(image, self.image_size)
        canvas = padded_canvas(resized.shape[0], resized.shape[1], self.model.config.coarsest_stride)
        with precision(self.dtype), no_record():
            output = self.model(resized)
        return output.final, factor, canvas

    def decode(self, prediction: PredictionSet, to_pixels: np.ndarray,
               threshold: Optional[float] = None) -> List[Prediction]:
        """Kept instances, highest confidence first, with points scaled by ``to_pixels``"""
        threshold = self.threshold if threshold is None else threshold
        scores = prediction.instance_scores()
        order = [k for k in np.argsort(-scores, kind="stable") if scores[k] >= threshold]
        char_logits = prediction.char_logits.values.astype(np.float64)
        spotted = []
        for k in order:
            center = prediction.center_points.values[k].astype(np.float64) * to_pixels
            polygon = None
            if not self.line_mode:
                polygon = polygon_from_boundary(prediction.top_points.values[k].astype(np.float64) * to_pixels,
                                                prediction.bot_points.values[k].astype(np.float64) * to_pixels)
            transcript = self.glyphs.decode(ctc_greedy_decode(char_logits[k]))
            spotted.append(Prediction(polygon=polygon, center=center, transcript=transcript,
                                      confidence=float(np.clip(scores[k], 0.0, 1.0))))
        return spotted

    def spot(self, image: np.ndarray, threshold: Optional[float] = None) -> List[Prediction]:
        """Instances in source-image pixels"""
        prediction, factor, (canvas_h, canvas_w) = self.predict(image)
        to_pixels = np.array([canvas_w, canvas_h], dtype=np.float64) / factor
        return self.decode(prediction, to_pixels, threshold)

    def spot_result(self, image: np.ndarray, name: str, threshold: Optional[float] = None) -> SpotResult:
        instances = []
        for p in self.spot(image, threshold):
            instances.append(SpotInstance(
                transcript=p.transcript,
                confidence=p.confidence,
                center=[tuple(pt) for pt in p.center.tolist()],
                polygon=None if p.polygon is None else [tuple(pt) for pt in p.polygon.tolist()],
                polygon_valid=True if p.polygon is None else polygon_is_valid(p.polygon),
            ))
        return SpotResult(image=name, width=int(image.shape[1]), height=int(image.shape[0]), instances=instances)


def gts_in_pixels(scene: Scene) -> List[TextInstanceGT]:
    scale = np.array([scene.width, scene.height], dtype=np.float64)
    return [gt.transformed(lambda p: p * scale) for gt in scene.instances]


def spot_scenes(spotter: Spotter, scenes: Sequence[Scene], threshold: Optional[float] = None
                ) -> Tuple[List[List[Prediction]], List[List[TextInstanceGT]]]:
    """Predictions and ground truth per scene, both in source pixels"""
    preds = [spotter.spot(scene.image, threshold) for scene in scenes]
    return preds, [gts_in_pixels(scene) for scene in scenes]


def evaluate_scenes(spotter: Spotter, scenes: Sequence[Scene], protocol: str,
                    lexicon: Optional[Sequence[str]] = None, threshold: Optional[float] = None) -> Dict[str, Any]:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol '{protocol}', expected one of {PROTOCOLS}")
    preds, gts = spot_scenes(spotter, scenes, threshold)
    if protocol == "detection":
        return {"detection": eval_detection(preds, gts).to_dict()}
    if protocol == "e2e":
        metrics = eval_e2e(preds, gts, lexicon)
        return {"detection": eval_detection(preds, gts).to_dict(), **metrics.to_dict()}
    return {"line": eval_line_protocol(preds, gts).to_dict()}


def list_images(path: Union[str, Path]) -> List[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DataError(f"image path not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images found in {path}")
    return files


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("RGB"))


def cmd_infer(checkpoint: Union[str, Path], images: Union[str, Path], svg_out: Optional[Union[str, Path]] = None,
              threshold: Optional[float] = None, out: Optional[Union[str, Path]] = None) -> SpotResults:
    """Spot every image and write the results JSON (and SVG overlays when asked)"""
    from app.services.overlay import write_overlay

    spotter = Spotter.from_checkpoint(checkpoint, threshold)
    results = []
    for path in list_images(images):
        image = read_image(path)
        result = spotter.spot_result(image, path.name)
        results.append(result)
        logger.info(f"{path.name}: {len(result.instances)} instances")
        if svg_out:
            write_overlay(image, result, Path(svg_out) / f"{path.stem}.svg", spotter.line_mode)

    spot_results = SpotResults(checkpoint=str(checkpoint), threshold=spotter.threshold,
                               line_mode=spotter.line_mode, results=results)
    out_path = Path(out) if out else Path(DEFAULT_OUTPUT_DIR) / RESULTS_FILENAME
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(spot_results.model_dump_json(indent=2))
    logger.info(f"Results written to {out_path}")
    return spot_results


def read_lexicon(path: Union[str, Path]) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"lexicon file not found: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def cmd_eval(checkpoint: Union[str, Path], data: Union[str, Path], protocol: str = "detection",
             lexicon: Optional[Union[str, Path]] = None, threshold: Optional[float] = None,
             out: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Evaluate a checkpoint on an annotation file"""
    spotter = Spotter.from_checkpoint(checkpoint, threshold)
    scenes = load_annotations(data, spotter.glyphs, spotter.model.config.num_points)
    words = read_lexicon(lexicon) if lexicon else None
    metrics = evaluate_scenes(spotter, scenes, protocol, words)
    logger.info(f"{protocol} metrics: {json.dumps(metrics)}")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(metrics, indent=2))
    return metrics

"""
Unit tests for annotation IO, line conversion and batch assembly.
"""

import json

import numpy as np
import pytest
from PIL import Image

from app.core.errors import AnnotationError, DataError
from app.models.geometry import TextInstanceGT
from app.models.scene import Scene
from app.services.dataset import (
    export_annotations,
    fit_to_canvas,
    load_annotations,
    make_batch,
    seed_manifest,
    to_line_annotations,
)


def _write_image(path, height=20, width=30):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((height, width, 3), 127, dtype=np.uint8)).save(path)


def _write_annotations(tmp_path, instances, width=30, height=20):
    _write_image(tmp_path / "img.png")
    path = tmp_path / "ann.json"
    path.write_text(json.dumps({"images": [{"file": "img.png", "width": width, "height": height,
                                            "instances": instances}]}))
    return path


@pytest.mark.unit
def test_export_load_round_trip(tmp_path, glyphs, tiny_scenes):
    path = export_annotations(tiny_scenes, tmp_path / "data" / "ann.json")
    loaded = load_annotations(path, glyphs, 5)
    assert [s.name for s in loaded] == [s.name for s in tiny_scenes]
    for original, scene in zip(tiny_scenes, loaded):
        assert np.array_equal(scene.image, original.image)
        assert scene.transcripts == original.transcripts
        for a, b in zip(original.instances, scene.instances):
            assert np.allclose(a.center, b.center, atol=1e-9)
            assert np.allclose(a.top, b.top, atol=1e-9)
            assert np.allclose(a.bot, b.bot, atol=1e-9)

    records = json.loads(path.read_text())["images"]
    assert all(inst["kind"] == "bezier_pair" for image in records for inst in image["instances"])
    seeds = json.loads(seed_manifest(path).read_text())["scenes"]
    assert [entry["seed"] for entry in seeds] == [s.seed for s in tiny_scenes]


@pytest.mark.unit
def test_line_only_annotations(tmp_path, glyphs):
    path = _write_annotations(tmp_path, [{"kind": "line", "points": [[3, 10], [27, 10]], "transcript": "ACE"}])
    (scene,) = load_annotations(path, glyphs, 5)
    gt = scene.instances[0]
    assert not gt.has_boundary
    assert np.allclose(gt.center[:, 1], 0.5)
    assert gt.center[0, 0] == pytest.approx(0.1)
    assert gt.center[-1, 0] == pytest.approx(0.9)


@pytest.mark.unit
def test_polygon_annotation(tmp_path, glyphs):
    polygon = [[3, 6], [15, 6], [27, 6], [27, 14], [15, 14], [3, 14]]
    path = _write_annotations(tmp_path, [{"kind": "polygon", "points": polygon, "transcript": "AC"}])
    gt = load_annotations(path, glyphs, 5)[0].instances[0]
    assert gt.has_boundary
    assert np.allclose(gt.center[:, 1], 0.5, atol=1e-6)
    assert gt.polygon.shape == (6, 2)


@pytest.mark.unit
def test_unknown_character(tmp_path, glyphs):
    path = _write_annotations(tmp_path, [{"kind": "line", "points": [[3, 10], [27, 10]], "transcript": "AZ"}])
    with pytest.raises(AnnotationError) as exc:
        load_annotations(path, glyphs, 5)
    assert exc.value.record == 0
    assert exc.value.field == "transcript"


@pytest.mark.unit
def test_missing_field(tmp_path, glyphs):
    path = _write_annotations(tmp_path, [{"kind": "line", "points": [[3, 10], [27, 10]]}])
    with pytest.raises(AnnotationError) as exc:
        load_annotations(path, glyphs, 5)
    assert exc.value.record == 0
    assert "transcript" in exc.value.field


@pytest.mark.unit
def test_odd_polygon(tmp_path, glyphs):
    polygon = [[3, 6], [15, 6], [27, 6], [27, 14], [3, 14]]
    path = _write_annotations(tmp_path, [{"kind": "polygon", "points": polygon, "transcript": "A"}])
    with pytest.raises(AnnotationError) as exc:
        load_annotations(path, glyphs, 5)
    assert exc.value.field == "instances[0].points"


@pytest.mark.unit
def test_declared_size_mismatch(tmp_path, glyphs):
    path = _write_annotations(tmp_path, [], width=31)
    with pytest.raises(AnnotationError) as exc:
        load_annotations(path, glyphs, 5)
    assert exc.value.field == "width"


@pytest.mark.unit
def test_missing_image(tmp_path, glyphs):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps({"images": [{"file": "absent.png", "width": 4, "height": 4}]}))
    with pytest.raises(AnnotationError) as exc:
        load_annotations(path, glyphs, 5)
    assert exc.value.field == "file"
    with pytest.raises(AnnotationError):
        load_annotations(tmp_path / "nothing.json", glyphs, 5)


def _scene(name, height, width, center=((0.2, 0.5), (0.8, 0.5))):
    gt = TextInstanceGT(center=center, transcript="A")
    return Scene(name=name, image=np.full((height, width, 3), 90, dtype=np.uint8), instances=[gt])


@pytest.mark.unit
def test_batch_pads_and_renormalizes():
    dataset = [_scene("wide", 20, 30), _scene("tall", 40, 10)]
    batch = make_batch(dataset, [0, 1])
    assert batch.images.shape == (2, 40, 30, 3)
    assert batch.masks[0, :20, :30].all() and not batch.masks[0, 20:].any()
    assert batch.masks[1, :, :10].all() and not batch.masks[1, :, 10:].any()
    assert np.allclose(batch.instances[0][0].center, [[0.2, 0.25], [0.8, 0.25]])
    assert np.allclose(batch.instances[1][0].center, [[0.2 / 3, 0.5], [0.8 / 3, 0.5]])
    assert batch.names == ["wide", "tall"]
    assert len(batch) == 2


@pytest.mark.unit
def test_batch_with_target_size():
    batch = make_batch([_scene("tall", 32, 16)], [0], target_size=64)
    assert batch.images.shape == (1, 64, 64, 3)
    assert batch.masks[0, :, :32].all() and not batch.masks[0, :, 32:].any()
    assert np.allclose(batch.instances[0][0].center, [[0.1, 0.5], [0.4, 0.5]])


@pytest.mark.unit
def test_batch_errors():
    dataset = [_scene("one", 8, 8)]
    with pytest.raises(DataError):
        make_batch(dataset, [])
    with pytest.raises(DataError):
        make_batch(dataset, [1])


@pytest.mark.unit
def test_fit_to_canvas():
    image = np.zeros((32, 16, 3), dtype=np.uint8)
    resized, factor = fit_to_canvas(image, 64)
    assert resized.shape == (64, 32, 3)
    assert factor == 2.0
    same, factor = fit_to_canvas(np.zeros((64, 40, 3), dtype=np.uint8), 64)
    assert same.shape == (64, 40, 3) and factor == 1.0


@pytest.mark.unit
def test_line_conversion_without_perturbation(tiny_scenes):
    lines = to_line_annotations(tiny_scenes)
    for original, converted in zip(tiny_scenes, lines):
        assert converted.name == original.name
        for a, b in zip(original.instances, converted.instances):
            assert not b.has_boundary
            assert b.transcript == a.transcript
            assert np.allclose(b.center, a.center, atol=1e-5)


@pytest.mark.unit
def test_line_conversion_with_full_shift(tiny_scenes):
    lines = to_line_annotations(tiny_scenes, shift=1.0, rng=np.random.default_rng(0))
    for original, converted in zip(tiny_scenes, lines):
        for a, b in zip(original.instances, converted.instances):
            on_top = np.allclose(b.center, a.top, atol=1e-5)
            on_bot = np.allclose(b.center, a.bot, atol=1e-5)
            assert on_top or on_bot

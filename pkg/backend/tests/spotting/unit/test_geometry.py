"""
Unit tests for Bezier geometry and ground-truth construction.
"""

import numpy as np
import pytest
from shapely.geometry import MultiPoint, Point

from app.core.errors import AnnotationError, DomainError
from app.models.geometry import CubicBezier, TextInstanceGT
from app.models.scene import InstanceSpec
from app.services.geometry import (
    bezier_eval,
    center_curve_from_sides,
    fit_bezier_to_polyline,
    gt_from_line,
    gt_from_polygon,
    perturb_line,
    polygon_area,
    polygon_from_boundary,
    polygon_is_valid,
    sample_uniform,
    split_polygon,
)
from app.services.scene_generator import ribbon_polygon

STRAIGHT = CubicBezier([[0.0, 0.0], [1 / 3, 0.0], [2 / 3, 0.0], [1.0, 0.0]])
ARCH = CubicBezier([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
RECTANGLE = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.2], [0.0, 0.2]]


def _cubic_sides_polygon(samples: int = 8) -> np.ndarray:
    top = CubicBezier([[0.1, 0.30], [0.35, 0.22], [0.65, 0.24], [0.9, 0.32]])
    bot = CubicBezier([[0.1, 0.45], [0.35, 0.38], [0.65, 0.40], [0.9, 0.47]])
    return np.vstack([sample_uniform(top, samples), sample_uniform(bot, samples)[::-1]])


@pytest.mark.unit
def test_bezier_endpoints_are_exact(rng):
    """t=0 and t=1 reproduce the first and last control points exactly"""
    for _ in range(20):
        curve = CubicBezier(rng.uniform(-1, 1, size=(4, 2)))
        assert np.array_equal(bezier_eval(curve, 0.0), curve.p0)
        assert np.array_equal(bezier_eval(curve, 1.0), curve.p3)


@pytest.mark.unit
def test_bezier_eval_known_values():
    assert np.allclose(bezier_eval(STRAIGHT, 0.25), [0.25, 0.0], atol=1e-12)
    assert np.allclose(bezier_eval(ARCH, 0.5), [0.5, 0.75], atol=1e-12)


@pytest.mark.unit
def test_bezier_eval_rejects_out_of_range_parameter():
    with pytest.raises(DomainError):
        bezier_eval(ARCH, 1.5)
    with pytest.raises(DomainError):
        bezier_eval(ARCH, -0.1)


@pytest.mark.unit
def test_cubic_bezier_needs_four_points():
    with pytest.raises(DomainError):
        CubicBezier([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])


@pytest.mark.unit
def test_sample_uniform():
    assert np.allclose(sample_uniform(STRAIGHT, 3), [[0, 0], [0.5, 0], [1, 0]], atol=1e-12)
    assert np.allclose(sample_uniform(STRAIGHT, 2), [[0, 0], [1, 0]], atol=1e-12)
    arch = sample_uniform(ARCH, 5)
    assert np.allclose(arch[2], [0.5, 0.75], atol=1e-12)
    with pytest.raises(DomainError):
        sample_uniform(ARCH, 1)


@pytest.mark.unit
def test_samples_stay_in_control_hull(rng):
    for _ in range(20):
        curve = CubicBezier(rng.uniform(0, 1, size=(4, 2)))
        hull = MultiPoint([tuple(p) for p in curve.control]).convex_hull.buffer(1e-9)
        for point in sample_uniform(curve, 25):
            assert hull.covers(Point(point))


@pytest.mark.unit
def test_center_curve_from_sides():
    top = CubicBezier([[0, 0], [0.3, 0.1], [0.6, 0.1], [1, 0]])
    bot = CubicBezier([[0, 0.2], [0.3, 0.3], [0.6, 0.3], [1, 0.2]])
    center = center_curve_from_sides(top, bot)
    assert np.allclose(center.control, [[0, 0.1], [0.3, 0.2], [0.6, 0.2], [1, 0.1]], atol=1e-12)


@pytest.mark.unit
def test_center_samples_are_side_midpoints(rng):
    """Sampling commutes with averaging the control points"""
    for _ in range(10):
        top = CubicBezier(rng.uniform(0, 1, size=(4, 2)))
        bot = CubicBezier(rng.uniform(0, 1, size=(4, 2)))
        center = sample_uniform(center_curve_from_sides(top, bot), 13)
        expected = (sample_uniform(top, 13) + sample_uniform(bot, 13)) / 2.0
        assert np.allclose(center, expected, atol=1e-12)


@pytest.mark.unit
def test_fit_collinear_points_gives_straight_curve():
    points = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
    curve = fit_bezier_to_polyline(points)
    assert np.allclose(curve.control, STRAIGHT.control, atol=1e-9)


@pytest.mark.unit
def test_fit_two_points_is_linear():
    curve = fit_bezier_to_polyline([[0.0, 0.0], [0.9, 0.3]])
    assert np.allclose(curve.control, [[0, 0], [0.3, 0.1], [0.6, 0.2], [0.9, 0.3]], atol=1e-12)


@pytest.mark.unit
def test_fit_recovers_cubic_samples():
    curve = CubicBezier([[0.1, 0.2], [0.35, 0.3], [0.65, 0.32], [0.9, 0.25]])
    samples = sample_uniform(curve, 10)
    fitted = fit_bezier_to_polyline(samples)
    assert np.max(np.abs(sample_uniform(fitted, 10) - samples)) < 1e-6


@pytest.mark.unit
def test_fit_needs_two_points():
    with pytest.raises(DomainError):
        fit_bezier_to_polyline([[0.0, 0.0]])


@pytest.mark.unit
def test_rectangle_polygon_centers():
    gt = gt_from_polygon(RECTANGLE, "AC", 5)
    expected = np.column_stack([np.arange(5) / 4.0, np.full(5, 0.1)])
    assert np.allclose(gt.center, expected, atol=1e-12)
    assert gt.has_boundary
    assert np.allclose(gt.top[:, 1], 0.0) and np.allclose(gt.bot[:, 1], 0.2)

    dense = gt_from_polygon(RECTANGLE, "AC", 25)
    assert np.allclose(dense.center[:, 1], 0.1, atol=1e-12)
    assert np.all(np.diff(dense.center[:, 0]) > 0)


@pytest.mark.unit
def test_curved_polygon_center_is_midpoint_of_sides():
    instance = InstanceSpec(guide=np.array([[10.0, 40.0], [30.0, 20.0], [50.0, 60.0], [70.0, 40.0]]),
                            text="AC", glyph_height=10.0, color=(0, 0, 0))
    polygon = ribbon_polygon(instance) / 100.0
    gt = gt_from_polygon(polygon, "AC", 13)
    assert np.allclose(gt.center, (gt.top + gt.bot) / 2.0, atol=1e-9)


@pytest.mark.unit
def test_reversing_reading_order_reverses_centers():
    polygon = _cubic_sides_polygon()
    k = len(polygon) // 2
    forward = gt_from_polygon(polygon, "AC", 9)
    backward = gt_from_polygon(np.roll(polygon, k, axis=0), "AC", 9)
    assert np.allclose(backward.center, forward.center[::-1], atol=1e-6)


@pytest.mark.unit
def test_split_polygon_rejects_bad_polygons():
    with pytest.raises(AnnotationError) as exc:
        split_polygon([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    assert exc.value.field == "points"
    with pytest.raises(AnnotationError):
        split_polygon([[0, 0], [1, 0], [0, 0.2], [1, 0.2]])


@pytest.mark.unit
def test_line_ground_truth():
    gt = gt_from_line([[0.0, 0.5], [1.0, 0.5]], "AC", 5)
    assert not gt.has_boundary
    assert gt.boundary_polygon() is None
    assert np.allclose(gt.center, np.column_stack([np.arange(5) / 4.0, np.full(5, 0.5)]), atol=1e-12)

    with pytest.raises(AnnotationError):
        gt_from_line([[0.0, 0.5]], "AC", 5)


@pytest.mark.unit
def test_line_from_polygon_centers_matches_polygon():
    polygon = _cubic_sides_polygon()
    from_polygon = gt_from_polygon(polygon, "AC", 13)
    from_line = gt_from_line(from_polygon.center, "AC", 13)
    assert np.max(np.abs(from_line.center - from_polygon.center)) < 1e-3


@pytest.mark.unit
def test_text_instance_validation():
    with pytest.raises(AnnotationError):
        TextInstanceGT(center=[[0, 0], [1, 0]], transcript="A", top=[[0, 0], [1, 0]])
    with pytest.raises(AnnotationError):
        TextInstanceGT(center=[[0, 0]], transcript="A")
    with pytest.raises(AnnotationError):
        TextInstanceGT(center=[[0, 0], [1, 0]], transcript="A", top=[[0, 0], [1, 0], [2, 0]],
                       bot=[[0, 1], [1, 1], [2, 1]])


@pytest.mark.unit
def test_perturb_line_identity(rng):
    gt = gt_from_polygon(RECTANGLE, "AC", 5)
    assert np.array_equal(perturb_line(gt, 0.0, 0.0, rng), gt.center)


@pytest.mark.unit
def test_full_shift_lands_on_a_side(rng):
    gt = gt_from_polygon(RECTANGLE, "AC", 5)
    for _ in range(10):
        shifted = perturb_line(gt, 1.0, 0.0, rng)
        assert np.allclose(shifted[:, 1], 0.0) or np.allclose(shifted[:, 1], 0.2)


@pytest.mark.unit
def test_full_shrink_collapses_to_middle(rng):
    gt = gt_from_polygon(RECTANGLE, "AC", 5)
    shrunk = perturb_line(gt, 0.0, 1.0, rng)
    assert np.allclose(shrunk, gt.center[2], atol=1e-12)


@pytest.mark.unit
@pytest.mark.parametrize("center", [
    [[0.0, 0.0], [0.1, 0.0], [0.8, 0.0], [1.0, 0.0]],
    [[0.0, 0.0], [0.05, 0.0], [0.1, 0.0], [0.7, 0.3], [1.0, 0.3]],
])
def test_full_shrink_lands_on_arc_midpoint(rng, center):
    from app.services.evaluation import polyline_midpoint

    line = TextInstanceGT(center=np.array(center), transcript="AC")
    shrunk = perturb_line(line, 0.0, 1.0, rng)
    assert np.allclose(shrunk, polyline_midpoint(line.center), atol=1e-12)


@pytest.mark.unit
def test_perturb_line_errors(rng):
    gt = gt_from_polygon(RECTANGLE, "AC", 5)
    with pytest.raises(DomainError):
        perturb_line(gt, 1.5, 0.0, rng)
    with pytest.raises(DomainError):
        perturb_line(gt, 0.0, -0.1, rng)
    line = gt_from_line(gt.center, "AC", 5)
    with pytest.raises(AnnotationError):
        perturb_line(line, 0.5, 0.0, rng)


@pytest.mark.unit
def test_polygon_from_boundary():
    top = [[0.0, 0.0], [1.0, 0.0]]
    bot = [[0.0, 0.2], [1.0, 0.2]]
    polygon = polygon_from_boundary(top, bot)
    assert len(polygon) == 4
    assert polygon_area(polygon) == pytest.approx(0.2)
    assert polygon_is_valid(polygon)
    assert polygon_area(polygon_from_boundary(top, top)) == pytest.approx(0.0)
    with pytest.raises(DomainError):
        polygon_from_boundary(top, [[0.0, 0.2], [0.5, 0.2], [1.0, 0.2]])


@pytest.mark.unit
def test_bowtie_is_invalid():
    assert not polygon_is_valid([[0, 0], [1, 1], [1, 0], [0, 1]])


@pytest.mark.unit
def test_boundary_area_matches_source_ribbon():
    instance = InstanceSpec(guide=np.array([[10.0, 40.0], [30.0, 34.0], [50.0, 46.0], [70.0, 40.0]]),
                            text="ACE", glyph_height=10.0, color=(0, 0, 0))
    polygon = ribbon_polygon(instance) / 100.0
    gt = gt_from_polygon(polygon, "ACE", 25)
    source = polygon_area(polygon)
    rebuilt = polygon_area(polygon_from_boundary(gt.top, gt.bot))
    assert abs(rebuilt - source) / source < 0.02

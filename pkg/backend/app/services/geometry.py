"""
Cubic Bezier geometry and ground-truth construction.

Curves are parameterized on t in [0, 1]; "uniform" sampling means uniform in
t. Polygons follow the 2k-vertex convention: the first k vertices trace the
top side in reading order, the last k trace the bottom side backwards.
"""

import logging
from math import comb
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from shapely.geometry import Polygon

from app.core.errors import AnnotationError, DomainError
from app.models.geometry import CubicBezier, TextInstanceGT, as_points

logger = logging.getLogger(__name__)

# Residual below which a chord-length fit is accepted without refinement
FIT_REFINE_TOLERANCE = 1e-12


def bernstein_weights(t) -> np.ndarray:
    """Cubic Bernstein weights, shape [len(t), 4]"""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    s = 1.0 - t
    return np.hstack([s ** 3, 3.0 * t * s ** 2, 3.0 * t ** 2 * s, t ** 3])


def bernstein_matrix(n: int) -> np.ndarray:
    """Weights for n parameter-uniform samples t_i = i / (n - 1)"""
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    return bernstein_weights(np.linspace(0.0, 1.0, n))


def bezier_eval(curve: CubicBezier, t: float) -> np.ndarray:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Bezier parameter must lie in [0, 1], got {t}")
    weights = [comb(3, j) * t ** j * (1.0 - t) ** (3 - j) for j in range(4)]
    return np.asarray(weights) @ curve.control


def sample_uniform(curve: CubicBezier, n: int) -> np.ndarray:
    """n points at t = i/(n-1), shape [n, 2]"""
    return bernstein_matrix(n) @ curve.control


def center_curve_from_sides(top: CubicBezier, bot: CubicBezier) -> CubicBezier:
    return CubicBezier((top.control + bot.control) / 2.0)


def _chord_parameters(points: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
    if cumulative[-1] <= 0.0:
        return np.linspace(0.0, 1.0, len(points))
    return cumulative / cumulative[-1]


def _solve_interior(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    weights = bernstein_weights(t)
    rhs = points - np.outer(weights[:, 0], points[0]) - np.outer(weights[:, 3], points[-1])
    interior, *_ = np.linalg.lstsq(weights[:, 1:3], rhs, rcond=None)
    return np.vstack([points[0], interior, points[-1]])


def _refine(points: np.ndarray, control: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Jointly adjust interior control points and interior parameters"""
    n = len(points)
    p0, p3 = points[0], points[-1]

    def unpack(z):
        ctrl = np.vstack([p0, z[0:2], z[2:4], p3])
        params = np.concatenate([[0.0], z[4:], [1.0]])
        return ctrl, params

    def residual(z):
        ctrl, params = unpack(z)
        return (bernstein_weights(params) @ ctrl - points).ravel()

    def jacobian(z):
        ctrl, params = unpack(z)
        weights = bernstein_weights(params)
        s = 1.0 - params[:, None]
        tt = params[:, None]
        tangent = 3.0 * (s ** 2 * (ctrl[1] - ctrl[0]) + 2.0 * s * tt * (ctrl[2] - ctrl[1]) + tt ** 2 * (ctrl[3] - ctrl[2]))
        jac = np.zeros((2 * n, 4 + n - 2))
        for c in range(2):
            jac[c::2, c] = weights[:, 1]
            jac[c::2, 2 + c] = weights[:, 2]
        for i in range(1, n - 1):
            jac[2 * i:2 * i + 2, 4 + i - 1] = tangent[i]
        return jac

    z0 = np.concatenate([control[1], control[2], t[1:-1]])
    lower = np.concatenate([np.full(4, -np.inf), np.zeros(n - 2)])
    upper = np.concatenate([np.full(4, np.inf), np.ones(n - 2)])
    result = least_squares(residual, z0, jac=jacobian, bounds=(lower, upper), method="trf",
                           ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=100 * n)
    refined, _ = unpack(result.x)
    if np.sum(residual(result.x) ** 2) <= np.sum(residual(z0) ** 2):
        return refined
    return control


def fit_bezier_to_polyline(points) -> CubicBezier:
    """Least-squares cubic through an ordered polyline with pinned endpoints.

    Interior parameters start from chord length and are then refined jointly
    with the interior control points, so samples of a cubic are recovered.
    """
    pts = as_points(points)
    if len(pts) < 2:
        raise DomainError(f"need at least 2 points to fit a curve, got {len(pts)}")
    a, b = pts[0], pts[-1]
    if len(pts) <= 3:
        return CubicBezier(np.vstack([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b]))

    t = _chord_parameters(pts)
    control = _solve_interior(pts, t)
    error = np.max(np.abs(bernstein_weights(t) @ control - pts))
    if error > FIT_REFINE_TOLERANCE:
        control = _refine(pts, control, t)
    return CubicBezier(control)


def split_polygon(polygon) -> tuple:
    """Top side and bottom side, both in reading order"""
    try:
        pts = as_points(polygon, "polygon")
    except DomainError as e:
        raise AnnotationError(str(e), field="points") from e
    if len(pts) % 2 or len(pts) < 4:
        raise AnnotationError(f"polygon needs an even vertex count >= 4, got {len(pts)}", field="points")
    k = len(pts) // 2
    top = pts[:k]
    bot = pts[k:][::-1]
    if np.dot(top[-1] - top[0], bot[-1] - bot[0]) <= 0.0:
        raise AnnotationError("top and bottom sides run in opposite reading directions", field="points")
    return top, bot


def gt_from_sides(top_curve: CubicBezier, bot_curve: CubicBezier, transcript: str, n: int,
                  polygon=None) -> TextInstanceGT:
    center_curve = center_curve_from_sides(top_curve, bot_curve)
    return TextInstanceGT(
        center=sample_uniform(center_curve, n),
        transcript=transcript,
        top=sample_uniform(top_curve, n),
        bot=sample_uniform(bot_curve, n),
        polygon=polygon,
        sides=(top_curve, bot_curve),
    )


def gt_from_polygon(polygon, transcript: str, n: int) -> TextInstanceGT:
    top, bot = split_polygon(polygon)
    return gt_from_sides(fit_bezier_to_polyline(top), fit_bezier_to_polyline(bot), transcript, n,
                         polygon=np.vstack([top, bot[::-1]]))


def gt_from_line(line, transcript: str, n: int) -> TextInstanceGT:
    try:
        pts = as_points(line, "line")
    except DomainError as e:
        raise AnnotationError(str(e), field="points") from e
    if len(pts) < 2:
        raise AnnotationError(f"line needs at least 2 points, got {len(pts)}", field="points")
    return TextInstanceGT(center=sample_uniform(fit_bezier_to_polyline(pts), n), transcript=transcript)


def _arc_lengths(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def _shrink_toward_middle(points: np.ndarray, fraction: float) -> np.ndarray:
    arc = _arc_lengths(points)
    if arc[-1] <= 0.0:
        return points.copy()
    middle = 0.5 * arc[-1]
    targets = middle + (1.0 - fraction) * (arc - middle)
    return np.column_stack([np.interp(targets, arc, points[:, 0]), np.interp(targets, arc, points[:, 1])])


def perturb_line(line: TextInstanceGT, shift_fraction: float, shrink_fraction: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Center polyline moved toward one side and shrunk toward its middle.

    One side (top or bottom, uniformly) is drawn per instance; every point
    moves shift_fraction of the way to its partner on that side. Then each
    point slides along the polyline toward its arc-length midpoint by
    shrink_fraction of its arc distance.
    """
    for name, value in (("shift_fraction", shift_fraction), ("shrink_fraction", shrink_fraction)):
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {value}")
    use_top = rng.random() < 0.5
    points = line.center.copy()
    if shift_fraction > 0.0:
        if not line.has_boundary:
            raise AnnotationError("shifting a line needs its boundary curves")
        side = line.top if use_top else line.bot
        points = points + shift_fraction * (side - points)
    if shrink_fraction > 0.0:
        points = _shrink_toward_middle(points, shrink_fraction)
    return points


def polygon_from_boundary(top, bot) -> np.ndarray:
    top = as_points(top, "top")
    bot = as_points(bot, "bot")
    if top.shape != bot.shape:
        raise DomainError(f"top and bot point counts differ: {len(top)} vs {len(bot)}")
    return np.vstack([top, bot[::-1]])


def polygon_area(polygon: Sequence) -> float:
    pts = as_points(polygon, "polygon")
    if len(pts) < 3:
        return 0.0
    return float(Polygon(pts).area)


def polygon_is_valid(polygon: Sequence) -> bool:
    pts = as_points(polygon, "polygon")
    return len(pts) >= 3 and bool(Polygon(pts).is_valid)

"""Nucleus shapes, non-overlapping field layouts and instance masks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import interpolate
from scipy.ndimage import distance_transform_edt, find_objects, label
from scipy.spatial.distance import cdist
from skimage.draw import polygon as fill_polygon

from .config import LayoutConfig, RenderParams
from .errors import GeometryError, ParameterError, PlacementError
from .fields import perlin_loop
from .rng import SeededRng

log = logging.getLogger(__name__)

TISSUE_CLASSES = ("normal", "dysplasia")
# stream key for the per-image nucleus count, apart from the placement attempts
_COUNT_STREAM = 1 << 32


@dataclass
class NucleusInstance:
    id: int
    center: Tuple[float, float]
    boundary: np.ndarray  # (n+1, 2) closed polygon, (x, y) columns
    tissue_class: str = "normal"
    packing_fraction: float = 0.35
    equivalent_radius: float = 0.0

    def __post_init__(self):
        if self.tissue_class not in TISSUE_CLASSES:
            raise ParameterError(f"tissue_class '{self.tissue_class}' not in {TISSUE_CLASSES}")
        if not 0.0 < self.packing_fraction < 1.0:
            raise ParameterError(f"packing_fraction {self.packing_fraction} outside (0, 1)")
        if not self.equivalent_radius:
            self.equivalent_radius = math.sqrt(self.area / math.pi)

    @property
    def area(self) -> float:
        return polygon_area(self.boundary)

    def as_record(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "tissue_class": self.tissue_class,
            "center": [round(float(c), 4) for c in self.center],
            "packing_fraction": round(float(self.packing_fraction), 6),
            "polygon_area_px2": round(self.area, 3),
        }


@dataclass
class FieldLayout:
    width: int
    height: int
    nuclei: List[NucleusInstance] = field(default_factory=list)
    target_count: int = 0

    @property
    def count(self) -> int:
        return len(self.nuclei)


@dataclass
class ShapeDraw:
    """Centred boundary plus the per-nucleus attributes a shape sampler decides."""

    boundary: np.ndarray
    tissue_class: str = "normal"
    packing_fraction: float = 0.35


ShapeSampler = Callable[[np.random.Generator], ShapeDraw]
RngLike = Union[SeededRng, np.random.Generator]


def _as_generator(rng: RngLike) -> np.random.Generator:
    return rng.generator() if isinstance(rng, SeededRng) else rng


def polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _open(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def _close(points: np.ndarray) -> np.ndarray:
    return np.vstack([points, points[:1]])


def arc_length(points: np.ndarray) -> float:
    pts = _close(_open(points))
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def is_simple(points: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    pts = _open(points)
    n = len(pts)
    if n < 3:
        return False
    a = pts
    b = np.roll(pts, -1, axis=0)

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    A1, B1 = a[:, None, :], b[:, None, :]
    A2, B2 = a[None, :, :], b[None, :, :]
    crosses = (orient(A1, B1, A2) * orient(A1, B1, B2) < 0) & (orient(A2, B2, A1) * orient(A2, B2, B1) < 0)
    i, j = np.triu_indices(n, k=2)
    adjacent = (i == 0) & (j == n - 1)
    return not bool(crosses[i[~adjacent], j[~adjacent]].any())


def sample_axis_ratio(gen: np.random.Generator, mean: float = 1.4, sigma: float = 0.3, size=None):
    """Log-normal draw whose mean (not median) is `mean`; sigma belongs to the underlying normal."""
    mu = math.log(mean) - sigma**2 / 2.0
    return np.exp(gen.normal(mu, sigma, size=size))


def _resample_closed(points: np.ndarray, n: int) -> np.ndarray:
    """n points at equal arc-length spacing, starting at vertex 0 (open output)."""
    pts = _close(_open(points))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(n) * s[-1] / n
    return np.column_stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])])


def smooth_boundary_bspline(points: np.ndarray, knot_spacing: float = 8.0, min_vertices: int = 64) -> np.ndarray:
    if knot_spacing <= 0:
        raise ParameterError(f"knot_spacing {knot_spacing} must be positive")
    pts = _open(points)
    if len(pts) < 4:
        raise GeometryError(f"need >= 4 vertices to smooth, got {len(pts)}")
    keep = np.linalg.norm(np.diff(_close(pts), axis=0), axis=1) > 1e-12
    pts = pts[keep]
    length = arc_length(pts) if len(pts) >= 2 else 0.0
    if length <= 0:
        raise GeometryError("boundary has zero length")

    n_ctrl = max(4, int(round(length / knot_spacing)))
    ctrl = _close(_resample_closed(pts, n_ctrl))
    u = np.linspace(0.0, 1.0, n_ctrl + 1)
    tck, _ = interpolate.splprep([ctrl[:, 0], ctrl[:, 1]], u=u, s=0, per=1, k=3)

    dense = np.column_stack(interpolate.splev(np.linspace(0.0, 1.0, 16 * n_ctrl, endpoint=False), tck))
    n_out = max(min_vertices, int(math.ceil(arc_length(dense))))
    return _close(_resample_closed(dense, n_out))


def sample_nucleus_boundary(
    rng: RngLike,
    target_area: float,
    perturb_amplitude: float,
    axis_ratio: Optional[float] = None,
    knot_spacing: float = 8.0,
    axis_ratio_mean: float = 1.4,
    axis_ratio_sigma: float = 0.3,
    n_vertices: int = 128,
) -> np.ndarray:
    """Closed polygon centred on the origin enclosing exactly `target_area` px^2."""
    if not 500.0 <= target_area <= 3000.0:
        raise ParameterError(f"target_area {target_area} outside [500, 3000]")
    if not 0.0 <= perturb_amplitude <= 5.0:
        raise ParameterError(f"perturb_amplitude {perturb_amplitude} outside [0, 5]")
    gen = _as_generator(rng)

    for _ in range(10):
        ratio = axis_ratio if axis_ratio is not None else float(sample_axis_ratio(gen, axis_ratio_mean, axis_ratio_sigma))
        ratio = float(np.clip(ratio, 1 / 3.0, 3.0))
        a = math.sqrt(target_area * ratio / math.pi)
        b = a / ratio
        orientation = gen.uniform(0.0, np.pi)
        theta = np.linspace(0.0, 2 * np.pi, n_vertices, endpoint=False)
        radius = a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        if perturb_amplitude > 0:
            radius = radius + perturb_amplitude * perlin_loop(n_vertices, int(gen.integers(4, 9)), gen)
        ang = theta + orientation
        pts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])

        smooth = smooth_boundary_bspline(pts, knot_spacing)
        smooth *= math.sqrt(target_area / polygon_area(smooth))
        if is_simple(smooth):
            return smooth
    raise GeometryError(f"could not draw a simple boundary for area {target_area}")


def sample_packing_fraction(gen: np.random.Generator, tissue_class: str, params: RenderParams, size=None):
    if tissue_class == "dysplasia":
        mean, sd = params.packing_mean_dysplasia, params.packing_sd_dysplasia
    else:
        mean, sd = params.packing_mean_normal, params.packing_sd_normal
    return np.clip(gen.normal(mean, sd, size=size), 0.01, 0.99)


def count_bounds(width: int, height: int, cfg: LayoutConfig) -> Tuple[int, int, float]:
    scale = width * height / 256.0**2
    lo = max(1, int(round(cfg.count_range[0] * scale)))
    hi = max(lo, int(round(cfg.count_range[1] * scale)))
    return lo, hi, cfg.count_mean * scale


def adapted_mean_area(width: int, height: int, target_count: int, cfg: LayoutConfig, dysplasia_fraction: float = 0.0) -> float:
    """Base mean area (normal class, before the area floor) that keeps `target_count` nuclei
    placeable under the clearance rule. Equals `cfg.area_mean` for sparse fields."""
    if target_count <= 0:
        return cfg.area_mean
    footprint = cfg.fill_fraction * width * height / target_count
    radius = max(math.sqrt(footprint / math.pi) - cfg.clearance / 2.0, 0.0)
    growth = 1.0 + dysplasia_fraction * (cfg.dysplasia_area_scale - 1.0)
    return min(cfg.area_mean, math.pi * radius**2 / growth)


def area_sd(mean: float, cfg: LayoutConfig) -> float:
    """The configured coefficient of variation, shrunk as the mean approaches the area floor."""
    floor = cfg.area_range[0] + cfg.area_margin
    span = cfg.area_mean - floor
    if span <= 0:
        return 0.0
    cv = (cfg.area_sd / cfg.area_mean) * float(np.clip((mean - floor) / span, 0.05, 1.0))
    return cv * mean


def layout_shape_sampler(
    base_area: float,
    cfg: LayoutConfig,
    params: RenderParams,
    dysplasia_fraction: float = 0.0,
) -> ShapeSampler:
    lo = cfg.area_range[0] + cfg.area_margin
    hi = cfg.area_range[1] - cfg.area_margin

    def draw(gen: np.random.Generator) -> ShapeDraw:
        tissue = "dysplasia" if gen.random() < dysplasia_fraction else "normal"
        scale = cfg.dysplasia_area_scale if tissue == "dysplasia" else 1.0
        mean = float(np.clip(base_area * scale, lo, hi))
        area = float(np.clip(gen.normal(mean, area_sd(mean, cfg)), lo, hi))
        amp_range = cfg.perturb_dysplasia if tissue == "dysplasia" else cfg.perturb_normal
        amplitude = float(gen.uniform(*amp_range))
        boundary = sample_nucleus_boundary(
            gen, area, amplitude,
            knot_spacing=cfg.knot_spacing,
            axis_ratio_mean=cfg.axis_ratio_mean,
            axis_ratio_sigma=cfg.axis_ratio_sigma,
        )
        phi = float(sample_packing_fraction(gen, tissue, params))
        return ShapeDraw(boundary, tissue, phi)

    return draw


def _rotate(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return points @ np.array([[c, s], [-s, c]])


def _major_axis_angle(points: np.ndarray) -> float:
    centred = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(centred.T @ centred)
    return math.atan2(vecs[1, 1], vecs[0, 1])


class _Grid:
    """Uniform bucket grid over accepted centres."""

    def __init__(self, width: int, height: int, cell: float):
        self.cell = cell
        self.buckets: Dict[Tuple[int, int], List[int]] = {}

    def key(self, x: float, y: float) -> Tuple[int, int]:
        return int(x // self.cell), int(y // self.cell)

    def add(self, idx: int, x: float, y: float) -> None:
        self.buckets.setdefault(self.key(x, y), []).append(idx)

    def near(self, x: float, y: float, reach: float) -> List[int]:
        span = int(math.ceil(reach / self.cell))
        cx, cy = self.key(x, y)
        found: List[int] = []
        for i in range(cx - span, cx + span + 1):
            for j in range(cy - span, cy + span + 1):
                found.extend(self.buckets.get((i, j), ()))
        return found


def _contact_points(centers: np.ndarray, reach: np.ndarray, gen: np.random.Generator, singles: int = 4) -> np.ndarray:
    """Points `reach[j]` away from centre j, plus the points `reach[j]` and `reach[k]` away from a pair j, k."""
    ang = gen.uniform(0.0, 2 * np.pi, size=(len(centers), singles))
    ring = centers[:, None, :] + reach[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    points = [ring.reshape(-1, 2)]
    if len(centers) >= 2:
        d = cdist(centers, centers)
        meets = (d < reach[:, None] + reach[None, :]) & (d > np.abs(reach[:, None] - reach[None, :]))
        j, k = np.nonzero(np.triu(meets, k=1))
        if j.size:
            djk = d[j, k]
            along = (reach[j] ** 2 - reach[k] ** 2 + djk**2) / (2 * djk)
            across = np.sqrt(np.maximum(reach[j] ** 2 - along**2, 0.0))
            u = (centers[k] - centers[j]) / djk[:, None]
            normal = np.column_stack([-u[:, 1], u[:, 0]])
            foot = centers[j] + along[:, None] * u
            points += [foot + across[:, None] * normal, foot - across[:, None] * normal]
    return np.vstack(points)


def _nearest_first(points: np.ndarray, seed: np.ndarray, jitter: float, gen: np.random.Generator) -> np.ndarray:
    key = np.linalg.norm(points - seed, axis=1) + gen.uniform(0.0, jitter, len(points))
    return points[np.argsort(key, kind="stable")]


class _Packing:
    """Accepted nuclei of one field and the exact clearance test against them."""

    def __init__(self, width: int, height: int, clearance: float, cell: float):
        self.width = width
        self.height = height
        self.clearance = clearance
        self.cell = cell
        self.grid = _Grid(width, height, cell)
        self.centers: List[np.ndarray] = []
        self.radii: List[float] = []
        self.extents: List[float] = []
        self.boundaries: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.centers)

    def admissible(self, points: np.ndarray, r: float) -> np.ndarray:
        """Candidate centres inside the field that keep the equivalent-radius gap to every nucleus."""
        keep = ((points[:, 0] >= r + 1.0) & (points[:, 0] <= self.width - 2.0 - r)
                & (points[:, 1] >= r + 1.0) & (points[:, 1] <= self.height - 2.0 - r))
        if self.centers and keep.any():
            gap = cdist(points, np.asarray(self.centers)) - r - np.asarray(self.radii)[None, :]
            keep &= (gap > self.clearance).all(axis=1)
        return points[keep]

    def facing(self, center: np.ndarray, r: float) -> Optional[float]:
        """Direction of the summed unit vectors towards nuclei within a few px of contact."""
        total = np.zeros(2)
        for j in self.grid.near(center[0], center[1], self.cell):
            v = self.centers[j] - center
            d = float(np.linalg.norm(v))
            if d > 0 and d - r - self.radii[j] < self.clearance + 6.0:
                total += v / d
        if np.linalg.norm(total) < 1e-9:
            return None
        return math.atan2(total[1], total[0])

    def fits(self, pts: np.ndarray, center: np.ndarray) -> bool:
        if (pts[:, 0].min() < 1.0 or pts[:, 0].max() > self.width - 2.0
                or pts[:, 1].min() < 1.0 or pts[:, 1].max() > self.height - 2.0):
            return False
        for j in self.grid.near(center[0], center[1], self.cell):
            closest = float(np.linalg.norm(pts - self.centers[j], axis=1).min())
            if closest - self.extents[j] > self.clearance + 1.0:
                continue
            # +1 px margin for the vertex approximation of the boundary segments
            if cdist(pts, self.boundaries[j]).min() <= self.clearance + 1.0:
                return False
        return True

    def add(self, center: np.ndarray, r: float, extent: float, pts: np.ndarray) -> int:
        idx = len(self.centers)
        self.centers.append(center)
        self.radii.append(r)
        self.extents.append(extent)
        self.boundaries.append(pts)
        self.grid.add(idx, center[0], center[1])
        return idx


def poisson_disk_layout(
    width: int,
    height: int,
    target_count: int,
    rng: RngLike,
    shape_sampler: ShapeSampler,
    clearance: float = 10.0,
    attempt_budget: Optional[int] = None,
    min_fraction: float = 0.8,
    darts: int = 32,
    rotations: int = 4,
    dense_above: float = 0.4,
) -> FieldLayout:
    """Place up to `target_count` shapes with boundary clearance > `clearance`.

    Shapes are drawn up front and placed largest first. Each shape walks a list of candidate
    centres: uniform darts, points just beyond contact with one placed nucleus, and points in
    contact with two at once. Sparse fields try the darts first, in random order. Fields whose
    clearance footprints cover more than `dense_above` of the area grow compactly from a random
    seed instead, contact points nearest the seed first. Each candidate is tried with the short
    axis turned towards its neighbours, then at random rotations; every rotation counts against
    the attempt budget. Raises PlacementError below `min_fraction` of the target.
    """
    layout = FieldLayout(width, height, [], target_count)
    if target_count <= 0:
        return layout
    gen = _as_generator(rng)
    budget = attempt_budget if attempt_budget is not None else 30 * target_count * 50

    draws = [shape_sampler(gen) for _ in range(target_count)]
    bases = [_open(d.boundary) for d in draws]
    areas = [polygon_area(b) for b in bases]
    order = sorted(range(target_count), key=lambda i: -areas[i])
    equiv = [math.sqrt(a / math.pi) for a in areas]
    extents = [float(np.linalg.norm(b, axis=1).max()) for b in bases]

    footprint = sum(math.pi * (r + clearance / 2.0) ** 2 for r in equiv)
    dense = footprint > dense_above * (width + clearance) * (height + clearance)
    seed = np.array([gen.uniform(0.0, width), gen.uniform(0.0, height)])
    packing = _Packing(width, height, clearance, 2 * max(extents) + clearance)
    attempts = 0

    for i in order:
        if attempts >= budget:
            break
        r_i = equiv[i]
        lo_x, lo_y = r_i + 1.0, r_i + 1.0
        uniform = np.column_stack([
            gen.uniform(lo_x, max(width - 2.0 - r_i, lo_x), darts),
            gen.uniform(lo_y, max(height - 2.0 - r_i, lo_y), darts),
        ])
        uniform = packing.admissible(uniform, r_i)
        contacts = np.empty((0, 2))
        if len(packing):
            reach = r_i + np.asarray(packing.radii) + clearance + gen.uniform(0.3, 1.5, len(packing))
            contacts = packing.admissible(_contact_points(np.asarray(packing.centers), reach, gen), r_i)
        if dense:
            jitter = 0.25 * r_i
            candidates = np.vstack([_nearest_first(contacts, seed, jitter, gen), _nearest_first(uniform, seed, jitter, gen)])
        else:
            candidates = np.vstack([uniform, contacts[gen.permutation(len(contacts))]])

        major = _major_axis_angle(bases[i])
        for cand in candidates:
            towards = packing.facing(cand, r_i)
            angles = list(gen.uniform(0.0, 2 * np.pi, rotations))
            if towards is not None:
                # short axis towards the neighbours
                angles[0] = towards + np.pi / 2 - major
            pts = None
            for angle in angles:
                attempts += 1
                trial = _rotate(bases[i], angle) + cand
                if packing.fits(trial, cand):
                    pts = trial
                    break
                if attempts >= budget:
                    break
            if pts is not None:
                idx = packing.add(cand, r_i, extents[i], pts)
                layout.nuclei.append(NucleusInstance(
                    id=idx + 1,
                    center=(float(cand[0]), float(cand[1])),
                    boundary=_close(pts),
                    tissue_class=draws[i].tissue_class,
                    packing_fraction=draws[i].packing_fraction,
                    equivalent_radius=r_i,
                ))
                break
            if attempts >= budget:
                break

    achieved = layout.count
    log.debug(f"[layout] placed {achieved}/{target_count} nuclei in {attempts} attempts ({'dense' if dense else 'sparse'})")
    if achieved < math.ceil(min_fraction * target_count):
        raise PlacementError(achieved, target_count)
    return layout


def rasterize_mask(layout: FieldLayout) -> np.ndarray:
    mask = np.zeros((layout.height, layout.width), dtype=np.uint16)
    for nucleus in layout.nuclei:
        rr, cc = fill_polygon(nucleus.boundary[:, 1], nucleus.boundary[:, 0], shape=mask.shape)
        free = mask[rr, cc] == 0
        mask[rr[free], cc[free]] = nucleus.id
    return mask


def verify_clearance(mask: np.ndarray, clearance: float = 10.0) -> bool:
    """Exact check that every pair of labelled regions is more than `clearance` px apart."""
    pad = int(math.ceil(clearance)) + 1
    for idx, sl in enumerate(find_objects(mask), start=1):
        if sl is None:
            continue
        rows = slice(max(sl[0].start - pad, 0), sl[0].stop + pad)
        cols = slice(max(sl[1].start - pad, 0), sl[1].stop + pad)
        crop = mask[rows, cols]
        others = (crop > 0) & (crop != idx)
        if not others.any():
            continue
        dist = distance_transform_edt(~others)
        if dist[crop == idx].min() <= clearance:
            return False
    return True


def regions_are_connected(mask: np.ndarray) -> bool:
    """Every label forms a single 4-connected component."""
    for idx, sl in enumerate(find_objects(mask), start=1):
        if sl is None:
            continue
        _, n = label(mask[sl] == idx)
        if n != 1:
            return False
    return True


def generate_layout(
    width: int,
    height: int,
    rng: SeededRng,
    cfg: Optional[LayoutConfig] = None,
    params: Optional[RenderParams] = None,
    dysplasia_fraction: float = 0.0,
    target_count: Optional[int] = None,
) -> FieldLayout:
    """Draw a target count once, adapt areas to it and place nuclei; retries on a fresh derived
    stream whenever placement or exact clearance verification fails.

    A drawn count beyond what the field can hold keeps every nucleus that fits, as long as the
    result stays inside the count bounds. An explicit `target_count` must reach 80% of itself.
    """
    cfg = cfg or LayoutConfig()
    params = params or RenderParams()
    lo, hi, mean = count_bounds(width, height, cfg)
    sd = cfg.count_sd * mean / cfg.count_mean

    count = target_count
    if count is None:
        count = int(np.clip(round(rng.child(_COUNT_STREAM).generator().normal(mean, sd)), lo, hi))
    base_area = adapted_mean_area(width, height, count, cfg, dysplasia_fraction)
    min_fraction = 0.8 if target_count is not None else 0.0

    last_error: Optional[Exception] = None
    for attempt in range(cfg.max_retries):
        gen = rng.child(attempt).generator()
        sampler = layout_shape_sampler(base_area, cfg, params, dysplasia_fraction)
        try:
            layout = poisson_disk_layout(width, height, count, gen, sampler, clearance=cfg.clearance, min_fraction=min_fraction)
        except PlacementError as e:
            log.debug(f"[layout] attempt {attempt}: {e}")
            last_error = e
            continue
        if target_count is None and layout.count < lo:
            log.debug(f"[layout] attempt {attempt}: {layout.count} nuclei is below the minimum {lo}")
            continue
        if layout.count < count:
            log.debug(f"[layout] drew {count} nuclei, {layout.count} fit")
        mask = rasterize_mask(layout)
        areas = np.bincount(mask.ravel(), minlength=layout.count + 1)[1:]
        if layout.count and (areas.min() < cfg.area_range[0] or areas.max() > cfg.area_range[1]):
            log.debug(f"[layout] attempt {attempt}: rasterised area outside {cfg.area_range}")
            continue
        if not verify_clearance(mask, cfg.clearance):
            log.debug(f"[layout] attempt {attempt}: exact clearance check failed")
            continue
        return layout
    if isinstance(last_error, PlacementError):
        raise last_error
    raise PlacementError(0, count, f"[layout] no valid layout after {cfg.max_retries} attempts")


def perturb_mask(mask: np.ndarray, offset: int) -> np.ndarray:
    """Dilate (offset > 0) or erode (offset < 0) every label by a Euclidean disk of radius |offset|.

    Dilated pixels go to the nearest label, so labels never merge. Labels that erosion removes
    entirely are dropped and logged; `dropped_labels` lists them.
    """
    radius = abs(int(offset))
    if not 1 <= radius <= 5:
        raise ParameterError(f"|offset| must be in [1, 5], got {offset}")
    if offset > 0:
        dist, indices = distance_transform_edt(mask == 0, return_indices=True)
        return np.where(dist <= radius, mask[tuple(indices)], 0).astype(mask.dtype)

    padded = np.pad(mask, 1)
    # pixels touching a different label count as outside their own label
    touching = np.zeros(padded.shape, dtype=bool)
    for axis in (0, 1):
        for shift in (1, -1):
            nb = np.roll(padded, shift, axis=axis)
            touching |= (padded > 0) & (nb > 0) & (nb != padded)
    inside = (padded > 0) & ~touching
    dist = distance_transform_edt(inside)[1:-1, 1:-1]
    out = np.where(dist > radius, mask, 0).astype(mask.dtype)
    gone = dropped_labels(mask, out)
    if gone:
        log.debug(f"[perturb] erosion by {radius} px removed labels {gone}")
    return out


def dropped_labels(before: np.ndarray, after: np.ndarray) -> List[int]:
    kept = set(np.unique(after).tolist())
    return [int(v) for v in np.unique(before) if v and v not in kept]

"""Synthetic ply-to-ply angle-interlock textile generation.

Warp yarns run along x and undulate through the thickness, weft yarns
run along y in stacked layers.  Yarn columns alternate their yarn count
according to repeating sequences, e.g. 4/3 for warp and 5/4 for weft.
All lengths are voxel units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, InfeasibleWeaveError
from .geometry import (
    Box,
    BSplineCurve,
    CrossSection,
    bspline_eval,
    bspline_fit,
    ellipse_section,
    section_area,
)

# A section center must sit on its yarn path within this distance.
PATH_TOL = 1.0

FAMILIES = ("warp", "weft")


@dataclass(frozen=True)
class FiberSpec:
    """Filament content of a yarn: count and single-fiber radius."""

    fiber_radius: float
    fibers_per_yarn: int

    def __post_init__(self):
        if not (self.fiber_radius > 0 and math.isfinite(self.fiber_radius)):
            raise ConfigError("fiber_radius must be positive and finite")
        if self.fibers_per_yarn < 1:
            raise ConfigError("fibers_per_yarn must be at least 1")


@dataclass(frozen=True)
class WeaveSpec:
    """Parameters of a synthetic angle-interlock weave.

    ``warp_sequence`` and ``weft_sequence`` give the per-column yarn
    counts, cycled across the columns.  ``yarn_spacing`` is the column
    pitch (x pitch of weft columns, y pitch of warp columns).  The
    layer pitch through the thickness is ``4 * crimp_amplitude``, which
    keeps warp crests centered between weft layers for any mix of odd
    and even column counts.
    """

    n_warp_columns: int
    n_weft_columns: int
    warp_sequence: tuple[int, ...]
    weft_sequence: tuple[int, ...]
    yarn_spacing: tuple[float, float]
    crimp_amplitude: float
    ellipse_a: float
    ellipse_b: float
    seed: int = 0

    def __post_init__(self):
        if self.n_warp_columns < 1 or self.n_weft_columns < 1:
            raise ConfigError("need at least one column per family")
        for name, seq in (("warp_sequence", self.warp_sequence), ("weft_sequence", self.weft_sequence)):
            seq = tuple(int(v) for v in seq)
            if len(seq) == 0 or any(v < 1 for v in seq):
                raise ConfigError(f"{name} must be a non-empty tuple of positive counts")
            object.__setattr__(self, name, seq)
        sx, sy = (float(v) for v in self.yarn_spacing)
        if not (sx > 0 and sy > 0):
            raise ConfigError("yarn_spacing must be positive")
        object.__setattr__(self, "yarn_spacing", (sx, sy))
        if self.crimp_amplitude < 0:
            raise ConfigError("crimp_amplitude must be non-negative")
        if not (self.ellipse_a >= self.ellipse_b > 0):
            raise ConfigError("ellipse axes need a >= b > 0")

    @property
    def layer_pitch(self) -> float:
        if self.crimp_amplitude > 0:
            return 4.0 * self.crimp_amplitude
        return 4.0 * self.ellipse_b

    def column_counts(self, family: str) -> list[int]:
        if family == "warp":
            seq, cols = self.warp_sequence, self.n_warp_columns
        else:
            seq, cols = self.weft_sequence, self.n_weft_columns
        return [seq[j % len(seq)] for j in range(cols)]

    def yarn_count(self) -> int:
        return sum(self.column_counts("warp")) + sum(self.column_counts("weft"))


@dataclass(frozen=True)
class YarnModel:
    """One yarn: a B-spline axis and ordered cross sections along it."""

    yarn_id: int
    family: str
    path: BSplineCurve
    sections: tuple[CrossSection, ...]

    def __post_init__(self):
        if self.yarn_id < 1:
            raise ConfigError("yarn ids start at 1; 0 is the background label")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        sections = tuple(self.sections)
        if len(sections) < 2:
            raise DegenerateGeometryError("a yarn needs at least 2 sections")
        stations = np.array([s.station for s in sections])
        if np.any(np.diff(stations) <= 0):
            raise DegenerateGeometryError("section stations must strictly increase")
        total = stations[-1] - stations[0]
        if total <= 0:
            raise DegenerateGeometryError("yarn has zero arc length")
        params = (stations - stations[0]) / total
        centers = np.array([s.center for s in sections])
        on_path = bspline_eval(self.path, params)
        if np.linalg.norm(on_path - centers, axis=1).max() > PATH_TOL:
            raise DegenerateGeometryError("section centers stray from the yarn path")
        object.__setattr__(self, "sections", sections)

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.sections])


@dataclass(frozen=True)
class TextileModel:
    """A full textile: yarns, bounding box, thickness and provenance."""

    yarns: tuple[YarnModel, ...]
    bbox: Box
    thickness: float
    spec: WeaveSpec
    fibers: FiberSpec | None = None

    def __post_init__(self):
        yarns = tuple(self.yarns)
        if len(yarns) == 0:
            raise DegenerateGeometryError("model has no yarns")
        ids = [y.yarn_id for y in yarns]
        if len(set(ids)) != len(ids):
            raise ConfigError("yarn ids must be unique")
        if not (self.thickness > 0):
            raise ConfigError("thickness must be positive")
        z_extent = self.bbox.extent[2]
        if abs(z_extent - self.thickness) > 1e-6:
            raise ConfigError("thickness must match the bbox z extent")
        for yarn in yarns:
            for sec in yarn.sections:
                if not np.all(self.bbox.contains(sec.contour)):
                    raise DegenerateGeometryError(
                        f"yarn {yarn.yarn_id} has keypoints outside the bbox"
                    )
        object.__setattr__(self, "yarns", yarns)

    @property
    def mid_plane_z(self) -> float:
        return float(0.5 * (self.bbox.lo[2] + self.bbox.hi[2]))

    def family(self, family: str) -> tuple[YarnModel, ...]:
        return tuple(y for y in self.yarns if y.family == family)


def _interpolating_path(centers: np.ndarray) -> BSplineCurve:
    return bspline_fit(centers, degree=3, n_controls=len(centers))


def _stations(centers: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _build_yarn(yarn_id, family, centers, tangents, a, b, orientation) -> YarnModel:
    path = _interpolating_path(centers)
    stations = _stations(centers)
    sections = tuple(
        ellipse_section(c, t, a, b, orientation=orientation, station=s)
        for c, t, s in zip(centers, tangents, stations)
    )
    return YarnModel(yarn_id=yarn_id, family=family, path=path, sections=sections)


def _check_same_family_spacing(spec: WeaveSpec) -> None:
    # Same-family yarn axes may not come closer than ellipse_b; with the
    # regular grid used here the closest approach is the smallest pitch.
    sx, sy = spec.yarn_spacing
    pitch = spec.layer_pitch
    if spec.crimp_amplitude > 0:
        # Same-column warp yarns swing toward each other by up to
        # 2 * crimp_amplitude at opposite phase.
        warp_gap = min(sy, pitch - 2.0 * spec.crimp_amplitude)
    else:
        warp_gap = min(sy, pitch)
    weft_gap = min(sx, pitch)
    if max(spec.column_counts("warp")) == 1:
        warp_gap = sy
    if max(spec.column_counts("weft")) == 1:
        weft_gap = sx
    gap = min(warp_gap, weft_gap)
    if gap < spec.ellipse_b:
        raise InfeasibleWeaveError(
            f"same-family yarn axes come within {gap:.3g} of each other, "
            f"closer than ellipse_b={spec.ellipse_b:.3g}"
        )


def generate_interlock(
    spec: WeaveSpec,
    n_sections_warp: int = 38,
    n_sections_weft: int = 49,
    z_margin: float = 16.0,
) -> TextileModel:
    """Generate a synthetic angle-interlock textile model.

    Warp paths follow a cosine profile through the thickness with
    crests at the weft column positions, the sign alternating per
    column and per layer.  Weft yarns are straight.  Yarn ids are
    assigned in generation order, warp first, starting at 1.

    Parameters
    ----------
    spec : weave description
    n_sections_warp, n_sections_weft : cross sections per yarn
    z_margin : empty space above and below the yarn stack
    """
    if n_sections_warp < 4 or n_sections_weft < 4:
        raise ConfigError("need at least 4 sections per yarn")
    if z_margin < 0:
        raise ConfigError("z_margin must be non-negative")
    _check_same_family_spacing(spec)

    sx, sy = spec.yarn_spacing
    a, b = spec.ellipse_a, spec.ellipse_b
    amp = spec.crimp_amplitude
    pitch = spec.layer_pitch
    lx = spec.n_weft_columns * sx
    ly = spec.n_warp_columns * sy

    warp_counts = spec.column_counts("warp")
    weft_counts = spec.column_counts("weft")
    half_span_warp = (max(warp_counts) - 1) / 2.0 * pitch + amp + b
    half_span_weft = (max(weft_counts) - 1) / 2.0 * pitch + b
    half_span = max(half_span_warp, half_span_weft)
    z_mid = half_span + z_margin
    thickness = 2.0 * z_mid

    x_cols = (np.arange(spec.n_weft_columns) + 0.5) * sx
    y_cols = (np.arange(spec.n_warp_columns) + 0.5) * sy

    yarns: list[YarnModel] = []
    yarn_id = 1

    for j, y in enumerate(y_cols):
        w = warp_counts[j]
        xs = np.linspace(0.0, lx, n_sections_warp)
        for m in range(w):
            mean_z = z_mid + (m - (w - 1) / 2.0) * pitch
            sign = 1.0 if (j + m) % 2 == 0 else -1.0
            phase = np.pi * (xs - x_cols[0]) / sx
            zs = mean_z + sign * amp * np.cos(phase)
            dz = -sign * amp * (np.pi / sx) * np.sin(phase)
            centers = np.column_stack([xs, np.full_like(xs, y), zs])
            tangents = np.column_stack([np.ones_like(xs), np.zeros_like(xs), dz])
            yarns.append(
                _build_yarn(yarn_id, "warp", centers, tangents, a, b, orientation=[0, 1, 0])
            )
            yarn_id += 1

    for i, x in enumerate(x_cols):
        c = weft_counts[i]
        ys = np.linspace(0.0, ly, n_sections_weft)
        for layer in range(c):
            z = z_mid + (layer - (c - 1) / 2.0) * pitch
            centers = np.column_stack([np.full_like(ys, x), ys, np.full_like(ys, z)])
            tangents = np.tile([0.0, 1.0, 0.0], (len(ys), 1))
            yarns.append(
                _build_yarn(yarn_id, "weft", centers, tangents, a, b, orientation=[1, 0, 0])
            )
            yarn_id += 1

    # Tilted end rings can poke past the nominal column extents; grow
    # the box in x/y so every keypoint is inside.  z keeps its margins.
    kp = np.vstack([s.contour for y in yarns for s in y.sections])
    lo = np.minimum([0.0, 0.0, 0.0], np.append(kp[:, :2].min(axis=0), 0.0))
    hi = np.maximum([lx, ly, thickness], np.append(kp[:, :2].max(axis=0), thickness))
    bbox = Box(lo, hi)
    return TextileModel(yarns=tuple(yarns), bbox=bbox, thickness=thickness, spec=spec)


def _scale_section(sec: CrossSection, z_mid: float, f: float, station: float) -> CrossSection:
    """Flatten one section: center follows the global z scale, the ring
    contracts by f along its in-plane vertical axis and widens by 1/f
    horizontally, which preserves its area exactly."""
    from .geometry import best_fit_plane, plane_frame

    center = np.array(sec.center)
    new_center = center.copy()
    new_center[2] = z_mid + f * (center[2] - z_mid)
    _, normal = best_fit_plane(sec.contour)
    e1, e2 = plane_frame(normal)
    rel = sec.contour - center
    alpha = rel @ e1
    beta = rel @ e2
    ring = new_center + np.outer(alpha / f, e1) + np.outer(beta * f, e2)
    return CrossSection(contour=ring, center=new_center, station=station)


def _scale_model(model: TextileModel, thickness_k: float) -> TextileModel:
    z_mid = model.mid_plane_z
    f = thickness_k / model.thickness
    yarns = []
    for yarn in model.yarns:
        ctrl = np.array(yarn.path.control_points)
        ctrl[:, 2] = z_mid + f * (ctrl[:, 2] - z_mid)
        path = BSplineCurve(yarn.path.degree, ctrl, yarn.path.knots)
        # Stations shrink with the path; rebuild them from the scaled centers.
        centers = np.array([s.center for s in yarn.sections])
        centers[:, 2] = z_mid + f * (centers[:, 2] - z_mid)
        stations = _stations(centers)
        sections = tuple(
            _scale_section(s, z_mid, f, station=st)
            for s, st in zip(yarn.sections, stations)
        )
        yarns.append(YarnModel(yarn.yarn_id, yarn.family, path, sections))

    lo = np.array(model.bbox.lo)
    hi = np.array(model.bbox.hi)
    lo[2] = z_mid - thickness_k / 2.0
    hi[2] = z_mid + thickness_k / 2.0
    # Widened sections may poke past the original x/y walls.
    kp = np.vstack([s.contour for y in yarns for s in y.sections])
    lo[:2] = np.minimum(lo[:2], kp[:, :2].min(axis=0))
    hi[:2] = np.maximum(hi[:2], kp[:, :2].max(axis=0))
    return TextileModel(
        yarns=tuple(yarns),
        bbox=Box(lo, hi),
        thickness=thickness_k,
        spec=model.spec,
        fibers=model.fibers,
    )


def compaction_sequence(
    model: TextileModel, thickness_final: float, n_steps: int = 12
) -> tuple[TextileModel, ...]:
    """Kinematic compaction from the initial thickness to a target.

    Step k of n has thickness H_0 - k * (H_0 - H_final) / n; geometry
    is scaled affinely in z about the fixed mid-plane and section rings
    flatten with exact area preservation.  Returns n + 1 models, the
    input first.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    h0 = model.thickness
    if not (0 < thickness_final <= h0):
        raise ConfigError("target thickness must lie in (0, initial thickness]")
    out = [model]
    for k in range(1, n_steps + 1):
        hk = h0 - k * (h0 - thickness_final) / n_steps
        out.append(_scale_model(model, hk))
    return tuple(out)


def perturb_model(
    model: TextileModel,
    contour_sigma: float,
    center_sigma: float = 0.0,
    seed: int = 0,
) -> TextileModel:
    """Jitter section geometry with Gaussian noise.

    Ring keypoints receive iid noise of ``contour_sigma`` and are
    re-projected onto their best-fit plane; section centers move to the
    new ring centroids, optionally shifted rigidly by ``center_sigma``
    noise first.  Yarn paths are refit through the moved centers.  With
    both sigmas zero the input model is returned unchanged.
    """
    from .geometry import best_fit_plane

    if contour_sigma < 0 or center_sigma < 0:
        raise ConfigError("noise sigmas must be non-negative")
    if contour_sigma == 0 and center_sigma == 0:
        return model
    rng = np.random.default_rng(seed)
    yarns = []
    for yarn in model.yarns:
        sections = []
        for sec in yarn.sections:
            ring = np.array(sec.contour)
            if center_sigma > 0:
                ring = ring + rng.normal(0.0, center_sigma, 3)
            if contour_sigma > 0:
                ring = ring + rng.normal(0.0, contour_sigma, ring.shape)
            centroid, normal = best_fit_plane(ring)
            ring = ring - np.outer((ring - centroid) @ normal, normal)
            sections.append((ring, ring.mean(axis=0)))
        centers = np.array([c for _, c in sections])
        stations = _stations(centers)
        if np.any(np.diff(stations) <= 0):
            raise DegenerateGeometryError(
                "perturbation collapsed neighbouring sections; lower the noise"
            )
        path = _interpolating_path(centers)
        new_sections = tuple(
            CrossSection(contour=ring, center=c, station=st)
            for (ring, c), st in zip(sections, stations)
        )
        yarns.append(YarnModel(yarn.yarn_id, yarn.family, path, new_sections))
    bbox = model.bbox
    kp = np.vstack([s.contour for y in yarns for s in y.sections])
    lo = np.minimum(np.array(bbox.lo), kp.min(axis=0))
    hi = np.maximum(np.array(bbox.hi), kp.max(axis=0))
    lo[2] = min(lo[2], bbox.lo[2])
    hi[2] = max(hi[2], bbox.hi[2])
    thickness = float(hi[2] - lo[2])
    return TextileModel(
        yarns=tuple(yarns),
        bbox=Box(lo, hi),
        thickness=thickness,
        spec=model.spec,
        fibers=model.fibers,
    )


def fiber_spec_for_target_vf(
    model: TextileModel, target_vf: float, fibers_per_yarn: int = 1000
) -> FiberSpec:
    """Fiber radius that makes the mean intra-yarn fiber volume fraction
    of the model's sections equal to ``target_vf``."""
    if not (0 < target_vf <= 1):
        raise ConfigError("target_vf must lie in (0, 1]")
    areas = [section_area(s) for y in model.yarns for s in y.sections]
    mean_area = float(np.mean(areas))
    radius = math.sqrt(target_vf * mean_area / (math.pi * fibers_per_yarn))
    return FiberSpec(fiber_radius=radius, fibers_per_yarn=fibers_per_yarn)


def with_fibers(model: TextileModel, fibers: FiberSpec) -> TextileModel:
    return replace(model, fibers=fibers)

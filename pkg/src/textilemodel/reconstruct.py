"""From per-slice detections to tracked, completed, meshed yarns.

Tracking sweeps the slices of one axis and associates detections to
yarn tracks by nearest center within a gate.  Interior gaps are filled
by interpolation; gaps touching the dataset boundary are reported and
never extrapolated.  Tracks lift to 3D, get a least-squares B-spline
axis, and mesh into a quad surface, a wedge volume per yarn, and a
voxel composite of the whole textile.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    InsufficientDataError,
    MeshIntegrityError,
)
from .geometry import (
    Box,
    BSplineCurve,
    CrossSection,
    bspline_eval,
    bspline_fit,
    bspline_tangent,
    canonical_indices,
)
from .segmenter import DetectionSet, SectionDetection
from .voxelizer import AXIS_XZ, AXIS_YZ, compute_dims, paint_labels, DEFAULT_VOXEL_BUDGET

log = logging.getLogger(__name__)

RING_N = 10

# Family seen in cross-section by each slicing axis: slices cut the
# yarns that run perpendicular to them.
AXIS_FAMILY = {AXIS_YZ: "warp", AXIS_XZ: "weft"}


@dataclass(frozen=True)
class YarnTrack:
    """A chain of detections across consecutive slices of one axis."""

    family: str
    axis: str
    entries: tuple
    gaps: tuple
    boundary_gaps: tuple
    slice_range: tuple
    voxel_size: float
    origin: np.ndarray
    filled: tuple = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        if len(entries) == 0:
            raise InsufficientDataError("a track needs at least one entry")
        indices = [i for i, _ in entries]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ConfigError("track entries must be ordered by slice index")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "gaps", tuple(tuple(g) for g in self.gaps))
        object.__setattr__(self, "boundary_gaps", tuple(tuple(g) for g in self.boundary_gaps))
        object.__setattr__(self, "slice_range", tuple(self.slice_range))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.entries])


def _missing_runs(indices: np.ndarray) -> list:
    runs = []
    for a, b in zip(indices, indices[1:]):
        if b - a > 1:
            runs.append((int(a) + 1, int(b) - 1))
    return runs


def track_yarns(
    dset: DetectionSet,
    d_gate: float,
    min_length: int = 4,
    max_gap: int = 10,
    min_span: float = 0.0,
) -> list:
    """Greedy nearest-center tracking across slices.

    A detection joins the track whose latest center is nearest within
    ``d_gate`` pixels; leftovers found new tracks.  Tracks survive up
    to ``max_gap`` consecutive empty slices and need ``min_length``
    detections to be kept.  ``min_span`` additionally requires the
    observed slice range to cover that fraction of all slices: a
    transverse yarn traverses the sample, so short-span tracks are
    grazing cuts of the perpendicular family that slipped past the
    aspect filter.  Returns tracks ordered by first slice and center.
    """
    if d_gate <= 0:
        raise ConfigError("d_gate must be positive")
    if min_length < 2:
        raise ConfigError("min_length must be at least 2")
    if not 0.0 <= min_span <= 1.0:
        raise ConfigError("min_span must be in [0, 1]")
    family = AXIS_FAMILY[dset.axis]
    active: list[dict] = []
    done: list[dict] = []

    for i, dets in enumerate(dset.per_slice):
        still = []
        for tr in active:
            if i - tr["last"] > max_gap:
                done.append(tr)
            else:
                still.append(tr)
        active = still

        pairs = []
        for ti, tr in enumerate(active):
            delta = i - tr["last"]
            for di, det in enumerate(dets):
                dist = float(np.linalg.norm(det.center - tr["center"]))
                if dist <= d_gate * delta:
                    pairs.append((dist, ti, di))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        used_t: set = set()
        used_d: set = set()
        for dist, ti, di in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            tr = active[ti]
            tr["entries"].append((i, dets[di]))
            tr["center"] = dets[di].center
            tr["last"] = i
        for di, det in enumerate(dets):
            if di not in used_d:
                active.append(
                    {"entries": [(i, det)], "center": det.center, "last": i}
                )
    done.extend(active)

    n = dset.n_slices
    tracks = []
    for tr in done:
        if len(tr["entries"]) < min_length:
            continue
        indices = np.array([i for i, _ in tr["entries"]])
        first, last = int(indices[0]), int(indices[-1])
        if last - first + 1 < min_span * n:
            continue
        boundary = []
        if first > 0:
            boundary.append((0, first - 1))
        if last < n - 1:
            boundary.append((last + 1, n - 1))
        tracks.append(
            YarnTrack(
                family=family,
                axis=dset.axis,
                entries=tuple(tr["entries"]),
                gaps=tuple(_missing_runs(indices)),
                boundary_gaps=tuple(boundary),
                slice_range=(0, n - 1),
                voxel_size=dset.voxel_size,
                origin=np.array(dset.origin),
            )
        )
    tracks.sort(key=lambda t: (t.entries[0][0], tuple(t.entries[0][1].center)))
    return tracks


def complete_missing(track: YarnTrack) -> YarnTrack:
    """Fill interior gaps of a track by keypoint-wise interpolation.

    Single-slice gaps interpolate linearly between their neighbours;
    longer gaps evaluate a cubic spline fitted per keypoint channel
    over all observed slices.  Boundary gaps are left alone and stay
    reported on the track; completion never extrapolates.
    """
    if not track.gaps:
        return track
    observed = track.indices
    channels = np.stack([det.contour.reshape(-1) for _, det in track.entries])
    spline = CubicSpline(observed, channels, axis=0) if len(observed) >= 4 else None
    by_index = dict(track.entries)

    filled = []
    for start, end in track.gaps:
        run = list(range(start, end + 1))
        left = max(i for i in observed if i < start)
        right = min(i for i in observed if i > end)
        for idx in run:
            if end - start == 0 or spline is None:
                t = (idx - left) / (right - left)
                flat = (1 - t) * by_index[left].contour.reshape(-1) + t * by_index[
                    right
                ].contour.reshape(-1)
            else:
                flat = spline(idx)
            contour = flat.reshape(RING_N, 2)
            confidence = 0.5 * (by_index[left].confidence + by_index[right].confidence)
            lab_l, lab_r = by_index[left].true_label, by_index[right].true_label
            det = SectionDetection(
                axis=track.axis,
                slice_index=idx,
                contour=contour,
                center=contour.mean(axis=0),
                confidence=float(confidence),
                true_label=lab_l if lab_l == lab_r else None,
            )
            by_index[idx] = det
            filled.append(idx)

    entries = tuple(sorted(by_index.items()))
    return replace(
        track,
        entries=entries,
        gaps=(),
        filled=tuple(sorted(set(track.filled) | set(filled))),
    )


@dataclass(frozen=True)
class ReconstructedYarn:
    """A lifted, fitted yarn: B-spline axis plus ordered 3D sections."""

    family: str
    axis: str
    path: BSplineCurve
    sections: tuple
    completed_flags: tuple

    def __post_init__(self):
        sections = tuple(self.sections)
        if len(sections) < 2:
            raise InsufficientDataError("a yarn needs at least 2 sections")
        if len(self.completed_flags) != len(sections):
            raise ConfigError("completed_flags must align with sections")
        stations = np.array([s.station for s in sections])
        if np.any(np.diff(stations) <= 0):
            raise DegenerateGeometryError("section stations must strictly increase")
        object.__setattr__(self, "sections", sections)
        object.__setattr__(self, "completed_flags", tuple(bool(f) for f in self.completed_flags))

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.sections])


def _lift(track: YarnTrack, contour: np.ndarray, slice_index: int) -> np.ndarray:
    vs = track.voxel_size
    o = track.origin
    along = o[0] + (slice_index + 0.5) * vs if track.axis == AXIS_YZ else o[1] + (slice_index + 0.5) * vs
    u = contour[:, 0]
    v = contour[:, 1]
    z = o[2] + (v + 0.5) * vs
    if track.axis == AXIS_YZ:
        y = o[1] + (u + 0.5) * vs
        x = np.full_like(y, along)
    else:
        x = o[0] + (u + 0.5) * vs
        y = np.full_like(x, along)
    return np.column_stack([x, y, z])


def _trim_end_slivers(entries: tuple, keep_min: int) -> tuple:
    """Drop grazing end cuts: leading/trailing detections whose area is
    under half the track median are cap slivers, not transverse
    sections, and would bend the fitted axis at the ends."""
    areas = np.array([det.area() for _, det in entries])
    floor = 0.5 * float(np.median(areas))
    lo, hi = 0, len(entries)
    while hi - lo > keep_min and areas[lo] < floor:
        lo += 1
    while hi - lo > keep_min and areas[hi - 1] < floor:
        hi -= 1
    return entries[lo:hi]


def lift_and_fit(
    track: YarnTrack,
    n_controls: int | None = None,
    degree: int = 3,
) -> ReconstructedYarn:
    """Lift a track to 3D and fit its axis.

    Grazing end cuts are trimmed first, then section centers are lifted
    via the slice geometry, the axis is a least-squares cubic B-spline
    through them, and each ring is projected along the local tangent
    onto the plane through its center perpendicular to the path,
    undoing the oblique-cut stretch.  Stations are arc lengths along
    the fitted axis.
    """
    entries = _trim_end_slivers(track.entries, keep_min=degree + 1)
    if len(entries) < len(track.entries):
        track = replace(
            track,
            entries=entries,
            filled=tuple(i for i in track.filled if any(i == j for j, _ in entries)),
        )
    centers = np.stack(
        [_lift(track, det.center[None, :], i)[0] for i, det in track.entries]
    )
    if n_controls is None:
        n_controls = max(degree + 1, len(centers) // 4)
    n_controls = min(n_controls, len(centers))
    if len(centers) < degree + 1:
        raise InsufficientDataError("too few sections to fit a yarn axis")
    path = bspline_fit(centers, degree=degree, n_controls=n_controls)

    steps = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    params = np.concatenate([[0.0], np.cumsum(steps)])
    params /= params[-1]
    dense_t = np.linspace(0.0, 1.0, 512)
    dense = bspline_eval(path, dense_t)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    stations = np.interp(params, dense_t, arc)

    filled = set(track.filled)
    sections = []
    flags = []
    tangents = bspline_tangent(path, params)
    for k, (i, det) in enumerate(track.entries):
        ring = _lift(track, det.contour, i)
        center = ring.mean(axis=0)
        t = tangents[k]
        rel = ring - center
        ring_p = ring - np.outer(rel @ t, t)
        # Detector noise can fold an edge; angular re-ordering about the
        # center restores a simple ring without moving any keypoint.
        e1 = ring_p[0] - center
        nrm = np.linalg.norm(e1)
        if nrm < 1e-9:
            log.info("dropping degenerate section at slice %d", i)
            continue
        e1 /= nrm
        e2 = np.cross(t, e1)
        uv = np.column_stack([(ring_p - center) @ e1, (ring_p - center) @ e2])
        ring_p = ring_p[canonical_indices(uv)]
        try:
            sec = CrossSection(
                contour=ring_p, center=center, station=float(stations[k])
            )
        except Exception:
            log.info("dropping invalid section at slice %d", i)
            continue
        sections.append(sec)
        flags.append(i in filled)

    if len(sections) < 2:
        raise InsufficientDataError("track collapsed while lifting sections")
    # Guard against station duplicates from dropped or coincident rings.
    keep = [0]
    for k in range(1, len(sections)):
        if sections[k].station > sections[keep[-1]].station:
            keep.append(k)
    sections = [sections[k] for k in keep]
    flags = [flags[k] for k in keep]
    return ReconstructedYarn(
        family=track.family,
        axis=track.axis,
        path=path,
        sections=tuple(sections),
        completed_flags=tuple(flags),
    )


@dataclass(frozen=True)
class QuadSurfaceMesh:
    """Closed swept surface: lateral quads plus triangle-fan caps."""

    vertices: np.ndarray
    quads: np.ndarray
    cap_triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        q = np.asarray(self.quads, dtype=np.int64)
        t = np.asarray(self.cap_triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshIntegrityError("vertices must be (n, 3)")
        if q.ndim != 2 or q.shape[1] != 4 or t.ndim != 2 or t.shape[1] != 3:
            raise MeshIntegrityError("quads must be (m, 4) and caps (k, 3)")
        for arr in (q, t):
            if arr.size and (arr.min() < 0 or arr.max() >= len(v)):
                raise MeshIntegrityError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "quads", q)
        object.__setattr__(self, "cap_triangles", t)

    def faces(self):
        yield from self.quads
        yield from self.cap_triangles


def _edge_multiset(mesh: QuadSurfaceMesh):
    edges = {}
    for face in mesh.faces():
        m = len(face)
        for i in range(m):
            a, b = int(face[i]), int(face[(i + 1) % m])
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return edges


def is_watertight(mesh: QuadSurfaceMesh) -> bool:
    """True when every edge is shared by exactly two faces."""
    return all(c == 2 for c in _edge_multiset(mesh).values())


def euler_characteristic(mesh: QuadSurfaceMesh) -> int:
    used = np.unique(np.concatenate([mesh.quads.reshape(-1), mesh.cap_triangles.reshape(-1)]))
    v = len(used)
    e = len(_edge_multiset(mesh))
    f = len(mesh.quads) + len(mesh.cap_triangles)
    return v - e + f


def _tet_contrib(a, b, c) -> float:
    return float(np.dot(a, np.cross(b, c))) / 6.0


def enclosed_volume(mesh: QuadSurfaceMesh) -> float:
    """Volume by the divergence theorem; quads split along (0, 2)."""
    verts = mesh.vertices
    total = 0.0
    for face in mesh.faces():
        pts = verts[np.asarray(face)]
        total += _tet_contrib(pts[0], pts[1], pts[2])
        if len(face) == 4:
            total += _tet_contrib(pts[0], pts[2], pts[3])
    return total


def _alignment_offsets(rings: np.ndarray) -> np.ndarray:
    """Cyclic index offset per ring that minimizes inter-ring twist."""
    s, n, _ = rings.shape
    offsets = np.zeros(s, dtype=int)
    for k in range(1, s):
        prev = rings[k - 1][(np.arange(n) + offsets[k - 1]) % n]
        costs = [
            np.linalg.norm(prev - rings[k][(np.arange(n) + o) % n], axis=1).sum()
            for o in range(n)
        ]
        offsets[k] = int(np.argmin(costs))
    return offsets


def build_surface_mesh(yarn: ReconstructedYarn) -> QuadSurfaceMesh:
    """Swept quad mesh over the yarn's sections.

    S sections give exactly 10 (S - 1) lateral quads and 2 * 10 cap
    triangles; ring correspondence picks the cyclic offset with least
    twist so the sweep never shears.
    """
    rings = np.stack([s.contour for s in yarn.sections])
    s = len(rings)
    offsets = _alignment_offsets(rings)
    aligned = np.stack(
        [rings[k][(np.arange(RING_N) + offsets[k]) % RING_N] for k in range(s)]
    )
    centers = np.array([sec.center for sec in yarn.sections])

    vertices = np.vstack([aligned.reshape(-1, 3), centers[0], centers[-1]])
    c0 = RING_N * s
    c1 = c0 + 1

    quads = []
    for k in range(s - 1):
        base_a = RING_N * k
        base_b = RING_N * (k + 1)
        for j in range(RING_N):
            jn = (j + 1) % RING_N
            quads.append((base_a + j, base_a + jn, base_b + jn, base_b + j))
    tris = []
    for j in range(RING_N):
        jn = (j + 1) % RING_N
        tris.append((c0, jn, j))  # start cap faces backward
    base_e = RING_N * (s - 1)
    for j in range(RING_N):
        jn = (j + 1) % RING_N
        tris.append((c1, base_e + j, base_e + jn))  # end cap faces forward

    mesh = QuadSurfaceMesh(
        vertices=vertices, quads=np.array(quads), cap_triangles=np.array(tris)
    )
    if enclosed_volume(mesh) < 0:
        # Ring orientation faced the caps inward; flip all faces.
        mesh = QuadSurfaceMesh(
            vertices=vertices,
            quads=np.array(quads)[:, ::-1],
            cap_triangles=np.array(tris)[:, ::-1],
        )
    if not is_watertight(mesh):
        raise MeshIntegrityError("swept surface has open or over-shared edges")
    return mesh


@dataclass(frozen=True)
class VolumeMesh:
    """Unstructured cell mesh: wedge and/or hexahedral cells."""

    vertices: np.ndarray
    wedges: np.ndarray
    hexes: np.ndarray
    wedge_labels: np.ndarray
    hex_labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        w = np.asarray(self.wedges, dtype=np.int64).reshape(-1, 6) if np.size(self.wedges) else np.empty((0, 6), np.int64)
        h = np.asarray(self.hexes, dtype=np.int64).reshape(-1, 8) if np.size(self.hexes) else np.empty((0, 8), np.int64)
        wl = np.asarray(self.wedge_labels, dtype=np.int64).reshape(-1)
        hl = np.asarray(self.hex_labels, dtype=np.int64).reshape(-1)
        if len(wl) != len(w) or len(hl) != len(h):
            raise MeshIntegrityError("cell labels must align with cells")
        for arr in (w, h):
            if arr.size and (arr.min() < 0 or arr.max() >= len(v)):
                raise MeshIntegrityError("cell index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "wedges", w)
        object.__setattr__(self, "hexes", h)
        object.__setattr__(self, "wedge_labels", wl)
        object.__setattr__(self, "hex_labels", hl)

    @property
    def n_cells(self) -> int:
        return len(self.wedges) + len(self.hexes)


def _wedge_volume(pts: np.ndarray) -> float:
    # Divergence theorem over the wedge's faces, quads split along (0, 2)
    # exactly like enclosed_volume, so per-yarn sums telescope.
    a0, a1, a2, b0, b1, b2 = pts
    total = _tet_contrib(a0, a2, a1)  # bottom triangle, outward = -axis
    total += _tet_contrib(b0, b1, b2)  # top triangle
    for (p, q), (r, s) in (((a0, a1), (b1, b0)), ((a1, a2), (b2, b1)), ((a2, a0), (b0, b2))):
        total += _tet_contrib(p, q, r)
        total += _tet_contrib(p, r, s)
    return total


def wedge_volumes(mesh: VolumeMesh) -> np.ndarray:
    return np.array([_wedge_volume(mesh.vertices[w]) for w in mesh.wedges])


def build_volume_mesh(yarn: ReconstructedYarn, label: int = 1) -> VolumeMesh:
    """Wedge mesh of one yarn: 10 wedges per segment around the axis.

    Shares its outer boundary with ``build_surface_mesh``, so the sum
    of wedge volumes matches the surface-enclosed volume.
    """
    rings = np.stack([s.contour for s in yarn.sections])
    s = len(rings)
    offsets = _alignment_offsets(rings)
    aligned = np.stack(
        [rings[k][(np.arange(RING_N) + offsets[k]) % RING_N] for k in range(s)]
    )
    centers = np.array([sec.center for sec in yarn.sections])
    vertices = np.vstack([aligned.reshape(-1, 3), centers])
    c_base = RING_N * s

    wedges = []
    for k in range(s - 1):
        a = RING_N * k
        b = RING_N * (k + 1)
        for j in range(RING_N):
            jn = (j + 1) % RING_N
            wedges.append((c_base + k, a + j, a + jn, c_base + k + 1, b + j, b + jn))
    wedges = np.array(wedges)
    mesh = VolumeMesh(
        vertices=vertices,
        wedges=wedges,
        hexes=np.empty((0, 8), np.int64),
        wedge_labels=np.full(len(wedges), label),
        hex_labels=np.empty(0, np.int64),
    )
    vols = wedge_volumes(mesh)
    if vols.sum() < 0:
        wedges = wedges[:, [0, 2, 1, 3, 5, 4]]
        mesh = VolumeMesh(
            vertices=vertices,
            wedges=wedges,
            hexes=np.empty((0, 8), np.int64),
            wedge_labels=np.full(len(wedges), label),
            hex_labels=np.empty(0, np.int64),
        )
        vols = wedge_volumes(mesh)
    if (vols <= 0).any():
        seg = int(np.argmax(vols <= 0)) // RING_N
        raise MeshIntegrityError(
            "inverted wedge cell between stations "
            f"{yarn.sections[seg].station:.3f} and {yarn.sections[seg + 1].station:.3f}"
        )
    return mesh


def build_composite_mesh(
    yarns,
    bbox: Box,
    cell_size: float,
    budget: int = DEFAULT_VOXEL_BUDGET,
) -> VolumeMesh:
    """Voxel composite mesh: hexahedral cells labeled matrix/yarn.

    Rasterizes the reconstructed yarns onto a coarse grid over ``bbox``
    and emits one hexahedron per cell; label 0 is matrix.
    """
    yarns = list(yarns)
    dims = compute_dims(bbox, cell_size)
    n_cells = int(np.prod([float(d) for d in dims]))
    if n_cells > budget:
        raise MeshIntegrityError(
            f"composite grid {dims} = {n_cells} cells exceeds budget {budget}"
        )
    geoms = (
        (idx + 1, np.stack([s.contour for s in y.sections]), y.centers)
        for idx, y in enumerate(yarns)
    )
    grid = paint_labels(geoms, dims, bbox.lo, cell_size)

    nx, ny, nz = dims
    xs = bbox.lo[0] + np.arange(nx + 1) * cell_size
    ys = bbox.lo[1] + np.arange(ny + 1) * cell_size
    zs = bbox.lo[2] + np.arange(nz + 1) * cell_size
    px, py, pz = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.stack([px, py, pz], axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ii, jj, kk = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    ii, jj, kk = ii.reshape(-1), jj.reshape(-1), kk.reshape(-1)
    hexes = np.column_stack(
        [
            vid(ii, jj, kk),
            vid(ii + 1, jj, kk),
            vid(ii + 1, jj + 1, kk),
            vid(ii, jj + 1, kk),
            vid(ii, jj, kk + 1),
            vid(ii + 1, jj, kk + 1),
            vid(ii + 1, jj + 1, kk + 1),
            vid(ii, jj + 1, kk + 1),
        ]
    )
    return VolumeMesh(
        vertices=vertices,
        wedges=np.empty((0, 6), np.int64),
        hexes=hexes,
        wedge_labels=np.empty(0, np.int64),
        hex_labels=grid.reshape(-1).astype(np.int64),
    )


def reconstruct_yarns(
    dsets,
    d_gate: float,
    min_length: int = 4,
    max_gap: int = 10,
    min_span: float = 0.0,
    n_controls: int | None = None,
) -> tuple[list, list]:
    """Track, complete and lift every yarn of one or more datasets.

    Returns (yarns, tracks); tracks keep the gap bookkeeping, including
    boundary gaps that were reported rather than filled.
    """
    yarns = []
    tracks_out = []
    for dset in dsets:
        tracked = track_yarns(
            dset,
            d_gate=d_gate,
            min_length=min_length,
            max_gap=max_gap,
            min_span=min_span,
        )
        for track in tracked:
            completed = complete_missing(track)
            yarns.append(lift_and_fit(completed, n_controls=n_controls))
            tracks_out.append(completed)
    return yarns, tracks_out

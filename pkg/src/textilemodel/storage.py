"""JSON persistence for textile models and reconstructed yarns.

All writers go through an atomic temp-file rename so a crash never
leaves a half-written artifact, and every file carries a ``schema``
field for forward compatibility.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

from .errors import ConfigError
from .geometry import BSplineCurve, CrossSection
from .reconstruct import ReconstructedYarn
from .synthgen import FiberSpec, TextileModel, WeaveSpec, YarnModel

SCHEMA = 1


def atomic_write_text(path, text: str) -> None:
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = str(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(payload: dict, path) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _curve_to_dict(curve: BSplineCurve) -> dict:
    return {
        "degree": curve.degree,
        "knots": curve.knots.tolist(),
        "control_points": curve.control_points.tolist(),
    }


def _curve_from_dict(d: dict) -> BSplineCurve:
    return BSplineCurve(
        control_points=np.array(d["control_points"], dtype=float),
        degree=int(d["degree"]),
        knots=np.array(d["knots"], dtype=float),
    )


def _section_to_dict(s: CrossSection) -> dict:
    return {
        "station": s.station,
        "center": s.center.tolist(),
        "contour": s.contour.tolist(),
    }


def _section_from_dict(d: dict) -> CrossSection:
    return CrossSection(
        contour=np.array(d["contour"], dtype=float),
        center=np.array(d["center"], dtype=float),
        station=float(d["station"]),
    )


def save_model(model: TextileModel, path) -> None:
    spec = model.spec
    payload = {
        "schema": SCHEMA,
        "kind": "textile_model",
        "spec": {
            "n_warp_columns": spec.n_warp_columns,
            "n_weft_columns": spec.n_weft_columns,
            "warp_sequence": list(spec.warp_sequence),
            "weft_sequence": list(spec.weft_sequence),
            "yarn_spacing": list(spec.yarn_spacing),
            "crimp_amplitude": spec.crimp_amplitude,
            "ellipse_a": spec.ellipse_a,
            "ellipse_b": spec.ellipse_b,
            "seed": spec.seed,
        },
        "thickness": model.thickness,
        "bbox": {"lo": model.bbox.lo.tolist(), "hi": model.bbox.hi.tolist()},
        "fibers": None
        if model.fibers is None
        else {
            "fiber_radius": model.fibers.fiber_radius,
            "fibers_per_yarn": model.fibers.fibers_per_yarn,
        },
        "yarns": [
            {
                "id": y.yarn_id,
                "family": y.family,
                "path": _curve_to_dict(y.path),
                "sections": [_section_to_dict(s) for s in y.sections],
            }
            for y in model.yarns
        ],
    }
    dump_json(payload, path)


def load_model(path) -> TextileModel:
    from .geometry import Box

    d = read_json(path)
    if d.get("kind") != "textile_model":
        raise ConfigError(f"{path}: not a textile model file")
    spec = WeaveSpec(
        n_warp_columns=d["spec"]["n_warp_columns"],
        n_weft_columns=d["spec"]["n_weft_columns"],
        warp_sequence=tuple(d["spec"]["warp_sequence"]),
        weft_sequence=tuple(d["spec"]["weft_sequence"]),
        yarn_spacing=tuple(d["spec"]["yarn_spacing"]),
        crimp_amplitude=d["spec"]["crimp_amplitude"],
        ellipse_a=d["spec"]["ellipse_a"],
        ellipse_b=d["spec"]["ellipse_b"],
        seed=d["spec"]["seed"],
    )
    fibers = None
    if d.get("fibers"):
        fibers = FiberSpec(
            fiber_radius=d["fibers"]["fiber_radius"],
            fibers_per_yarn=d["fibers"]["fibers_per_yarn"],
        )
    yarns = tuple(
        YarnModel(
            yarn_id=yd["id"],
            family=yd["family"],
            path=_curve_from_dict(yd["path"]),
            sections=tuple(_section_from_dict(sd) for sd in yd["sections"]),
        )
        for yd in d["yarns"]
    )
    return TextileModel(
        spec=spec,
        yarns=yarns,
        bbox=Box(lo=np.array(d["bbox"]["lo"]), hi=np.array(d["bbox"]["hi"])),
        thickness=float(d["thickness"]),
        fibers=fibers,
    )


def save_yarns(yarns, path, voxel_size: float, origin, boundary_gaps=None) -> None:
    """Persist reconstructed yarns; ``boundary_gaps`` aligns with yarns."""
    yarns = list(yarns)
    gaps = list(boundary_gaps) if boundary_gaps is not None else [[] for _ in yarns]
    if len(gaps) != len(yarns):
        raise ConfigError("boundary_gaps must align with yarns")
    payload = {
        "schema": SCHEMA,
        "kind": "reconstructed_yarns",
        "voxel_size": float(voxel_size),
        "origin": np.asarray(origin, dtype=float).tolist(),
        "yarns": [
            {
                "family": y.family,
                "axis": y.axis,
                "path": _curve_to_dict(y.path),
                "sections": [_section_to_dict(s) for s in y.sections],
                "completed": list(y.completed_flags),
                "boundary_gaps": [list(g) for g in gap],
            }
            for y, gap in zip(yarns, gaps)
        ],
    }
    dump_json(payload, path)


def load_yarns(path):
    """Returns (yarns, voxel_size, origin, boundary_gaps)."""
    d = read_json(path)
    if d.get("kind") != "reconstructed_yarns":
        raise ConfigError(f"{path}: not a reconstructed yarns file")
    yarns = []
    gaps = []
    for yd in d["yarns"]:
        yarns.append(
            ReconstructedYarn(
                family=yd["family"],
                axis=yd["axis"],
                path=_curve_from_dict(yd["path"]),
                sections=tuple(_section_from_dict(sd) for sd in yd["sections"]),
                completed_flags=tuple(bool(f) for f in yd["completed"]),
            )
        )
        gaps.append([tuple(g) for g in yd["boundary_gaps"]])
    return yarns, float(d["voxel_size"]), np.array(d["origin"]), gaps

"""Command-line interface.

``textile <subcommand>`` wraps one pipeline stage each, plus
``pipeline`` for the full run.  Exit codes: 0 success, 2 configuration
or argument error, 3 missing or unreadable input file, 10 + k for a
failure inside pipeline stage k.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, StageError, TextileError
from .geometry import Box
from .meshfiles import write_obj, write_vtk
from .pipeline import (
    PipelineConfig,
    load_config,
    read_detection_pair,
    run_pipeline,
    stage_index,
    stage_seed,
)
from .reconstruct import (
    build_composite_mesh,
    build_surface_mesh,
    build_volume_mesh,
    reconstruct_yarns,
)
from .segmenter import DegradeParams
from .segmenter import degrade as degrade_detections
from .segmenter import detect_batch, filter_transverse, read_detections, write_detections
from .storage import dump_json, load_model, load_yarns, read_json, save_model, save_yarns
from .synthgen import compaction_sequence, fiber_spec_for_target_vf, generate_interlock, with_fibers
from .validate import match_and_assess_paths, vf_distribution, write_report
from .voxelizer import (
    RenderParams,
    compute_dims,
    extract_slices,
    load_volume,
    render_pseudo_ct,
    save_volume,
    slice_count,
    voxelize,
)

log = logging.getLogger(__name__)


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    model = generate_interlock(
        cfg.weave,
        n_sections_warp=cfg.n_sections_warp,
        n_sections_weft=cfg.n_sections_weft,
        z_margin=cfg.z_margin,
    )
    if cfg.target_vf is not None:
        model = with_fibers(
            model, fiber_spec_for_target_vf(model, cfg.target_vf, cfg.fibers_per_yarn)
        )
    save_model(model, out / "model.json")
    print(f"wrote {out / 'model.json'}: {len(model.yarns)} yarns, thickness {model.thickness:g}")
    return 0


def cmd_compact(args) -> int:
    model = load_model(args.model)
    out = _out_dir(args)
    seq = compaction_sequence(model, args.thickness, args.steps)
    for k, m in enumerate(seq):
        save_model(m, out / f"model_{k:02d}.json")
    dump_json(
        {
            "schema": 1,
            "kind": "compaction_schedule",
            "thickness": [m.thickness for m in seq],
        },
        out / "compaction.json",
    )
    print(
        f"wrote {len(seq)} models to {out}: thickness "
        f"{seq[0].thickness:g} -> {seq[-1].thickness:g}"
    )
    return 0


def cmd_voxelize(args) -> int:
    model = load_model(args.model)
    dims = compute_dims(model.bbox, args.voxel_size)
    if args.dims_only:
        n_xz = slice_count(dims, "xz")
        n_yz = slice_count(dims, "yz")
        print(
            f"dims {dims[0]}x{dims[1]}x{dims[2]}  "
            f"slices xz {n_xz} + yz {n_yz} = {n_xz + n_yz}"
        )
        return 0
    out = _out_dir(args)
    vol = voxelize(model, voxel_size=args.voxel_size)
    raw, meta = save_volume(vol, out / "labels")
    print(f"wrote {raw} and {meta}: dims {vol.dims}")
    return 0


def cmd_render(args) -> int:
    cfg = _config_from_args(args)
    vol = load_volume(args.labels)
    out = _out_dir(args)
    params = dataclasses.replace(cfg.render, seed=stage_seed(cfg.seed, "render"))
    ct = render_pseudo_ct(vol, params)
    raw, meta = save_volume(ct, out / "pseudo_ct")
    print(f"wrote {raw} and {meta}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config_from_args(args)
    vol = load_volume(args.labels)
    out = _out_dir(args)
    axes = [args.axis] if args.axis else ["yz", "xz"]
    for axis in axes:
        ds = detect_batch(extract_slices(vol, axis), min_area=cfg.reconstruct.min_area)
        ds = filter_transverse(ds, max_aspect=cfg.reconstruct.max_aspect)
        p = out / f"detections_{axis}.jsonl"
        write_detections(ds, p)
        print(f"wrote {p}: {ds.count()} detections over {ds.n_slices} slices")
    return 0


def cmd_degrade(args) -> int:
    cfg = _config_from_args(args)
    ds = read_detections(args.detections)
    params = DegradeParams(
        dropout_rate=args.dropout if args.dropout is not None else cfg.degrade.dropout_rate,
        jitter_sigma=args.jitter if args.jitter is not None else cfg.degrade.jitter_sigma,
        confidence_floor=cfg.degrade.confidence_floor,
        seed=stage_seed(cfg.seed, f"degrade:{ds.axis}"),
    )
    dd = degrade_detections(ds, params)
    out = _out_dir(args)
    p = out / (Path(args.detections).stem + "_degraded.jsonl")
    write_detections(dd, p)
    print(f"wrote {p}: kept {dd.count()} of {ds.count()} detections")
    return 0


def cmd_reconstruct(args) -> int:
    cfg = _config_from_args(args)
    labels_meta = read_json(Path(args.labels).with_suffix(".json")) if args.labels else None
    dsets = read_detection_pair(args.detections, labels_meta)
    gate = args.gate if args.gate is not None else cfg.gate()
    yarns, tracks = reconstruct_yarns(
        dsets,
        d_gate=gate,
        min_length=cfg.reconstruct.min_length,
        max_gap=cfg.reconstruct.max_gap,
        min_span=cfg.reconstruct.min_span,
        n_controls=cfg.reconstruct.n_controls,
    )
    out = _out_dir(args)
    vs = dsets[0].voxel_size
    origin = dsets[0].origin
    save_yarns(
        yarns,
        out / "yarns.json",
        voxel_size=vs,
        origin=origin,
        boundary_gaps=[t.boundary_gaps for t in tracks],
    )
    print(f"wrote {out / 'yarns.json'}: {len(yarns)} yarns")
    if not args.no_meshes:
        mesh_dir = out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for i, y in enumerate(yarns):
            write_obj(build_surface_mesh(y), mesh_dir / f"yarn_{i:03d}.obj")
            write_vtk(build_volume_mesh(y, label=i + 1), mesh_dir / f"yarn_{i:03d}.vtk", title=f"yarn {i}")
        if labels_meta is not None:
            lo = np.array(labels_meta["origin"], dtype=float)
            hi = lo + np.array(labels_meta["dims"]) * labels_meta["voxel_size"]
        else:
            pts = np.concatenate([y.centers for y in yarns])
            lo = pts.min(axis=0) - 4 * cfg.reconstruct.composite_cell
            hi = pts.max(axis=0) + 4 * cfg.reconstruct.composite_cell
        comp = build_composite_mesh(
            yarns, Box(lo=lo, hi=hi), cell_size=cfg.reconstruct.composite_cell
        )
        write_vtk(comp, mesh_dir / "composite.vtk", title="voxel composite")
        print(f"wrote meshes for {len(yarns)} yarns under {mesh_dir}")
    return 0


def cmd_validate(args) -> int:
    cfg = _config_from_args(args)
    model = load_model(args.model)
    yarns, vs, _origin, _gaps = load_yarns(args.yarns)
    out = _out_dir(args)
    report = match_and_assess_paths(
        model,
        yarns,
        n_samples=cfg.validate.n_samples,
        voxel_size_um=cfg.validate.voxel_size_um * vs,
    )
    vf = vf_distribution(yarns, model.fibers, n_bins=cfg.validate.n_bins) if model.fibers else None
    write_report(report, vf, out / "report.json", out / "report.txt")
    worst = report.max_distance()
    print(
        f"wrote {out / 'report.json'}: {len(report.matches)} matches, "
        f"max symmetric Hausdorff {worst:.3f} voxels"
    )
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    manifest = run_pipeline(cfg, out)
    print(
        f"pipeline done: {len(manifest.stages)} stages, "
        f"{len(manifest.files)} artifacts in {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textile",
        description="Synthetic textile modeling and slice-based yarn reconstruction.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", "-o", default=".", help="output directory")

    p = sub.add_parser("generate", help="create a synthetic interlock model")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("compact", help="kinematic compaction sequence")
    common(p)
    p.add_argument("--model", "-m", required=True, help="model JSON file")
    p.add_argument("--thickness", type=float, required=True, help="final thickness")
    p.add_argument("--steps", type=int, default=12, help="number of steps")
    p.set_defaults(fn=cmd_compact)

    p = sub.add_parser("voxelize", help="rasterize a model into a label volume")
    common(p)
    p.add_argument("--model", "-m", required=True, help="model JSON file")
    p.add_argument("--voxel-size", type=float, default=1.0, help="voxel edge length")
    p.add_argument(
        "--dims-only",
        action="store_true",
        help="print grid dims and slice counts without materializing",
    )
    p.set_defaults(fn=cmd_voxelize)

    p = sub.add_parser("render", help="render a pseudo-CT gray volume from labels")
    common(p)
    p.add_argument("--labels", "-l", required=True, help="label volume base path")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("segment", help="detect yarn sections per slice")
    common(p)
    p.add_argument("--labels", "-l", required=True, help="label volume base path")
    p.add_argument("--axis", choices=("xz", "yz"), default=None, help="one axis only")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("degrade", help="apply dropout and jitter to detections")
    common(p)
    p.add_argument("--detections", "-d", required=True, help="detections JSONL file")
    p.add_argument("--dropout", type=float, default=None, help="dropout rate")
    p.add_argument("--jitter", type=float, default=None, help="jitter sigma, pixels")
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("reconstruct", help="track, complete, fit and mesh yarns")
    common(p)
    p.add_argument(
        "--detections",
        "-d",
        nargs="+",
        required=True,
        help="one or more detections JSONL files",
    )
    p.add_argument("--labels", "-l", default=None, help="label volume base path (geometry)")
    p.add_argument("--gate", type=float, default=None, help="tracking gate, pixels")
    p.add_argument("--no-meshes", action="store_true", help="skip mesh export")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("validate", help="compare reconstructed yarns to a model")
    common(p)
    p.add_argument("--model", "-m", required=True, help="reference model JSON")
    p.add_argument("--yarns", "-y", required=True, help="reconstructed yarns JSON")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("pipeline", help="run all stages and write a manifest")
    common(p)
    p.set_defaults(fn=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except StageError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 10 + exc.stage_index
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except TextileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        try:
            return 10 + stage_index(args.command)
        except ConfigError:
            return 1


if __name__ == "__main__":
    raise SystemExit(main(argv=sys.argv[1:]))

"""Pipeline configuration, stage orchestration, and the run manifest.

Stages keep fixed indices whether or not they run: 1 generate,
2 compact, 3 voxelize, 4 render, 5 segment, 6 degrade, 7 reconstruct,
8 validate.  A failure inside stage k surfaces as StageError with that
index so the CLI can exit with 10 + k.  Every stage derives its own
RNG seed from the global seed, and the manifest with content digests
of all artifacts is written last.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, StageError
from .reconstruct import (
    build_composite_mesh,
    build_surface_mesh,
    build_volume_mesh,
    reconstruct_yarns,
)
from .meshfiles import write_obj, write_vtk
from .segmenter import (
    DegradeParams,
    degrade,
    detect_batch,
    filter_transverse,
    read_detections,
    write_detections,
)
from .storage import dump_json, read_json, save_model, save_yarns, sha256_file
from .synthgen import (
    WeaveSpec,
    compaction_sequence,
    fiber_spec_for_target_vf,
    generate_interlock,
    with_fibers,
)
from .validate import match_and_assess_paths, vf_distribution, write_report
from .voxelizer import (
    DEFAULT_VOXEL_BUDGET,
    RenderParams,
    extract_slices,
    render_pseudo_ct,
    save_volume,
    voxelize,
)

log = logging.getLogger(__name__)

STAGES = (
    "generate",
    "compact",
    "voxelize",
    "render",
    "segment",
    "degrade",
    "reconstruct",
    "validate",
)


def stage_index(name: str) -> int:
    """Fixed 1-based index of a stage name."""
    try:
        return STAGES.index(name) + 1
    except ValueError:
        raise ConfigError(f"unknown stage {name!r}") from None


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage RNG seed derived from the global seed by hashing."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class DegradeConfig:
    enabled: bool = False
    dropout_rate: float = 0.0
    jitter_sigma: float = 0.0
    confidence_floor: float = 0.5


@dataclass(frozen=True)
class CompactionConfig:
    enabled: bool = False
    thickness_final: float | None = None
    n_steps: int = 12


@dataclass(frozen=True)
class ReconstructConfig:
    d_gate: float | None = None  # None: 1.5 * max(ellipse_a, ellipse_b) px
    min_length: int = 4
    max_gap: int = 10
    min_span: float = 0.5  # tracks must cover this fraction of slices
    max_aspect: float = 6.0
    min_area: int = 12
    n_controls: int | None = None
    composite_cell: float = 4.0
    write_meshes: bool = True


@dataclass(frozen=True)
class ValidateConfig:
    n_samples: int = 200
    n_bins: int = 20
    voxel_size_um: float = 20.0


def _default_weave() -> WeaveSpec:
    return WeaveSpec(
        n_warp_columns=4,
        n_weft_columns=4,
        warp_sequence=(2,),
        weft_sequence=(2,),
        yarn_spacing=(40.0, 40.0),
        crimp_amplitude=7.0,
        ellipse_a=6.0,
        ellipse_b=3.0,
    )


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    weave: WeaveSpec = field(default_factory=_default_weave)
    n_sections_warp: int = 38
    n_sections_weft: int = 49
    z_margin: float = 16.0
    target_vf: float | None = 0.6
    fibers_per_yarn: int = 1000
    voxel_size: float = 1.0
    voxel_budget: int = DEFAULT_VOXEL_BUDGET
    render: RenderParams = field(default_factory=RenderParams)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    compaction: CompactionConfig = field(default_factory=CompactionConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)

    def gate(self) -> float:
        if self.reconstruct.d_gate is not None:
            return self.reconstruct.d_gate
        return 1.5 * max(self.weave.ellipse_a, self.weave.ellipse_b) / self.voxel_size

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weave"]["warp_sequence"] = list(self.weave.warp_sequence)
        d["weave"]["weft_sequence"] = list(self.weave.weft_sequence)
        d["weave"]["yarn_spacing"] = list(self.weave.yarn_spacing)
        return d


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key {where}.{sorted(unknown)[0]}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad value under {where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a config from a plain dict; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    kwargs = {}
    if "weave" in data:
        w = dict(data.pop("weave"))
        for key in ("warp_sequence", "weft_sequence", "yarn_spacing"):
            if key in w:
                w[key] = tuple(w[key])
        kwargs["weave"] = _build(WeaveSpec, w, "weave")
    for key, cls in (
        ("render", RenderParams),
        ("degrade", DegradeConfig),
        ("compaction", CompactionConfig),
        ("reconstruct", ReconstructConfig),
        ("validate", ValidateConfig),
    ):
        if key in data:
            kwargs[key] = _build(cls, dict(data.pop(key)), key)
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")
    kwargs.update(data)
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path) -> PipelineConfig:
    return config_from_dict(read_json(path))


@dataclass(frozen=True)
class RunManifest:
    """Inventory of one pipeline run: config, timings, file digests."""

    seed: int
    config: dict
    stages: tuple
    files: tuple
    package_version: str = __version__
    created: str = ""
    schema: int = 1

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "kind": "run_manifest",
            "package_version": self.package_version,
            "created": self.created,
            "seed": self.seed,
            "config": self.config,
            "stages": [dict(s) for s in self.stages],
            "files": [dict(f) for f in self.files],
        }


def verify_manifest(path) -> list:
    """Re-hash the files listed in a manifest; returns mismatch names."""
    d = read_json(path)
    base = Path(path).parent
    bad = []
    for entry in d.get("files", []):
        p = base / entry["path"]
        if not p.exists() or sha256_file(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


class _Run:
    """Mutable bookkeeping for one pipeline invocation."""

    def __init__(self, config: PipelineConfig, out_dir):
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stage_records = []
        self.artifacts = []

    def add_artifact(self, path) -> None:
        self.artifacts.append(Path(path))

    def run_stage(self, name: str, fn):
        k = stage_index(name)
        t0 = time.perf_counter()
        before = len(self.artifacts)
        try:
            result = fn()
        except Exception as exc:
            raise StageError(k, name, exc) from exc
        self.stage_records.append(
            {
                "name": name,
                "index": k,
                "seconds": round(time.perf_counter() - t0, 6),
                "artifacts": [str(p.relative_to(self.out)) for p in self.artifacts[before:]],
            }
        )
        log.info("stage %d %s done in %.3fs", k, name, self.stage_records[-1]["seconds"])
        return result

    def manifest(self) -> RunManifest:
        files = []
        for p in sorted(set(self.artifacts)):
            files.append(
                {
                    "path": str(p.relative_to(self.out)),
                    "bytes": p.stat().st_size,
                    "sha256": sha256_file(p),
                }
            )
        return RunManifest(
            seed=self.config.seed,
            config=self.config.to_dict(),
            stages=tuple(self.stage_records),
            files=tuple(files),
            created=datetime.now(timezone.utc).isoformat(),
        )


def run_pipeline(config: PipelineConfig, out_dir) -> RunManifest:
    """Run every enabled stage and write the manifest last.

    Artifacts land in ``out_dir``: model.json, optional compaction
    models, labels/pseudo-CT volumes, per-axis detection files, the
    reconstructed yarns, meshes under meshes/, and the validation
    report.  Returns the manifest (also written as manifest.json).
    """
    cfg = config
    run = _Run(cfg, out_dir)
    out = run.out

    def do_generate():
        model = generate_interlock(
            cfg.weave,
            n_sections_warp=cfg.n_sections_warp,
            n_sections_weft=cfg.n_sections_weft,
            z_margin=cfg.z_margin,
        )
        if cfg.target_vf is not None:
            fibers = fiber_spec_for_target_vf(model, cfg.target_vf, cfg.fibers_per_yarn)
            model = with_fibers(model, fibers)
        save_model(model, out / "model.json")
        run.add_artifact(out / "model.json")
        return model

    model = run.run_stage("generate", do_generate)

    if cfg.compaction.enabled:

        def do_compact():
            if cfg.compaction.thickness_final is None:
                raise ConfigError("compaction.thickness_final is required")
            seq = compaction_sequence(
                model, cfg.compaction.thickness_final, cfg.compaction.n_steps
            )
            for k, m in enumerate(seq):
                p = out / f"model_{k:02d}.json"
                save_model(m, p)
                run.add_artifact(p)
            dump_json(
                {
                    "schema": 1,
                    "kind": "compaction_schedule",
                    "thickness": [m.thickness for m in seq],
                },
                out / "compaction.json",
            )
            run.add_artifact(out / "compaction.json")
            return seq[-1]

        model = run.run_stage("compact", do_compact)

    def do_voxelize():
        vol = voxelize(model, voxel_size=cfg.voxel_size, budget=cfg.voxel_budget)
        for p in save_volume(vol, out / "labels"):
            run.add_artifact(p)
        return vol

    labels = run.run_stage("voxelize", do_voxelize)

    def do_render():
        params = dataclasses.replace(cfg.render, seed=stage_seed(cfg.seed, "render"))
        ct = render_pseudo_ct(labels, params)
        for p in save_volume(ct, out / "pseudo_ct"):
            run.add_artifact(p)
        return ct

    run.run_stage("render", do_render)

    def do_segment():
        dsets = {}
        for axis in ("yz", "xz"):
            ds = detect_batch(extract_slices(labels, axis), min_area=cfg.reconstruct.min_area)
            ds = filter_transverse(ds, max_aspect=cfg.reconstruct.max_aspect)
            p = out / f"detections_{axis}.jsonl"
            write_detections(ds, p)
            run.add_artifact(p)
            dsets[axis] = ds
        return dsets

    dsets = run.run_stage("segment", do_segment)

    if cfg.degrade.enabled:

        def do_degrade():
            degraded = {}
            for axis, ds in dsets.items():
                params = DegradeParams(
                    dropout_rate=cfg.degrade.dropout_rate,
                    jitter_sigma=cfg.degrade.jitter_sigma,
                    confidence_floor=cfg.degrade.confidence_floor,
                    seed=stage_seed(cfg.seed, f"degrade:{axis}"),
                )
                dd = degrade(ds, params)
                p = out / f"detections_{axis}_degraded.jsonl"
                write_detections(dd, p)
                run.add_artifact(p)
                degraded[axis] = dd
            return degraded

        dsets = run.run_stage("degrade", do_degrade)

    def do_reconstruct():
        yarns, tracks = reconstruct_yarns(
            dsets.values(),
            d_gate=cfg.gate(),
            min_length=cfg.reconstruct.min_length,
            max_gap=cfg.reconstruct.max_gap,
            min_span=cfg.reconstruct.min_span,
            n_controls=cfg.reconstruct.n_controls,
        )
        save_yarns(
            yarns,
            out / "yarns.json",
            voxel_size=labels.voxel_size,
            origin=labels.origin,
            boundary_gaps=[t.boundary_gaps for t in tracks],
        )
        run.add_artifact(out / "yarns.json")
        if cfg.reconstruct.write_meshes:
            mesh_dir = out / "meshes"
            mesh_dir.mkdir(exist_ok=True)
            for i, y in enumerate(yarns):
                sp = mesh_dir / f"yarn_{i:03d}.obj"
                write_obj(build_surface_mesh(y), sp)
                run.add_artifact(sp)
                vp = mesh_dir / f"yarn_{i:03d}.vtk"
                write_vtk(build_volume_mesh(y, label=i + 1), vp, title=f"yarn {i}")
                run.add_artifact(vp)
            from .geometry import Box

            lo = labels.origin
            hi = lo + np.array(labels.dims) * labels.voxel_size
            comp = build_composite_mesh(
                yarns,
                Box(lo=lo, hi=hi),
                cell_size=cfg.reconstruct.composite_cell,
                budget=cfg.voxel_budget,
            )
            cp = mesh_dir / "composite.vtk"
            write_vtk(comp, cp, title="voxel composite")
            run.add_artifact(cp)
        return yarns

    yarns = run.run_stage("reconstruct", do_reconstruct)

    def do_validate():
        report = match_and_assess_paths(
            model,
            yarns,
            n_samples=cfg.validate.n_samples,
            voxel_size_um=cfg.validate.voxel_size_um * cfg.voxel_size,
        )
        vf = None
        if model.fibers is not None:
            vf = vf_distribution(yarns, model.fibers, n_bins=cfg.validate.n_bins)
        write_report(report, vf, out / "report.json", out / "report.txt")
        run.add_artifact(out / "report.json")
        run.add_artifact(out / "report.txt")
        return report

    run.run_stage("validate", do_validate)

    manifest = run.manifest()
    dump_json(manifest.to_dict(), out / "manifest.json")
    return manifest


def read_detection_pair(paths, labels_meta=None):
    """Load detection files for reconstruction outside the pipeline.

    ``labels_meta`` (a labels sidecar dict) supplies voxel size, origin
    and exact slice counts; without it both default and trailing empty
    slices are inferred from the records.
    """
    dsets = []
    for p in paths:
        kwargs = {}
        if labels_meta is not None:
            dims = labels_meta["dims"]
            axis = None
            with open(p) as fh:
                for line in fh:
                    if line.strip():
                        axis = json.loads(line)["axis"]
                        break
            if axis is not None:
                kwargs["axis"] = axis
                kwargs["n_slices"] = dims[1] if axis == "xz" else dims[0]
            kwargs["voxel_size"] = labels_meta["voxel_size"]
            kwargs["origin"] = labels_meta["origin"]
        dsets.append(read_detections(p, **kwargs))
    return dsets

"""Pipeline orchestration, manifest, persistence formats, and the CLI."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from textilemodel import __version__
from textilemodel.cli import main
from textilemodel.errors import ConfigError
from textilemodel.meshfiles import read_obj, write_obj, write_vtk
from textilemodel.pipeline import (
    STAGES,
    PipelineConfig,
    config_from_dict,
    load_config,
    run_pipeline,
    stage_index,
    stage_seed,
    verify_manifest,
)
from textilemodel.reconstruct import build_surface_mesh, build_volume_mesh, reconstruct_yarns
from textilemodel.segmenter import DetectionSet, SectionDetection
from textilemodel.storage import load_model, load_yarns, read_json, save_model, save_yarns
from textilemodel.synthgen import generate_interlock

SMALL = {
    "seed": 3,
    "weave": {
        "n_warp_columns": 2,
        "n_weft_columns": 2,
        "warp_sequence": [1],
        "weft_sequence": [1],
        "yarn_spacing": [30.0, 30.0],
        "crimp_amplitude": 6.0,
        "ellipse_a": 5.0,
        "ellipse_b": 2.5,
    },
    "n_sections_warp": 20,
    "n_sections_weft": 20,
}


@pytest.fixture(scope="module")
def small_cfg():
    return config_from_dict(SMALL)


@pytest.fixture(scope="module")
def small_run(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    manifest = run_pipeline(small_cfg, out)
    return out, manifest


class TestConfig:
    def test_defaults_round_trip_through_dict(self):
        cfg = PipelineConfig()
        again = config_from_dict(cfg.to_dict())
        assert again == cfg

    def test_small_dict_round_trips(self, small_cfg):
        assert config_from_dict(small_cfg.to_dict()) == small_cfg

    def test_gate_defaults_to_largest_semiaxis(self, small_cfg):
        assert small_cfg.gate() == pytest.approx(1.5 * 5.0)

    def test_explicit_gate_wins(self):
        cfg = config_from_dict({"reconstruct": {"d_gate": 4.0}})
        assert cfg.gate() == 4.0

    def test_unknown_top_level_key_is_an_error(self):
        with pytest.raises(ConfigError, match="unknown key bogus"):
            config_from_dict({"bogus": 1})

    def test_unknown_nested_key_names_the_section(self):
        with pytest.raises(ConfigError, match=r"unknown key weave\.bogus_field"):
            config_from_dict({"weave": {"bogus_field": 1}})
        with pytest.raises(ConfigError, match=r"unknown key reconstruct\.gate"):
            config_from_dict({"reconstruct": {"gate": 4.0}})

    def test_non_object_root_is_an_error(self):
        with pytest.raises(ConfigError, match="root"):
            config_from_dict([1, 2, 3])

    def test_load_config_reads_json_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(SMALL))
        assert load_config(p) == config_from_dict(SMALL)

    def test_min_span_must_be_a_fraction(self):
        from textilemodel.reconstruct import track_yarns

        dset = DetectionSet(axis="yz", per_slice=[[]], voxel_size=1.0, origin=(0, 0, 0))
        with pytest.raises(ConfigError, match="min_span"):
            track_yarns(dset, d_gate=5.0, min_span=1.5)


class TestStageNumbering:
    def test_stage_names_and_order_are_fixed(self):
        assert STAGES == (
            "generate",
            "compact",
            "voxelize",
            "render",
            "segment",
            "degrade",
            "reconstruct",
            "validate",
        )

    def test_stage_index_is_one_based(self):
        assert stage_index("generate") == 1
        assert stage_index("voxelize") == 3
        assert stage_index("reconstruct") == 7
        assert stage_index("validate") == 8

    def test_unknown_stage_rejected(self):
        with pytest.raises(ConfigError):
            stage_index("transmogrify")

    def test_stage_seed_is_deterministic(self):
        assert stage_seed(3, "render") == stage_seed(3, "render")

    def test_stage_seed_separates_stages_and_seeds(self):
        seeds = {stage_seed(s, name) for s in (0, 1, 2) for name in STAGES}
        assert len(seeds) == 3 * len(STAGES)
        assert all(0 <= s < 2**64 for s in seeds)

    def test_disabled_stages_keep_fixed_indices(self, small_run):
        _, manifest = small_run
        by_name = {s["name"]: s["index"] for s in manifest.stages}
        # compact and degrade are off in the small config
        assert "compact" not in by_name and "degrade" not in by_name
        assert by_name["voxelize"] == 3
        assert by_name["reconstruct"] == 7

    def test_all_stages_run_when_enabled(self, tmp_path):
        cfg = config_from_dict(
            {
                **SMALL,
                "seed": 5,
                "compaction": {"enabled": True, "thickness_final": 44.1, "n_steps": 3},
                "degrade": {"enabled": True, "dropout_rate": 0.1, "jitter_sigma": 0.2},
                "reconstruct": {"write_meshes": False},
            }
        )
        manifest = run_pipeline(cfg, tmp_path)
        assert [(s["index"], s["name"]) for s in manifest.stages] == list(
            enumerate(STAGES, start=1)
        )
        names = {f["path"] for f in manifest.files}
        assert {"model_00.json", "model_03.json", "compaction.json"} <= names
        assert "detections_yz_degraded.jsonl" in names


class TestRunPipeline:
    def test_expected_artifacts_exist(self, small_run):
        out, manifest = small_run
        names = {f["path"] for f in manifest.files}
        expected = {
            "model.json",
            "labels.raw",
            "labels.json",
            "pseudo_ct.raw",
            "pseudo_ct.json",
            "detections_yz.jsonl",
            "detections_xz.jsonl",
            "yarns.json",
            "report.json",
            "report.txt",
            "meshes/composite.vtk",
        }
        assert expected <= names
        assert sum(1 for n in names if n.endswith(".obj")) == 4
        for f in manifest.files:
            assert (out / f["path"]).stat().st_size == f["bytes"]

    def test_manifest_records_config_and_version(self, small_run, small_cfg):
        out, manifest = small_run
        d = read_json(out / "manifest.json")
        assert d["kind"] == "run_manifest"
        assert d["schema"] == 1
        assert d["package_version"] == __version__
        assert d["seed"] == 3
        assert d["config"] == small_cfg.to_dict()
        assert [s["name"] for s in d["stages"]] == [s["name"] for s in manifest.stages]

    def test_stage_timings_are_recorded(self, small_run):
        _, manifest = small_run
        assert all(s["seconds"] >= 0 for s in manifest.stages)
        assert all(isinstance(s["artifacts"], list) for s in manifest.stages)

    def test_verify_manifest_passes_then_catches_tampering(self, small_run):
        out, _ = small_run
        assert verify_manifest(out / "manifest.json") == []
        target = out / "report.txt"
        original = target.read_bytes()
        try:
            target.write_bytes(original + b"x")
            assert verify_manifest(out / "manifest.json") == ["report.txt"]
        finally:
            target.write_bytes(original)

    def test_report_matches_every_yarn(self, small_run):
        out, _ = small_run
        rep = read_json(out / "report.json")
        assert rep["paths"]["unmatched_reference"] == []
        assert rep["paths"]["unmatched_yarns"] == []
        assert len(rep["paths"]["matches"]) == 4
        assert all(m["d_symmetric"] < 2.0 for m in rep["paths"]["matches"])
        vf = rep["fiber_volume_fraction"]
        assert 0.0 < vf["mean"] <= 1.0

    def test_rerun_is_byte_identical_outside_manifest(self, small_cfg, small_run, tmp_path):
        out_a, man_a = small_run
        man_b = run_pipeline(small_cfg, tmp_path)
        files_a = {f["path"]: f["sha256"] for f in man_a.files}
        files_b = {f["path"]: f["sha256"] for f in man_b.files}
        assert files_a == files_b

        def stripped(man):
            d = man.to_dict()
            d.pop("created")
            for s in d["stages"]:
                s.pop("seconds")
            return d

        assert stripped(man_a) == stripped(man_b)


def toy_model():
    spec = config_from_dict(SMALL).weave
    return generate_interlock(spec, n_sections_warp=12, n_sections_weft=12, z_margin=10.0)


class TestModelStorage:
    def test_model_round_trips_exactly(self, tmp_path):
        model = toy_model()
        p = tmp_path / "model.json"
        save_model(model, p)
        again = load_model(p)
        assert len(again.yarns) == len(model.yarns)
        for a, b in zip(model.yarns, again.yarns):
            assert a.yarn_id == b.yarn_id and a.family == b.family
            np.testing.assert_array_equal(a.path.control_points, b.path.control_points)
            np.testing.assert_array_equal(a.path.knots, b.path.knots)
            for sa, sb in zip(a.sections, b.sections):
                np.testing.assert_array_equal(sa.contour, sb.contour)
                assert sa.station == sb.station
        assert again.thickness == model.thickness

    def test_wrong_kind_is_rejected(self, tmp_path):
        p = tmp_path / "odd.json"
        p.write_text(json.dumps({"schema": 1, "kind": "something_else"}))
        with pytest.raises(ConfigError, match="not a textile model"):
            load_model(p)

    def test_invalid_json_names_the_file(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError, match="broken.json"):
            load_model(p)


def disc(center_uv, radius=4.0):
    ang = np.linspace(0.0, 2 * np.pi, 10, endpoint=False)
    ring = np.column_stack([np.cos(ang), np.sin(ang)]) * radius + center_uv
    return ring


def straight_dset(n_slices=24, extra=None):
    """One straight yarn across every slice, plus optional extra blobs."""
    per_slice = []
    for i in range(n_slices):
        ring = disc((20.0, 30.0))
        dets = [
            SectionDetection(
                axis="yz", slice_index=i, contour=ring, center=ring.mean(axis=0)
            )
        ]
        if extra and i in extra:
            ring2 = disc(extra[i])
            dets.append(
                SectionDetection(
                    axis="yz", slice_index=i, contour=ring2, center=ring2.mean(axis=0)
                )
            )
        per_slice.append(dets)
    return DetectionSet(axis="yz", per_slice=per_slice, voxel_size=1.0, origin=(0, 0, 0))


class TestSpanFilter:
    def test_short_span_fragment_is_dropped(self):
        from textilemodel.reconstruct import track_yarns

        # a 6-slice blob far from the through yarn: a grazing cut
        extra = {i: (70.0, 70.0) for i in range(8, 14)}
        dset = straight_dset(extra=extra)
        loose = track_yarns(dset, d_gate=6.0, min_span=0.0)
        strict = track_yarns(dset, d_gate=6.0, min_span=0.5)
        assert len(loose) == 2
        assert len(strict) == 1
        assert len(strict[0].entries) == 24

    def test_full_span_track_survives(self):
        from textilemodel.reconstruct import track_yarns

        tracks = track_yarns(straight_dset(), d_gate=6.0, min_span=0.9)
        assert len(tracks) == 1


@pytest.fixture(scope="module")
def straight_yarns():
    return reconstruct_yarns([straight_dset()], d_gate=6.0)


class TestYarnStorage:
    def test_yarns_round_trip(self, straight_yarns, tmp_path):
        ys, tracks = straight_yarns
        p = tmp_path / "yarns.json"
        save_yarns(ys, p, voxel_size=2.0, origin=(1.0, 2.0, 3.0),
                   boundary_gaps=[t.boundary_gaps for t in tracks])
        again, vs, origin, gaps = load_yarns(p)
        assert vs == 2.0
        np.testing.assert_array_equal(origin, [1.0, 2.0, 3.0])
        assert len(again) == len(ys)
        for a, b in zip(ys, again):
            assert a.family == b.family and a.axis == b.axis
            np.testing.assert_array_equal(a.path.control_points, b.path.control_points)
            assert len(a.sections) == len(b.sections)
            np.testing.assert_array_equal(
                a.sections[0].contour, b.sections[0].contour
            )
            assert a.completed_flags == b.completed_flags
        assert gaps == [list(map(list, t.boundary_gaps)) for t in tracks] or gaps == [
            t.boundary_gaps for t in tracks
        ]

    def test_wrong_kind_is_rejected(self, tmp_path):
        p = tmp_path / "odd.json"
        p.write_text(json.dumps({"schema": 1, "kind": "textile_model"}))
        with pytest.raises(ConfigError, match="not a reconstructed yarns file"):
            load_yarns(p)


class TestMeshFiles:
    def test_obj_round_trip(self, straight_yarns, tmp_path):
        mesh = build_surface_mesh(straight_yarns[0][0])
        p = tmp_path / "yarn.obj"
        write_obj(mesh, p)
        verts, quads, tris = read_obj(p)
        assert quads.shape == mesh.quads.shape
        assert tris.shape == mesh.cap_triangles.shape
        np.testing.assert_array_equal(quads, mesh.quads)
        np.testing.assert_array_equal(tris, mesh.cap_triangles)
        np.testing.assert_allclose(verts, mesh.vertices, rtol=1e-6, atol=1e-6)

    def test_obj_uses_one_based_indices(self, straight_yarns, tmp_path):
        p = tmp_path / "yarn.obj"
        write_obj(build_surface_mesh(straight_yarns[0][0]), p)
        face_lines = [l for l in p.read_text().splitlines() if l.startswith("f ")]
        indices = [int(tok) for l in face_lines for tok in l.split()[1:]]
        assert min(indices) == 1

    def test_vtk_wedge_mesh_layout(self, straight_yarns, tmp_path):
        mesh = build_volume_mesh(straight_yarns[0][0], label=7)
        p = tmp_path / "yarn.vtk"
        write_vtk(mesh, p, title="one yarn")
        lines = p.read_text().splitlines()
        assert lines[0].startswith("# vtk DataFile Version")
        assert lines[1] == "one yarn"
        assert lines[2] == "ASCII"
        assert "DATASET UNSTRUCTURED_GRID" in lines[3]
        n_pts = int(next(l for l in lines if l.startswith("POINTS")).split()[1])
        assert n_pts == len(mesh.vertices)
        types = []
        it = iter(lines)
        for l in it:
            if l.startswith("CELL_TYPES"):
                for _ in range(int(l.split()[1])):
                    types.append(int(next(it)))
                break
        assert set(types) == {13}
        assert len(types) == mesh.n_cells
        data_at = lines.index("SCALARS yarn_id int 1")
        assert lines[data_at + 1] == "LOOKUP_TABLE default"
        labels = " ".join(lines[data_at + 2 :]).split()
        assert set(labels) == {"7"}

    def test_vtk_composite_uses_hexahedra(self, small_run):
        out, _ = small_run
        lines = (out / "meshes" / "composite.vtk").read_text().splitlines()
        types = []
        it = iter(lines)
        for l in it:
            if l.startswith("CELL_TYPES"):
                for _ in range(int(l.split()[1])):
                    types.append(int(next(it)))
                break
        assert set(types) == {12}
        data_at = lines.index("SCALARS yarn_id int 1")
        labels = {int(v) for v in " ".join(lines[data_at + 2 :]).split()}
        assert 0 in labels  # matrix cells are kept
        assert labels - {0}  # and at least one yarn label


class TestCli:
    def test_version_prints_and_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_stagewise_chain_matches_pipeline(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps(SMALL))
        d = tmp_path / "work"
        c = ["-c", str(cfgp), "-o", str(d)]

        assert main(["generate", *c]) == 0
        assert main(["voxelize", *c, "--model", str(d / "model.json")]) == 0
        assert main(["render", *c, "--labels", str(d / "labels")]) == 0
        assert main(["segment", *c, "--labels", str(d / "labels")]) == 0
        assert (
            main(
                [
                    "reconstruct",
                    *c,
                    "--detections",
                    str(d / "detections_yz.jsonl"),
                    str(d / "detections_xz.jsonl"),
                    "--labels",
                    str(d / "labels"),
                ]
            )
            == 0
        )
        assert main(["validate", *c, "--model", str(d / "model.json"),
                     "--yarns", str(d / "yarns.json")]) == 0
        capsys.readouterr()

        rep = read_json(d / "report.json")
        assert len(rep["paths"]["matches"]) == 4
        assert rep["paths"]["unmatched_reference"] == []

    def test_dims_only_reports_without_writing(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps(SMALL))
        d = tmp_path / "w"
        assert main(["generate", "-c", str(cfgp), "-o", str(d)]) == 0
        capsys.readouterr()
        code = main(
            ["voxelize", "-o", str(d), "--model", str(d / "model.json"), "--dims-only"]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "dims 63x60x49" in out
        assert "slices xz 60 + yz 63 = 123" in out
        assert not (d / "labels.raw").exists()

    def test_degrade_subcommand_writes_sibling_file(self, small_run, tmp_path, capsys):
        run_dir, _ = small_run
        code = main(
            [
                "degrade",
                "--detections",
                str(run_dir / "detections_yz.jsonl"),
                "--dropout",
                "0.3",
                "--seed",
                "9",
                "-o",
                str(tmp_path),
            ]
        )
        assert code == 0
        assert "kept" in capsys.readouterr().out
        assert (tmp_path / "detections_yz_degraded.jsonl").exists()

    def test_compact_subcommand_writes_sequence(self, small_run, tmp_path, capsys):
        run_dir, _ = small_run
        code = main(
            [
                "compact",
                "--model",
                str(run_dir / "model.json"),
                "--thickness",
                "44.1",
                "--steps",
                "3",
                "-o",
                str(tmp_path),
            ]
        )
        assert code == 0
        capsys.readouterr()
        assert sorted(p.name for p in tmp_path.glob("model_*.json")) == [
            "model_00.json",
            "model_01.json",
            "model_02.json",
            "model_03.json",
        ]
        sched = read_json(tmp_path / "compaction.json")
        assert sched["thickness"][0] == pytest.approx(49.0)
        assert sched["thickness"][-1] == pytest.approx(44.1)

    def test_pipeline_subcommand_runs_end_to_end(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({**SMALL, "reconstruct": {"write_meshes": False}}))
        d = tmp_path / "run"
        assert main(["pipeline", "-c", str(cfgp), "-o", str(d)]) == 0
        assert "pipeline done" in capsys.readouterr().out
        assert (d / "manifest.json").exists()
        assert verify_manifest(d / "manifest.json") == []

    def test_config_error_exits_2(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({"weave": {"bogus_field": 1}}))
        assert main(["generate", "-c", str(cfgp), "-o", str(tmp_path)]) == 2
        assert "unknown key weave.bogus_field" in capsys.readouterr().err

    def test_missing_input_exits_3(self, tmp_path, capsys):
        assert main(["render", "-o", str(tmp_path), "--labels", str(tmp_path / "nope")]) == 3
        assert "io error" in capsys.readouterr().err

    def test_invalid_json_input_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{]")
        assert main(["voxelize", "-o", str(tmp_path), "--model", str(bad)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_stage_failure_exits_10_plus_stage(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({**SMALL, "voxel_budget": 10000}))
        code = main(["pipeline", "-c", str(cfgp), "-o", str(tmp_path / "run")])
        err = capsys.readouterr().err
        assert code == 13  # voxelize is stage 3
        assert "stage 3" in err

"""Hausdorff path metrics, path matching, and fiber volume fraction."""

import json
import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from textilemodel.errors import ConfigError, InsufficientDataError
from textilemodel.geometry import bspline_fit, ellipse_section
from textilemodel.synthgen import FiberSpec, WeaveSpec, generate_interlock
from textilemodel.validate import (
    HEX_PACKING_LIMIT,
    PathReport,
    fiber_volume_fraction,
    hausdorff,
    match_and_assess_paths,
    vf_distribution,
    write_report,
)


def line(p0, p1):
    return np.array([p0, p1], dtype=float)


class TestHausdorff:
    def test_identical_paths_are_zero(self):
        a = np.column_stack([np.linspace(0, 10, 7), np.zeros(7), np.zeros(7)])
        fwd, bwd, sym = hausdorff(a, a.copy())
        assert fwd == bwd == sym == 0.0

    def test_parallel_lines_give_offset(self):
        a = line((0, 0, 0), (10, 0, 0))
        b = line((0, 3, 0), (10, 3, 0))
        fwd, bwd, sym = hausdorff(a, b)
        assert sym == pytest.approx(3.0, abs=1e-9)

    def test_directed_asymmetry_for_subset(self):
        short = line((0, 0, 0), (5, 0, 0))
        full = line((0, 0, 0), (10, 0, 0))
        fwd, bwd, sym = hausdorff(short, full)
        assert fwd == pytest.approx(0.0, abs=0.05)  # resample grid residue
        assert bwd == pytest.approx(5.0, abs=1e-9)
        assert sym == bwd

    def test_symmetric_is_max_of_directed(self):
        rng = np.random.default_rng(3)
        a = np.cumsum(rng.normal(size=(12, 3)), axis=0)
        b = np.cumsum(rng.normal(size=(9, 3)), axis=0)
        fwd, bwd, sym = hausdorff(a, b)
        assert sym == max(fwd, bwd)

    def test_matches_dense_oracle_on_random_pairs(self):
        # Independent oracle: very dense uniform arc-length sampling of
        # both polylines, then brute-force max-min over the point sets.
        def dense(pts, n=4001):
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            s = np.concatenate([[0.0], np.cumsum(seg)])
            t = np.linspace(0.0, s[-1], n)
            cols = [np.interp(t, s, pts[:, d]) for d in range(3)]
            return np.column_stack(cols), s[-1]

        for seed in range(25):
            rng = np.random.default_rng(seed)
            a = np.cumsum(rng.normal(0, 1, (int(rng.integers(6, 30)), 3)), axis=0)
            b = np.cumsum(rng.normal(0, 1, (int(rng.integers(6, 30)), 3)), axis=0)
            da, la = dense(a)
            db, lb = dense(b)
            d = cdist(da, db)
            oracle = max(d.min(axis=1).max(), d.min(axis=0).max())
            got = hausdorff(a, b)[2]
            assert abs(got - oracle) <= max(la, lb) / 200

    def test_bad_sample_count(self):
        a = line((0, 0, 0), (1, 0, 0))
        with pytest.raises(ConfigError):
            hausdorff(a, a, n_samples=1)


def tiny_model(n=2):
    spec = WeaveSpec(
        n_warp_columns=n,
        n_weft_columns=n,
        warp_sequence=(1,),
        weft_sequence=(1,),
        yarn_spacing=(30.0, 30.0),
        crimp_amplitude=6.0,
        ellipse_a=5.0,
        ellipse_b=2.5,
    )
    return generate_interlock(spec)


class TestMatching:
    def test_model_matches_itself(self):
        model = tiny_model()
        report = match_and_assess_paths(model, list(model.yarns))
        assert len(report.matches) == len(model.yarns)
        assert report.unmatched_reference == ()
        assert report.unmatched_yarns == ()
        assert report.max_distance() == pytest.approx(0.0, abs=1e-12)
        assert report.fraction_within(1.0) == 1.0

    def test_families_never_cross_match(self):
        model = tiny_model()
        recs = list(model.yarns)
        report = match_and_assess_paths(model, recs)
        for m in report.matches:
            assert model.yarns[m.reference_id - 1].family == m.family
            assert recs[m.yarn_index].family == m.family

    def test_extra_yarn_reported_unmatched(self):
        model = tiny_model()
        path = bspline_fit(
            np.array([[0.0, 0, 200], [30.0, 0, 200]]), degree=1, n_controls=2
        )
        sections = tuple(
            ellipse_section(center=(x, 0, 200), normal=(1, 0, 0), a=5.0, b=2.5, station=x)
            for x in (0.0, 15.0, 30.0)
        )
        stray = type(model.yarns[0])(
            yarn_id=99, family="warp", path=path, sections=sections
        )
        report = match_and_assess_paths(model, list(model.yarns) + [stray])
        assert report.unmatched_yarns == (len(model.yarns),)

    def test_missing_yarn_reported(self):
        model = tiny_model()
        report = match_and_assess_paths(model, list(model.yarns)[1:])
        assert len(report.unmatched_reference) == 1

    def test_report_text_and_dict(self):
        model = tiny_model()
        report = match_and_assess_paths(model, list(model.yarns), voxel_size_um=20.0)
        d = report.to_dict()
        assert d["voxel_size_um"] == 20.0
        assert len(d["matches"]) == len(model.yarns)
        assert d["matches"][0]["d_symmetric_um"] == pytest.approx(
            d["matches"][0]["d_symmetric"] * 20.0
        )
        text = report.to_text()
        assert text.splitlines()[0].split() == ["family", "ref", "yarn", "fwd", "bwd", "sym", "sym", "um"]


class TestVf:
    @staticmethod
    def section_with_area():
        sec = ellipse_section(center=(0, 0, 0), normal=(1, 0, 0), a=4.0, b=2.0)
        return sec, sec.area()

    def test_exact_value(self):
        sec, area = self.section_with_area()
        fibers = FiberSpec(fiber_radius=0.1, fibers_per_yarn=100)
        vf = fiber_volume_fraction(sec, fibers)
        assert vf.value == pytest.approx(100 * math.pi * 0.01 / area, rel=1e-12)
        assert not vf.capped and not vf.over_hex_limit

    def test_cap_flag(self):
        sec, area = self.section_with_area()
        r = math.sqrt(1.05 * area / (math.pi * 100))  # raw = 1.05
        vf = fiber_volume_fraction(sec, FiberSpec(fiber_radius=r, fibers_per_yarn=100))
        assert vf.value == 1.0 and vf.capped and vf.over_hex_limit
        assert vf.raw == pytest.approx(1.05, rel=1e-9)

    def test_hex_limit_flag_without_cap(self):
        sec, area = self.section_with_area()
        r = math.sqrt(0.95 * area / (math.pi * 100))  # raw = 0.95
        vf = fiber_volume_fraction(sec, FiberSpec(fiber_radius=r, fibers_per_yarn=100))
        assert not vf.capped and vf.over_hex_limit
        assert vf.value == pytest.approx(0.95, rel=1e-9)
        assert HEX_PACKING_LIMIT == pytest.approx(math.pi / (2 * math.sqrt(3)))

    def test_below_hex_limit_clean(self):
        sec, area = self.section_with_area()
        r = math.sqrt(0.85 * area / (math.pi * 100))
        vf = fiber_volume_fraction(sec, FiberSpec(fiber_radius=r, fibers_per_yarn=100))
        assert not vf.capped and not vf.over_hex_limit


class TestVfDistribution:
    def test_distribution_over_model(self):
        model = tiny_model()
        fibers = FiberSpec(fiber_radius=0.15, fibers_per_yarn=500)
        rep = vf_distribution(model.yarns, fibers, n_bins=10)
        assert len(rep.per_yarn_mean) == len(model.yarns)
        assert rep.bin_counts.sum() == len(rep.values)
        assert np.all(rep.values >= 0.0) and np.all(rep.values <= 1.0)
        assert rep.mean == pytest.approx(float(rep.values.mean()))
        assert len(rep.bin_edges) == 11

    def test_flag_counters(self):
        model = tiny_model()
        area = min(s.area() for y in model.yarns for s in y.sections)
        r = math.sqrt(2.0 * area / (math.pi * 100))  # raw >= 2 everywhere
        rep = vf_distribution(model.yarns, FiberSpec(fiber_radius=r, fibers_per_yarn=100))
        assert rep.n_capped == len(rep.values)
        assert rep.n_over_hex_limit == len(rep.values)
        assert np.all(rep.values == 1.0)

    def test_empty_rejected(self):
        with pytest.raises(InsufficientDataError):
            vf_distribution([], FiberSpec(fiber_radius=0.1, fibers_per_yarn=10))
        with pytest.raises(ConfigError):
            vf_distribution(tiny_model().yarns, FiberSpec(0.1, 10), n_bins=0)


class TestReportFiles:
    def test_write_report_round_trip(self, tmp_path):
        model = tiny_model()
        report = match_and_assess_paths(model, list(model.yarns))
        vf = vf_distribution(model.yarns, FiberSpec(fiber_radius=0.15, fibers_per_yarn=500))
        write_report(report, vf, tmp_path / "r.json", tmp_path / "r.txt")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["schema"] == 1
        assert data["kind"] == "validation_report"
        assert len(data["paths"]["matches"]) == len(model.yarns)
        assert "fiber_volume_fraction" in data
        text = (tmp_path / "r.txt").read_text()
        assert "# path accuracy" in text and "# intra-yarn fiber volume fraction" in text

    def test_report_without_vf(self, tmp_path):
        model = tiny_model()
        report = match_and_assess_paths(model, list(model.yarns))
        write_report(report, None, tmp_path / "r.json", tmp_path / "r.txt")
        data = json.loads((tmp_path / "r.json").read_text())
        assert "fiber_volume_fraction" not in data

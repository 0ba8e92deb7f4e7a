"""Weave generation, compaction and perturbation."""

import numpy as np
import pytest

from textilemodel import geometry as geo
from textilemodel import synthgen as sg
from textilemodel.errors import ConfigError, InfeasibleWeaveError


def desk_spec(**overrides):
    kw = dict(
        n_warp_columns=4,
        n_weft_columns=4,
        warp_sequence=(2,),
        weft_sequence=(2,),
        yarn_spacing=(40.0, 40.0),
        crimp_amplitude=7.0,
        ellipse_a=6.0,
        ellipse_b=3.0,
    )
    kw.update(overrides)
    return sg.WeaveSpec(**kw)


@pytest.fixture(scope="module")
def desk_model():
    return sg.generate_interlock(desk_spec())


class TestWeaveSpec:
    def test_counts_cycle_over_columns(self):
        spec = sg.WeaveSpec(11, 8, (4, 3), (5, 4), (40.0, 40.0), 7.0, 6.0, 3.0)
        assert spec.column_counts("warp") == [4, 3, 4, 3, 4, 3, 4, 3, 4, 3, 4]
        assert spec.column_counts("weft") == [5, 4, 5, 4, 5, 4, 5, 4]
        assert spec.yarn_count() == 75

    def test_eight_column_variant_count(self):
        spec = sg.WeaveSpec(8, 8, (4, 3), (5, 4), (40.0, 40.0), 7.0, 6.0, 3.0)
        assert sum(spec.column_counts("warp")) == 28
        assert sum(spec.column_counts("weft")) == 36
        assert spec.yarn_count() == 64

    def test_invalid_specs_raise(self):
        with pytest.raises(ConfigError):
            desk_spec(warp_sequence=())
        with pytest.raises(ConfigError):
            desk_spec(warp_sequence=(0,))
        with pytest.raises(ConfigError):
            desk_spec(yarn_spacing=(0.0, 40.0))
        with pytest.raises(ConfigError):
            desk_spec(ellipse_a=2.0, ellipse_b=3.0)
        with pytest.raises(ConfigError):
            desk_spec(crimp_amplitude=-1.0)


class TestGenerateInterlock:
    def test_yarn_count_and_families(self, desk_model):
        assert len(desk_model.yarns) == 16
        assert len(desk_model.family("warp")) == 8
        assert len(desk_model.family("weft")) == 8

    def test_production_scale_counts(self):
        spec = sg.WeaveSpec(11, 8, (4, 3), (5, 4), (40.0, 40.0), 7.0, 6.0, 3.0)
        model = sg.generate_interlock(spec, n_sections_warp=6, n_sections_weft=6)
        assert len(model.yarns) == 75
        assert len(model.family("warp")) == 39
        assert len(model.family("weft")) == 36

    def test_ids_unique_start_at_one_warp_first(self, desk_model):
        ids = [y.yarn_id for y in desk_model.yarns]
        assert ids == list(range(1, 17))
        assert all(y.family == "warp" for y in desk_model.yarns[:8])
        assert all(y.family == "weft" for y in desk_model.yarns[8:])

    def test_sections_on_path_and_ordered(self, desk_model):
        for yarn in desk_model.yarns:
            stations = np.array([s.station for s in yarn.sections])
            assert np.all(np.diff(stations) > 0)
            params = (stations - stations[0]) / (stations[-1] - stations[0])
            on_path = geo.bspline_eval(yarn.path, params)
            err = np.linalg.norm(on_path - yarn.centers, axis=1).max()
            assert err < 1e-9

    def test_keypoints_inside_bbox(self, desk_model):
        for yarn in desk_model.yarns:
            for sec in yarn.sections:
                assert np.all(desk_model.bbox.contains(sec.contour))

    def test_thickness_matches_bbox(self, desk_model):
        assert abs(desk_model.bbox.extent[2] - desk_model.thickness) < 1e-12
        assert desk_model.thickness == 80.0

    def test_warp_crimp_amplitude_realized(self, desk_model):
        zs = desk_model.family("warp")[0].centers[:, 2]
        assert abs(np.ptp(zs) - 2 * 7.0) < 0.05

    def test_weft_straight(self, desk_model):
        for yarn in desk_model.family("weft"):
            c = yarn.centers
            assert np.ptp(c[:, 0]) < 1e-9
            assert np.ptp(c[:, 2]) < 1e-9

    def test_trivial_single_crossing(self):
        spec = sg.WeaveSpec(1, 1, (1,), (1,), (40.0, 40.0), 0.0, 6.0, 3.0)
        model = sg.generate_interlock(spec)
        assert len(model.yarns) == 2
        warp, weft = model.family("warp")[0], model.family("weft")[0]
        assert np.ptp(warp.centers[:, 2]) == 0.0
        assert np.ptp(weft.centers[:, 2]) == 0.0
        d_warp = warp.centers[-1] - warp.centers[0]
        d_weft = weft.centers[-1] - weft.centers[0]
        cosang = d_warp @ d_weft / np.linalg.norm(d_warp) / np.linalg.norm(d_weft)
        assert abs(cosang) < 1e-12

    def test_same_family_collision_raises(self):
        # Layer pitch 4 with b=3 leaves stacked warp axes only 2 apart.
        with pytest.raises(InfeasibleWeaveError):
            sg.generate_interlock(desk_spec(crimp_amplitude=1.0))

    def test_section_counts_configurable(self):
        model = sg.generate_interlock(desk_spec(), n_sections_warp=12, n_sections_weft=9)
        assert all(len(y.sections) == 12 for y in model.family("warp"))
        assert all(len(y.sections) == 9 for y in model.family("weft"))

    def test_deterministic(self):
        m1 = sg.generate_interlock(desk_spec(), n_sections_warp=8, n_sections_weft=8)
        m2 = sg.generate_interlock(desk_spec(), n_sections_warp=8, n_sections_weft=8)
        for a, b in zip(m1.yarns, m2.yarns):
            assert np.array_equal(a.centers, b.centers)
            for sa, sb in zip(a.sections, b.sections):
                assert np.array_equal(sa.contour, sb.contour)


class TestCompaction:
    def test_schedule_and_fixed_midplane(self, desk_model):
        h0 = desk_model.thickness
        hf = 0.7 * h0
        seq = sg.compaction_sequence(desk_model, hf, n_steps=12)
        assert len(seq) == 13
        assert seq[0] is desk_model
        for k, mk in enumerate(seq):
            expect = h0 - k * (h0 - hf) / 12
            assert abs(mk.thickness - expect) <= 1e-9 * expect
            assert abs(mk.mid_plane_z - desk_model.mid_plane_z) < 1e-9

    def test_centers_follow_affine_map(self, desk_model):
        hf = 0.75 * desk_model.thickness
        seq = sg.compaction_sequence(desk_model, hf, n_steps=4)
        zm = desk_model.mid_plane_z
        for k, mk in enumerate(seq):
            f = mk.thickness / desk_model.thickness
            for y0, yk in zip(desk_model.yarns, mk.yarns):
                c0, ck = y0.centers, yk.centers
                np.testing.assert_allclose(ck[:, :2], c0[:, :2], atol=1e-9)
                np.testing.assert_allclose(ck[:, 2], zm + f * (c0[:, 2] - zm), atol=1e-9)

    def test_section_area_preserved(self, desk_model):
        seq = sg.compaction_sequence(desk_model, 0.6 * desk_model.thickness, n_steps=3)
        for y0, yk in zip(desk_model.yarns, seq[-1].yarns):
            for s0, sk in zip(y0.sections, yk.sections):
                assert abs(geo.section_area(s0) - geo.section_area(sk)) < 1e-9

    def test_invalid_targets_raise(self, desk_model):
        with pytest.raises(ConfigError):
            sg.compaction_sequence(desk_model, 0.0, 12)
        with pytest.raises(ConfigError):
            sg.compaction_sequence(desk_model, desk_model.thickness * 1.5, 12)
        with pytest.raises(ConfigError):
            sg.compaction_sequence(desk_model, desk_model.thickness * 0.5, 0)


class TestPerturb:
    def test_zero_sigma_returns_input(self, desk_model):
        assert sg.perturb_model(desk_model, 0.0, 0.0, seed=3) is desk_model

    def test_deterministic_per_seed(self, desk_model):
        p1 = sg.perturb_model(desk_model, 0.4, 0.1, seed=9)
        p2 = sg.perturb_model(desk_model, 0.4, 0.1, seed=9)
        p3 = sg.perturb_model(desk_model, 0.4, 0.1, seed=10)
        assert np.array_equal(p1.yarns[0].sections[5].contour, p2.yarns[0].sections[5].contour)
        assert not np.array_equal(p1.yarns[0].sections[5].contour, p3.yarns[0].sections[5].contour)

    def test_sections_stay_planar_with_matching_centers(self, desk_model):
        pert = sg.perturb_model(desk_model, 0.5, 0.0, seed=1)
        for yarn in pert.yarns:
            for sec in yarn.sections:
                assert geo.planarity_residual(sec.contour) < 1e-9
                assert np.linalg.norm(sec.contour.mean(axis=0) - sec.center) < 1e-9

    def test_noise_scale_reasonable(self, desk_model):
        pert = sg.perturb_model(desk_model, 0.5, 0.0, seed=2)
        drifts = [
            np.linalg.norm(np.asarray(s1.contour) - np.asarray(s0.contour), axis=1).max()
            for y0, y1 in zip(desk_model.yarns, pert.yarns)
            for s0, s1 in zip(y0.sections, y1.sections)
        ]
        assert 0.3 < max(drifts) < 4.0

    def test_negative_sigma_raises(self, desk_model):
        with pytest.raises(ConfigError):
            sg.perturb_model(desk_model, -0.1, 0.0)


class TestFiberSpec:
    def test_target_vf_round_trip(self, desk_model):
        fib = sg.fiber_spec_for_target_vf(desk_model, 0.6, fibers_per_yarn=1000)
        areas = [geo.section_area(s) for y in desk_model.yarns for s in y.sections]
        vf = fib.fibers_per_yarn * np.pi * fib.fiber_radius**2 / np.mean(areas)
        assert abs(vf - 0.6) < 1e-9

    def test_invalid_fiber_specs_raise(self):
        with pytest.raises(ConfigError):
            sg.FiberSpec(fiber_radius=0.0, fibers_per_yarn=100)
        with pytest.raises(ConfigError):
            sg.FiberSpec(fiber_radius=0.1, fibers_per_yarn=0)

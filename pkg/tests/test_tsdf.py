import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspformer.checkpoint import FormatError, TruncatedError
from graspformer.geometry import quat_from_axis_angle, quat_to_matrix
from graspformer.tsdf import (GraspLabel, ScenePrimitive, SizeMismatchError, TsdfVolume, WorkspaceTransform,
                              encode_distance, format_labels, load_labels, load_tsdf, parse_labels, save_labels,
                              save_tsdf, scene_sdf, tsdf_from_primitives, voxel_centers, voxel_to_world)


@pytest.fixture
def sphere():
    return ScenePrimitive("sphere", [0.15, 0.15, 0.15], dims=[0.05])


class TestPrimitives:
    def test_sphere_sdf(self, sphere):
        d = sphere.sdf(np.array([[0.15, 0.15, 0.15], [0.25, 0.15, 0.15]]))
        np.testing.assert_allclose(d, [-0.05, 0.05])

    def test_box_sdf_outside_corner_and_inside(self):
        box = ScenePrimitive("box", [0, 0, 0], dims=[1, 2, 3])
        np.testing.assert_allclose(box.sdf(np.array([[2.0, 3.0, 3.0], [0.5, 0, 0]])), [np.sqrt(2), -0.5])

    def test_rotated_box(self):
        box = ScenePrimitive("box", [0, 0, 0], quat_from_axis_angle([0, 0, 1], np.pi / 2), [1, 2, 3])
        # local x (half-extent 1) now points along world y
        assert box.sdf(np.array([[0, 1.5, 0]]))[0] == pytest.approx(0.5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ScenePrimitive("cone", [0, 0, 0])
        with pytest.raises(ValueError):
            ScenePrimitive("box", [0, 0, 0], dims=[1, 1])
        with pytest.raises(ValueError):
            ScenePrimitive("sphere", [0, 0, 0], dims=[-1])

    def test_dict_round_trip(self):
        box = ScenePrimitive("box", [0.1, 0.2, 0.3], quat_from_axis_angle([1, 0, 0], 0.4), [0.01, 0.02, 0.03])
        back = ScenePrimitive.from_dict(box.to_dict())
        np.testing.assert_array_equal(back.orientation, box.orientation)
        np.testing.assert_array_equal(back.dims, box.dims)


class TestTsdfFromPrimitives:
    def test_empty_is_all_ones(self):
        vol = tsdf_from_primitives([], n=8, side_length=0.08)
        assert vol.values.shape == (8, 8, 8) and np.all(vol.values == 1.0)

    def test_surface_voxel_is_half(self):
        # voxel (2,4,4) at n=8, side 0.08 has center (0.025, 0.045, 0.045)
        sphere = ScenePrimitive("sphere", [0.045, 0.045, 0.045], dims=[0.02])
        vol = tsdf_from_primitives([sphere], n=8, side_length=0.08)
        assert vol.values[2, 4, 4] == pytest.approx(0.5, abs=1e-6)

    def test_deep_inside_is_zero(self, sphere):
        vol = tsdf_from_primitives([sphere], n=40, side_length=0.3)
        # voxel 19 and 20 straddle the center; radius 0.05 exceeds trunc 0.03
        assert vol.values[19, 19, 19] == 0.0

    def test_default_trunc_is_four_voxels(self):
        vol = tsdf_from_primitives([], n=40, side_length=0.3)
        assert vol.trunc == pytest.approx(4 * 0.3 / 40, rel=1e-6)

    def test_encoding(self):
        np.testing.assert_allclose(encode_distance(np.array([-1.0, -0.01, 0.0, 0.01, 1.0]), 0.02),
                                   [0, 0.25, 0.5, 0.75, 1])

    def test_values_in_range_and_monotone_along_ray(self, sphere):
        vol = tsdf_from_primitives([sphere], n=40, side_length=0.3)
        assert vol.values.min() >= 0 and vol.values.max() <= 1
        ray = vol.values[20:, 20, 20]
        assert np.all(np.diff(ray) >= 0)

    def test_nonpositive_trunc_rejected(self):
        with pytest.raises(ValueError):
            tsdf_from_primitives([], n=8, side_length=0.08, trunc=0.0)

    def test_scene_sdf_is_union(self, sphere):
        other = ScenePrimitive("sphere", [0.05, 0.05, 0.05], dims=[0.01])
        pts = voxel_centers(8, 0.3)
        np.testing.assert_allclose(scene_sdf([sphere, other], pts),
                                   np.minimum(sphere.sdf(pts), other.sdf(pts)))


class TestVolumeValidation:
    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TsdfVolume(np.full((4, 4, 4), 1.5))

    def test_non_cube_rejected(self):
        with pytest.raises(ValueError):
            TsdfVolume(np.ones((4, 4, 2)))


class TestTsdfFile:
    def test_round_trip_bits(self, rng, tmp_path):
        vol = TsdfVolume(rng.random((6, 6, 6)), side_length=0.2, trunc=0.017)
        save_tsdf(vol, tmp_path / "v.tsdf")
        back = load_tsdf(tmp_path / "v.tsdf")
        assert back == vol and back.values.tobytes() == vol.values.tobytes()
        save_tsdf(back, tmp_path / "w.tsdf")
        assert (tmp_path / "v.tsdf").read_bytes() == (tmp_path / "w.tsdf").read_bytes()

    def test_header_layout(self, tmp_path):
        save_tsdf(TsdfVolume(np.ones((2, 2, 2)), 0.5, 0.25), tmp_path / "v.tsdf")
        buf = (tmp_path / "v.tsdf").read_bytes()
        assert buf[:4] == b"TSDF" and len(buf) == 20 + 4 * 8
        assert np.frombuffer(buf[4:12], "<u4").tolist() == [1, 2]
        assert np.frombuffer(buf[12:20], "<f4").tolist() == [0.5, 0.25]

    def test_errors_are_distinct(self, tmp_path):
        save_tsdf(TsdfVolume(np.ones((3, 3, 3))), tmp_path / "v.tsdf")
        buf = (tmp_path / "v.tsdf").read_bytes()
        cases = {"magic": b"XXXX" + buf[4:], "short": buf[:-4], "long": buf + b"\0\0\0\0"}
        for name, data in cases.items():
            (tmp_path / name).write_bytes(data)
        with pytest.raises(FormatError, match="format mismatch"):
            load_tsdf(tmp_path / "magic")
        with pytest.raises(TruncatedError, match="truncated payload"):
            load_tsdf(tmp_path / "short")
        with pytest.raises(SizeMismatchError, match="N³ mismatch"):
            load_tsdf(tmp_path / "long")


class TestVoxelToWorld:
    def test_full_grid_center(self):
        xf = WorkspaceTransform(40 / 0.3, n=40)
        np.testing.assert_allclose(voxel_to_world((20, 20, 20), xf), [0.15375] * 3, atol=1e-12)

    def test_origin_voxel(self):
        xf = WorkspaceTransform(40 / 0.3, n=40)
        np.testing.assert_allclose(voxel_to_world((0, 0, 0), xf), [0.00375] * 3, atol=1e-12)

    def test_translation(self):
        xf = WorkspaceTransform(40 / 0.3, translation=[1, 0, 0], n=40)
        np.testing.assert_allclose(voxel_to_world((0, 0, 0), xf), [1.00375, 0.00375, 0.00375], atol=1e-12)

    @pytest.mark.parametrize("index", [(-1, 0, 0), (0, 40, 0), (1, 2)])
    def test_out_of_range(self, index):
        with pytest.raises(IndexError):
            voxel_to_world(index, WorkspaceTransform(40 / 0.3, n=40))

    def test_injective(self):
        xf = WorkspaceTransform(8 / 0.1, quat_from_axis_angle([1, 1, 0], 0.7), [0.2, 0, 0], n=8)
        pts = np.array([voxel_to_world(ix, xf) for ix in np.ndindex(8, 8, 8)])
        assert len(np.unique(pts.round(9), axis=0)) == 512

    @given(st.floats(-np.pi, np.pi), st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.integers(0, 9)] * 3))
    @settings(max_examples=50, deadline=None)
    def test_rigid_equivariance(self, angle, shift, index):
        xf = WorkspaceTransform(10 / 0.3, quat_from_axis_angle([0.3, -1, 2], 0.9), [0.1, 0.2, -0.3], n=10)
        g_rot = quat_from_axis_angle([1, 0, 1], angle)
        moved = voxel_to_world(index, xf.compose(g_rot, shift))
        expected = quat_to_matrix(g_rot) @ voxel_to_world(index, xf) + np.asarray(shift)
        np.testing.assert_allclose(moved, expected, atol=1e-9)


class TestLabels:
    def test_text_round_trip(self, tmp_path, rng):
        q = rng.standard_normal(4)
        labels = [GraspLabel((1, 2, 3), 1, q / np.linalg.norm(q), 5.25), GraspLabel((0, 0, 7), 0)]
        save_labels(labels, tmp_path / "l.labels")
        back = load_labels(tmp_path / "l.labels", n=8)
        assert [b.index for b in back] == [(1, 2, 3), (0, 0, 7)]
        np.testing.assert_array_equal(back[0].rotation, labels[0].rotation)
        assert back[0].width == 5.25 and back[1].quality == 0
        assert format_labels(back) == format_labels(labels)

    def test_line_format(self):
        line = format_labels([GraspLabel((1, 2, 3), 1, [1, 0, 0, 0], 4.0)])
        assert line.split() == ["1", "2", "3", "1", "1.0", "0.0", "0.0", "0.0", "4.0"]

    @pytest.mark.parametrize("text", ["1 2 3 1 1 0 0 0", "1 2 3 2 1 0 0 0 1", "a 2 3 1 1 0 0 0 1",
                                      "1 2 9 1 1 0 0 0 1"])
    def test_bad_lines(self, text):
        with pytest.raises(FormatError):
            parse_labels(text, n=8)

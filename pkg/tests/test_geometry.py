import struct

import numpy as np
import pytest

from conftest import unit_cube
from sdfad.distance import signed_distance, signed_distance_bruteforce
from sdfad.errors import DegenerateExtent, EmptyMesh, MeshIoError, NoValidFaces, ParseError
from sdfad.mesh import (
    PointCloud, TriangleMesh, fan_triangulate, fit_transform, inject_gaussian_noise,
    load_cloud, load_labels, load_mesh, normalize, save_cloud, save_labels, write_obj, write_ply,
)
from sdfad.rng import make_rng
from sdfad.synth import SynthSpec, box_mesh, icosphere, synth, synth_cloud, torus_mesh


class TestLoadMesh:
    def test_minimal_obj(self, tmp_path):
        p = tmp_path / "tri.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(p)
        assert mesh.faces.shape == (1, 3)
        np.testing.assert_array_equal(mesh.faces[0], [0, 1, 2])

    def test_quad_is_fan_split(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = load_mesh(p)
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])
        assert fan_triangulate([5, 6, 7, 8, 9]) == [(5, 6, 7), (5, 7, 8), (5, 8, 9)]

    def test_obj_slash_and_negative_indices(self, tmp_path):
        p = tmp_path / "t.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3/1/1 -2//1 -1\n")
        np.testing.assert_array_equal(load_mesh(p).faces, [[0, 1, 2]])

    def test_obj_bad_record_reports_line(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 zero\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(ParseError) as exc:
            load_mesh(p)
        assert exc.value.line == 2

    def test_obj_index_out_of_range(self, tmp_path):
        p = tmp_path / "bad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_ply_zero_faces_is_empty(self, tmp_path):
        p = tmp_path / "empty.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
                     "property float y\nproperty float z\nelement face 0\n"
                     "property list uchar int vertex_indices\nend_header\n"
                     "0 0 0\n1 0 0\n0 1 0\n")
        with pytest.raises(EmptyMesh):
            load_mesh(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshIoError):
            load_mesh(tmp_path / "nope.obj")

    @pytest.mark.parametrize("binary", [True, False])
    def test_ply_round_trip(self, tmp_path, binary):
        mesh = icosphere(1)
        p = tmp_path / "s.ply"
        write_ply(p, mesh, binary=binary)
        back = load_mesh(p)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        np.testing.assert_allclose(back.vertices, mesh.vertices, rtol=1e-6)

    def test_binary_ply_with_quad(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\nelement vertex 4\n"
                  "property float x\nproperty float y\nproperty float z\n"
                  "element face 1\nproperty list uchar int vertex_indices\nend_header\n")
        body = b"".join(struct.pack("<3f", *v) for v in [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)])
        body += struct.pack("<B4i", 4, 0, 1, 2, 3)
        p = tmp_path / "q.ply"
        p.write_bytes(header.encode() + body)
        np.testing.assert_array_equal(load_mesh(p).faces, [[0, 1, 2], [0, 2, 3]])

    def test_truncated_binary_ply(self, tmp_path):
        mesh = icosphere(1)
        p = tmp_path / "s.ply"
        write_ply(p, mesh)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_obj_round_trip(self, tmp_path):
        mesh = torus_mesh(8)
        p = tmp_path / "t.obj"
        write_obj(p, mesh)
        back = load_mesh(p)
        np.testing.assert_array_equal(back.faces, mesh.faces)
        np.testing.assert_array_equal(back.vertices, mesh.vertices)


class TestClouds:
    def test_cloud_and_labels_round_trip(self, tmp_path):
        pts = make_rng(3).normal(size=(20, 3))
        labels = np.arange(20) % 2
        save_cloud(tmp_path / "c.csv", pts)
        save_labels(tmp_path / "l.csv", labels)
        cloud = load_cloud(tmp_path / "c.csv", tmp_path / "l.csv")
        np.testing.assert_array_equal(cloud.points, pts)
        np.testing.assert_array_equal(cloud.labels, labels)

    def test_missing_label_rows(self, tmp_path):
        (tmp_path / "l.csv").write_text("index,label\n0,1\n2,0\n")
        with pytest.raises(ParseError):
            load_labels(tmp_path / "l.csv", 3)


class TestNormalize:
    def test_unit_cube_maps_to_box(self, cube):
        out, tf = normalize(cube, margin=1.0)
        np.testing.assert_allclose(tf.center, [0.5, 0.5, 0.5])
        assert tf.scale == 2.0
        np.testing.assert_allclose(out.vertices.min(axis=0), -1.0)
        np.testing.assert_allclose(out.vertices.max(axis=0), 1.0)

    def test_already_normalised_is_identity(self):
        _, tf = normalize(unit_cube(-1.0, 1.0), margin=1.0)
        np.testing.assert_array_equal(tf.center, [0.0, 0.0, 0.0])
        assert tf.scale == 1.0

    def test_radius_two_sphere(self):
        sphere = icosphere(3, radius=2.0)
        out, tf = normalize(sphere, margin=0.9)
        # the icosphere's bounding box touches +-2 on every axis
        assert tf.scale == pytest.approx(0.45, rel=1e-12)
        assert np.abs(out.vertices).max() == pytest.approx(0.9, rel=1e-12)

    def test_inverse_recovers_vertices(self):
        rng = make_rng(11)
        v = rng.normal(size=(50, 3)) * [3.0, 0.2, 7.0] + [10.0, -4.0, 2.5]
        tf = fit_transform(v, 0.9)
        np.testing.assert_allclose(tf.inverse(tf.apply(v)), v, rtol=1e-9)
        assert np.abs(tf.apply(v)).max() <= 0.9 + 1e-12

    def test_zero_extent(self):
        with pytest.raises(DegenerateExtent):
            fit_transform(np.ones((4, 3)))

    def test_transform_dict_round_trip(self, cube):
        _, tf = normalize(cube)
        assert type(tf).from_dict(tf.to_dict()) == tf


class TestSignedDistance:
    def test_on_surface_is_zero(self, cube):
        q = np.array([[0.3, 0.4, 1.0], [1.0, 0.2, 0.9], [0.5, 0.0, 0.5]])
        np.testing.assert_allclose(signed_distance(cube, q), 0.0, atol=1e-12)

    @pytest.mark.parametrize("d", [0.01, 0.3, 2.5])
    def test_outside_cube_face(self, cube, d):
        assert signed_distance(cube, [0.4, 0.6, 1.0 + d]) == pytest.approx(d, abs=1e-12)
        assert signed_distance(cube, [-d, 0.6, 0.2]) == pytest.approx(d, abs=1e-12)

    def test_inside_cube(self, cube):
        assert signed_distance(cube, [0.5, 0.5, 0.5]) == pytest.approx(-0.5, abs=1e-12)
        assert signed_distance(cube, [0.1, 0.5, 0.5]) == pytest.approx(-0.1, abs=1e-12)

    def test_outside_cube_corner_and_edge(self, cube):
        # closest features are a vertex and an edge, where the sign comes from pseudonormals
        assert signed_distance(cube, [1.2, 1.2, 1.2]) == pytest.approx(np.sqrt(3) * 0.2, abs=1e-12)
        assert signed_distance(cube, [1.3, -0.4, 0.5]) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("radius", [1.0, 0.5])
    def test_icosphere_center(self, radius):
        d = signed_distance(icosphere(4, radius), [0.0, 0.0, 0.0])
        assert d < 0
        assert abs(d + radius) <= 0.02 * radius

    def test_sphere_matches_analytic(self):
        sphere = icosphere(5)
        q = make_rng(4).uniform(-1.5, 1.5, size=(300, 3))
        exact = np.linalg.norm(q, axis=1) - 1.0
        # chord sag of a level-5 icosphere is below 1e-3
        np.testing.assert_allclose(signed_distance(sphere, q), exact, atol=1e-3)

    @pytest.mark.parametrize("mesh", [icosphere(3), box_mesh(4), torus_mesh(16)],
                             ids=["sphere", "box", "torus"])
    def test_tree_matches_bruteforce(self, mesh):
        q = make_rng(5).uniform(-1.3, 1.3, size=(200, 3))
        fast, f_fast = signed_distance(mesh, q, return_face=True)
        slow, f_slow = signed_distance_bruteforce(mesh, q, return_face=True)
        np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(f_fast, f_slow)

    def test_single_query_shape(self, cube):
        assert np.ndim(signed_distance(cube, [0.5, 0.5, 2.0])) == 0

    def test_degenerate_faces_skipped(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], dtype=float)
        mesh = TriangleMesh(v, np.array([[0, 1, 2], [0, 1, 3]]))
        assert mesh.degenerate.tolist() == [True, False]
        with pytest.warns(UserWarning):
            d = signed_distance(mesh, [0.2, 0.2, 0.5])
        assert abs(d) == pytest.approx(0.5)

    def test_all_degenerate(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        with pytest.raises(NoValidFaces):
            signed_distance(TriangleMesh(v, np.array([[0, 1, 2]])), [0.0, 0.0, 1.0])

    def test_open_mesh_warns(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        with pytest.warns(UserWarning):
            signed_distance(TriangleMesh(v, np.array([[0, 1, 2]])), [0.1, 0.1, 1.0])


class TestNoise:
    def test_zero_sigma_is_bitwise_copy(self):
        cloud = PointCloud(make_rng(1).normal(size=(100, 3)))
        out = inject_gaussian_noise(cloud, 0.0, make_rng(2))
        assert out.points.tobytes() == cloud.points.tobytes()
        assert out.points is not cloud.points

    def test_seeded_noise_repeats(self):
        cloud = PointCloud(make_rng(1).normal(size=(100, 3)))
        a = inject_gaussian_noise(cloud, 0.005, make_rng(9, "noise/0"))
        b = inject_gaussian_noise(cloud, 0.005, make_rng(9, "noise/0"))
        assert a.points.tobytes() == b.points.tobytes()

    def test_noise_std(self):
        cloud = PointCloud(np.zeros((100_000, 3)))
        out = inject_gaussian_noise(cloud, 0.01, make_rng(0))
        assert abs(out.points.std() - 0.01) <= 0.02 * 0.01

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            inject_gaussian_noise(PointCloud(np.zeros((1, 3))), -1.0, make_rng(0))


class TestSynth:
    def test_shapes_are_closed(self):
        for mesh in (icosphere(2), box_mesh(3), torus_mesh(12)):
            assert mesh.is_watertight
            assert mesh.n_valid_faces == len(mesh.faces)

    def test_bump_labels(self):
        mesh, cloud = synth_cloud(SynthSpec(points=4000, seed=3))
        assert 0.01 <= cloud.labels.mean() <= 0.2
        d = signed_distance(mesh, cloud.points)
        assert d[cloud.labels == 1].min() > 0.04
        assert np.abs(d[cloud.labels == 0]).mean() < np.abs(d[cloud.labels == 1]).mean()

    def test_dent_is_inward(self):
        mesh, cloud = synth_cloud(SynthSpec(subdivisions=3, anomaly="dent", points=2000, seed=3))
        assert (signed_distance(mesh, cloud.points)[cloud.labels == 1] < 0).all()

    def test_clean_cloud_lies_on_mesh(self):
        mesh, cloud = synth_cloud(SynthSpec(subdivisions=3, anomaly="none", points=500))
        assert cloud.labels.sum() == 0
        np.testing.assert_allclose(signed_distance(mesh, cloud.points), 0.0, atol=1e-12)

    def test_synth_files_repeat(self, tmp_path):
        spec = SynthSpec(subdivisions=2, points=300, seed=5)
        outputs = []
        for run in ("a", "b"):
            paths = [tmp_path / f"{run}{suffix}" for suffix in (".obj", "_c.csv", "_l.csv")]
            synth(spec, *paths)
            outputs.append([p.read_bytes() for p in paths])
        assert outputs[0] == outputs[1]

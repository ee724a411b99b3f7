import numpy as np
import pytest

from sphere_reach import make_circle, make_icosphere, validate
from sphere_reach.mesh import SdfSampleSet, SurfaceMesh


class TestIcosphere:
    def test_base_icosahedron(self):
        m = make_icosphere(0, 1.0)
        assert m.n_vertices == 12
        assert m.n_elements == 20
        assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1.0).max() <= 2e-16

    def test_one_subdivision_counts(self):
        # 4-to-1 split: F -> 4F, E -> 2E + 3F, V -> V + E
        m = make_icosphere(1, 1.0)
        assert m.n_vertices == 42
        assert m.n_elements == 80

    def test_count_formula_and_euler(self):
        # V = 10*4^k + 2, F = 20*4^k, E = 30*4^k
        for k in range(4):
            m = make_icosphere(k, 1.0)
            assert m.n_vertices == 10 * 4 ** k + 2
            assert m.n_elements == 20 * 4 ** k
            assert m.edges().shape[0] == 30 * 4 ** k
            assert m.n_vertices - 30 * 4 ** k + m.n_elements == 2

    def test_reprojection_radius(self):
        # double normalization leaves at most an ulp of radius error
        m = make_icosphere(2, 0.5)
        assert m.n_vertices == 162
        assert m.n_elements == 320
        assert np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5).max() <= 1e-15

    def test_validity(self):
        r = validate(make_icosphere(2, 1.0))
        assert r.ok
        assert r.euler_characteristic == 2
        assert r.n_components == 1

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            make_icosphere(1, 0.0)
        with pytest.raises(ValueError):
            make_icosphere(-1, 1.0)


class TestCircle:
    def test_square_in_unit_circle(self):
        m = make_circle(4, 1.0)
        expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        assert np.allclose(m.vertices, expected, atol=1e-15)
        assert np.array_equal(m.elements, [[0, 1], [1, 2], [2, 3], [3, 0]])

    def test_equilateral_triangle(self):
        m = make_circle(3, 2.0)
        assert np.allclose(np.linalg.norm(m.vertices, axis=1), 2.0)
        sides = np.linalg.norm(
            m.vertices[m.elements[:, 1]] - m.vertices[m.elements[:, 0]], axis=1)
        assert np.allclose(sides, 2.0 * np.sqrt(3.0))

    def test_perimeter_converges(self):
        # inscribed polygon perimeter: 2 n r sin(pi/n)
        m = make_circle(100, 0.5)
        per = np.linalg.norm(
            m.vertices[m.elements[:, 1]] - m.vertices[m.elements[:, 0]], axis=1).sum()
        assert per == pytest.approx(2 * 100 * 0.5 * np.sin(np.pi / 100), rel=1e-12)
        assert abs(per - np.pi) / np.pi < 1e-3

    def test_counter_clockwise(self):
        m = make_circle(17, 1.0)
        a = m.vertices[m.elements[:, 0]]
        b = m.vertices[m.elements[:, 1]]
        area = 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
        assert area > 0
        assert validate(m).ok


class TestValidate:
    def test_icosphere_report(self):
        r = validate(make_icosphere(1, 1.0))
        assert r.is_watertight and r.is_edge_manifold and r.is_oriented
        assert r.euler_characteristic == 2

    def test_missing_face_breaks_watertightness(self):
        m = make_icosphere(1, 1.0)
        r = validate(SurfaceMesh(m.vertices, m.elements[1:]))
        assert not r.is_watertight
        assert r.n_boundary_edges == 3

    def test_two_components_additive_euler(self):
        a = make_icosphere(0, 1.0)
        b = make_icosphere(0, 1.0)
        verts = np.vstack([a.vertices, b.vertices + 5.0])
        elems = np.vstack([a.elements, b.elements + a.n_vertices])
        r = validate(SurfaceMesh(verts, elems))
        assert r.ok
        assert r.euler_characteristic == 4
        assert r.n_components == 2

    def test_degenerate_elements_counted(self):
        m = make_icosphere(0, 1.0)
        bad = np.vstack([m.elements, [[0, 0, 3]]])
        r = validate(SurfaceMesh(m.vertices, bad))
        assert r.n_degenerate == 1
        assert not r.ok

    def test_inconsistent_orientation_detected(self):
        m = make_icosphere(0, 1.0)
        flipped = m.elements.copy()
        flipped[0] = flipped[0][::-1]
        r = validate(SurfaceMesh(m.vertices, flipped))
        assert not r.is_oriented

    def test_idempotent_and_pure(self):
        m = make_icosphere(1, 1.0)
        before = m.vertices.copy()
        assert validate(m) == validate(m)
        assert np.array_equal(m.vertices, before)

    def test_2d_loop_checks(self):
        c = make_circle(10, 1.0)
        r = validate(c)
        assert r.ok and r.euler_characteristic == 0
        open_loop = SurfaceMesh(c.vertices, c.elements[:-1])
        assert not validate(open_loop).is_watertight


class TestContainers:
    def test_mesh_immutable(self):
        m = make_icosphere(0, 1.0)
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 7.0
        with pytest.raises(ValueError):
            m.elements[0, 0] = 3

    def test_with_vertices_shares_elements(self):
        m = make_icosphere(0, 1.0)
        m2 = m.with_vertices(m.vertices * 2.0)
        assert np.array_equal(m2.elements, m.elements)
        assert np.allclose(m2.vertices, 2.0 * m.vertices)

    def test_sample_set_invariants(self):
        with pytest.raises(ValueError):
            SdfSampleSet(np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            SdfSampleSet(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(ValueError):
            SdfSampleSet(np.zeros((2, 3)), np.array([-0.1, 0.2]), kind="unsigned")
        with pytest.raises(ValueError):
            SdfSampleSet(np.zeros((2, 3)), np.zeros(2), kind="clamped")
        s = SdfSampleSet(np.zeros((2, 3)), np.array([0.1, 0.2]), kind="clamped",
                         clamp_value=0.2)
        assert s.clamp_value == 0.2

    def test_element_measures(self):
        m = make_circle(4, 1.0)
        assert np.allclose(m.element_measures(), np.sqrt(2.0))
        tri = SurfaceMesh(np.array([[0., 0, 0], [1, 0, 0], [0, 1, 0]]),
                          np.array([[0, 1, 2]]))
        assert tri.element_measures()[0] == pytest.approx(0.5)
        assert np.allclose(tri.element_normals()[0], [0, 0, 1])

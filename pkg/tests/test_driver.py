import numpy as np
import pytest

from sphere_reach import (
    ReconstructionAborted,
    ReconstructionConfig,
    SdfSampleSet,
    build_bvh,
    converged,
    make_circle,
    make_icosphere,
    marching_cubes,
    reconstruct,
    reconstruct_with_resampling,
    sample_grid,
    validate,
)
from sphere_reach.baseline import GridField
from sphere_reach.driver import average_sample_spacing, h_schedule
from sphere_reach.sampling import GridSpec
from sphere_reach.shapes import torus
from sphere_reach.spatial import batch_signed_distance_arrays


class TestConverged:
    def test_steady_decrease_not_converged(self):
        tol = 1e-3
        history = [1.0 - 2 * tol * i for i in range(20)]
        assert not converged(history, 10, tol)

    def test_constant_energy_converged(self):
        assert converged([0.5] * 11, 10, 1e-3)

    def test_insufficient_history(self):
        assert not converged([0.5] * 10, 10, 1e-3)

    def test_window_semantics(self):
        # drop larger than tol anywhere inside the window blocks convergence
        history = [1.0] * 10 + [1.0 - 2e-3] + [1.0 - 2e-3] * 10
        assert converged(history, 10, 1e-3)
        history = [1.0] * 11 + [1.0 - 2e-3] * 10
        assert not converged(history, 10, 1e-3)


class TestSchedule:
    def test_exact_halving(self):
        assert h_schedule(0.8, 0.1) == [0.8, 0.4, 0.2, 0.1]

    def test_clamping(self):
        sched = h_schedule(0.5, 0.15)
        assert sched == [0.5, 0.25, 0.15]
        assert sched[-1] == 0.15

    def test_single_stage(self):
        assert h_schedule(0.1, 0.1) == [0.1]

    def test_grid_spacing_recovered(self):
        spec = GridSpec.cube(10, 3)
        assert average_sample_spacing(spec.points()) == pytest.approx(2 / 9)
        spec2 = GridSpec.cube(10, 2)
        assert average_sample_spacing(spec2.points()) == pytest.approx(2 / 9)


class TestReconstruct2d:
    @pytest.fixture(scope="class")
    def circle_run(self):
        gt = make_circle(1000, 0.25)
        samples = sample_grid(gt, GridSpec.cube(10, 2))
        mesh, report = reconstruct(samples)
        return gt, samples, mesh, report

    def test_radius_recovered(self, circle_run):
        _, _, mesh, _ = circle_run
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert abs(radii.mean() - 0.25) <= 0.01

    def test_valid_loop(self, circle_run):
        _, _, mesh, report = circle_run
        assert report.validity.ok
        assert validate(mesh).n_components == 1

    def test_report_contents(self, circle_run):
        _, samples, _, report = circle_run
        assert report.n_samples == len(samples)
        assert len(report.records) > 0
        assert report.final_energy >= 0
        assert len(report.stages) == len(h_schedule(report.stages[0].h, report.stages[-1].h))
        for s in report.stages:
            assert s.end_energy <= s.start_energy + 1e-12

    def test_determinism(self, circle_run):
        gt, samples, mesh, _ = circle_run
        again, _ = reconstruct(samples)
        assert np.array_equal(mesh.vertices, again.vertices)
        assert np.array_equal(mesh.elements, again.elements)


class TestInitHandling:
    def test_invalid_init_rejected(self):
        gt = make_icosphere(2, 0.25)
        samples = sample_grid(gt, GridSpec.cube(5, 3))
        broken = make_icosphere(1, 1.0)
        from sphere_reach.mesh import SurfaceMesh
        broken = SurfaceMesh(broken.vertices, broken.elements[:-1])
        with pytest.raises(ValueError, match="invalid"):
            reconstruct(samples, init=broken)

    def test_enclosure_check(self):
        gt = make_icosphere(2, 0.3)
        samples = sample_grid(gt, GridSpec.cube(10, 3))
        assert np.any(samples.values < 0)
        tiny = make_icosphere(2, 0.05)  # strictly inside the interior samples
        with pytest.raises(ValueError, match="enclose"):
            reconstruct(samples, init=tiny)
        cfg = ReconstructionConfig(check_enclosure=False,
                                   max_iterations_per_stage=5,
                                   final_window=2, coarse_window=2)
        mesh, _ = reconstruct(samples, cfg, init=tiny)
        assert mesh.n_vertices > 0

    def test_mc_init_preserves_torus_topology(self):
        gt = torus()
        assert validate(gt).euler_characteristic == 0
        samples = sample_grid(gt, GridSpec.cube(20, 3))
        init = marching_cubes(GridField(GridSpec.cube(20, 3), samples.values))
        assert validate(init).euler_characteristic == 0
        cfg = ReconstructionConfig(check_enclosure=False, coarse_window=3,
                                   final_window=5, max_iterations_per_stage=30)
        mesh, report = reconstruct(samples, cfg, init=init)
        rep = validate(mesh)
        assert rep.euler_characteristic == 0
        assert rep.n_components == 1
        assert rep.ok


class TestWatchdog:
    def test_divergent_samples_abort_with_mesh(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
        samples = SdfSampleSet(pts, np.array([-5000.0, -5000.0, -5000.0]))
        cfg = ReconstructionConfig(check_enclosure=False)
        with pytest.raises(ReconstructionAborted) as exc_info:
            reconstruct(samples, cfg)
        err = exc_info.value
        assert err.mesh.n_vertices > 0
        assert err.report.aborted
        assert np.all(np.isfinite(err.mesh.vertices))


class TestResampling:
    def circle_setup(self):
        gt = make_circle(1000, 0.25)
        samples = sample_grid(gt, GridSpec.cube(6, 2))
        bvh = build_bvh(gt)

        def oracle(p):
            v, _ = batch_signed_distance_arrays(bvh, gt, np.asarray(p)[None, :])
            return float(v[0])

        return gt, samples, oracle

    def test_zero_rounds_identical(self):
        _, samples, oracle = self.circle_setup()
        cfg = ReconstructionConfig(coarse_window=3, final_window=5,
                                   max_iterations_per_stage=40)
        a, _ = reconstruct(samples, cfg)
        b, _ = reconstruct_with_resampling(samples, oracle, 0, cfg)
        assert np.array_equal(a.vertices, b.vertices)

    def test_one_round_grows_samples_and_keeps_originals_happy(self):
        from sphere_reach.flow import sdf_energy
        _, samples, oracle = self.circle_setup()
        cfg = ReconstructionConfig(coarse_window=5, final_window=10,
                                   max_iterations_per_stage=200)
        plain, _ = reconstruct(samples, cfg)
        resampled, report = reconstruct_with_resampling(samples, oracle, 1, cfg)
        assert report.resample_rounds == 1
        assert report.n_samples > len(samples)
        e_plain = sdf_energy(plain, build_bvh(plain), samples)
        e_res = sdf_energy(resampled, build_bvh(resampled), samples)
        assert e_res <= e_plain + 1e-3

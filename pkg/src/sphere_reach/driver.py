"""Full reconstruction pipeline: coarse-to-fine flow with local remeshing.

Starts from an enclosing surface, runs the implicit flow until the energy
plateaus, halves the remesher's target edge length, and repeats down to
h_min, where a longer convergence window finishes the job.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .flow import (
    compute_correspondences,
    energy_from_correspondences,
    flow_step,
)
from .mesh import (
    ReconstructionConfig,
    SdfSampleSet,
    SurfaceMesh,
    ValidityReport,
    make_circle,
    make_icosphere,
    validate,
)
from .remesh import compute_active_region, remesh
from .sampling import propose_new_samples
from .spatial import build_bvh

# abort when any coordinate leaves this box or becomes non-finite
WATCHDOG_COORD_LIMIT = 1e3


class ReconstructionAborted(RuntimeError):
    """Raised when the flow blows up; carries the last valid mesh."""

    def __init__(self, message, mesh: SurfaceMesh, report: "RunReport"):
        super().__init__(message)
        self.mesh = mesh
        self.report = report


@dataclass
class IterationRecord:
    stage: int
    iteration: int
    h: float
    tau: float
    energy: float
    active_rows: int
    interior_rows: int
    n_vertices: int
    seconds: float


@dataclass
class StageSummary:
    h: float
    iterations: int
    start_energy: float
    end_energy: float
    converged: bool
    seconds: float


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    final_energy: float = float("nan")
    final_max_violation: float = float("nan")
    aborted: bool = False
    validity: ValidityReport | None = None
    seed: int = 0
    n_samples: int = 0
    total_seconds: float = 0.0
    resample_rounds: int = 0

    CSV_HEADER = "stage,iteration,h,tau,energy,active_rows,interior_rows,vertices,seconds"

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for r in self.records:
                fh.write(f"{r.stage},{r.iteration},{r.h:.17g},{r.tau:.17g},"
                         f"{r.energy:.17g},{r.active_rows},{r.interior_rows},"
                         f"{r.n_vertices},{r.seconds:.6f}\n")

    def summary_dict(self) -> dict:
        return {
            "final_energy": self.final_energy,
            "final_max_violation": self.final_max_violation,
            "aborted": self.aborted,
            "iterations": len(self.records),
            "stages": [
                {"h": s.h, "iterations": s.iterations,
                 "start_energy": s.start_energy, "end_energy": s.end_energy,
                 "converged": s.converged, "seconds": s.seconds}
                for s in self.stages
            ],
            "n_samples": self.n_samples,
            "seed": self.seed,
            "total_seconds": self.total_seconds,
            "resample_rounds": self.resample_rounds,
            "valid": bool(self.validity.ok) if self.validity is not None else None,
        }


def converged(history, window: int, tol: float) -> bool:
    """True when the energy failed to drop by more than tol over the window."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(history) < window + 1:
        return False
    return min(history[-window:]) >= history[-window - 1] - tol


def average_sample_spacing(points: np.ndarray) -> float:
    """Mean nearest-neighbor distance (equals the spacing on regular grids)."""
    if points.shape[0] < 2:
        raise ValueError("need at least two sample points")
    d, _ = cKDTree(points).query(points, k=2)
    return float(d[:, 1].mean())


def h_schedule(h_initial: float, h_min: float) -> list:
    """Exact halving sequence h_initial, h_initial/2, ..., clamped at h_min."""
    out = [h_initial]
    while out[-1] > h_min:
        out.append(max(out[-1] / 2.0, h_min))
    return out


def default_initial_surface(samples: SdfSampleSet, subdivisions: int = 2) -> SurfaceMesh:
    """Enclosing sphere/circle centered on the sample cloud."""
    lo = samples.points.min(axis=0)
    hi = samples.points.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    center = samples.points.mean(axis=0)
    radius = 0.55 * diag / 2.0
    if samples.dim == 3:
        return make_icosphere(subdivisions, radius, center=center)
    segments = max(16, 4 * 4 ** subdivisions)
    return make_circle(segments, radius, center=center)


def _check_enclosure(init: SurfaceMesh, samples: SdfSampleSet):
    from .spatial import batch_signed_distance_arrays

    interior = samples.points[samples.values < 0.0]
    if interior.shape[0] == 0:
        return
    bvh = build_bvh(init)
    sd, _ = batch_signed_distance_arrays(bvh, init, interior)
    if np.any(sd >= 0.0):
        raise ValueError(
            "initial surface does not enclose all interior samples "
            "(pass check_enclosure=False for intentionally tight inits)")


def _watchdog_ok(V: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(V)) and np.all(np.abs(V) <= WATCHDOG_COORD_LIMIT))


def reconstruct(samples: SdfSampleSet, config: ReconstructionConfig | None = None,
                init: SurfaceMesh | None = None):
    """Reconstruct a surface from signed-distance samples.

    Returns (mesh, RunReport).  Raises ReconstructionAborted (with the last
    valid mesh attached) if vertex positions blow up or the solver fails.
    """
    if config is None:
        config = ReconstructionConfig()
    if len(samples) < 1:
        raise ValueError("sample set is empty")
    d = samples.dim
    eps = config.epsilon_for(d)
    tol = config.conv_tol_factor * eps
    h_min = config.h_min if config.h_min is not None else average_sample_spacing(samples.points)
    lo, hi = samples.points.min(axis=0), samples.points.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if config.h_initial is not None:
        h_initial = max(config.h_initial, h_min)
    else:
        # coarse enough to converge fast, fine enough that the default initial
        # sphere keeps on the order of 100 vertices through the first stage;
        # snapped to h_min * 2^k so every stage transition is a full halving
        # (a clamped final step would leave the split threshold above the
        # previous stage's edge lengths and freeze the resolution)
        target = max(min(8.0 * h_min, diag / 10.0), h_min)
        k = max(0, int(np.ceil(np.log2(target / h_min) - 1e-12)))
        h_initial = h_min * 2.0 ** k

    if init is None:
        mesh = default_initial_surface(samples, config.init_subdivisions)
        if config.check_enclosure:
            _check_enclosure(mesh, samples)
    else:
        vr = validate(init)
        if not vr.ok:
            raise ValueError(f"initial mesh is invalid: {', '.join(vr.issues) or 'see report'}")
        if init.dim != d:
            raise ValueError("initial mesh dimension does not match samples")
        mesh = init
        if config.check_enclosure:
            _check_enclosure(mesh, samples)

    rng = np.random.default_rng(config.rng_seed)
    report = RunReport(seed=config.rng_seed, n_samples=len(samples))
    stages = h_schedule(h_initial, h_min)
    t_start = time.perf_counter()
    global_it = 0

    for stage_idx, h in enumerate(stages):
        window = config.final_window if stage_idx == len(stages) - 1 else config.coarse_window
        stage_t0 = time.perf_counter()
        energies = []
        stage_converged = False
        for _ in range(config.max_iterations_per_stage):
            it_t0 = time.perf_counter()
            bvh = build_bvh(mesh)
            corr = compute_correspondences(mesh, bvh, samples)
            energies.append(energy_from_correspondences(corr))
            if converged(energies, window, tol):
                stage_converged = True
                break
            V, diag_step = flow_step(mesh, samples, config, rng, bvh=bvh, corr=corr)
            if not _watchdog_ok(V):
                report.aborted = True
                report.total_seconds = time.perf_counter() - t_start
                report.stages.append(StageSummary(
                    h=h, iterations=len(energies) - 1, start_energy=energies[0],
                    end_energy=energies[-1], converged=False,
                    seconds=time.perf_counter() - stage_t0))
                _finalize(mesh, samples, report)
                raise ReconstructionAborted(
                    "vertex positions diverged (watchdog)", mesh, report)
            stepped = mesh.with_vertices(V)
            # the step moves vertices but keeps connectivity, so the pre-step
            # correspondences still index valid elements; reusing them for the
            # active region saves a full closest-point pass per iteration
            region = compute_active_region(stepped, corr, eps)
            mesh = remesh(stepped, h, region, config.remesh_iterations_per_step)
            global_it += 1
            report.records.append(IterationRecord(
                stage=stage_idx, iteration=global_it, h=h, tau=diag_step.tau,
                energy=diag_step.energy_before, active_rows=diag_step.n_active,
                interior_rows=diag_step.n_interior_active,
                n_vertices=mesh.n_vertices,
                seconds=time.perf_counter() - it_t0))
        report.stages.append(StageSummary(
            h=h, iterations=len(energies) - 1 if stage_converged else len(energies),
            start_energy=energies[0], end_energy=energies[-1],
            converged=stage_converged, seconds=time.perf_counter() - stage_t0))

    report.total_seconds = time.perf_counter() - t_start
    _finalize(mesh, samples, report)
    return mesh, report


def _finalize(mesh: SurfaceMesh, samples: SdfSampleSet, report: RunReport):
    bvh = build_bvh(mesh)
    corr = compute_correspondences(mesh, bvh, samples)
    report.final_energy = energy_from_correspondences(corr)
    report.final_max_violation = float(corr.violation.max())
    report.validity = validate(mesh)


def merge_samples(a: SdfSampleSet, b: SdfSampleSet) -> SdfSampleSet:
    if a.dim != b.dim:
        raise ValueError("sample sets have different dimensions")
    return SdfSampleSet(
        np.vstack([a.points, b.points]),
        np.concatenate([a.values, b.values]),
        kind=a.kind, clamp_value=a.clamp_value)


def reconstruct_with_resampling(samples: SdfSampleSet, oracle, rounds: int,
                                config: ReconstructionConfig | None = None,
                                init: SurfaceMesh | None = None):
    """Alternate reconstruction and oracle-driven sample growth.

    After each converged run, new samples are proposed far from all existing
    sample spheres, valued by the oracle, and the flow restarts warm from the
    previous result.  rounds=0 is plain reconstruction.
    """
    if config is None:
        config = ReconstructionConfig()
    mesh, report = reconstruct(samples, config, init)
    current = samples
    for r in range(int(rounds)):
        new = propose_new_samples(mesh, current, oracle, seed=config.rng_seed + r + 1)
        current = merge_samples(current, new)
        warm_cfg = replace(config, check_enclosure=False)
        mesh, report = reconstruct(current, warm_cfg, init=mesh)
        report.resample_rounds = r + 1
    report.n_samples = len(current)
    return mesh, report

"""One implicit step of the sphere-reaching evolution.

Every sample (p_i, s_i) defines a sphere of radius |s_i| that the surface
must touch with the right orientation.  Each step freezes the closest-point
correspondences of the previous mesh, builds tangent targets on the sample
spheres, and solves the sparse normal equations (M + tau A^T A) V = M V_prev
+ tau A^T S for the new vertex positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import ReconstructionConfig, SdfSampleSet, SurfaceMesh
from .spatial import (
    SIDE_BOUNDARY,
    Bvh,
    ClosestPointResult,
    _SIDE_NAMES,
    batch_signed_distance_arrays,
    build_bvh,
)


@dataclass(frozen=True)
class Correspondence:
    """Per-sample view: closest point, orientation, tangent target."""

    sample: int
    cp: ClosestPointResult
    sigma: float
    tangent: np.ndarray
    active: bool
    violation: float
    signed_distance: float


class Correspondences:
    """Array-backed sequence of per-sample correspondences.

    Fields are parallel arrays over the sample index; ``active`` is the row
    mask applied by variant handling and batching before assembly.
    """

    def __init__(self, points, values, sd, cp_point, cp_element, cp_bary, cp_side,
                 sigma, tangent, active):
        self.points = points
        self.values = values
        self.sd = sd
        self.cp_point = cp_point
        self.cp_element = cp_element
        self.cp_bary = cp_bary
        self.cp_side = cp_side
        self.sigma = sigma
        self.tangent = tangent
        self.active = active

    @property
    def violation(self) -> np.ndarray:
        return np.abs(self.sd - self.values)

    def __len__(self):
        return self.points.shape[0]

    def __getitem__(self, i) -> Correspondence:
        cp = ClosestPointResult(
            point=self.cp_point[i].copy(),
            element=int(self.cp_element[i]),
            barycentric=self.cp_bary[i].copy(),
            distance=float(np.linalg.norm(self.points[i] - self.cp_point[i])),
            side=_SIDE_NAMES[int(self.cp_side[i])],
        )
        return Correspondence(
            sample=i,
            cp=cp,
            sigma=float(self.sigma[i]),
            tangent=self.tangent[i].copy(),
            active=bool(self.active[i]),
            violation=float(abs(self.sd[i] - self.values[i])),
            signed_distance=float(self.sd[i]),
        )

    def copy(self) -> "Correspondences":
        return Correspondences(self.points, self.values, self.sd.copy(),
                               self.cp_point.copy(), self.cp_element.copy(),
                               self.cp_bary.copy(), self.cp_side.copy(),
                               self.sigma.copy(), self.tangent.copy(),
                               self.active.copy())


@dataclass(frozen=True)
class FlowSystem:
    """Assembled sparse system for one implicit step, Q V = B."""

    A: sp.csr_matrix        # (n_active, m) barycentric rows
    S: np.ndarray           # (n_active, d) tangent targets
    M: sp.dia_matrix        # (m, m) lumped mass
    tau: float
    Q: sp.csc_matrix
    B: np.ndarray

    @property
    def n_active(self) -> int:
        return self.A.shape[0]


@dataclass
class StepDiagnostics:
    tau: float = 0.0
    energy_before: float = 0.0
    n_active: int = 0
    n_interior_active: int = 0
    max_violation: float = 0.0
    solver_residual: float = 0.0
    no_op: bool = False


def compute_mass_matrix(mesh: SurfaceMesh) -> sp.dia_matrix:
    """Lumped barycentric mass: each element spreads measure/d to its corners.

    Zero rows (from zero-measure elements) are lifted by 1e-12 * mean mass so
    the step matrix stays positive definite.
    """
    measures = mesh.element_measures()
    m = np.zeros(mesh.n_vertices)
    share = measures / mesh.dim
    for k in range(mesh.dim):
        np.add.at(m, mesh.elements[:, k], share)
    if np.any(m == 0.0) and m.size:
        m = m + 1e-12 * m.mean()
    return sp.diags(m)


def compute_correspondences(mesh: SurfaceMesh, bvh: Bvh,
                            samples: SdfSampleSet) -> Correspondences:
    """Closest points, orientations sigma and tangent targets for all samples.

    sigma is +1 when the sample's sign agrees with its side of the surface
    (inside with negative value, outside with positive) and -1 otherwise;
    samples whose closest point lies on an element boundary always use +1,
    i.e. the nearest point of their sphere.
    """
    p = samples.points
    s = samples.values
    sd, batch = batch_signed_distance_arrays(bvh, mesh, p)

    inside = sd < 0.0
    sigma = np.where(inside == (s < 0.0), 1.0, -1.0)
    sigma[batch.side == SIDE_BOUNDARY] = 1.0

    direction = batch.point - p
    lens = np.linalg.norm(direction, axis=1)
    degenerate = lens == 0.0
    unit = direction / np.where(degenerate, 1.0, lens)[:, None]
    if np.any(degenerate):
        # sample exactly on the surface: fall back to the element normal so
        # the tangent still sits on the sphere (t = p - s * n)
        n = bvh._normals[batch.element[degenerate]]
        unit[degenerate] = -np.sign(s[degenerate])[:, None] * n
        sigma[degenerate] = 1.0
    tangent = p + (sigma * np.abs(s))[:, None] * unit

    active = np.ones(len(samples), dtype=bool)
    return Correspondences(p, s, sd, batch.point, batch.element.copy(),
                           batch.barycentric, batch.side.copy(), sigma, tangent, active)


def apply_variant_mask(corr: Correspondences, samples: SdfSampleSet, mode: str,
                       sigma_c: float | None = None) -> Correspondences:
    """Activate/deactivate rows and adjust orientations per the SDF variant.

    signed: identity.  unsigned: all sigma forced to +1 and tangents moved to
    the nearer sphere point.  clamped: rows with |sd| > |s| > sigma_c drop out
    (their tangency requirement is unverifiable).  swept_volume: rows with
    |sd| > |s| and s < 0 drop out (interior values are only bounds).
    """
    out = corr.copy()
    if mode == "signed":
        return out
    if mode == "unsigned":
        flipped = out.sigma < 0.0
        out.sigma = np.ones_like(out.sigma)
        if np.any(flipped):
            direction = out.cp_point[flipped] - out.points[flipped]
            lens = np.linalg.norm(direction, axis=1)
            unit = direction / np.where(lens > 0.0, lens, 1.0)[:, None]
            out.tangent[flipped] = (out.points[flipped]
                                    + np.abs(out.values[flipped])[:, None] * unit)
        return out
    if mode == "clamped":
        if sigma_c is None:
            sigma_c = samples.clamp_value
        if sigma_c is None:
            raise ValueError("clamped variant requires sigma_c")
        out.active &= ~((np.abs(out.sd) > np.abs(out.values))
                        & (np.abs(out.values) > sigma_c))
        return out
    if mode == "swept_volume":
        out.active &= ~((np.abs(out.sd) > np.abs(out.values)) & (out.values < 0.0))
        return out
    raise ValueError(f"unknown variant {mode!r}")


def select_batch(samples: SdfSampleSet, corr: Correspondences, batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Row indices for this iteration: all interior plus random exterior.

    Interior samples (s_i < 0) are never dropped; exterior ones are sampled
    uniformly without replacement so the total stays at
    max(batch_size, n_interior).  Only currently active rows participate.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    active_idx = np.flatnonzero(corr.active)
    interior = active_idx[samples.values[active_idx] < 0.0]
    exterior = active_idx[samples.values[active_idx] >= 0.0]
    n_ext = max(batch_size - interior.size, 0)
    if exterior.size > n_ext:
        exterior = rng.choice(exterior, size=n_ext, replace=False)
    chosen = np.concatenate([interior, exterior])
    chosen.sort()
    return chosen


def assemble_rows(mesh: SurfaceMesh, corr: Correspondences, rows: np.ndarray):
    """Sparse barycentric matrix A and tangent target matrix S for the rows."""
    d = mesh.dim
    elem_verts = mesh.elements[corr.cp_element[rows]]  # (n_rows, d)
    indptr = np.arange(0, rows.size * d + 1, d)
    A = sp.csr_matrix((corr.cp_bary[rows].ravel(), elem_verts.ravel(), indptr),
                      shape=(rows.size, mesh.n_vertices))
    return A, corr.tangent[rows]


def assemble_system(mesh: SurfaceMesh, corr: Correspondences, rows: np.ndarray,
                    M: sp.dia_matrix, tau: float) -> FlowSystem:
    """Full SPD step system Q V = B at the given step size."""
    A, S = assemble_rows(mesh, corr, rows)
    return FlowSystem(A=A, S=S, M=M, tau=tau,
                      Q=(M + tau * (A.T @ A)).tocsc(),
                      B=M @ mesh.vertices + tau * (A.T @ S))


def step_size(A, V, S, tau_min: float = 1e-6, tau_max: float = 50.0,
              curvature: float = 0.01) -> float:
    """Adaptive step size: tau = rho * clamp(tau*, tau_min, tau_max).

    rho = 1/n over the active rows; tau* comes from the descent direction
    P = -rho A^T (A V - S) via
    tau* = -(rho <AV-S, AP> + curvature ||P||^2) / (rho ||AP||^2).
    A stationary system (AP = 0) returns rho * tau_min.
    """
    n = A.shape[0]
    if n < 1:
        raise ValueError("step size needs at least one active row")
    rho = 1.0 / n
    R = A @ V - S
    P = -rho * (A.T @ R)
    AP = A @ P
    ap2 = float(np.sum(AP * AP))
    if ap2 == 0.0:
        return rho * tau_min
    num = rho * float(np.sum(R * AP)) + curvature * float(np.sum(P * P))
    tau_star = -num / (rho * ap2)
    return rho * min(max(tau_star, tau_min), tau_max)


def solve_flow_system(system: FlowSystem) -> tuple[np.ndarray, float]:
    """Solve Q V = B by sparse factorization; returns (V, relative residual)."""
    solve = spla.factorized(system.Q)
    V = np.column_stack([solve(system.B[:, j]) for j in range(system.B.shape[1])])
    norm_b = np.linalg.norm(system.B)
    residual = np.linalg.norm(system.Q @ V - system.B) / (norm_b if norm_b > 0.0 else 1.0)
    if not np.isfinite(residual) or residual > 1e-8:
        raise ArithmeticError(f"flow solve residual {residual:.3e} exceeds 1e-8")
    return V, residual


def sdf_energy(mesh: SurfaceMesh, bvh: Bvh, samples: SdfSampleSet) -> float:
    """0.5 * sum (sd(p_i, mesh) - s_i)^2 over ALL samples (never batched)."""
    sd, _ = batch_signed_distance_arrays(bvh, mesh, samples.points)
    return float(0.5 * np.sum((sd - samples.values) ** 2))


def energy_from_correspondences(corr: Correspondences) -> float:
    return float(0.5 * np.sum((corr.sd - corr.values) ** 2))


def flow_step(mesh: SurfaceMesh, samples: SdfSampleSet,
              config: ReconstructionConfig, rng: np.random.Generator,
              bvh: Bvh | None = None,
              corr: Correspondences | None = None):
    """One implicit step; returns (new vertex array, StepDiagnostics).

    Correspondences, orientations and tangent targets are all frozen from the
    input mesh (the previous flow state); only vertex positions move.  A
    precomputed bvh/correspondence pair may be passed to avoid recomputation.
    """
    if bvh is None:
        bvh = build_bvh(mesh)
    if corr is None:
        corr = compute_correspondences(mesh, bvh, samples)
    corr = apply_variant_mask(corr, samples, config.variant, config.sigma_c)
    rows = select_batch(samples, corr, config.batch_size, rng)

    diag = StepDiagnostics()
    diag.energy_before = energy_from_correspondences(corr)
    diag.max_violation = float(corr.violation.max()) if len(corr) else 0.0
    diag.n_active = int(rows.size)
    diag.n_interior_active = int(np.sum(samples.values[rows] < 0.0))

    if rows.size == 0:
        diag.no_op = True
        return mesh.vertices.copy(), diag

    M = compute_mass_matrix(mesh)
    A, S = assemble_rows(mesh, corr, rows)
    tau = step_size(A, mesh.vertices, S, config.tau_min, config.tau_max,
                    config.step_curvature)
    system = FlowSystem(A=A, S=S, M=M, tau=tau,
                        Q=(M + tau * (A.T @ A)).tocsc(),
                        B=M @ mesh.vertices + tau * (A.T @ S))
    V, residual = solve_flow_system(system)
    diag.tau = tau
    diag.solver_residual = residual
    return V, diag

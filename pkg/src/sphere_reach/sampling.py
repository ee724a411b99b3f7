"""Signed-distance sample generation from ground-truth meshes.

Grids follow the repo-wide convention: row-major ordering with x varying
fastest, spanning [-1, 1]^d for shapes normalized to [-1/2, 1/2]^d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SdfSampleSet, SurfaceMesh, validate
from .spatial import batch_signed_distance_arrays, build_bvh


@dataclass(frozen=True)
class GridSpec:
    """Regular sample grid: per-axis counts, corner origin and step."""

    dims: tuple
    origin: np.ndarray
    spacing: np.ndarray

    def __post_init__(self):
        dims = tuple(int(k) for k in self.dims)
        if any(k < 2 for k in dims):
            raise ValueError("grid needs at least 2 samples per axis")
        origin = np.asarray(self.origin, dtype=np.float64).ravel()
        spacing = np.asarray(self.spacing, dtype=np.float64).ravel()
        if spacing.size == 1:
            spacing = np.repeat(spacing, len(dims))
        if origin.size != len(dims) or spacing.size != len(dims):
            raise ValueError("origin/spacing must match the number of axes")
        if np.any(spacing <= 0.0):
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def cube(cls, k: int, dim: int) -> "GridSpec":
        """k samples per axis spanning [-1, 1]^dim."""
        return cls((k,) * dim, np.full(dim, -1.0), np.full(dim, 2.0 / (k - 1)))

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.dims))

    def points(self) -> np.ndarray:
        """All grid positions in row-major order, x fastest."""
        axes = [self.origin[i] + self.spacing[i] * np.arange(self.dims[i])
                for i in range(self.dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)


def sample_grid(gt_mesh: SurfaceMesh, spec: GridSpec) -> SdfSampleSet:
    """Exact signed distances to gt_mesh at every grid point."""
    if gt_mesh.dim != spec.dim:
        raise ValueError("mesh and grid dimensions differ")
    report = validate(gt_mesh)
    if not (report.is_watertight and report.is_oriented):
        raise ValueError(
            "signed sampling requires a watertight, consistently oriented mesh "
            "(consider unsigned values instead)")
    bvh = build_bvh(gt_mesh)
    pts = spec.points()
    values, _ = batch_signed_distance_arrays(bvh, gt_mesh, pts)
    return SdfSampleSet(pts, values, kind="signed")


def vertex_normals(mesh: SurfaceMesh) -> np.ndarray:
    """Area-weighted vertex normals (unit length where defined)."""
    c = mesh.element_corners()
    if mesh.dim == 2:
        t = c[:, 1] - c[:, 0]
        fn = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        fn = 0.5 * np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    vn = np.zeros_like(mesh.vertices)
    for k in range(mesh.elements.shape[1]):
        np.add.at(vn, mesh.elements[:, k], fn)
    lens = np.linalg.norm(vn, axis=1)
    return vn / np.where(lens > 0.0, lens, 1.0)[:, None]


def surface_samples(mesh: SurfaceMesh, n: int, rng: np.random.Generator):
    """Area-uniform points on the surface; returns (points, elements, bary)."""
    measures = mesh.element_measures()
    total = measures.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero total measure")
    probs = measures / total
    elems = rng.choice(mesh.n_elements, size=n, p=probs)
    corners = mesh.element_corners()[elems]
    if mesh.dim == 2:
        t = rng.random(n)
        bary = np.stack([1.0 - t, t], axis=1)
    else:
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    points = np.einsum("nk,nkd->nd", bary, corners)
    return points, elems, bary


def sample_pointcloud(gt_mesh: SurfaceMesh, n: int, mode: str = "uniform_box",
                      stddev: float = 0.0, seed: int = 0) -> SdfSampleSet:
    """Unstructured samples with exact signed distances to gt_mesh.

    ``uniform_box`` draws positions uniformly in [-1, 1]^d; ``near_surface``
    draws area-uniform surface points displaced along the interpolated vertex
    normal by Normal(0, stddev).  Values are exact for the final (displaced)
    positions in both modes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = gt_mesh.dim
    if mode == "uniform_box":
        pts = rng.uniform(-1.0, 1.0, size=(n, d))
    elif mode == "near_surface":
        pts, elems, bary = surface_samples(gt_mesh, n, rng)
        vn = vertex_normals(gt_mesh)[gt_mesh.elements[elems]]
        normals = np.einsum("nk,nkd->nd", bary, vn)
        lens = np.linalg.norm(normals, axis=1)
        normals = normals / np.where(lens > 0.0, lens, 1.0)[:, None]
        pts = pts + rng.normal(0.0, stddev, size=n)[:, None] * normals if stddev > 0.0 else pts
    else:
        raise ValueError(f"unknown mode {mode!r}")
    bvh = build_bvh(gt_mesh)
    values, _ = batch_signed_distance_arrays(bvh, gt_mesh, pts)
    return SdfSampleSet(pts, values, kind="signed")


def clamp_samples(samples: SdfSampleSet, sigma_c: float) -> SdfSampleSet:
    """Truncate value magnitudes at sigma_c; marks the set as clamped."""
    if not sigma_c > 0.0:
        raise ValueError("sigma_c must be positive")
    values = np.clip(samples.values, -sigma_c, sigma_c)
    return SdfSampleSet(samples.points, values, kind="clamped", clamp_value=sigma_c)


def add_noise(samples: SdfSampleSet, stddev: float, seed: int = 0) -> SdfSampleSet:
    """Add i.i.d. Gaussian noise to the values; points are unchanged."""
    if stddev < 0.0:
        raise ValueError("stddev must be >= 0")
    if stddev == 0.0:
        return SdfSampleSet(samples.points, samples.values, kind=samples.kind,
                            clamp_value=samples.clamp_value)
    rng = np.random.default_rng(seed)
    values = samples.values + rng.normal(0.0, stddev, size=len(samples))
    return SdfSampleSet(samples.points, values, kind=samples.kind,
                        clamp_value=samples.clamp_value)


# displacement scale for trial points, in units of the normalized shape
RESAMPLE_DISPLACEMENT = 0.05
RESAMPLE_TRIALS_PER_NEW = 50


def new_sample_count(n_existing: int, dim: int) -> int:
    """Samples added per resampling round: 2*sqrt(n) in 2D, 2*cbrt(n) in 3D."""
    if dim == 2:
        return max(1, int(round(2.0 * np.sqrt(n_existing))))
    return max(1, int(round(2.0 * n_existing ** (1.0 / 3.0))))


def propose_new_samples(current: SurfaceMesh, existing: SdfSampleSet | None,
                        oracle, seed: int = 0) -> SdfSampleSet:
    """Pick new sample locations far from every existing sample sphere.

    Trial points are drawn area-uniformly on the current surface and displaced
    along the interpolated normal by Normal(0, 0.05).  Each trial is scored by
    its distance to the nearest existing sphere surface, min_i | ||q - p_i|| -
    |s_i| |, and the best-scoring trials are kept greedily with at most one
    per source element.  Values come from the oracle.
    """
    d = current.dim
    n_existing = len(existing) if existing is not None else 0
    m_new = new_sample_count(max(n_existing, 1), d)
    m_trial = RESAMPLE_TRIALS_PER_NEW * m_new
    rng = np.random.default_rng(seed)

    pts, elems, bary = surface_samples(current, m_trial, rng)
    vn = vertex_normals(current)[current.elements[elems]]
    normals = np.einsum("nk,nkd->nd", bary, vn)
    lens = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(lens > 0.0, lens, 1.0)[:, None]
    pts = pts + rng.normal(0.0, RESAMPLE_DISPLACEMENT, size=m_trial)[:, None] * normals

    if existing is None or n_existing == 0:
        scores = np.full(m_trial, np.inf)
    else:
        scores = np.empty(m_trial)
        radius = np.abs(existing.values)
        chunk = max(1, int(4_000_000 // max(n_existing, 1)))
        for lo in range(0, m_trial, chunk):
            q = pts[lo:lo + chunk]
            dist = np.linalg.norm(q[:, None, :] - existing.points[None, :, :], axis=2)
            scores[lo:lo + chunk] = np.abs(dist - radius[None, :]).min(axis=1)

    order = np.argsort(-scores, kind="stable")
    chosen = []
    used_elements = set()
    for idx in order:
        e = int(elems[idx])
        if e in used_elements:
            continue
        used_elements.add(e)
        chosen.append(int(idx))
        if len(chosen) == m_new:
            break
    chosen = np.array(chosen, dtype=np.int64)
    new_pts = pts[chosen]
    new_vals = np.array([float(oracle(p)) for p in new_pts])
    kind = existing.kind if existing is not None else "signed"
    clamp = existing.clamp_value if existing is not None else None
    return SdfSampleSet(new_pts, new_vals, kind=kind, clamp_value=clamp)

"""Analytic genus-0 test shapes, built by radially mapping an icosphere.

All shapes are star-shaped around the origin (so the construction cannot
self-intersect), watertight, and sized to fit [-1/2, 1/2]^3.
"""

from __future__ import annotations

import numpy as np

from .mesh import SurfaceMesh, make_icosphere


def _radial_map(radius_fn, subdivisions: int = 4) -> SurfaceMesh:
    base = make_icosphere(subdivisions, 1.0)
    u = base.vertices / np.linalg.norm(base.vertices, axis=1)[:, None]
    r = radius_fn(u)
    return SurfaceMesh(u * r[:, None], base.elements)


def bumpy_sphere(base_radius: float = 0.40, amplitude: float = 0.06,
                 subdivisions: int = 4) -> SurfaceMesh:
    """Sphere with smooth angular bumps that coarse grids cannot resolve."""

    def radius(u):
        x, y, z = u[:, 0], u[:, 1], u[:, 2]
        wobble = (np.sin(4.0 * x) * np.sin(4.0 * y)
                  + np.sin(4.0 * y) * np.sin(4.0 * z)
                  + np.sin(4.0 * z) * np.sin(4.0 * x))
        return base_radius + amplitude * wobble / 3.0 * 3.0

    return _radial_map(radius, subdivisions)


def ellipsoid(a: float = 0.48, b: float = 0.40, c: float = 0.28,
              subdivisions: int = 4) -> SurfaceMesh:
    def radius(u):
        return 1.0 / np.sqrt((u[:, 0] / a) ** 2 + (u[:, 1] / b) ** 2 + (u[:, 2] / c) ** 2)

    return _radial_map(radius, subdivisions)


def rounded_box(half_extent: float = 0.40, power: float = 4.0,
                subdivisions: int = 4) -> SurfaceMesh:
    """p-norm ball: box-like with rounded edges for moderate powers."""

    def radius(u):
        return half_extent / (np.abs(u) ** power).sum(axis=1) ** (1.0 / power)

    return _radial_map(radius, subdivisions)


def gourd(base_radius: float = 0.34, lobe: float = 0.12,
          subdivisions: int = 4) -> SurfaceMesh:
    """Two-lobed blob: a pinched waist that low resolutions tend to sever."""

    def radius(u):
        z = u[:, 2]
        return base_radius + lobe * np.cos(2.0 * np.arccos(np.clip(z, -1, 1)))

    return _radial_map(radius, subdivisions)


def spiked_blob(base_radius: float, amplitude: float, angular_width: float,
                axes, subdivisions: int = 4) -> SurfaceMesh:
    """Blob with narrow Gaussian protrusions along the given directions.

    The protrusions are thinner than a coarse grid cell, which is what makes
    cell-based extraction drop them while sample tangency still sees them.
    """
    axes = np.asarray(axes, dtype=np.float64)
    axes = axes / np.linalg.norm(axes, axis=1)[:, None]

    def radius(u):
        r = np.full(u.shape[0], base_radius)
        for ax in axes:
            ang = np.arccos(np.clip(u @ ax, -1.0, 1.0))
            r = r + amplitude * np.exp(-(ang / angular_width) ** 2)
        return r

    return _radial_map(radius, subdivisions)


def spiky3(subdivisions: int = 4) -> SurfaceMesh:
    return spiked_blob(0.37, 0.13, 0.125,
                       [[0.9, 0.3, 0.3], [-0.7, 0.7, -0.1], [-0.1, -0.8, 0.6]],
                       subdivisions)


def spiky5(subdivisions: int = 4) -> SurfaceMesh:
    return spiked_blob(0.36, 0.11, 0.15,
                       [[1, 0, 0], [-0.5, 0.8, 0.2], [0.1, -0.6, 0.75],
                        [-0.6, -0.5, -0.6], [0.3, 0.4, -0.85]],
                       subdivisions)


def spiky7(subdivisions: int = 4) -> SurfaceMesh:
    return spiked_blob(0.36, 0.095, 0.17,
                       [[1, 0.1, 0], [-0.9, 0.4, 0.2], [0.2, 1, 0.3],
                        [0, -0.8, 0.6], [-0.3, -0.4, -0.85],
                        [0.6, -0.2, 0.75], [0.5, 0.5, -0.7]],
                       subdivisions)


def torus(major_radius: float = 0.32, minor_radius: float = 0.13,
          n_major: int = 48, n_minor: int = 24) -> SurfaceMesh:
    """Watertight genus-1 torus around the z axis (for custom-init workflows)."""
    i = np.arange(n_major)
    j = np.arange(n_minor)
    phi = 2.0 * np.pi * i / n_major
    theta = 2.0 * np.pi * j / n_minor
    P, T = np.meshgrid(phi, theta, indexing="ij")
    x = (major_radius + minor_radius * np.cos(T)) * np.cos(P)
    y = (major_radius + minor_radius * np.cos(T)) * np.sin(P)
    z = minor_radius * np.sin(T)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    def vid(a, b):
        return (a % n_major) * n_minor + (b % n_minor)

    faces = []
    for a in range(n_major):
        for b in range(n_minor):
            v00, v10 = vid(a, b), vid(a + 1, b)
            v01, v11 = vid(a, b + 1), vid(a + 1, b + 1)
            faces.append([v00, v10, v11])
            faces.append([v00, v11, v01])
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64))


# genus-0 shapes whose thin features defeat cell-based extraction at coarse
# resolutions; used by the comparison benchmarks
BENCHMARK_SHAPES = {
    "spiky3": spiky3,
    "spiky5": spiky5,
    "spiky7": spiky7,
}

EXTRA_SHAPES = {
    "bumpy_sphere": bumpy_sphere,
    "ellipsoid": ellipsoid,
    "rounded_box": rounded_box,
    "gourd": gourd,
}

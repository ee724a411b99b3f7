"""On-disk formats: OBJ surfaces and plain-text signed-distance samples.

Floats are written with 17 significant digits so every 64-bit value
round-trips exactly.  3D meshes use ``v``/``f`` records (triangles only);
2D polylines use ``v`` records with z=0 plus one ``l`` record per segment.

Sample files:
    sdfsamples <d> <n> <kind>
    [grid <dims...> <origin...> <spacing...>]
    <x> [y [z]] <value>          (n lines)

``kind`` is signed | unsigned | clamped:<value> | conservative_interior.
Grid-sampled files carry the ``grid`` header; their lines are in row-major
order with x varying fastest.
"""

from __future__ import annotations

import numpy as np

from .mesh import SdfSampleSet, SurfaceMesh
from .sampling import GridSpec


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_obj(path, mesh: SurfaceMesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            if mesh.dim == 2:
                fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} 0\n")
            else:
                fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for e in mesh.elements:
            if mesh.dim == 2:
                fh.write(f"l {e[0] + 1} {e[1] + 1}\n")
            else:
                fh.write(f"f {e[0] + 1} {e[1] + 1} {e[2] + 1}\n")


def read_obj(path) -> SurfaceMesh:
    """Parse v/f/l records; f entries may carry /texture/normal suffixes."""
    verts = []
    faces = []
    lines_2d = []
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangle faces are supported")
                faces.append(idx)
            elif parts[0] == "l":
                idx = [int(p) - 1 for p in parts[1:]]
                for a, b in zip(idx[:-1], idx[1:]):
                    lines_2d.append([a, b])
    if not verts:
        raise ValueError(f"no vertices in {path}")
    verts = np.array(verts, dtype=np.float64)
    if faces and lines_2d:
        raise ValueError("mixed f and l records are not supported")
    if lines_2d:
        if np.any(verts[:, 2] != 0.0):
            raise ValueError("polyline OBJ must have z=0")
        return SurfaceMesh(verts[:, :2], np.array(lines_2d, dtype=np.int64))
    if not faces:
        raise ValueError(f"no elements in {path}")
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64))


def _kind_token(samples: SdfSampleSet) -> str:
    if samples.kind == "clamped":
        return f"clamped:{_fmt(samples.clamp_value)}"
    return samples.kind


def _parse_kind(token: str):
    if token.startswith("clamped:"):
        return "clamped", float(token.split(":", 1)[1])
    if token in ("signed", "unsigned", "conservative_interior"):
        return token, None
    raise ValueError(f"unknown sample kind {token!r}")


def write_samples(path, samples: SdfSampleSet, grid: GridSpec | None = None):
    d = samples.dim
    with open(path, "w") as fh:
        fh.write(f"sdfsamples {d} {len(samples)} {_kind_token(samples)}\n")
        if grid is not None:
            if grid.n_points != len(samples):
                raise ValueError("grid header does not match sample count")
            dims = " ".join(str(k) for k in grid.dims)
            origin = " ".join(_fmt(x) for x in grid.origin)
            spacing = " ".join(_fmt(x) for x in grid.spacing)
            fh.write(f"grid {dims} {origin} {spacing}\n")
        for p, s in zip(samples.points, samples.values):
            coords = " ".join(_fmt(x) for x in p)
            fh.write(f"{coords} {_fmt(s)}\n")


def read_samples(path):
    """Returns (SdfSampleSet, GridSpec or None)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "sdfsamples":
            raise ValueError(f"{path} is not a sample file")
        d = int(header[1])
        n = int(header[2])
        kind, clamp = _parse_kind(header[3])
        pos = fh.tell()
        grid = None
        line = fh.readline().split()
        if line and line[0] == "grid":
            rest = [float(x) for x in line[1:]]
            if len(rest) != 3 * d:
                raise ValueError("malformed grid header")
            dims = tuple(int(x) for x in rest[:d])
            grid = GridSpec(dims, np.array(rest[d:2 * d]), np.array(rest[2 * d:]))
        else:
            fh.seek(pos)
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (n, d + 1):
        raise ValueError(f"expected {n} rows of {d + 1} values, got {data.shape}")
    if grid is not None and grid.n_points != n:
        raise ValueError("grid header does not match sample count")
    samples = SdfSampleSet(data[:, :d], data[:, d], kind=kind, clamp_value=clamp)
    return samples, grid


def normalize_mesh(mesh: SurfaceMesh) -> SurfaceMesh:
    """Center and scale so the shape fits the box [-1/2, 1/2]^d."""
    lo, hi = mesh.bounding_box()
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("mesh has zero extent")
    return mesh.with_vertices((mesh.vertices - center) / extent)

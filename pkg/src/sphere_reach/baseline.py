"""Grid-based isosurface extraction: marching cubes (3D), marching squares (2D).

The classic per-cell table method with linear interpolation along
sign-changing edges.  Used both as the comparison baseline and to build
initial surfaces for shapes the default enclosing sphere cannot match
topologically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .mesh import SurfaceMesh
from .sampling import GridSpec


@dataclass(frozen=True)
class GridField:
    """Scalar samples on a regular grid, row-major with x fastest."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.spec.n_points:
            raise ValueError("value count does not match grid dims")
        object.__setattr__(self, "values", v)

    def value_grid(self) -> np.ndarray:
        """Values reshaped to [ix, iy(, iz)] index order."""
        return self.values.reshape(self.spec.dims, order="F")


def _interp(p_a, p_b, v_a, v_b, isovalue):
    denom = v_b - v_a
    if abs(denom) < 1e-300:
        t = 0.5
    else:
        t = (isovalue - v_a) / denom
    return p_a + t * (p_b - p_a)


def marching_cubes(field: GridField, isovalue: float = 0.0) -> SurfaceMesh:
    """Standard 256-case triangulation of the isovalue level set.

    Vertices on shared cell edges are merged, so the output is watertight
    wherever the case table is consistent; ambiguous saddle configurations
    may still produce non-manifold spots (check with validate()).
    A field without sign changes yields an empty mesh.
    """
    spec = field.spec
    if spec.dim != 3:
        raise ValueError("marching_cubes requires a 3D grid")
    nx, ny, nz = spec.dims
    vals = field.value_grid()
    axes = [spec.origin[i] + spec.spacing[i] * np.arange(spec.dims[i]) for i in range(3)]

    inside = vals < isovalue
    vert_of_edge = {}
    verts = []
    tris = []

    def edge_vertex(ix, iy, iz, edge):
        oa = CORNER_OFFSETS[EDGE_CORNERS[edge][0]]
        ob = CORNER_OFFSETS[EDGE_CORNERS[edge][1]]
        ca = (ix + oa[0], iy + oa[1], iz + oa[2])
        cb = (ix + ob[0], iy + ob[1], iz + ob[2])
        key = (ca, cb) if ca <= cb else (cb, ca)
        idx = vert_of_edge.get(key)
        if idx is None:
            pa = np.array([axes[0][ca[0]], axes[1][ca[1]], axes[2][ca[2]]])
            pb = np.array([axes[0][cb[0]], axes[1][cb[1]], axes[2][cb[2]]])
            idx = len(verts)
            verts.append(_interp(pa, pb, vals[ca], vals[cb], isovalue))
            vert_of_edge[key] = idx
        return idx

    for iz in range(nz - 1):
        for iy in range(ny - 1):
            for ix in range(nx - 1):
                case = 0
                for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
                    if inside[ix + ox, iy + oy, iz + oz]:
                        case |= 1 << bit
                if EDGE_TABLE[case] == 0:
                    continue
                row = TRI_TABLE[case]
                for k in range(0, len(row), 3):
                    a = edge_vertex(ix, iy, iz, row[k])
                    b = edge_vertex(ix, iy, iz, row[k + 1])
                    c = edge_vertex(ix, iy, iz, row[k + 2])
                    if a != b and b != c and c != a:
                        # table winding is inward for value<iso inside;
                        # flip for outward normals
                        tris.append((a, c, b))

    if not tris:
        return SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return SurfaceMesh(np.array(verts), np.array(tris, dtype=np.int64))


# marching-squares cases: bit i set when corner i is inside (value < iso);
# corners 0..3 = (0,0),(1,0),(1,1),(0,1); edges 0..3 = bottom,right,top,left.
# Segments run with the inside region on their left (counter-clockwise loops).
_MS_SEGMENTS = {
    0: (),
    1: ((0, 3),),
    2: ((1, 0),),
    3: ((1, 3),),
    4: ((2, 1),),
    5: None,  # ambiguous: resolved by cell-center sign
    6: ((2, 0),),
    7: ((2, 3),),
    8: ((3, 2),),
    9: ((0, 2),),
    10: None,  # ambiguous
    11: ((1, 2),),
    12: ((3, 1),),
    13: ((0, 1),),
    14: ((3, 0),),
    15: (),
}
_MS_EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0))
_MS_CORNER_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))


def marching_squares(field: GridField, isovalue: float = 0.0) -> SurfaceMesh:
    """16-case contouring: closed counter-clockwise loops around value<iso.

    Ambiguous saddle cells are disambiguated by the average of the four
    corner values (the cell-center estimate).
    """
    spec = field.spec
    if spec.dim != 2:
        raise ValueError("marching_squares requires a 2D grid")
    nx, ny = spec.dims
    vals = field.value_grid()
    axes = [spec.origin[i] + spec.spacing[i] * np.arange(spec.dims[i]) for i in range(2)]
    inside = vals < isovalue

    vert_of_edge = {}
    verts = []
    segs = []

    def edge_vertex(ix, iy, edge):
        oa = _MS_CORNER_OFFSETS[_MS_EDGE_CORNERS[edge][0]]
        ob = _MS_CORNER_OFFSETS[_MS_EDGE_CORNERS[edge][1]]
        ca = (ix + oa[0], iy + oa[1])
        cb = (ix + ob[0], iy + ob[1])
        key = (ca, cb) if ca <= cb else (cb, ca)
        idx = vert_of_edge.get(key)
        if idx is None:
            pa = np.array([axes[0][ca[0]], axes[1][ca[1]]])
            pb = np.array([axes[0][cb[0]], axes[1][cb[1]]])
            idx = len(verts)
            verts.append(_interp(pa, pb, vals[ca], vals[cb], isovalue))
            vert_of_edge[key] = idx
        return idx

    for iy in range(ny - 1):
        for ix in range(nx - 1):
            case = 0
            for bit, (ox, oy) in enumerate(_MS_CORNER_OFFSETS):
                if inside[ix + ox, iy + oy]:
                    case |= 1 << bit
            entry = _MS_SEGMENTS[case]
            if entry is None:
                center = 0.25 * (vals[ix, iy] + vals[ix + 1, iy]
                                 + vals[ix + 1, iy + 1] + vals[ix, iy + 1])
                if case == 5:
                    entry = ((0, 1), (2, 3)) if center < isovalue else ((0, 3), (2, 1))
                else:  # case 10
                    entry = ((3, 0), (1, 2)) if center < isovalue else ((1, 0), (3, 2))
            for ea, eb in entry:
                a = edge_vertex(ix, iy, ea)
                b = edge_vertex(ix, iy, eb)
                if a != b:
                    segs.append((a, b))

    if not segs:
        return SurfaceMesh(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64))
    return SurfaceMesh(np.array(verts), np.array(segs, dtype=np.int64))


def extract_baseline(field: GridField, isovalue: float = 0.0) -> SurfaceMesh:
    """Marching cubes or squares depending on the grid dimension."""
    return marching_cubes(field, isovalue) if field.spec.dim == 3 else marching_squares(field, isovalue)

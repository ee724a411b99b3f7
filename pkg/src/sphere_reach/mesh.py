"""Dimension-generic surface meshes and signed-distance sample sets.

A surface is a closed polyline in 2D (elements are index pairs) or a
triangle mesh in 3D (elements are index triples).  The element width always
equals the ambient dimension, which lets closest-point barycentrics, mass
lumping and system assembly share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORIENTATION_NOTE = (
    "convention: counter-clockwise loops in 2D, right-hand-rule triangles in 3D, "
    "normals pointing outward"
)


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurfaceMesh:
    """Simplicial surface: segments when d=2, oriented triangles when d=3."""

    vertices: np.ndarray  # (n_vertices, d) float64
    elements: np.ndarray  # (n_elements, d) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise ValueError(f"vertices must be (n, 2) or (n, 3), got {v.shape}")
        d = v.shape[1]
        e = np.asarray(self.elements, dtype=np.int64)
        if e.size == 0:
            e = e.reshape(0, d)
        if e.ndim != 2 or e.shape[1] != d:
            raise ValueError(f"elements must be (k, {d}), got {e.shape}")
        object.__setattr__(self, "vertices", _frozen(v, np.float64))
        object.__setattr__(self, "elements", _frozen(e, np.int64))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def with_vertices(self, vertices) -> "SurfaceMesh":
        """New mesh with the same connectivity and replaced positions."""
        return SurfaceMesh(vertices, self.elements)

    def element_corners(self) -> np.ndarray:
        """Corner positions, shape (n_elements, d, d)."""
        return self.vertices[self.elements]

    def element_measures(self) -> np.ndarray:
        """Length of each segment (2D) or area of each triangle (3D)."""
        c = self.element_corners()
        if self.dim == 2:
            return np.linalg.norm(c[:, 1] - c[:, 0], axis=1)
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(n, axis=1)

    def element_normals(self) -> np.ndarray:
        """Unit outward normals per element (zero for degenerate elements)."""
        c = self.element_corners()
        if self.dim == 2:
            t = c[:, 1] - c[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        lens = np.linalg.norm(n, axis=1)
        safe = np.where(lens > 0.0, lens, 1.0)
        return n / safe[:, None]

    def edges(self) -> np.ndarray:
        """Undirected edges as sorted index pairs, deduplicated, lex-ordered."""
        if self.dim == 2:
            e = np.sort(self.elements, axis=1)
        else:
            f = self.elements
            e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            e = np.sort(e, axis=1)
        e = np.unique(e, axis=0)
        return e

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class SdfSampleSet:
    """Sample points with signed-distance values.

    ``kind`` is one of ``signed``, ``unsigned``, ``clamped`` or
    ``conservative_interior``; clamped sets carry the clamp value used to
    truncate them.
    """

    points: np.ndarray  # (n, d) float64
    values: np.ndarray  # (n,) float64
    kind: str = "signed"
    clamp_value: float | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if p.ndim != 2 or p.shape[1] not in (2, 3):
            raise ValueError(f"points must be (n, 2) or (n, 3), got {p.shape}")
        if p.shape[0] != v.shape[0]:
            raise ValueError("points and values must have equal length")
        if p.shape[0] < 1:
            raise ValueError("sample set must contain at least one sample")
        if self.kind not in ("signed", "unsigned", "clamped", "conservative_interior"):
            raise ValueError(f"unknown sample kind {self.kind!r}")
        if self.kind == "unsigned" and np.any(v < 0.0):
            raise ValueError("unsigned sample set has negative values")
        if self.kind == "clamped":
            if self.clamp_value is None or not self.clamp_value > 0.0:
                raise ValueError("clamped sample set requires clamp_value > 0")
        object.__setattr__(self, "points", _frozen(p, np.float64))
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ReconstructionConfig:
    """Tunables for the reconstruction flow.

    ``epsilon``, ``h_min`` and ``h_initial`` may be left ``None`` to have the
    driver derive them from the sample set (dimension-dependent tolerance,
    average nearest-neighbor spacing, and a coarse multiple of it).
    """

    tau_min: float = 1e-6
    tau_max: float = 50.0
    epsilon: float | None = None
    h_min: float | None = None
    h_initial: float | None = None
    batch_size: int = 20000
    coarse_window: int = 10
    final_window: int = 100
    conv_tol_factor: float = 1e-3
    variant: str = "signed"
    sigma_c: float | None = None
    rng_seed: int = 0
    remesh_iterations_per_step: int = 1
    # step-size heuristic curvature constant (see flow.step_size)
    step_curvature: float = 0.01
    # safety cap so a stalled stage cannot loop forever
    max_iterations_per_stage: int = 2000
    # verify the initial surface encloses all interior sample spheres
    check_enclosure: bool = True
    init_subdivisions: int = 2

    def __post_init__(self):
        if not (0.0 < self.tau_min <= self.tau_max):
            raise ValueError("require 0 < tau_min <= tau_max")
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.h_min is not None and self.h_initial is not None:
            if not (0.0 < self.h_min <= self.h_initial):
                raise ValueError("require 0 < h_min <= h_initial")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.variant not in ("signed", "unsigned", "clamped", "swept_volume"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.remesh_iterations_per_step < 1:
            raise ValueError("remesh_iterations_per_step must be >= 1")

    def epsilon_for(self, dim: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 5e-3 if dim == 2 else 1e-2


@dataclass(frozen=True)
class ValidityReport:
    """Result of :func:`validate`; carries failures instead of raising."""

    dim: int
    n_vertices: int
    n_elements: int
    n_degenerate: int
    n_out_of_range: int
    n_boundary_edges: int
    n_nonmanifold_edges: int
    n_unreferenced_vertices: int
    euler_characteristic: int
    n_components: int
    is_watertight: bool
    is_edge_manifold: bool
    is_vertex_manifold: bool
    is_oriented: bool
    issues: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return (
            self.n_degenerate == 0
            and self.n_out_of_range == 0
            and self.is_watertight
            and self.is_edge_manifold
            and self.is_vertex_manifold
            and self.is_oriented
        )


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
    [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
    [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
], dtype=np.float64)

_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def _project_to_sphere(v, radius):
    # double normalization keeps |v| within an ulp of radius
    v = v / np.linalg.norm(v, axis=1)[:, None]
    v = v / np.linalg.norm(v, axis=1)[:, None]
    return v * radius


def make_icosphere(subdivisions: int, radius: float, center=None) -> SurfaceMesh:
    """Icosahedron subdivided ``subdivisions`` times, vertices on the sphere.

    Each level splits every triangle 4-to-1 and reprojects the new midpoint
    vertices to the sphere, so V = 10*4^k + 2 and F = 20*4^k.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if subdivisions < 0:
        raise ValueError("subdivisions must be non-negative")
    verts = _project_to_sphere(_ICO_VERTS.copy(), radius)
    faces = _ICO_FACES.copy()
    for _ in range(int(subdivisions)):
        verts_list = list(verts)
        midpoint = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            idx = midpoint.get(key)
            if idx is None:
                m = 0.5 * (verts_list[i] + verts_list[j])
                m = m / np.linalg.norm(m)
                m = m / np.linalg.norm(m) * radius
                verts_list.append(m)
                idx = len(verts_list) - 1
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    if center is not None:
        verts = verts + np.asarray(center, dtype=np.float64)
    return SurfaceMesh(verts, faces)


def make_circle(segments: int, radius: float, center=None) -> SurfaceMesh:
    """Closed counter-clockwise polyline on the circle of given radius."""
    if segments < 3:
        raise ValueError("segments must be >= 3")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    ang = 2.0 * np.pi * np.arange(segments) / segments
    verts = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if center is not None:
        verts = verts + np.asarray(center, dtype=np.float64)
    idx = np.arange(segments, dtype=np.int64)
    segs = np.stack([idx, (idx + 1) % segments], axis=1)
    return SurfaceMesh(verts, segs)


def _components(n_vertices, elements):
    """Connected components over referenced vertices (union-find)."""
    parent = np.arange(n_vertices, dtype=np.int64)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for elem in elements:
        r = find(elem[0])
        for v in elem[1:]:
            rv = find(v)
            if rv != r:
                parent[rv] = r
    referenced = np.unique(elements)
    return len({find(v) for v in referenced}) if referenced.size else 0


def validate(mesh: SurfaceMesh) -> ValidityReport:
    """Check manifoldness, watertightness, orientation and Euler characteristic.

    Never raises; all failures are recorded in the report.
    """
    d = mesh.dim
    elems = mesh.elements
    nv = mesh.n_vertices
    issues = []

    out_of_range = 0
    if elems.size:
        out_of_range = int(np.sum((elems < 0) | (elems >= nv)))
    if out_of_range:
        issues.append(f"{out_of_range} element indices out of range")
        ok_elems = elems[np.all((elems >= 0) & (elems < nv), axis=1)]
    else:
        ok_elems = elems

    degenerate = 0
    if ok_elems.size:
        if d == 2:
            degenerate = int(np.sum(ok_elems[:, 0] == ok_elems[:, 1]))
        else:
            degenerate = int(
                np.sum(
                    (ok_elems[:, 0] == ok_elems[:, 1])
                    | (ok_elems[:, 1] == ok_elems[:, 2])
                    | (ok_elems[:, 2] == ok_elems[:, 0])
                )
            )
    if degenerate:
        issues.append(f"{degenerate} degenerate elements")

    referenced = np.unique(ok_elems) if ok_elems.size else np.array([], dtype=np.int64)
    unreferenced = nv - referenced.size

    if d == 2:
        report = _validate_2d(mesh, ok_elems, issues)
    else:
        report = _validate_3d(mesh, ok_elems, issues)
    boundary, nonmanifold, watertight, edge_manifold, vertex_manifold, oriented, chi = report

    n_comp = _components(nv, ok_elems)

    return ValidityReport(
        dim=d,
        n_vertices=nv,
        n_elements=mesh.n_elements,
        n_degenerate=degenerate,
        n_out_of_range=out_of_range,
        n_boundary_edges=boundary,
        n_nonmanifold_edges=nonmanifold,
        n_unreferenced_vertices=unreferenced,
        euler_characteristic=chi,
        n_components=n_comp,
        is_watertight=watertight,
        is_edge_manifold=edge_manifold,
        is_vertex_manifold=vertex_manifold,
        is_oriented=oriented,
        issues=tuple(issues),
    )


def _validate_2d(mesh, segs, issues):
    nv = mesh.n_vertices
    if segs.size == 0:
        return 0, 0, True, True, True, True, 0
    deg = np.zeros(nv, dtype=np.int64)
    indeg = np.zeros(nv, dtype=np.int64)
    outdeg = np.zeros(nv, dtype=np.int64)
    np.add.at(deg, segs.ravel(), 1)
    np.add.at(outdeg, segs[:, 0], 1)
    np.add.at(indeg, segs[:, 1], 1)
    referenced = deg > 0
    boundary = int(np.sum(referenced & (deg != 2)))
    watertight = boundary == 0
    manifold = bool(np.all(deg[referenced] <= 2))
    # a consistent loop enters and leaves each vertex exactly once
    oriented = bool(np.all(indeg[referenced] == 1) and np.all(outdeg[referenced] == 1))
    if not watertight:
        issues.append(f"{boundary} vertices without exactly 2 incident segments")
    if not oriented:
        issues.append("inconsistent loop orientation")
    n_edges = segs.shape[0]
    chi = int(referenced.sum()) - n_edges
    return boundary, 0, watertight, manifold, manifold, oriented, chi


def _validate_3d(mesh, faces, issues):
    nv = mesh.n_vertices
    if faces.size == 0:
        return 0, 0, True, True, True, True, 0
    # directed edge census: a consistently oriented watertight mesh uses each
    # undirected edge exactly once in each direction
    directed = {}
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            directed[(int(u), int(v))] = directed.get((int(u), int(v)), 0) + 1
    undirected = {}
    for (u, v), cnt in directed.items():
        key = (u, v) if u < v else (v, u)
        undirected[key] = undirected.get(key, 0) + cnt

    boundary = sum(1 for cnt in undirected.values() if cnt == 1)
    nonmanifold = sum(1 for cnt in undirected.values() if cnt > 2)
    watertight = boundary == 0 and nonmanifold == 0
    edge_manifold = nonmanifold == 0
    oriented = all(cnt <= 1 for cnt in directed.values()) if edge_manifold else False
    if boundary:
        issues.append(f"{boundary} boundary edges")
    if nonmanifold:
        issues.append(f"{nonmanifold} non-manifold edges")
    if not oriented:
        issues.append("inconsistent triangle orientation")

    vertex_manifold = _vertex_manifold_3d(nv, faces)
    if not vertex_manifold:
        issues.append("non-manifold vertex fan")

    referenced = np.unique(faces)
    chi = int(referenced.size) - len(undirected) + faces.shape[0]
    return boundary, nonmanifold, watertight, edge_manifold, vertex_manifold, oriented, chi


def _vertex_manifold_3d(nv, faces):
    """Every vertex's incident faces must form a single edge-connected fan."""
    v2f = [[] for _ in range(nv)]
    for fi, f in enumerate(faces):
        for v in f:
            v2f[v].append(fi)
    face_sets = [frozenset(int(x) for x in f) for f in faces]
    for v in range(nv):
        inc = v2f[v]
        if len(inc) <= 1:
            continue
        # adjacency between incident faces through edges containing v
        edge_of = {}
        adj = {fi: [] for fi in inc}
        for fi in inc:
            for u in face_sets[fi]:
                if u == v:
                    continue
                key = u
                if key in edge_of:
                    adj[fi].append(edge_of[key])
                    adj[edge_of[key]].append(fi)
                edge_of[key] = fi
        seen = {inc[0]}
        stack = [inc[0]]
        while stack:
            cur = stack.pop()
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(inc):
            return False
    return True

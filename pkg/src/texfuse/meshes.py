"""Triangle mesh representation, OBJ I/O, and procedural test meshes.

All meshes are normalized to fit [-1, 1]^3 centered at the origin; the
original center and scale are kept so exports restore source coordinates.
UVs live per face corner, which lets seam and pole vertices stay welded
(watertight topology) while their texture coordinates differ per chart.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np


class MeshFormatError(ValueError):
    """Raised for mesh files this loader deliberately rejects."""


@dataclass
class TriangleMesh:
    """Fixed geometry with per-corner UVs.

    vertices: (V, 3) float64, normalized to [-1, 1]^3.
    faces: (F, 3) int32 vertex indices, counter-clockwise = outward.
    corner_uvs: (F, 3, 2) float64 in [0, 1]^2.
    vertex_normals: (V, 3) float64 unit vectors.
    source_center/source_scale: normalization metadata; original coordinates
    are ``v / source_scale + source_center``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    corner_uvs: np.ndarray
    vertex_normals: np.ndarray = field(default=None)  # type: ignore[assignment]
    source_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    source_scale: float = 1.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        self.corner_uvs = np.asarray(self.corner_uvs, dtype=np.float64).reshape(-1, 3, 2)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise MeshFormatError("face index out of range")
        if len(self.corner_uvs) != len(self.faces):
            raise MeshFormatError("corner_uvs count does not match face count")
        if self.vertex_normals is None:
            self.vertex_normals = _vertex_normals(self.vertices, self.faces)
        else:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        """(F, 3) unit outward normals; degenerate faces get +Z."""
        tri = self.vertices[self.faces]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return _normalize_rows(n)

    def euler_characteristic(self) -> int:
        edges = set()
        for a, b, c in self.faces:
            for u, v in ((a, b), (b, c), (c, a)):
                edges.add((min(u, v), max(u, v)))
        return self.num_vertices - len(edges) + self.num_faces

    def surface_area(self) -> float:
        tri = self.vertices[self.faces]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return float(0.5 * np.linalg.norm(n, axis=1).sum())


def _normalize_rows(v: np.ndarray, fallback=(0.0, 0.0, 1.0)) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)
    zero = norms[..., 0] == 0
    out[zero] = fallback
    return out


def _vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; vertices with no signal get +Z."""
    acc = np.zeros_like(vertices)
    if len(faces):
        tri = vertices[faces]
        # cross product magnitude is twice the face area, so summing raw
        # cross products is the area weighting
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(acc, faces[:, k], fn)
    return _normalize_rows(acc)


def compute_vertex_normals(mesh: TriangleMesh) -> TriangleMesh:
    """Return a copy with recomputed area-weighted vertex normals."""
    return TriangleMesh(
        vertices=mesh.vertices.copy(),
        faces=mesh.faces.copy(),
        corner_uvs=mesh.corner_uvs.copy(),
        vertex_normals=_vertex_normals(mesh.vertices, mesh.faces),
        source_center=mesh.source_center.copy(),
        source_scale=mesh.source_scale,
    )


def normalize_mesh(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the bbox midpoint and scale so max |coord| becomes 1."""
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    center = (lo + hi) / 2.0
    half = float(np.max(hi - lo) / 2.0)
    scale = 1.0 / half if half > 0 else 1.0
    return (vertices - center) * scale, center, scale


# ---------------------------------------------------------------------------
# Wavefront OBJ subset: v / vt / vn / f a/b/c
# ---------------------------------------------------------------------------

def load_mesh(path) -> TriangleMesh:
    """Load an OBJ file with positions, triangular faces, and per-corner UVs.

    Rejects non-triangular faces and faces without texture coordinates;
    normals in the file are ignored and recomputed. The mesh is normalized
    to [-1, 1]^3 with the original center/scale kept as metadata.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    positions: list[list[float]] = []
    texcoords: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                texcoords.append([float(parts[1]), float(parts[2])])
            elif tag == "f":
                corners = parts[1:]
                if len(corners) != 3:
                    raise MeshFormatError(
                        f"{path}:{lineno}: non-triangular face with "
                        f"{len(corners)} corners (triangulate before loading)"
                    )
                vi, ti = [], []
                for corner in corners:
                    fields = corner.split("/")
                    vi.append(int(fields[0]))
                    if len(fields) < 2 or fields[1] == "":
                        raise MeshFormatError(
                            f"{path}:{lineno}: face corner '{corner}' has no "
                            "texture coordinate; export the mesh with UVs "
                            "(f v/vt indices and vt records)"
                        )
                    ti.append(int(fields[1]))
                faces.append(vi)
                face_uvs.append(ti)
            # vn, o, g, s, usemtl, mtllib are ignored
    if not positions:
        raise MeshFormatError(f"{path}: no vertex positions")
    if not faces:
        raise MeshFormatError(f"{path}: no faces")

    verts = np.asarray(positions, dtype=np.float64)
    uvs = np.asarray(texcoords, dtype=np.float64) if texcoords else np.zeros((0, 2))

    def resolve(idx: int, n: int) -> int:
        return idx - 1 if idx > 0 else n + idx

    face_arr = np.array(
        [[resolve(i, len(verts)) for i in tri] for tri in faces], dtype=np.int32
    )
    if face_arr.min() < 0 or face_arr.max() >= len(verts):
        raise MeshFormatError(f"{path}: face vertex index out of range")
    uv_idx = np.array(
        [[resolve(i, len(uvs)) for i in tri] for tri in face_uvs], dtype=np.int64
    )
    if uvs.size == 0 or uv_idx.min() < 0 or uv_idx.max() >= len(uvs):
        raise MeshFormatError(f"{path}: face UV index out of range")
    corner_uvs = uvs[uv_idx]

    norm_verts, center, scale = normalize_mesh(verts)
    return TriangleMesh(
        vertices=norm_verts,
        faces=face_arr,
        corner_uvs=corner_uvs,
        source_center=center,
        source_scale=scale,
    )


def save_obj(mesh: TriangleMesh, path, *, mtl_name: str | None = None,
             texture_filename: str | None = None) -> None:
    """Write the mesh as OBJ (original coordinates restored from metadata).

    When ``texture_filename`` is given, an MTL file referencing it is written
    next to the OBJ. Floats use repr precision so reloading is exact.
    """
    path = os.fspath(path)
    orig = mesh.vertices / mesh.source_scale + mesh.source_center
    # deduplicate per-corner UVs into a vt table
    uv_table: dict[tuple[float, float], int] = {}
    uv_indices = np.zeros((mesh.num_faces, 3), dtype=np.int64)
    for fi in range(mesh.num_faces):
        for ci in range(3):
            key = (mesh.corner_uvs[fi, ci, 0], mesh.corner_uvs[fi, ci, 1])
            idx = uv_table.setdefault(key, len(uv_table))
            uv_indices[fi, ci] = idx
    uv_list = [None] * len(uv_table)
    for key, idx in uv_table.items():
        uv_list[idx] = key

    lines = []
    if mtl_name and texture_filename:
        mtl_path = os.path.splitext(path)[0] + ".mtl"
        with open(mtl_path, "w", encoding="utf-8") as f:
            f.write(f"newmtl {mtl_name}\n")
            f.write("Ka 1.0 1.0 1.0\nKd 1.0 1.0 1.0\nKs 0.0 0.0 0.0\n")
            f.write(f"map_Kd {texture_filename}\n")
        lines.append(f"mtllib {os.path.basename(mtl_path)}")
        lines.append(f"usemtl {mtl_name}")
    for v in orig:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for uv in uv_list:
        lines.append(f"vt {uv[0]:.17g} {uv[1]:.17g}")
    for n in mesh.vertex_normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for fi in range(mesh.num_faces):
        a, b, c = (int(x) + 1 for x in mesh.faces[fi])
        ta, tb, tc = (int(x) + 1 for x in uv_indices[fi])
        lines.append(f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Procedural test meshes with valid UV atlases
# ---------------------------------------------------------------------------

def generate_test_mesh(kind: str, subdivision: int) -> TriangleMesh:
    """Watertight test mesh with a bijective-per-chart UV atlas.

    kinds: ``uv_sphere`` (equirectangular chart, seam column duplicated in
    UV only), ``cube`` (6 separate charts), ``capsule`` (cylinder band chart
    plus two polar cap discs).
    """
    if subdivision < 1:
        raise ValueError("subdivision must be >= 1")
    if kind == "cube":
        return _cube_mesh(subdivision)
    if kind == "uv_sphere":
        if subdivision < 2:
            raise ValueError("uv_sphere needs subdivision >= 2")
        return _uv_sphere_mesh(subdivision)
    if kind == "capsule":
        if subdivision < 2:
            raise ValueError("capsule needs subdivision >= 2")
        return _capsule_mesh(subdivision)
    raise ValueError(f"unknown test mesh kind: {kind!r}")


def _sphere_point(theta: float, phi: float) -> tuple[float, float, float]:
    # azimuth phi measured like the turntable: phi=0 faces +Z
    return (math.sin(theta) * math.sin(phi), math.cos(theta), math.sin(theta) * math.cos(phi))


def _uv_sphere_mesh(n: int) -> TriangleMesh:
    """n stacks x n slices sphere of radius 1; welded seam and poles."""
    verts = [(0.0, 1.0, 0.0)]
    ring_index = {}
    for i in range(1, n):
        theta = math.pi * i / n
        for j in range(n):
            phi = 2.0 * math.pi * j / n
            ring_index[(i, j)] = len(verts)
            verts.append(_sphere_point(theta, phi))
    south = len(verts)
    verts.append((0.0, -1.0, 0.0))

    def vid(i: int, j: int) -> int:
        if i == 0:
            return 0
        if i == n:
            return south
        return ring_index[(i, j % n)]

    def uv(i: int, j: int) -> tuple[float, float]:
        # equirectangular: u wraps at the seam (corner j=n keeps u=1), v=1 at
        # the north pole
        return (j / n, 1.0 - i / n)

    faces, corner_uvs = [], []
    for j in range(n):
        # north fan; pole corner takes the slice-centered u to keep the chart
        # injective
        faces.append((vid(0, j), vid(1, j), vid(1, j + 1)))
        corner_uvs.append((((j + 0.5) / n, 1.0), uv(1, j), uv(1, j + 1)))
    for i in range(1, n - 1):
        for j in range(n):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            faces.append((a, c, d))
            corner_uvs.append((uv(i, j), uv(i + 1, j), uv(i + 1, j + 1)))
            faces.append((a, d, b))
            corner_uvs.append((uv(i, j), uv(i + 1, j + 1), uv(i, j + 1)))
    for j in range(n):
        faces.append((vid(n, j), vid(n - 1, j + 1), vid(n - 1, j)))
        corner_uvs.append((((j + 0.5) / n, 0.0), uv(n - 1, j + 1), uv(n - 1, j)))

    return TriangleMesh(np.array(verts), np.array(faces), np.array(corner_uvs))


_CUBE_FACES = (
    # (axis normal, u axis, v axis) per chart
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),    # +Z
    ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),  # -Z
    ((1, 0, 0), (0, 0, -1), (0, 1, 0)),   # +X
    ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),   # -X
    ((0, 1, 0), (1, 0, 0), (0, 0, -1)),   # +Y
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),   # -Y
)


def _cube_mesh(n: int) -> TriangleMesh:
    """[-1,1]^3 cube, each side an n x n grid; vertices welded across edges."""
    verts: list[tuple[float, float, float]] = []
    index: dict[tuple[float, float, float], int] = {}

    def add_vertex(p) -> int:
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(tuple(p))
        return index[key]

    inset = 0.01  # keeps charts from touching so texels never straddle faces
    faces, corner_uvs = [], []
    t = np.linspace(-1.0, 1.0, n + 1)
    for k, (normal, uax, vax) in enumerate(_CUBE_FACES):
        normal = np.array(normal, dtype=np.float64)
        uax = np.array(uax, dtype=np.float64)
        vax = np.array(vax, dtype=np.float64)
        cell_u0, cell_v0 = (k % 3) / 3.0, (k // 3) / 2.0

        def chart_uv(a: float, b: float) -> tuple[float, float]:
            # a, b in [0,1] within the face
            u = cell_u0 + (inset + a * (1.0 - 2.0 * inset)) / 3.0
            v = cell_v0 + (inset + b * (1.0 - 2.0 * inset)) / 2.0
            return (u, v)

        grid_ids = np.empty((n + 1, n + 1), dtype=np.int64)
        for bi in range(n + 1):
            for ai in range(n + 1):
                p = normal + t[ai] * uax + t[bi] * vax
                grid_ids[bi, ai] = add_vertex(p)
        for bi in range(n):
            for ai in range(n):
                i00 = grid_ids[bi, ai]
                i10 = grid_ids[bi, ai + 1]
                i01 = grid_ids[bi + 1, ai]
                i11 = grid_ids[bi + 1, ai + 1]
                uv00 = chart_uv(ai / n, bi / n)
                uv10 = chart_uv((ai + 1) / n, bi / n)
                uv01 = chart_uv(ai / n, (bi + 1) / n)
                uv11 = chart_uv((ai + 1) / n, (bi + 1) / n)
                faces.append((i00, i10, i11))
                corner_uvs.append((uv00, uv10, uv11))
                faces.append((i00, i11, i01))
                corner_uvs.append((uv00, uv11, uv01))

    return TriangleMesh(np.array(verts), np.array(faces), np.array(corner_uvs))


def _capsule_mesh(n: int) -> TriangleMesh:
    """Capsule: radius 0.5 cylinder of half-height 0.5 with hemisphere caps.

    Total height 2.0 so the normalized bounds are tight. Charts: one
    cylindrical band plus two polar discs.
    """
    radius, half_h = 0.5, 0.5
    cap_stacks = max(1, n // 2)
    cyl_segs = max(1, n // 2)

    verts = [(0.0, 1.0, 0.0)]  # north pole
    ring_of: dict[tuple[str, int, int], int] = {}

    def add_ring(tag: str, i: int, ring_pts) -> None:
        for j, p in enumerate(ring_pts):
            ring_of[(tag, i, j)] = len(verts)
            verts.append(p)

    # hemispheric rings, top: polar angle psi from the pole
    for i in range(1, cap_stacks + 1):
        psi = (math.pi / 2) * i / cap_stacks
        y = half_h + radius * math.cos(psi)
        r = radius * math.sin(psi)
        add_ring("top", i, [(r * math.sin(2 * math.pi * j / n), y,
                             r * math.cos(2 * math.pi * j / n)) for j in range(n)])
    # interior cylinder rings (junction rings already exist)
    for i in range(1, cyl_segs):
        y = half_h - 2 * half_h * i / cyl_segs
        add_ring("cyl", i, [(radius * math.sin(2 * math.pi * j / n), y,
                             radius * math.cos(2 * math.pi * j / n)) for j in range(n)])
    for i in range(1, cap_stacks + 1):
        psi = (math.pi / 2) * i / cap_stacks
        y = -half_h - radius * math.cos(psi)
        r = radius * math.sin(psi)
        add_ring("bot", i, [(r * math.sin(2 * math.pi * j / n), y,
                             r * math.cos(2 * math.pi * j / n)) for j in range(n)])
    south = len(verts)
    verts.append((0.0, -1.0, 0.0))

    def rid(tag: str, i: int, j: int) -> int:
        return ring_of[(tag, i, j % n)]

    # cap disc charts: center c, radius grows with the polar angle
    def cap_uv(center, i: int, j: int, stacks: int) -> tuple[float, float]:
        rr = 0.21 * i / stacks
        ang = 2 * math.pi * j / n
        return (center[0] + rr * math.cos(ang), center[1] + rr * math.sin(ang))

    def cyl_uv(i: int, j: int) -> tuple[float, float]:
        # band v in [0.02, 0.48]; i runs junction-top (0) .. junction-bottom
        return (j / n, 0.48 - 0.46 * i / cyl_segs)

    top_c, bot_c = (0.25, 0.75), (0.75, 0.75)
    faces, corner_uvs = [], []

    def quad(a, b, c, d, uva, uvb, uvc, uvd):
        # a--b / c--d with (c, d) the next ring; outward winding
        faces.append((a, c, d))
        corner_uvs.append((uva, uvc, uvd))
        faces.append((a, d, b))
        corner_uvs.append((uva, uvd, uvb))

    for j in range(n):
        faces.append((0, rid("top", 1, j), rid("top", 1, j + 1)))
        corner_uvs.append((top_c, cap_uv(top_c, 1, j, cap_stacks),
                           cap_uv(top_c, 1, j + 1, cap_stacks)))
    for i in range(1, cap_stacks):
        for j in range(n):
            quad(rid("top", i, j), rid("top", i, j + 1),
                 rid("top", i + 1, j), rid("top", i + 1, j + 1),
                 cap_uv(top_c, i, j, cap_stacks), cap_uv(top_c, i, j + 1, cap_stacks),
                 cap_uv(top_c, i + 1, j, cap_stacks), cap_uv(top_c, i + 1, j + 1, cap_stacks))

    def cyl_ring(i: int, j: int) -> int:
        if i == 0:
            return rid("top", cap_stacks, j)
        if i == cyl_segs:
            return rid("bot", cap_stacks, j)
        return rid("cyl", i, j)

    for i in range(cyl_segs):
        for j in range(n):
            quad(cyl_ring(i, j), cyl_ring(i, j + 1),
                 cyl_ring(i + 1, j), cyl_ring(i + 1, j + 1),
                 cyl_uv(i, j), cyl_uv(i, j + 1), cyl_uv(i + 1, j), cyl_uv(i + 1, j + 1))

    for i in range(1, cap_stacks):
        for j in range(n):
            # bottom hemisphere rings move toward the pole as i grows; flip
            # winding so normals still point outward
            quad(rid("bot", i + 1, j), rid("bot", i + 1, j + 1),
                 rid("bot", i, j), rid("bot", i, j + 1),
                 cap_uv(bot_c, i + 1, j, cap_stacks), cap_uv(bot_c, i + 1, j + 1, cap_stacks),
                 cap_uv(bot_c, i, j, cap_stacks), cap_uv(bot_c, i, j + 1, cap_stacks))
    for j in range(n):
        faces.append((south, rid("bot", 1, j + 1), rid("bot", 1, j)))
        corner_uvs.append((bot_c, cap_uv(bot_c, 1, j + 1, cap_stacks),
                           cap_uv(bot_c, 1, j, cap_stacks)))

    return TriangleMesh(np.array(verts), np.array(faces), np.array(corner_uvs))

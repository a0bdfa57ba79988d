"""Tetrahedral mesh: structured box generation, P1 geometry, text I/O.

Meshes are built from axis-aligned boxes by splitting every grid cell into
6 tetrahedra that share the cell's main diagonal (Kuhn subdivision). All
cells use the same diagonal direction, which keeps the mesh conforming and
gives the non-obtuse edge structure that the EAFE discretization needs for
its M-matrix / positivity properties (Delaunay-type mesh). This is
documented, not enforced: assembly warns if negative edge weights show up.

Coordinates are micrometers in all user-facing specs and files; internally
the mesh stores centimeters (concentrations are per cm^3 throughout).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UM_TO_CM = 1.0e-4

REGION_SILICON = 0
REGION_OXIDE = 1
REGION_NAMES = ("silicon", "oxide")

INSULATING = "insulating"

# Local vertex pairs forming the 6 edges of a tetrahedron.
LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# Kuhn split: each permutation of the axes is one tetrahedron walking from
# cell corner (0,0,0) to (1,1,1); all six share the main diagonal.
_KUHN_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))

_FACES = ("x-", "x+", "y-", "y+", "z-", "z+")


class MeshError(Exception):
    """Invalid mesh topology, geometry, or specification."""


class DegenerateElementError(MeshError):
    def __init__(self, element: int, volume: float):
        self.element = element
        self.volume = volume
        super().__init__(f"element {element} is degenerate (volume {volume:g})")


@dataclass(frozen=True)
class ContactPatch:
    """Axis-aligned rectangle on one box face, tagged with a contact name.

    ``face`` is one of x-/x+/y-/y+/z-/z+; ``rect`` gives the ranges of the
    two remaining axes (in increasing axis order), micrometers.
    """

    name: str
    face: str
    rect: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        if self.face not in _FACES:
            raise MeshError(f"contact {self.name!r}: unknown face {self.face!r}")
        if self.name == INSULATING:
            raise MeshError(f"contact name {INSULATING!r} is reserved")


@dataclass(frozen=True)
class BoxMeshSpec:
    """Structured box mesh: extents and subdivisions per axis (micrometers).

    ``oxide_boxes`` lists axis-aligned boxes assigned to the oxide region
    (everything else is silicon). ``contacts`` are boundary rectangles.
    """

    extent_um: tuple[float, float, float]
    divisions: tuple[int, int, int]
    oxide_boxes: tuple[tuple[tuple[float, float], ...], ...] = ()
    contacts: tuple[ContactPatch, ...] = ()

    def __post_init__(self):
        if len(self.extent_um) != 3 or len(self.divisions) != 3:
            raise MeshError("extent_um and divisions must have 3 entries")
        if any(e <= 0 for e in self.extent_um):
            raise MeshError(f"extents must be positive, got {self.extent_um}")
        if any(int(n) != n or n < 1 for n in self.divisions):
            raise MeshError(f"divisions must be integers >= 1, got {self.divisions}")
        for box in self.oxide_boxes:
            if len(box) != 3 or any(len(r) != 2 or r[0] >= r[1] for r in box):
                raise MeshError(f"bad oxide box {box}")
        for c in self.contacts:
            self._check_contact(c)

    def _check_contact(self, c: ContactPatch):
        axis = "xyz".index(c.face[0])
        inplane = [a for a in range(3) if a != axis]
        for (lo, hi), a in zip(c.rect, inplane):
            if lo >= hi:
                raise MeshError(f"contact {c.name!r}: empty range {(lo, hi)}")
            if lo < -1e-9 or hi > self.extent_um[a] + 1e-9:
                raise MeshError(
                    f"contact {c.name!r}: rect {(lo, hi)} outside box on axis {a}"
                )


@dataclass(frozen=True)
class Mesh:
    """Immutable tetrahedral mesh with precomputed P1 geometry.

    All arrays are read-only after construction; concurrent reads are safe.
    ``vertices`` are in centimeters. ``region`` maps each tetrahedron to
    REGION_SILICON or REGION_OXIDE. Boundary facets carry a tag index into
    ``facet_tag_names`` (index 0 is always "insulating").
    """

    vertices: np.ndarray            # (nv, 3) cm
    tets: np.ndarray                # (nt, 4) vertex indices
    region: np.ndarray              # (nt,) uint8
    boundary_facets: np.ndarray     # (nf, 3) vertex indices
    boundary_facet_tet: np.ndarray  # (nf,) owning tetrahedron
    facet_tag_ids: np.ndarray       # (nf,) index into facet_tag_names
    facet_tag_names: tuple[str, ...]
    edges: np.ndarray               # (ne, 2) unique vertex pairs, sorted
    tet_edges: np.ndarray           # (nt, 6) edge index per local edge
    volumes: np.ndarray             # (nt,) cm^3
    grads: np.ndarray               # (nt, 4, 3) barycentric gradients, 1/cm
    silicon_vertex: np.ndarray      # (nv,) bool

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def contact_names(self) -> tuple[str, ...]:
        return self.facet_tag_names[1:]

    def contact_facets(self, name: str) -> np.ndarray:
        """Indices of boundary facets tagged with the given contact."""
        try:
            tid = self.facet_tag_names.index(name)
        except ValueError:
            raise MeshError(f"unknown contact {name!r}") from None
        return np.nonzero(self.facet_tag_ids == tid)[0]

    def contact_vertices(self, name: str) -> np.ndarray:
        """Sorted vertex indices lying on the given contact."""
        f = self.contact_facets(name)
        return np.unique(self.boundary_facets[f])

    def silicon_tets(self) -> np.ndarray:
        return np.nonzero(self.region == REGION_SILICON)[0]


def _tet_geometry(vertices: np.ndarray, tets: np.ndarray):
    """Vectorized signed volumes and barycentric gradients for all tets."""
    p = vertices[tets]                       # (nt, 4, 3)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    c23 = np.cross(e2, e3)
    det = np.einsum("ij,ij->i", e1, c23)     # 6 * signed volume
    vol = det / 6.0
    grads = np.empty((tets.shape[0], 4, 3))
    grads[:, 1] = c23 / det[:, None]
    grads[:, 2] = np.cross(e3, e1) / det[:, None]
    grads[:, 3] = np.cross(e1, e2) / det[:, None]
    grads[:, 0] = -(grads[:, 1] + grads[:, 2] + grads[:, 3])
    return vol, grads


def _boundary_facets_of(tets: np.ndarray):
    """Facets appearing in exactly one tetrahedron, with their owner.

    Raises if any facet is shared by more than two tets (non-conforming).
    """
    # local faces opposite each vertex
    faces = np.concatenate(
        [
            tets[:, [1, 2, 3]],
            tets[:, [0, 2, 3]],
            tets[:, [0, 1, 3]],
            tets[:, [0, 1, 2]],
        ]
    )
    owner = np.tile(np.arange(tets.shape[0]), 4)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(
        key, axis=0, return_inverse=True, return_counts=True
    )
    if counts.max(initial=0) > 2:
        raise MeshError("non-conforming mesh: a facet is shared by >2 tets")
    on_boundary = counts[inv] == 1
    return key[on_boundary], owner[on_boundary]


def _edge_table(tets: np.ndarray):
    pairs = np.concatenate([tets[:, [a, b]] for a, b in LOCAL_EDGES])
    pairs = np.sort(pairs, axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    tet_edges = inv.reshape(len(LOCAL_EDGES), tets.shape[0]).T
    return edges, np.ascontiguousarray(tet_edges)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _assemble_mesh(
    vertices_cm: np.ndarray,
    tets: np.ndarray,
    region: np.ndarray,
    facet_tags: dict[tuple[int, int, int], str] | None = None,
    tag_lookup=None,
) -> Mesh:
    """Shared constructor: orientation fix, topology, geometry, tagging.

    Either ``facet_tags`` maps sorted vertex triples to tag names, or
    ``tag_lookup(centroids_cm) -> list[str]`` assigns tags geometrically.
    """
    vertices_cm = np.asarray(vertices_cm, dtype=float)
    tets = np.asarray(tets, dtype=np.int64).copy()
    region = np.asarray(region, dtype=np.uint8)

    vol, _ = _tet_geometry(vertices_cm, tets)
    flip = np.nonzero(vol < 0)[0]
    if flip.size:
        tets[flip[:, None], [2, 3]] = tets[flip[:, None], [3, 2]]
    vol, grads = _tet_geometry(vertices_cm, tets)
    if np.any(vol <= 0):
        k = int(np.argmin(vol))
        raise DegenerateElementError(k, float(vol[k]))

    bfacets, bowner = _boundary_facets_of(tets)

    if facet_tags is not None:
        names = [facet_tags.get(tuple(f), INSULATING) for f in bfacets]
    else:
        centroids = vertices_cm[bfacets].mean(axis=1)
        names = tag_lookup(centroids, bfacets)

    tag_names = [INSULATING] + sorted({n for n in names} - {INSULATING})
    tag_index = {n: i for i, n in enumerate(tag_names)}
    tag_ids = np.array([tag_index[n] for n in names], dtype=np.int32)

    edges, tet_edges = _edge_table(tets)

    silicon_vertex = np.zeros(vertices_cm.shape[0], dtype=bool)
    silicon_vertex[np.unique(tets[region == REGION_SILICON])] = True

    return Mesh(
        vertices=_freeze(vertices_cm),
        tets=_freeze(tets),
        region=_freeze(region),
        boundary_facets=_freeze(bfacets),
        boundary_facet_tet=_freeze(bowner),
        facet_tag_ids=_freeze(tag_ids),
        facet_tag_names=tuple(tag_names),
        edges=_freeze(edges),
        tet_edges=_freeze(tet_edges),
        volumes=_freeze(vol),
        grads=_freeze(grads),
        silicon_vertex=_freeze(silicon_vertex),
    )


def build_box_mesh(spec: BoxMeshSpec) -> Mesh:
    """Kuhn 6-tet subdivision of a structured box grid.

    Every cell is split with the same main-diagonal direction, so the mesh
    is conforming and Delaunay-compatible (EAFE edge weights stay >= 0 on
    boxes). (nx, ny, nz) cells give 6*nx*ny*nz tets, (nx+1)(ny+1)(nz+1)
    vertices.
    """
    nx, ny, nz = (int(n) for n in spec.divisions)
    ext = np.asarray(spec.extent_um, dtype=float)

    xs = [np.linspace(0.0, ext[a], (nx, ny, nz)[a] + 1) for a in range(3)]
    X, Y, Z = np.meshgrid(xs[0], xs[1], xs[2], indexing="ij")
    vertices_um = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()

    corner = np.zeros((I.size, 2, 2, 2), dtype=np.int64)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                corner[:, di, dj, dk] = vid(I + di, J + dj, K + dk)

    tet_list = []
    for perm in _KUHN_PERMS:
        off = np.zeros(3, dtype=int)
        path = [tuple(off)]
        for axis in perm:
            off = off.copy()
            off[axis] = 1
            path.append(tuple(off))
        tet_list.append(
            np.column_stack([corner[:, a, b, c] for (a, b, c) in path])
        )
    tets = np.vstack(tet_list)

    # region by cell midpoint (all 6 tets of a cell share it)
    mids_um = np.column_stack(
        [
            (xs[0][I] + xs[0][I + 1]) / 2,
            (xs[1][J] + xs[1][J + 1]) / 2,
            (xs[2][K] + xs[2][K + 1]) / 2,
        ]
    )
    cell_region = np.full(I.size, REGION_SILICON, dtype=np.uint8)
    for box in spec.oxide_boxes:
        inside = np.ones(I.size, dtype=bool)
        for a, (lo, hi) in enumerate(box):
            inside &= (mids_um[:, a] >= lo) & (mids_um[:, a] <= hi)
        cell_region[inside] = REGION_OXIDE
    region = np.tile(cell_region, len(_KUHN_PERMS))

    tol = 1e-9 * max(ext.max(), 1.0)

    def tag_lookup(centroids_cm, facets):
        centroids_um = centroids_cm / UM_TO_CM
        names = [INSULATING] * centroids_um.shape[0]
        for c in spec.contacts:
            axis = "xyz".index(c.face[0])
            plane = 0.0 if c.face[1] == "-" else ext[axis]
            inplane = [a for a in range(3) if a != axis]
            on = np.abs(centroids_um[:, axis] - plane) < tol
            for (lo, hi), a in zip(c.rect, inplane):
                on &= (centroids_um[:, a] >= lo - tol) & (centroids_um[:, a] <= hi + tol)
            for idx in np.nonzero(on)[0]:
                if names[idx] not in (INSULATING, c.name):
                    raise MeshError(
                        f"facet {idx} tagged by both {names[idx]!r} and {c.name!r}"
                    )
                names[idx] = c.name
        return names

    return _assemble_mesh(
        vertices_um * UM_TO_CM, tets, region, tag_lookup=tag_lookup
    )


def element_geometry(mesh: Mesh, k: int):
    """Volume (cm^3) and the 4 constant barycentric gradients of element k."""
    if not 0 <= k < mesh.num_tets:
        raise MeshError(f"element index {k} out of range")
    vol = float(mesh.volumes[k])
    if vol <= 0:
        raise DegenerateElementError(k, vol)
    return vol, mesh.grads[k]


def mean_value(nodal_values) -> float | np.ndarray:
    """Mean integral value over the element of a P1 function.

    For a linear function on a tetrahedron this is exactly the arithmetic
    mean of its 4 vertex values. Accepts (..., 4) arrays.
    """
    v = np.asarray(nodal_values, dtype=float)
    if v.shape[-1] != 4:
        raise ValueError("expected 4 nodal values per element")
    out = v.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Plain-text mesh format (documented in README):
#
#   tetdd-mesh 1
#   vertices <nv>            # then nv lines: x y z   (micrometers)
#   tetrahedra <nt>          # then nt lines: v0 v1 v2 v3 region-name
#   facets <nf>              # then nf lines: a b c tag-name
#
# Only tagged boundary facets need to be listed; untagged boundary facets
# are insulating. Comments start with '#'.
# ---------------------------------------------------------------------------

def save_text(mesh: Mesh, path) -> None:
    lines = ["tetdd-mesh 1"]
    lines.append(f"vertices {mesh.num_vertices}")
    for v in mesh.vertices / UM_TO_CM:
        lines.append(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    lines.append(f"tetrahedra {mesh.num_tets}")
    for t, r in zip(mesh.tets, mesh.region):
        lines.append(f"{t[0]} {t[1]} {t[2]} {t[3]} {REGION_NAMES[r]}")
    tagged = np.nonzero(mesh.facet_tag_ids != 0)[0]
    lines.append(f"facets {tagged.size}")
    for fi in tagged:
        f = mesh.boundary_facets[fi]
        lines.append(
            f"{f[0]} {f[1]} {f[2]} {mesh.facet_tag_names[mesh.facet_tag_ids[fi]]}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_text(path) -> Mesh:
    with open(path) as fh:
        raw = fh.read().splitlines()
    rows = [
        (i + 1, ln.split("#", 1)[0].strip())
        for i, ln in enumerate(raw)
        if ln.split("#", 1)[0].strip()
    ]
    it = iter(rows)

    def take(what: str):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"unexpected end of file, expected {what}") from None

    lineno, header = take("header")
    if header.split() != ["tetdd-mesh", "1"]:
        raise MeshError(f"line {lineno}: bad header {header!r}")

    def section(name: str) -> int:
        lineno, ln = take(f"'{name} <count>'")
        parts = ln.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"line {lineno}: expected '{name} <count>', got {ln!r}")
        return int(parts[1])

    nv = section("vertices")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, ln = take("vertex")
        try:
            verts[i] = [float(x) for x in ln.split()]
        except ValueError:
            raise MeshError(f"line {lineno}: bad vertex {ln!r}") from None

    nt = section("tetrahedra")
    tets = np.empty((nt, 4), dtype=np.int64)
    region = np.empty(nt, dtype=np.uint8)
    for i in range(nt):
        lineno, ln = take("tetrahedron")
        parts = ln.split()
        if len(parts) != 5 or parts[4] not in REGION_NAMES:
            raise MeshError(f"line {lineno}: bad tetrahedron {ln!r}")
        tets[i] = [int(x) for x in parts[:4]]
        region[i] = REGION_NAMES.index(parts[4])
    if nt == 0:
        raise MeshError("mesh has no tetrahedra")
    if tets.min(initial=0) < 0 or tets.max(initial=0) >= nv:
        raise MeshError("tetrahedron refers to a vertex out of range")

    nf = section("facets")
    facet_tags: dict[tuple[int, int, int], str] = {}
    for _ in range(nf):
        lineno, ln = take("facet")
        parts = ln.split()
        if len(parts) != 4:
            raise MeshError(f"line {lineno}: bad facet {ln!r}")
        key = tuple(sorted(int(x) for x in parts[:3]))
        if key in facet_tags and facet_tags[key] != parts[3]:
            raise MeshError(f"line {lineno}: facet tagged twice")
        facet_tags[key] = parts[3]

    mesh = _assemble_mesh(verts * UM_TO_CM, tets, region, facet_tags=facet_tags)

    # every tagged facet from the file must actually be on the boundary
    present = {tuple(f) for f in mesh.boundary_facets}
    for key, name in facet_tags.items():
        if key not in present:
            raise MeshError(f"facet {key} tagged {name!r} is not a boundary facet")
    return mesh

"""
Structured triangulations of squares with oriented face geometry.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming simplicial mesh.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (nel, 3) int array, counterclockwise
    face_vertices : (nf, 2) int array, ``a < b``; the face is parametrized
        from ``a`` (t = -1) to ``b`` (t = +1)
    face_left, face_right : (nf,) int arrays; ``face_right == -1`` marks a
        boundary face. The left element is the lower-indexed neighbour and
        owns the face normal.
    element_faces : (nel, 3) int array; local face ``i`` joins local
        vertices ``i`` and ``i+1``
    element_face_signs : (nel, 3) array of +1 (left) / -1 (right)
    """

    vertices: np.ndarray
    elements: np.ndarray
    face_vertices: np.ndarray
    face_left: np.ndarray
    face_right: np.ndarray
    element_faces: np.ndarray
    element_face_signs: np.ndarray

    def __post_init__(self):
        for name in ("vertices", "elements", "face_vertices", "face_left",
                     "face_right", "element_faces", "element_face_signs"):
            getattr(self, name).setflags(write=False)

    @property
    def num_elements(self):
        return self.elements.shape[0]

    @property
    def num_faces(self):
        return self.face_vertices.shape[0]

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @cached_property
    def boundary_faces(self):
        return np.flatnonzero(self.face_right < 0)

    @cached_property
    def interior_faces(self):
        return np.flatnonzero(self.face_right >= 0)

    @cached_property
    def is_boundary_face(self):
        return self.face_right < 0

    @cached_property
    def face_lengths(self):
        d = (self.vertices[self.face_vertices[:, 1]]
             - self.vertices[self.face_vertices[:, 0]])
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def face_normals(self):
        """Unit normals pointing out of the left element."""
        v = self.vertices
        a = v[self.face_vertices[:, 0]]
        b = v[self.face_vertices[:, 1]]
        d = (b - a) / self.face_lengths[:, None]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        # flip where the left element's opposite vertex lies on the n side
        el = self.elements[self.face_left]
        centroid = v[el].mean(axis=1)
        flip = np.einsum("ij,ij->i", centroid - a, n) > 0
        n[flip] *= -1.0
        n.setflags(write=False)
        return n

    @cached_property
    def face_tangents(self):
        n = self.face_normals
        t = np.column_stack([-n[:, 1], n[:, 0]])
        t.setflags(write=False)
        return t

    @cached_property
    def element_areas(self):
        v = self.vertices[self.elements]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def element_diameters(self):
        v = self.vertices[self.elements]
        e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1],
                      v[:, 0] - v[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @cached_property
    def h_max(self):
        return float(self.element_diameters.max())

    def check(self):
        """Raise ``ValueError`` if a structural invariant is violated."""
        if np.any(self.element_areas <= 0.0):
            raise ValueError("non-positive element area")
        counts = np.bincount(self.element_faces.ravel(),
                             minlength=self.num_faces)
        expected = np.where(self.is_boundary_face, 1, 2)
        if np.any(counts != expected):
            raise ValueError("face incidence mismatch")
        V, E, T = self.num_vertices, self.num_faces, self.num_elements
        if V - E + (T + 1) != 2:
            raise ValueError("Euler relation violated")


def mesh_from_elements(vertices, elements):
    """Build face connectivity for a counterclockwise triangle list."""
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    nel = elements.shape[0]
    loc = elements[:, [0, 1, 1, 2, 2, 0]].reshape(nel, 3, 2)
    pairs = np.sort(loc.reshape(-1, 2), axis=1)
    faces, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(nel, 3)
    nf = faces.shape[0]
    owner = np.repeat(np.arange(nel), 3)
    # each face appears once or twice; the lower-indexed element is left
    order = np.lexsort((owner, inverse.ravel()))
    fid = inverse.ravel()[order]
    own = owner[order]
    first = np.ones(fid.size, dtype=bool)
    first[1:] = fid[1:] != fid[:-1]
    left = np.full(nf, -1, dtype=np.int64)
    right = np.full(nf, -1, dtype=np.int64)
    left[fid[first]] = own[first]
    right[fid[~first]] = own[~first]
    signs = np.where(left[inverse] == np.arange(nel)[:, None], 1, -1)
    return Mesh(vertices, elements, faces, left, right, inverse,
                signs.astype(np.int64))


def build_square_mesh(n, side=1.0, origin=(0.0, 0.0)):
    """
    Uniform triangulation of ``[origin, origin + side]^2``.

    Every grid cell is split along its lower-left to upper-right diagonal,
    giving ``2 n^2`` elements with ``h_max = side * sqrt(2) / n``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be a positive integer")
    if side <= 0:
        raise ValueError("side must be positive")
    x = origin[0] + side * np.arange(n + 1) / n
    y = origin[1] + side * np.arange(n + 1) / n
    X, Y = np.meshgrid(x, y, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ll = (j * (n + 1) + i).ravel()
    lr, ul = ll + 1, ll + n + 1
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return mesh_from_elements(vertices, elements)


def face_trace_frame(mesh, face, side="left"):
    """
    Unit normal and tangent of ``face`` seen from one adjacent element.

    The normal points out of the requested element; the tangent is the
    normal rotated by +90 degrees.
    """
    n = mesh.face_normals[face].copy()
    if side == "right":
        if mesh.face_right[face] < 0:
            raise ValueError(f"face {face} is a boundary face; it has no "
                             "right element")
        n = -n
    elif side != "left":
        raise ValueError("side must be 'left' or 'right'")
    return n, np.array([-n[1], n[0]])


def square_cell_locator(n, side=1.0, origin=(0.0, 0.0)):
    """
    Return a function mapping points to element indices of
    ``build_square_mesh(n, side, origin)``.
    """
    def locate(points):
        p = (np.asarray(points, dtype=float) - np.asarray(origin)) / side * n
        i = np.clip(np.floor(p[..., 0]).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(p[..., 1]).astype(np.int64), 0, n - 1)
        fx = p[..., 0] - i
        fy = p[..., 1] - j
        upper = (fy > fx).astype(np.int64)
        return 2 * (j * n + i) + upper
    return locate


def write_mesh_csv(mesh, path):
    """Dump vertices, elements and faces as sectioned CSV (0-based)."""
    with open(path, "w") as fh:
        fh.write("# vertices\nid,x,y\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i},{x:.16g},{y:.16g}\n")
        fh.write("# elements\nid,v0,v1,v2\n")
        for i, (a, b, c) in enumerate(mesh.elements):
            fh.write(f"{i},{a},{b},{c}\n")
        fh.write("# faces\nid,v0,v1,left,right,nx,ny\n")
        for i in range(mesh.num_faces):
            a, b = mesh.face_vertices[i]
            nx, ny = mesh.face_normals[i]
            fh.write(f"{i},{a},{b},{mesh.face_left[i]},{mesh.face_right[i]},"
                     f"{nx:.16g},{ny:.16g}\n")

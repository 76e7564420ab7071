"""
Global numbering, assembly and solution of the condensed trace system.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hdg_local import assemble_local_blocks, local_rhs_data


@dataclass(frozen=True, eq=False)
class DofMap:
    """
    Layout of the globally coupled unknowns.

    State traces on interior faces come first, then adjoint traces on
    interior faces, then the control on boundary faces; each group is
    ordered by face index, then vector component, then mode.
    """

    k: int
    num_faces: int
    interior_faces: np.ndarray
    boundary_faces: np.ndarray
    face_rank: np.ndarray   # rank of a face within its group
    local_to_global: np.ndarray  # (nel, n_zeta), -1 where unused

    @property
    def ne(self):
        return self.k + 1

    @property
    def n_state(self):
        return self.interior_faces.size * 2 * self.ne

    @property
    def n_control(self):
        return self.boundary_faces.size * self.ne

    @property
    def total(self):
        return 2 * self.n_state + self.n_control

    def state_range(self, face):
        r = self.face_rank[face]
        s = r * 2 * self.ne
        return range(s, s + 2 * self.ne)

    def adjoint_range(self, face):
        r = self.face_rank[face]
        s = self.n_state + r * 2 * self.ne
        return range(s, s + 2 * self.ne)

    def control_range(self, face):
        r = self.face_rank[face]
        s = 2 * self.n_state + r * self.ne
        return range(s, s + self.ne)


def build_dof_map(mesh, k):
    if k < 0:
        raise ValueError("k must be >= 0")
    ne = k + 1
    interior = mesh.interior_faces
    boundary = mesh.boundary_faces
    rank = np.empty(mesh.num_faces, dtype=np.int64)
    rank[interior] = np.arange(interior.size)
    rank[boundary] = np.arange(boundary.size)
    n_state = interior.size * 2 * ne
    slot = 5 * ne
    nel = mesh.num_elements
    l2g = np.full((nel, 3, slot), -1, dtype=np.int64)
    faces = mesh.element_faces
    r = rank[faces]
    bnd = mesh.is_boundary_face[faces]
    two = np.arange(2 * ne)
    state = r[..., None] * 2 * ne + two
    adj = n_state + state
    ctrl = 2 * n_state + r[..., None] * ne + np.arange(ne)
    l2g[..., :2 * ne] = np.where(bnd[..., None], -1, state)
    l2g[..., 2 * ne:4 * ne] = np.where(bnd[..., None], -1, adj)
    l2g[..., 4 * ne:] = np.where(bnd[..., None], ctrl, -1)
    return DofMap(k, mesh.num_faces, interior, boundary, rank,
                  l2g.reshape(nel, 3 * slot))


def _scatter_add(l2g, local, total):
    mask = l2g >= 0
    return np.bincount(l2g[mask], weights=local[mask], minlength=total)


def gather(dofmap, zeta, elements=None):
    """Global trace/control vector -> per-element local zeta (nb, n_zeta)."""
    l2g = dofmap.local_to_global
    if elements is not None:
        l2g = l2g[elements]
    out = np.zeros(l2g.shape)
    mask = l2g >= 0
    out[mask] = zeta[l2g[mask]]
    return out


def face_dof_order(mesh, dofmap):
    """
    Fill-reducing ordering of the trace unknowns: nested dissection of the
    face adjacency graph (faces sharing an element), expanded to the
    unknowns carried by each face.
    """
    import pymetis

    ef = mesh.element_faces
    r = np.repeat(ef, 3, axis=1).ravel()
    c = np.tile(ef, (1, 3)).ravel()
    keep = r != c
    G = sp.coo_matrix((np.ones(keep.sum()), (r[keep], c[keep])),
                      shape=(mesh.num_faces,) * 2).tocsr()
    if mesh.num_faces < 2 or G.nnz == 0:
        face_perm = np.arange(mesh.num_faces)
    else:
        adj = pymetis.CSRAdjacency(G.indptr, G.indices)
        face_perm, _ = pymetis.nested_dissection(adj)
        face_perm = np.asarray(face_perm, dtype=np.int64)
    ne = dofmap.ne
    width = 4 * ne
    fd = np.full((mesh.num_faces, width), -1, dtype=np.int64)
    rank = dofmap.face_rank
    fi, fb = dofmap.interior_faces, dofmap.boundary_faces
    two = np.arange(2 * ne)
    fd[fi, :2 * ne] = rank[fi, None] * 2 * ne + two
    fd[fi, 2 * ne:] = dofmap.n_state + rank[fi, None] * 2 * ne + two
    fd[fb, :ne] = 2 * dofmap.n_state + rank[fb, None] * ne + np.arange(ne)
    order = fd[face_perm].ravel()
    return order[order >= 0]


@dataclass(eq=False)
class TraceSystem:
    """
    Sparse trace matrix with a cached LU factorization.

    With an ordering ``perm`` the symmetrically permuted matrix is factored
    with diagonal pivoting, which keeps the fill of the nested-dissection
    ordering; if that fails, a column-ordered partial-pivoting LU of the
    original matrix is used instead.
    """

    matrix: sp.csc_matrix
    rhs: np.ndarray = None
    perm: np.ndarray = None
    _lu: object = None
    _permuted: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def factorize(self):
        if self._lu is not None:
            return self._lu
        if self.perm is not None:
            B = self.matrix[self.perm][:, self.perm].tocsc()
            try:
                lu = spla.splu(B, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
                probe = lu.solve(np.ones(B.shape[0]))
                if np.all(np.isfinite(probe)):
                    self._lu, self._permuted = lu, True
                    return lu
            except RuntimeError:
                pass
        try:
            self._lu = spla.splu(self.matrix.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(
                f"trace matrix is singular: {exc}") from exc
        self._permuted = False
        return self._lu

    def lu_solve(self, b):
        lu = self.factorize()
        if not self._permuted:
            return lu.solve(b)
        x = np.empty_like(b)
        x[self.perm] = lu.solve(b[self.perm])
        return x


def assemble_trace_matrix(dofmap, schur_chunks):
    """
    Sum local Schur complements into the global trace matrix.

    ``schur_chunks`` yields (elements, schur) pairs.
    """
    rows, cols, vals = [], [], []
    for elements, S in schur_chunks:
        l2g = dofmap.local_to_global[elements]
        R = np.broadcast_to(l2g[:, :, None], S.shape)
        C = np.broadcast_to(l2g[:, None, :], S.shape)
        m = (R >= 0) & (C >= 0) & (S != 0.0)
        rows.append(R[m])
        cols.append(C[m])
        vals.append(S[m])
    n = dofmap.total
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsc()
    A.sum_duplicates()
    return A


def assemble_trace_system(dofmap, condensed_chunks, J_chunks=None):
    """
    Trace matrix ``B10 F1 + B11 F2 + B12 F3 + B13`` and, when the J
    vectors are given, the right-hand side ``-(B10 J1 + B11 J2 + B12 J3)``.

    ``condensed_chunks`` is a list of (elements, CondensedElements) pairs;
    ``J_chunks`` a matching list of (nb, n_interior) arrays.
    """
    for elements, ce in condensed_chunks:
        if ce.schur.shape[0] != len(elements) or \
                ce.schur.shape[1] != dofmap.local_to_global.shape[1]:
            raise ValueError("inconsistent local DOF dimensions")
    A = assemble_trace_matrix(dofmap, ((e, ce.schur)
                                       for e, ce in condensed_chunks))
    system = TraceSystem(A)
    if J_chunks is not None:
        system.rhs = trace_rhs_vector(dofmap, condensed_chunks, J_chunks)
    return system


def trace_rhs_vector(dofmap, condensed_chunks, J_chunks):
    b = np.zeros(dofmap.total)
    for (elements, ce), J in zip(condensed_chunks, J_chunks):
        local = -np.einsum("bij,bj->bi", ce.B_zeta, J)
        b += _scatter_add(dofmap.local_to_global[elements], local, b.size)
    return b


def solve_trace_system(system, rhs=None, refine=3, rtol=1e-13):
    """
    Solve with the cached factorization; returns the zeta vector.

    Up to ``refine`` steps of iterative refinement are applied while the
    relative residual exceeds ``rtol``.
    """
    b = system.rhs if rhs is None else rhs
    if b is None:
        raise ValueError("no right-hand side")
    system.factorize()
    if not np.any(b):
        return np.zeros_like(b)
    x = system.lu_solve(b)
    bn = np.linalg.norm(b)
    for _ in range(refine):
        r = b - system.matrix @ x
        if np.linalg.norm(r) <= rtol * bn:
            break
        x += system.lu_solve(r)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("trace solve produced non-finite values")
    return x


@dataclass(eq=False)
class DiscreteSolution:
    """
    Coefficients of the discrete optimality system.

    Element fields use the scaled orthonormal bases: ``L``, ``G`` have
    shape (nel, 4, nk) with component index 2a+b for entry (a, b);
    ``y``, ``z`` (nel, 2, nv); ``p``, ``q`` (nel, nk). Face traces
    ``yhat``, ``zhat`` have shape (nf, 2, ne) in the face Legendre basis;
    on boundary faces ``yhat`` holds u*tau and ``zhat`` is zero. ``u`` has
    shape (nbf, ne) ordered like ``mesh.boundary_faces``.
    """

    mesh: object
    k: int
    L: np.ndarray
    G: np.ndarray
    y: np.ndarray
    z: np.ndarray
    p: np.ndarray
    q: np.ndarray
    yhat: np.ndarray
    zhat: np.ndarray
    u: np.ndarray
    zeta: np.ndarray = None

    @classmethod
    def zeros(cls, mesh, k):
        nk = (k + 1) * (k + 2) // 2
        nv = (k + 2) * (k + 3) // 2
        ne = k + 1
        nel, nf = mesh.num_elements, mesh.num_faces
        return cls(mesh, k, np.zeros((nel, 4, nk)), np.zeros((nel, 4, nk)),
                   np.zeros((nel, 2, nv)), np.zeros((nel, 2, nv)),
                   np.zeros((nel, nk)), np.zeros((nel, nk)),
                   np.zeros((nf, 2, ne)), np.zeros((nf, 2, ne)),
                   np.zeros((mesh.boundary_faces.size, ne)))

    def interior_vector(self):
        """Per-element (alpha, beta, gamma) stacked as (nel, n_interior)."""
        nel = self.L.shape[0]
        return np.concatenate([self.L.reshape(nel, -1),
                               self.G.reshape(nel, -1),
                               self.y.reshape(nel, -1),
                               self.z.reshape(nel, -1), self.p, self.q],
                              axis=1)

    def trace_vector(self, dofmap):
        zeta = np.zeros(dofmap.total)
        fi = dofmap.interior_faces
        zeta[:dofmap.n_state] = self.yhat[fi].ravel()
        zeta[dofmap.n_state:2 * dofmap.n_state] = self.zhat[fi].ravel()
        zeta[2 * dofmap.n_state:] = self.u.ravel()
        return zeta

    def pressure_means(self):
        """(p_h, 1) and (q_h, 1) over the domain."""
        c = np.sqrt(self.mesh.element_areas)
        return float(c @ self.p[:, 0]), float(c @ self.q[:, 0])


def scatter_solution(mesh, dofmap, zeta, interior):
    """
    Build a DiscreteSolution from the trace vector and the recovered
    element unknowns ``interior`` of shape (nel, n_interior).
    """
    k = dofmap.k
    sol = DiscreteSolution.zeros(mesh, k)
    nk, nv, ne = sol.p.shape[1], sol.y.shape[2], k + 1
    nel = mesh.num_elements
    o = 0
    for name, width, shape in (("L", 4 * nk, (4, nk)), ("G", 4 * nk, (4, nk)),
                               ("y", 2 * nv, (2, nv)), ("z", 2 * nv, (2, nv)),
                               ("p", nk, (nk,)), ("q", nk, (nk,))):
        setattr(sol, name, interior[:, o:o + width].reshape((nel,) + shape)
                .copy())
        o += width
    fi, fb = dofmap.interior_faces, dofmap.boundary_faces
    sol.yhat[fi] = zeta[:dofmap.n_state].reshape(-1, 2, ne)
    sol.zhat[fi] = zeta[dofmap.n_state:2 * dofmap.n_state].reshape(-1, 2, ne)
    sol.u = zeta[2 * dofmap.n_state:].reshape(-1, ne).copy()
    tau = mesh.face_tangents[fb]
    sol.yhat[fb] = sol.u[:, None, :] * tau[:, :, None]
    sol.zeta = np.asarray(zeta).copy()
    return sol


@dataclass(frozen=True, eq=False)
class FullSystem:
    """Uncondensed global system over element and trace unknowns."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_interior: int      # per element
    num_elements: int
    dofmap: DofMap

    @property
    def n_element_dofs(self):
        return self.n_interior * self.num_elements

    def split(self, x):
        """Global vector -> ((nel, n_interior), zeta)."""
        ne = self.n_element_dofs
        return x[:ne].reshape(self.num_elements, -1), x[ne:]

    def join(self, interior, zeta):
        return np.concatenate([np.asarray(interior).ravel(), zeta])


def assemble_full_system(mesh, space, gamma, dt, f=None, yd=None,
                         p_prev=None, q_prev=None, chunk=4096):
    """
    The 9-block system before condensation, with ``1/dt`` pressure mass
    and previous-iterate data. ``dt=np.inf`` gives the stationary system.
    """
    dofmap = build_dof_map(mesh, space.k)
    nel = mesh.num_elements
    nI = space.n_interior
    rows, cols, vals = [], [], []
    rhs = np.zeros(nel * nI + dofmap.total)
    for start in range(0, nel, chunk):
        els = np.arange(start, min(start + chunk, nel))
        blocks = assemble_local_blocks(mesh, space, els, gamma, dt)
        M = blocks.matrix()
        gidx = np.concatenate(
            [els[:, None] * nI + np.arange(nI),
             np.where(dofmap.local_to_global[els] >= 0,
                      nel * nI + dofmap.local_to_global[els], -1)], axis=1)
        R = np.broadcast_to(gidx[:, :, None], M.shape)
        C = np.broadcast_to(gidx[:, None, :], M.shape)
        m = (R >= 0) & (C >= 0) & (M != 0.0)
        rows.append(R[m])
        cols.append(C[m])
        vals.append(M[m])
        b = np.zeros((els.size, nI))
        beta0 = space.n_alpha
        b[:, beta0:beta0 + space.n_beta] = local_rhs_data(blocks, f, yd)
        if np.isfinite(dt):
            c0 = space.n_alpha + space.n_beta
            if p_prev is not None:
                b[:, c0:c0 + space.nk] = np.asarray(p_prev)[els] / dt
            if q_prev is not None:
                b[:, c0 + space.nk:] = np.asarray(q_prev)[els] / dt
        rhs[els[:, None] * nI + np.arange(nI)] = b
    n = rhs.size
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return FullSystem(A, rhs, nI, nel, dofmap)

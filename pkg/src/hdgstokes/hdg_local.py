"""
Element-local HDG blocks and static condensation.

Local unknown layout of one element (``HDGSpace`` offsets)::

    alpha = [L (4 nk), G (4 nk)]          flux tensors, component 2a+b
    beta  = [y (2 nv), z (2 nv)]          velocities
    gamma = [p (nk), q (nk)]              pressures
    zeta  = 3 face slots x [yhat (2 ne), zhat (2 ne), u (ne)]

A slot carries traces on interior faces and the control on boundary faces;
the unused part of a slot is identically zero in every block. Element bases
are the reference Dubiner functions scaled by ``det(J)^{-1/2}``, so the flux,
velocity and pressure mass matrices are identities; face bases are Legendre
functions orthonormal on the physical face.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .polybasis import (EdgeBasis, TriangleBasis, edge_quadrature,
                        triangle_quadrature)


def stabilization_inverse_h(mesh, mode="face"):
    """
    Per-face penalty ``1/h`` shared by every stabilization term.

    ``mode="face"`` uses the face length, ``mode="hmax"`` the global mesh
    size and ``mode="hmin"`` the global shortest face length (the grid
    spacing ``1/n`` on the uniform square meshes).
    """
    if mode == "face":
        return 1.0 / mesh.face_lengths
    if mode == "hmax":
        return np.full(mesh.num_faces, 1.0 / mesh.h_max)
    if mode == "hmin":
        return np.full(mesh.num_faces, 1.0 / mesh.face_lengths.min())
    raise ValueError(f"unknown stabilization mode {mode!r}")


@dataclass(frozen=True)
class HDGSpace:
    """Polynomial spaces, quadrature rules and the local index layout."""

    k: int
    stabilization: str = "face"

    def __post_init__(self):
        if not 0 <= self.k <= 3:
            raise ValueError("polynomial degree k must be in 0..3")

    @cached_property
    def basis_k(self):
        return TriangleBasis(self.k)

    @cached_property
    def basis_v(self):
        return TriangleBasis(self.k + 1)

    @cached_property
    def basis_e(self):
        return EdgeBasis(self.k)

    @cached_property
    def volume_rule(self):
        return triangle_quadrature(2 * (self.k + 1) + 2)

    @cached_property
    def data_rule(self):
        return triangle_quadrature(2 * (self.k + 1) + 6)

    @cached_property
    def edge_rule(self):
        return edge_quadrature(self.k + 2)

    @property
    def nk(self):
        return self.basis_k.dim

    @property
    def nv(self):
        return self.basis_v.dim

    @property
    def ne(self):
        return self.basis_e.dim

    # local offsets
    @property
    def iL(self):
        return 0

    @property
    def iG(self):
        return 4 * self.nk

    @property
    def iy(self):
        return 8 * self.nk

    @property
    def iz(self):
        return 8 * self.nk + 2 * self.nv

    @property
    def ip(self):
        return 8 * self.nk + 4 * self.nv

    @property
    def iq(self):
        return self.ip + self.nk

    @property
    def n_alpha(self):
        return 8 * self.nk

    @property
    def n_beta(self):
        return 4 * self.nv

    @property
    def n_gamma(self):
        return 2 * self.nk

    @property
    def n_interior(self):
        return self.n_alpha + self.n_beta + self.n_gamma

    @property
    def slot(self):
        return 5 * self.ne

    @property
    def n_zeta(self):
        return 3 * self.slot

    @property
    def n_local(self):
        return self.n_interior + self.n_zeta

    def yhat(self, f):
        s = self.n_interior + f * self.slot
        return slice(s, s + 2 * self.ne)

    def zhat(self, f):
        s = self.n_interior + f * self.slot + 2 * self.ne
        return slice(s, s + 2 * self.ne)

    def ctrl(self, f):
        s = self.n_interior + f * self.slot + 4 * self.ne
        return slice(s, s + self.ne)


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Affine maps and face quadrature data for a batch of elements."""

    elements: np.ndarray    # (nb,) element ids
    v0: np.ndarray          # (nb, 2)
    jac: np.ndarray         # (nb, 2, 2), columns v1-v0, v2-v0
    det: np.ndarray         # (nb,)
    jinv: np.ndarray        # (nb, 2, 2)
    normals: np.ndarray     # (nb, 3, 2), outward
    tangents: np.ndarray    # (nb, 3, 2)
    lengths: np.ndarray     # (nb, 3)
    hinv: np.ndarray        # (nb, 3)
    interior: np.ndarray    # (nb, 3) 1.0 on interior faces
    boundary: np.ndarray    # (nb, 3) 1.0 on boundary faces
    face_ref_points: np.ndarray  # (nb, 3, nq, 2) element reference coords
    face_phys_points: np.ndarray  # (nb, 3, nq, 2)

    def to_reference(self, x):
        """Physical points (nb, ..., 2) -> reference coordinates."""
        d = x - self.v0.reshape((-1,) + (1,) * (x.ndim - 2) + (2,))
        return np.einsum("bij,b...j->b...i", self.jinv, d)

    def to_physical(self, xi):
        """Reference points (nq, 2) -> physical points (nb, nq, 2)."""
        return self.v0[:, None, :] + np.einsum("bij,qj->bqi", self.jac, xi)


def element_geometry(mesh, space, elements=None):
    if elements is None:
        elements = np.arange(mesh.num_elements)
    elements = np.asarray(elements, dtype=np.int64)
    vtx = mesh.vertices[mesh.elements[elements]]
    v0 = vtx[:, 0]
    jac = np.stack([vtx[:, 1] - v0, vtx[:, 2] - v0], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(np.abs(det) <= 1e-14 * np.max(np.abs(jac)) ** 2):
        raise ValueError("degenerate element (zero area)")
    jinv = np.linalg.inv(jac)
    faces = mesh.element_faces[elements]
    signs = mesh.element_face_signs[elements]
    normals = mesh.face_normals[faces] * signs[..., None]
    tangents = np.stack([-normals[..., 1], normals[..., 0]], axis=-1)
    lengths = mesh.face_lengths[faces]
    hinv = stabilization_inverse_h(mesh, space.stabilization)[faces]
    bnd = mesh.is_boundary_face[faces].astype(float)
    t = space.edge_rule.points[:, 0]
    a = mesh.vertices[mesh.face_vertices[faces, 0]]
    b = mesh.vertices[mesh.face_vertices[faces, 1]]
    s = 0.5 * (t + 1.0)
    phys = a[:, :, None, :] + s[None, None, :, None] * (b - a)[:, :, None, :]
    geo = ElementGeometry(elements, v0, jac, det, jinv, normals, tangents,
                          lengths, hinv, 1.0 - bnd, bnd,
                          np.empty(0), phys)
    ref = geo.to_reference(phys)
    object.__setattr__(geo, "face_ref_points", ref)
    return geo


@dataclass(frozen=True, eq=False)
class LocalBlocks:
    """
    Primitive element integrals for a batch of elements, from which every
    block A_1 ... A_15 is formed.

    ``D[e, b, m, n]`` is the integral of d/dx_b phi^k_m times phi^{k+1}_n;
    ``Pk[e, f, m, l]`` and ``Pv[e, f, n, l]`` are face integrals of element
    functions against the face basis.
    """

    space: HDGSpace
    geo: ElementGeometry
    D: np.ndarray
    Pk: np.ndarray
    Pv: np.ndarray
    mass_k: np.ndarray
    mass_v: np.ndarray
    gamma: float
    dt: float

    @property
    def nb(self):
        return self.D.shape[0]

    # named blocks, mostly for inspection and tests --------------------
    @cached_property
    def A1(self):
        m = np.kron(np.eye(4), self.mass_k)
        return np.broadcast_to(m, (self.nb,) + m.shape)

    @cached_property
    def A2(self):
        """(vector phi_j, div K_i): rows tensor, cols vector."""
        nk, nv = self.space.nk, self.space.nv
        out = np.zeros((self.nb, 4, nk, 2, nv))
        for a in range(2):
            for b in range(2):
                out[:, 2 * a + b, :, a, :] = self.D[:, b]
        return out.reshape(self.nb, 4 * nk, 2 * nv)

    @cached_property
    def A5(self):
        nv = self.space.nv
        S = np.einsum("bf,bfnl,bfml->bnm", self.geo.hinv, self.Pv, self.Pv)
        out = np.zeros((self.nb, 2, nv, 2, nv))
        out[:, 0, :, 0, :] = S
        out[:, 1, :, 1, :] = S
        return out.reshape(self.nb, 2 * nv, 2 * nv)

    @cached_property
    def A6(self):
        """(grad phi_j, vector phi_i): rows vector, cols pressure."""
        return np.concatenate([self.D[:, 0].transpose(0, 2, 1),
                               self.D[:, 1].transpose(0, 2, 1)], axis=1)

    @cached_property
    def A9(self):
        m = np.kron(np.eye(2), self.mass_v)
        return np.broadcast_to(m, (self.nb,) + m.shape)

    @cached_property
    def A10(self):
        return np.broadcast_to(self.mass_k, (self.nb,) + self.mass_k.shape)

    def face_block(self, name):
        """
        Face-coupling blocks in slot layout (columns or rows over all three
        slots, zero on faces of the wrong kind).
        """
        sp, g = self.space, self.geo
        nk, nv, ne, nb = sp.nk, sp.nv, sp.ne, self.nb
        n, tau = g.normals, g.tangents
        if name == "A3":    # rows tensor (a,b,m), cols (f, c, l)
            out = np.zeros((nb, 2, 2, nk, 3, 2, ne))
            for a in range(2):
                for b in range(2):
                    out[:, a, b, :, :, a, :] = np.einsum(
                        "bf,bfml->bmfl", n[..., b] * g.interior, self.Pk)
            return out.reshape(nb, 4 * nk, 3 * 2 * ne)
        if name == "A4":    # rows tensor, cols (f, l)
            out = np.zeros((nb, 2, 2, nk, 3, ne))
            for a in range(2):
                for b in range(2):
                    w = tau[..., a] * n[..., b] * g.boundary
                    out[:, a, b] = np.einsum("bf,bfml->bmfl", w, self.Pk)
            return out.reshape(nb, 4 * nk, 3 * ne)
        if name == "A7":    # rows vector (c, n), cols (f, c, l)
            out = np.zeros((nb, 2, nv, 3, 2, ne))
            w = g.hinv * g.interior
            for c in range(2):
                out[:, c, :, :, c, :] = np.einsum("bf,bfnl->bnfl", w, self.Pv)
            return out.reshape(nb, 2 * nv, 3 * 2 * ne)
        if name == "A8":    # rows vector, cols (f, l)
            out = np.zeros((nb, 2, nv, 3, ne))
            for c in range(2):
                w = g.hinv * tau[..., c] * g.boundary
                out[:, c] = np.einsum("bf,bfnl->bnfl", w, self.Pv)
            return out.reshape(nb, 2 * nv, 3 * ne)
        if name == "A11":   # rows (f, c, l), cols pressure j
            out = np.zeros((nb, 3, 2, ne, nk))
            for c in range(2):
                w = n[..., c] * g.interior
                out[:, :, c] = np.einsum("bf,bfjl->bflj", w, self.Pk)
            return out.reshape(nb, 3 * 2 * ne, nk)
        if name == "A12":
            d = np.repeat(g.hinv * g.interior, 2 * ne, axis=1)
            return d[:, :, None] * np.eye(3 * 2 * ne)[None]
        if name == "A13":
            return self.face_block("A4").transpose(0, 2, 1)
        if name == "A14":
            return self.face_block("A8").transpose(0, 2, 1)
        if name == "A15":
            d = np.repeat(g.boundary, ne, axis=1)
            return d[:, :, None] * np.eye(3 * ne)[None]
        raise KeyError(name)

    def matrix(self):
        """Full local matrix over (alpha, beta, gamma, zeta), (nb, N, N)."""
        sp = self.space
        nk, nv, ne, nb = sp.nk, sp.nv, sp.ne, self.nb
        N = sp.n_local
        M = np.zeros((nb, N, N))
        L = slice(sp.iL, sp.iL + 4 * nk)
        G = slice(sp.iG, sp.iG + 4 * nk)
        y = slice(sp.iy, sp.iy + 2 * nv)
        z = slice(sp.iz, sp.iz + 2 * nv)
        p = slice(sp.ip, sp.ip + nk)
        q = slice(sp.iq, sp.iq + nk)
        yh = np.concatenate([np.arange(N)[sp.yhat(f)] for f in range(3)])
        zh = np.concatenate([np.arange(N)[sp.zhat(f)] for f in range(3)])
        uu = np.concatenate([np.arange(N)[sp.ctrl(f)] for f in range(3)])

        A1, A2, A5, A6, A9, A10 = (self.A1, self.A2, self.A5, self.A6,
                                   self.A9, self.A10)
        A3, A4, A7, A8 = (self.face_block(s) for s in ("A3", "A4", "A7",
                                                        "A8"))
        A11, A12, A15 = (self.face_block(s) for s in ("A11", "A12", "A15"))
        T = lambda X: X.transpose(0, 2, 1)  # noqa: E731

        def put(rows, cols, X):
            r = np.arange(N)[rows] if isinstance(rows, slice) else rows
            c = np.arange(N)[cols] if isinstance(cols, slice) else cols
            M[:, r[:, None], c[None, :]] += X

        # flux equations
        put(L, L, A1)
        put(L, y, A2)
        put(L, yh, -A3)
        put(L, uu, -A4)
        put(G, G, A1)
        put(G, z, A2)
        put(G, zh, -A3)
        # momentum equations
        put(y, L, -T(A2))
        put(y, y, A5)
        put(y, p, A6)
        put(y, yh, -A7)
        put(y, uu, -A8)
        put(z, G, -T(A2))
        put(z, y, -A9)
        put(z, z, A5)
        put(z, q, -A6)
        put(z, zh, -A7)
        # pseudo-time continuity equations
        put(p, p, A10 / self.dt)
        put(p, y, -T(A6))
        put(p, yh, T(A11))
        put(q, q, A10 / self.dt)
        put(q, z, -T(A6))
        put(q, zh, T(A11))
        # flux continuity on interior faces
        put(yh, L, T(A3))
        put(yh, p, -A11)
        put(yh, y, -T(A7))
        put(yh, yh, A12)
        put(zh, G, T(A3))
        put(zh, q, A11)
        put(zh, z, -T(A7))
        put(zh, zh, A12)
        # optimality condition on boundary faces
        put(uu, G, T(A4))
        put(uu, z, -T(A8))
        put(uu, uu, -self.gamma * A15)
        return M


def assemble_local_blocks(mesh, space, elements=None, gamma=1.0, dt=256.0):
    """
    Element integrals for the given elements (default: all).

    The pressure mass block enters the local matrix scaled by ``1/dt``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    geo = element_geometry(mesh, space, elements)
    rule = space.volume_rule
    _, gk = space.basis_k.evaluate(rule.points, gradient=True)
    vv = space.basis_v.evaluate(rule.points)
    # R[c, m, n] = sum_q w grad_c phi^k_m phi^{k+1}_n on the reference
    R = np.einsum("q,qmc,qn->cmn", rule.weights, gk, vv)
    D = np.einsum("ecb,cmn->ebmn", geo.jinv, R)

    er = space.edge_rule
    psi = space.basis_e.evaluate(er.points)           # (nq, ne)
    fk = space.basis_k.evaluate(geo.face_ref_points)  # (nb, 3, nq, nk)
    fv = space.basis_v.evaluate(geo.face_ref_points)
    scale = np.sqrt(0.5 * geo.lengths) / np.sqrt(geo.det)[:, None]
    w = er.weights[None, None, :] * scale[..., None]
    Pk = np.einsum("bfq,bfqm,ql->bfml", w, fk, psi)
    Pv = np.einsum("bfq,bfqn,ql->bfnl", w, fv, psi)
    # scaled bases: element masses equal the reference Gram matrices
    vk = space.basis_k.evaluate(rule.points)
    mass_k = np.einsum("q,qm,qn->mn", rule.weights, vk, vk)
    mass_v = np.einsum("q,qm,qn->mn", rule.weights, vv, vv)
    return LocalBlocks(space, geo, D, Pk, Pv, mass_k, mass_v, float(gamma),
                       float(dt))


def load_vector(blocks, func):
    """(func, phi^{k+1}) per element and component, shape (nb, 2 nv)."""
    sp, geo = blocks.space, blocks.geo
    rule = sp.data_rule
    x = geo.to_physical(rule.points)
    fx = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)  # (2, nb, nq)
    fx = np.broadcast_to(fx, (2,) + x.shape[:2])
    vv = sp.basis_v.evaluate(rule.points)
    out = np.einsum("q,cbq,qn->bcn", rule.weights, fx, vv)
    out *= np.sqrt(geo.det)[:, None, None]
    return out.reshape(blocks.nb, 2 * sp.nv)


@dataclass(frozen=True, eq=False)
class CondensedElements:
    """
    Static condensation of a batch of elements.

    ``F`` maps local zeta to (alpha, beta, gamma); ``schur`` is the local
    contribution ``B10 F1 + B11 F2 + B12 F3 + B13`` to the trace system.
    The remaining arrays are the condensation factors needed to build the
    iteration-dependent vectors J.
    """

    space: HDGSpace
    F: np.ndarray
    schur: np.ndarray
    B1inv_B2: np.ndarray
    G1: np.ndarray
    G3: np.ndarray
    B5: np.ndarray
    B7: np.ndarray
    B_zeta: np.ndarray   # rows zeta, cols (alpha, beta, gamma)

    @property
    def F1(self):
        return self.F[:, :self.space.n_alpha]

    @property
    def F2(self):
        sp = self.space
        return self.F[:, sp.n_alpha:sp.n_alpha + sp.n_beta]

    @property
    def F3(self):
        sp = self.space
        return self.F[:, sp.n_alpha + sp.n_beta:]


def _spd_inverse(C, what):
    ev = np.linalg.eigvalsh(C)
    if np.any(ev[:, 0] <= 1e-12 * ev[:, -1]):
        raise np.linalg.LinAlgError(f"{what} is not numerically positive "
                                    "definite")
    Lc = np.linalg.cholesky(C)
    Li = np.linalg.inv(Lc)
    return Li.transpose(0, 2, 1) @ Li


def block_triangular_inverse(C1inv, C2inv, coupling):
    """Inverse of [[C1, 0], [-coupling, C2]] from the diagonal inverses."""
    nb, n1, _ = C1inv.shape
    n2 = C2inv.shape[1]
    out = np.zeros((nb, n1 + n2, n1 + n2))
    out[:, :n1, :n1] = C1inv
    out[:, n1:, n1:] = C2inv
    out[:, n1:, :n1] = C2inv @ coupling @ C1inv
    return out


def condense(blocks, matrix=None):
    """
    Eliminate flux, velocity and pressure element by element.

    Uses G1 = (B4 + B2^T B1^{-1} B2)^{-1} through its block-triangular
    inverse, G2 = B6 + B2^T B1^{-1} B3, G3 = (B8 - B7 G1 B5)^{-1} and
    G4 = B9 - B7 G1 G2 (B7, B8 and B9 are the pressure rows).
    """
    sp = blocks.space
    M = blocks.matrix() if matrix is None else matrix
    a = slice(0, sp.n_alpha)
    b = slice(sp.n_alpha, sp.n_alpha + sp.n_beta)
    c = slice(sp.n_alpha + sp.n_beta, sp.n_interior)
    z = slice(sp.n_interior, sp.n_local)
    B1, B2, B3 = M[:, a, a], M[:, a, b], M[:, a, z]
    B4, B5, B6 = M[:, b, b], M[:, b, c], M[:, b, z]
    B7, B8, B9 = M[:, c, b], M[:, c, c], M[:, c, z]

    nL = 4 * sp.nk
    B1inv_blk = _spd_inverse(B1[:, :nL, :nL], "flux mass block")
    B1inv = np.zeros_like(B1)
    B1inv[:, :nL, :nL] = B1inv_blk
    B1inv[:, nL:, nL:] = B1inv_blk
    B1inv_B2 = B1inv @ B2
    B1inv_B3 = B1inv @ B3
    S = B4 + B2.transpose(0, 2, 1) @ B1inv_B2
    nV = 2 * sp.nv
    C1inv = _spd_inverse(S[:, :nV, :nV], "velocity block C1")
    C2inv = _spd_inverse(S[:, nV:, nV:], "velocity block C2")
    G1 = block_triangular_inverse(C1inv, C2inv, -S[:, nV:, :nV])
    G2 = B6 + B2.transpose(0, 2, 1) @ B1inv_B3
    G3 = np.linalg.inv(B8 - B7 @ G1 @ B5)
    G4 = B9 - B7 @ G1 @ G2
    F3 = -G3 @ G4
    F2 = G1 @ B5 @ G3 @ G4 - G1 @ G2
    F1 = -B1inv_B2 @ F2 - B1inv_B3
    F = np.concatenate([F1, F2, F3], axis=1)
    Bz = M[:, z, :sp.n_interior]
    schur = M[:, z, z] + Bz @ F
    return CondensedElements(sp, F, schur, B1inv_B2, G1, G3, B5, B7, Bz)


def local_rhs_data(blocks, f=None, yd=None):
    """The fixed right-hand side b~1 = [b1; -b2] per element."""
    sp = blocks.space
    out = np.zeros((blocks.nb, sp.n_beta))
    if f is not None:
        out[:, :2 * sp.nv] = load_vector(blocks, f)
    if yd is not None:
        out[:, 2 * sp.nv:] = -load_vector(blocks, yd)
    return out


def local_iteration_rhs(condensed, b1_tilde, p_prev, q_prev, dt):
    """
    Iteration vectors J = (J1, J2, J3) stacked as (nb, n_interior).

    ``b1_tilde`` is [b1; -b2] from ``local_rhs_data``; the pressure rows
    carry b3 = (p_prev / dt, w) and b4 = (q_prev / dt, w), which reduce to
    coefficient vectors over dt for the orthonormal pressure basis.
    """
    sp = condensed.space
    p_prev = np.asarray(p_prev, dtype=float)
    q_prev = np.asarray(q_prev, dtype=float)
    if p_prev.shape[-1] != sp.nk or q_prev.shape[-1] != sp.nk:
        raise ValueError("pressure coefficient length mismatch")
    b2_tilde = np.concatenate([np.broadcast_to(p_prev, b1_tilde.shape[:1]
                                               + (sp.nk,)),
                               np.broadcast_to(q_prev, b1_tilde.shape[:1]
                                               + (sp.nk,))], axis=1) / dt
    G1b1 = np.einsum("bij,bj->bi", condensed.G1, b1_tilde)
    H1 = np.einsum("bij,bj->bi", condensed.G3,
                   b2_tilde - np.einsum("bij,bj->bi", condensed.B7, G1b1))
    H2 = G1b1
    J2 = H2 - np.einsum("bij,bj->bi", condensed.G1,
                        np.einsum("bij,bj->bi", condensed.B5, H1))
    J1 = -np.einsum("bij,bj->bi", condensed.B1inv_B2, J2)
    return np.concatenate([J1, J2, H1], axis=1)


def recover_fields(condensed, zeta_local, J=None):
    """(alpha, beta, gamma) = F zeta + J, stacked as (nb, n_interior)."""
    zeta_local = np.asarray(zeta_local, dtype=float)
    if zeta_local.shape[-1] != condensed.space.n_zeta:
        raise ValueError("zeta dimension does not match the face DOFs")
    out = np.einsum("bij,bj->bi", condensed.F, zeta_local)
    if J is not None:
        out = out + J
    return out


def trace_rhs(condensed, J):
    """Local right-hand side -(B10 J1 + B11 J2 + B12 J3)."""
    return -np.einsum("bij,bj->bi", condensed.B_zeta, J)


def _field_tables(mesh, space, geo, x, vol_rule, edge_rule):
    """Values of (T, v, w) at volume and face points and of mu on faces."""
    T, v, w, mu = x
    nb = geo.det.size
    sq = np.sqrt(geo.det)
    bk, bv = space.basis_k, space.basis_v
    phk = bk.evaluate(vol_rule.points)
    phv, ghv = bv.evaluate(vol_rule.points, gradient=True)
    # physical gradients of the scaled velocity basis: J^{-T} grad / sqrt(det)
    gphys = np.einsum("eji,qnj->eqni", geo.jinv, ghv) / sq[:, None, None, None]
    Tq = np.einsum("ecm,qm->eqc", T, phk) / sq[:, None, None]
    vq = np.einsum("ecn,qn->eqc", v, phv) / sq[:, None, None]
    wq = np.einsum("em,qm->eq", w, phk) / sq[:, None]
    gv = np.einsum("ecn,eqnb->eqcb", v, gphys)   # d v_c / d x_b
    _, ghk = bk.evaluate(vol_rule.points, gradient=True)
    gk = np.einsum("eji,qmj->eqmi", geo.jinv, ghk) / sq[:, None, None, None]
    gT = np.einsum("ecm,eqmb->eqcb", T, gk)       # d T_c / d x_b, c = 2a+b'
    divT = np.stack([gT[..., 0, 0] + gT[..., 1, 1],
                     gT[..., 2, 0] + gT[..., 3, 1]], axis=-1)
    gw = np.einsum("em,eqmb->eqb", w, gk)

    # face points in element reference coordinates
    t = edge_rule.points[:, 0]
    faces = mesh.element_faces[geo.elements]
    a = mesh.vertices[mesh.face_vertices[faces, 0]]
    b = mesh.vertices[mesh.face_vertices[faces, 1]]
    s = 0.5 * (t + 1.0)
    phys = a[:, :, None, :] + s[None, None, :, None] * (b - a)[:, :, None, :]
    ref = geo.to_reference(phys)
    fk = bk.evaluate(ref)
    fv = bv.evaluate(ref)
    Tf = np.einsum("ecm,efqm->efqc", T, fk) / sq[:, None, None, None]
    vf = np.einsum("ecn,efqn->efqc", v, fv) / sq[:, None, None, None]
    wf = np.einsum("em,efqm->efq", w, fk) / sq[:, None, None]
    psi = space.basis_e.evaluate(t)                   # (nq, ne)
    scale = 1.0 / np.sqrt(0.5 * geo.lengths)          # (nb, 3)
    muf = np.einsum("efcl,ql->efqc", mu[faces], psi) * scale[..., None, None]
    # face projection of v onto the face space
    fw = 0.5 * geo.lengths[..., None] * edge_rule.weights
    coef = np.einsum("efq,efqc,ql->efcl", fw, vf, psi) * scale[..., None, None]
    Pv = np.einsum("efcl,ql->efqc", coef, psi) * scale[..., None, None]
    return dict(T=Tq, v=vq, w=wq, gv=gv, divT=divT, gw=gw, Tf=Tf, vf=vf,
                wf=wf, mu=muf, Pv=Pv, fw=fw)


def hdg_bilinear_form(mesh, k, x, xp, stabilization="face"):
    """
    The HDG operator B(x; x') of the state equation, evaluated term by term
    by quadrature.

    Parameters
    ----------
    x, xp : tuple (T, v, w, mu)
        ``T`` (nel, 4, nk) flux, ``v`` (nel, 2, nv) velocity, ``w``
        (nel, nk) pressure, ``mu`` (nf, 2, ne) face trace; ``mu`` is only
        read on interior faces.
    """
    space = HDGSpace(k, stabilization)
    geo = element_geometry(mesh, space)
    vol = triangle_quadrature(2 * k + 4)
    edge = edge_quadrature(k + 3)
    A = _field_tables(mesh, space, geo, x, vol, edge)
    B = _field_tables(mesh, space, geo, xp, vol, edge)
    wv = vol.weights[None, :] * geo.det[:, None]
    n = geo.normals[:, :, None, :]                   # (nb, 3, 1, 2)
    hinv = geo.hinv[..., None]
    inner = geo.interior[..., None]

    def vint(f):
        return float(np.sum(wv * f))

    def fint(f, mask=None):
        m = 1.0 if mask is None else mask
        return float(np.sum(A["fw"] * m * f))

    def tn(Tf):
        # (T n)_a = sum_b T_ab n_b
        return np.stack([Tf[..., 0] * n[..., 0] + Tf[..., 1] * n[..., 1],
                         Tf[..., 2] * n[..., 0] + Tf[..., 3] * n[..., 1]],
                        axis=-1)

    L, y, p, yh = A["T"], A["v"], A["w"], A["mu"]
    T1f, v1, w1, mu1 = B["Tf"], B["vf"], B["wf"], B["mu"]
    gv1 = B["gv"].reshape(B["gv"].shape[:2] + (4,))
    div_v1 = B["gv"][..., 0, 0] + B["gv"][..., 1, 1]
    flux = tn(A["Tf"]) - A["wf"][..., None] * n - hinv[..., None] * A["Pv"]
    total = vint(np.sum(L * B["T"], axis=-1))
    total += vint(np.sum(y * B["divT"], axis=-1))
    total -= fint(np.sum(yh * tn(T1f), axis=-1), inner)
    total += vint(np.sum(L * gv1, axis=-1))
    total -= vint(p * div_v1)
    total -= fint(np.sum(flux * v1, axis=-1))
    total -= fint(hinv * np.sum(yh * v1, axis=-1), inner)
    total -= vint(np.sum(y * B["gw"], axis=-1))
    total += fint(np.sum(yh * n, axis=-1) * w1, inner)
    jump = flux + hinv[..., None] * yh
    total += fint(np.sum(jump * mu1, axis=-1), inner)
    return total


def hdg_energy(mesh, k, x, stabilization="face"):
    """
    Right-hand side of the energy identity: ||T||^2 plus the weighted face
    norms of P_M v - mu on interior faces and of P_M v on boundary faces.
    """
    space = HDGSpace(k, stabilization)
    geo = element_geometry(mesh, space)
    vol = triangle_quadrature(2 * k + 4)
    edge = edge_quadrature(k + 3)
    A = _field_tables(mesh, space, geo, x, vol, edge)
    wv = vol.weights[None, :] * geo.det[:, None]
    hinv = geo.hinv[..., None]
    d = A["Pv"] - A["mu"]
    e = float(np.sum(wv * np.sum(A["T"] ** 2, axis=-1)))
    e += float(np.sum(A["fw"] * hinv * geo.interior[..., None]
                      * np.sum(d ** 2, axis=-1)))
    e += float(np.sum(A["fw"] * hinv * geo.boundary[..., None]
                      * np.sum(A["Pv"] ** 2, axis=-1)))
    return e

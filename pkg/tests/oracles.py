"""
Independent reference computations used by the tests.

The local-matrix oracle evaluates every defining inner product of the
element equations by brute-force quadrature: a Duffy-collapsed tensor
Gauss rule on the element, Gauss rules on its faces, and per-DOF field
tables, without using any mass-matrix or projection shortcut of the
library.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss

from hdgstokes.polybasis import EdgeBasis, TriangleBasis


def duffy_rule(order):
    """Tensor Gauss rule on the unit square collapsed onto the reference
    triangle {x, y >= 0, x + y <= 1}."""
    t, w = leggauss(order)
    s, ws = 0.5 * (t + 1.0), 0.5 * w
    U, V = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws) * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    return pts, W.ravel()


def monomial_integral(a, b):
    """Integral of x^a y^b over the reference triangle."""
    from math import factorial
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def local_matrix_oracle(mesh, space, e, gamma, dt, order=12):
    """
    Dense local matrix of element ``e`` in the library's local layout,
    assembled by looping the quadrature over all trial/test DOF pairs.
    """
    k = space.k
    bk, bv, be = TriangleBasis(k), TriangleBasis(k + 1), EdgeBasis(k)
    nk, nv, ne = bk.dim, bv.dim, be.dim
    N = space.n_local
    P = mesh.vertices[mesh.elements[e]]
    Jm = np.column_stack([P[1] - P[0], P[2] - P[0]])
    det = np.linalg.det(Jm)
    Jinv = np.linalg.inv(Jm)
    sq = np.sqrt(det)

    xi, wq = duffy_rule(order)
    wq = wq * det
    Q = wq.size
    vk, gk = bk.evaluate(xi, gradient=True)
    vv = bv.evaluate(xi)
    gk = np.einsum("ji,qmj->qmi", Jinv, gk)

    # volume tables per DOF
    T = {nm: np.zeros((N, 4, Q)) for nm in "LG"}
    dT = {nm: np.zeros((N, 4, Q, 2)) for nm in "LG"}
    V = {nm: np.zeros((N, 2, Q)) for nm in "yz"}
    S = {nm: np.zeros((N, Q)) for nm in "pq"}
    dS = {nm: np.zeros((N, Q, 2)) for nm in "pq"}
    for nm, off in (("L", space.iL), ("G", space.iG)):
        for c in range(4):
            for m in range(nk):
                j = off + c * nk + m
                T[nm][j, c] = vk[:, m] / sq
                dT[nm][j, c] = gk[:, m] / sq
    for nm, off in (("y", space.iy), ("z", space.iz)):
        for c in range(2):
            for m in range(nv):
                j = off + c * nv + m
                V[nm][j, c] = vv[:, m] / sq
    for nm, off in (("p", space.ip), ("q", space.iq)):
        for m in range(nk):
            S[nm][off + m] = vk[:, m] / sq
            dS[nm][off + m] = gk[:, m] / sq

    def vol(a, b):
        # sum over trailing component axes and points, test index first
        a = a.reshape(N, -1, Q) if a.ndim > 2 else a[:, None, :]
        b = b.reshape(N, -1, Q) if b.ndim > 2 else b[:, None, :]
        return np.einsum("icq,jcq,q->ij", a, b, wq)

    def div(t):
        # (div T)_a = sum_b d_b T_ab, components 2a+b
        return np.stack([t[:, 0, :, 0] + t[:, 1, :, 1],
                         t[:, 2, :, 0] + t[:, 3, :, 1]], axis=1)

    M = np.zeros((N, N))
    # volume terms, rows are test functions
    M += vol(T["L"], T["L"]) + vol(div(dT["L"]), V["y"])
    M += vol(T["G"], T["G"]) + vol(div(dT["G"]), V["z"])
    M -= vol(V["y"], div(dT["L"]))
    M += vol(V["y"], dS["p"].transpose(0, 2, 1))
    M -= vol(V["z"], div(dT["G"]))
    M -= vol(V["z"], V["y"])
    M -= vol(V["z"], dS["q"].transpose(0, 2, 1))
    M += vol(S["p"], S["p"]) / dt - vol(dS["p"].transpose(0, 2, 1), V["y"])
    M += vol(S["q"], S["q"]) / dt - vol(dS["q"].transpose(0, 2, 1), V["z"])

    # face terms
    tg, wg = leggauss(order)
    psi = be.evaluate(tg)
    for f in range(3):
        a_loc, b_loc = P[f], P[(f + 1) % 3]
        d = b_loc - a_loc
        length = np.hypot(*d)
        n = np.array([d[1], -d[0]]) / length
        tau = np.array([-n[1], n[0]])
        fid = mesh.element_faces[e, f]
        boundary = mesh.face_right[fid] < 0
        A = mesh.vertices[mesh.face_vertices[fid, 0]]
        B = mesh.vertices[mesh.face_vertices[fid, 1]]
        x = A + 0.5 * (tg[:, None] + 1.0) * (B - A)
        wf = wg * 0.5 * length
        ref = (x - P[0]) @ Jinv.T
        fk = bk.evaluate(ref) / sq
        fv = bv.evaluate(ref) / sq
        mu = psi / np.sqrt(0.5 * length)
        hinv = 1.0 / length
        nq = tg.size
        Tf = {nm: np.zeros((N, 4, nq)) for nm in "LG"}
        Vf = {nm: np.zeros((N, 2, nq)) for nm in "yz"}
        Sf = {nm: np.zeros((N, nq)) for nm in "pq"}
        for nm, off in (("L", space.iL), ("G", space.iG)):
            for c in range(4):
                for m in range(nk):
                    Tf[nm][off + c * nk + m, c] = fk[:, m]
        for nm, off in (("y", space.iy), ("z", space.iz)):
            for c in range(2):
                for m in range(nv):
                    Vf[nm][off + c * nv + m, c] = fv[:, m]
        for nm, off in (("p", space.ip), ("q", space.iq)):
            for m in range(nk):
                Sf[nm][off + m] = fk[:, m]
        H = {nm: np.zeros((N, 2, nq)) for nm in ("yh", "zh")}
        U = np.zeros((N, 2, nq))      # u tau
        if boundary:
            for m in range(ne):
                U[np.arange(N)[space.ctrl(f)][m]] = np.outer(tau, mu[:, m])
        else:
            for nm, sl in (("yh", space.yhat(f)), ("zh", space.zhat(f))):
                idx = np.arange(N)[sl]
                for c in range(2):
                    for m in range(ne):
                        H[nm][idx[c * ne + m], c] = mu[:, m]
        Us = np.zeros((N, nq))        # scalar control for its mass term
        if boundary:
            for m in range(ne):
                Us[np.arange(N)[space.ctrl(f)][m]] = mu[:, m]

        def proj(v):
            # L2 projection of a vector table onto the face space
            c = np.einsum("icq,q,ql->icl", v, wf, mu)
            return np.einsum("icl,ql->icq", c, mu)

        def tn(t):
            return np.stack([t[:, 0] * n[0] + t[:, 1] * n[1],
                             t[:, 2] * n[0] + t[:, 3] * n[1]], axis=1)

        def fint(a, b):
            a = a if a.ndim == 3 else a[:, None, :]
            b = b if b.ndim == 3 else b[:, None, :]
            return np.einsum("icq,jcq,q->ij", a, b, wf)

        pn = {nm: Sf[nm][:, None, :] * n[None, :, None] for nm in "pq"}
        if boundary:
            M -= fint(tn(Tf["L"]), U)
            M += hinv * fint(Vf["y"], proj(Vf["y"]))
            M -= hinv * fint(Vf["y"], U)
            M += hinv * fint(Vf["z"], proj(Vf["z"]))
            # optimality condition, test function mu3 tau
            M += fint(U, tn(Tf["G"])) - hinv * fint(U, Vf["z"])
            M -= gamma * fint(Us, Us)
        else:
            M -= fint(tn(Tf["L"]), H["yh"])
            M -= fint(tn(Tf["G"]), H["zh"])
            M += hinv * fint(Vf["y"], proj(Vf["y"]))
            M -= hinv * fint(Vf["y"], H["yh"])
            M += hinv * fint(Vf["z"], proj(Vf["z"]))
            M -= hinv * fint(Vf["z"], H["zh"])
            M += fint(pn["p"], H["yh"])
            M += fint(pn["q"], H["zh"])
            M += fint(H["yh"], tn(Tf["L"]) - pn["p"] - hinv * Vf["y"]
                      + hinv * H["yh"])
            M += fint(H["zh"], tn(Tf["G"]) + pn["q"] - hinv * Vf["z"]
                      + hinv * H["zh"])
    return M


def random_fields(mesh, k, rng):
    """
    Random discrete (T, v, w, mu): flux, velocity, mean-zero pressure and
    a face trace that vanishes on boundary faces.
    """
    nk = (k + 1) * (k + 2) // 2
    nv = (k + 2) * (k + 3) // 2
    nel = mesh.num_elements
    T = rng.standard_normal((nel, 4, nk))
    v = rng.standard_normal((nel, 2, nv))
    w = rng.standard_normal((nel, nk))
    c = np.sqrt(mesh.element_areas)
    w[:, 0] -= c * (c @ w[:, 0]) / (c @ c)
    mu = rng.standard_normal((mesh.num_faces, 2, k + 1))
    mu[mesh.boundary_faces] = 0.0
    return T, v, w, mu


def dense_schur(full):
    """Trace-block Schur complement of an assembled full system."""
    A = full.matrix.toarray()
    ni = full.n_element_dofs
    Aii, Aiz = A[:ni, :ni], A[:ni, ni:]
    Azi, Azz = A[ni:, :ni], A[ni:, ni:]
    return Azz - Azi @ np.linalg.solve(Aii, Aiz)

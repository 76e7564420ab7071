"""
L2 norms of discrete fields against closed-form functions or against a
solution on a nested finer mesh.
"""

import numpy as np

from ..hdg_local import HDGSpace
from ..mesh import square_cell_locator
from ..polybasis import EdgeBasis, TriangleBasis, edge_quadrature

FIELDS = ("L", "G", "y", "z", "p", "q", "u")


def _physical_points(mesh, rule):
    v = mesh.vertices[mesh.elements]
    v0 = v[:, 0]
    jac = np.stack([v[:, 1] - v0, v[:, 2] - v0], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    x = v0[:, None, :] + np.einsum("eij,qj->eqi", jac, rule.points)
    return x, det


def function_l2_norm(mesh, func, rule):
    """L2 norm over the mesh of a function returning a tuple of components."""
    x, det = _physical_points(mesh, rule)
    vals = np.asarray(func(x[..., 0], x[..., 1]), dtype=float)
    sq = (vals ** 2).reshape(-1, *x.shape[:2]).sum(axis=0)
    return float(np.sqrt(np.einsum("q,eq,e->", rule.weights, sq, det)))


def _flatten_exact(values, ncomp, shape):
    """Stack a nested tuple of component arrays as (ncomp, *shape)."""
    if ncomp == 1:
        return np.broadcast_to(np.asarray(values, dtype=float), shape)[None]
    flat = []
    for v in values:
        if isinstance(v, tuple):
            flat.extend(v)
        else:
            flat.append(v)
    if len(flat) != ncomp:
        raise ValueError("exact function has the wrong number of components")
    return np.stack([np.broadcast_to(np.asarray(c, dtype=float), shape)
                     for c in flat])


def l2_error(mesh, coeffs, exact, rule, degree):
    """
    ``||exact - u_h||`` over the mesh for an element field.

    Parameters
    ----------
    coeffs : ndarray, shape (nel, dim) or (nel, ncomp, dim)
        Coefficients in the scaled orthonormal basis of ``degree``.
    exact : callable
        ``exact(x1, x2)``; a scalar array, a tuple of components, or a
        tuple of tuples (tensor, row-major).
    rule : QuadratureRule
    """
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 2:
        c = c[:, None, :]
    basis = TriangleBasis(degree)
    if c.shape[-1] != basis.dim:
        raise ValueError("coefficient length does not match the degree")
    x, det = _physical_points(mesh, rule)
    phi = basis.evaluate(rule.points)
    uh = np.einsum("ecm,qm->ceq", c, phi) / np.sqrt(det)[None, :, None]
    ue = _flatten_exact(exact(x[..., 0], x[..., 1]), c.shape[1],
                        x.shape[:2])
    sq = ((ue - uh) ** 2).sum(axis=0)
    return float(np.sqrt(np.einsum("q,eq,e->", rule.weights, sq, det)))


def control_l2_error(mesh, u, exact, points):
    """
    ``||exact - u_h||`` over the boundary faces.

    ``u`` has shape (nbf, ne) ordered like ``mesh.boundary_faces``;
    ``exact(x1, x2, tangent)`` gets the unit tangent of each face.
    """
    u = np.asarray(u, dtype=float)
    rule = edge_quadrature(points)
    fb = mesh.boundary_faces
    t = rule.points[:, 0]
    psi = EdgeBasis(u.shape[1] - 1).evaluate(t)
    a = mesh.vertices[mesh.face_vertices[fb, 0]]
    b = mesh.vertices[mesh.face_vertices[fb, 1]]
    s = 0.5 * (t + 1.0)
    x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    lengths = mesh.face_lengths[fb]
    uh = (u @ psi.T) / np.sqrt(0.5 * lengths)[:, None]
    tau = np.broadcast_to(mesh.face_tangents[fb][:, None, :], x.shape)
    ue = exact(x[..., 0], x[..., 1], tau)
    return float(np.sqrt(np.einsum("q,fq,f->", rule.weights, (ue - uh) ** 2,
                                   0.5 * lengths)))


def solution_errors(solution, problem, space=None):
    """Errors of all seven fields against a ``ManufacturedSolution``."""
    mesh, k = solution.mesh, solution.k
    space = space or HDGSpace(k)
    rule = space.data_rule
    npts = k + 5
    return {
        "L": l2_error(mesh, solution.L, problem.velocity_gradient, rule, k),
        "G": l2_error(mesh, solution.G, problem.adjoint_gradient, rule, k),
        "y": l2_error(mesh, solution.y, problem.velocity, rule, k + 1),
        "z": l2_error(mesh, solution.z, problem.adjoint, rule, k + 1),
        "p": l2_error(mesh, solution.p, problem.pressure, rule, k),
        "q": l2_error(mesh, solution.q, problem.dual_pressure, rule, k),
        "u": control_l2_error(mesh, solution.u, problem.control, npts),
    }


# nested-mesh comparison ------------------------------------------------

def _element_values(mesh, coeffs, degree, elements, ref_points):
    """Evaluate element fields at reference points of given elements."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim == 2:
        c = c[:, None, :]
    basis = TriangleBasis(degree)
    v = mesh.vertices[mesh.elements[elements]]
    jac = np.stack([v[..., 1, :] - v[..., 0, :], v[..., 2, :] - v[..., 0, :]],
                   axis=-1)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    phi = basis.evaluate(ref_points)
    return np.einsum("...cm,...m->c...", c[elements], phi) / np.sqrt(det)


def _to_reference(mesh, elements, x):
    v = mesh.vertices[mesh.elements[elements]]
    v0 = v[..., 0, :]
    jac = np.stack([v[..., 1, :] - v0, v[..., 2, :] - v0], axis=-1)
    return np.einsum("...ij,...j->...i", np.linalg.inv(jac), x - v0)


def reference_errors(coarse, fine, n_coarse, n_fine, side=1.0,
                     origin=(0.0, 0.0), fields=FIELDS):
    """
    L2 differences between a coarse solution and a solution on a nested
    finer uniform mesh of the same square, integrated on the fine mesh.
    """
    if n_fine % n_coarse:
        raise ValueError("fine mesh must refine the coarse mesh")
    k = coarse.k
    if fine.k < k:
        raise ValueError("reference degree must not be lower")
    mc, mf = coarse.mesh, fine.mesh
    space = HDGSpace(max(k, fine.k))
    rule = space.data_rule
    x, det = _physical_points(mf, rule)
    # nudge points towards the fine-element centroid to avoid ambiguity on
    # shared coarse edges
    locate = square_cell_locator(n_coarse, side, origin)
    centroid = mf.vertices[mf.elements].mean(axis=1)
    owner = locate(centroid)
    owner = np.broadcast_to(owner[:, None], x.shape[:2])
    xr_c = _to_reference(mc, owner, x)
    fine_ref = np.broadcast_to(rule.points, x.shape)
    out = {}
    degrees = {"L": 0, "G": 0, "y": 1, "z": 1, "p": 0, "q": 0}
    for name in fields:
        if name == "u":
            continue
        d = degrees[name]
        vc = _element_values(mc, getattr(coarse, name), k + d, owner, xr_c)
        fe = np.broadcast_to(np.arange(mf.num_elements)[:, None],
                             x.shape[:2])
        vf = _element_values(mf, getattr(fine, name), fine.k + d, fe,
                             fine_ref)
        sq = ((vc - vf) ** 2).sum(axis=0)
        out[name] = float(np.sqrt(np.einsum("q,eq,e->", rule.weights, sq,
                                            det)))
    if "u" in fields:
        out["u"] = _control_reference_error(coarse, fine, max(k, fine.k) + 5)
    return out


def _face_poly(u, t, lengths):
    psi = EdgeBasis(u.shape[-1] - 1).evaluate(t)
    return np.einsum("...l,...l->...", u, psi) / np.sqrt(0.5 * lengths)


def _control_reference_error(coarse, fine, points):
    mc, mf = coarse.mesh, fine.mesh
    rule = edge_quadrature(points)
    t = rule.points[:, 0]
    fb = mf.boundary_faces
    a = mf.vertices[mf.face_vertices[fb, 0]]
    b = mf.vertices[mf.face_vertices[fb, 1]]
    s = 0.5 * (t + 1.0)
    x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    lf = mf.face_lengths[fb]
    uf = _face_poly(fine.u[:, None, :], t[None, :], lf[:, None])
    # coarse boundary face containing each fine face (by midpoint)
    cb = mc.boundary_faces
    ca = mc.vertices[mc.face_vertices[cb, 0]]
    cbv = mc.vertices[mc.face_vertices[cb, 1]]
    mid = 0.5 * (a + b)
    d = cbv - ca
    lc = mc.face_lengths[cb]
    rel = mid[:, None, :] - ca[None, :, :]
    proj = np.einsum("fci,ci->fc", rel, d) / lc ** 2
    cross = rel[..., 0] * d[None, :, 1] - rel[..., 1] * d[None, :, 0]
    inside = (np.abs(cross) <= 1e-12 * lc ** 2) & (proj > 0) & (proj < 1)
    if not np.all(inside.sum(axis=1) == 1):
        raise ValueError("boundary faces are not nested")
    owner = np.argmax(inside, axis=1)
    relx = x - ca[owner][:, None, :]
    sc = np.einsum("fqi,fi->fq", relx, d[owner]) / lc[owner][:, None] ** 2
    uc = _face_poly(coarse.u[owner][:, None, :], 2.0 * sc - 1.0,
                    lc[owner][:, None])
    # both controls are tangential components with the same outward frame
    return float(np.sqrt(np.einsum("q,fq,f->", rule.weights, (uc - uf) ** 2,
                                   0.5 * lf)))



# projection-based errors ---------------------------------------------------

def element_projection(mesh, func, degree, rule, ncomp):
    """
    L2 projection of ``func`` onto the scaled orthonormal element basis;
    returns coefficients of shape (nel, ncomp, dim).
    """
    x, det = _physical_points(mesh, rule)
    phi = TriangleBasis(degree).evaluate(rule.points)
    vals = _flatten_exact(func(x[..., 0], x[..., 1]), ncomp, x.shape[:2])
    return (np.einsum("q,ceq,qm->ecm", rule.weights, vals, phi)
            * np.sqrt(det)[:, None, None])


def control_projection(mesh, func, degree, points):
    """L2 projection of the exact control onto the boundary face basis."""
    rule = edge_quadrature(points)
    fb = mesh.boundary_faces
    t = rule.points[:, 0]
    psi = EdgeBasis(degree).evaluate(t)
    a = mesh.vertices[mesh.face_vertices[fb, 0]]
    b = mesh.vertices[mesh.face_vertices[fb, 1]]
    x = a[:, None, :] + (0.5 * (t + 1.0))[None, :, None] * (b - a)[:, None, :]
    tau = np.broadcast_to(mesh.face_tangents[fb][:, None, :], x.shape)
    u = func(x[..., 0], x[..., 1], tau)
    lengths = mesh.face_lengths[fb]
    return (np.einsum("q,fq,ql->fl", rule.weights, u, psi)
            * np.sqrt(0.5 * lengths)[:, None])


def projection_errors(solution, problem, space=None):
    """
    Errors ``||Pi w - w_h||`` between the L2 projection of each exact field
    onto its discrete space and the discrete field.

    With orthonormal bases this is the Euclidean norm of the coefficient
    difference.
    """
    mesh, k = solution.mesh, solution.k
    space = space or HDGSpace(k)
    rule = space.data_rule
    spec = {"L": (problem.velocity_gradient, k, 4),
            "G": (problem.adjoint_gradient, k, 4),
            "y": (problem.velocity, k + 1, 2),
            "z": (problem.adjoint, k + 1, 2),
            "p": (problem.pressure, k, 1),
            "q": (problem.dual_pressure, k, 1)}
    out = {}
    for name, (func, deg, nc) in spec.items():
        c = element_projection(mesh, func, deg, rule, nc)
        out[name] = float(np.linalg.norm(c - getattr(solution, name)
                                         .reshape(c.shape)))
    cu = control_projection(mesh, problem.control, k, k + 5)
    out["u"] = float(np.linalg.norm(cu - solution.u))
    return out

"""
Pseudo-time pressure iteration for the HDG optimality system.

Each sweep solves the condensed trace system with the pressure mass scaled
by ``1/dt`` and the previous pressures on the right-hand side. Because the
trace matrix never changes, it is factorized once; per sweep only the
element right-hand sides are rebuilt. The element data kept between sweeps
is the part of the condensation that acts on the pressures, which makes a
sweep cost one triangular solve plus a few small batched products.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .hdg_global import (assemble_full_system, assemble_trace_matrix,
                         build_dof_map, face_dof_order, gather,
                         scatter_solution,
                         solve_trace_system, TraceSystem, _scatter_add)
from .hdg_local import (HDGSpace, assemble_local_blocks, condense,
                        local_iteration_rhs, local_rhs_data, recover_fields)

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 2048
STABILIZATIONS = ("face", "hmax", "hmin")


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters of the pressure iteration.

    Attributes
    ----------
    k : int
        Polynomial degree, 0..3.
    gamma : float
        Control cost, > 0.
    dt : float
        Pseudo-time step, > 0.
    tol : float
        Stopping threshold on the summed relative pressure changes.
    max_iter : int
    stabilization : {"face", "hmax", "hmin"}
        Length used in the ``1/h`` penalty.
    """

    k: int = 1
    gamma: float = 1.0
    dt: float = 256.0
    tol: float = 1e-8
    max_iter: int = 200
    stabilization: str = "face"

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or not 0 <= self.k <= 3:
            raise ValueError("k must be an integer in 0..3")
        for name in ("gamma", "dt", "tol"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive finite number")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if self.stabilization not in STABILIZATIONS:
            raise ValueError("stabilization must be one of "
                             + ", ".join(STABILIZATIONS))

    @property
    def space(self):
        return HDGSpace(int(self.k), self.stabilization)


@dataclass
class IterationReport:
    """Convergence history of one solve."""

    iterations: int = 0
    converged: bool = False
    dp_rel: list = field(default_factory=list)
    dq_rel: list = field(default_factory=list)
    p_means: list = field(default_factory=list)
    q_means: list = field(default_factory=list)
    kkt: dict = None

    def log_csv(self):
        """Per-sweep log as CSV text with header ``m,dp_rel,dq_rel``."""
        lines = ["m,dp_rel,dq_rel"]
        for m, (a, b) in enumerate(zip(self.dp_rel, self.dq_rel), start=1):
            lines.append(f"{m},{a:.6e},{b:.6e}")
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class _PressureOperator:
    """
    Element data that maps (trace vector, previous pressures) to the new
    pressures, and previous pressures to the trace right-hand side.
    """

    elements: np.ndarray
    F3: np.ndarray       # (nb, 2nk, n_zeta)
    G3: np.ndarray       # (nb, 2nk, 2nk)
    J3_0: np.ndarray     # (nb, 2nk)
    r0: np.ndarray       # (nb, n_zeta)
    Rb: np.ndarray       # (nb, n_zeta, 2nk)


def _pressure_sensitivity(ce):
    """d J / d b2 for the stacked pressure data b2 = [p_prev; q_prev]/dt."""
    H = ce.G3
    J2 = -ce.G1 @ ce.B5 @ H
    J1 = -ce.B1inv_B2 @ J2
    return np.concatenate([J1, J2, H], axis=1)


def _data_scale(mesh, space, f, yd):
    """L2 norm of (f, y_d) over the domain, used by the absolute guards."""
    from .analysis.errors import function_l2_norm
    s = 0.0
    for func in (f, yd):
        if func is not None:
            s += function_l2_norm(mesh, func, space.data_rule) ** 2
    return float(np.sqrt(s))


def _relative_change(new, old, scale, tol):
    dn = float(np.linalg.norm(new - old))
    nn = float(np.linalg.norm(new))
    if nn > 0.0:
        return dn / nn
    # pressure-free iterate: absolute change against the data scale
    if dn == 0.0:
        return 0.0
    return dn / scale if scale > 0 else np.inf


def solve_control_problem(mesh, config, f=None, yd=None, chunk=DEFAULT_CHUNK,
                          callback=None):
    """
    Run the pressure iteration to a fixed point.

    Parameters
    ----------
    mesh : Mesh
    config : SolverConfig
    f, yd : callable or None
        Vector data ``func(x1, x2) -> (c1, c2)``; ``None`` means zero.
    chunk : int
        Elements processed per batch (memory bound).
    callback : callable, optional
        Called as ``callback(m, dp_rel, dq_rel)`` after every sweep.

    Returns
    -------
    DiscreteSolution, IterationReport
    """
    space = config.space
    dt = float(config.dt)
    dofmap = build_dof_map(mesh, space.k)
    nel, nk = mesh.num_elements, space.nk
    ops = []
    schur = []
    for start in range(0, nel, chunk):
        els = np.arange(start, min(start + chunk, nel))
        blocks = assemble_local_blocks(mesh, space, els, config.gamma, dt)
        ce = condense(blocks)
        b1 = local_rhs_data(blocks, f, yd)
        J0 = local_iteration_rhs(ce, b1, np.zeros(nk), np.zeros(nk), dt)
        dJ = _pressure_sensitivity(ce)
        nI0 = space.n_alpha + space.n_beta
        ops.append(_PressureOperator(
            els, ce.F3.copy(), ce.G3.copy(), J0[:, nI0:].copy(),
            -np.einsum("bij,bj->bi", ce.B_zeta, J0),
            -ce.B_zeta @ dJ))
        schur.append((els, ce.schur))
    system = TraceSystem(assemble_trace_matrix(dofmap, schur),
                         perm=face_dof_order(mesh, dofmap))
    del schur
    system.factorize()

    scale = _data_scale(mesh, space, f, yd)
    areas = np.sqrt(mesh.element_areas)
    p = np.zeros((nel, nk))
    q = np.zeros((nel, nk))
    report = IterationReport()
    zeta = np.zeros(dofmap.total)
    for m in range(1, int(config.max_iter) + 1):
        b2 = np.concatenate([p, q], axis=1) / dt
        rhs = np.zeros(dofmap.total)
        for op in ops:
            local = op.r0 + np.einsum("bij,bj->bi", op.Rb, b2[op.elements])
            rhs += _scatter_add(dofmap.local_to_global[op.elements], local,
                                rhs.size)
        zeta = solve_trace_system(system, rhs)
        p_new = np.empty_like(p)
        q_new = np.empty_like(q)
        for op in ops:
            zl = gather(dofmap, zeta, op.elements)
            g = (np.einsum("bij,bj->bi", op.F3, zl) + op.J3_0
                 + np.einsum("bij,bj->bi", op.G3, b2[op.elements]))
            p_new[op.elements] = g[:, :nk]
            q_new[op.elements] = g[:, nk:]
        dp = _relative_change(p_new, p, scale, config.tol)
        dq = _relative_change(q_new, q, scale, config.tol)
        p_old, q_old = p, q
        p, q = p_new, q_new
        report.dp_rel.append(dp)
        report.dq_rel.append(dq)
        report.p_means.append(float(areas @ p[:, 0]))
        report.q_means.append(float(areas @ q[:, 0]))
        report.iterations = m
        log.debug("%d,%.6e,%.6e", m, dp, dq)
        if callback is not None:
            callback(m, dp, dq)
        if dp + dq < config.tol:
            report.converged = True
            break
    del ops

    # recover all element unknowns from the last sweep, using the pressures
    # that entered it so the recovered pressures reproduce p, q
    interior = np.empty((nel, space.n_interior))
    p_prev, q_prev = p_old, q_old
    for start in range(0, nel, chunk):
        els = np.arange(start, min(start + chunk, nel))
        blocks = assemble_local_blocks(mesh, space, els, config.gamma, dt)
        ce = condense(blocks)
        b1 = local_rhs_data(blocks, f, yd)
        J = local_iteration_rhs(ce, b1, p_prev[els], q_prev[els], dt)
        interior[els] = recover_fields(ce, gather(dofmap, zeta, els), J)
    sol = scatter_solution(mesh, dofmap, zeta, interior)
    return sol, report


def kkt_residual(mesh, config, solution, f=None, yd=None):
    """
    Residuals of the stationary discrete optimality system.

    The system is assembled without the pseudo-time term and applied to
    the solution; residual norms are grouped by equation block.

    Returns
    -------
    dict
        ``state`` (flux, momentum, continuity and trace rows of the state
        equation), ``adjoint`` (the same for the adjoint), ``optimality``
        (control rows) and ``mean_p``, ``mean_q`` (domain means of the
        pressures).
    """
    space = config.space
    full = assemble_full_system(mesh, space, config.gamma, np.inf, f, yd)
    dofmap = full.dofmap
    x = full.join(solution.interior_vector(), solution.trace_vector(dofmap))
    r = full.matrix @ x - full.rhs
    ri, rz = full.split(r)
    s = space
    state_cols = np.r_[s.iL:s.iL + 4 * s.nk, s.iy:s.iy + 2 * s.nv,
                       s.ip:s.ip + s.nk]
    adj_cols = np.r_[s.iG:s.iG + 4 * s.nk, s.iz:s.iz + 2 * s.nv,
                     s.iq:s.iq + s.nk]
    ns = dofmap.n_state
    state = np.concatenate([ri[:, state_cols].ravel(), rz[:ns]])
    adjoint = np.concatenate([ri[:, adj_cols].ravel(), rz[ns:2 * ns]])
    pm, qm = solution.pressure_means()
    return {"state": float(np.linalg.norm(state)),
            "adjoint": float(np.linalg.norm(adjoint)),
            "optimality": float(np.linalg.norm(rz[2 * ns:])),
            "mean_p": abs(pm), "mean_q": abs(qm)}

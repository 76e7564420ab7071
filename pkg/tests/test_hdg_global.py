import numpy as np
import pytest

from hdgstokes.hdg_global import TraceSystem, assemble_full_system, \
    assemble_trace_system, build_dof_map, face_dof_order, gather, \
    scatter_solution, solve_trace_system
from hdgstokes.hdg_local import HDGSpace, assemble_local_blocks, condense, \
    local_iteration_rhs, local_rhs_data, recover_fields
from hdgstokes.mesh import build_square_mesh
from hdgstokes.analysis.problems import example1_forcing, example1_target
from oracles import dense_schur


def _condensed(mesh, k, gamma=1.0, dt=16.0):
    space = HDGSpace(k)
    blocks = assemble_local_blocks(mesh, space, gamma=gamma, dt=dt)
    return space, blocks, condense(blocks)


def test_dof_counts():
    assert build_dof_map(build_square_mesh(1), 0).total == 8
    d = build_dof_map(build_square_mesh(8), 1)
    # 176 interior faces x 2 fields x 2 components x 2 modes, 32 boundary
    # faces x 2 control modes
    assert d.n_state == 176 * 4
    assert d.n_control == 64
    assert d.total == 1472


def test_dof_count_enumeration():
    m = build_square_mesh(8)
    k = 1
    count = 0
    for f in range(m.num_faces):
        if m.face_right[f] >= 0:
            count += 2 * 2 * (k + 1)
        else:
            count += k + 1
    assert build_dof_map(m, k).total == count


def test_dof_ranges_partition():
    m = build_square_mesh(3)
    d = build_dof_map(m, 1)
    seen = []
    for f in m.interior_faces:
        seen.extend(d.state_range(f))
    for f in m.interior_faces:
        seen.extend(d.adjoint_range(f))
    for f in m.boundary_faces:
        seen.extend(d.control_range(f))
    assert seen == list(range(d.total))
    # interior slots carry no control, boundary slots no traces
    l2g = d.local_to_global.reshape(m.num_elements, 3, -1)
    bnd = m.is_boundary_face[m.element_faces]
    ne = 2
    assert np.all(l2g[bnd][:, :4 * ne] == -1)
    assert np.all(l2g[~bnd][:, 4 * ne:] == -1)


def test_dof_scaling_under_refinement():
    a = build_dof_map(build_square_mesh(8), 1)
    b = build_dof_map(build_square_mesh(16), 1)
    assert b.n_control == 2 * a.n_control
    assert 3.8 < b.n_state / a.n_state < 4.2


@pytest.mark.parametrize("k", [0, 1])
def test_trace_matrix_equals_dense_schur(k):
    m = build_square_mesh(2)
    space, _, ce = _condensed(m, k)
    d = build_dof_map(m, k)
    system = assemble_trace_system(d, [(np.arange(m.num_elements), ce)])
    full = assemble_full_system(m, space, 1.0, 16.0)
    S = dense_schur(full)
    A = system.matrix.toarray()
    assert A.shape == (d.total, d.total)
    assert np.abs(A - S).max() <= 1e-11 * np.abs(S).max()


def test_inconsistent_dimensions():
    m = build_square_mesh(2)
    _, _, ce = _condensed(m, 1)
    with pytest.raises(ValueError):
        assemble_trace_system(build_dof_map(m, 0),
                              [(np.arange(m.num_elements), ce)])


def test_zero_J_gives_zero_rhs():
    m = build_square_mesh(2)
    space, _, ce = _condensed(m, 1)
    d = build_dof_map(m, 1)
    J = np.zeros((m.num_elements, space.n_interior))
    s = assemble_trace_system(d, [(np.arange(m.num_elements), ce)], [J])
    assert np.all(s.rhs == 0.0)


@pytest.fixture(scope="module")
def system8():
    m = build_square_mesh(8)
    _, _, ce = _condensed(m, 1, dt=256.0)
    d = build_dof_map(m, 1)
    s = assemble_trace_system(d, [(np.arange(m.num_elements), ce)])
    s.perm = face_dof_order(m, d)
    return m, d, s


def test_trace_solve(system8):
    _, d, s = system8
    assert np.all(solve_trace_system(s, np.zeros(d.total)) == 0.0)
    rng = np.random.default_rng(1)
    b = rng.standard_normal(d.total)
    x = solve_trace_system(s, b)
    assert np.linalg.norm(s.matrix @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert np.array_equal(x, solve_trace_system(s, b))


def test_unpermuted_factorization_agrees(system8):
    _, d, s = system8
    plain = TraceSystem(s.matrix)
    b = np.random.default_rng(2).standard_normal(d.total)
    x1, x2 = solve_trace_system(s, b), solve_trace_system(plain, b)
    assert np.linalg.norm(x1 - x2) <= 1e-10 * np.linalg.norm(x2)


def test_face_order_is_permutation(system8):
    _, d, s = system8
    assert np.array_equal(np.sort(s.perm), np.arange(d.total))


def test_singular_matrix_rejected():
    import scipy.sparse as sp
    s = TraceSystem(sp.csc_matrix((3, 3)))
    with pytest.raises(np.linalg.LinAlgError):
        solve_trace_system(s, np.ones(3))


@pytest.mark.parametrize("k", [0, 1])
def test_condensed_solve_equals_full_solve(k):
    # one pressure sweep with random previous pressures
    m = build_square_mesh(2)
    dt = 32.0
    space, blocks, ce = _condensed(m, k, dt=dt)
    d = build_dof_map(m, k)
    rng = np.random.default_rng(5 + k)
    pp = rng.standard_normal((m.num_elements, space.nk))
    qq = rng.standard_normal((m.num_elements, space.nk))
    b1 = local_rhs_data(blocks, example1_forcing, example1_target)
    J = local_iteration_rhs(ce, b1, pp, qq, dt)
    els = np.arange(m.num_elements)
    s = assemble_trace_system(d, [(els, ce)], [J])
    zeta = solve_trace_system(s)
    interior = recover_fields(ce, gather(d, zeta), J)
    full = assemble_full_system(m, space, 1.0, dt, example1_forcing,
                                example1_target, pp, qq)
    x = np.linalg.solve(full.matrix.toarray(), full.rhs)
    xi, xz = full.split(x)
    assert np.linalg.norm(zeta - xz) <= 1e-9 * np.linalg.norm(xz)
    o = 0
    for width in (8 * space.nk, 4 * space.nv, 2 * space.nk):
        a, b = interior[:, o:o + width], xi[:, o:o + width]
        assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(b)
        o += width


def test_scatter_solution():
    m = build_square_mesh(2)
    d = build_dof_map(m, 1)
    space = HDGSpace(1)
    z = np.zeros(d.total)
    sol = scatter_solution(m, d, z, np.zeros((m.num_elements,
                                              space.n_interior)))
    for name in ("L", "G", "y", "z", "p", "q", "yhat", "zhat", "u"):
        assert np.all(getattr(sol, name) == 0.0)
    zeta = np.arange(d.total, dtype=float)
    sol = scatter_solution(m, d, zeta, np.zeros((m.num_elements,
                                                 space.n_interior)))
    assert np.all(sol.zhat[m.boundary_faces] == 0.0)
    assert np.array_equal(sol.trace_vector(d), zeta)
    # both neighbours of an interior face read the same coefficients
    local = gather(d, zeta).reshape(m.num_elements, 3, -1)
    for f in m.interior_faces:
        l, r = m.face_left[f], m.face_right[f]
        fl = list(m.element_faces[l]).index(f)
        fr = list(m.element_faces[r]).index(f)
        assert np.array_equal(local[l, fl], local[r, fr])

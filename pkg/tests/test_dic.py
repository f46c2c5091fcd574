import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from cfedic.dic import (
    ConvergenceError,
    DicConfig,
    SingularSystemError,
    SystemMatrices,
    assemble,
    assemble_matrix,
    assemble_rhs,
    build_models,
    load_solution,
    pcg,
    quadrature_fields,
    quadrature_points,
    run_dic,
    save_solution,
    solve,
)
from cfedic.mesh import ZoneOfInterest, build_connectivity, build_mesh
from cfedic.shapes import CfeParams, shape_table
from cfedic.synth import Sinusoid, Translation, generate_speckle, warp_render


@pytest.fixture(scope="module")
def pair():
    pattern, ref = generate_speckle((120, 120), radius_range=(2.0, 3.5), seed=7)
    deformed = warp_render(pattern, Translation(0.1, -0.05), 120, 120)
    return ref, deformed


ZOI = ZoneOfInterest(10, 10, 100, 100)


def spd(n, seed, cond=1e3):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q @ np.diag(np.geomspace(1, cond, n)) @ q.T


def test_quadrature_rule():
    pts, w = quadrature_points(4)
    assert w.sum() == pytest.approx(4.0)
    assert pts[1, 0] > pts[0, 0] and pts[1, 1] == pts[0, 1]  # xi fastest
    assert np.sum(w * pts[:, 0] * pts[:, 1]) == pytest.approx(0.0, abs=1e-15)
    # midpoint rule: exact for bilinear integrands, second order otherwise
    assert np.sum(w * pts[:, 0] ** 2) == pytest.approx(4 / 3 - 4 / (3 * 16), rel=1e-12)
    with pytest.raises(ValueError):
        quadrature_points(1)


def brute_force_system(conn, qf):
    """Element-by-element dense accumulation, one quadrature point at a time."""
    n = conn.n_nodes
    K = np.zeros((2 * n, 2 * n))
    Q = np.zeros(2 * n)
    h = conn.mesh.element_size
    for e in range(conn.mesh.n_elements):
        ids = conn.element_nodes(e)
        table = shape_table(conn.kind, conn.topology_of(e), qf.points)
        for q in range(len(qf.points)):
            N = np.zeros(2 * n)
            Nv = np.zeros(2 * n)
            N[ids] = table.values[q] * qf.fx[e, q]
            Nv[n + ids] = table.values[q] * qf.fy[e, q]
            row = N + Nv
            wj = qf.weights[q] * (h / 2) ** 2
            K += wj * np.outer(row, row)
            Q += wj * row * (qf.g[e, q] - qf.f[e, q])
    return K, Q


@pytest.mark.parametrize("kind", ["q4", "q8", CfeParams(2, 1, 8.0), CfeParams(2, 2, 8.0)])
def test_assembly_matches_brute_force(pair, kind):
    ref, deformed = pair
    mesh = build_mesh(ZoneOfInterest(20, 20, 30, 20), 10)
    conn = build_connectivity(mesh, kind)
    f, g = build_models(ref, deformed, DicConfig())
    qf = quadrature_fields(mesh, f, g, 4)
    K = assemble_matrix(conn, qf, threads=1).toarray()
    Q = assemble_rhs(conn, qf, qf.g - qf.f)
    Kb, Qb = brute_force_system(conn, qf)
    np.testing.assert_allclose(K, Kb, atol=1e-12 * np.abs(Kb).max())
    np.testing.assert_allclose(Q, Qb, atol=1e-12 * np.abs(Qb).max())


def test_assembly_symmetric_deterministic_threaded(pair):
    ref, deformed = pair
    mesh = build_mesh(ZOI, 20)
    conn = build_connectivity(mesh, CfeParams())
    f, g = build_models(ref, deformed, DicConfig())
    a = assemble(conn, f, g, 20, threads=1)
    b = assemble(conn, f, g, 20, threads=4)
    assert np.array_equal(a.Q, b.Q)
    diff = abs(a.K - b.K).max()
    assert diff <= 1e-13 * abs(a.K).max()
    assert abs(a.K - a.K.T).max() <= 1e-13 * abs(a.K).max()
    assert 0 < a.density <= 1


@given(st.integers(2, 40), st.integers(0, 10_000))
def test_pcg_matches_dense_solve(n, seed):
    A = spd(n, seed)
    b = np.random.default_rng(seed).normal(size=n)
    res = pcg(A, b, tol=1e-12)
    assert res.converged and res.residual <= 1e-12
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8 * np.linalg.norm(np.linalg.solve(A, b)))


def test_pcg_energy_error_decreases():
    """CG minimizes the A-norm of the error over growing Krylov spaces."""
    A = sp.csr_matrix(spd(60, 1, 1e4))
    b = np.random.default_rng(2).normal(size=60)
    xs = np.linalg.solve(A.toarray(), b)
    errs = []
    for k in range(1, 40):
        x = pcg(A, b, tol=0.0, max_iters=k).x
        errs.append(np.sqrt((x - xs) @ (A @ (x - xs))))
    assert np.all(np.diff(errs) <= 1e-10 * errs[0])


def test_pcg_edge_cases():
    A = spd(5, 0)
    res = pcg(A, np.zeros(5))
    assert res.iterations == 0 and np.all(res.x == 0)
    with pytest.raises(SingularSystemError):
        pcg(np.diag([1.0, 0.0, 1.0]), np.ones(3))
    with pytest.raises(SingularSystemError):
        pcg(np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([1.0, -1.0]))
    with pytest.raises(ConvergenceError) as info:
        solve(SystemMatrices(sp.csc_matrix(spd(30, 3, 1e6)), np.ones(30)), tol=1e-14, max_iters=2)
    assert len(info.value.history) == 3


def test_zero_deformation_gives_zero(pair):
    ref, _ = pair
    for element in ("q4", "cfe"):
        sol = run_dic(ref, ref.copy(), ZOI, DicConfig(element=element, element_size=20))
        assert np.max(np.abs(sol.U)) < 1e-8


# Q8 at equal h carries ~3x the unknowns and picks up more image-model noise
@pytest.mark.parametrize("element,tol", [("q4", 5e-3), ("q8", 1e-2), ("cfe", 5e-3)])
def test_translation_recovered(pair, element, tol):
    ref, deformed = pair
    sol = run_dic(ref, deformed, ZOI, DicConfig(element=element, element_size=20))
    assert sol.residual <= 1e-5
    assert np.sqrt(np.mean((sol.u - 0.1) ** 2)) < tol
    assert np.sqrt(np.mean((sol.v + 0.05) ** 2)) < tol


def test_refinement_reduces_linearization_error():
    pattern, ref = generate_speckle((120, 120), radius_range=(2.0, 3.5), seed=7)
    deformed = warp_render(pattern, Translation(0.6, 0.0), 120, 120)
    one = run_dic(ref, deformed, ZOI, DicConfig(element="q4", element_size=20))
    three = run_dic(ref, deformed, ZOI, DicConfig(element="q4", element_size=20, refinement_iters=3))
    e1 = np.sqrt(np.mean((one.u - 0.6) ** 2))
    e3 = np.sqrt(np.mean((three.u - 0.6) ** 2))
    assert e3 < 0.5 * e1
    assert len(three.iterations) == 3


def test_swapping_images_flips_sign():
    pattern, ref = generate_speckle((120, 120), radius_range=(2.0, 3.5), seed=8)
    deformed = warp_render(pattern, Sinusoid(0.05, 0.05), 120, 120)
    fwd = run_dic(ref, deformed, ZOI, DicConfig(element_size=20))
    back = run_dic(deformed, ref, ZOI, DicConfig(element_size=20))
    # first-order theory: the inverse map is -u up to O(|u| |grad u|) and image model error
    assert np.max(np.abs(fwd.U + back.U)) < 0.1 * np.max(np.abs(fwd.U))


def test_small_system_matches_dense():
    pattern, ref = generate_speckle((60, 60), radius_range=(2.0, 3.5), seed=9)
    deformed = warp_render(pattern, Sinusoid(0.05, 0.1), 60, 60)
    zoi = ZoneOfInterest(9, 9, 40, 40)
    cfg = DicConfig(element_size=20)
    conn = build_connectivity(build_mesh(zoi, 20), cfg.element_kind)
    f, g = build_models(ref, deformed, cfg)
    system = assemble(conn, f, g, 20)
    dense = np.linalg.solve(system.K.toarray(), -system.Q)
    sol = run_dic(ref, deformed, zoi, DicConfig(element_size=20, solver_tol=1e-12))
    np.testing.assert_allclose(sol.U, dense, atol=1e-8)


def test_blank_image_is_singular():
    img = np.full((60, 60), 0.5)
    with pytest.raises(SingularSystemError):
        run_dic(img, img, ZoneOfInterest(10, 10, 40, 40), DicConfig(element="q4", element_size=20))


def test_config_validation():
    with pytest.raises(ValueError):
        DicConfig(element="q9")
    with pytest.raises(ValueError):
        DicConfig(solver_tol=0)
    with pytest.raises(ValueError):
        DicConfig(dilation=-1)
    assert DicConfig(element_size=12).n_quad == 12
    assert DicConfig().element_kind == CfeParams(2, 2, 8.0)


def test_size_mismatch_and_zoi(pair):
    ref, _ = pair
    with pytest.raises(ValueError):
        run_dic(ref, ref[:-1], ZOI)
    with pytest.raises(ValueError):
        run_dic(ref, ref, ZoneOfInterest(30, 30, 100, 100))


def test_solution_roundtrip(tmp_path, pair):
    ref, deformed = pair
    sol = run_dic(ref, deformed, ZOI, DicConfig(element_size=20))
    save_solution(sol, tmp_path / "s.npz")
    back = load_solution(tmp_path / "s.npz")
    assert np.array_equal(back.U, sol.U)
    assert back.config == sol.config
    assert back.mesh == sol.mesh

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from ppumkit import cover as cov
from ppumkit.cli import brute_force_membership, sample_points
from ppumkit.mesh import build_mesh
from ppumkit.problems import make_domain


def path_graph(n):
    A = sp.diags([np.ones(n - 1), np.ones(n - 1)], [-1, 1])
    return cov.laplacian(A)


def strip4():
    # dual graph is the path t1 - t0 - t3 - t2
    verts = [((0, 0), 1), ((1, 0), 1), ((2, 0), 1), ((0, 1), 1), ((1, 1), 1), ((2, 1), 1)]
    return build_mesh(verts, [(0, 1, 4), (0, 4, 3), (1, 2, 5), (1, 5, 4)])


def two_islands():
    verts = [((0, 0), 1), ((1, 0), 1), ((1, 1), 1), ((0, 1), 1),
             ((5, 0), 1), ((6, 0), 1), ((6, 1), 1), ((5, 1), 1)]
    return build_mesh(verts, [(0, 1, 2), (0, 2, 3), (4, 5, 6), (4, 6, 7)])


def connected_parts(mesh, part):
    adj = cov.dual_graph(mesh)
    for i in range(part.p):
        rows = np.flatnonzero(part.subdomain == i)
        nc, _ = cov._components(adj, rows)
        if nc != 1:
            return False
    return True


# ----------------------------------------------------------------------
# Fiedler vector


def test_fiedler_path4():
    lam, v = cov.fiedler_vector(path_graph(4), return_value=True)
    assert lam == pytest.approx(2 - np.sqrt(2), abs=1e-10)
    assert np.all(np.diff(v) < 0) or np.all(np.diff(v) > 0)
    assert v[0] > 0  # sign convention
    assert abs(v.sum()) < 1e-12


def test_fiedler_complete4():
    A = np.ones((4, 4)) - np.eye(4)
    lam, v = cov.fiedler_vector(cov.laplacian(A), return_value=True)
    assert lam == pytest.approx(4.0, abs=1e-10)
    assert abs(v @ np.ones(4)) < 1e-10


def test_fiedler_single_node():
    with pytest.raises(cov.EigenNoConvergence):
        cov.fiedler_vector(sp.csr_matrix((1, 1)))


def test_fiedler_sparse_path_matches_dense():
    mesh = make_domain("unit_square", 9)  # 2048 simplices, shift-invert branch
    L = cov.laplacian(cov.dual_graph(mesh))
    lam, v = cov.fiedler_vector(L, return_value=True)
    w = np.linalg.eigvalsh(L.toarray())
    assert lam == pytest.approx(w[1], rel=1e-8)
    assert np.linalg.norm(L @ v - lam * v) < 1e-6
    assert abs(v.sum()) < 1e-8


# ----------------------------------------------------------------------
# partitioners


def test_spectral_path_splits_in_the_middle():
    mesh = strip4()
    part = cov.partition(mesh, np.ones(4), 2, "spectral")
    # path order t1, t0, t3, t2
    assert part.subdomain[1] == part.subdomain[0]
    assert part.subdomain[3] == part.subdomain[2]
    assert part.subdomain[0] != part.subdomain[3]
    assert cov.cut_size(mesh, part) == 1


def test_spectral_separates_components():
    mesh = two_islands()
    part = cov.partition(mesh, np.ones(4), 2, "spectral")
    assert part.subdomain[0] == part.subdomain[1]
    assert part.subdomain[2] == part.subdomain[3]
    assert part.subdomain[0] != part.subdomain[2]
    assert cov.cut_size(mesh, part) == 0


def test_spectral_falls_back_to_inertial(monkeypatch):
    def broken(*a, **k):
        raise cov.EigenNoConvergence("forced")
    monkeypatch.setattr(cov, "fiedler_vector", broken)
    mesh = make_domain("unit_square", 4)
    part = cov.partition(mesh, np.ones(mesh.n_live), 4, "spectral")
    ref = cov.partition(mesh, np.ones(mesh.n_live), 4, "inertial")
    assert any("EigenNoConvergence" in w for w in part.warnings)
    np.testing.assert_array_equal(part.subdomain, ref.subdomain)


def best_axis_split_diff(mesh):
    """Brute force: smallest count difference over all x- and y-threshold splits."""
    c = mesh.points[mesh.triangles].mean(axis=1)
    n = len(c)
    best = n
    for d in range(2):
        for t in np.unique(c[:, d]):
            k = int(np.count_nonzero(c[:, d] <= t))
            best = min(best, abs(n - 2 * k))
    return best


@pytest.mark.parametrize("ir", [2, 3, 4, 5])
def test_inertial_p2_balance(ir):
    mesh = make_domain("unit_square", ir)
    part = cov.partition(mesh, np.ones(mesh.n_live), 2, "inertial")
    n0, n1 = np.bincount(part.subdomain, minlength=2)
    assert abs(n0 - n1) <= max(1, best_axis_split_diff(mesh))
    assert connected_parts(mesh, part)


@pytest.mark.parametrize("method", ["inertial", "spectral"])
def test_p1_is_everything(method, square8):
    part = cov.partition(square8, np.ones(8), 1, method)
    assert np.all(part.subdomain == 0)
    assert part.imbalance() == 1.0


@pytest.mark.parametrize("method", ["inertial", "spectral"])
def test_bad_arguments(method, square8):
    with pytest.raises(ValueError):
        cov.partition(square8, np.ones(8), 3, method)
    with pytest.raises(cov.TooFewSimplices):
        cov.partition(square8, np.ones(8), 16, method)
    with pytest.raises(ValueError):
        cov.partition(square8, -np.ones(8), 2, method)
    with pytest.raises(ValueError):
        cov.partition(square8, np.zeros(8), 2, method)
    with pytest.raises(ValueError):
        cov.partition(square8, np.ones(7), 2, method)


def test_unknown_method(square8):
    with pytest.raises(ValueError):
        cov.partition(square8, np.ones(8), 2, "metis")


@pytest.mark.parametrize("method", ["inertial", "spectral"])
def test_single_heavy_simplex(method):
    mesh = make_domain("unit_square", 4)
    w = np.zeros(mesh.n_live)
    w[5] = 1.0
    part = cov.partition(mesh, w, 2, method)
    pw = part.part_weights()
    assert pw[part.subdomain[5]] == 1.0
    assert sorted(pw.tolist()) == [0.0, 1.0]
    assert np.all(np.bincount(part.subdomain, minlength=2) > 0)


def test_inertial_cuts_across_long_axis():
    rect = build_mesh([((0, 0), 1), ((2, 0), 1), ((2, 1), 1), ((0, 1), 1)],
                      [(0, 1, 2), (0, 2, 3)]).refine_uniform(6)
    part = cov.partition(rect, np.ones(rect.n_live), 2, "inertial")
    c = rect.points[rect.triangles].mean(axis=1)
    left = part.subdomain[np.argmin(c[:, 0])]
    assert np.all(c[part.subdomain == left, 0] < 1.0)
    assert np.all(c[part.subdomain != left, 0] > 1.0)


@pytest.mark.parametrize("method", ["inertial", "spectral"])
def test_corner_weights(method):
    mesh = make_domain("unit_square", 8)
    c = mesh.points[mesh.triangles].mean(axis=1)
    r = np.hypot(c[:, 0], c[:, 1])
    part = cov.partition(mesh, np.exp(-8 * r), 4, method)
    corner = part.subdomain[np.argmin(r)]
    counts = np.bincount(part.subdomain, minlength=4)
    pw = part.part_weights()
    assert counts[corner] < mesh.n_live / 4
    assert pw[corner] >= pw.mean() / 1.2


@pytest.mark.parametrize("method", ["inertial", "spectral"])
@pytest.mark.parametrize("p", [2, 4, 8])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_imbalance_and_connectivity(method, p, seed):
    mesh = make_domain("unit_square", 8)
    assert mesh.n_live >= 32 * p
    w = np.random.default_rng(seed).uniform(0.5, 1.5, mesh.n_live)
    part = cov.partition(mesh, w, p, method)
    assert part.imbalance() <= 1.2
    assert connected_parts(mesh, part)
    assert set(part.subdomain.tolist()) == set(range(p))


@pytest.mark.parametrize("method", ["inertial", "spectral"])
def test_partition_deterministic(method):
    mesh = make_domain("l_shape", 5)
    w = np.random.default_rng(3).random(mesh.n_live) + 0.1
    a = cov.partition(mesh, w, 4, method)
    b = cov.partition(mesh.copy(), w.copy(), 4, method)
    np.testing.assert_array_equal(a.subdomain, b.subdomain)


def test_spectral_vs_inertial_cut_recorded(record_property):
    mesh = make_domain("unit_square", 6)
    w = np.ones(mesh.n_live)
    cuts = {m: cov.cut_size(mesh, cov.partition(mesh, w, 4, m)) for m in ("spectral", "inertial")}
    record_property("cuts", cuts)
    # informational; both must at least be valid partitions
    assert all(c > 0 for c in cuts.values())


# ----------------------------------------------------------------------
# overlap


def test_diagonal_split_layer1_covers_everything(square8):
    part = cov.partition(square8, np.ones(8), 2, "inertial")
    c = cov.extend_overlap(square8, part, 1)
    assert c.member.all()
    assert c.counts().max() == 2


def test_p1_cover(square8):
    part = cov.partition(square8, np.ones(8), 1)
    c = cov.extend_overlap(square8, part, 2)
    assert c.member.all() and np.all(c.owner == 0)


def test_layers_must_be_positive(square8):
    part = cov.partition(square8, np.ones(8), 2)
    with pytest.raises(ValueError):
        cov.extend_overlap(square8, part, 0)


@pytest.mark.parametrize("layers", [1, 2, 3])
@pytest.mark.parametrize("p", [2, 4])
def test_overlap_matches_brute_force(layers, p):
    mesh = make_domain("l_shape", 4)
    part = cov.partition(mesh, np.ones(mesh.n_live), p, "spectral")
    c = cov.extend_overlap(mesh, part, layers)
    np.testing.assert_array_equal(c.member, brute_force_membership(mesh, part, layers))


def test_owner_is_smallest_incident_part():
    mesh = make_domain("unit_square", 5)
    part = cov.partition(mesh, np.ones(mesh.n_live), 4)
    c = cov.extend_overlap(mesh, part, 1)
    T = mesh.triangles
    for v in range(mesh.n_vertices):
        rows = np.flatnonzero((T == v).any(axis=1))
        assert c.owner[v] == part.subdomain[rows].min()


@given(p=st.sampled_from([2, 4, 8]), seed=st.integers(0, 10_000),
       layers=st.integers(1, 3))
def test_layers_monotone(p, seed, layers):
    mesh = make_domain("unit_square", 5)
    w = np.random.default_rng(seed).uniform(0.1, 1.0, mesh.n_live)
    part = cov.partition(mesh, w, p)
    a = cov.extend_overlap(mesh, part, layers)
    b = cov.extend_overlap(mesh, part, layers + 1)
    assert np.all(b.member >= a.member)
    assert np.all(a.member[part.subdomain, np.arange(mesh.n_live)])


# ----------------------------------------------------------------------
# partition of unity


def element_gradient(P):
    """Gradient of the linear interpolant of values at the 3 rows of ``P``, as a 3x2 map."""
    M = np.column_stack([np.ones(3), P])
    return np.linalg.inv(M)[1:].T  # row k: gradient of the k-th hat


@pytest.mark.parametrize("p,layers", [(1, 1), (2, 1), (4, 1), (4, 2), (8, 1)])
def test_pu_certification(p, layers):
    mesh = make_domain("l_shape", 5)
    part = cov.partition(mesh, np.ones(mesh.n_live), p, "inertial")
    c = cov.extend_overlap(mesh, part, layers)
    pu = cov.build_pu(mesh, c)
    rep = pu.report
    np.testing.assert_array_equal(pu.coefficients.sum(axis=0), 1.0)
    assert rep.sum_residual <= 1e-12
    pts = sample_points(mesh, 1000, seed=p)
    assert cov.pu_sum_residual(pu, pts) <= 1e-12
    assert rep.M == c.counts().max()
    assert rep.C_inf == 1.0
    # C_G by an independent per-element computation
    P, T = mesh.points, mesh.triangles
    cg = 0.0
    for i in range(p):
        for t in T:
            g = pu.coefficients[i][t] @ element_gradient(P[t])
            cg = max(cg, float(np.hypot(*g)))
    assert rep.C_G == pytest.approx(cg, rel=1e-10, abs=1e-12)
    if p == 1:
        assert rep.M == 1 and rep.C_G == 0.0


def test_pu_support_inside_patch():
    mesh = make_domain("unit_square", 6)
    part = cov.partition(mesh, np.ones(mesh.n_live), 4)
    c = cov.extend_overlap(mesh, part, 1)
    pu = cov.build_pu(mesh, c)
    T = mesh.triangles
    for i in range(4):
        nonzero = (pu.coefficients[i][T] != 0).any(axis=1)
        assert np.all(c.member[i][nonzero])


def test_pu_support_violation_detected():
    mesh = make_domain("unit_square", 5)
    part = cov.partition(mesh, np.ones(mesh.n_live), 2)
    c = cov.extend_overlap(mesh, part, 1)
    # shrink patch 0 back to its disjoint part: owned boundary vertices now leak
    c.member[0] = part.subdomain == 0
    c.member[1] = True
    with pytest.raises(cov.SupportViolation):
        cov.build_pu(mesh, c)


def test_pu_evaluate_matches_function():
    mesh = make_domain("unit_square", 4)
    part = cov.partition(mesh, np.ones(mesh.n_live), 4)
    pu = cov.build_pu(mesh, cov.extend_overlap(mesh, part, 1))
    x = np.array([0.3, 0.6])
    vals, grads = pu.evaluate(x)
    assert vals.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(grads.sum(axis=0), 0.0, atol=1e-10)


# ----------------------------------------------------------------------
# bounded-overlap inequalities


@pytest.mark.parametrize("p,layers", [(2, 1), (4, 1), (4, 2), (8, 1)])
def test_overlap_lemma_holds(p, layers):
    mesh = make_domain("unit_square", 5)
    part = cov.partition(mesh, np.ones(mesh.n_live), p, "spectral")
    c = cov.extend_overlap(mesh, part, layers)
    M = int(c.counts().max())
    out = cov.overlap_lemma_check(mesh, c, M, n_samples=30)
    assert out["first_violations"] == 0
    assert out["second_violations"] == 0
    assert out["first_worst"] <= M


def test_overlap_lemma_detects_too_small_M():
    mesh = make_domain("unit_square", 5)
    part = cov.partition(mesh, np.ones(mesh.n_live), 2)
    c = cov.extend_overlap(mesh, part, 3)
    out = cov.overlap_lemma_check(mesh, c, 1, n_samples=10)
    assert out["first_violations"] > 0

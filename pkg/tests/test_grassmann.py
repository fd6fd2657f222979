import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biorthcurv import grassmann as gr
from biorthcurv.grassmann import DomainError, EmptyFeasibleSet, TwoPlane

E = np.eye(5)
BASE = "p"


def plane(u, v, g=None, base=BASE, tag="g"):
    return TwoPlane.span(base, u, v, np.eye(len(u)) if g is None else g, tag)


def const_one(U, V):
    """Curvature tensor of constant curvature 1 for the Euclidean inner product."""
    U, V = np.atleast_2d(U), np.atleast_2d(V)
    return np.ones(len(U))


def quadratic_sec(D):
    """sec of the diagonal curvature operator R = D on bivectors e_i ^ e_j (exact, no optimisation)."""

    def sec(U, V):
        U, V = np.atleast_2d(U), np.atleast_2d(V)
        W = np.einsum("mi,mj->mij", U, V) - np.einsum("mj,mi->mij", U, V)
        num = 0.5 * np.einsum("mij,ij,mij->m", W, D, W)
        den = np.sum(U * U, 1) * np.sum(V * V, 1) - np.sum(U * V, 1) ** 2
        return num / den

    return sec


def random_metric(rng, n=5):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def test_plane_distance_examples():
    a = plane(E[0], E[1])
    assert gr.plane_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert gr.plane_distance(a, plane(E[2], E[3])) == pytest.approx(np.sqrt(2) * np.pi / 2, abs=1e-12)
    assert gr.plane_distance(a, plane(E[0], E[2])) == pytest.approx(np.pi / 2, abs=1e-12)


def test_plane_distance_base_and_tag_checks():
    with pytest.raises(DomainError):
        gr.plane_distance(plane(E[0], E[1]), plane(E[0], E[1], base="q"))
    with pytest.raises(DomainError):
        gr.plane_distance(plane(E[0], E[1]), plane(E[0], E[1], tag="h"))
    a = TwoPlane.span(np.zeros(3), E[0], E[1], np.eye(5))
    b = TwoPlane.span(np.ones(3), E[0], E[1], np.eye(5))
    with pytest.raises(DomainError):
        gr.plane_distance(a, b)


def test_twoplane_invariants():
    with pytest.raises(ValueError):
        TwoPlane(BASE, E[0], 2 * E[1], np.eye(5))
    with pytest.raises(DomainError):
        TwoPlane.span(BASE, E[0], 3 * E[0], np.eye(5))
    g = random_metric(np.random.default_rng(0))
    p = TwoPlane.span(BASE, E[0] + E[3], E[1] - E[4], g)
    F = p.frame()
    assert np.allclose(F.T @ g @ F, np.eye(2), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_plane_distance_metric_axioms_and_reframing(seed):
    rng = np.random.default_rng(seed)
    g = random_metric(rng)
    a, b, c = (TwoPlane.span(BASE, *rng.normal(size=(2, 5)), g) for _ in range(3))
    dab, dba = gr.plane_distance(a, b), gr.plane_distance(b, a)
    assert dab == pytest.approx(dba, abs=1e-12)
    assert dab <= gr.plane_distance(a, c) + gr.plane_distance(c, b) + 1e-12
    assert 0.0 <= dab <= gr.GRASS_DIAMETER_2PLANES + 1e-12
    t1, t2 = rng.uniform(0, 2 * np.pi, 2)
    assert abs(gr.plane_distance(a.reframed(t1), b.reframed(t2)) - dab) <= 1e-10
    assert gr.plane_distance(a, a.reframed(t1)) <= 1e-7


def test_plane_distance_small_angles_accurate():
    a = plane(E[0], E[1])
    for eps in (1e-3, 1e-6, 1e-9):
        b = plane(E[0], np.cos(eps) * E[1] + np.sin(eps) * E[2])
        assert gr.plane_distance(a, b) == pytest.approx(eps, rel=1e-6)


def test_complement_planes_lie_in_complement():
    sigma = plane(E[0], E[1])
    planes = list(gr.orthogonal_complement_planes(sigma, 100))
    assert len(planes) == 100
    for p in planes:
        F = p.frame()
        assert np.max(np.abs(F[:2])) <= 1e-10
        assert np.allclose(F.T @ F, np.eye(2), atol=1e-10)


def test_complement_planes_in_nonstandard_metric():
    rng = np.random.default_rng(4)
    g = random_metric(rng)
    sigma = TwoPlane.span(BASE, *rng.normal(size=(2, 5)), g)
    S = sigma.frame()
    for p in gr.orthogonal_complement_planes(sigma, 30):
        assert np.max(np.abs(S.T @ g @ p.frame())) <= 1e-10


def test_complement_sample_covers_family():
    sigma = plane(E[0], E[1])
    sample = np.array([np.stack([p.u, p.v], 1)[2:] for p in gr.orthogonal_complement_planes(sigma, 100)])
    # dense oracle: planes of R^3 parametrised by their normal lines
    rng = np.random.default_rng(0)
    dense = rng.normal(size=(10_000, 3))
    dense /= np.linalg.norm(dense, axis=1, keepdims=True)
    sample_normals = np.cross(sample[:, :, 0], sample[:, :, 1])
    ang = np.arccos(np.clip(np.abs(dense @ sample_normals.T), 0, 1))
    # two planes in R^3 share a line, so their distance is the angle between normals
    assert ang.min(axis=1).max() <= 0.35


def test_biorthogonal_constant_curvature_is_one():
    rng = np.random.default_rng(2)
    for _ in range(3):
        sigma = plane(*rng.normal(size=(2, 5)))
        res = gr.biorthogonal_curvature(BASE, sigma, const_one, grid=256)
        assert res.value == pytest.approx(1.0, abs=1e-12)
        assert res.converged


def test_biorthogonal_upper_bounded_by_feasible_plane_and_grid():
    rng = np.random.default_rng(5)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    sec = quadratic_sec(D)
    sigma = plane(*rng.normal(size=(2, 5)))
    res = gr.biorthogonal_curvature(BASE, sigma, sec, grid=1024)
    s0 = sec(sigma.u, sigma.v)[0]
    for p in gr.orthogonal_complement_planes(sigma, 50):
        assert res.value <= 0.5 * (s0 + sec(p.u, p.v)[0]) + 1e-12
    cert = res.certificate
    assert cert["refined_min_sec"] <= cert["grid_min_sec"] + 1e-14
    assert cert["grid_min_sec"] <= cert["refined_min_sec"] + cert["gap_bound"]
    # the returned plane is feasible and realises the value
    F = res.sigma_prime.frame()
    assert np.max(np.abs(sigma.frame().T @ F)) < 1e-10
    assert 0.5 * (s0 + sec(res.sigma_prime.u, res.sigma_prime.v)[0]) == pytest.approx(res.value, abs=1e-12)


def test_biorthogonal_matches_dense_oracle():
    rng = np.random.default_rng(6)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    sec = quadratic_sec(D)
    sigma = plane(E[0], E[1])
    res = gr.biorthogonal_curvature(BASE, sigma, sec, grid=512)
    # dense random oracle over planes of span{e3, e4, e5}
    n = rng.normal(size=(200_000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    a = np.cross(n, np.eye(3)[np.argmin(np.abs(n), axis=1)])
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(n, a)
    U = np.zeros((len(n), 5))
    V = np.zeros((len(n), 5))
    U[:, 2:], V[:, 2:] = a, b
    oracle = 0.5 * (sec(E[0], E[1])[0] + sec(U, V).min())
    assert res.value <= oracle + 1e-12
    assert res.value >= oracle - 1e-4


def test_biorthogonal_invariant_under_reframing():
    rng = np.random.default_rng(8)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    sec = quadratic_sec(D)
    sigma = plane(*rng.normal(size=(2, 5)))
    v0 = gr.biorthogonal_curvature(BASE, sigma, sec, grid=1024).value
    for t in (0.3, 1.7):
        assert gr.biorthogonal_curvature(BASE, sigma.reframed(t), sec, grid=1024).value == pytest.approx(v0, abs=1e-10)


def test_distance_curvature_constant_and_errors():
    sigma = plane(E[0], E[1])
    for theta in (0.1, 1.0, 2.0):
        assert gr.distance_curvature(BASE, sigma, theta, const_one, grid=256).value == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EmptyFeasibleSet):
        gr.distance_curvature(BASE, sigma, 2.3, const_one)
    with pytest.raises(DomainError):
        gr.distance_curvature(BASE, sigma, 0.0, const_one)


def test_distance_curvature_monotone_and_below_biorthogonal():
    rng = np.random.default_rng(9)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    sec = quadratic_sec(D)
    sigma = plane(*rng.normal(size=(2, 5)))
    thetas = [0.2, 0.6, 1.0, 1.4, 2.0]
    vals = [gr.distance_curvature(BASE, sigma, t, sec, grid=2048).value for t in thetas]
    assert all(a <= b + 1e-9 for a, b in zip(vals, vals[1:]))
    bio = gr.biorthogonal_curvature(BASE, sigma, sec, grid=1024).value
    # every plane of the complement sits at distance sqrt(2) pi / 2 from sigma
    assert gr.distance_curvature(BASE, sigma, 2.0, sec, grid=2048).value <= bio + 1e-9


def test_distance_curvature_invariant_under_reframing():
    rng = np.random.default_rng(10)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    sec = quadratic_sec(D)
    sigma = plane(*rng.normal(size=(2, 5)))
    v0 = gr.distance_curvature(BASE, sigma, 0.8, sec, grid=1024).value
    v1 = gr.distance_curvature(BASE, sigma.reframed(0.9), 0.8, sec, grid=1024).value
    assert v1 == pytest.approx(v0, abs=1e-8)


def test_pair_min_feasible_and_bounded_by_lattice():
    rng = np.random.default_rng(11)
    D = rng.normal(size=(5, 5))
    D = D + D.T
    # orthonormal-frame curvature tensor of the operator D
    R = np.zeros((5,) * 4)
    for i in range(5):
        for j in range(5):
            if i != j:
                R[i, j, j, i] = D[i, j]
                R[i, j, i, j] = -D[i, j]
    res = gr.pair_min(R, 0.5, n_planes=300, n_low=60, refine=3)
    A, B = res.frames
    assert gr.grass_distance_orthonormal(A, B) >= 0.5 - 1e-9
    lat = gr.grassmann_lattice(300, 5)
    vals = gr.sec_orthonormal(R, lat)
    Dm = gr.grass_distance_orthonormal(lat[:, None], lat[None])
    F = np.where(Dm >= 0.5, 0.5 * (vals[:, None] + vals[None]), np.inf)
    assert res.value <= F.min() + 1e-12


def test_lattices_are_deterministic_and_orthonormal():
    L1, L2 = gr.grassmann_lattice(50, 5), gr.grassmann_lattice(50, 5)
    assert L1 is L2
    assert np.allclose(np.swapaxes(L1, 1, 2) @ L1, np.eye(2), atol=1e-12)
    h = gr.fibonacci_hemisphere(64)
    assert np.all(h[:, 2] >= 0) and np.allclose(np.linalg.norm(h, axis=1), 1)

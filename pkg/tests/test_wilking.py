import numpy as np
import pytest

from biorthcurv import algebra as alg
from biorthcurv import engines as en
from biorthcurv import wilking as wk
from biorthcurv.algebra import AlgVec, GroupElem, qmul
from biorthcurv.wilking import BASE_POINT, DoubleCosetRep, S2xS3Point

rng0 = np.random.default_rng(0)


def rand_g(rng):
    return GroupElem("Sp1xSp1", alg.random_unit_quaternions(rng, 2))


def close_points(x, y, tol=1e-12):
    return np.max(np.abs(x.as_array() - y.as_array())) <= tol


def pushforward_fd(rep, w, h=1e-5):
    """Ambient derivative of coset_to_point along (a exp(s w_a), b exp(s w_b)), central differences."""

    def at(s):
        a = rep.a @ alg.exp_elem(AlgVec("sp1_plus_sp1", w[:6]), s)
        b = rep.b @ alg.exp_elem(AlgVec("sp1_plus_sp1", w[6:]), s)
        return wk.coset_to_point(DoubleCosetRep(a, b)).as_array()

    return (at(h) - at(-h)) / (2 * h)


def test_point_invariants():
    with pytest.raises(wk.NotOnManifold):
        S2xS3Point([1, 0, 0, 0], [1, 0, 0, 0])
    with pytest.raises(wk.NotOnManifold):
        S2xS3Point([2, 0, 0, 0], [0, 1, 0, 0])
    with pytest.raises(ValueError):
        wk.act([1, 1, 0, 0], [1, 0, 0, 0], BASE_POINT)


def test_action_identity_isotropy_and_composition():
    rng = np.random.default_rng(1)
    assert close_points(wk.act(wk.ONE, wk.ONE, BASE_POINT), BASE_POINT)
    for phi in np.linspace(0, 2 * np.pi, 9):
        q = np.array([np.cos(phi), np.sin(phi), 0, 0])
        assert close_points(wk.act(q, q, BASE_POINT), BASE_POINT)
    for x in wk.random_points(rng, 20):
        g1, g2, h1, h2 = alg.random_unit_quaternions(rng, 4)
        lhs = wk.act(g1, g2, wk.act(h1, h2, x))
        rhs = wk.act(qmul(g1, h1), qmul(g2, h2), x)
        assert close_points(lhs, rhs)


def test_transitivity_by_explicit_solve():
    rng = np.random.default_rng(2)
    for x in wk.random_points(rng, 50):
        rep = wk.point_to_rep(x)
        assert close_points(wk.coset_to_point(rep), x, 1e-10)


def test_coset_to_point_well_defined():
    rng = np.random.default_rng(3)
    e = alg.identity("Sp1xSp1")
    assert close_points(wk.coset_to_point(DoubleCosetRep(e, e)), BASE_POINT)
    for _ in range(30):
        a, b, g = rand_g(rng), rand_g(rng), rand_g(rng)
        x = wk.coset_to_point(DoubleCosetRep(a, b))
        assert close_points(wk.coset_to_point(DoubleCosetRep(g @ a, g @ b)), x)
        phi = rng.uniform(0, 2 * np.pi)
        q = np.array([np.cos(phi), np.sin(phi), 0, 0])
        h = GroupElem("Sp1xSp1", np.stack([q, q]))
        assert close_points(wk.coset_to_point(DoubleCosetRep(a, b @ h)), x)


def test_vertical_space_rank_content_and_kernel():
    rng = np.random.default_rng(4)
    e = alg.identity("Sp1xSp1")
    V0 = wk.vertical_space(DoubleCosetRep(e, e))
    assert V0.shape == (12, 7)
    for w in (np.concatenate([x, x]) for x in np.eye(6)):
        res = w - V0 @ np.linalg.lstsq(V0, w, rcond=None)[0]
        assert np.max(np.abs(res)) <= 1e-12
    hgen = np.concatenate([np.zeros(6), wk.H_GEN])
    assert np.max(np.abs(hgen - V0 @ np.linalg.lstsq(V0, hgen, rcond=None)[0])) <= 1e-12
    for k in range(100):
        rep = DoubleCosetRep(rand_g(rng), rand_g(rng))
        V = wk.vertical_space(rep)
        assert np.linalg.matrix_rank(V, tol=1e-8) == 7
        if k < 10:
            for col in V.T:
                assert np.linalg.norm(pushforward_fd(rep, col)) <= 1e-8


def test_metric_components_positive_definite():
    rng = np.random.default_rng(5)
    field = wk.wilking_chart(wk.random_points(rng, 1)[0])
    assert np.linalg.eigvalsh(wk.gW_metric_components(field, np.zeros(5))).min() > 0
    for t in rng.uniform(-0.3, 0.3, size=(100, 5)) / np.sqrt(5):
        assert np.linalg.eigvalsh(wk.gW_metric_components(field, t)).min() > 0


def test_metric_components_independent_of_lift():
    """Lift (g, g b) instead of (e, b): recompute the horizontal projection by hand."""
    rng = np.random.default_rng(6)
    x = wk.random_points(rng, 1)[0]
    b0 = wk.point_to_rep(x).b.payload
    ts = rng.uniform(-0.1, 0.1, size=(5, 5))
    ref = wk.wilking_metric_batch(b0, ts)
    M = wk.total_metric()
    for _ in range(3):
        g = alg.random_unit_quaternions(rng, 2)
        b, dirs = wk._section(b0, ts)
        a = np.broadcast_to(g, b.shape)
        V = wk._vertical_batch(a, qmul(g[None], b))
        W = np.swapaxes(np.concatenate([np.zeros(dirs.shape), dirs], axis=-1), -1, -2)
        Wh = wk.horizontal_projection(V, M, W)
        assert np.max(np.abs(np.swapaxes(Wh, -1, -2) @ M @ Wh - ref)) <= 1e-10


def test_horizontal_vertical_orthogonal_and_submersion_contracts():
    rng = np.random.default_rng(7)
    x = wk.random_points(rng, 1)[0]
    field = wk.wilking_chart(x)
    rep = DoubleCosetRep(alg.identity("Sp1xSp1"), GroupElem("Sp1xSp1", field.chart.center))
    M = wk.total_metric()
    V = wk.vertical_space(rep)
    H = wk.horizontal_lifts(field)
    assert np.max(np.abs(V.T @ M @ H)) <= 1e-10
    g = field(np.zeros((1, 5)))[0]
    # horizontal lifts are isometric to the chart directions
    assert np.max(np.abs(H.T @ M @ H - g)) <= 1e-10
    for _ in range(20):
        w = rng.normal(size=12)
        amb = pushforward_fd(rep, w)
        c = wk.ambient_to_chart(field, amb[:, None])[:, 0]
        assert np.sqrt(c @ g @ c) <= np.sqrt(w @ M @ w) * (1 + 1e-8)


def test_sec_nonnegative_sample_and_generic_positive():
    scan = wk.nonnegativity_scan(n_points=10, n_planes=100, seed=1)
    assert scan.samples == 1000
    assert scan.min_sec >= -5e-5
    from biorthcurv.grassmann import min_sec_planes, orthonormal_curvature

    wc = wk.WilkingCurvature(wk.orbit_representative(0.3, 0.2))
    Ron, _ = orthonormal_curvature(wc.R, wc.g)
    assert min_sec_planes(Ron)[0] > 1e-3


def test_oneill_inequality_on_horizontal_lifts():
    rng = np.random.default_rng(8)
    big = alg.double_phi(alg.wilking_phi())
    for x in wk.random_points(rng, 3):
        wc = wk.WilkingCurvature(x)
        H = wk.horizontal_lifts(wc.field)
        for _ in range(30):
            u, v = rng.normal(size=(2, 5))
            top = en.sec_left_invariant(AlgVec("double_sp1_plus_sp1", H @ u), AlgVec("double_sp1_plus_sp1", H @ v), big)
            assert wc.sec(u, v) >= top - 5e-5


def test_sec_independent_of_lift_and_chart():
    rng = np.random.default_rng(9)
    x = wk.random_points(rng, 1)[0]
    b0 = wk.point_to_rep(x).b.payload
    phi = 0.7
    q = np.array([np.cos(phi), np.sin(phi), 0, 0])
    b1 = qmul(b0, np.stack([q, q]))  # same point, different lift
    f0, f1 = wk.wilking_chart(b0=b0), wk.wilking_chart(b0=b1)
    r0, r1 = en.riemann_fd(f0), en.riemann_fd(f1)
    J0 = wk.chart_jacobian(f0)
    for _ in range(20):
        u, v = rng.normal(size=(2, 5))
        c = wk.ambient_to_chart(f1, J0 @ np.stack([u, v], 1))
        assert en.sec_from_riemann(r1.R, r1.g, c[:, 0], c[:, 1]) == pytest.approx(en.sec_from_riemann(r0.R, r0.g, u, v), abs=1e-6)


def test_orbit_helpers():
    x = wk.orbit_representative(0.3, -0.4)
    assert wk.orbit_invariants(x) == pytest.approx((0.3, -0.4), abs=1e-14)
    y = wk.singular_orbit_point(0.5, (0.0, 1.0, 1.0))
    assert y.p[0] ** 2 + y.v[0] ** 2 == pytest.approx(1.0, abs=1e-14)
    T = wk.orbit_tangent_ambient(y)
    assert np.linalg.matrix_rank(T, tol=1e-10) == 2
    Tn, Nn = wk.sphere_frames(y)
    assert Tn.shape == (8, 2) and Nn.shape == (8, 3)
    with pytest.raises(wk.NormalSpaceFailure):
        wk.sphere_frames(x)


@pytest.fixture(scope="module")
def small_atlas():
    cfg = wk.FlatScanConfig(radial=3, angular=8, cloud=6, n_planes=400)
    return wk.find_flat_locus(cfg)


def test_flat_locus_small_resolution(small_atlas):
    atlas = small_atlas
    assert atlas.spheres, "boundary orbits with flat families should be found"
    for z in atlas.zeros:
        assert z["min_sec"] <= atlas.config["flat_tol"]
    for s in atlas.spheres:
        assert np.all(s.min_sec <= 1e-5)
        assert np.all(s.second_flat <= 1e-5)
        assert np.all(s.family_dim == 1)
    # clusters at coarse resolution only warn
    if atlas.cluster_count != 4:
        assert not atlas.verified and atlas.warnings


def test_flat_locus_points_reevaluate_flat(small_atlas):
    from biorthcurv.grassmann import min_sec_planes, orthonormal_curvature

    for s in small_atlas.spheres:
        for xa in s.points[:2]:
            wc = wk.WilkingCurvature(S2xS3Point.from_array(xa))
            assert min_sec_planes(orthonormal_curvature(wc.R, wc.g)[0])[0] <= 1e-5


def test_atlas_round_trip(small_atlas):
    import json

    d = json.loads(json.dumps(small_atlas.as_dict()))
    back = wk.FlatLocusAtlas.from_dict(d)
    assert back.cluster_count == small_atlas.cluster_count
    assert len(back.spheres) == len(small_atlas.spheres)
    assert np.array_equal(back.spheres[0].points, small_atlas.spheres[0].points)
    with pytest.raises(ValueError):
        wk.FlatLocusAtlas.from_dict({**d, "schema_version": 99})

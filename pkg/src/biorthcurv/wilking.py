"""Wilking's metric on S^2 x S^3.

S^2 x S^3 is the set of pairs (p, v) of orthogonal unit quaternions, acted on
transitively by G = Sp(1) x Sp(1) via (q1, q2) * (p, v) = (q1 p q2^-1, q1 v q2^-1).
The isotropy group of (1, i) is H = {(e^{i phi}, e^{i phi})}.

The metric is the quotient metric of (G x G, g + g) under the left diagonal G
action and the right action of H on the second factor, where g = g0(Phi ., .)
with Phi = Id - P/2.  A point is represented by a lift (a, b) in G x G and
mapped to a^-1 b * (1, i).

Charts around a point with lift (e, b0) use the section
t -> (e, b0 exp(sum_a t_a E_a)), {E_a} a g0-orthonormal basis of the g0-orthogonal
complement of the isotropy algebra.  Metric components are g-inner products of
the horizontal projections of the coordinate directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import algebra as alg
from .algebra import GroupElem, qconj, qmul
from .config import TOL
from .engines import ChartSpec, MetricField, riemann_fd, sec_batch, sec_from_riemann
from .parallel import pmap

ONE = np.array([1.0, 0.0, 0.0, 0.0])
QI = np.array([0.0, 1.0, 0.0, 0.0])

# isotropy algebra generator and its complement, as sp1+sp1 coefficient vectors
H_GEN = np.array([1.0, 0, 0, 1.0, 0, 0]) / np.sqrt(2.0)
COMPLEMENT = np.array(
    [
        [1.0, 0, 0, -1.0, 0, 0],
        [0, np.sqrt(2.0), 0, 0, 0, 0],
        [0, 0, np.sqrt(2.0), 0, 0, 0],
        [0, 0, 0, 0, np.sqrt(2.0), 0],
        [0, 0, 0, 0, 0, np.sqrt(2.0)],
    ]
) / np.sqrt(2.0)


class NotOnManifold(ValueError):
    pass


class RankFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class S2xS3Point:
    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(4)
        v = np.asarray(self.v, dtype=float).reshape(4)
        tol = TOL.unit_norm * 10
        if abs(p @ p - 1) > tol or abs(v @ v - 1) > tol or abs(p @ v) > tol:
            raise NotOnManifold(f"({p}, {v}) is not a pair of orthogonal unit quaternions")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)

    def as_array(self):
        return np.concatenate([self.p, self.v])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:4], x[4:])


BASE_POINT = S2xS3Point(ONE, QI)


@dataclass(frozen=True)
class DoubleCosetRep:
    a: GroupElem
    b: GroupElem

    def __post_init__(self):
        for g in (self.a, self.b):
            if g.group_tag != "Sp1xSp1":
                raise ValueError("coset representatives live in Sp(1) x Sp(1)")


def act(q1, q2, x: S2xS3Point) -> S2xS3Point:
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    if abs(q1 @ q1 - 1) > TOL.unit_norm * 10 or abs(q2 @ q2 - 1) > TOL.unit_norm * 10:
        raise ValueError("act needs unit quaternions")
    c2 = qconj(q2)
    return S2xS3Point(qmul(qmul(q1, x.p), c2), qmul(qmul(q1, x.v), c2))


def _apply(b, pv=(ONE, QI)):
    """(q1, q2) * (p, v) for batched b of shape (..., 2, 4)."""
    q1, q2 = b[..., 0, :], b[..., 1, :]
    c2 = qconj(q2)
    return qmul(qmul(q1, pv[0]), c2), qmul(qmul(q1, pv[1]), c2)


def coset_to_point(rep: DoubleCosetRep) -> S2xS3Point:
    g = rep.a.inverse() @ rep.b
    p, v = _apply(g.payload)
    return S2xS3Point(p, v)


def point_to_rep(x: S2xS3Point) -> DoubleCosetRep:
    """A lift (e, b) of x, i.e. b * (1, i) = x (explicit solve)."""
    w = qmul(qconj(x.p), x.v)[1:]  # conj(p) v, a unit pure quaternion
    w = w / np.linalg.norm(w)
    q2 = alg.rotation_taking(np.array([1.0, 0, 0]), w)
    q1 = qmul(x.p, q2)
    b = np.stack([q1 / np.linalg.norm(q1), q2])
    return DoubleCosetRep(alg.identity("Sp1xSp1"), GroupElem("Sp1xSp1", b))


def random_points(rng, n):
    """Haar-distributed points, as the image of random group elements."""
    b = np.stack([alg.random_unit_quaternions(rng, n), alg.random_unit_quaternions(rng, n)], axis=1)
    p, v = _apply(b)
    return [S2xS3Point(pi, vi) for pi, vi in zip(p, v)]


# ---------------------------------------------------------------------------
# vertical / horizontal spaces (left trivialisation of G x G, 12 coefficients)
# ---------------------------------------------------------------------------


def _ad_inv(b, X):
    """Ad_{b^-1} X factorwise; b (..., 2, 4), X (..., 6) -> (..., 6)."""
    bc = qconj(b)
    out = alg.qrotate(bc, X.reshape(X.shape[:-1] + (2, 3)))
    return out.reshape(X.shape)


def _vertical_batch(a, b):
    """(..., 12, 7) vertical bases at lifts (a, b)."""
    shape = b.shape[:-2]
    eye = np.broadcast_to(np.eye(6), shape + (6, 6))
    ab = np.broadcast_to(a[..., None, :, :], shape + (6, 2, 4))
    bb = np.broadcast_to(b[..., None, :, :], shape + (6, 2, 4))
    top = _ad_inv(ab, eye)
    bot = _ad_inv(bb, eye)
    diag = np.concatenate([top, bot], axis=-1)  # (..., 6, 12) rows
    hrow = np.concatenate([np.zeros(6), H_GEN])
    hrow = np.broadcast_to(hrow, shape + (1, 12))
    return np.swapaxes(np.concatenate([diag, hrow], axis=-2), -1, -2)


def vertical_space(rep: DoubleCosetRep) -> np.ndarray:
    V = _vertical_batch(rep.a.payload, rep.b.payload)
    s = np.linalg.svd(V, compute_uv=False)
    if s[-1] < 1e-8 * s[0]:
        raise RankFailure(f"vertical space is rank deficient (singular values {s})")
    return V


def total_metric(phi=None):
    phi = alg.wilking_phi() if phi is None else phi
    return alg.double_phi(phi).matrix


def horizontal_projection(V, M, W):
    """(M)-orthogonal projection of columns of W onto the complement of span V."""
    VM = np.swapaxes(V, -1, -2) @ M
    A = VM @ V
    coef = np.linalg.solve(A, VM @ W)
    return W - V @ coef


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------


def _section(b0, ts):
    """b0 exp(Z) and the left-trivialised coordinate directions at each t."""
    Z = ts @ COMPLEMENT  # (m, 6)
    Zq = Z.reshape(-1, 2, 3)
    e = alg.qexp_pure(Zq)  # (m, 2, 4)
    b = qmul(b0[None], e)
    E = COMPLEMENT.reshape(5, 2, 3)
    dirs = alg.dexp_left_pure(Zq[:, None, :, :], E[None])  # (m, 5, 2, 3)
    return b, dirs.reshape(len(ts), 5, 6)


def wilking_metric_batch(b0, ts, phi=None):
    M = total_metric(phi)
    b, dirs = _section(b0, ts)
    a = np.broadcast_to(np.array([ONE, ONE]), b.shape)
    V = _vertical_batch(a, b)
    W = np.concatenate([np.zeros(dirs.shape), dirs], axis=-1)  # (m, 5, 12)
    W = np.swapaxes(W, -1, -2)
    Wh = horizontal_projection(V, M, W)
    return np.swapaxes(Wh, -1, -2) @ M @ Wh


def wilking_chart(x: S2xS3Point | None = None, b0=None, phi=None, fd_step=None) -> MetricField:
    if b0 is None:
        b0 = point_to_rep(x if x is not None else BASE_POINT).b.payload
    b0 = np.asarray(b0, dtype=float)

    def section(ts):
        b, _ = _section(b0, np.atleast_2d(ts))
        p, v = _apply(b)
        return np.concatenate([p, v], axis=-1)

    chart = ChartSpec(center=b0, dim=5, section=section, fd_step=fd_step or TOL.fd_step)
    return MetricField(chart, lambda ts: wilking_metric_batch(b0, ts, phi), meta={"space": "wilking"})


def gW_metric_components(chart_field: MetricField, t) -> np.ndarray:
    from .engines import metric_components

    return metric_components(chart_field, t)


def pushforward(b0, xi):
    """Ambient (R^8) velocity of b0 exp(s xi) * (1, i) at s = 0; xi in sp1+sp1."""
    xi = np.asarray(xi, dtype=float).reshape(-1, 2, 3)
    q1, q2 = b0[0], b0[1]
    c2 = qconj(q2)
    x1 = alg.pure(xi[:, 0])
    x2 = alg.pure(xi[:, 1])
    dp = qmul(qmul(q1, x1 - x2), c2)
    dv = qmul(qmul(q1, qmul(x1, QI) - qmul(QI, x2)), c2)
    return np.concatenate([dp, dv], axis=-1)


def chart_jacobian(field: MetricField):
    """8 x 5 ambient images of the chart coordinate directions at t = 0."""
    return pushforward(field.chart.center, COMPLEMENT).T


def ambient_to_chart(field: MetricField, w):
    """Chart coordinates of ambient tangent vectors (columns of w, shape (8, k))."""
    J = chart_jacobian(field)
    sol, *_ = np.linalg.lstsq(J, np.asarray(w, dtype=float), rcond=None)
    return sol


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------


class WilkingCurvature:
    """Riemann tensor of g_W at a point, in the standard chart at that point."""

    def __init__(self, x: S2xS3Point, phi=None, field: MetricField | None = None):
        self.x = x
        self.field = field if field is not None else wilking_chart(x, phi=phi)
        res = riemann_fd(self.field)
        self.R = res.R
        self.g = res.g
        self.fd = res

    def sec(self, u, v):
        return sec_from_riemann(self.R, self.g, u, v)

    def sec_many(self, U, V):
        return sec_batch(self.R, self.g, U, V)


def sec_gW(x: S2xS3Point, sigma) -> float:
    """Sectional curvature of g_W on a TwoPlane given in the standard chart at x."""
    return WilkingCurvature(x).sec(sigma.u, sigma.v)


# ---------------------------------------------------------------------------
# symmetry reduction: the diagonal Sp(1) acts isometrically by conjugation
# ---------------------------------------------------------------------------


def orbit_invariants(x: S2xS3Point):
    """(Re p, Re v); these determine the orbit of x under simultaneous conjugation."""
    return float(x.p[0]), float(x.v[0])


def orbit_representative(p0, v0):
    """A point with the given real parts (needs p0^2 + v0^2 <= 1)."""
    rp = np.sqrt(max(0.0, 1 - p0 * p0))
    rv = np.sqrt(max(0.0, 1 - v0 * v0))
    # imaginary parts in the (i, j) plane with dot product -p0 v0
    if rp < 1e-15 or rv < 1e-15:
        cosang = 0.0
    else:
        cosang = np.clip(-p0 * v0 / (rp * rv), -1.0, 1.0)
    sinang = np.sqrt(max(0.0, 1 - cosang**2))
    p = np.array([p0, rp, 0.0, 0.0])
    v = np.array([v0, rv * cosang, rv * sinang, 0.0])
    p /= np.linalg.norm(p)
    v -= (p @ v) * p
    v /= np.linalg.norm(v)
    return S2xS3Point(p, v)


def singular_orbit_point(alpha, n=(1.0, 0.0, 0.0)):
    """Point of the 2-dimensional orbit S_alpha = {(cos a + sin a n, sin a - cos a n)}."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    p = np.concatenate([[np.cos(alpha)], np.sin(alpha) * n])
    v = np.concatenate([[np.sin(alpha)], -np.cos(alpha) * n])
    return S2xS3Point(p, v)


def conjugate(q, x: S2xS3Point) -> S2xS3Point:
    return act(q, q, x)


def orbit_tangent_ambient(x: S2xS3Point):
    """Ambient velocities (8, 3) of simultaneous conjugation by exp(t u), u = i, j, k."""
    cols = []
    for u in np.eye(3):
        uq = alg.pure(u)
        dp = qmul(uq, x.p) - qmul(x.p, uq)
        dv = qmul(uq, x.v) - qmul(x.v, uq)
        cols.append(np.concatenate([dp, dv]))
    return np.stack(cols, axis=1)


def horizontal_lifts(field: MetricField):
    """(12, 5) horizontal lifts of the chart directions at t = 0, lift (e, b0)."""
    b0 = field.chart.center
    M = total_metric()
    b, dirs = _section(b0, np.zeros((1, 5)))
    a = np.broadcast_to(np.array([ONE, ONE]), b.shape)
    V = _vertical_batch(a, b)[0]
    W = np.concatenate([np.zeros((5, 6)), dirs[0]], axis=-1).T
    return horizontal_projection(V, M, W)


# ---------------------------------------------------------------------------
# sampling scans and the flat locus
# ---------------------------------------------------------------------------


@dataclass
class NonnegativityScan:
    min_sec: float
    argmin_point: list
    argmin_plane: list
    samples: int
    max_richardson_gap: float
    max_presym_residual: float

    def as_dict(self):
        return dict(self.__dict__)


def _nonneg_worker(item):
    xa, U, V = item
    wc = WilkingCurvature(S2xS3Point.from_array(xa))
    s = wc.sec_many(U, V)
    k = int(np.argmin(s))
    return float(s[k]), k, wc.fd.richardson_gap, wc.fd.presym_residual


def nonnegativity_scan(n_points=100, n_planes=100, seed=0, jobs=1) -> NonnegativityScan:
    """Minimum of sec_gW over Haar-random points times Gaussian-random chart planes."""
    rng = np.random.default_rng(seed)
    pts = random_points(rng, n_points)
    items = []
    for x in pts:
        U = rng.normal(size=(n_planes, 5))
        V = rng.normal(size=(n_planes, 5))
        items.append((x.as_array(), U, V))
    out = pmap(_nonneg_worker, items, jobs)
    best = (np.inf, None, None)
    for (xa, U, V), (m, k, _, _) in zip(items, out):
        if m < best[0]:
            best = (m, xa.tolist(), [U[k].tolist(), V[k].tolist()])
    gap = max(o[2] for o in out)
    pre = max(o[3] for o in out)
    return NonnegativityScan(best[0], best[1], best[2], n_points * n_planes, gap, pre)


@dataclass
class SphereCloud:
    index: int
    alpha: float  # the orbit is {(cos a + sin a n, sin a - cos a n) : n in S^2}
    points: np.ndarray  # (k, 8)
    tangent: np.ndarray  # (k, 8, 2) ambient, g_W-orthonormal
    normal: np.ndarray  # (k, 8, 3) ambient, g_W-orthonormal
    min_sec: np.ndarray  # (k,)
    second_flat: np.ndarray  # (k,) smallest sec at distance >= delta from the first flat
    family_dim: np.ndarray  # (k,) 1 for an S^1 family of flats, else 0

    def as_dict(self):
        return {
            "index": self.index,
            "alpha": self.alpha,
            "points": self.points.tolist(),
            "tangent": self.tangent.tolist(),
            "normal": self.normal.tolist(),
            "min_sec": self.min_sec.tolist(),
            "second_flat": self.second_flat.tolist(),
            "family_dim": self.family_dim.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=int(d["index"]),
            alpha=float(d["alpha"]),
            points=np.asarray(d["points"], dtype=float),
            tangent=np.asarray(d["tangent"], dtype=float),
            normal=np.asarray(d["normal"], dtype=float),
            min_sec=np.asarray(d["min_sec"], dtype=float),
            second_flat=np.asarray(d["second_flat"], dtype=float),
            family_dim=np.asarray(d["family_dim"], dtype=int),
        )


ATLAS_SCHEMA = 1


@dataclass
class FlatLocusAtlas:
    spheres: list
    zeros: list  # orbit-grid points with a flat plane: dicts with invariants and estimates
    config: dict
    tolerances: dict
    cluster_count: int
    verified: bool
    warnings: list

    def as_dict(self):
        return {
            "schema_version": ATLAS_SCHEMA,
            "config": self.config,
            "tolerances": self.tolerances,
            "cluster_count": self.cluster_count,
            "verified": self.verified,
            "warnings": list(self.warnings),
            "zeros": self.zeros,
            "spheres": [s.as_dict() for s in self.spheres],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != ATLAS_SCHEMA:
            raise ValueError(f"unsupported atlas schema {d.get('schema_version')!r}")
        return cls(
            spheres=[SphereCloud.from_dict(s) for s in d["spheres"]],
            zeros=d["zeros"],
            config=d["config"],
            tolerances=d["tolerances"],
            cluster_count=int(d["cluster_count"]),
            verified=bool(d["verified"]),
            warnings=list(d["warnings"]),
        )


@dataclass(frozen=True)
class FlatScanConfig:
    radial: int = 6  # rings of the orbit disk, the last one on the boundary circle
    angular: int = 32  # angles per ring
    cloud: int = 24  # points per sphere cloud
    flat_tol: float = TOL.flat
    family_delta: float = 0.3  # Grassmann separation for a second, independent flat
    family_hess_tol: float = 1e-3  # a flat family shows up as a null direction of the Hessian of sec
    cloud_link: float = 1.2  # single-linkage distance for clustering cloud points in R^8
    n_planes: int = 600

    def as_dict(self):
        return dict(self.__dict__)


def grassmann_hessian_eigs(Ron, Q, h=1e-4):
    """Eigenvalues of the Hessian of sec on Gr_2 at the plane Q, in a local chart."""
    from .grassmann import _gs2, _perp, _sec_uv

    P = _perp(Q)
    n = P.shape[1] * 2

    def f(z):
        return _sec_uv(Ron, *_gs2(Q + P @ z.reshape(-1, 2)).T)

    E = np.eye(n) * h
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            H[i, j] = H[j, i] = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(E[j] - E[i]) + f(-E[i] - E[j])) / (4 * h * h)
    return np.linalg.eigvalsh(H)


@dataclass
class FlatInfo:
    min_sec: float
    plane: np.ndarray  # chart coordinates (5, 2) of the flattest plane
    second_flat: float
    hess_min: float
    family_dim: int
    curvature: object


def flat_analysis(x: S2xS3Point, cfg: FlatScanConfig) -> FlatInfo:
    """Flattest plane at x and whether it sits in a 1-parameter family of flats."""
    from .grassmann import min_sec_far_from, min_sec_planes, orthonormal_curvature

    wc = WilkingCurvature(x)
    Ron, Linv = orthonormal_curvature(wc.R, wc.g)
    m1, Q1 = min_sec_planes(Ron, n_planes=cfg.n_planes)
    m2, hmin, fam = np.inf, np.inf, 0
    if m1 <= cfg.flat_tol:
        m2, _ = min_sec_far_from(Ron, Q1, cfg.family_delta, n_planes=cfg.n_planes)
        hmin = float(grassmann_hessian_eigs(Ron, Q1)[0])
        fam = int(m2 <= cfg.flat_tol and hmin <= cfg.family_hess_tol)
    return FlatInfo(float(m1), Linv @ Q1, float(m2), hmin, fam, wc)


def _orbit_dim(p0, v0):
    return 2 if p0 * p0 + v0 * v0 > 1 - 1e-12 else 3


class NormalSpaceFailure(RuntimeError):
    pass


def sphere_frames_chart(x: S2xS3Point, field: MetricField):
    """Chart-coordinate g_W-orthonormal frames (5, 2) tangent and (5, 3) normal to a 2-dimensional orbit."""
    g = field(np.zeros((1, 5)))[0]
    T = ambient_to_chart(field, orbit_tangent_ambient(x))  # (5, 3), rank 2
    u, s, _ = np.linalg.svd(T)
    if s[1] < 1e-8 or s[2] > 1e-6 * s[0]:
        raise NormalSpaceFailure(f"orbit through x is not 2-dimensional (singular values {s})")
    Lt = np.linalg.cholesky(g).T
    q, _ = np.linalg.qr(np.concatenate([Lt @ u[:, :2], np.eye(5)], axis=1))
    return np.linalg.solve(Lt, q[:, :2]), np.linalg.solve(Lt, q[:, 2:5])


def sphere_frames(x: S2xS3Point, field: MetricField | None = None):
    """g_W-orthonormal ambient frames (8, 2) tangent and (8, 3) normal to the conjugation orbit of x."""
    field = field or wilking_chart(x)
    Tn, Nn = sphere_frames_chart(x, field)
    J = chart_jacobian(field)
    return J @ Tn, J @ Nn


def _info_dict(info: FlatInfo):
    return {"min_sec": info.min_sec, "second_flat": info.second_flat, "hess_min": info.hess_min, "family_dim": info.family_dim}


def _grid_worker(item):
    (p0, v0), cfg = item
    return _info_dict(flat_analysis(orbit_representative(p0, v0), cfg))


def _cloud_worker(item):
    xa, cfg = item
    x = S2xS3Point.from_array(xa)
    info = flat_analysis(x, cfg)
    T, N = sphere_frames(x, info.curvature.field)
    return {**_info_dict(info), "tangent": T, "normal": N}


def find_flat_locus(cfg: FlatScanConfig | None = None, jobs=1) -> FlatLocusAtlas:
    """Scan the orbit disk of the conjugation action for flat planes.

    Every conjugation orbit is determined by (Re p, Re v) in the unit disk; the
    boundary circle holds the 2-dimensional orbits.  Grid points carrying a flat
    plane are recorded with a local dimension estimate; those carrying a second
    flat plane at Grassmann distance >= delta are expanded into point clouds by
    conjugation and clustered.
    """
    from scipy.cluster.hierarchy import fcluster, linkage

    from .grassmann import fibonacci_sphere

    cfg = cfg or FlatScanConfig()
    if cfg.radial < 2 or cfg.angular < 2:
        raise ValueError("grid resolutions must be >= 2")
    grid = {}
    for j in range(cfg.radial + 1):
        rho = j / cfg.radial
        for k in range(cfg.angular if j else 1):
            ang = 2 * np.pi * k / cfg.angular
            grid[(j, k)] = (rho * np.cos(ang), rho * np.sin(ang))
    keys = sorted(grid)
    infos = pmap(_grid_worker, [(grid[k], cfg) for k in keys], jobs)
    found = {k: info for k, info in zip(keys, infos) if info["min_sec"] <= cfg.flat_tol}
    zeros = []
    for (j, k), info in sorted(found.items()):
        p0, v0 = grid[(j, k)]
        radial_nb = any((jj, k) in found for jj in (j - 1, j + 1) if jj >= 1) or (j == 1 and (0, 0) in found)
        ang_nb = j > 0 and any((j, (k + dk) % cfg.angular) in found for dk in (-1, 1))
        local = int(radial_nb) + int(ang_nb)
        odim = _orbit_dim(p0, v0)
        zeros.append(
            {
                "grid": [j, k],
                "invariants": [float(p0), float(v0)],
                "min_sec": info["min_sec"],
                "second_flat": info["second_flat"],
                "hess_min": info["hess_min"],
                "orbit_dim": odim,
                "orbit_space_dim": local,
                "zero_set_dim": 3 + local if local else odim,
                "family_dim": info["family_dim"],
                # a second flat plane that is not part of a family
                "isolated_second_flat": int(info["family_dim"] == 0 and info["second_flat"] <= cfg.flat_tol),
            }
        )
    flagged = [z for z in zeros if z["family_dim"] == 1]
    spheres = []
    normals = fibonacci_sphere(cfg.cloud)
    for z in flagged:
        p0, v0 = z["invariants"]
        alpha = float(np.arctan2(v0, p0))
        pts, tan, nor, ms, sf, fam = [], [], [], [], [], []
        xs = [
            singular_orbit_point(alpha, n) if z["orbit_dim"] == 2 else conjugate(alg.rotation_taking(np.array([1.0, 0, 0]), n), orbit_representative(p0, v0))
            for n in normals
        ]
        for x, info in zip(xs, pmap(_cloud_worker, [(x.as_array(), cfg) for x in xs], jobs)):
            pts.append(x.as_array())
            tan.append(info["tangent"])
            nor.append(info["normal"])
            ms.append(info["min_sec"])
            sf.append(info["second_flat"])
            fam.append(info["family_dim"])
        spheres.append(
            SphereCloud(
                index=len(spheres),
                alpha=alpha,
                points=np.array(pts),
                tangent=np.array(tan),
                normal=np.array(nor),
                min_sec=np.array(ms),
                second_flat=np.array(sf),
                family_dim=np.array(fam),
            )
        )
    warnings = []
    if spheres:
        allpts = np.concatenate([s.points for s in spheres])
        owner = np.concatenate([[s.index] * len(s.points) for s in spheres])
        labels = fcluster(linkage(allpts, method="single"), t=cfg.cloud_link, criterion="distance") if len(allpts) > 1 else np.array([1])
        count = len(set(labels.tolist()))
        # clouds from distinct flagged orbits that merge would be a single component
        if len(set(zip(labels.tolist(), owner.tolist()))) != len(spheres):
            warnings.append("a sphere cloud is split across clusters")
    else:
        count = 0
    bad = [s.index for s in spheres if np.any(s.min_sec > cfg.flat_tol) or np.any(s.family_dim != 1)]
    if bad:
        warnings.append(f"cloud points of spheres {bad} failed re-verification")
    doubles = [z["invariants"] for z in zeros if z["isolated_second_flat"]]
    if doubles:
        warnings.append(f"orbits with two isolated flat planes (biorthogonal curvature 0 away from the sphere clouds): {doubles}")
    if count != 4:
        warnings.append(f"found {count} clusters of points with a flat family (expected 4); resolution-dependent")
    return FlatLocusAtlas(
        spheres=spheres,
        zeros=zeros,
        config=cfg.as_dict(),
        tolerances=TOL.as_dict(),
        cluster_count=count,
        verified=(count == 4 and not bad),
        warnings=warnings,
    )

"""Tangent 2-planes, Grassmannian distance, and the two averaged curvatures.

Planes are spans of coordinate vectors in an n-dimensional tangent space with
inner product given by a symmetric positive-definite matrix.  Distances are the
geodesic distance on Gr_2 computed from principal angles,
sqrt(theta_1^2 + theta_2^2).

Curvature functionals are callables ``sec(U, V) -> values`` acting on batches
of spanning vectors (rows of U and V).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .config import TOL

GRASS_DIAMETER_2PLANES = np.pi / np.sqrt(2.0)


class DomainError(ValueError):
    pass


class EmptyFeasibleSet(ValueError):
    pass


@dataclass(frozen=True)
class TwoPlane:
    base: object
    u: np.ndarray
    v: np.ndarray
    metric: np.ndarray
    metric_tag: str = "g"

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        g = np.asarray(self.metric, dtype=float)
        tol = TOL.plane_orthonormal
        if abs(u @ g @ u - 1) > tol or abs(v @ g @ v - 1) > tol or abs(u @ g @ v) > tol:
            raise ValueError("plane vectors are not orthonormal in the declared metric")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "metric", g)

    @classmethod
    def span(cls, base, u, v, metric, metric_tag="g"):
        """Gram-Schmidt (u, v) in ``metric`` and build the plane."""
        g = np.asarray(metric, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        u = u / np.sqrt(u @ g @ u)
        v = v - (u @ g @ v) * u
        nv = np.sqrt(v @ g @ v)
        if nv < 1e-12:
            raise DomainError("vectors do not span a 2-plane")
        v = v / nv
        # one more pass keeps orthogonality at round-off level
        v = v - (u @ g @ v) * u
        v = v / np.sqrt(v @ g @ v)
        return cls(base, u, v, g, metric_tag)

    @property
    def dim(self):
        return len(self.u)

    def frame(self):
        return np.stack([self.u, self.v], axis=1)

    def reframed(self, angle):
        c, s = np.cos(angle), np.sin(angle)
        return TwoPlane(self.base, c * self.u + s * self.v, -s * self.u + c * self.v, self.metric, self.metric_tag)


@dataclass
class PlanePair:
    sigma: TwoPlane
    sigma_prime: TwoPlane
    distance: float = field(init=False)

    def __post_init__(self):
        self.distance = plane_distance(self.sigma, self.sigma_prime)


def _same_base(a, b):
    if a is b:
        return True
    try:
        return bool(np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=1e-14, rtol=0))
    except (TypeError, ValueError):
        return a == b


# ---------------------------------------------------------------------------
# principal angles
# ---------------------------------------------------------------------------


def _sym2_sqrt_eigs(S):
    """Square roots of the eigenvalues (descending) of symmetric PSD 2x2 matrices."""
    a, b, d = S[..., 0, 0], S[..., 0, 1], S[..., 1, 1]
    m = 0.5 * (a + d)
    r = np.sqrt(0.25 * (a - d) ** 2 + b * b)
    lo = np.maximum(m - r, 0.0)
    # the small eigenvalue via det/large keeps relative accuracy
    hi = m + r
    lo = np.where(hi > 0, np.maximum(a * d - b * b, 0.0) / np.where(hi > 0, hi, 1.0), lo)
    return np.stack([np.sqrt(hi), np.sqrt(lo)], axis=-1)


def principal_angles_orthonormal(A, B):
    """Principal angles between column spans of Euclidean-orthonormal A, B.

    Broadcasts over leading axes (..., n, 2).  Small angles come from sines and
    large ones from cosines.
    """
    At = np.swapaxes(A, -1, -2)
    M = At @ B
    c = _sym2_sqrt_eigs(np.swapaxes(M, -1, -2) @ M)  # descending cosines
    R = B - A @ M
    s = _sym2_sqrt_eigs(np.swapaxes(R, -1, -2) @ R)  # descending sines
    small = np.arctan2(s[..., ::-1], c)
    large = np.arccos(np.clip(c, -1.0, 1.0))
    return np.where(c > np.sqrt(0.5), small, large)


def grass_distance_orthonormal(A, B):
    th = principal_angles_orthonormal(A, B)
    return np.sqrt(np.sum(th**2, axis=-1))


def _whiten(g):
    """Upper factor L^T with x^T g y = (L^T x) . (L^T y)."""
    return np.linalg.cholesky(g).T


def plane_distance(a: TwoPlane, b: TwoPlane) -> float:
    if not _same_base(a.base, b.base):
        raise DomainError("planes are based at different points")
    if a.metric_tag != b.metric_tag:
        raise DomainError("planes refer to different metrics")
    Lt = _whiten(a.metric)
    A, _ = np.linalg.qr(Lt @ a.frame())
    B, _ = np.linalg.qr(Lt @ b.frame())
    return float(grass_distance_orthonormal(A, B))


# ---------------------------------------------------------------------------
# lattices
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def fibonacci_hemisphere(n):
    """n quasi-uniform unit vectors with z >= 0 (one per line through 0)."""
    k = np.arange(n) + 0.5
    z = 1.0 - k / n  # uniform in (0, 1]
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=None)
def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts.setflags(write=False)
    return pts


def line_distance(n1, n2):
    """Distance between planes of R^3 with unit normals n1, n2 (angle between lines)."""
    return np.arccos(np.clip(np.abs(np.sum(n1 * n2, axis=-1)), 0.0, 1.0))


@lru_cache(maxsize=None)
def hemisphere_covering_radius(n, probes=20000):
    """Covering radius of the hemisphere lattice in the line metric, estimated on a dense probe set."""
    pts = fibonacci_hemisphere(n)
    both = np.concatenate([pts, -pts])
    probe = fibonacci_sphere(probes)
    d, _ = cKDTree(both).query(probe)
    # chord -> angle
    return float(np.max(2 * np.arcsin(np.clip(d / 2, 0, 1))))


@lru_cache(maxsize=None)
def grassmann_lattice(n, dim=5):
    """Deterministic quasi-random Euclidean-orthonormal 2-frames in R^dim (Halton + Gaussian map)."""
    h = qmc.Halton(d=2 * dim, scramble=False).random(n + 1)[1:]
    z = norm.ppf(np.clip(h, 1e-12, 1 - 1e-12)).reshape(n, dim, 2)
    q, _ = np.linalg.qr(z)
    q.setflags(write=False)
    return q


# ---------------------------------------------------------------------------
# complements
# ---------------------------------------------------------------------------


def complement_frame(sigma: TwoPlane):
    """A metric-orthonormal basis of sigma^perp (columns)."""
    g = sigma.metric
    n = sigma.dim
    Lt = _whiten(g)
    A = Lt @ sigma.frame()
    q, _ = np.linalg.qr(np.concatenate([A, np.eye(n)], axis=1))
    comp = q[:, 2:n]
    return np.linalg.solve(Lt, comp)


def plane_from_normal(frame, nvec):
    """Plane inside span(frame) orthogonal (in frame coordinates) to nvec; frame orthonormal."""
    nvec = np.asarray(nvec, dtype=float)
    nvec = nvec / np.linalg.norm(nvec)
    # orthonormal completion of nvec in R^3
    helper = np.eye(3)[np.argmin(np.abs(nvec))]
    a = np.cross(nvec, helper)
    a /= np.linalg.norm(a)
    b = np.cross(nvec, a)
    return frame @ a, frame @ b


def orthogonal_complement_planes(sigma: TwoPlane, n=100):
    """Yield n planes inside sigma^perp, one per lattice normal direction."""
    if sigma.dim != 5:
        raise DomainError("complement family is implemented for 5-dimensional tangent spaces")
    frame = complement_frame(sigma)
    for nvec in fibonacci_hemisphere(n):
        u, v = plane_from_normal(frame, nvec)
        yield TwoPlane.span(sigma.base, u, v, sigma.metric, sigma.metric_tag)


# ---------------------------------------------------------------------------
# minimisers
# ---------------------------------------------------------------------------


@dataclass
class CurvatureMin:
    value: float
    sigma_prime: TwoPlane | None
    grid_min: float
    converged: bool
    certificate: dict


def _as_batch(sec):
    def f(U, V):
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        return np.asarray(sec(U, V), dtype=float).reshape(len(U))

    return f


def _nm(fun, x0, scale, maxiter=4000):
    simplex = np.vstack([x0] + [x0 + scale * e for e in np.eye(len(x0))])
    res = minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=1e-11, fatol=1e-14, maxiter=maxiter, maxfev=maxiter * 2),
    )
    return res


def biorthogonal_curvature(p, sigma: TwoPlane, sec, grid=64 * 64, refine=5) -> CurvatureMin:
    """min over sigma' in sigma^perp of (sec(sigma) + sec(sigma'))/2.

    Grid over a Fibonacci lattice of normal directions inside sigma^perp, then
    Nelder-Mead from the best ``refine`` cells.
    """
    sec = _as_batch(sec)
    frame = complement_frame(sigma)
    s0 = float(sec(sigma.u, sigma.v)[0])
    normals = fibonacci_hemisphere(grid)
    # batched planes for all normals
    helper = np.eye(3)[np.argmin(np.abs(normals), axis=1)]
    a = np.cross(normals, helper)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(normals, a)
    U = a @ frame.T
    V = b @ frame.T
    vals = sec(U, V)
    order = np.argsort(vals, kind="stable")
    grid_min = float(vals[order[0]])

    def at(nvec):
        u, v = plane_from_normal(frame, nvec)
        return float(sec(u, v)[0])

    best_val, best_n, converged = grid_min, normals[order[0]], True
    h = hemisphere_covering_radius(grid)
    for idx in order[:refine]:
        n0 = normals[idx]
        e1 = np.cross(n0, np.eye(3)[np.argmin(np.abs(n0))])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n0, e1)

        def fun(z, n0=n0, e1=e1, e2=e2):
            return at(n0 + z[0] * e1 + z[1] * e2)

        res = _nm(fun, np.zeros(2), h)
        converged &= bool(res.success)
        if res.fun < best_val:
            best_val = float(res.fun)
            nb = n0 + res.x[0] * e1 + res.x[1] * e2
            best_n = nb / np.linalg.norm(nb)
    # Lipschitz estimate of sec over the family from lattice neighbours
    tree = cKDTree(np.concatenate([normals, -normals]))
    dd, ii = tree.query(normals, k=7)
    ii = ii % grid
    ang = 2 * np.arcsin(np.clip(dd[:, 1:] / 2, 0, 1))
    diffs = np.abs(vals[ii[:, 1:]] - vals[:, None])
    lip = float(np.max(diffs / np.maximum(ang, 1e-12)))
    u, v = plane_from_normal(frame, best_n)
    sp = TwoPlane.span(sigma.base, u, v, sigma.metric, sigma.metric_tag)
    cert = dict(
        grid=int(grid),
        refine=int(refine),
        grid_min_sec=grid_min,
        refined_min_sec=best_val,
        lipschitz_estimate=lip,
        covering_radius=h,
        gap_bound=lip * h,
        converged=converged,
        distance="geodesic principal-angle",
    )
    return CurvatureMin(
        value=0.5 * (s0 + best_val),
        sigma_prime=sp,
        grid_min=0.5 * (s0 + grid_min),
        converged=converged,
        certificate=cert,
    )


def _local_plane(Q0, Qperp, z):
    """Plane spanned by Q0 + Qperp A, A = z reshaped (n-2, 2); returns orthonormal frame."""
    A = z.reshape(Qperp.shape[1], 2)
    F = Q0 + Qperp @ A
    q, _ = np.linalg.qr(F)
    return q


def _perp(Q):
    n = Q.shape[0]
    q, _ = np.linalg.qr(np.concatenate([Q, np.eye(n)], axis=1))
    return q[:, 2:n]


def distance_curvature(p, sigma: TwoPlane, theta, sec, grid=4096, refine=5) -> CurvatureMin:
    """min over sigma' with dist(sigma, sigma') >= theta of (sec(sigma) + sec(sigma'))/2."""
    if theta <= 0:
        raise DomainError("theta must be positive")
    if theta > GRASS_DIAMETER_2PLANES:
        raise EmptyFeasibleSet(f"theta={theta} exceeds the Grassmannian diameter {GRASS_DIAMETER_2PLANES:.6f}")
    sec = _as_batch(sec)
    n = sigma.dim
    Lt = _whiten(sigma.metric)
    Linv = np.linalg.inv(Lt)
    S, _ = np.linalg.qr(Lt @ sigma.frame())
    s0 = float(sec(sigma.u, sigma.v)[0])
    lat = grassmann_lattice(grid, n)
    d = grass_distance_orthonormal(S[None], lat)
    U = lat[:, :, 0] @ Linv.T
    V = lat[:, :, 1] @ Linv.T
    vals = sec(U, V)
    feas = d >= theta
    if not np.any(feas):
        # the lattice missed the thin feasible shell; seed with a far plane
        lat = np.concatenate([lat, _perp(S)[None, :, :2]])
        d = np.append(d, grass_distance_orthonormal(S, lat[-1]))
        vals = np.append(vals, sec(lat[-1][:, 0] @ Linv.T, lat[-1][:, 1] @ Linv.T))
        feas = d >= theta
    masked = np.where(feas, vals, np.inf)
    order = np.argsort(masked, kind="stable")
    grid_min = float(masked[order[0]])
    best_val, best_Q, converged = grid_min, lat[order[0]], True
    penalty = 10.0 * (1.0 + float(np.max(np.abs(vals))))

    for idx in order[:refine]:
        if not np.isfinite(masked[idx]):
            break
        Q0 = lat[idx]
        P = _perp(Q0)

        def fun(z, Q0=Q0, P=P):
            Q = _local_plane(Q0, P, z)
            val = float(sec(Q[:, 0] @ Linv.T, Q[:, 1] @ Linv.T)[0])
            gap = theta - float(grass_distance_orthonormal(S, Q))
            return val + penalty * max(0.0, gap)

        res = _nm(fun, np.zeros(2 * (n - 2)), 0.1)
        converged &= bool(res.success)
        Q = _local_plane(Q0, P, res.x)
        if grass_distance_orthonormal(S, Q) >= theta:
            val = float(sec(Q[:, 0] @ Linv.T, Q[:, 1] @ Linv.T)[0])
            if val < best_val:
                best_val, best_Q = val, Q
    sp = TwoPlane.span(sigma.base, best_Q[:, 0] @ Linv.T, best_Q[:, 1] @ Linv.T, sigma.metric, sigma.metric_tag)
    cert = dict(grid=int(grid), refine=int(refine), theta=float(theta), grid_min_sec=grid_min, refined_min_sec=best_val, converged=converged, distance="geodesic principal-angle")
    return CurvatureMin(0.5 * (s0 + best_val), sp, 0.5 * (s0 + grid_min), converged, cert)


# ---------------------------------------------------------------------------
# pairs: min over (sigma, sigma') with dist >= theta at a point
# ---------------------------------------------------------------------------


@dataclass
class PairMin:
    value: float
    frames: tuple  # (Q, Q') Euclidean-orthonormal in the whitened frame
    distance: float
    candidates: int


def orthonormal_curvature(R, g):
    """Curvature tensor in a g-orthonormal frame, plus the map back to coordinates."""
    Lt = _whiten(g)
    Linv = np.linalg.inv(Lt)
    Ron = np.einsum("abcd,ai,bj,ck,dl->ijkl", R, Linv, Linv, Linv, Linv)
    return Ron, Linv


def sec_orthonormal(Ron, Q):
    """sec of Euclidean-orthonormal frames Q (..., n, 2) for an orthonormal-frame tensor."""
    u = Q[..., :, 0]
    v = Q[..., :, 1]
    return np.einsum("abcd,...a,...b,...c,...d->...", Ron, u, v, v, u)


def _gs2(F):
    """Gram-Schmidt of a (n, 2) frame without LAPACK overhead."""
    u = F[:, 0] / np.sqrt(F[:, 0] @ F[:, 0])
    v = F[:, 1] - (u @ F[:, 1]) * u
    out = np.empty_like(F)
    out[:, 0] = u
    out[:, 1] = v / np.sqrt(v @ v)
    return out


def _sec_uv(Ron, u, v):
    return float(np.einsum("abcd,a,b,c,d->", Ron, u, v, v, u))


def pair_min(Ron, theta, n_planes=600, n_low=120, refine=4, lattice=None) -> PairMin:
    """min over plane pairs at distance >= theta of the averaged sectional curvature.

    Candidates come from all lattice pairs among the lowest planes; the best
    ``refine`` are polished with SLSQP in local Grassmann charts.
    """
    n = Ron.shape[0]
    lat = grassmann_lattice(n_planes, n) if lattice is None else lattice
    vals = sec_orthonormal(Ron, lat)
    low = np.argsort(vals, kind="stable")[:n_low]
    D = grass_distance_orthonormal(lat[low][:, None], lat[None, :])
    F = 0.5 * (vals[low][:, None] + vals[None, :])
    F = np.where(D >= theta, F, np.inf)
    flat_idx = np.argsort(F, axis=None, kind="stable")[: refine * 8]
    seen, starts = set(), []
    for k in flat_idx:
        i, j = np.unravel_index(k, F.shape)
        key = tuple(sorted((int(low[i]), int(j))))
        if not np.isfinite(F[i, j]) or key in seen:
            continue
        seen.add(key)
        starts.append(key)
        if len(starts) >= refine:
            break
    best = PairMin(np.inf, (None, None), 0.0, len(starts))
    m = 2 * (n - 2)
    for i, j in starts:
        Q1, Q2 = lat[i], lat[j]
        P1, P2 = _perp(Q1), _perp(Q2)

        def frames(z):
            A = _gs2(Q1 + P1 @ z[:m].reshape(n - 2, 2))
            B = _gs2(Q2 + P2 @ z[m:].reshape(n - 2, 2))
            return A, B

        def fun(z):
            A, B = frames(z)
            return 0.5 * (_sec_uv(Ron, A[:, 0], A[:, 1]) + _sec_uv(Ron, B[:, 0], B[:, 1]))

        def con(z):
            A, B = frames(z)
            return float(grass_distance_orthonormal(A, B)) - theta

        res = minimize(fun, np.zeros(2 * m), method="SLSQP", constraints=[dict(type="ineq", fun=con)], options=dict(ftol=1e-14, maxiter=200))
        A, B = frames(res.x)
        dist = float(grass_distance_orthonormal(A, B))
        if dist < theta:
            A, B = Q1, Q2
            dist = float(grass_distance_orthonormal(A, B))
        val = 0.5 * (_sec_uv(Ron, A[:, 0], A[:, 1]) + _sec_uv(Ron, B[:, 0], B[:, 1]))
        if val < best.value:
            best = PairMin(val, (A, B), dist, len(starts))
    return best


def _sec_and_grad(Ron, z):
    n = Ron.shape[0]
    u, v = z[:n], z[n:]
    num = np.einsum("abcd,a,b,c,d->", Ron, u, v, v, u)
    gu = 2.0 * np.einsum("abcd,b,c,d->a", Ron, v, v, u)
    gv = 2.0 * np.einsum("abcd,a,b,d->c", Ron, u, v, u)
    uu, vv, uv = u @ u, v @ v, u @ v
    den = uu * vv - uv * uv
    du = 2 * u * vv - 2 * uv * v
    dv = 2 * v * uu - 2 * uv * u
    f = num / den
    g = np.concatenate([gu / den - f * du / den, gv / den - f * dv / den])
    return f, g


def _polish_plane(Ron, Q):
    res = minimize(lambda z: _sec_and_grad(Ron, z), np.concatenate([Q[:, 0], Q[:, 1]]), jac=True, method="BFGS", options=dict(gtol=1e-12, maxiter=400))
    n = Ron.shape[0]
    F = np.stack([res.x[:n], res.x[n:]], axis=1)
    Qn = _gs2(F)
    return _sec_uv(Ron, Qn[:, 0], Qn[:, 1]), Qn


def min_sec_planes(Ron, n_planes=600, refine=4, lattice=None):
    """Smallest sectional curvature at a point (lattice + BFGS); returns (value, frame)."""
    n = Ron.shape[0]
    lat = grassmann_lattice(n_planes, n) if lattice is None else lattice
    vals = sec_orthonormal(Ron, lat)
    order = np.argsort(vals, kind="stable")[:refine]
    best = (np.inf, None)
    for idx in order:
        val, Q = _polish_plane(Ron, lat[idx])
        if val < best[0]:
            best = (val, Q)
    return best


def min_sec_far_from(Ron, Q0, delta, n_planes=600, refine=4, lattice=None):
    """Smallest sectional curvature over planes at distance >= delta from Q0."""
    n = Ron.shape[0]
    lat = grassmann_lattice(n_planes, n) if lattice is None else lattice
    vals = sec_orthonormal(Ron, lat)
    d = grass_distance_orthonormal(Q0[None], lat)
    masked = np.where(d >= delta, vals, np.inf)
    order = np.argsort(masked, kind="stable")[:refine]
    best = (np.inf, None)
    m = 2 * (n - 2)
    for idx in order:
        if not np.isfinite(masked[idx]):
            break
        Qs = lat[idx]
        P = _perp(Qs)

        def frame(z, Qs=Qs, P=P):
            return _gs2(Qs + P @ z.reshape(n - 2, 2))

        res = minimize(
            lambda z: _sec_uv(Ron, *frame(z).T),
            np.zeros(m),
            method="SLSQP",
            constraints=[dict(type="ineq", fun=lambda z: float(grass_distance_orthonormal(Q0, frame(z))) - delta)],
            options=dict(ftol=1e-14, maxiter=200),
        )
        Q = frame(res.x)
        if grass_distance_orthonormal(Q0, Q) >= delta - 1e-12:
            val = _sec_uv(Ron, Q[:, 0], Q[:, 1])
            if val < best[0]:
                best = (val, Q)
    return best

"""The Wu manifold SU(3)/SO(3) with its normal symmetric metric.

Horizontal space at the base coset is p = so(3)^perp = span{-i lambda_k : k = 1,3,4,6,8}
(1-based), with <X, Y> = -Tr(XY)/2.  Plane coordinates are coefficient vectors
in that 5-element basis.  The maximal abelian subalgebra span{-i lambda_3, -i lambda_8}
is the reference flat; every flat is Ad_r of it for some r in SO(3).

Orthogonality of two flats Ad_r(a0), Ad_r'(a0) is equivalent to the vanishing of
the four numbers <lambda_a, Ad_{r^-1 r'} lambda_b>, a, b in {3, 8}; with
r^-1 r' in Euler form these have closed trigonometric forms.  The certificate
below bounds their maximum away from zero over the whole angle cube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, expm_frechet
from scipy.optimize import minimize

from . import algebra as alg
from .algebra import SO3_PERP_IDX, AlgVec, su3_basis
from .config import TOL
from .engines import ChartSpec, DegeneratePlane, MetricField, riemann_fd, sec_from_riemann
from .grassmann import (
    _gs2,
    _perp,
    biorthogonal_curvature,
    fibonacci_hemisphere,
    grass_distance_orthonormal,
    grassmann_lattice,
    TwoPlane,
)
from .intervals import Interval, icos, isin

WU_C = 1.0  # sec = WU_C * |[X, Y]|^2; checked against the chart engine by fit_wu_constant
HALF_SQRT3 = np.sqrt(3.0) / 2.0
IDX3, IDX8 = 2, 7  # 0-based positions of lambda_3, lambda_8


class NotHorizontal(ValueError):
    pass


class ComputationIntegrityError(RuntimeError):
    pass


def perp_basis():
    """(5, 3, 3) matrices -i lambda_k spanning so(3)^perp."""
    return su3_basis()[list(SO3_PERP_IDX)]


def to_p(X: AlgVec):
    """Coefficients of a horizontal su3 vector in the so(3)^perp basis."""
    return np.asarray(X.coeffs)[list(SO3_PERP_IDX)]


def from_p(c):
    out = np.zeros(8)
    out[list(SO3_PERP_IDX)] = c
    return AlgVec("su3", out)


@dataclass(frozen=True)
class HorizontalPlane:
    X: AlgVec
    Y: AlgVec

    def __post_init__(self):
        for V in (self.X, self.Y):
            if V.algebra_tag != "su3":
                raise NotHorizontal("plane vectors must lie in su(3)")
            vert, _ = alg.cartan_split(V)
            if np.max(np.abs(vert.coeffs)) > 1e-12:
                raise NotHorizontal("vector has a nonzero so(3) component")
        x, y = self.X.coeffs, self.Y.coeffs
        if abs(x @ x - 1) > 1e-12 or abs(y @ y - 1) > 1e-12 or abs(x @ y) > 1e-12:
            raise ValueError("plane vectors are not orthonormal")

    @classmethod
    def span(cls, X: AlgVec, Y: AlgVec):
        x = to_p(X)
        y = to_p(Y)
        vert = [alg.cartan_split(V)[0].coeffs for V in (X, Y)]
        if max(np.max(np.abs(c)) for c in vert) > 1e-12:
            raise NotHorizontal("vector has a nonzero so(3) component")
        Q = _gs2(np.stack([x, y], axis=1))
        return cls(from_p(Q[:, 0]), from_p(Q[:, 1]))

    def coords(self):
        return np.stack([to_p(self.X), to_p(self.Y)], axis=1)


def sec_wu(plane, c=WU_C) -> float:
    """Sectional curvature c |[X, Y]|^2 of an orthonormal horizontal plane."""
    if not isinstance(plane, HorizontalPlane):
        plane = HorizontalPlane(*plane)
    b = alg.bracket(plane.X, plane.Y).coeffs
    return float(c * (b @ b))


# ---------------------------------------------------------------------------
# curvature tensor on p and the chart engine used to fix the constant
# ---------------------------------------------------------------------------


def wu_curvature_tensor(c=WU_C):
    """R_abcd = c <[e_a, e_b], [e_d, e_c]> on the orthonormal basis of p."""
    C = alg.structure_table("su3")
    idx = list(SO3_PERP_IDX)
    B = C[np.ix_(idx, idx)]  # (5, 5, 8) brackets of basis pairs
    return c * np.einsum("abk,dck->abcd", B, B)


def wu_chart(fd_step=None) -> MetricField:
    """Chart t -> exp(sum t_a P_a) SO(3) around the base coset."""
    P = perp_basis()

    def metric(ts):
        out = np.empty((len(ts), 5, 5))
        for m, t in enumerate(ts):
            A = np.einsum("a,aij->ij", t, P)
            u = expm(A)
            uinv = u.conj().T
            L = np.stack([uinv @ expm_frechet(A, P[a], compute_expm=False) for a in range(5)])
            # horizontal coefficients <-i lambda_k, L_a> = -Re Tr(P_k L_a) / 2
            H = -0.5 * np.einsum("kij,aji->ak", P, L).real
            out[m] = H @ H.T
        return out

    def section(ts):
        P_ = perp_basis()
        return np.stack([expm(np.einsum("a,aij->ij", t, P_)) for t in np.atleast_2d(ts)])

    chart = ChartSpec(center="SO(3)", dim=5, section=section, fd_step=fd_step or TOL.fd_step)
    return MetricField(chart, metric, meta={"space": "wu"})


@dataclass
class WuFit:
    c: float
    max_abs_dev: float
    n_planes: int
    richardson_gap: float


def fit_wu_constant(n_planes=100, seed=0) -> WuFit:
    """Least-squares constant c with sec_FD = c |[X, Y]|^2 on random orthonormal planes."""
    res = riemann_fd(wu_chart())
    rng = np.random.default_rng(seed)
    Rb = wu_curvature_tensor(1.0)
    fd, br = [], []
    for _ in range(n_planes):
        Q = _gs2(rng.normal(size=(5, 2)))
        fd.append(sec_from_riemann(res.R, res.g, Q[:, 0], Q[:, 1]))
        br.append(float(np.einsum("abcd,a,b,c,d->", Rb, Q[:, 0], Q[:, 1], Q[:, 1], Q[:, 0])))
    fd, br = np.array(fd), np.array(br)
    c = float(fd @ br / (br @ br))
    return WuFit(c=c, max_abs_dev=float(np.max(np.abs(fd - WU_C * br))), n_planes=n_planes, richardson_gap=res.richardson_gap)


# ---------------------------------------------------------------------------
# flats
# ---------------------------------------------------------------------------


def reference_flat() -> HorizontalPlane:
    return HorizontalPlane(alg.gm(3), alg.gm(8))


def flat_plane_from_euler(x, y, z) -> HorizontalPlane:
    """Ad_r of the reference flat, r the Euler rotation with angles (x, y, z)."""
    r = alg.euler_rotation(x, y, z)
    X = alg.adjoint(r, alg.gm(3))
    Y = alg.adjoint(r, alg.gm(8))
    return HorizontalPlane.span(X, Y)


def _flat_coords_batch(angles):
    """(m, 5, 2) coordinates of Ad_r(a0) for rows (x, y, z) of angles."""
    r = alg.euler_matrix(angles[:, 0], angles[:, 1], angles[:, 2])
    B = su3_basis()
    out = []
    for k in (IDX3, IDX8):
        M = r @ B[k] @ np.swapaxes(r, -1, -2)
        out.append(-0.5 * np.einsum("kij,mji->mk", perp_basis(), M).real)
    return np.stack(out, axis=-1)


def distance_to_flat_orbit(Q, starts=64, seed=0):
    """Grassmann distance from the plane with orthonormal coords Q (5, 2) to the set of flats."""
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0, 2 * np.pi, size=(starts * 16, 3))
    d = grass_distance_orthonormal(Q[None], _flat_coords_batch(ang))
    best = np.inf
    for k in np.argsort(d, kind="stable")[:starts // 8 or 1]:
        res = minimize(
            lambda a: float(grass_distance_orthonormal(Q, _flat_coords_batch(a[None])[0]) ** 2),
            ang[k],
            method="Nelder-Mead",
            options=dict(xatol=1e-12, fatol=1e-24, maxiter=4000),
        )
        best = min(best, float(np.sqrt(max(res.fun, 0.0))))
    return best


# ---------------------------------------------------------------------------
# the trace system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceResidual:
    x: float
    y: float
    z: float
    e11: float
    e18: float
    e81: float
    e88: float

    def max_abs(self):
        return max(abs(self.e11), abs(self.e18), abs(self.e81), abs(self.e88))


def trace_closed_form(x, y, z):
    x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
    c2x, s2x, c2z, s2z = np.cos(2 * x), np.sin(2 * x), np.cos(2 * z), np.sin(2 * z)
    sy2 = np.sin(y) ** 2
    e11 = 0.25 * c2x * (3 + np.cos(2 * y)) * c2z - s2x * np.cos(y) * s2z
    e18 = -HALF_SQRT3 * c2x * sy2
    e81 = -HALF_SQRT3 * c2z * sy2
    e88 = 0.25 * (1 + 3 * np.cos(2 * y))
    return e11, e18, e81, e88


def trace_direct(x, y, z):
    """<lambda_a, Ad_r lambda_b> = Tr(lambda_a r lambda_b r^T) / 2 from dense matrices."""
    r = alg.euler_matrix(x, y, z)
    lam = alg.gellmann_matrices()
    l3, l8 = lam[IDX3], lam[IDX8]
    rt = np.swapaxes(r, -1, -2)

    def tr(a, b):
        return 0.5 * np.einsum("ij,...jk,kl,...li->...", a, r, b, rt).real

    return tr(l3, l3), tr(l3, l8), tr(l8, l3), tr(l8, l8)


def trace_system(x, y, z, tol=1e-12) -> TraceResidual:
    closed = trace_closed_form(x, y, z)
    direct = trace_direct(x, y, z)
    dev = max(abs(float(a) - float(b)) for a, b in zip(closed, direct))
    if dev > tol:
        raise ComputationIntegrityError(f"closed-form traces deviate from matrix traces by {dev:.3e} at {(x, y, z)}")
    return TraceResidual(float(x), float(y), float(z), *(float(c) for c in closed))


def trace_grid_check(n=32):
    """Max deviation between closed forms and matrix traces on an n^3 grid of [0, 2 pi)^3."""
    g = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    closed = trace_closed_form(X, Y, Z)
    direct = trace_direct(X, Y, Z)
    return float(max(np.max(np.abs(a - b)) for a, b in zip(closed, direct)))


def flat_pair_trace_matrix(r1: np.ndarray, r2: np.ndarray):
    """2x2 matrix of <Ad_r1 lambda_a, Ad_r2 lambda_b>, a, b in {3, 8}."""
    lam = alg.gellmann_matrices()
    L = [lam[IDX3], lam[IDX8]]
    return np.array([[0.5 * np.trace(r1 @ a @ r1.T @ r2 @ b @ r2.T).real for b in L] for a in L])


# ---------------------------------------------------------------------------
# infeasibility: max(|e11|, |e18|, |e81|, |e88|) stays away from zero
# ---------------------------------------------------------------------------

LIP = {  # sums of sup |partial| over (x, y, z) for each closed form
    "e11": (4.0, 1.5, 4.0),
    "e18": (np.sqrt(3.0), HALF_SQRT3, 0.0),
    "e81": (0.0, HALF_SQRT3, np.sqrt(3.0)),
    "e88": (0.0, 1.5, 0.0),
}
TWO_PI_UP = float(np.nextafter(2 * np.pi, np.inf))


def _interval_lower_bounds(lo, hi):
    X, Y, Z = (Interval(lo[:, k], hi[:, k]) for k in range(3))
    X2, Y2, Z2 = (Interval(2 * I.lo, 2 * I.hi) for I in (X, Y, Z))  # doubling is exact
    c2x, s2x, c2z, s2z = icos(X2), isin(X2), icos(Z2), isin(Z2)
    c2y, cy = icos(Y2), icos(Y)
    sy2 = isin(Y).square()
    k = Interval.point(HALF_SQRT3)
    e11 = 0.25 * c2x * (3.0 + c2y) * c2z - s2x * cy * s2z
    e18 = -(k * c2x * sy2)
    e81 = -(k * c2z * sy2)
    e88 = 0.25 * (1.0 + 3.0 * c2y)
    return np.max(np.stack([e.mig() for e in (e11, e18, e81, e88)]), axis=0)


def _lipschitz_lower_bounds(lo, hi):
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    vals = trace_closed_form(c[:, 0], c[:, 1], c[:, 2])
    out = []
    for name, v in zip(("e11", "e18", "e81", "e88"), vals):
        out.append(np.abs(v) - r @ np.asarray(LIP[name]) - 1e-12)
    return np.max(np.stack(out), axis=0)


@dataclass
class InfeasibilityCertificate:
    method: str
    resolution: int
    depth: int
    target: float
    certified: bool
    L: float  # certified lower bound (capped at target when certified)
    leaf_min: float  # smallest lower bound over final leaves
    boxes_evaluated: int
    worst_boxes: list = field(default_factory=list)
    spot_value: float = 0.0
    origin_residual: float = 0.0

    def as_dict(self):
        return {
            "method": self.method,
            "resolution": self.resolution,
            "depth": self.depth,
            "target": self.target,
            "certified": self.certified,
            "L": self.L,
            "leaf_min": self.leaf_min,
            "boxes_evaluated": self.boxes_evaluated,
            "worst_boxes": self.worst_boxes,
            "spot_value": self.spot_value,
            "origin_residual": self.origin_residual,
        }


def infeasibility_certificate(resolution=1024, method="interval", target=0.24, keep_worst=8):
    """Branch and bound over [0, 2 pi]^3 for a lower bound on max |e_ab|.

    ``resolution`` is the finest number of cells per axis.  Writing it as
    base * 2^depth with base odd, the cube starts as base^3 boxes and a box
    whose bound is below ``target`` is split into eight, at most ``depth``
    times.  L is min(target, smallest leaf bound); doubling the resolution adds
    one level to the same tree, so L never decreases.
    """
    if method not in ("interval", "grid-lipschitz"):
        raise ValueError(f"unknown method {method!r}")
    if int(resolution) != resolution or resolution < 1:
        raise ValueError("resolution must be a positive integer")
    resolution = int(resolution)
    depth = (resolution & -resolution).bit_length() - 1
    base = resolution >> depth
    bound = _interval_lower_bounds if method == "interval" else _lipschitz_lower_bounds
    w = 2 * np.pi / base
    k = np.arange(base)
    edges_lo = np.nextafter(k * w, -np.inf)
    edges_hi = np.nextafter((k + 1) * w, np.inf)
    edges_hi[-1] = max(edges_hi[-1], TWO_PI_UP)
    edges_lo[0] = 0.0
    I, J, K = np.meshgrid(k, k, k, indexing="ij")
    lo = np.stack([edges_lo[I.ravel()], edges_lo[J.ravel()], edges_lo[K.ravel()]], axis=1)
    hi = np.stack([edges_hi[I.ravel()], edges_hi[J.ravel()], edges_hi[K.ravel()]], axis=1)
    evaluated = 0
    leaves_lo, leaves_hi, leaves_b = [], [], []
    settled_min = np.inf
    for level in range(depth + 1):
        b = bound(lo, hi)
        evaluated += len(b)
        ok = b >= target
        if np.any(ok):
            settled_min = min(settled_min, float(np.min(b[ok])))
        bad = ~ok
        lo, hi, b = lo[bad], hi[bad], b[bad]
        if level == depth or len(b) == 0:
            leaves_lo.append(lo)
            leaves_hi.append(hi)
            leaves_b.append(b)
            break
        mid = 0.5 * (lo + hi)
        kids_lo, kids_hi = [], []
        for bits in range(8):
            sel = np.array([(bits >> d) & 1 for d in range(3)], dtype=bool)
            kids_lo.append(np.where(sel, mid, lo))
            kids_hi.append(np.where(sel, hi, mid))
        lo = np.concatenate(kids_lo)
        hi = np.concatenate(kids_hi)
    fl_lo = np.concatenate(leaves_lo)
    fl_hi = np.concatenate(leaves_hi)
    fl_b = np.concatenate(leaves_b)
    failing_min = float(np.min(fl_b)) if len(fl_b) else np.inf
    leaf_min = min(settled_min, failing_min)
    certified = len(fl_b) == 0
    L = target if certified else max(failing_min, 0.0)
    order = np.lexsort((fl_lo[:, 2], fl_lo[:, 1], fl_lo[:, 0], fl_b))[:keep_worst]
    worst = [
        {"lo": [float(v) for v in fl_lo[i]], "hi": [float(v) for v in fl_hi[i]], "bound": float(fl_b[i])} for i in order
    ]
    return InfeasibilityCertificate(
        method=method,
        resolution=resolution,
        depth=depth,
        target=target,
        certified=certified,
        L=float(L),
        leaf_min=float(leaf_min),
        boxes_evaluated=int(evaluated),
        worst_boxes=worst,
        spot_value=spot_e11(),
        origin_residual=trace_system(0.0, 0.0, 0.0).max_abs(),
    )


def spot_e11():
    """|e11| where cos 2x = cos 2z = 0 and cos^2 y = 1/3."""
    y = np.arccos(1.0 / np.sqrt(3.0))
    return abs(trace_system(np.pi / 4, y, np.pi / 4).e11)


# ---------------------------------------------------------------------------
# biorthogonal curvature at the base coset
# ---------------------------------------------------------------------------


def _complement_min(R, Q):
    """Exact min of sec over planes of the 3-space Q^perp (smallest eigenvalue of a 3x3 form)."""
    W = _perp(Q)  # (5, 3) orthonormal
    Rw = np.einsum("abcd,ai,bj,ck,dl->ijkl", R, W, W, W, W)
    # plane with unit normal n has bivector *n; rows list (w2^w3, w3^w1, w1^w2)
    pairs = ((1, 2), (2, 0), (0, 1))
    S = np.array([[Rw[i, j, l, k] for (k, l) in pairs] for (i, j) in pairs])
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    return float(vals[0]), vecs[:, 0], W


def _sec_q(R, Q):
    return float(np.einsum("abcd,a,b,c,d->", R, Q[:, 0], Q[:, 1], Q[:, 1], Q[:, 0]))


@dataclass
class WuBiorth:
    value: float
    sigma: np.ndarray
    sigma_prime: np.ndarray
    grid_min: float
    refined_candidates: int
    crosscheck: float  # grid + NM evaluation at the argmin via the generic minimiser
    sec_min: float  # unconstrained single-plane minimum
    sec_argmin_flat_distance: float

    def as_dict(self):
        return {
            "value": self.value,
            "sigma": self.sigma.tolist(),
            "sigma_prime": self.sigma_prime.tolist(),
            "grid_min": self.grid_min,
            "refined_candidates": self.refined_candidates,
            "crosscheck": self.crosscheck,
            "sec_min": self.sec_min,
            "sec_argmin_flat_distance": self.sec_argmin_flat_distance,
        }


def biorth_wu_at_base(planes=4096, complements=100, refine=5, c=WU_C) -> WuBiorth:
    """Minimum biorthogonal curvature over all planes at the base coset.

    Coarse stage: ``planes`` lattice planes times ``complements`` normal
    directions in each complement.  The best ``refine`` planes are polished by
    Nelder-Mead over sigma, with the inner minimum over sigma^perp taken exactly.
    """
    R = wu_curvature_tensor(c)
    lat = grassmann_lattice(planes, 5)
    sec_s = np.einsum("abcd,ma,mb,mc,md->m", R, lat[..., 0], lat[..., 1], lat[..., 1], lat[..., 0])
    normals = fibonacci_hemisphere(complements)
    coarse = np.empty(planes)
    for m in range(planes):
        W = _perp(lat[m])
        # plane in W with normal n: spanned by the two frame vectors orthogonal to n
        A, B = _normal_planes(normals)
        U, V = W @ A.T, W @ B.T
        sp = np.einsum("abcd,am,bm,cm,dm->m", R, U, V, V, U)
        coarse[m] = 0.5 * (sec_s[m] + sp.min())
    grid_min = float(coarse.min())
    best = None
    for m in np.argsort(coarse, kind="stable")[:refine]:
        Q0 = lat[m]
        P = _perp(Q0)

        def frame(z, Q0=Q0, P=P):
            return _gs2(Q0 + P @ z.reshape(3, 2))

        def obj(z):
            Q = frame(z)
            return 0.5 * (_sec_q(R, Q) + _complement_min(R, Q)[0])

        res = minimize(obj, np.zeros(6), method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14, maxiter=6000))
        Q = frame(res.x)
        val = obj(res.x)
        if best is None or val < best[0]:
            best = (val, Q)
    val, Q = best
    lam, n, W = _complement_min(R, Q)
    A, B = _normal_planes(n[None])
    Qp = np.stack([W @ A[0], W @ B[0]], axis=1)
    sigma = TwoPlane.span("base", Q[:, 0], Q[:, 1], np.eye(5))
    cc = biorthogonal_curvature("base", sigma, lambda U, V: _sec_rows(R, U, V))
    smin, sQ = _min_plain_sec(R)
    return WuBiorth(
        value=float(val),
        sigma=Q,
        sigma_prime=Qp,
        grid_min=grid_min,
        refined_candidates=int(refine),
        crosscheck=float(cc.value),
        sec_min=smin,
        sec_argmin_flat_distance=distance_to_flat_orbit(sQ),
    )


def _normal_planes(normals):
    """For unit normals n in R^3, two orthonormal vectors spanning n^perp (rows)."""
    normals = np.asarray(normals, dtype=float)
    helper = np.where(np.abs(normals[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    a = np.cross(normals, helper)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(normals, a)
    return a, b


def _sec_rows(R, U, V):
    num = np.einsum("abcd,ma,mb,mc,md->m", R, U, V, V, U)
    den = np.einsum("ma,ma->m", U, U) * np.einsum("ma,ma->m", V, V) - np.einsum("ma,ma->m", U, V) ** 2
    return num / den


def _min_plain_sec(R, starts=16):
    lat = grassmann_lattice(1024, 5)
    vals = np.einsum("abcd,ma,mb,mc,md->m", R, lat[..., 0], lat[..., 1], lat[..., 1], lat[..., 0])
    from .grassmann import _polish_plane

    best = (np.inf, None)
    for m in np.argsort(vals, kind="stable")[:starts]:
        v, Q = _polish_plane(R, lat[m])
        if v < best[0]:
            best = (v, Q)
    return float(best[0]), best[1]


def sec_wu_chart(u, v, fit_field=None):
    """Sectional curvature from the chart engine for coordinate vectors u, v in p."""
    res = riemann_fd(fit_field or wu_chart())
    gram = (u @ res.g @ u) * (v @ res.g @ v) - (u @ res.g @ v) ** 2
    if gram < TOL.degenerate_gram:
        raise DegeneratePlane("degenerate plane")
    return sec_from_riemann(res.R, res.g, u, v)

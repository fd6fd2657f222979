"""Conformal deformations g_s = (1 + s phi) g_W concentrated near the four flat spheres.

phi = -sum_i chi_i psi_i, with psi_i a squared distance to the sphere S_i and
chi_i a bump equal to 1 on the inner tube and 0 outside the outer tube.  Two
versions of psi_i are available:

* ``geodesic``: the true squared g_W distance, by shooting horizontal
  geodesics of G x G from the normal bundle of S_i;
* ``synthetic``: A_i delta^2 + B_i c, with delta the angular offset of
  (Re p, Re v) from the sphere's direction and c = 1 - |Re p|^2 - |Re v|^2.
  A_i, B_i are fitted so that Hess psi_i = 2 g_W on the normal space at S_i,
  which is all the first-variation argument uses.

Curvature of g_s comes from the conformal-change formula
R_s = e^{2w} (R - T o g), T = Hess w - dw dw + |dw|^2 g / 2, e^{2w} = 1 + s phi,
evaluated on the chart tensors of g_W.  It is cross-checked against the
finite-difference engine applied to the deformed metric field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from . import algebra as alg
from .algebra import qconj, qmul
from .config import DEFORM, TOL
from .engines import MetricField, riemann_fd, sec_from_riemann
from .parallel import WorkerPool, pmap
from .grassmann import (
    _gs2,
    grassmann_lattice,
    min_sec_planes,
    orthonormal_curvature,
    pair_min,
    plane_distance,
    TwoPlane,
)
from .wilking import (
    FlatLocusAtlas,
    ONE,
    S2xS3Point,
    _apply,
    WilkingCurvature,
    chart_jacobian,
    horizontal_lifts,
    orbit_representative,
    singular_orbit_point,
    sphere_frames_chart,
    total_metric,
    wilking_chart,
)


class PositivityViolation(ValueError):
    pass


class NotFlat(ValueError):
    pass


class KThetaViolation(ValueError):
    pass


class GeodesicFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# bump profile
# ---------------------------------------------------------------------------


def _f(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def bump_profile(d, r0, r1):
    """Smooth step: 1 for d <= r0, 0 for d >= r1, built from exp(-1/x)."""
    if not 0 < r0 < r1:
        raise ValueError("need 0 < r0 < r1")
    d = np.asarray(d, dtype=float)
    a = _f(r1 - d)
    b = _f(d - r0)
    return a / (a + b)


# ---------------------------------------------------------------------------
# sphere data
# ---------------------------------------------------------------------------


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _delta_c(X, alpha):
    p0, v0 = X[..., 0], X[..., 4]
    return _wrap(np.arctan2(v0, p0) - alpha), 1.0 - p0 * p0 - v0 * v0


def _chart_hessian(fun, field: MetricField, h=1e-3):
    """Value, gradient and coordinate Hessian at t = 0 of fun(section(t)), Richardson over h, h/2."""
    n = field.dim
    E = np.eye(n)
    offs = [np.zeros(n)]
    for a in range(n):
        offs += [E[a], -E[a]]
        for b in range(a + 1, n):
            offs += [E[a] + E[b], E[a] - E[b], -E[a] + E[b], -E[a] - E[b]]
    offs = np.array(offs)

    def one(step):
        vals = fun(field.chart.section(step * offs))
        f0 = vals[0]
        grad = np.zeros(n)
        H = np.zeros((n, n))
        k = 1
        for a in range(n):
            fp, fm = vals[k], vals[k + 1]
            grad[a] = (fp - fm) / (2 * step)
            H[a, a] = (fp - 2 * f0 + fm) / step**2
            k += 2
            for b in range(a + 1, n):
                pp, pm, mp, mm = vals[k : k + 4]
                H[a, b] = H[b, a] = (pp - pm - mp + mm) / (4 * step * step)
                k += 4
        return f0, grad, H

    f1, g1, H1 = one(h)
    _, g2, H2 = one(h / 2)
    return f1, (4 * g2 - g1) / 3, (4 * H2 - H1) / 3


@dataclass
class SphereModel:
    index: int
    alpha: float
    A: float
    B: float
    fit_residual: float  # max |A Hd + B Hc - 2 I| on the normal space at the fit point

    def psi(self, X):
        d, c = _delta_c(np.asarray(X, dtype=float), self.alpha)
        return self.A * d * d + self.B * c

    def as_dict(self):
        return dict(self.__dict__)


def fit_sphere_model(index, alpha) -> SphereModel:
    """Fit A, B so that Hess(A delta^2 + B c) = 2 g_W on the normal space of S_alpha."""
    x = singular_orbit_point(alpha, (1.0, 0.0, 0.0))
    field = wilking_chart(x)
    _, Nn = sphere_frames_chart(x, field)
    _, _, Hd = _chart_hessian(lambda X: _delta_c(X, alpha)[0] ** 2, field)
    _, _, Hc = _chart_hessian(lambda X: _delta_c(X, alpha)[1], field)
    Md, Mc = Nn.T @ Hd @ Nn, Nn.T @ Hc @ Nn
    design = np.stack([Md.ravel(), Mc.ravel()], axis=1)
    (A, B), *_ = np.linalg.lstsq(design, 2 * np.eye(3).ravel(), rcond=None)
    res = float(np.max(np.abs(A * Md + B * Mc - 2 * np.eye(3))))
    return SphereModel(index, float(alpha), float(A), float(B), res)


# ---------------------------------------------------------------------------
# horizontal geodesics of (G x G, g + g) and the exponential map of g_W
# ---------------------------------------------------------------------------

_MT = None


def _metric_data():
    global _MT
    if _MT is None:
        M = total_metric()
        _MT = (M, np.linalg.inv(M))
    return _MT


def _ad_matrix(w):
    """ad_w on the 12-dimensional algebra (four copies of Im H, [u, v] = 2 u x v)."""
    A = np.zeros((12, 12))
    for k in range(4):
        u = w[3 * k : 3 * k + 3]
        A[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = 2 * np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return A


def _rhs(_t, y):
    M, Minv = _metric_data()
    q = y[:16].reshape(4, 4)
    w = y[16:]
    dq = qmul(q, alg.pure(w.reshape(4, 3)))
    dw = Minv @ (_ad_matrix(w).T @ (M @ w))
    return np.concatenate([dq.ravel(), dw])


def total_geodesic(a, b, w0, T=1.0, rtol=1e-12, atol=1e-13):
    """Endpoint (a, b) of the left-invariant geodesic with left-trivialised initial velocity w0."""
    y0 = np.concatenate([np.asarray(a).ravel(), np.asarray(b).ravel(), np.asarray(w0, dtype=float)])
    sol = solve_ivp(_rhs, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise GeodesicFailure(sol.message)
    q = sol.y[:16, -1].reshape(4, 4)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q[:2], q[2:], sol.y[16:, -1]


def _project(a, b):
    """Ambient image of the coset of (a, b)."""
    p, v = _apply(qmul(qconj(a), b))
    return np.concatenate([p, v])


def exp_map(x: S2xS3Point, u, field: MetricField | None = None, T=1.0):
    """g_W-exponential of the chart vector u at x (chart = wilking_chart(x)), as an ambient 8-vector."""
    field = field or wilking_chart(x)
    W = horizontal_lifts(field)
    a = np.array([ONE, ONE])
    a2, b2, _ = total_geodesic(a, field.chart.center, W @ np.asarray(u, dtype=float), T=T)
    return _project(a2, b2)


def _seed_normal(x: S2xS3Point, alpha):
    n = np.sin(alpha) * x.p[1:] - np.cos(alpha) * x.v[1:]
    nn = np.linalg.norm(n)
    return n / nn if nn > 1e-12 else np.array([1.0, 0.0, 0.0])


@dataclass
class ShootingResult:
    psi: float
    foot: np.ndarray  # ambient foot point on the sphere
    coeffs: np.ndarray  # normal coefficients in the g_W-orthonormal normal frame
    residual: float
    iterations: int


def dist_sq_to_sphere(x: S2xS3Point, alpha, seed_n=None, tol=1e-13, max_iter=40) -> ShootingResult:
    """Squared g_W distance from x to S_alpha by Gauss-Newton shooting of normal geodesics."""
    n0 = _seed_normal(x, alpha) if seed_n is None else np.asarray(seed_n, dtype=float)
    y0 = singular_orbit_point(alpha, n0)
    field = wilking_chart(y0)
    _, Nn = sphere_frames_chart(y0, field)
    Wl = horizontal_lifts(field) @ Nn  # (12, 3) lifts of the normal frame
    b0 = field.chart.center
    target = x.as_array()

    # rotations about n fix y0, so the foot moves in the two directions orthogonal to n
    n0 = n0 / np.linalg.norm(n0)
    E = np.linalg.svd(n0[None])[2][1:]  # (2, 3)

    def foot_rot(z):
        return alg.qexp_pure(z[:2] @ E)

    def endpoint(z):
        q = foot_rot(z)
        w = Wl @ z[2:]
        w[0:3] = alg.qrotate(q, w[0:3])
        w[3:6] = alg.qrotate(q, w[3:6])
        qc = qconj(q)
        a2, b2, _ = total_geodesic(np.stack([qc, qc]), b0, w)
        return _project(a2, b2)

    z = np.zeros(5)
    # initial normal guess from the ambient offset
    J = chart_jacobian(field)
    g0 = field(np.zeros((1, 5)))[0]
    dt = np.linalg.lstsq(J, target - y0.as_array(), rcond=None)[0]
    z[2:] = Nn.T @ g0 @ dt
    r = endpoint(z) - target
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) < tol:
            break
        h = 1e-7
        Jz = np.stack([(endpoint(z + h * e) - endpoint(z - h * e)) / (2 * h) for e in np.eye(5)], axis=1)
        step = np.linalg.lstsq(Jz, -r, rcond=None)[0]
        ns = np.linalg.norm(step)
        if ns > 0.2:
            step *= 0.2 / ns
        lam = 1.0
        while True:
            zn = z + lam * step
            rn = endpoint(zn) - target
            if np.linalg.norm(rn) < np.linalg.norm(r) or lam < 1e-4:
                break
            lam *= 0.5
        z, r = zn, rn
    res = float(np.linalg.norm(r))
    if res > 1e-10:
        raise GeodesicFailure(f"shooting did not converge: residual {res:.3e} after {it} iterations")
    q = foot_rot(z)
    foot = np.concatenate([qmul(qmul(q, y0.p), qconj(q)), qmul(qmul(q, y0.v), qconj(q))])
    coeffs = z[2:]
    return ShootingResult(float(coeffs @ coeffs), foot, coeffs, res, it)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


@dataclass
class PotentialField:
    spheres: list  # SphereModel per sphere
    r0: float = DEFORM.r0
    r1: float = DEFORM.r1
    mode: str = "synthetic"

    def __post_init__(self):
        if not 0 < self.r0 < self.r1:
            raise ValueError("need 0 < r0 < r1")
        if self.mode not in ("synthetic", "geodesic"):
            raise ValueError(f"unknown potential mode {self.mode!r}")

    def psi(self, X, i):
        """psi_i on ambient points X (..., 8)."""
        X = np.asarray(X, dtype=float)
        if self.mode == "synthetic":
            return self.spheres[i].psi(X)
        flat = X.reshape(-1, 8)
        out = np.array([self._psi_geodesic(row, i) for row in flat])
        return out.reshape(X.shape[:-1])

    def _psi_geodesic(self, row, i):
        sp = self.spheres[i]
        # only points inside the outer tube matter; the synthetic value screens the rest
        if sp.psi(row) > (1.5 * self.r1) ** 2:
            return float(sp.psi(row))
        return dist_sq_to_sphere(S2xS3Point.from_array(row), sp.alpha).psi

    def chi(self, X, i):
        return bump_profile(np.sqrt(np.maximum(self.psi(X, i), 0.0)), self.r0, self.r1)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1])
        for i in range(len(self.spheres)):
            psi = self.spheres[i].psi(X)
            near = psi < (1.5 * self.r1) ** 2
            if not np.any(near):
                continue
            ps = self.psi(X[near], i) if self.mode == "geodesic" else psi[near]
            out[near] -= bump_profile(np.sqrt(np.maximum(ps, 0.0)), self.r0, self.r1) * ps
        return out

    def max_abs(self, samples=20001):
        """sup |phi| <= max_d chi(d) d^2 (tubes are disjoint)."""
        d = np.linspace(0, self.r1, samples)
        return float(np.max(bump_profile(d, self.r0, self.r1) * d * d))

    def s_bound(self):
        """1 + s phi > 0 for all s below this."""
        return 1.0 / self.max_abs()

    def as_dict(self):
        return {"r0": self.r0, "r1": self.r1, "mode": self.mode, "spheres": [s.as_dict() for s in self.spheres]}


def potential_from_atlas(atlas: FlatLocusAtlas | None = None, r0=DEFORM.r0, r1=DEFORM.r1, mode=DEFORM.potential):
    """Sphere models for the atlas spheres (or for the four boundary orbits at alpha = k pi/2)."""
    if atlas is None:
        alphas = [k * np.pi / 2 for k in range(4)]
    else:
        alphas = [s.alpha for s in atlas.spheres]
    return PotentialField([fit_sphere_model(i, a) for i, a in enumerate(alphas)], r0, r1, mode)


def bump(x: S2xS3Point, i, potential: PotentialField):
    return float(potential.chi(x.as_array(), i))


# ---------------------------------------------------------------------------
# deformed metric and its curvature
# ---------------------------------------------------------------------------


@dataclass
class DeformConfig:
    s: float
    theta: float = DEFORM.theta
    r0: float = DEFORM.r0
    r1: float = DEFORM.r1
    atlas: FlatLocusAtlas | None = None

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("s must be >= 0")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if not 0 < self.r0 < self.r1:
            raise ValueError("need 0 < r0 < r1")

    def check_positive(self, potential: PotentialField):
        if self.s * potential.max_abs() >= 1.0:
            raise PositivityViolation(f"1 + s phi reaches {1 - self.s * potential.max_abs():.3e}")


def deformed_metric(field: MetricField, potential: PotentialField, s) -> MetricField:
    """Chart field of g_s = (1 + s phi) g_W over the chart of ``field``."""
    if s * potential.max_abs() >= 1.0:
        raise PositivityViolation("1 + s phi is not positive")
    section = field.chart.section

    def g(ts):
        return (1.0 + s * potential(section(ts)))[:, None, None] * field(ts)

    return MetricField(field.chart, g, meta={**field.meta, "deformed_s": s})


def kulkarni_nomizu(h, k):
    return (
        np.einsum("ad,bc->abcd", h, k)
        + np.einsum("bc,ad->abcd", h, k)
        - np.einsum("ac,bd->abcd", h, k)
        - np.einsum("bd,ac->abcd", h, k)
    )


@dataclass
class ConformalJet:
    """Chart data at one point: g_W curvature and metric, Christoffels, and the 2-jet of phi.

    Plain arrays only, so it pickles cheaply for worker processes.
    """

    R: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    phi: float
    dphi: np.ndarray
    hess_phi: np.ndarray  # covariant Hessian of phi for g_W

    def tensor(self, s):
        """(R_s, g_s) in chart coordinates."""
        e2w = 1.0 + s * self.phi
        if e2w <= 0:
            raise PositivityViolation("1 + s phi is not positive")
        if s == 0:
            return self.R, self.g
        dw = s * self.dphi / (2 * e2w)
        hw = s / (2 * e2w) * self.hess_phi - s * s / (2 * e2w**2) * np.outer(self.dphi, self.dphi)
        ginv = np.linalg.inv(self.g)
        T = hw - np.outer(dw, dw) + 0.5 * (dw @ ginv @ dw) * self.g
        return e2w * (self.R - kulkarni_nomizu(T, self.g)), e2w * self.g

    def sec(self, s, u, v):
        R, g = self.tensor(s)
        return sec_from_riemann(R, g, u, v)

    def orthonormal(self, s):
        R, g = self.tensor(s)
        return orthonormal_curvature(R, g)

    def ricci_min(self, s):
        """Smallest Ricci curvature over g_s-unit vectors."""
        Ron, _ = self.orthonormal(s)
        ric = np.einsum("iabi->ab", Ron)
        return float(np.linalg.eigvalsh(0.5 * (ric + ric.T))[0])

    def first_variation(self, X, Y):
        return float(-0.5 * (X @ self.hess_phi @ X + Y @ self.hess_phi @ Y))


def conformal_jet(x: S2xS3Point, potential: PotentialField, field: MetricField | None = None, base=None):
    base = base or WilkingCurvature(x, field=field)
    gamma = base.fd.gamma
    phi, dphi, d2 = _chart_hessian(potential, base.field)
    H = d2 - np.einsum("cab,c->ab", gamma, dphi)
    return ConformalJet(base.R, base.g, gamma, float(phi), dphi, 0.5 * (H + H.T))


class DeformedCurvature(ConformalJet):
    """Curvature of g_s at x for all s, from chart data of g_W and the jet of phi."""

    def __init__(self, x: S2xS3Point, potential: PotentialField, field: MetricField | None = None):
        self.x = x
        self.potential = potential
        self.base = WilkingCurvature(x, field=field)
        self.field = self.base.field
        jet = conformal_jet(x, potential, base=self.base)
        super().__init__(jet.R, jet.g, jet.gamma, jet.phi, jet.dphi, jet.hess_phi)

    def jet(self) -> ConformalJet:
        return ConformalJet(self.R, self.g, self.gamma, self.phi, self.dphi, self.hess_phi)


def hess_along_geodesic(fun, x: S2xS3Point, X, h=2e-2, field=None):
    """d^2/dt^2 fun(exp_x(t X)) at 0, Richardson over h, h/2 (fun on ambient 8-vectors)."""
    field = field or wilking_chart(x)
    X = np.asarray(X, dtype=float)
    f0 = float(fun(x.as_array()[None])[0])

    def d2(step):
        fp = float(fun(exp_map(x, step * X, field)[None])[0])
        fm = float(fun(exp_map(x, -step * X, field)[None])[0])
        return (fp - 2 * f0 + fm) / step**2

    a, b = d2(h), d2(h / 2)
    return (4 * b - a) / 3


def _check_orthonormal(g, X, Y, tol=1e-8):
    if abs(X @ g @ X - 1) > tol or abs(Y @ g @ Y - 1) > tol or abs(X @ g @ Y) > tol:
        raise ValueError("X, Y must be g_W-orthonormal")


def first_variation_sec(x: S2xS3Point, X, Y, potential: PotentialField, require_flat=True, curvature=None):
    """-(Hess phi(X, X) + Hess phi(Y, Y)) / 2, the s-derivative at 0 of sec_{g_s} on a flat plane."""
    dc = curvature or DeformedCurvature(x, potential)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _check_orthonormal(dc.g, X, Y)
    if require_flat:
        sec0 = sec_from_riemann(dc.R, dc.g, X, Y)
        if sec0 > TOL.flat:
            raise NotFlat(f"plane has sec_gW = {sec0:.3e} > {TOL.flat:.1e}")
    return dc.first_variation(X, Y)


def sec_derivative_fd(x: S2xS3Point, X, Y, potential: PotentialField, ds=1e-3):
    """Central difference in s of sec_{g_s}(X, Y) using the chart engine on the deformed fields."""
    field = wilking_chart(x)
    vals = []
    for s in (ds, -ds):
        res = riemann_fd(deformed_metric(field, potential, s))
        vals.append(sec_from_riemann(res.R, res.g, X, Y))
    return (vals[0] - vals[1]) / (2 * ds)


def hessian_identity_check(x: S2xS3Point, X, potential: PotentialField, normal=None, field=None, method="geodesic"):
    """|Hess phi(X, X) + 2 |X_perp|^2| at a sphere point, X a g_W-unit chart vector."""
    field = field or wilking_chart(x)
    if normal is None:
        _, normal = sphere_frames_chart(x, field)
    g = field(np.zeros((1, 5)))[0]
    X = np.asarray(X, dtype=float)
    xp = normal.T @ g @ X
    if method == "geodesic":
        H = hess_along_geodesic(potential, x, X, field=field)
    else:
        H = float(X @ DeformedCurvature(x, potential, field=field).hess_phi @ X)
    return abs(H + 2 * float(xp @ xp)), H, float(xp @ xp)


def normal_norm_sq(g, normal, X):
    c = normal.T @ g @ X
    return float(c @ c)


def f_eval(s, x: S2xS3Point, sigma: TwoPlane, sigma_prime: TwoPlane, potential: PotentialField, theta=DEFORM.theta, curvature=None):
    """Average of sec_{g_s} over a pair in K_theta (planes in chart coordinates at x)."""
    if plane_distance(sigma, sigma_prime) < theta:
        raise KThetaViolation("planes are closer than theta")
    dc = curvature or DeformedCurvature(x, potential)
    R, g = dc.tensor(s)
    return 0.5 * (sec_from_riemann(R, g, sigma.u, sigma.v) + sec_from_riemann(R, g, sigma_prime.u, sigma_prime.v))


def df_ds_positivity(x: S2xS3Point, sigma: TwoPlane, sigma_prime: TwoPlane, normal=None, field=None, flat_tol=TOL.flat):
    """Sum of |.|^2 of the normal components of both orthonormal frames (flat planes at a sphere point)."""
    field = field or wilking_chart(x)
    if normal is None:
        _, normal = sphere_frames_chart(x, field)
    if plane_distance(sigma, sigma_prime) < 1e-8:
        raise ValueError("the two planes coincide")
    wc = WilkingCurvature(x, field=field)
    for pl in (sigma, sigma_prime):
        sec0 = wc.sec(pl.u, pl.v)
        if sec0 > flat_tol:
            raise NotFlat(f"plane has sec_gW = {sec0:.3e}")
    g = wc.g
    return sum(normal_norm_sq(g, normal, V) for V in (sigma.u, sigma.v, sigma_prime.u, sigma_prime.v))


# ---------------------------------------------------------------------------
# scans over K_theta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SStarConfig:
    theta: float = DEFORM.theta
    r0: float = DEFORM.r0
    r1: float = DEFORM.r1
    safety: float = DEFORM.s_safety
    tube_radii: tuple = (0.0, 0.03, 0.06, 0.1, 0.13, 0.16, 0.19, 0.22, 0.25)
    tube_angles: int = 5  # directions in the orbit half-disk around each sphere
    global_rings: int = 5
    global_angles: int = 16
    pair_planes: int = 400
    pair_low: int = 80
    pair_refine: int = 3
    halvings: int = 40
    bisections: int = 2
    batch: int = 8  # early-exit granularity of a failing pass; fixed so results do not depend on --jobs
    # (p, v) -> (-p, -v) is an isometry fixing phi and swapping S_0 <-> S_2, S_1 <-> S_3
    use_symmetry: bool = True
    potential: str = "synthetic"

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if min(self.tube_angles, self.global_rings, self.global_angles, self.pair_planes) < 2:
            raise ValueError("resolutions must be >= 2")
        if not 0 < self.r0 < self.r1:
            raise ValueError("need 0 < r0 < r1")

    def as_dict(self):
        d = dict(self.__dict__)
        d["tube_radii"] = list(self.tube_radii)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "tube_radii" in d:
            d["tube_radii"] = tuple(d["tube_radii"])
        return cls(**d)


def tube_samples(potential: PotentialField, cfg: SStarConfig):
    """Orbit-disk points (p0, v0) around each sphere at prescribed values of psi."""
    out = []
    betas = np.linspace(0.0, np.pi, cfg.tube_angles)
    spheres = potential.spheres[:2] if cfg.use_symmetry and len(potential.spheres) == 4 else potential.spheres
    for sp in spheres:
        for d in cfg.tube_radii:
            for beta in betas if d > 0 else betas[:1]:
                delta = d * np.cos(beta) / np.sqrt(sp.A)
                c = (d * np.sin(beta)) ** 2 / sp.B
                rho = np.sqrt(max(0.0, 1.0 - c))
                ang = sp.alpha + delta
                out.append((sp.index, float(d), float(beta), float(rho * np.cos(ang)), float(rho * np.sin(ang))))
    return out


def global_samples(cfg: SStarConfig):
    pts = [(0.0, 0.0)]
    for j in range(1, cfg.global_rings + 1):
        rho = j / cfg.global_rings
        for k in range(cfg.global_angles):
            a = 2 * np.pi * (k + 0.5 * (j % 2)) / cfg.global_angles
            if cfg.use_symmetry and not 0 <= a < np.pi - 1e-12:
                continue
            pts.append((rho * np.cos(a), rho * np.sin(a)))
    return pts


@dataclass
class SamplePoint:
    key: tuple
    p0: float
    v0: float
    jet: ConformalJet

    def witness(self):
        return {"key": list(self.key), "invariants": [self.p0, self.v0]}


def _jet_worker(item):
    p0, v0, potential = item
    return conformal_jet(orbit_representative(p0, v0), potential)


def prepare_points(potential: PotentialField, cfg: SStarConfig, jobs=1):
    """Chart jets at the tube samples and at the global samples outside every outer tube."""
    tube_keys = [(("tube", i, round(d, 12), round(b, 12)), p0, v0) for i, d, b, p0, v0 in tube_samples(potential, cfg)]
    glob_keys = []
    for k, (p0, v0) in enumerate(global_samples(cfg)):
        psi = np.array([sp.psi(orbit_representative(p0, v0).as_array()) for sp in potential.spheres])
        entry = (("global", k), p0, v0)
        (tube_keys if np.any(psi < potential.r1**2 * (1 + 1e-9)) else glob_keys).append(entry)
    keys = tube_keys + glob_keys
    jets = pmap(_jet_worker, [(p0, v0, potential) for _, p0, v0 in keys], jobs)
    pts = [SamplePoint(k, p0, v0, j) for (k, p0, v0), j in zip(keys, jets)]
    return pts[: len(tube_keys)], pts[len(tube_keys) :]


@lru_cache(maxsize=8)
def _lattice(n):
    return grassmann_lattice(n, 5)


def _pair_worker(item):
    jet, s, cfg = item
    Ron, Linv = jet.orthonormal(s)
    r = pair_min(Ron, cfg.theta, n_planes=cfg.pair_planes, n_low=cfg.pair_low, refine=cfg.pair_refine, lattice=_lattice(cfg.pair_planes))
    return r.value, r.distance, (Linv @ r.frames[0]).tolist(), (Linv @ r.frames[1]).tolist()


@dataclass
class SStarCertificate:
    theta: float
    success: bool
    s_star: float
    s_max: float
    min_f: float
    argmin: dict
    min_f_s0: float
    argmin_s0: dict
    global_min_f: float
    global_argmin: dict
    tube_success: bool
    tube_points: int
    global_points: int
    history: list
    config: dict
    potential: dict

    def as_dict(self):
        return dict(self.__dict__)


class _PassEvaluator:
    """min over tube samples of the pair minimum at a given s, in fixed-size batches."""

    def __init__(self, points, cfg: SStarConfig, pool: WorkerPool):
        self.points = points
        self.cfg = cfg
        self.pool = pool
        self.order = list(range(len(points)))

    def __call__(self, s, full):
        best = (np.inf, {})
        for start in range(0, len(self.order), self.cfg.batch):
            idx = self.order[start : start + self.cfg.batch]
            res = self.pool.map(_pair_worker, [(self.points[i].jet, s, self.cfg) for i in idx])
            failing = []
            for i, (val, dist, A, B) in zip(idx, res):
                if val < best[0]:
                    best = (val, {**self.points[i].witness(), "s": s, "distance": dist, "pair": [A, B]})
                if val <= 0:
                    failing.append(i)
            if failing and not full:
                # failing samples go first next time, so later failing passes stop early
                self.order = failing + [i for i in self.order if i not in failing]
                return best
        return best


def find_s_star(potential: PotentialField, cfg: SStarConfig | None = None, prepared=None, jobs=1) -> SStarCertificate:
    """Largest s on a halving/bisection ladder with min over sampled K_theta of f(s, .) > 0."""
    cfg = cfg or SStarConfig()
    with WorkerPool(jobs) as pool:
        tube, glob = prepared or prepare_points(potential, cfg, jobs=jobs)
        # g_s = g_W at the global samples, so one evaluation at s = 0 covers every s
        gmin, garg = _PassEvaluator(glob, cfg, pool)(0.0, True)
        evaluate = _PassEvaluator(tube, cfg, pool)
        s0min, s0arg = evaluate(0.0, True)
        s_max = cfg.safety * potential.s_bound()
        history = []
        s_pass, s_fail, best = None, None, None
        s = s_max
        for _ in range(cfg.halvings + 1):
            val, arg = evaluate(s, False)
            if val > 0:
                val, arg = evaluate(s, True)
            history.append({"s": s, "min_f": val})
            if val > 0:
                s_pass, best = s, (val, arg)
                break
            s_fail = s
            s *= 0.5
        if s_pass is not None and s_fail is not None:
            lo, hi = s_pass, s_fail
            for _ in range(cfg.bisections):
                mid = 0.5 * (lo + hi)
                val, arg = evaluate(mid, False)
                if val > 0:
                    val, arg = evaluate(mid, True)
                history.append({"s": mid, "min_f": val})
                if val > 0:
                    lo, best = mid, (val, arg)
                else:
                    hi = mid
            s_pass = lo
    success = s_pass is not None and gmin > 0
    if best is not None:
        min_f, argmin = (best[0], best[1]) if best[0] <= gmin else (gmin, garg)
    else:
        min_f, argmin = float("nan"), {}
    return SStarCertificate(
        theta=cfg.theta,
        success=bool(success),
        s_star=float(s_pass) if s_pass is not None else 0.0,
        s_max=float(s_max),
        min_f=float(min_f),
        argmin=argmin,
        min_f_s0=float(min(s0min, gmin)),
        argmin_s0=s0arg if s0min <= gmin else garg,
        global_min_f=float(gmin),
        global_argmin=garg,
        tube_success=s_pass is not None,
        tube_points=len(tube),
        global_points=len(glob),
        history=history,
        config=cfg.as_dict(),
        potential=potential.as_dict(),
    )


def min_f_at(s, cfg: SStarConfig, prepared, jobs=1):
    """min over the sampled K_theta at a fixed s (full pass) and its witness."""
    tube, glob = prepared
    with WorkerPool(jobs) as pool:
        a = _PassEvaluator(tube, cfg, pool)(s, True)
        b = _PassEvaluator(glob, cfg, pool)(0.0, True)
    return a if a[0] <= b[0] else b


@dataclass
class NegativePlane:
    found: bool
    value: float
    invariants: list
    plane: list  # chart coordinates (5, 2) at orbit_representative(*invariants)
    reevaluated: float

    def as_dict(self):
        return dict(self.__dict__)


def _single_worker(item):
    jet, s = item
    Ron, Linv = jet.orthonormal(s)
    m, Q = min_sec_planes(Ron)
    return float(m), (Linv @ Q).tolist()


def negative_plane_search(s, potential: PotentialField, prepared, jobs=1) -> NegativePlane:
    """Most negative sec_{g_s} over planes at the sampled tube points."""
    tube, _ = prepared
    res = pmap(_single_worker, [(p.jet, s) for p in tube], jobs)
    k = min(range(len(res)), key=lambda i: (res[i][0], i))
    m, Q = res[k]
    pt = tube[k]
    Q = np.array(Q)
    again = conformal_jet(orbit_representative(pt.p0, pt.v0), potential).sec(s, Q[:, 0], Q[:, 1])
    return NegativePlane(bool(m < 0), m, [pt.p0, pt.v0], Q.tolist(), float(again))


@dataclass
class RicciScan:
    s: float
    min_ricci: float
    argmin: list
    points: int

    def as_dict(self):
        return dict(self.__dict__)


def ricci_positivity_scan(s, prepared) -> RicciScan:
    """Smallest eigenvalue of Ric_{g_s} (exact over directions) over the sampled points."""
    tube, glob = prepared
    vals = [(p.jet.ricci_min(s), i, p) for i, p in enumerate(tube)] + [(p.jet.ricci_min(0.0), len(tube) + i, p) for i, p in enumerate(glob)]
    r, _, p = min(vals, key=lambda t: (t[0], t[1]))
    return RicciScan(float(s), float(r), [p.p0, p.v0], len(vals))


# ---------------------------------------------------------------------------
# flat configurations at the spheres
# ---------------------------------------------------------------------------


@dataclass
class FlatPairScan:
    min_value: float
    count: int
    max_formula_gap: float  # |sum of first variations - sum of normal components|
    records: list = field(default_factory=list)

    def as_dict(self):
        return dict(self.__dict__)


def flat_family(Ron, Q1, distances, tol=TOL.flat):
    """Flat planes at prescribed minimal distances from the flat plane Q1."""
    from .grassmann import min_sec_far_from

    out = []
    for d in distances:
        m, Q = min_sec_far_from(Ron, Q1, d)
        if Q is not None and m <= tol:
            out.append((float(d), Q))
    return out


def flat_pair_scan(atlas: FlatLocusAtlas, potential: PotentialField, theta=DEFORM.theta, per_sphere=3, distances=None):
    """df/ds at s = 0 for pairs of flat planes at atlas points, with the first-variation cross-check."""
    distances = distances if distances is not None else (theta, 2 * theta, 4 * theta, 8 * theta)
    vals, gaps, recs = [], [], []
    for sph in atlas.spheres:
        for k in range(min(per_sphere, len(sph.points))):
            x = S2xS3Point.from_array(sph.points[k])
            dc = DeformedCurvature(x, potential)
            Ron, Linv = orthonormal_curvature(dc.R, dc.g)
            m, Q1 = min_sec_planes(Ron)
            _, normal = sphere_frames_chart(x, dc.field)
            for d, Q2 in flat_family(Ron, Q1, distances):
                A, B = Linv @ Q1, Linv @ Q2
                s1 = TwoPlane(x.as_array().tobytes(), A[:, 0], A[:, 1], dc.g)
                s2 = TwoPlane(x.as_array().tobytes(), B[:, 0], B[:, 1], dc.g)
                v = df_ds_positivity(x, s1, s2, normal=normal, field=dc.field)
                fv = dc.first_variation(A[:, 0], A[:, 1]) + dc.first_variation(B[:, 0], B[:, 1])
                vals.append(v)
                gaps.append(abs(v - fv))
                recs.append({"sphere": sph.index, "point": k, "distance": float(plane_distance(s1, s2)), "df_ds": v, "first_variation": fv})
    return FlatPairScan(float(min(vals)), len(vals), float(max(gaps)), recs)

"""Sectional curvature engines.

Two independent routes:

* algebraic: Koszul connection of a left-invariant metric on a Lie group,
  with the bi-invariant closed form as the special case Phi = Id;
* chart based: metric components g(t) in a local chart, Christoffel symbols by
  central differences, Riemann tensor by differentiating those again, and
  Richardson extrapolation over a halving sequence of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algebra import AlgVec, MetricEndo, TagMismatch, bracket_coeffs, structure_table
from .config import TOL


class DegeneratePlane(ValueError):
    pass


class OracleFailure(RuntimeError):
    """Finite-difference curvature did not converge under step halving."""


class ChartError(ValueError):
    pass


# ---------------------------------------------------------------------------
# algebraic engine
# ---------------------------------------------------------------------------


def _gram(gm, x, y):
    return (x @ gm @ x) * (y @ gm @ y) - (x @ gm @ y) ** 2


def sec_biinvariant(X: AlgVec, Y: AlgVec) -> float:
    if X.algebra_tag != Y.algebra_tag:
        raise TagMismatch("vectors live in different algebras")
    x, y = X.coeffs, Y.coeffs
    gram = (x @ x) * (y @ y) - (x @ y) ** 2
    if gram < TOL.degenerate_gram:
        raise DegeneratePlane(f"Gram determinant {gram:.3e} below threshold")
    b = bracket_coeffs(X.algebra_tag, x, y)
    return float(0.25 * (b @ b) / gram)


def levi_civita_left_invariant(tag, metric):
    """Connection coefficients N[i] with nabla_{e_i} e_j = sum_k N[i][k, j] e_k.

    Solved from the Koszul formula
    2 g(nabla_X Y, Z) = g([X,Y],Z) - g([Y,Z],X) + g([Z,X],Y).
    """
    c = structure_table(tag)
    L = np.einsum("ijm,mk->ijk", c, metric)  # g([e_i, e_j], e_k)
    koszul = 0.5 * (L - np.transpose(L, (2, 0, 1)) + np.transpose(L, (1, 2, 0)))
    # koszul[i, j, k] = g(nabla_i e_j, e_k)
    gamma = np.linalg.solve(metric, np.transpose(koszul, (2, 0, 1)).reshape(len(metric), -1))
    gamma = gamma.reshape(len(metric), len(metric), len(metric))  # gamma[m, i, j]
    return np.transpose(gamma, (1, 0, 2))  # N[i][m, j]


def curvature_left_invariant(tag, metric):
    """(0,4) tensor R[a,b,c,d] = g(R(e_a,e_b)e_c, e_d) at the identity."""
    N = levi_civita_left_invariant(tag, metric)
    c = structure_table(tag)
    nab = np.einsum("amj,bjc->abmc", N, N) - np.einsum("bmj,ajc->abmc", N, N)
    ncomm = np.einsum("abk,kmc->abmc", c, N)
    R = nab - ncomm  # R(e_a, e_b) e_c = sum_m R[a,b,m,c] e_m
    return np.einsum("abmc,md->abcd", R, metric)


def sec_left_invariant(X: AlgVec, Y: AlgVec, Phi: MetricEndo) -> float:
    if not (X.algebra_tag == Y.algebra_tag == Phi.algebra_tag):
        raise TagMismatch("vectors and endomorphism live in different algebras")
    gm = Phi.matrix
    x, y = X.coeffs, Y.coeffs
    gram = _gram(gm, x, y)
    if gram < TOL.degenerate_gram:
        raise DegeneratePlane(f"Gram determinant {gram:.3e} below threshold")
    R = _cached_left_invariant(X.algebra_tag, gm.tobytes())
    return float(np.einsum("abcd,a,b,c,d->", R, x, y, y, x) / gram)


_LI_CACHE: dict = {}


def _cached_left_invariant(tag, key):
    hit = _LI_CACHE.get((tag, key))
    if hit is None:
        n = int(round(np.sqrt(len(key) // 8)))
        gm = np.frombuffer(key, dtype=float).reshape(n, n)
        hit = curvature_left_invariant(tag, gm)
        if len(_LI_CACHE) > 64:
            _LI_CACHE.clear()
        _LI_CACHE[(tag, key)] = hit
    return hit


# ---------------------------------------------------------------------------
# charts and metric fields
# ---------------------------------------------------------------------------


@dataclass
class ChartSpec:
    """Local coordinates t -> section(t) around ``center``.

    ``section`` maps an (m, dim) batch of parameters to manifold points (any
    representation); it is used for diagnostics and pushforward checks only.
    """

    center: object
    dim: int = 5
    section: Callable | None = None
    fd_step: float = TOL.fd_step
    radius: float = TOL.chart_radius


@dataclass
class MetricField:
    chart: ChartSpec
    g: Callable  # (m, dim) -> (m, dim, dim)
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.chart.dim

    def __call__(self, ts):
        return self.g(np.atleast_2d(np.asarray(ts, dtype=float)))


def metric_components(field: MetricField, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape != (field.dim,):
        raise ChartError(f"parameter must have shape ({field.dim},)")
    if np.max(np.abs(t)) > field.chart.radius:
        raise ChartError(f"parameter {t} outside chart box of radius {field.chart.radius}")
    g = field(t[None])[0]
    g = 0.5 * (g + g.T)
    if np.linalg.eigvalsh(g).min() <= 0.0:
        raise ChartError("metric components are not positive definite")
    return g


def constant_field(matrix, dim=None):
    m = np.asarray(matrix, dtype=float)
    n = dim or m.shape[0]
    return MetricField(ChartSpec(center=None, dim=n), lambda ts: np.broadcast_to(m, (len(ts), n, n)).copy())


def round_sphere_field(n=3, radius=1.0):
    """Round n-sphere in Riemannian normal coordinates (closed form)."""

    def g(ts):
        r = np.linalg.norm(ts, axis=-1)
        rs = np.where(r > 1e-12, r, 1.0)
        xhat = ts / rs[:, None]
        f = np.where(r > 1e-6, (radius * np.sin(r / radius) / rs) ** 2, 1.0 - r**2 / (3 * radius**2))
        P = np.einsum("mi,mj->mij", xhat, xhat) * (r > 1e-12)[:, None, None]
        return P + f[:, None, None] * (np.eye(n) - P)

    return MetricField(ChartSpec(center="sphere", dim=n, radius=1.0), g)


# ---------------------------------------------------------------------------
# finite-difference Riemann tensor
# ---------------------------------------------------------------------------


@dataclass
class RiemannResult:
    R: np.ndarray  # symmetrised (0,4) tensor
    g: np.ndarray  # metric at the evaluation point
    presym_residual: float  # largest algebraic-symmetry defect before symmetrising
    bianchi_residual: float  # first Bianchi defect after symmetrising
    richardson_gap: float  # difference of the last two extrapolants
    steps: tuple
    gamma: np.ndarray | None = None  # Christoffel symbols Gamma^k_ij at the point


def _offsets(n):
    """Integer offsets (in units of h) needed for Gamma at 0 and at +-e_a."""
    pts = {(0,) * n}
    for a in range(n):
        for sa in (1, -1):
            base = [0] * n
            base[a] = sa
            pts.add(tuple(base))
            for b in range(n):
                for sb in (1, -1):
                    p = list(base)
                    p[b] += sb
                    pts.add(tuple(p))
    return sorted(pts)


def _riemann_single(field: MetricField, t0, h):
    n = field.dim
    offs = _offsets(n)
    index = {o: k for k, o in enumerate(offs)}
    pts = t0[None, :] + h * np.asarray(offs, dtype=float)
    G = field(pts)
    G = 0.5 * (G + np.transpose(G, (0, 2, 1)))
    eye = np.eye(n, dtype=int)

    def at(o):
        return G[index[tuple(o)]]

    def dg_at(o):
        o = np.asarray(o)
        return np.stack([(at(o + eye[l]) - at(o - eye[l])) / (2 * h) for l in range(n)])

    def gamma_at(o):
        g = at(o)
        dg = dg_at(o)  # dg[l, i, j] = d_l g_ij
        # Gamma_{l,ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        low = 0.5 * (np.transpose(dg, (2, 0, 1)) + np.transpose(dg, (1, 2, 0)) - dg)
        return np.linalg.solve(g, low.reshape(n, -1)).reshape(n, n, n)  # Gamma^k_ij

    zero = np.zeros(n, dtype=int)
    g0 = at(zero)
    Gam = gamma_at(zero)
    dGam = np.stack([(gamma_at(zero + eye[a]) - gamma_at(zero - eye[a])) / (2 * h) for a in range(n)])
    # dGam[a, e, b, c] = d_a Gamma^e_bc
    # R(d_a, d_b) d_c = (d_a G^e_bc - d_b G^e_ac + G^f_bc G^e_af - G^f_ac G^e_bf) d_e
    Rup = (
        np.einsum("aebc->abce", dGam)
        - np.einsum("beac->abce", dGam)
        + np.einsum("fbc,eaf->abce", Gam, Gam)
        - np.einsum("fac,ebf->abce", Gam, Gam)
    )
    R = np.einsum("abce,ed->abcd", Rup, g0)
    return R, g0, Gam


def symmetrize_curvature(R):
    R = 0.5 * (R - np.transpose(R, (1, 0, 2, 3)))
    R = 0.5 * (R - np.transpose(R, (0, 1, 3, 2)))
    R = 0.5 * (R + np.transpose(R, (2, 3, 0, 1)))
    b = (R + np.transpose(R, (1, 2, 0, 3)) + np.transpose(R, (2, 0, 1, 3))) / 3.0
    return R - b


def symmetry_residual(R):
    return float(
        max(
            np.max(np.abs(R + np.transpose(R, (1, 0, 2, 3)))),
            np.max(np.abs(R + np.transpose(R, (0, 1, 3, 2)))),
            np.max(np.abs(R - np.transpose(R, (2, 3, 0, 1)))),
        )
    )


def bianchi_residual(R):
    return float(np.max(np.abs(R + np.transpose(R, (1, 2, 0, 3)) + np.transpose(R, (2, 0, 1, 3)))))


def riemann_fd(field: MetricField, t=None, *, step=None, halvings=None, tol=None) -> RiemannResult:
    """Riemann tensor of a chart metric at ``t`` (default: chart centre).

    The estimate at steps h, h/2, ..., h/2^k is Richardson-extrapolated; the
    last two extrapolants must agree to ``tol`` (relative to max(1, |R|)),
    otherwise OracleFailure is raised.
    """
    n = field.dim
    t0 = np.zeros(n) if t is None else np.asarray(t, dtype=float)
    h = field.chart.fd_step if step is None else step
    k = TOL.fd_halvings if halvings is None else halvings
    tol = TOL.fd_convergence if tol is None else tol
    if np.max(np.abs(t0)) + 2 * h > field.chart.radius:
        raise ChartError("finite-difference stencil leaves the chart box")
    steps = tuple(h / 2**i for i in range(k + 1))
    raw = [_riemann_single(field, t0, s) for s in steps]
    g0 = raw[0][1]
    Rs = [r[0] for r in raw]
    Gs = [r[2] for r in raw]
    gam = (4.0 * Gs[-1] - Gs[-2]) / 3.0 if len(Gs) > 1 else Gs[-1]
    ext = [(4.0 * Rs[i + 1] - Rs[i]) / 3.0 for i in range(len(Rs) - 1)]
    best = ext[-1] if ext else Rs[-1]
    scale = max(1.0, float(np.max(np.abs(best))))
    gap = float(np.max(np.abs(ext[-1] - ext[-2]))) / scale if len(ext) > 1 else 0.0
    if gap > tol:
        raise OracleFailure(f"Richardson estimates differ by {gap:.3e} (> {tol:.1e}) at t={t0}")
    pre = symmetry_residual(best)
    R = symmetrize_curvature(best)
    return RiemannResult(R=R, g=g0, presym_residual=pre, bianchi_residual=bianchi_residual(R), richardson_gap=gap, steps=steps, gamma=gam)


def sec_from_riemann(R, g, u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    gram = _gram(g, u, v)
    if gram < TOL.degenerate_gram:
        raise DegeneratePlane(f"Gram determinant {gram:.3e} below threshold")
    return float(np.einsum("abcd,a,b,c,d->", R, u, v, v, u) / gram)


def sec_batch(R, g, U, V):
    """Vectorised sectional curvatures for rows of U, V (no degeneracy check)."""
    num = np.einsum("abcd,ma,mb,mc,md->m", R, U, V, V, U)
    guu = np.einsum("ma,ab,mb->m", U, g, U)
    gvv = np.einsum("ma,ab,mb->m", V, g, V)
    guv = np.einsum("ma,ab,mb->m", U, g, V)
    return num / (guu * gvv - guv**2)


def ricci_from_riemann(R, g, u) -> float:
    u = np.asarray(u, dtype=float)
    ginv = np.linalg.inv(g)
    # Ric(u,u) = sum_ij g^{ij} R(e_i, u, u, e_j)
    return float(np.einsum("ij,iabj,a,b->", ginv, R, u, u))


def ricci_fd(field: MetricField, t, u) -> float:
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise DegeneratePlane("Ricci curvature needs a nonzero vector")
    res = riemann_fd(field, t)
    return ricci_from_riemann(res.R, res.g, u)

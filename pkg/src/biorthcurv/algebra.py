"""Quaternion and su(3) Lie-algebra kernels.

Elements of the four supported algebras are coefficient vectors in a fixed
orthonormal basis:

* ``sp1``                 Im(H) with basis i, j, k and <x, y> = Re(conj(x) y)
* ``sp1_plus_sp1``        Im(H) + Im(H)
* ``double_sp1_plus_sp1`` (Im(H) + Im(H))^2, the Lie algebra of G x G
* ``su3``                 basis -i*lambda_a built from the Gell-Mann matrices,
                          <X, Y> = -1/2 Tr(XY)

Structure constants are generated from quaternion products or matrix
commutators when the module is imported.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import scipy.linalg

from .config import TOL

SQRT3 = np.sqrt(3.0)

# ---------------------------------------------------------------------------
# quaternions, stored as (..., 4) arrays (w, x, y, z)
# ---------------------------------------------------------------------------


def qmul(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.array(q, dtype=float)
    q[..., 1:] *= -1.0
    return q


def qinner(x, y):
    """Re(conj(x) y), the Euclidean inner product on H = R^4."""
    return np.sum(np.asarray(x) * np.asarray(y), axis=-1)


def qnorm(q):
    return np.sqrt(qinner(q, q))


def pure(v):
    """Embed (..., 3) coefficient vectors as pure quaternions."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def qexp_pure(v):
    """exp of the pure quaternion with coefficients ``v``."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    # sin(r)/r with its Taylor tail near 0
    sinc = np.where(r > 1e-8, np.sin(np.where(r > 1e-8, r, 1.0)) / np.where(r > 1e-8, r, 1.0), 1.0 - r * r / 6.0)
    return np.concatenate([np.cos(r)[..., None], sinc[..., None] * v], axis=-1)


def qrotate(q, v):
    """q v conj(q) for pure coefficient vectors ``v``."""
    return qmul(qmul(q, pure(v)), qconj(q))[..., 1:]


def rotation_taking(a, b):
    """Unit quaternion q with q a conj(q) = b for unit pure vectors a, b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.concatenate([[1.0 + a @ b], np.cross(a, b)])
    n = np.linalg.norm(q)
    if n < 1e-8:
        # antipodal: rotate by pi about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return np.concatenate([[0.0], axis])
    return q / n


def dexp_left_pure(z, v):
    """Left-trivialised differential of exp on Im(H).

    Returns exp(-z) * d/de exp(z + e v) at e = 0 as a coefficient vector.
    Broadcasts over leading axes of ``z`` and ``v``.
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(z, axis=-1)[..., None]
    w = 2.0 * r
    small = w < 1e-4
    ws = np.where(small, 1.0, w)
    a = np.where(small, 1.0 - w**2 / 6.0 + w**4 / 120.0, np.sin(ws) / ws)
    b = np.where(small, 0.5 - w**2 / 24.0 + w**4 / 720.0, (1.0 - np.cos(ws)) / ws**2)
    r2 = np.where(small, 1.0, r**2)
    par = np.where(small, 0.0, np.sum(z * v, axis=-1, keepdims=True) / r2) * z
    perp = v - par
    # [z, v] = zv - vz = 2 z x v for pure quaternions
    br = 2.0 * np.cross(z, v)
    return par + a * perp - b * br


# ---------------------------------------------------------------------------
# Gell-Mann data
# ---------------------------------------------------------------------------


def _entry(num, den, flag):
    val = float(num) / float(den)
    return val / SQRT3 if int(flag) else val


@lru_cache(maxsize=None)
def gellmann_matrices():
    """The eight Gell-Mann matrices, read from the bundled data file."""
    lam = np.zeros((8, 3, 3), dtype=complex)
    text = resources.files("biorthcurv.data").joinpath("gellmann.txt").read_text()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m, r, c, rn, rd, rs, in_, id_, is_ = line.split()
        lam[int(m) - 1, int(r), int(c)] = _entry(rn, rd, rs) + 1j * _entry(in_, id_, is_)
    lam.setflags(write=False)
    return lam


def su3_basis():
    """Matrices -i*lambda_a, orthonormal for -1/2 Tr(XY)."""
    return -1j * gellmann_matrices()


# ---------------------------------------------------------------------------
# algebras
# ---------------------------------------------------------------------------

DIMS = {"sp1": 3, "sp1_plus_sp1": 6, "double_sp1_plus_sp1": 12, "su3": 8}

# index sets of the Cartan decomposition su(3) = so(3) + so(3)^perp (0-based)
SO3_IDX = (1, 4, 6)
SO3_PERP_IDX = (0, 2, 3, 5, 7)


class TagMismatch(ValueError):
    pass


def _sp1_table():
    e = np.eye(3)
    c = np.zeros((3, 3, 3))
    for a in range(3):
        for b in range(3):
            pa, pb = pure(e[a]), pure(e[b])
            c[a, b] = (qmul(pa, pb) - qmul(pb, pa))[1:]
    return c


def _block_table(c, copies):
    n = c.shape[0]
    out = np.zeros((n * copies,) * 3)
    for k in range(copies):
        s = slice(k * n, (k + 1) * n)
        out[s, s, s] = c
    return out


def _su3_table():
    E = su3_basis()
    comm = np.einsum("aij,bjk->abik", E, E) - np.einsum("bij,ajk->abik", E, E)
    # <A, B> = -1/2 Tr(AB)
    return np.real(-0.5 * np.einsum("abij,kji->abk", comm, E))


@lru_cache(maxsize=None)
def structure_table(tag):
    """Array c with [e_i, e_j] = sum_k c[i, j, k] e_k."""
    if tag == "sp1":
        c = _sp1_table()
    elif tag == "sp1_plus_sp1":
        c = _block_table(_sp1_table(), 2)
    elif tag == "double_sp1_plus_sp1":
        c = _block_table(_sp1_table(), 4)
    elif tag == "su3":
        c = _su3_table()
    else:
        raise TagMismatch(f"unknown algebra tag {tag!r}")
    c.setflags(write=False)
    return c


def jacobi_residual(c):
    # [[x,y],z] + [[y,z],x] + [[z,x],y] in components
    t = np.einsum("ijm,mkn->ijkn", c, c)
    res = t + np.transpose(t, (1, 2, 0, 3)) + np.transpose(t, (2, 0, 1, 3))
    return float(np.max(np.abs(res)))


@dataclass(frozen=True)
class AlgVec:
    algebra_tag: str
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if self.algebra_tag not in DIMS:
            raise TagMismatch(f"unknown algebra tag {self.algebra_tag!r}")
        if c.shape != (DIMS[self.algebra_tag],):
            raise ValueError(f"{self.algebra_tag} needs {DIMS[self.algebra_tag]} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        _same_tag(self, other)
        return AlgVec(self.algebra_tag, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_tag(self, other)
        return AlgVec(self.algebra_tag, self.coeffs - other.coeffs)

    def __mul__(self, t):
        return AlgVec(self.algebra_tag, float(t) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return AlgVec(self.algebra_tag, -self.coeffs)

    def matrix(self):
        """Dense 3x3 skew-Hermitian matrix (su3 only)."""
        if self.algebra_tag != "su3":
            raise TagMismatch("matrix() is only defined for su3")
        return np.einsum("a,aij->ij", self.coeffs, su3_basis())


def basis_vector(tag, i):
    c = np.zeros(DIMS[tag])
    c[i] = 1.0
    return AlgVec(tag, c)


def gm(i):
    """-i*lambda_i as an su3 AlgVec, 1-based like the physics convention."""
    return basis_vector("su3", i - 1)


def su3_from_matrix(m):
    m = np.asarray(m)
    coeffs = np.real(-0.5 * np.einsum("ij,aji->a", m, su3_basis()))
    return AlgVec("su3", coeffs)


def _same_tag(x, y):
    if x.algebra_tag != y.algebra_tag:
        raise TagMismatch(f"algebra tags differ: {x.algebra_tag} vs {y.algebra_tag}")


def bracket_coeffs(tag, x, y):
    """Bracket on raw coefficient arrays; broadcasts over leading axes."""
    return np.einsum("...i,...j,ijk->...k", x, y, structure_table(tag))


def bracket(X: AlgVec, Y: AlgVec) -> AlgVec:
    _same_tag(X, Y)
    return AlgVec(X.algebra_tag, bracket_coeffs(X.algebra_tag, X.coeffs, Y.coeffs))


def inner_g0(X: AlgVec, Y: AlgVec) -> float:
    _same_tag(X, Y)
    return float(X.coeffs @ Y.coeffs)


# ---------------------------------------------------------------------------
# metric endomorphisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricEndo:
    algebra_tag: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        n = DIMS[self.algebra_tag]
        if m.shape != (n, n):
            raise ValueError(f"endomorphism of {self.algebra_tag} must be {n}x{n}")
        if np.max(np.abs(m - m.T)) > TOL.structure:
            raise ValueError("metric endomorphism is not g0-symmetric")
        if np.linalg.eigvalsh(m).min() <= 0.0:
            raise ValueError("metric endomorphism is not positive definite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def spectrum(self):
        return np.linalg.eigvalsh(self.matrix)


def diagonal_projector():
    """Matrix of the g0-orthogonal projection of sp(1)+sp(1) onto the diagonal."""
    i3 = np.eye(3)
    return 0.5 * np.block([[i3, i3], [i3, i3]])


def wilking_phi():
    """Phi = Id - P/2 on sp(1)+sp(1)."""
    return MetricEndo("sp1_plus_sp1", np.eye(6) - 0.5 * diagonal_projector())


def identity_phi(tag):
    return MetricEndo(tag, np.eye(DIMS[tag]))


def double_phi(phi: MetricEndo) -> MetricEndo:
    """Phi + Phi on the Lie algebra of G x G."""
    if phi.algebra_tag != "sp1_plus_sp1":
        raise TagMismatch("double_phi expects an sp1_plus_sp1 endomorphism")
    z = np.zeros((6, 6))
    return MetricEndo("double_sp1_plus_sp1", np.block([[phi.matrix, z], [z, phi.matrix]]))


def inner_gPhi(X: AlgVec, Y: AlgVec, Phi: MetricEndo) -> float:
    _same_tag(X, Y)
    if Phi.algebra_tag != X.algebra_tag:
        raise TagMismatch("endomorphism and vectors live in different algebras")
    return float((Phi.matrix @ X.coeffs) @ Y.coeffs)


def proj_diagonal(X: AlgVec) -> AlgVec:
    if X.algebra_tag != "sp1_plus_sp1":
        raise TagMismatch("proj_diagonal needs an sp1_plus_sp1 vector")
    return AlgVec(X.algebra_tag, diagonal_projector() @ X.coeffs)


def cartan_split(X: AlgVec):
    """(vertical, horizontal) parts for su(3) = so(3) + so(3)^perp."""
    if X.algebra_tag != "su3":
        raise TagMismatch("cartan_split needs an su3 vector")
    v = np.zeros(8)
    v[list(SO3_IDX)] = X.coeffs[list(SO3_IDX)]
    return AlgVec("su3", v), AlgVec("su3", X.coeffs - v)


# ---------------------------------------------------------------------------
# groups
# ---------------------------------------------------------------------------

GROUP_ALGEBRA = {
    "Sp1": "sp1",
    "Sp1xSp1": "sp1_plus_sp1",
    "DoubleSp1xSp1": "double_sp1_plus_sp1",
    "SU3": "su3",
    "SO3_in_SU3": "su3",
}
_NQUAT = {"Sp1": 1, "Sp1xSp1": 2, "DoubleSp1xSp1": 4}


@dataclass(frozen=True)
class GroupElem:
    group_tag: str
    payload: np.ndarray

    def __post_init__(self):
        tag = self.group_tag
        if tag in _NQUAT:
            q = np.array(self.payload, dtype=float).reshape(_NQUAT[tag], 4)
            if np.max(np.abs(qnorm(q) - 1.0)) > TOL.unit_norm:
                raise ValueError("group element has a non-unit quaternion factor")
            object.__setattr__(self, "payload", q)
        elif tag in ("SU3", "SO3_in_SU3"):
            u = np.array(self.payload, dtype=complex).reshape(3, 3)
            if np.max(np.abs(u.conj().T @ u - np.eye(3))) > TOL.unit_norm:
                raise ValueError("matrix is not unitary")
            if abs(np.linalg.det(u) - 1.0) > TOL.unit_norm:
                raise ValueError("matrix does not have determinant 1")
            if tag == "SO3_in_SU3" and np.max(np.abs(u.imag)) > TOL.unit_norm:
                raise ValueError("SO(3) element has an imaginary part")
            object.__setattr__(self, "payload", u)
        else:
            raise TagMismatch(f"unknown group tag {tag!r}")

    @property
    def algebra_tag(self):
        return GROUP_ALGEBRA[self.group_tag]

    def __matmul__(self, other):
        if self.algebra_tag != other.algebra_tag:
            raise TagMismatch("cannot multiply elements of different groups")
        if self.group_tag in _NQUAT:
            return GroupElem(self.group_tag, qmul(self.payload, other.payload))
        tag = "SO3_in_SU3" if self.group_tag == other.group_tag == "SO3_in_SU3" else "SU3"
        return GroupElem(tag, self.payload @ other.payload)

    def inverse(self):
        if self.group_tag in _NQUAT:
            return GroupElem(self.group_tag, qconj(self.payload))
        return GroupElem(self.group_tag, self.payload.conj().T)


def identity(group_tag):
    if group_tag in _NQUAT:
        q = np.zeros((_NQUAT[group_tag], 4))
        q[:, 0] = 1.0
        return GroupElem(group_tag, q)
    return GroupElem(group_tag, np.eye(3))


def adjoint(u: GroupElem, X: AlgVec) -> AlgVec:
    """Ad_u X = u X u^{-1}."""
    if u.algebra_tag != X.algebra_tag:
        raise TagMismatch(f"{u.group_tag} does not act on {X.algebra_tag}")
    if u.group_tag in _NQUAT:
        v = X.coeffs.reshape(-1, 3)
        return AlgVec(X.algebra_tag, qrotate(u.payload, v).reshape(-1))
    m = u.payload @ X.matrix() @ u.payload.conj().T
    return su3_from_matrix(m)


def exp_elem(X: AlgVec, t: float = 1.0) -> GroupElem:
    """exp(tX) in the simply connected group of the algebra."""
    tag = X.algebra_tag
    if tag == "su3":
        u = scipy.linalg.expm(t * X.matrix())
        return GroupElem("SU3", u)
    group = {"sp1": "Sp1", "sp1_plus_sp1": "Sp1xSp1", "double_sp1_plus_sp1": "DoubleSp1xSp1"}[tag]
    q = qexp_pure(t * X.coeffs.reshape(-1, 3))
    return GroupElem(group, q / qnorm(q)[:, None])


def rotation_block(angle, i, j):
    """Real rotation in the (i, j) coordinate plane of C^3, embedded in SU(3)."""
    r = np.eye(3)
    c, s = np.cos(angle), np.sin(angle)
    r[i, i] = r[j, j] = c
    r[i, j] = -s
    r[j, i] = s
    return r


def euler_rotation(x, y, z) -> GroupElem:
    """exp(-i lambda_2 x) exp(-i lambda_5 y) exp(-i lambda_2 z)."""
    r = rotation_block(x, 0, 1) @ rotation_block(y, 0, 2) @ rotation_block(z, 0, 1)
    return GroupElem("SO3_in_SU3", r)


def euler_matrix(x, y, z):
    """Vectorised real 3x3 Euler rotations; broadcasts over the angle arrays."""
    x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))

    def blk(a, i, j):
        m = np.zeros(a.shape + (3, 3))
        m[..., :, :] = np.eye(3)
        c, s = np.cos(a), np.sin(a)
        m[..., i, i] = c
        m[..., j, j] = c
        m[..., i, j] = -s
        m[..., j, i] = s
        return m

    return blk(x, 0, 1) @ blk(y, 0, 2) @ blk(z, 0, 1)


def random_unit_quaternions(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)

"""Bracket-corrected complex Hessian A(u), MA density det A, linearization.

In a frame zeta_1..zeta_n of T^{1,0},

    A_pq(u) = zeta_p conj(zeta_q) u  -  ( [zeta_p, conj(zeta_q)]^{0,1} ) u,

assembled from grid second differences of u plus first-order terms carrying
the differentiated frame coefficients and the bracket correction.  In an
orthonormal frame the Monge-Ampere equation reads det A(u) = f.

The OperatorKernel caches all frame-dependent coefficient fields on a grid
domain once; per-field evaluations are plain einsums over interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NotPositiveDefinite, StencilOutOfDomain
from .geometry import project_01
from .grid import ScalarField


class OperatorKernel:
    """Frame coefficients, bracket corrections, and assembly on one grid."""

    def __init__(self, domain, frame):
        self.domain = domain
        self.frame = frame
        self.n = frame.n
        d = self.d = frame.dim
        pts_int = domain.interior_points()
        self.Z_int = frame(pts_int)  # (N, n, d)
        dZ = frame.d_zeta(pts_int, h=domain.h)  # (N, j, p, k)
        J_int = frame.structure(pts_int)
        # full bracket [zeta_p, conj(zeta_q)]^k, then its (0,1) part
        br = np.einsum(
            "xpj,xjqk->xpqk", self.Z_int, np.conj(dZ), optimize=True
        ) - np.einsum("xqj,xjpk->xpqk", np.conj(self.Z_int), dZ, optimize=True)
        b01 = 0.5 * (br + 1j * np.einsum("xij,xpqj->xpqi", J_int, br, optimize=True))
        # first-order coefficient: zeta_p applied to conj frame coeffs, minus bracket
        self.first_order = (
            np.einsum("xpj,xjqk->xpqk", self.Z_int, np.conj(dZ), optimize=True) - b01
        )
        self.bracket01 = b01

    # -- pointwise algebra ------------------------------------------------

    def a_field(self, u):
        """A(u) at all interior nodes, Hermitian-symmetrized, shape (N, n, n)."""
        u = u if isinstance(u, ScalarField) else ScalarField(self.domain, u)
        return self.a_from_derivatives(u.interior_hessian(), u.interior_gradient())

    def a_from_derivatives(self, H, G, sel=None):
        """A from given real Hessians (m, d, d) and gradients (m, d).

        ``sel`` restricts to a subset of interior node indices; analytic
        probes use this to avoid building full grid fields.
        """
        Z = self.Z_int if sel is None else self.Z_int[sel]
        fo = self.first_order if sel is None else self.first_order[sel]
        if H.ndim == 2:
            H = np.broadcast_to(H, (Z.shape[0],) + H.shape)
        A = np.einsum("xpj,xqk,xjk->xpq", Z, np.conj(Z), H, optimize=True)
        A = A + np.einsum("xpqk,xk->xpq", fo, G, optimize=True)
        return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))

    def det_field(self, A):
        if self.n == 1:
            return A[:, 0, 0].real
        return (A[:, 0, 0] * A[:, 1, 1]).real - np.abs(A[:, 0, 1]) ** 2

    def eig_range(self, A):
        if self.n == 1:
            lam = A[:, 0, 0].real
            return lam, lam
        t = 0.5 * (A[:, 0, 0] + A[:, 1, 1]).real
        dd = (0.5 * (A[:, 0, 0] - A[:, 1, 1]).real) ** 2 + np.abs(A[:, 0, 1]) ** 2
        disc = np.sqrt(dd)
        return t - disc, t + disc

    def inverse(self, A):
        if self.n == 1:
            return 1.0 / A
        det = self.det_field(A)
        inv = np.empty_like(A)
        inv[:, 0, 0] = A[:, 1, 1] / det
        inv[:, 1, 1] = A[:, 0, 0] / det
        inv[:, 0, 1] = -A[:, 0, 1] / det
        inv[:, 1, 0] = -A[:, 1, 0] / det
        return inv

    # -- linearization ----------------------------------------------------

    def linearized_coefficients(self, Ainv):
        """Real coefficient fields of L = A^{pq}(zeta_p conj(zeta_q) - br).

        Returns (M, N1): L w = sum_jk M_jk d2w/dx_j dx_k + sum_k N1_k dw/dx_k.
        """
        M = np.einsum(
            "xqp,xpj,xqk->xjk", Ainv, self.Z_int, np.conj(self.Z_int), optimize=True
        ).real
        N1 = np.einsum("xqp,xpqk->xk", Ainv, self.first_order, optimize=True).real
        return M, N1

    def apply_linearized(self, Ainv, w):
        w = w if isinstance(w, ScalarField) else ScalarField(self.domain, w)
        M, N1 = self.linearized_coefficients(Ainv)
        H = w.interior_hessian()
        G = w.interior_gradient()
        return np.einsum("xjk,xjk->x", M, H) + np.einsum("xk,xk->x", N1, G)

    def jacobian(self, Ainv):
        """Sparse Jacobian over inside unknowns: L rows at interior nodes,
        interpolation rows at band nodes."""
        dom = self.domain
        M, N1 = self.linearized_coefficients(Ainv)
        h = dom.h
        strides = dom.strides
        rows, cols, vals = [], [], []
        r_int = dom.interior_pos.astype(np.int64)
        flats = dom.interior_flat

        def push(col_flat, val):
            rows.append(r_int)
            cols.append(dom.pos[col_flat])
            vals.append(val)

        center = np.zeros(len(flats))
        for j in range(self.d):
            center -= 2.0 * M[:, j, j] / (h * h)
        push(flats, center)
        for j in range(self.d):
            s = strides[j]
            diag = M[:, j, j] / (h * h)
            adv = N1[:, j] / (2 * h)
            push(flats + s, diag + adv)
            push(flats - s, diag - adv)
        for j in range(self.d):
            for k in range(j + 1, self.d):
                w = M[:, j, k] / (2 * h * h)
                sj, sk = strides[j], strides[k]
                push(flats + sj + sk, w)
                push(flats - sj - sk, w)
                push(flats + sj - sk, -w)
                push(flats - sj + sk, -w)

        band = dom.band
        rb = dom.band_pos.astype(np.int64)
        rows.append(rb)
        cols.append(dom.pos[dom.band_flat])
        vals.append(np.ones(len(rb)))
        if len(rb):
            coef = band.t_star / (band.t_star + band.s_in + 1e-300)
            w = -coef[:, None] * band.corner_w
            w[band.direct] = 0.0
            nc = band.corner_flat.shape[1]
            rows.append(np.repeat(rb, nc))
            cols.append(dom.pos[band.corner_flat.ravel()])
            vals.append(w.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        nun = dom.n_inside
        return sp.coo_matrix((vals, (rows, cols)), shape=(nun, nun)).tocsr()

    def band_residual(self, u_inside, phi_foot):
        """u(B) minus the interpolated Dirichlet value, per band node."""
        dom = self.domain
        band = dom.band
        if len(dom.band_flat) == 0:
            return np.zeros(0)
        ub = u_inside[dom.band_pos]
        interp = (u_inside[dom.pos[band.corner_flat]] * band.corner_w).sum(axis=1)
        denom = band.t_star + band.s_in
        target = (band.t_star * interp + band.s_in * phi_foot) / np.where(
            denom > 0, denom, 1.0
        )
        target = np.where(band.direct, phi_foot, target)
        return ub - target

    def relax_band(self, u_inside, phi_foot, sweeps=40):
        """Fixed-point sweeps making band values satisfy their rows (contractive)."""
        u = u_inside.copy()
        for _ in range(sweeps):
            r = self.band_residual(u, phi_foot)
            if len(r) == 0 or np.abs(r).max() < 1e-14:
                break
            u[self.domain.band_pos] -= r
        return u


# -- spec-level operation surfaces ---------------------------------------


@dataclass
class EquationResidual:
    values: np.ndarray
    max_abs: float
    l2: float
    worst_point: np.ndarray


@dataclass
class PshReport:
    margin: float
    verdict: str
    tol: float


def _kernel(u, frame):
    return OperatorKernel(u.domain, frame)


def _interior_index_of_point(domain, point):
    point = np.asarray(point, dtype=float)
    idx = np.round((point - domain.lo) / domain.h).astype(np.int64)
    if np.abs(domain.lo + idx * domain.h - point).max() > 1e-9 * max(1.0, domain.h):
        raise StencilOutOfDomain("point is not a grid node")
    flat = int((idx * domain.strides).sum())
    where = np.searchsorted(domain.interior_flat, flat)
    if (
        where >= len(domain.interior_flat)
        or domain.interior_flat[where] != flat
    ):
        raise StencilOutOfDomain("point is not an interior node with a full stencil")
    return int(where)


def a_matrix(u, frame, point, kernel=None):
    """A(u) at one interior grid node (Hermitian n x n)."""
    kernel = kernel or _kernel(u, frame)
    k = _interior_index_of_point(u.domain, point)
    return kernel.a_field(u)[k]


def ma_residual(u, f, frame, kernel=None):
    """det A(u) - f over interior nodes, with max and grid-L2 norms."""
    if not frame.orthonormal:
        raise ValueError("ma_residual requires an orthonormal frame")
    kernel = kernel or _kernel(u, frame)
    dom = u.domain
    fv = f.values[dom.interior_flat] if isinstance(f, ScalarField) else np.broadcast_to(
        np.asarray(f, dtype=float), (dom.n_interior,)
    )
    r = kernel.det_field(kernel.a_field(u)) - fv
    k = int(np.argmax(np.abs(r)))
    return EquationResidual(
        values=r,
        max_abs=float(np.abs(r[k])),
        l2=float(np.sqrt((r * r).sum() * dom.h ** dom.dim)),
        worst_point=dom.interior_points()[k],
    )


def psh_classify(u, frame, flats=None, tol=None, kernel=None):
    """Classify u by the smallest eigenvalue of A(u) over the region.

    tol defaults to 1e-8 scaled by a C^2-style norm of u, floored by the
    stencil truncation scale h^2.
    """
    kernel = kernel or _kernel(u, frame)
    A = kernel.a_field(u)
    if flats is not None:
        sel = np.searchsorted(u.domain.interior_flat, flats)
        A = A[sel]
    lam_min, _ = kernel.eig_range(A)
    margin = float(lam_min.min())
    if tol is None:
        tol = max(1e-8 * u.c2_scale(), 1e-10)
    if margin > tol:
        verdict = "strictly_psh"
    elif margin >= -tol:
        verdict = "psh"
    else:
        verdict = "not_psh"
    return PshReport(margin=margin, verdict=verdict, tol=tol)


def linearized_apply(u, w, frame, point, kernel=None):
    """L w at one interior node; L is the Jacobian of log det A at u."""
    kernel = kernel or _kernel(u, frame)
    k = _interior_index_of_point(u.domain, point)
    A = kernel.a_field(u)
    lam_min, _ = kernel.eig_range(A[k : k + 1])
    if lam_min[0] <= 0:
        raise NotPositiveDefinite(
            f"A(u) has smallest eigenvalue {lam_min[0]:.3e} at the point"
        )
    Aw = kernel.a_field(w)
    Ainv = kernel.inverse(A[k : k + 1])
    return float(np.einsum("xqp,xpq->x", Ainv, Aw[k : k + 1]).real[0])


def frame_coefficients(Z, v):
    """Coefficients of the (1,0) part of a real vector v in the frame basis.

    Solves v = sum_p c_p zeta_p + conj(c_p zeta_p); Z has shape (n, d).
    """
    n, d = Z.shape
    basis = np.concatenate([Z, np.conj(Z)], axis=0).T  # (d, 2n)
    x = np.linalg.solve(basis, np.asarray(v, dtype=complex))
    return x[:n]


def quadratic_form(A, c):
    """Hermitian quadratic form sum_pq A_pq c_p conj(c_q) (real)."""
    return float(np.einsum("pq,p,q->", A, c, np.conj(c)).real)

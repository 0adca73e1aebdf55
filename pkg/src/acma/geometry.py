"""Almost complex structures on coordinate boxes, frames of T^{1,0}, brackets.

Coordinates are ordered (x_1, y_1, ..., x_n, y_n) in R^{2n}, so the standard
structure acts blockwise as multiplication by i on z_k = x_k + i*y_k.  All
evaluators are vectorized: points of shape (..., 2n) map to matrices of shape
(..., 2n, 2n) or frame coefficients of shape (..., n, 2n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateFrame, InvalidStructure, StencilOutOfDomain

STRUCTURE_TOL = 1e-10
PIVOT_TOL = 1e-8


def standard_matrix(n):
    """Block-diagonal matrix of the standard structure in 2n dimensions."""
    d = 2 * n
    J = np.zeros((d, d))
    for k in range(n):
        J[2 * k + 1, 2 * k] = 1.0
        J[2 * k, 2 * k + 1] = -1.0
    return J


@dataclass(frozen=True)
class AlmostComplexStructure:
    """Matrix field J(p) on (a box in) R^{2n} with J(p)^2 = -I.

    ``func`` maps an array of points (..., 2n) to matrices (..., 2n, 2n).
    ``box`` restricts where finite-difference stencils may sample; None means
    the evaluator is entire (all built-in families are).
    """

    n: int
    func: Callable
    family: str = "custom"
    params: dict = field(default_factory=dict)
    box: tuple | None = None

    @property
    def dim(self):
        return 2 * self.n

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        return self.func(points)


def standard_structure(n):
    J = standard_matrix(n)

    def func(points):
        return np.broadcast_to(J, points.shape[:-1] + J.shape).copy()

    return AlmostComplexStructure(n=n, func=func, family="standard")


def sheared_structure(epsilon, n=2):
    """Conjugated shear J_eps = S J_st S^{-1}, S = I + eps*x_1*E_13.

    The conjugation preserves J^2 = -I exactly; eps = 0 recovers the standard
    structure.  Only defined for n = 2 (the shear mixes the x_1 and x_2 axes).
    """
    if n != 2:
        raise ValueError("sheared family requires n = 2")
    d = 2 * n
    Jst = standard_matrix(n)
    E = np.zeros((d, d))
    E[0, 2] = 1.0  # maps the x_2 component onto the x_1 axis

    def func(points):
        x1 = points[..., 0]
        t = epsilon * x1
        eye = np.eye(d)
        S = eye + t[..., None, None] * E
        Sinv = eye - t[..., None, None] * E  # E^2 = 0
        return S @ Jst @ Sinv

    return AlmostComplexStructure(
        n=n, func=func, family="sheared", params={"epsilon": float(epsilon)}
    )


@dataclass
class StructureReport:
    max_defect: float
    passed: bool
    worst_point: np.ndarray | None = None


def validate_structure(structure, samples, tol=STRUCTURE_TOL, raise_on_fail=True):
    """Check J(p)^2 = -I and invertibility at the sample points.

    Returns a StructureReport; raises InvalidStructure when the defect exceeds
    ``tol`` or any J(p) is singular (unless raise_on_fail is False).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    J = structure(samples)
    eye = np.eye(structure.dim)
    defect = np.abs(J @ J + eye).max(axis=(-2, -1))
    worst = int(np.argmax(defect))
    dets = np.linalg.det(J)
    singular = np.abs(dets) < 1e-12
    report = StructureReport(
        max_defect=float(defect[worst]),
        passed=bool(defect[worst] <= tol and not singular.any()),
        worst_point=samples[worst],
    )
    if raise_on_fail and not report.passed:
        if singular.any():
            raise InvalidStructure("J(p) singular at a sample point")
        raise InvalidStructure(
            f"max |J^2 + I| = {report.max_defect:.3e} exceeds {tol:.1e}"
        )
    return report


class HermitianMetric:
    """Metric data induced on (R^{2n}, J) by the Euclidean inner product.

    g(X, Y) = (<X, Y> + <JX, JY>)/2 is J-compatible; omega(X, Y) = g(X, JY)
    is the associated two-form (so g(X, Y) = -omega(X, JY)).  The Hermitian
    pairing on T^{1,0} is normalized so that the standard frame d/dz_p is
    orthonormal: pairing(zeta, xi) = 2 g_C(zeta, conj(xi)).
    """

    def __init__(self, structure):
        self.structure = structure

    def gram(self, points):
        """g as a matrix field: g(X,Y) = X^T G(p) Y."""
        J = self.structure(points)
        eye = np.eye(self.structure.dim)
        return 0.5 * (eye + np.swapaxes(J, -1, -2) @ J)

    def g(self, points, X, Y):
        G = self.gram(points)
        return np.einsum("...i,...ij,...j->...", X, G, Y)

    def omega(self, points, X, Y):
        J = self.structure(points)
        JY = np.einsum("...ij,...j->...i", J, Y)
        return self.g(points, X, JY)

    def pairing_10(self, points, zeta, xi):
        """Hermitian pairing of (1,0) vectors; delta_pq on orthonormal frames."""
        G = self.gram(points)
        return 2.0 * np.einsum("...i,...ij,...j->...", zeta, G, np.conj(xi))


def induced_metric(structure):
    return HermitianMetric(structure)


def project_01(J, X):
    """(0,1)-projection (X + iJX)/2 of a complexified tangent vector."""
    return 0.5 * (X + 1j * np.einsum("...ij,...j->...i", J, X))


def project_10(J, X):
    """(1,0)-projection (X - iJX)/2 of a complexified tangent vector."""
    return 0.5 * (X - 1j * np.einsum("...ij,...j->...i", J, X))


def _gram_schmidt(J, G, seed_order, pivot_tol=PIVOT_TOL):
    """Batched real Gram-Schmidt across J-invariant planes.

    Returns real seeds u of shape (..., n, d); each pair (u_p, J u_p) is
    g-orthonormal, and consecutive planes are g-orthogonal.  The construction
    is deterministic given seed_order, hence smooth in the base point.
    """
    d = J.shape[-1]
    n = d // 2
    batch = J.shape[:-2]
    us = []
    for p in range(n):
        v = np.zeros(batch + (d,))
        v[..., seed_order[p]] = 1.0
        for uq in us:
            Juq = np.einsum("...ij,...j->...i", J, uq)
            for w in (uq, Juq):
                coef = np.einsum("...i,...ij,...j->...", v, G, w)
                v = v - coef[..., None] * w
        piv = np.sqrt(np.einsum("...i,...ij,...j->...", v, G, v))
        if np.min(piv) < pivot_tol:
            raise DegenerateFrame(
                f"Gram-Schmidt pivot {np.min(piv):.3e} below {pivot_tol:.1e} "
                f"for seed {seed_order[p]}"
            )
        us.append(v / piv[..., None])
    return np.stack(us, axis=-2)


def _pivot_profile(J, G, seed_order):
    """Minimum Gram-Schmidt pivot over the batch for a (partial) seed ordering."""
    d = J.shape[-1]
    us = []
    worst = np.inf
    for p in range(len(seed_order)):
        v = np.zeros(J.shape[:-2] + (d,))
        v[..., seed_order[p]] = 1.0
        for uq in us:
            Juq = np.einsum("...ij,...j->...i", J, uq)
            for w in (uq, Juq):
                coef = np.einsum("...i,...ij,...j->...", v, G, w)
                v = v - coef[..., None] * w
        piv = np.sqrt(np.abs(np.einsum("...i,...ij,...j->...", v, G, v)))
        worst = min(worst, float(np.min(piv)))
        if worst <= 0:
            return 0.0
        us.append(v / np.maximum(piv[..., None], 1e-300))
    return worst


@dataclass
class Frame:
    """Orthonormal frame zeta_1..zeta_n of T^{1,0} built from real seeds.

    zeta_p = (u_p - i J u_p)/2 with g-orthonormal J-invariant seed planes, so
    the reconstruction identities u_p = zeta_p + conj(zeta_p) and
    J u_p = i (zeta_p - conj(zeta_p)) hold exactly.
    """

    structure: AlmostComplexStructure
    metric: HermitianMetric
    seed_order: tuple
    fd_h: float
    orthonormal: bool = True
    pivot_tol: float = PIVOT_TOL

    @property
    def n(self):
        return self.structure.n

    @property
    def dim(self):
        return self.structure.dim

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        J = self.structure(points)
        G = self.metric.gram(points)
        u = _gram_schmidt(J, G, self.seed_order, self.pivot_tol)
        Ju = np.einsum("...ij,...pj->...pi", J, u)
        return 0.5 * (u - 1j * Ju)

    def seeds(self, points):
        points = np.asarray(points, dtype=float)
        J = self.structure(points)
        G = self.metric.gram(points)
        return _gram_schmidt(J, G, self.seed_order, self.pivot_tol)

    def d_zeta(self, points, h=None):
        """Coordinate derivatives of the frame coefficients by differencing.

        Returns dZ with dZ[..., j, p, k] = d(zeta_p^k)/dx_j, using central
        differences of spacing h, one-sided where the structure's box would
        be violated.  Raises StencilOutOfDomain if no stencil fits.
        """
        points = np.asarray(points, dtype=float)
        h = self.fd_h if h is None else h
        d = self.dim
        out = np.empty(points.shape[:-1] + (d, self.n, d), dtype=complex)
        lo, hi = (None, None) if self.structure.box is None else self.structure.box
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = h
            if lo is None:
                out[..., j, :, :] = (self(points + ej) - self(points - ej)) / (2 * h)
                continue
            pj = points[..., j]
            ok_minus = pj - h >= lo[j] - 1e-12
            ok_plus = pj + h <= hi[j] + 1e-12
            val = np.empty(points.shape[:-1] + (self.n, d), dtype=complex)
            both = ok_minus & ok_plus
            if np.any(both):
                sub = points[both]
                val[both] = (self(sub + ej) - self(sub - ej)) / (2 * h)
            fwd = ~ok_minus & ok_plus
            if np.any(fwd):
                sub = points[fwd]
                if np.any(sub[..., j] + 2 * h > hi[j] + 1e-12):
                    raise StencilOutOfDomain(f"no room for stencil along axis {j}")
                val[fwd] = (
                    -3 * self(sub) + 4 * self(sub + ej) - self(sub + 2 * ej)
                ) / (2 * h)
            bwd = ok_minus & ~ok_plus
            if np.any(bwd):
                sub = points[bwd]
                if np.any(sub[..., j] - 2 * h < lo[j] - 1e-12):
                    raise StencilOutOfDomain(f"no room for stencil along axis {j}")
                val[bwd] = (
                    3 * self(sub) - 4 * self(sub - ej) + self(sub - 2 * ej)
                ) / (2 * h)
            if np.any(~ok_minus & ~ok_plus):
                raise StencilOutOfDomain(f"no room for stencil along axis {j}")
            out[..., j, :, :] = val
        return out


def _region_samples(region, n, count=81, pad=0.0):
    """Deterministic lattice of sample points from a region description."""
    lo, hi = _region_box(region, n)
    d = 2 * n
    per_axis = max(2, int(round(count ** (1.0 / d))))
    axes = [np.linspace(lo[j] + pad, hi[j] - pad, per_axis) for j in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _region_box(region, n):
    d = 2 * n
    if hasattr(region, "lo") and hasattr(region, "hi"):
        return np.asarray(region.lo, float), np.asarray(region.hi, float)
    lo, hi = region
    lo = np.broadcast_to(np.asarray(lo, float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (d,)).copy()
    return lo, hi


def split_frame(structure, metric=None, region=None, fd_h=None, pivot_tol=PIVOT_TOL):
    """Build the orthonormal frame with a deterministic global seed ordering.

    Seeds are coordinate basis vectors; the ordering is fixed once from a
    lattice of sample points of the region (so the chosen pivots never switch
    inside the domain and the frame stays smooth).  Candidates are scanned in
    coordinate order and accepted when their worst-case pivot is solid; if
    none is, the best available candidate is taken.
    """
    metric = induced_metric(structure) if metric is None else metric
    n, d = structure.n, structure.dim
    if region is None:
        region = ((-1.0,) * d, (1.0,) * d)
    samples = _region_samples(region, n)
    J = structure(samples)
    G = metric.gram(samples)
    order = []
    for _ in range(n):
        best, best_piv = None, -1.0
        for c in range(d):
            if c in order:
                continue
            piv = _pivot_profile(J, G, tuple(order) + (c,))
            if piv >= 0.25:
                best, best_piv = c, piv
                break
            if piv > best_piv:
                best, best_piv = c, piv
        if best_piv < pivot_tol:
            raise DegenerateFrame(
                f"no admissible seed for slot {len(order)} (pivot {best_piv:.3e})"
            )
        order.append(best)
    if fd_h is None:
        fd_h = getattr(region, "h", None) or 1e-3
    frame = Frame(
        structure=structure,
        metric=metric,
        seed_order=tuple(order),
        fd_h=float(fd_h),
        pivot_tol=pivot_tol,
    )
    frame(samples[:1])  # fail fast if the ordering degenerates at a sample
    return frame


def bracket_full(frame, p, q, points, h=None, conj_first=False, conj_second=True):
    """Lie bracket of two frame fields (optionally conjugated) at points.

    Default computes [zeta_p, conj(zeta_q)].  Coefficient derivatives come
    from frame.d_zeta with spacing h.
    """
    points = np.asarray(points, dtype=float)
    Z = frame(points)
    dZ = frame.d_zeta(points, h=h)
    A = np.conj(Z[..., p, :]) if conj_first else Z[..., p, :]
    B = np.conj(Z[..., q, :]) if conj_second else Z[..., q, :]
    dA = np.conj(dZ[..., :, p, :]) if conj_first else dZ[..., :, p, :]
    dB = np.conj(dZ[..., :, q, :]) if conj_second else dZ[..., :, q, :]
    # [A, B]^k = A^j dB/dx_j^k - B^j dA/dx_j^k
    return np.einsum("...j,...jk->...k", A, dB) - np.einsum(
        "...j,...jk->...k", B, dA
    )


def bracket_01(frame, p, q, points, h=None):
    """(0,1) part of [zeta_p, conj(zeta_q)], the A-matrix correction field."""
    points = np.asarray(points, dtype=float)
    br = bracket_full(frame, p, q, points, h=h)
    J = frame.structure(points)
    return project_01(J, br)


def structure_from_table(path, n):
    """Custom structure from a CSV table: coordinates + 2n x 2n entries row-major.

    The table must sample a full tensor grid; entries are interpolated
    multilinearly between samples.  Validation (J^2 = -I) is exact only at
    the table's own sample points.
    """
    from scipy.interpolate import RegularGridInterpolator

    d = 2 * n
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != d + d * d:
        raise ValueError(
            f"table rows must have {d + d * d} columns (coords + matrix)"
        )
    coords = data[:, :d]
    entries = data[:, d:]
    axes = [np.unique(coords[:, j]) for j in range(d)]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != len(data):
        raise ValueError("table does not sample a full tensor grid")
    order = np.lexsort([coords[:, j] for j in range(d - 1, -1, -1)])
    grids = entries[order].reshape(shape + (d * d,))
    interp = RegularGridInterpolator(axes, grids, method="linear")
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])

    def func(points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, d)
        vals = interp(np.clip(flat, lo, hi))
        return vals.reshape(pts.shape[:-1] + (d, d))

    return AlmostComplexStructure(
        n=n, func=func, family="custom", params={"table": str(path)},
        box=(lo, hi),
    )


def integrability_defect(structure, region, samples=None, fd_h=None, metric=None):
    """Max norm of the (1,0) part of [conj(zeta_p), conj(zeta_q)], p < q.

    Vanishes (to stencil tolerance) exactly when the structure is integrable;
    n = 1 structures are always integrable and report 0.
    """
    frame = split_frame(structure, metric=metric, region=region, fd_h=fd_h)
    if samples is None:
        samples = _region_samples(region, structure.n, pad=2 * frame.fd_h)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = structure.n
    if n == 1:
        return 0.0
    J = structure(samples)
    worst = 0.0
    for p in range(n):
        for q in range(p + 1, n):
            br = bracket_full(
                frame, p, q, samples, h=fd_h, conj_first=True, conj_second=True
            )
            val = np.abs(project_10(J, br)).max()
            worst = max(worst, float(val))
    return worst

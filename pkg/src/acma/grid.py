"""Uniform grids on boxes in R^{2n}, domain classification, scalar fields.

A GridDomain discretizes {rho < 0} inside a bounding box.  Grid nodes are
classified exterior / boundary band / interior; an interior node has the full
second-order stencil (axis neighbors and diagonal pairs) inside {rho < 0}.
Band nodes carry interpolation stencils tying their value to the Dirichlet
datum at a boundary foot point and to one deeper interpolation point, which
keeps the overall boundary treatment second order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from .errors import EmptyDomain, NotStrictlyPsh, TransversalityFailure

_CHUNK = 1 << 19


def stencil_offsets(d):
    """Offsets (in index units) an interior point must reach: +-e_j, +-e_j+-e_k."""
    offs = []
    for j in range(d):
        for s in (-1, 1):
            e = np.zeros(d, dtype=int)
            e[j] = s
            offs.append(e)
    for j, k in combinations(range(d), 2):
        for sj, sk in product((-1, 1), repeat=2):
            e = np.zeros(d, dtype=int)
            e[j], e[k] = sj, sk
            offs.append(e)
    return np.array(offs, dtype=int)


def evaluate_on_grid(fn, axes, chunk=_CHUNK):
    """Evaluate a vectorized callable over the tensor grid, chunked."""
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    out = np.empty(total, dtype=float)
    d = len(axes)
    strides = np.array(
        [int(np.prod(shape[j + 1 :])) for j in range(d)], dtype=np.int64
    )
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        flat = np.arange(start, stop, dtype=np.int64)
        pts = np.empty((stop - start, d))
        rem = flat
        for j in range(d):
            idx = rem // strides[j]
            rem = rem - idx * strides[j]
            pts[:, j] = axes[j][idx]
        out[start:stop] = np.asarray(fn(pts), dtype=float).reshape(-1)
    return out


def _shifted_all(mask, offsets, shape):
    """AND of the mask shifted by every offset (non-wrapping)."""
    d = len(shape)
    m = mask.reshape(shape)
    out = m.copy()
    for off in offsets:
        src = [slice(None)] * d
        dst = [slice(None)] * d
        for j in range(d):
            o = off[j]
            if o > 0:
                src[j] = slice(o, None)
                dst[j] = slice(None, -o)
            elif o < 0:
                src[j] = slice(None, o)
                dst[j] = slice(-o, None)
        shifted = np.zeros(shape, dtype=bool)
        shifted[tuple(dst)] = m[tuple(src)]
        out &= shifted
    return out.reshape(-1)


@dataclass
class BandStencils:
    """Boundary interpolation data for band nodes (one row per band node).

    u(B) = (t_star * sum_c w_c u(corner_c) + s_in * phi(foot)) / (t_star + s_in)
    along the outward gradient direction; ``direct`` rows fall back to
    u(B) = phi(foot).
    """

    foot: np.ndarray
    t_star: np.ndarray
    s_in: np.ndarray
    corner_flat: np.ndarray
    corner_w: np.ndarray
    direct: np.ndarray
    normal: np.ndarray


@dataclass
class GridDomain:
    n: int
    lo: np.ndarray
    hi: np.ndarray
    h: float
    shape: tuple
    rho_values: np.ndarray
    class_flat: np.ndarray  # 0 exterior, 1 band, 2 interior
    inside_flat: np.ndarray
    interior_flat: np.ndarray
    band_flat: np.ndarray
    pos: np.ndarray  # full-grid -> index into inside ordering, -1 outside
    band: BandStencils
    rho_callable: object = None
    psh_margin: float = field(default=np.nan)

    @property
    def dim(self):
        return 2 * self.n

    @property
    def strides(self):
        d = self.dim
        return np.array(
            [int(np.prod(self.shape[j + 1 :])) for j in range(d)], dtype=np.int64
        )

    @property
    def axes(self):
        return [
            self.lo[j] + self.h * np.arange(self.shape[j]) for j in range(self.dim)
        ]

    @property
    def n_inside(self):
        return len(self.inside_flat)

    @property
    def n_interior(self):
        return len(self.interior_flat)

    @property
    def interior_pos(self):
        return self.pos[self.interior_flat]

    @property
    def band_pos(self):
        return self.pos[self.band_flat]

    def points_of_flat(self, flat):
        flat = np.asarray(flat, dtype=np.int64)
        d = self.dim
        pts = np.empty(flat.shape + (d,))
        rem = flat
        for j in range(d):
            idx = rem // self.strides[j]
            rem = rem - idx * self.strides[j]
            pts[..., j] = self.lo[j] + self.h * idx
        return pts

    def interior_points(self):
        return self.points_of_flat(self.interior_flat)

    def inside_points(self):
        return self.points_of_flat(self.inside_flat)

    def band_points(self):
        return self.points_of_flat(self.band_flat)

    def locate(self, points):
        """Multilinear cells: corner flats (N, 2^d), weights, all-inside flag."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.dim
        rel = (points - self.lo) / self.h
        base = np.floor(rel + 1e-12).astype(np.int64)
        base = np.clip(base, 0, np.array(self.shape) - 2)
        frac = rel - base
        bits = np.array(list(product((0, 1), repeat=d)), dtype=np.int64)
        corner_idx = base[:, None, :] + bits[None, :, :]
        corner_flat = (corner_idx * self.strides).sum(axis=-1)
        w = np.where(bits[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        weights = w.prod(axis=-1)
        all_inside = (self.class_flat[corner_flat] > 0).all(axis=1)
        return corner_flat, weights, all_inside

    def contains(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return ((points >= self.lo - 1e-12) & (points <= self.hi + 1e-12)).all(
            axis=-1
        )

    def deep_interior_mask(self):
        """Mask over interior nodes whose full stencil is again interior."""
        shape = self.shape
        interior = (self.class_flat == 2)
        deep = _shifted_all(interior, stencil_offsets(self.dim), shape)
        return deep[self.interior_flat]


class ScalarField:
    """Grid function on the full box; derivative access on interior nodes.

    Values may be NaN at exterior nodes (solved fields); analytic fields carry
    values everywhere.  All derivative accessors are linear in the values.
    """

    def __init__(self, domain, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != int(np.prod(domain.shape)):
            raise ValueError("value array does not match the grid")
        self.domain = domain
        self.values = values

    @classmethod
    def from_callable(cls, domain, fn):
        vals = evaluate_on_grid(fn, domain.axes)
        return cls(domain, vals)

    def copy(self):
        return ScalarField(self.domain, self.values.copy())

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.domain, self.values + other.values)
        return ScalarField(self.domain, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.domain, self.values - other.values)
        return ScalarField(self.domain, self.values - other)

    def __rmul__(self, c):
        return ScalarField(self.domain, c * self.values)

    def __mul__(self, c):
        return ScalarField(self.domain, c * self.values)

    def __neg__(self):
        return ScalarField(self.domain, -self.values)

    def inside_values(self):
        return self.values[self.domain.inside_flat]

    def interior_values(self):
        return self.values[self.domain.interior_flat]

    def band_values(self):
        return self.values[self.domain.band_flat]

    def max_norm_inside(self):
        return float(np.abs(self.inside_values()).max())

    def interior_gradient(self, flats=None):
        dom = self.domain
        flats = dom.interior_flat if flats is None else flats
        v, h = self.values, dom.h
        d = dom.dim
        G = np.empty((len(flats), d))
        for j in range(d):
            s = dom.strides[j]
            G[:, j] = (v[flats + s] - v[flats - s]) / (2 * h)
        return G

    def interior_hessian(self, flats=None):
        dom = self.domain
        flats = dom.interior_flat if flats is None else flats
        v, h = self.values, dom.h
        d = dom.dim
        H = np.empty((len(flats), d, d))
        v0 = v[flats]
        for j in range(d):
            s = dom.strides[j]
            H[:, j, j] = (v[flats + s] - 2 * v0 + v[flats - s]) / (h * h)
        for j, k in combinations(range(d), 2):
            sj, sk = dom.strides[j], dom.strides[k]
            H[:, j, k] = (
                v[flats + sj + sk]
                - v[flats + sj - sk]
                - v[flats - sj + sk]
                + v[flats - sj - sk]
            ) / (4 * h * h)
            H[:, k, j] = H[:, j, k]
        return H

    def gradient_inside(self):
        """First derivatives at every inside node, one-sided in the band.

        Central where both axis neighbors are inside, one-sided second order
        otherwise, NaN when not even two same-side neighbors exist.
        """
        dom = self.domain
        flats = dom.inside_flat
        v, h = self.values, dom.h
        d = dom.dim
        cls = dom.class_flat
        G = np.full((len(flats), d), np.nan)
        nflat = int(np.prod(dom.shape))
        for j in range(d):
            s = dom.strides[j]
            fp, fm = flats + s, flats - s
            okp = (fp >= 0) & (fp < nflat)
            okm = (fm >= 0) & (fm < nflat)
            insp = np.zeros(len(flats), bool)
            insm = np.zeros(len(flats), bool)
            insp[okp] = cls[fp[okp]] > 0
            insm[okm] = cls[fm[okm]] > 0
            c = insp & insm
            G[c, j] = (v[fp[c]] - v[fm[c]]) / (2 * h)
            fwd = insp & ~insm
            if np.any(fwd):
                f2 = flats[fwd] + 2 * s
                ok2 = (f2 < nflat) & (cls[np.clip(f2, 0, nflat - 1)] > 0)
                g1 = (v[flats[fwd] + s] - v[flats[fwd]]) / h
                g2 = (
                    -3 * v[flats[fwd]] + 4 * v[flats[fwd] + s] - v[np.clip(f2, 0, nflat - 1)]
                ) / (2 * h)
                G[fwd, j] = np.where(ok2, g2, g1)
            bwd = insm & ~insp
            if np.any(bwd):
                f2 = flats[bwd] - 2 * s
                ok2 = (f2 >= 0) & (cls[np.clip(f2, 0, nflat - 1)] > 0)
                g1 = (v[flats[bwd]] - v[flats[bwd] - s]) / h
                g2 = (
                    3 * v[flats[bwd]] - 4 * v[flats[bwd] - s] + v[np.clip(f2, 0, nflat - 1)]
                ) / (2 * h)
                G[bwd, j] = np.where(ok2, g2, g1)
        return G

    def lipschitz_max(self):
        """Max difference quotient over inside-adjacent axis edges."""
        dom = self.domain
        v, h = self.values, dom.h
        worst = 0.0
        nflat = int(np.prod(dom.shape))
        cls = dom.class_flat
        for j in range(dom.dim):
            s = dom.strides[j]
            f = dom.inside_flat
            fp = f + s
            ok = (fp < nflat) & (cls[np.clip(fp, 0, nflat - 1)] > 0)
            if np.any(ok):
                worst = max(
                    worst, float(np.abs(v[fp[ok]] - v[f[ok]]).max() / h)
                )
        return worst

    def values_at(self, points, require_inside=True):
        """Multilinear interpolation at arbitrary points of the box."""
        corner_flat, weights, all_inside = self.domain.locate(points)
        if require_inside and not all_inside.all():
            bad = np.atleast_2d(np.asarray(points, float))[~all_inside][0]
            raise ValueError(f"interpolation cell leaves the domain near {bad}")
        return (self.values[corner_flat] * weights).sum(axis=1)

    def c2_scale(self):
        """Crude ||u||_{C^2}-style scale for tolerance normalization."""
        vals = self.inside_values()
        s = float(np.abs(vals).max()) if vals.size else 0.0
        if self.domain.n_interior:
            s = max(s, float(np.abs(self.interior_hessian()).max()))
            s = max(s, float(np.abs(self.interior_gradient()).max()))
        return max(1.0, s)


def _as_rho_callable(rho, axes):
    if callable(rho):
        return rho
    raise TypeError("rho must be callable (use field.values_at for tables)")


def grid_build(
    rho,
    box,
    h,
    n,
    structure=None,
    metric=None,
    frame=None,
    psh_check=True,
    grad_tol=1e-6,
):
    """Discretize {rho < 0}: classify nodes and build boundary-band stencils.

    rho is a vectorized callable on points (..., 2n).  The box must contain
    the closure of {rho <= 0} with margin >= 3h.  Raises EmptyDomain,
    NotStrictlyPsh (rho not strictly psh on the interior w.r.t. the given or
    standard structure), or TransversalityFailure (gradient too small on the
    band / no boundary crossing along the gradient).
    """
    d = 2 * n
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, float), (d,)).astype(float)
    hi = np.broadcast_to(np.asarray(hi, float), (d,)).astype(float)
    counts = (hi - lo) / h
    if np.abs(counts - np.round(counts)).max() > 1e-9:
        raise ValueError("box side lengths must be integer multiples of h")
    shape = tuple(int(round(c)) + 1 for c in counts)
    axes = [lo[j] + h * np.arange(shape[j]) for j in range(d)]
    rho_fn = _as_rho_callable(rho, axes)
    rho_vals = evaluate_on_grid(rho_fn, axes)

    inside = rho_vals < 0.0
    if not inside.any():
        raise EmptyDomain("{rho < 0} contains no grid point")

    offsets = stencil_offsets(d)
    interior = _shifted_all(inside, offsets, shape)
    cls = np.zeros(int(np.prod(shape)), dtype=np.int8)
    cls[inside] = 1
    cls[interior] = 2
    inside_flat = np.nonzero(inside)[0].astype(np.int64)
    interior_flat = np.nonzero(interior)[0].astype(np.int64)
    band_flat = np.nonzero(inside & ~interior)[0].astype(np.int64)
    if interior_flat.size == 0:
        raise EmptyDomain("domain too thin: no interior point has a full stencil")

    pos = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    pos[inside_flat] = np.arange(inside_flat.size)

    dom = GridDomain(
        n=n,
        lo=lo,
        hi=hi,
        h=float(h),
        shape=shape,
        rho_values=rho_vals,
        class_flat=cls,
        inside_flat=inside_flat,
        interior_flat=interior_flat,
        band_flat=band_flat,
        pos=pos,
        band=None,
        rho_callable=rho_fn,
    )

    # check strict psh-ness first so indefinite defining functions are
    # reported as such even when their sublevel set also leaves the box
    if psh_check:
        from .operator import OperatorKernel  # deferred: operator imports grid
        from .geometry import split_frame, standard_structure

        if frame is None:
            if structure is None:
                structure = standard_structure(n)
            frame = split_frame(structure, metric=metric, region=dom, fd_h=h)
        kernel = OperatorKernel(dom, frame)
        rho_field = ScalarField(dom, rho_vals)
        margin = float(kernel.eig_range(kernel.a_field(rho_field))[0].min())
        dom.psh_margin = margin
        if margin <= 0:
            raise NotStrictlyPsh(
                f"defining function margin {margin:.3e} is not positive"
            )

    # stencils need at least one spare node between {rho < 0} and the faces
    idx_grid = np.unravel_index(inside_flat, shape)
    for j in range(d):
        if idx_grid[j].min() < 1 or idx_grid[j].max() > shape[j] - 2:
            raise ValueError("{rho < 0} touches the box faces; enlarge the box")

    dom.band = _build_band_stencils(dom, rho_fn, grad_tol)
    return dom


def _build_band_stencils(dom, rho_fn, grad_tol):
    d = dom.dim
    h = dom.h
    B = dom.points_of_flat(dom.band_flat)
    nb = len(B)
    if nb == 0:
        return BandStencils(*(np.empty((0,)),) * 7)

    grad = np.empty((nb, d))
    for j in range(d):
        ej = np.zeros(d)
        ej[j] = h
        grad[:, j] = (rho_fn(B + ej) - rho_fn(B - ej)) / (2 * h)
    gnorm = np.linalg.norm(grad, axis=1)
    if gnorm.min() < grad_tol:
        raise TransversalityFailure(
            f"|grad rho| = {gnorm.min():.3e} below {grad_tol:.1e} on the band"
        )
    nhat = grad / gnorm[:, None]

    # outward bracket: grow t_hi until rho(B + t_hi nhat) >= 0
    face_clear = np.minimum(
        (dom.hi - B).min(axis=1), (B - dom.lo).min(axis=1)
    )
    t_hi = np.full(nb, 1.5 * h)
    for _ in range(4):
        val = rho_fn(B + t_hi[:, None] * nhat)
        need = val < 0
        if not need.any():
            break
        t_hi[need] = np.minimum(2 * t_hi[need], face_clear[need] - 1e-12)
    if (rho_fn(B + t_hi[:, None] * nhat) < 0).any():
        raise TransversalityFailure(
            "no boundary crossing along the gradient from a band point"
        )
    t_lo = np.zeros(nb)
    for _ in range(60):
        mid = 0.5 * (t_lo + t_hi)
        neg = rho_fn(B + mid[:, None] * nhat) < 0
        t_lo = np.where(neg, mid, t_lo)
        t_hi = np.where(neg, t_hi, mid)
    t_star = 0.5 * (t_lo + t_hi)
    foot = B + t_star[:, None] * nhat

    corner_flat = np.zeros((nb, 2 ** d), dtype=np.int64)
    corner_w = np.zeros((nb, 2 ** d))
    s_in = np.zeros(nb)
    done = np.zeros(nb, dtype=bool)
    for mult in (1.0, 2.0, 3.0):
        todo = ~done
        if not todo.any():
            break
        s = mult * h
        I = B[todo] - s * nhat[todo]
        in_box = ((I >= dom.lo + 1e-12) & (I <= dom.hi - 1e-12)).all(axis=1)
        cf, cw, all_inside = dom.locate(I)
        ok = all_inside & in_box
        sel = np.nonzero(todo)[0][ok]
        corner_flat[sel] = cf[ok]
        corner_w[sel] = cw[ok]
        s_in[sel] = s
        done[sel] = True
    direct = ~done
    return BandStencils(
        foot=foot,
        t_star=t_star,
        s_in=s_in,
        corner_flat=corner_flat,
        corner_w=corner_w,
        direct=direct,
        normal=nhat,
    )


def ball_rho(n, radius=1.0, center=None):
    d = 2 * n
    c = np.zeros(d) if center is None else np.asarray(center, float)
    r2 = radius * radius

    def fn(points):
        diff = np.asarray(points, float) - c
        return (diff * diff).sum(axis=-1) - r2

    return fn


def ellipsoid_rho(semi_axes):
    a = np.asarray(semi_axes, float)

    def fn(points):
        q = np.asarray(points, float) / a
        return (q * q).sum(axis=-1) - 1.0

    return fn

"""Pseudoholomorphic disks with prescribed jets, and disk-based psh probes.

A disk is a map lam: D_r -> R^{2n} with d(lam)/dx + J(lam) d(lam)/dy = 0.
Construction: conjugate coordinates so J = J_st at the center, rescale to the
unit parameter disk, and run Picard iteration

    mu_{m+1} = P + K[ (J_st - J(mu_m))/2 * d_y mu_m ]

where P is the polynomial jet part (J_st-holomorphic) and K is a modal
Cauchy-Green transform on a polar grid: per Fourier mode in the angle, the
radial integral solving d(corr)/dzbar = g, followed by subtraction of the
holomorphic jet so the correction vanishes at 0 to the prescribed order.
Derivatives of the correction are evaluated through the same modal calculus
(the radial ODE h' = (m'/rho) h + 2 g), so dzbar(corr) = g holds exactly and
the reported residual measures the Picard tail, not quadrature noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DiskEscapesDomain, JetTooLong, NoContraction
from .geometry import induced_metric, standard_matrix
from .grid import ScalarField

_W_CACHE = {}


def _c2r(w):
    """C^n values -> interleaved real 2n vectors."""
    out = np.empty(w.shape[:-1] + (2 * w.shape[-1],))
    out[..., 0::2] = w.real
    out[..., 1::2] = w.imag
    return out


def _r2c(v):
    return v[..., 0::2] + 1j * v[..., 1::2]


def _centering(structure, v0, metric=None):
    """Orthogonal-ish chart matrix Q with Q^{-1} J(v0) Q = J_st."""
    metric = metric or induced_metric(structure)
    d = structure.dim
    J0 = structure(np.asarray(v0, float))
    G = metric.gram(np.asarray(v0, float))

    def gdot(a, b):
        return float(a @ G @ b)

    cols = []
    for seed in range(d):
        if len(cols) == d:
            break
        v = np.zeros(d)
        v[seed] = 1.0
        for u in cols:
            v = v - gdot(v, u) * u
        nrm = np.sqrt(max(gdot(v, v), 0.0))
        if nrm < 1e-8:
            continue
        u = v / nrm
        cols.append(u)
        cols.append(J0 @ u)
    Q = np.stack(cols[:d], axis=1)
    return Q


def _weight_matrix(nr, m):
    """Radial quadrature matrix for the mode-m Cauchy-Green integral."""
    key = (nr, m)
    if key in _W_CACHE:
        return _W_CACHE[key]
    rho = (np.arange(1, nr + 1)) / nr
    dr = 1.0 / nr
    W = np.zeros((nr, nr))
    if m >= 1:
        # h_{m-1}(rho_i) = -2 int_{rho_i}^1 g_m(s) (rho_i/s)^{m-1} ds
        for i in range(nr):
            js = np.arange(i, nr)
            if len(js) < 2:
                continue
            tw = np.full(len(js), dr)
            tw[0] *= 0.5
            tw[-1] *= 0.5
            W[i, js] = -2.0 * tw * (rho[i] / rho[js]) ** (m - 1)
    else:
        # h_{m-1}(rho_i) = 2 int_0^{rho_i} g_m(s) (s/rho_i)^{1-m} ds
        # (virtual node at s=0 contributes 0 since 1-m >= 1)
        for i in range(nr):
            js = np.arange(0, i + 1)
            tw = np.full(len(js), dr)
            tw[-1] *= 0.5
            W[i, js] = 2.0 * tw * (rho[js] / rho[i]) ** (1 - m)
    _W_CACHE[key] = W
    return W


class _PolarCalculus:
    """Modal transforms on an Nr x Ntheta polar grid of the unit disk."""

    def __init__(self, nr, nt):
        self.nr, self.nt = nr, nt
        self.rho = np.arange(1, nr + 1) / nr
        self.theta = 2 * np.pi * np.arange(nt) / nt
        self.z = self.rho[:, None] * np.exp(1j * self.theta[None, :])
        self.mvals = np.fft.fftfreq(nt, 1.0 / nt).astype(int)
        self.midx = {int(m): i for i, m in enumerate(self.mvals)}

    def modes_of(self, samples):
        G = np.fft.fft(samples, axis=1) / self.nt
        G[:, np.abs(self.mvals) >= self.nt // 2] = 0.0  # dealias Nyquist
        return G

    def samples_of(self, modes):
        return np.fft.ifft(modes, axis=1) * self.nt

    def cauchy_green(self, G, kill_order):
        """Modal transform H with dzbar(corr) = g and vanishing jet at 0.

        G and H are (nr, nt, n) complex arrays in FFT mode layout.
        """
        H = np.zeros_like(G)
        for mi, m in enumerate(self.mvals):
            if not np.any(G[:, mi, :]):
                continue
            mt = m - 1
            if mt not in self.midx or abs(mt) >= self.nt // 2:
                continue
            W = _weight_matrix(self.nr, m)
            H[:, self.midx[mt], :] += np.einsum("ij,jk->ik", W, G[:, mi, :])
        # subtract the holomorphic jet c_l z^l, l = 0..kill_order
        dr = 1.0 / self.nr
        for l in range(kill_order + 1):
            src = l + 1
            if src not in self.midx:
                continue
            tw = np.full(self.nr, dr)
            tw[-1] *= 0.5
            cl = -2.0 * np.einsum(
                "i,ik->k", tw * self.rho ** (-l), G[:, self.midx[src], :]
            )
            H[:, self.midx[l], :] -= cl[None, :] * (self.rho ** l)[:, None]
        return H

    def d_z(self, H, G):
        """Modes of d(corr)/dz from the radial ODE h' = (m'/rho) h + 2 g."""
        Cz = np.zeros_like(H)
        inv_rho = 1.0 / self.rho
        for mi, m in enumerate(self.mvals):
            mp = m - 1  # mode of H fed by G-mode m
            if mp not in self.midx:
                continue
            tgt = mp - 1
            if tgt not in self.midx or abs(tgt) >= self.nt // 2:
                continue
            hi = self.midx[mp]
            term = mp * inv_rho[:, None] * H[:, hi, :] + G[:, mi, :]
            Cz[:, self.midx[tgt], :] += term
        return Cz

    def extrapolate_to_center(self, radial_seq):
        """Extrapolate a smooth radial sequence to rho = 0 (fit in rho^2)."""
        k = min(4, self.nr)
        x = self.rho[:k] ** 2
        coef = np.polyfit(x, radial_seq[:k], 1)
        return coef[-1]


@dataclass
class Disk:
    structure: object
    center: np.ndarray
    jets: list
    radius: float
    chart: np.ndarray  # Q
    rho: np.ndarray
    theta: np.ndarray
    points: np.ndarray  # (nr, nt, 2n) physical samples
    residual: float
    iterations: int
    contraction: list
    jet_errors: dict

    def parameter_z(self):
        return self.rho[:, None] * np.exp(1j * self.theta[None, :])


def make_disk(
    structure,
    v0,
    jets,
    radius,
    tol=1e-9,
    grid=(32, 64),
    max_iter=50,
    metric=None,
):
    """J-holomorphic disk with lam(0) = v0 and d(lam)/dx(0) = jets[0].

    Second jets (len(jets) == 2) prescribe d2(lam)/dx2(0) up to the scheme's
    outer-correction tolerance.  Raises NoContraction when Picard iterates
    stop contracting (structure too far from J_st at this radius) and
    JetTooLong for jets beyond order 2.
    """
    if len(jets) == 0 or len(jets) > 2:
        raise JetTooLong("jets must have length 1 or 2")
    v0 = np.asarray(v0, dtype=float)
    n = structure.n
    Q = _centering(structure, v0, metric)
    Qinv = np.linalg.inv(Q)
    Jst = standard_matrix(n)
    cal = _PolarCalculus(*grid)
    nr, nt = cal.nr, cal.nt
    z = cal.z

    w1 = _r2c(radius * (Qinv @ np.asarray(jets[0], float)))
    a2 = (
        _r2c(radius ** 2 * (Qinv @ np.asarray(jets[1], float))) / 2.0
        if len(jets) == 2
        else np.zeros(n, dtype=complex)
    )
    a2_corr = np.zeros(n, dtype=complex)
    kill = len(jets)

    def chart_J(mu_real):
        phys = v0 + np.einsum("ij,...j->...i", Q, mu_real)
        return np.einsum("ij,...jk,kl->...il", Qinv, structure(phys), Q)

    def phi_of(mu_hat, mu_y_hat):
        Jt = chart_J(_c2r(mu_hat))
        dy = _c2r(mu_y_hat)
        g_real = 0.5 * np.einsum("...ij,...j->...i", (Jst - Jt), dy)
        return _r2c(g_real)

    corr = np.zeros((nr, nt, n), dtype=complex)
    G = np.zeros_like(corr)
    H = np.zeros_like(corr)
    mu = None
    ratios = []
    delta_prev = None
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        a2_eff = a2 + a2_corr
        P = w1[None, None, :] * z[:, :, None] + a2_eff[None, None, :] * (
            z ** 2
        )[:, :, None]
        Pz = w1[None, None, :] + 2 * a2_eff[None, None, :] * z[:, :, None]
        mu_new = P + corr
        corr_z = cal.samples_of(cal.d_z(H, G))
        corr_zb = cal.samples_of(G)
        mu_y = 1j * (Pz + corr_z - corr_zb)
        g_samples = phi_of(mu_new, mu_y)
        G_new = cal.modes_of(g_samples)
        if kill == 2:
            dzg = cal.extrapolate_to_center(
                G_new[:, cal.midx[1], :] / cal.rho[:, None]
            )
            dzbg = cal.extrapolate_to_center(
                G_new[:, cal.midx[-1], :] / cal.rho[:, None]
            )
            a2_corr = -(2 * dzg + dzbg) / 2.0
        H_new = cal.cauchy_green(G_new, kill)
        corr_new = cal.samples_of(H_new)

        delta = float(np.abs(corr_new - corr).max()) if it > 1 else float(
            np.abs(corr_new).max()
        )
        if mu is not None and delta_prev is not None and delta_prev > 0:
            ratio = delta / delta_prev
            ratios.append(ratio)
            if ratio > 0.9:
                stall += 1
                if stall >= 5 or delta > 1e3 * max(1.0, float(np.abs(w1).max())):
                    raise NoContraction(
                        f"Picard ratio {ratio:.3f} after {it} iterations"
                    )
            else:
                stall = 0
        corr, G, H, mu = corr_new, G_new, H_new, mu_new
        delta_prev = delta
        if delta <= max(tol * radius * 0.25, 1e-16):
            break
    else:
        if delta_prev is None or delta_prev > tol * radius:
            raise NoContraction(f"no convergence within {max_iter} iterations")

    # final state and residual in the physical parametrization
    a2_eff = a2 + a2_corr
    P = w1[None, None, :] * z[:, :, None] + a2_eff[None, None, :] * (z ** 2)[
        :, :, None
    ]
    Pz = w1[None, None, :] + 2 * a2_eff[None, None, :] * z[:, :, None]
    mu = P + corr
    corr_z = cal.samples_of(cal.d_z(H, G))
    corr_zb = cal.samples_of(G)
    mu_x = _c2r(Pz + corr_z + corr_zb)
    mu_y = _c2r(1j * (Pz + corr_z - corr_zb))
    Jt = chart_J(_c2r(mu))
    res_param = mu_x + np.einsum("...ij,...j->...i", Jt, mu_y)
    residual = float(np.abs(res_param).max() / radius)

    jet1 = (
        w1
        + cal.extrapolate_to_center(cal.d_z(H, G)[:, cal.midx[0], :])
        + cal.extrapolate_to_center(G[:, cal.midx[0], :])
    )
    jet1_phys = Q @ _c2r(jet1) / radius
    jet_errors = {
        "center": 0.0,
        "first": float(np.abs(jet1_phys - np.asarray(jets[0], float)).max()),
    }
    if kill == 2:
        jet_errors["second_correction"] = float(np.abs(a2_corr).max())

    points = v0 + np.einsum("ij,...j->...i", Q, _c2r(mu))
    return Disk(
        structure=structure,
        center=v0,
        jets=[np.asarray(j, float) for j in jets],
        radius=float(radius),
        chart=Q,
        rho=cal.rho,
        theta=cal.theta,
        points=points,
        residual=residual,
        iterations=it,
        contraction=ratios,
        jet_errors=jet_errors,
    )


def disk_laplacian_probe(u, disk, u_callable=None):
    """Laplacian of u composed with the disk, at the center.

    Ring averages at parameter radii 1/4 and 1/2 with Richardson
    extrapolation; exact center value.  u may be a ScalarField (multilinear
    samples) or, via u_callable, an analytic function.
    """
    if u_callable is not None:
        vals = u_callable(disk.points)
        f0 = float(u_callable(disk.center[None, :])[0])
    elif isinstance(u, ScalarField):
        pts = disk.points.reshape(-1, disk.points.shape[-1])
        try:
            vals = u.values_at(pts).reshape(disk.points.shape[:2])
        except ValueError as exc:
            raise DiskEscapesDomain(str(exc)) from None
        f0 = float(u.values_at(disk.center[None, :])[0])
    else:
        raise TypeError("u must be a ScalarField or provide u_callable")
    vals = np.asarray(vals, dtype=float).reshape(disk.points.shape[:2])
    nr = len(disk.rho)
    i1, i2 = nr // 4 - 1, nr // 2 - 1  # parameter radii 1/4 and 1/2
    r_phys = disk.radius * disk.rho
    E = []
    for i in (i1, i2):
        ring = float(vals[i].mean())
        E.append(4.0 * (ring - f0) / r_phys[i] ** 2)
    return float((4.0 * E[0] - E[1]) / 3.0)


def unit_directions(structure, point, n_samples, rng, include_axes=True):
    """Real tangent directions of unit induced-metric length."""
    metric = induced_metric(structure)
    d = structure.dim
    dirs = []
    if include_axes:
        dirs.extend(np.eye(d))
    if n_samples > len(dirs):
        extra = rng.standard_normal((n_samples - len(dirs), d))
        dirs.extend(extra)
    out = []
    p = np.asarray(point, float)
    for v in dirs:
        nrm = np.sqrt(float(metric.g(p, v, v)))
        out.append(v / nrm)
    return np.array(out[:n_samples]) if n_samples >= len(dirs) else np.array(out)


def psh_check_disks(
    u,
    point,
    n_samples,
    structure,
    radius=None,
    tol=1e-9,
    rng=None,
    u_callable=None,
    grid=(32, 64),
):
    """Minimum of Laplacian probes over sampled T^{1,0} directions.

    The sign agrees with the eigenvalue classification of A(u) where the
    margin beats the combined tolerances; coordinate axis directions are
    always included so extremal directions of diagonal Hessians are hit.
    """
    rng = np.random.default_rng(rng)
    point = np.asarray(point, float)
    if radius is None:
        dom = u.domain if isinstance(u, ScalarField) else None
        if dom is None:
            raise ValueError("radius required when u has no grid domain")
        clear = min(
            float((dom.hi - point).min()),
            float((point - dom.lo).min()),
            float(-dom.rho_callable(point[None, :])[0]) / 4.0,
        )
        radius = 0.1 * max(clear, 4 * dom.h)
    dirs = unit_directions(structure, point, n_samples, rng)
    margin = np.inf
    for v in dirs:
        disk = make_disk(structure, point, [v], radius, tol=tol, grid=grid)
        val = disk_laplacian_probe(u, disk, u_callable=u_callable)
        margin = min(margin, val)
    return float(margin)

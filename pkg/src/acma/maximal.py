"""Maximal plurisubharmonic functions by the vanishing-RHS scheme.

The Dirichlet problem for maximal psh functions is solved through the
family det A(u_k) = det A(rho) / k^n with fixed boundary data: comparison
makes u_k increasing in k, uniformly Lipschitz for Lipschitz data, and the
limit is the maximal solution (error O(1/k), removed by Richardson
extrapolation in 1/k).

Maximality and F(J)-harmonicity are universally quantified, so they are
tested by randomized probe families: clipped psh quadratics for maximality,
touching strictly-psh quadratics for F(J)-harmonicity.  Probes can find
violations, never certify; verdicts report the battery outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import product

import numpy as np

from .errors import ScheduleTooShort
from .grid import ScalarField, ball_rho, grid_build
from .operator import OperatorKernel
from .solver import MAProblem, SolverConfig, Solution, solve_dirichlet

DEFAULT_SCHEDULE = (2, 4, 8, 16, 32)


@dataclass
class MaximalRun:
    k_schedule: list
    iterates: list  # ScalarField per k
    solutions: list  # Solution diagnostics per k
    limit: ScalarField
    extrapolated: ScalarField
    lipschitz_estimates: list  # raw per-iterate max difference quotients
    limit_lipschitz_estimates: list  # of the running extrapolated limits
    tails: list  # sup |u_{k_j} - u_{k_{j-1}}|
    monotone_defect: float
    lipschitz_estimate: float = dc_field(init=False)

    def __post_init__(self):
        self.lipschitz_estimate = float(self.lipschitz_estimates[-1])


def solve_maximal(domain, structure, frame, phi, schedule=None, config=None,
                  kernel=None, check_schedule=True):
    """Run the vanishing-RHS family and return iterates, limit, diagnostics."""
    schedule = list(schedule or DEFAULT_SCHEDULE)
    config = config or SolverConfig()
    kernel = kernel or OperatorKernel(domain, frame)
    n = frame.n
    rho_field = ScalarField(domain, domain.rho_values)
    det_rho = kernel.det_field(kernel.a_field(rho_field))

    iterates, solutions, lips, lips_limit, tails = [], [], [], [], []
    monotone_defect = 0.0
    prev, prev_k = None, None
    for k in schedule:
        fvals = np.zeros(int(np.prod(domain.shape)))
        fvals[domain.interior_flat] = det_rho / float(k) ** n
        problem = MAProblem(domain, structure, frame, ScalarField(domain, fvals), phi)
        sol = solve_dirichlet(
            problem, config, initial_guess=prev, kernel=kernel
        )
        u = sol.u
        if prev is not None:
            diff = u.inside_values() - prev.inside_values()
            tails.append(float(np.abs(diff).max()))
            monotone_defect = max(monotone_defect, float(-diff.min()))
            gamma = (1.0 / k) / (1.0 / prev_k - 1.0 / k)
            lips_limit.append((u + gamma * (u - prev)).lipschitz_max())
        iterates.append(u)
        solutions.append(sol.diagnostics)
        lips.append(u.lipschitz_max())
        prev, prev_k = u, k

    if check_schedule and len(tails) >= 2:
        for j in range(1, len(tails)):
            r = (1.0 / schedule[j] - 1.0 / schedule[j + 1]) / (
                1.0 / schedule[j - 1] - 1.0 / schedule[j]
            )
            if tails[j] > 10.0 * tails[j - 1] * max(r, 1e-12):
                raise ScheduleTooShort(
                    f"tail {tails[j]:.3e} after k={schedule[j + 1]} exceeds "
                    f"10x the extrapolated tail {tails[j - 1] * r:.3e}"
                )

    if len(iterates) >= 2:
        k1, k0 = schedule[-1], schedule[-2]
        gamma = (1.0 / k1) / (1.0 / k0 - 1.0 / k1)
        extrap = iterates[-1] + gamma * (iterates[-1] - iterates[-2])
    else:
        extrap = iterates[-1]
    return MaximalRun(
        k_schedule=schedule,
        iterates=iterates,
        solutions=solutions,
        limit=iterates[-1],
        extrapolated=extrap,
        lipschitz_estimates=lips,
        limit_lipschitz_estimates=lips_limit,
        tails=tails,
        monotone_defect=monotone_defect,
    )


# -- probe batteries -------------------------------------------------------


def _complex_coords(points, n):
    return points[..., 0::2] + 1j * points[..., 1::2]


def _real_hessian_of_hermitian(Q):
    """Real 2n x 2n Hessian of x -> sum Q_pq z_p conj(z_q)."""
    n = Q.shape[0]
    T = np.zeros((n, 2 * n), dtype=complex)
    for p in range(n):
        T[p, 2 * p] = 1.0
        T[p, 2 * p + 1] = 1j
    M = T.T @ Q @ np.conj(T)
    return (M + M.T).real


@dataclass
class QuadraticProbe:
    """psh quadratic (plus optional linear part) with analytic derivatives."""

    center: np.ndarray
    hermitian: np.ndarray
    hessian: np.ndarray
    linear: np.ndarray | None = None

    def __call__(self, points):
        diff = np.asarray(points, float) - self.center
        val = 0.5 * np.einsum("...i,ij,...j->...", diff, self.hessian, diff)
        if self.linear is not None:
            val = val + diff @ self.linear
        return val

    def gradient(self, points):
        diff = np.asarray(points, float) - self.center
        g = diff @ self.hessian.T
        if self.linear is not None:
            g = g + self.linear
        return g


def random_psh_quadratic(rng, n, center, eig_lo=0.1, eig_hi=1.0):
    """Probe sum Q_pq (z - c)_p conj(z - c)_q with spectrum in [lo, hi]."""
    eigs = rng.uniform(eig_lo, eig_hi, n)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    U, _ = np.linalg.qr(X)
    Q = (U * eigs) @ np.conj(U.T)
    return QuadraticProbe(
        center=np.asarray(center, float),
        hermitian=Q,
        hessian=_real_hessian_of_hermitian(Q),
    )


def scaled_ball_probe(scale, n, center):
    Q = scale * np.eye(n, dtype=complex)
    return QuadraticProbe(
        center=np.asarray(center, float),
        hermitian=Q,
        hessian=_real_hessian_of_hermitian(Q),
    )


def _probe_margin(kernel, probe, sel=None):
    pts = kernel.domain.interior_points()
    if sel is not None:
        pts = pts[sel]
    A = kernel.a_from_derivatives(probe.hessian, probe.gradient(pts), sel=sel)
    lam, _ = kernel.eig_range(A)
    return lam


@dataclass
class ProbeVerdict:
    verdict: str  # holds | VIOLATION
    trials: int
    violations: int
    worst_excess: float
    tau: float
    skipped: int = 0
    detail: str = ""


def _domain_geometry(domain):
    pts = domain.inside_points()
    center = pts.mean(axis=0)
    radius = float(np.linalg.norm(pts - center, axis=1).max())
    return center, radius


def _boundary_distance(dom, points):
    """Distance to {rho = 0} estimated as -rho / |grad rho| (exact for balls)."""
    points = np.atleast_2d(points)
    rho = dom.rho_callable(points)
    grad = np.empty_like(points)
    for j in range(dom.dim):
        ej = np.zeros(dom.dim)
        ej[j] = dom.h
        grad[:, j] = (
            dom.rho_callable(points + ej) - dom.rho_callable(points - ej)
        ) / (2 * dom.h)
    return -rho / np.maximum(np.linalg.norm(grad, axis=1), 1e-12)


def maximality_probe(
    u,
    trials,
    structure,
    frame,
    rng=None,
    kernel=None,
    tau=None,
    eps=None,
    region=None,
    deterministic_battery=True,
):
    """Randomized test of maximality: clipped psh quadratic probes.

    Each probe q is a psh quadratic shifted so q <= u - eps outside a compact
    ball B contained in the competition region; v = max(q, u - eps) is then a
    psh competitor with v <= u off a compact set, and maximality demands
    q <= u (+tau) inside B.  ``region`` is an optional (center, radius) ball
    restricting the competition region (locality checks); clip balls are
    always kept strictly inside the region and the domain.  Probes that fail
    the psh margin under the actual structure are skipped.
    """
    rng = np.random.default_rng(rng)
    dom = u.domain
    n = frame.n
    kernel = kernel or OperatorKernel(dom, frame)
    scale = max(1.0, u.max_norm_inside())
    if tau is None:
        tau = 10.0 * (1e-8 + dom.h ** 2) * scale
    if eps is None:
        eps = max(tau / 10.0, 1e-3 * scale)

    inside_pts = dom.inside_points()
    u_in = u.inside_values()
    if region is None:
        center, rreg = _domain_geometry(dom)
        region_mask = np.ones(dom.n_inside, dtype=bool)
    else:
        center, rreg = np.asarray(region[0], float), float(region[1])
        region_mask = np.linalg.norm(inside_pts - center, axis=1) <= rreg
    int_pts = dom.interior_points()
    in_region_int = np.linalg.norm(int_pts - center, axis=1) <= rreg

    def clipped_radius(cb, rr):
        lim = 0.9 * float(_boundary_distance(dom, cb[None, :])[0])
        lim = min(lim, 0.9 * (rreg - np.linalg.norm(cb - center)))
        return min(rr, lim)

    cases = []
    if deterministic_battery:
        for s, rr in product((0.25, 0.5), (0.3, 0.5)):
            r_eff = clipped_radius(center, rr * rreg)
            if r_eff > 2 * dom.h:
                cases.append((scaled_ball_probe(s, n, center), center.copy(), r_eff))
    attempts = 0
    n_target = trials + len(cases)
    while len(cases) < n_target and attempts < 20 * n_target:
        attempts += 1
        idx = rng.integers(0, dom.n_interior)
        z0 = int_pts[idx] + rng.uniform(-dom.h, dom.h, dom.dim)
        jdx = rng.integers(0, dom.n_interior)
        cb = int_pts[jdx]
        if not in_region_int[jdx]:
            continue
        r_eff = clipped_radius(cb, rng.uniform(0.2, 0.6) * rreg)
        if r_eff <= 2 * dom.h:
            continue
        cases.append((random_psh_quadratic(rng, n, z0), cb, r_eff))

    violations = 0
    worst = -np.inf
    skipped = 0
    first = ""
    for probe, cb, rr in cases:
        # psh w.r.t. the actual structure (quadratics are only J_st-psh by design)
        if _probe_margin(kernel, probe).min() < -1e-10:
            skipped += 1
            continue
        q_in = probe(inside_pts)
        in_ball = np.linalg.norm(inside_pts - cb, axis=1) <= rr
        outside = region_mask & ~in_ball
        check = region_mask & in_ball
        check[dom.pos[dom.band_flat]] = False  # compare on interior only
        if not outside.any() or not check.any():
            skipped += 1
            continue
        c = float((u_in[outside] - eps - q_in[outside]).min())
        excess = float((q_in[check] + c - u_in[check]).max())
        worst = max(worst, excess)
        if excess > tau:
            violations += 1
            if not first:
                first = f"probe excess={excess:.3e} ball r={rr:.3f}"
    return ProbeVerdict(
        verdict="VIOLATION" if violations else "holds",
        trials=len(cases) - skipped,
        violations=violations,
        worst_excess=float(worst),
        tau=float(tau),
        skipped=skipped,
        detail=first,
    )


def fj_harmonic_check(
    u,
    subregions=None,
    probes=40,
    structure=None,
    frame=None,
    rng=None,
    kernel=None,
    tau=None,
    tol_eig=None,
):
    """F(J)-harmonicity probe: no strictly psh quadratic touches u from below
    at a point interior to a subregion.

    Probes are gradient-matched at a random deep target (so the candidate
    contact sits where it hurts) and shifted to touch u from below; contact
    at the argmin of u - probe.  A violation needs a near-contact point
    interior to the subregion and clear of the domain boundary where the
    probe's A-matrix stays strictly positive beyond the eigenvalue tolerance.
    """
    rng = np.random.default_rng(rng)
    dom = u.domain
    n = frame.n
    kernel = kernel or OperatorKernel(dom, frame)
    scale = max(1.0, u.max_norm_inside())
    if tau is None:
        tau = (1e-8 + dom.h ** 2) * scale  # contact-resolution scale
    if subregions is None:
        subregions = make_ball_cover(dom, per_axis=2)
    pts_int = dom.interior_points()
    u_int = u.interior_values()
    grad_int = u.interior_gradient(dom.interior_flat)
    deep_dom = dom.deep_interior_mask()  # keep clear of the domain boundary

    violations = 0
    checked = 0
    worst = ""
    for (cb, rr) in subregions:
        dist = np.linalg.norm(pts_int - cb, axis=1)
        in_u = dist <= rr
        # interior of U = (ball cap Omega): clear of both the ball sphere
        # and the domain boundary
        deep = (dist <= rr - 2.2 * dom.h) & deep_dom
        targets = np.nonzero(deep)[0]
        if len(targets) == 0 or in_u.sum() < 2 * dom.dim + 1:
            continue
        for _ in range(probes):
            t = targets[rng.integers(0, len(targets))]
            x_t = pts_int[t]
            probe = random_psh_quadratic(rng, n, x_t)
            # match the discrete gradient of u at the target so the probe
            # touches there unless u curves away
            probe.linear = grad_int[t].copy()
            psi = probe(pts_int[in_u])
            gap = u_int[in_u] - psi
            c = float(gap.min())
            near = gap - c <= tau
            hit = near & deep[in_u]
            checked += 1
            if not hit.any():
                continue
            sel = np.nonzero(in_u)[0][hit]
            lam_hit = _probe_margin(kernel, probe, sel=sel)
            te = tol_eig
            if te is None:
                te = 10.0 * (1e-8 + dom.h ** 2) * max(1.0, float(np.abs(psi).max()))
            if lam_hit.max() > te:
                violations += 1
                if not worst:
                    worst = (
                        f"contact margin {lam_hit.max():.3e} at subregion "
                        f"center {np.round(cb, 3)}"
                    )
    return ProbeVerdict(
        verdict="VIOLATION" if violations else "holds",
        trials=checked,
        violations=violations,
        worst_excess=np.nan,
        tau=float(tau),
        detail=worst,
    )


def make_ball_cover(domain, per_axis=2, overlap=1.35):
    """Overlapping balls covering the interior nodes."""
    pts = domain.inside_points()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    centers_1d = [
        np.linspace(lo[j], hi[j], per_axis + 2)[1:-1] for j in range(domain.dim)
    ]
    spacing = max(
        (hi - lo)[j] / (per_axis + 1) for j in range(domain.dim)
    )
    radius = overlap * 0.5 * spacing * np.sqrt(domain.dim)
    cover = []
    int_pts = domain.interior_points()
    for c in product(*centers_1d):
        c = np.array(c)
        if (np.linalg.norm(int_pts - c, axis=1) <= radius).any():
            cover.append((c, radius))
    # guarantee coverage of every interior node
    covered = np.zeros(len(int_pts), dtype=bool)
    for c, r in cover:
        covered |= np.linalg.norm(int_pts - c, axis=1) <= r
    if not covered.all():
        cover.append(
            (int_pts.mean(axis=0), float(np.linalg.norm(int_pts - int_pts.mean(axis=0), axis=1).max()) + domain.h)
        )
    return cover


@dataclass
class LocalityVerdict:
    verdict: str
    per_subdomain: list
    global_verdict: str
    consistent: bool


def locality_check(
    u, cover, trials, structure, frame, rng=None, kernel=None, tau=None
):
    """Maximality probes restricted to each subdomain of an interior cover,
    cross-checked against the global probe."""
    rng = np.random.default_rng(rng)
    dom = u.domain
    kernel = kernel or OperatorKernel(dom, frame)
    per = []
    for (cb, rr) in cover:
        res = maximality_probe(
            u, trials, structure, frame, rng=rng, kernel=kernel, tau=tau,
            region=(cb, rr), deterministic_battery=False,
        )
        per.append(res.verdict)
    glob = maximality_probe(
        u, trials, structure, frame, rng=rng, kernel=kernel, tau=tau
    ).verdict
    local = "holds" if all(v == "holds" for v in per) else "VIOLATION"
    return LocalityVerdict(
        verdict=local,
        per_subdomain=per,
        global_verdict=glob,
        consistent=(local == glob),
    )


# -- boundary regularity experiment ----------------------------------------


@dataclass
class HolderResult:
    alpha: float
    h_list: list
    betas: list
    distances: list
    values: list
    measured_exponent: float


def holder_experiment(
    alpha,
    P=None,
    h_list=(1 / 8, 1 / 12),
    structure=None,
    frame=None,
    n=2,
    schedule=None,
    config=None,
    box_half=1.25,
    d_max=0.5,
):
    """Boundary Hoelder exponent of the maximal solution for cusp data.

    Boundary data phi = -dist(., P)^{1+alpha} on the unit ball; the exponent
    beta is the log-log slope of -u along the inward normal from P at dyadic
    distances (grid nodes when P is axis-aligned, so no interpolation error).
    """
    from .geometry import split_frame, standard_structure

    if not (0 < alpha <= 1):
        raise ValueError("alpha must be in (0, 1]")
    structure = structure or standard_structure(n)
    schedule = list(schedule or DEFAULT_SCHEDULE)
    P = np.array([1.0] + [0.0] * (2 * n - 1)) if P is None else np.asarray(P, float)

    def phi(points):
        d = np.linalg.norm(np.asarray(points, float) - P, axis=-1)
        return -(d ** (1.0 + alpha))

    betas, dist_used, vals_used = [], [], []
    h_coarse = max(h_list)
    for h in h_list:
        box = ((-box_half,) * 2 * n, (box_half,) * 2 * n)
        fr = frame or split_frame(structure, region=box, fd_h=h)
        dom = grid_build(ball_rho(n), box, h, n=n, structure=structure, frame=fr)
        run = solve_maximal(dom, structure, fr, phi, schedule, config, kernel=None)
        u = run.extrapolated
        nhat = P / np.linalg.norm(P)
        ds, vs = [], []
        d = d_max
        while d >= 2 * h_coarse - 1e-12:
            x = P - d * nhat
            idx = np.round((x - dom.lo) / dom.h).astype(np.int64)
            x_node = dom.lo + idx * dom.h
            if np.abs(x_node - x).max() < 1e-9:
                flat = int((idx * dom.strides).sum())
                if dom.class_flat[flat] > 0:
                    ds.append(d)
                    vs.append(float(u.values[flat]))
            else:
                val = float(u.values_at(x[None, :])[0])
                ds.append(d)
                vs.append(val)
            d /= 2 ** 0.5
        ds, vs = np.array(ds), np.array(vs)
        keep = vs < 0
        slope = np.polyfit(np.log(ds[keep]), np.log(-vs[keep]), 1)[0]
        betas.append(float(slope))
        dist_used.append(ds.tolist())
        vals_used.append(vs.tolist())
    return HolderResult(
        alpha=float(alpha),
        h_list=list(h_list),
        betas=betas,
        distances=dist_used,
        values=vals_used,
        measured_exponent=betas[-1],
    )

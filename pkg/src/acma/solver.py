"""Damped Newton solver for det A(u) = f with Dirichlet boundary data.

Newton runs on log det A(u) = log f constrained to the strictly psh cone:
the step solves the linearized operator L (Jacobian of log det A), and
backtracking halves the step until the smallest eigenvalue of A(u) stays
above the margin floor and the residual norm decreases.  The initial guess
is the lower barrier phi + A*rho.  For n = 1 the equation is linear in u and
Newton reduces to a single tight linear solve on the raw residual.

Boundary values enter through the band interpolation rows (linear), so the
Dirichlet datum is attached at boundary foot points to second order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse.linalg as spla

from .barriers import BarrierPair, build_barriers, m_rho
from .errors import LostPositivity, NewtonStalled
from .grid import ScalarField
from .operator import OperatorKernel


@dataclass
class SolverConfig:
    tol_residual: float | None = None  # default 1e-8 * max(1, |f|_inf)
    tol_step: float | None = None
    max_newton: int = 60
    backtrack: float = 0.5
    max_backtracks: int = 30
    margin_floor: float = 0.0
    regularization_delta: float = 0.0
    initial_damping: float = 1.0
    forcing_cap: float = 1e-2
    krylov_maxiter: int = 1200
    with_estimates: bool = True


@dataclass
class MAProblem:
    domain: object
    structure: object
    frame: object
    f: object  # ScalarField, callable, or scalar
    phi: object  # ScalarField, callable, or scalar

    def __post_init__(self):
        dom = self.domain
        self.rho_field = ScalarField(dom, dom.rho_values)
        self.f_field = _as_field(dom, self.f)
        fv = self.f_field.values[dom.interior_flat]
        if fv.min() < -1e-12:
            raise ValueError(f"f must be nonnegative (min {fv.min():.3e})")
        self.phi_field = _as_field(dom, self.phi)
        self.phi_foot = _eval_at_points(self.phi, self.phi_field, dom.band.foot)


@dataclass
class Solution:
    u: ScalarField
    converged: bool
    diagnostics: dict
    barrier: BarrierPair | None = None


def _as_field(domain, f):
    if isinstance(f, ScalarField):
        return f
    if callable(f):
        return ScalarField.from_callable(domain, f)
    return ScalarField(domain, np.full(int(np.prod(domain.shape)), float(f)))


def _eval_at_points(spec, fallback_field, points):
    if len(points) == 0:
        return np.zeros(0)
    if callable(spec):
        return np.asarray(spec(points), dtype=float).reshape(len(points))
    if isinstance(spec, ScalarField):
        return fallback_field.values_at(points)
    return np.full(len(points), float(spec))


def solve_dirichlet(problem, config=None, initial_guess=None, kernel=None):
    """Solve det A(u) = max(f, delta), u = phi on the boundary band.

    Raises NewtonStalled when the damped iteration stops decreasing the
    residual and LostPositivity when no damped step keeps A(u) positive.
    """
    config = config or SolverConfig()
    dom = problem.domain
    n = problem.frame.n
    kernel = kernel or OperatorKernel(dom, problem.frame)
    t0 = time.perf_counter()

    f_int = problem.f_field.values[dom.interior_flat]
    delta = float(config.regularization_delta)
    f_eff = np.maximum(f_int, delta)
    if n >= 2 and f_eff.min() <= 0.0:
        raise ValueError(
            "f touches zero: set regularization_delta > 0 for n >= 2"
        )
    scale_f = max(1.0, float(np.abs(f_eff).max()))
    tol = config.tol_residual if config.tol_residual is not None else 1e-8 * scale_f
    log_f = np.log(f_eff) if n >= 2 else None

    barrier = build_barriers(
        problem.rho_field, problem.phi_field, problem.f_field, problem.frame,
        kernel=kernel,
    )
    if initial_guess is not None:
        u = initial_guess.values.copy()
    else:
        u = barrier.lower.values.copy()
        if n >= 2:
            # the discrete A(phi + A rho) can lose a little positivity at the
            # scan slack; bump the constant until the start is strictly psh
            A_eff = barrier.A
            for _ in range(8):
                lam, _ = kernel.eig_range(kernel.a_field(ScalarField(dom, u)))
                if lam.min() > max(config.margin_floor, 0.0):
                    break
                A_eff = 2 * (A_eff + dom.h)
                u = (problem.phi_field + A_eff * problem.rho_field).values.copy()
    scale_u = max(1.0, float(np.abs(u[dom.inside_flat]).max()))
    tol_step = config.tol_step if config.tol_step is not None else 1e-8 * scale_u

    u_in = kernel.relax_band(u[dom.inside_flat], problem.phi_foot)
    u[dom.inside_flat] = u_in

    nun = dom.n_inside
    ipos = dom.interior_pos
    bpos = dom.band_pos

    def residual_state(u_flat):
        uf = ScalarField(dom, u_flat)
        A = kernel.a_field(uf)
        det = kernel.det_field(A)
        lam_min, _ = kernel.eig_range(A)
        margin = float(lam_min.min())
        r = np.zeros(nun)
        if n == 1:
            r[ipos] = det - f_eff
        else:
            if margin <= 0 or det.min() <= 0:
                r[ipos] = np.inf
            else:
                r[ipos] = np.log(det) - log_f
        r[bpos] = kernel.band_residual(u_flat[dom.inside_flat], problem.phi_foot)
        res_max = float(np.abs(det - f_eff).max())
        merit = float(np.sqrt(np.mean(r * r))) if np.isfinite(r).all() else np.inf
        return A, det, margin, r, res_max, merit

    history = []
    A, det, margin, r, res_max, merit = residual_state(u)
    if n >= 2 and margin <= config.margin_floor:
        raise LostPositivity(
            f"initial guess margin {margin:.3e} below floor {config.margin_floor:.3e}"
        )
    stall = 0
    step_max = np.inf
    converged = False
    krylov_boost = 1.0
    for it in range(1, config.max_newton + 1):
        band_max = float(np.abs(r[bpos]).max()) if len(bpos) else 0.0
        if res_max <= tol and band_max <= max(tol_step, 1e-12 * scale_u) and (
            it > 1 and step_max <= tol_step
        ):
            converged = True
            break
        Ainv = np.ones_like(A) if n == 1 else kernel.inverse(A)
        J = kernel.jacobian(Ainv)
        diag = J.diagonal()
        diag = np.where(np.abs(diag) > 1e-300, diag, 1.0)
        M = spla.LinearOperator((nun, nun), matvec=lambda x: x / diag)
        rtol_k = min(config.forcing_cap, max(res_max / scale_f * 0.1, 1e-13))
        rtol_k /= krylov_boost
        delta_u, info = spla.bicgstab(
            J, -r, rtol=rtol_k, atol=0.0, maxiter=config.krylov_maxiter, M=M
        )
        if info != 0:
            delta_u, info = spla.lgmres(
                J, -r, rtol=rtol_k, atol=0.0, maxiter=config.krylov_maxiter, M=M
            )
        alpha = config.initial_damping
        accepted = False
        best = None
        for _ in range(config.max_backtracks):
            u_try = u.copy()
            u_try[dom.inside_flat] = u[dom.inside_flat] + alpha * delta_u
            A2, det2, margin2, r2, res2, merit2 = residual_state(u_try)
            ok_margin = n == 1 or margin2 > config.margin_floor
            if ok_margin and best is None:
                best = (alpha, u_try, A2, det2, margin2, r2, res2, merit2)
            if ok_margin and merit2 < merit:
                accepted = True
                break
            alpha *= config.backtrack
        if not accepted:
            if best is None:
                raise LostPositivity(
                    f"no damped step keeps A(u) above the margin floor "
                    f"(iteration {it})"
                )
            stall += 1
            krylov_boost *= 100.0
            history.append(
                dict(iter=it, residual_max=res_max, merit=merit, alpha=0.0,
                     margin=margin, krylov_info=int(info), stalled=True)
            )
            if stall >= 5:
                raise NewtonStalled(
                    f"no residual decrease for {stall} consecutive damped steps"
                )
            continue
        stall = 0
        krylov_boost = 1.0
        u, A, det, margin, r, res_max, merit = (
            u_try, A2, det2, margin2, r2, res2, merit2
        )
        step_max = float(np.abs(alpha * delta_u).max())
        history.append(
            dict(iter=it, residual_max=res_max, merit=merit, alpha=alpha,
                 margin=margin, step_max=step_max, krylov_info=int(info))
        )
    else:
        raise NewtonStalled(
            f"no convergence within {config.max_newton} Newton iterations "
            f"(residual {res_max:.3e}, tol {tol:.3e})"
        )

    u_field = ScalarField(dom, u)
    res_vs_f = float(np.abs(det - f_int).max())
    diagnostics = dict(
        iterations=len(history),
        converged=converged,
        residual_max=res_max,
        residual_vs_f=res_vs_f,
        band_residual_max=float(np.abs(r[bpos]).max()) if len(bpos) else 0.0,
        psh_margin=margin,
        tol=tol,
        delta=delta,
        barrier_A=barrier.A,
        history=history,
        elapsed=time.perf_counter() - t0,
    )
    if config.with_estimates:
        diagnostics["estimate_report"] = estimate_report(
            Solution(u_field, converged, {}, barrier), problem, kernel=kernel
        ).as_dict()
    return Solution(
        u=u_field, converged=converged, diagnostics=diagnostics, barrier=barrier
    )


# -- verification operations ----------------------------------------------


@dataclass
class ComparisonVerdict:
    verdict: str  # hypotheses_unmet | holds | VIOLATION
    max_excess: float
    detail: str = ""


def comparison_check(u, v, frame, H=None, tau=None, kernel=None):
    """Comparison principle check on grid fields.

    If u is psh, det A(u) >= det A(v) wherever A(v) > 0, and u <= v on the
    band, then u <= v (+tau) on the interior; reports VIOLATION otherwise.
    With H (psh, continuous) the strengthened conclusion u + H <= v is
    checked under the band condition u + H <= v.
    """
    dom = u.domain
    kernel = kernel or OperatorKernel(dom, frame)
    h2 = dom.h ** 2
    scale = max(1.0, u.max_norm_inside(), v.max_norm_inside())
    tau = tau if tau is not None else 10.0 * (1e-8 + h2) * scale
    eps = tau

    Au, Av = kernel.a_field(u), kernel.a_field(v)
    lam_u, _ = kernel.eig_range(Au)
    if lam_u.min() < -eps:
        return ComparisonVerdict(
            "hypotheses_unmet", 0.0, f"u not psh (margin {lam_u.min():.3e})"
        )
    det_u, det_v = kernel.det_field(Au), kernel.det_field(Av)
    lam_v, _ = kernel.eig_range(Av)
    on = lam_v > eps
    if np.any(det_u[on] < det_v[on] - eps):
        return ComparisonVerdict(
            "hypotheses_unmet", 0.0, "det A(u) < det A(v) on {A(v) > 0}"
        )
    Hb = np.zeros(len(dom.band_flat))
    Hi = np.zeros(dom.n_interior)
    if H is not None:
        lam_H, _ = kernel.eig_range(kernel.a_field(H))
        if lam_H.min() < -eps:
            return ComparisonVerdict(
                "hypotheses_unmet", 0.0, f"H not psh (margin {lam_H.min():.3e})"
            )
        Hb = H.band_values()
        Hi = H.interior_values()
    gap_band = u.band_values() + Hb - v.band_values()
    if gap_band.size and gap_band.max() > eps:
        return ComparisonVerdict(
            "hypotheses_unmet", 0.0,
            f"u + H <= v fails on the band by {gap_band.max():.3e}",
        )
    excess = float((u.interior_values() + Hi - v.interior_values()).max())
    if excess > tau:
        return ComparisonVerdict("VIOLATION", excess)
    return ComparisonVerdict("holds", excess)


@dataclass
class EstimateReport:
    """Measured a priori quantities for a converged solution."""

    uniform_lower_defect: float
    uniform_upper_defect: float
    barrier_lower_defect: float
    barrier_upper_defect: float
    max_gradient: float
    max_hessian_eig: float
    psh_margin: float
    m_rho: float
    f_root_sup: float
    tau: float
    uniform_ok: bool = dc_field(init=False)
    barrier_ok: bool = dc_field(init=False)

    def __post_init__(self):
        self.uniform_ok = (
            self.uniform_lower_defect >= -self.tau
            and self.uniform_upper_defect >= -self.tau
        )
        self.barrier_ok = (
            self.barrier_lower_defect >= -self.tau
            and self.barrier_upper_defect >= -self.tau
        )

    def as_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def estimate_report(solution, problem, kernel=None, tol=1e-8, tau_factor=10.0):
    """Uniform and barrier sandwiches plus gradient / Hessian monitors.

    Defects are signed slack: negative means the bound is violated by that
    amount.  Constants are measured, not derived; refinement stability is
    asserted by callers comparing reports across grids.
    """
    dom = problem.domain
    kernel = kernel or OperatorKernel(dom, problem.frame)
    u = solution.u
    h2 = dom.h ** 2
    scale = max(1.0, u.max_norm_inside())
    tau = tau_factor * (tol + h2) * scale

    m = m_rho(problem.rho_field, None, problem.frame, kernel=kernel)
    f_int = np.maximum(problem.f_field.values[dom.interior_flat], 0.0)
    f_root_sup = float((f_int ** (1.0 / kernel.n)).max()) if f_int.size else 0.0
    phi_b = problem.phi_foot
    inf_phi = float(phi_b.min()) if phi_b.size else 0.0
    sup_phi = float(phi_b.max()) if phi_b.size else 0.0

    rho_in = problem.rho_field.inside_values()
    u_in = u.inside_values()
    lower = f_root_sup * m * rho_in + inf_phi
    uniform_lower_defect = float((u_in - lower).min())
    uniform_upper_defect = float((sup_phi - u_in).min())

    barrier = solution.barrier or build_barriers(
        problem.rho_field, problem.phi_field, problem.f_field, problem.frame,
        kernel=kernel,
    )
    barrier_lower_defect = float((u_in - barrier.lower.inside_values()).min())
    barrier_upper_defect = float((barrier.upper.inside_values() - u_in).min())

    grad = u.gradient_inside()
    max_grad = float(np.nanmax(np.linalg.norm(grad, axis=1)))
    hess = u.interior_hessian()
    eigs = np.linalg.eigvalsh(hess)
    lam_min, _ = kernel.eig_range(kernel.a_field(u))
    return EstimateReport(
        uniform_lower_defect=uniform_lower_defect,
        uniform_upper_defect=uniform_upper_defect,
        barrier_lower_defect=barrier_lower_defect,
        barrier_upper_defect=barrier_upper_defect,
        max_gradient=max_grad,
        max_hessian_eig=float(np.abs(eigs).max()),
        psh_margin=float(lam_min.min()),
        m_rho=m,
        f_root_sup=f_root_sup,
        tau=tau,
    )

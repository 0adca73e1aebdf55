"""Domain constants and barrier construction for the Dirichlet problem.

m(rho) is the smallest m with omega <= m * i ddbar rho, which in an
orthonormal frame is the max over the domain of 1 / lambda_min(A(rho)).
Barriers phi + A*rho <= u <= phi - A*rho come from the smallest A (on a
doubling-then-bisection search, 10% safety margin) with

    A * A(rho) + A(phi) >= f^{1/n} * I   and   A * A(rho) >= A(phi)

at every interior node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotStrictlyPsh
from .grid import ScalarField
from .operator import OperatorKernel


@dataclass
class BarrierPair:
    lower: ScalarField
    upper: ScalarField
    A: float


def _as_field(domain, f):
    if isinstance(f, ScalarField):
        return f
    if callable(f):
        return ScalarField.from_callable(domain, f)
    return ScalarField(domain, np.full(int(np.prod(domain.shape)), float(f)))


def m_rho(rho, metric, frame, kernel=None):
    """max over interior nodes of 1/lambda_min(A(rho)); requires rho strictly psh."""
    kernel = kernel or OperatorKernel(rho.domain, frame)
    lam_min, _ = kernel.eig_range(kernel.a_field(rho))
    if lam_min.min() <= 0:
        raise NotStrictlyPsh(
            f"A(rho) has smallest eigenvalue {lam_min.min():.3e} <= 0"
        )
    return float((1.0 / lam_min).max())


def _conditions_hold(kernel, A, A_rho, A_phi, f_root, slack=1e-12):
    n = kernel.n
    eye = np.eye(n)
    comb1 = A * A_rho + A_phi - f_root[:, None, None] * eye
    comb2 = A * A_rho - A_phi
    lam1, _ = kernel.eig_range(comb1)
    lam2, _ = kernel.eig_range(comb2)
    return lam1.min() >= -slack and lam2.min() >= -slack


def build_barriers(rho, phi, f, frame, kernel=None, safety=1.1):
    """Near-minimal barrier constant A and the pair (phi + A rho, phi - A rho).

    A is floored at the grid spacing h so the lower barrier stays strictly
    psh even for degenerate data (f == 0 with pluriharmonic phi).
    """
    domain = rho.domain
    kernel = kernel or OperatorKernel(domain, frame)
    phi_f = _as_field(domain, phi)
    f_f = _as_field(domain, f)
    A_rho = kernel.a_field(rho)
    lam_rho, _ = kernel.eig_range(A_rho)
    if lam_rho.min() <= 0:
        raise NotStrictlyPsh(
            f"A(rho) has smallest eigenvalue {lam_rho.min():.3e} <= 0"
        )
    A_phi = kernel.a_field(phi_f)
    fv = np.maximum(f_f.values[domain.interior_flat], 0.0)
    f_root = fv ** (1.0 / kernel.n)

    A_hi = max(domain.h, 1e-6)
    for _ in range(80):
        if _conditions_hold(kernel, A_hi, A_rho, A_phi, f_root):
            break
        A_hi *= 2.0
    else:
        raise NotStrictlyPsh("no admissible barrier constant found")
    A_lo = 0.0
    for _ in range(50):
        mid = 0.5 * (A_lo + A_hi)
        if _conditions_hold(kernel, mid, A_rho, A_phi, f_root):
            A_hi = mid
        else:
            A_lo = mid
    A = max(safety * A_hi, domain.h)
    return BarrierPair(lower=phi_f + A * rho, upper=phi_f - A * rho, A=float(A))

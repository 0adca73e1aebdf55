import numpy as np
import pytest

from acma.disks import (
    disk_laplacian_probe, make_disk, psh_check_disks, unit_directions,
)
from acma.errors import DiskEscapesDomain, JetTooLong, NoContraction
from acma.geometry import sheared_structure, standard_structure
from acma.grid import ScalarField
from acma.operator import OperatorKernel, frame_coefficients, quadratic_form

from conftest import sq_norm

GEN_DIR = np.array([0.6, -0.2, 0.7, 0.3]) / np.linalg.norm([0.6, -0.2, 0.7, 0.3])
V0 = np.array([0.3125, 0.125, -0.1875, 0.1875])


def test_standard_disk_is_affine(jst2):
    d = make_disk(jst2, np.zeros(4), [np.array([1.0, 0, 0, 0])], radius=0.3,
                  tol=1e-10)
    assert d.residual <= 1e-12
    assert d.iterations == 1
    assert d.jet_errors["first"] <= 1e-12
    # lam(z) = (z, 0): samples are (r rho cos, r rho sin, 0, 0)
    z = d.radius * d.parameter_z()
    expect = np.stack([z.real, z.imag, 0 * z.real, 0 * z.real], axis=-1)
    assert np.abs(d.points - expect).max() <= 1e-12


def test_probe_square_norm_is_four(jst2):
    d = make_disk(jst2, np.zeros(4), [np.array([1.0, 0, 0, 0])], radius=0.3)
    assert disk_laplacian_probe(None, d, u_callable=sq_norm) == pytest.approx(4.0)


def test_probe_pluriharmonic_is_zero(jst2):
    d = make_disk(jst2, np.zeros(4), [GEN_DIR], radius=0.3)
    val = disk_laplacian_probe(None, d, u_callable=lambda p: p[..., 0])
    assert abs(val) <= 1e-12


def test_sheared_disk_converges(jsheared):
    d = make_disk(jsheared, V0, [GEN_DIR], radius=0.2, tol=1e-9)
    assert d.residual <= 1e-8
    assert d.iterations <= 30
    assert d.jet_errors["first"] <= 1e-8
    assert d.jet_errors["center"] == 0.0


def test_contraction_monotone_in_eps():
    ratios = []
    for eps in (0.025, 0.05, 0.1):
        d = make_disk(sheared_structure(eps), V0, [GEN_DIR], radius=0.2,
                      tol=1e-10)
        assert d.residual <= 1e-8
        ratios.append(d.contraction[0])
    assert ratios[0] < ratios[1] < ratios[2]
    assert ratios[2] <= 0.05  # measured ~0.004 at eps=0.1, r=0.2


def test_no_contraction_far_from_standard():
    with pytest.raises(NoContraction):
        make_disk(sheared_structure(10.0), V0, [GEN_DIR], radius=1.0)


def test_jet_too_long(jst2):
    with pytest.raises(JetTooLong):
        make_disk(jst2, np.zeros(4), [np.eye(4)[0]] * 3, radius=0.1)


def test_second_jet(jsheared):
    v2 = np.array([0.1, 0.2, -0.1, 0.05])
    d = make_disk(jsheared, V0, [GEN_DIR, v2], radius=0.2, tol=1e-10)
    assert d.residual <= 1e-8
    # measure d2 lam/dx2 (0) from first-ring samples (step = radius/32)
    lam_p, lam_m = d.points[0, 0], d.points[0, 32]
    delta = d.radius * d.rho[0]
    jet2 = (lam_p + lam_m - 2 * V0) / delta ** 2
    assert np.abs(jet2 - v2).max() <= 2e-2  # FD probe is O(delta^2) itself


def test_c1_dependence_on_center(jsheared):
    # difference quotients of the disk map w.r.t. the center converge
    e = np.array([1.0, 0, 0, 0])
    quots = []
    for step in (0.02, 0.01):
        dp = make_disk(jsheared, V0 + step * e, [GEN_DIR], 0.15, tol=1e-11)
        dm = make_disk(jsheared, V0 - step * e, [GEN_DIR], 0.15, tol=1e-11)
        quots.append((dp.points - dm.points) / (2 * step))
    assert np.abs(quots[0]).max() <= 2.0  # bounded
    assert np.abs(quots[0] - quots[1]).max() <= 1e-3  # converging


def test_disk_escapes_domain(ball2_coarse, jst2):
    u = ScalarField.from_callable(ball2_coarse, sq_norm)
    d = make_disk(jst2, np.array([0.75, 0, 0, 0]), [np.eye(4)[0]], radius=0.6)
    with pytest.raises(DiskEscapesDomain):
        disk_laplacian_probe(u, d)


def test_psh_check_examples(ball2_coarse, jst2):
    u2 = ScalarField.from_callable(ball2_coarse, sq_norm)
    m = psh_check_disks(u2, np.zeros(4), 8, jst2, rng=0, u_callable=sq_norm)
    assert m == pytest.approx(4.0, abs=1e-9)
    ind = lambda p: p[..., 0] ** 2 + p[..., 1] ** 2 - p[..., 2] ** 2 - p[..., 3] ** 2
    ui = ScalarField.from_callable(ball2_coarse, ind)
    m = psh_check_disks(ui, np.zeros(4), 32, jst2, rng=0, u_callable=ind)
    assert m == pytest.approx(-4.0, abs=1e-9)  # axis directions hit the pole
    ux = lambda p: p[..., 0]
    m = psh_check_disks(
        ScalarField.from_callable(ball2_coarse, ux), np.zeros(4), 8, jst2,
        rng=0, u_callable=ux,
    )
    assert abs(m) <= 1e-9


def test_psh_check_sign_agrees_with_classification(sheared_field_case):
    margin_eig, margin_disk = sheared_field_case
    assert np.sign(margin_eig) == np.sign(margin_disk)


@pytest.fixture(scope="module")
def sheared_field_case(ball2_coarse, jsheared, frame_sheared):
    from acma.operator import psh_classify

    fn = lambda p: sq_norm(p) + 0.3 * p[..., 0] ** 2
    u = ScalarField.from_callable(ball2_coarse, fn)
    rep = psh_classify(u, frame_sheared)
    margin_disk = psh_check_disks(u, np.zeros(4), 8, jsheared, rng=1,
                                  u_callable=fn)
    return rep.margin, margin_disk


def test_oracle_agreement_random_pairs(sheared_setup_disks):
    """|4 (A(u) zeta, zeta) - Laplacian(u o lam)(0)| small over random pairs."""
    Je, fr, dom, ker, u, fn = sheared_setup_disks
    rng = np.random.default_rng(7)
    A_all = ker.a_field(u)
    pts = dom.interior_points()
    Z_all = fr(pts)
    J_all = Je(pts)
    deep = dom.deep_interior_mask()
    idx_deep = np.nonzero(deep)[0]
    h2 = dom.h ** 2
    worst = 0.0
    for _ in range(25):
        k = idx_deep[rng.integers(0, len(idx_deep))]
        v = rng.standard_normal(4)
        v /= np.linalg.norm(v)
        c = frame_coefficients(Z_all[k], 0.5 * (v - 1j * (J_all[k] @ v)))
        qf = 4.0 * quadratic_form(A_all[k], c)
        disk = make_disk(Je, pts[k], [v], radius=0.08, tol=1e-10)
        lap = disk_laplacian_probe(None, disk, u_callable=fn)
        worst = max(worst, abs(qf - lap))
    assert worst <= 10.0 * (h2 + 1e-10) * 4.0  # scale ~ ||u||_C2


@pytest.fixture(scope="module")
def sheared_setup_disks(jsheared):
    from acma.geometry import split_frame
    from acma.grid import ball_rho, grid_build

    box = ((-1.25,) * 4, (1.25,) * 4)
    h = 1 / 8
    fr = split_frame(jsheared, region=box, fd_h=h)
    dom = grid_build(ball_rho(2), box, h, n=2, structure=jsheared, frame=fr,
                     psh_check=False)
    ker = OperatorKernel(dom, fr)
    fn = lambda p: sq_norm(p) + 0.2 * p[..., 0] ** 4 + 0.1 * p[..., 1] * p[..., 2]
    u = ScalarField.from_callable(dom, fn)
    return jsheared, fr, dom, ker, u, fn


def test_unit_directions_metric_normalized(jsheared):
    rng = np.random.default_rng(0)
    dirs = unit_directions(jsheared, V0, 12, rng)
    from acma.geometry import induced_metric

    met = induced_metric(jsheared)
    for v in dirs:
        assert met.g(V0, v, v) == pytest.approx(1.0, rel=1e-12)

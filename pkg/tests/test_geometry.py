import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acma.errors import DegenerateFrame, InvalidStructure
from acma.geometry import (
    AlmostComplexStructure, bracket_01, bracket_full, induced_metric,
    integrability_defect, project_01, sheared_structure, split_frame,
    standard_matrix, standard_structure, validate_structure,
)

from conftest import BOX2

RNG = np.random.default_rng(42)
PTS = RNG.uniform(-1.0, 1.0, (100, 4))


def test_standard_structure_defect_zero():
    rep = validate_structure(standard_structure(2), PTS)
    assert rep.max_defect == 0.0
    assert rep.passed


def test_sheared_defect_exact_conjugation():
    rep = validate_structure(sheared_structure(0.1), PTS)
    assert rep.max_defect <= 1e-14


def test_singular_structure_rejected():
    J = standard_matrix(2)

    def func(points):
        out = np.broadcast_to(J, points.shape[:-1] + J.shape).copy()
        out[..., 2, :] = 0.0  # zero the third row
        return out

    bad = AlmostComplexStructure(n=2, func=func)
    with pytest.raises(InvalidStructure):
        validate_structure(bad, PTS[:5])


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(min_value=-0.5, max_value=0.5))
def test_sheared_family_is_always_a_structure(eps):
    rep = validate_structure(sheared_structure(eps), PTS[:20])
    assert rep.max_defect <= 1e-12


# -- frames -----------------------------------------------------------------


def test_standard_frame_is_d_dz(frame_st2):
    Z = frame_st2(np.zeros(4))
    expect = np.zeros((2, 4), dtype=complex)
    expect[0, 0], expect[0, 1] = 0.5, -0.5j
    expect[1, 2], expect[1, 3] = 0.5, -0.5j
    assert np.abs(Z - expect).max() == 0.0


def test_sheared_frame_at_eps_zero_matches_standard(frame_st2):
    fr0 = split_frame(sheared_structure(0.0), region=BOX2, fd_h=0.25)
    assert np.abs(fr0(PTS) - frame_st2(PTS)).max() <= 1e-14


def test_sheared_frame_orthonormal():
    Je = sheared_structure(0.1)
    fr = split_frame(Je, region=BOX2, fd_h=0.25)
    met = induced_metric(Je)
    Z = fr(PTS)
    for p in range(2):
        for q in range(2):
            pair = met.pairing_10(PTS, Z[:, p], Z[:, q])
            assert np.abs(pair - (1.0 if p == q else 0.0)).max() <= 1e-10


def test_frame_reconstruction_identities(frame_sheared, jsheared):
    Z = frame_sheared(PTS)
    u = frame_sheared.seeds(PTS)
    J = jsheared(PTS)
    Ju = np.einsum("...ij,...pj->...pi", J, u)
    assert np.abs(Z + np.conj(Z) - u).max() <= 1e-14
    assert np.abs(1j * (Z - np.conj(Z)) - Ju).max() <= 1e-14


def test_degenerate_frame_raises(jst2):
    with pytest.raises(DegenerateFrame):
        split_frame(jst2, region=BOX2, pivot_tol=1.5)


def test_metric_positivity_and_compatibility(jsheared):
    met = induced_metric(jsheared)
    V = RNG.standard_normal((50, 4))
    J = jsheared(PTS[:50])
    JV = np.einsum("...ij,...j->...i", J, V)
    gv = met.g(PTS[:50], V, V)
    assert gv.min() > 0
    assert np.abs(met.g(PTS[:50], JV, JV) - gv).max() <= 1e-12
    # paper-form relation between the metric and the two-form
    W = RNG.standard_normal((50, 4))
    JW = np.einsum("...ij,...j->...i", J, W)
    assert np.abs(met.g(PTS[:50], V, W) + met.omega(PTS[:50], V, JW)).max() <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_projection_idempotent(jsheared, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (10, 4))
    X = rng.standard_normal((10, 4)) + 1j * rng.standard_normal((10, 4))
    J = jsheared(pts)
    P1 = project_01(J, X)
    assert np.abs(project_01(J, P1) - P1).max() <= 1e-12


# -- brackets ---------------------------------------------------------------


def test_bracket_vanishes_for_standard(frame_st2):
    val = bracket_01(frame_st2, 0, 1, PTS[:20], h=0.1)
    assert np.abs(val).max() <= 1e-13


def test_bracket_second_order_convergence(frame_sheared):
    # Richardson: errors against the extrapolated reference drop ~4x per halving
    pt = np.array([0.3, 0.1, -0.2, 0.25])
    vals = [bracket_01(frame_sheared, 1, 0, pt, h=h)
            for h in (0.2, 0.1, 0.05)]
    ref = vals[2] + (vals[2] - vals[1]) / 3.0
    e1 = np.abs(vals[0] - ref).max()
    e2 = np.abs(vals[1] - ref).max()
    assert np.log2(e1 / e2) >= 1.8
    # magnitude is O(eps), nonzero for the sheared family
    assert 1e-4 <= np.abs(vals[2]).max() <= 10 * 0.05


def test_bracket_antisymmetry(frame_sheared):
    pts = PTS[:20]
    ab = bracket_full(frame_sheared, 0, 1, pts, h=0.05)
    ba = bracket_full(frame_sheared, 1, 0, pts, h=0.05,
                      conj_first=True, conj_second=False)
    assert np.abs(ab + ba).max() <= 1e-10


def test_bracket_scaled_by_unit_function_identical(frame_sheared):
    base = bracket_01(frame_sheared, 0, 0, PTS[:5], h=0.05)

    class Scaled:
        def __init__(self, inner):
            self.inner = inner
            self.n = inner.n
            self.dim = inner.dim
            self.structure = inner.structure
            self.fd_h = inner.fd_h

        def __call__(self, points):
            return 1.0 * self.inner(points)

        def d_zeta(self, points, h=None):
            return 1.0 * self.inner.d_zeta(points, h=h)

    scaled = bracket_01(Scaled(frame_sheared), 0, 0, PTS[:5], h=0.05)
    assert np.array_equal(base, scaled)


# -- integrability ----------------------------------------------------------

# measured defects of the sheared family at h=0.05 stencils (regression)
SHEAR_DEFECTS = {0.0: 0.0, 0.025: 0.003125, 0.05: 0.006250, 0.1: 0.012500}


def test_integrability_standard(jst2):
    assert integrability_defect(jst2, BOX2, fd_h=0.05) <= 1e-10


def test_integrability_n1_always_zero(jst1):
    box1 = ((-1.0,) * 2, (1.0,) * 2)
    assert integrability_defect(jst1, box1, fd_h=0.05) == 0.0


def test_integrability_sheared_baselines():
    measured = {}
    for eps in (0.0, 0.025, 0.05, 0.1):
        measured[eps] = integrability_defect(
            sheared_structure(eps), BOX2, fd_h=0.05
        )
    assert measured[0.0] <= 1e-10
    assert measured[0.1] > 1e-4
    for eps, base in SHEAR_DEFECTS.items():
        assert measured[eps] == pytest.approx(base, rel=1e-2, abs=1e-10)
    vals = [measured[e] for e in (0.0, 0.025, 0.05, 0.1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))

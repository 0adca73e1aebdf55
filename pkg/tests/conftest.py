import numpy as np
import pytest

from acma.geometry import (
    induced_metric, sheared_structure, split_frame, standard_structure,
)
from acma.grid import ScalarField, ball_rho, grid_build

BOX2 = ((-1.25,) * 4, (1.25,) * 4)
BOX1 = ((-1.25,) * 2, (1.25,) * 2)


@pytest.fixture(scope="session")
def jst2():
    return standard_structure(2)


@pytest.fixture(scope="session")
def jst1():
    return standard_structure(1)


@pytest.fixture(scope="session")
def jsheared():
    return sheared_structure(0.05)


@pytest.fixture(scope="session")
def frame_st2(jst2):
    return split_frame(jst2, region=BOX2, fd_h=0.25)


@pytest.fixture(scope="session")
def frame_st1(jst1):
    return split_frame(jst1, region=BOX1, fd_h=1 / 16)


@pytest.fixture(scope="session")
def frame_sheared(jsheared):
    return split_frame(jsheared, region=BOX2, fd_h=0.25)


@pytest.fixture(scope="session")
def ball2_coarse(jst2, frame_st2):
    return grid_build(ball_rho(2), BOX2, 0.25, n=2, structure=jst2,
                      frame=frame_st2)


@pytest.fixture(scope="session")
def ball2_mid(jst2, frame_st2):
    return grid_build(ball_rho(2), BOX2, 0.125, n=2, structure=jst2,
                      frame=frame_st2)


@pytest.fixture(scope="session")
def ball1(jst1, frame_st1):
    return grid_build(ball_rho(1), BOX1, 1 / 16, n=1, structure=jst1,
                      frame=frame_st1)


def field_of(domain, fn):
    return ScalarField.from_callable(domain, fn)


def sq_norm(p):
    return (p * p).sum(axis=-1)

"""Shared fixtures: bundled lenses and a few expensive refined designs."""

import pytest

import plenoptiforge as pf
from plenoptiforge.optics_core import SensorSpec

SENSOR = SensorSpec(pixel_size=0.01, width=10.0)


@pytest.fixture(scope="session")
def sensor():
    return SENSOR


@pytest.fixture(scope="session")
def gauss():
    return pf.bundled_lens("double_gauss")


@pytest.fixture(scope="session")
def triplet():
    return pf.bundled_lens("cooke_triplet")


@pytest.fixture(scope="session")
def doublet():
    return pf.bundled_lens("achromat_doublet")


@pytest.fixture(scope="session")
def planoconvex():
    return pf.bundled_lens("planoconvex")


@pytest.fixture(scope="session")
def biconvex():
    return pf.bundled_lens("biconvex")


@pytest.fixture(scope="session")
def ideal_constraints():
    return pf.DesignConstraints(a_main=200.0, gamma=0.5, f_ml=1.0, d_ml=0.5,
                                sensor=SENSOR)


@pytest.fixture(scope="session")
def ideal_design(ideal_constraints):
    """Thin-model design on an aberration-free main lens (f = 100)."""
    return pf.thin_lens_design(ideal_constraints, 100.0)


@pytest.fixture(scope="session")
def gauss_constraints():
    return pf.DesignConstraints(a_main=2000.0, gamma=0.4, f_ml=2.0, d_ml=0.5,
                                sensor=SENSOR)


@pytest.fixture(scope="session")
def gauss_refined(gauss, gauss_constraints):
    seed = pf.thick_lens_design(gauss_constraints, gauss)
    design, trace = pf.refine(seed, gauss_constraints)
    return design, trace


@pytest.fixture(scope="session")
def biconvex_constraints():
    return pf.DesignConstraints(a_main=1000.0, gamma=0.4, f_ml=1.5, d_ml=0.4,
                                sensor=SENSOR)


@pytest.fixture(scope="session")
def biconvex_refined(biconvex, biconvex_constraints):
    seed = pf.thick_lens_design(biconvex_constraints, biconvex)
    design, trace = pf.refine(seed, biconvex_constraints)
    return design, trace

import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from neutronlab.geometry import Box, MaterialProps, RegionMap, build_checkerboard


@pytest.fixture(scope="session")
def homogeneous_2d():
    box = Box((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1)))
    return RegionMap(2, ((box, MaterialProps(1.0, 1.0, 1.0)),))


@pytest.fixture(scope="session")
def homogeneous_1d():
    box = Box((Fraction(0),), (Fraction(1),))
    return RegionMap(1, ((box, MaterialProps(1.0, 1.0, 1.0)),))


@pytest.fixture(scope="session")
def homogeneous_3d():
    box = Box((Fraction(0),) * 3, (Fraction(1),) * 3)
    return RegionMap(3, ((box, MaterialProps(1.0, 1.0, 1.0)),))


@pytest.fixture(scope="session")
def checkerboard_2x2():
    return build_checkerboard(2, 1.0, 100.0, 1.0, 1.0, dim=2)


@pytest.fixture(scope="session")
def half_fission_2d():
    half = Fraction(1, 2)
    return RegionMap(
        2,
        (
            (Box((Fraction(0), Fraction(0)), (half, Fraction(1))),
             MaterialProps(1.0, 1.0, 1.0)),
            (Box((half, Fraction(0)), (Fraction(1), Fraction(1))),
             MaterialProps(1.0, 1.0, 0.0)),
        ),
    )


@pytest.fixture(scope="session")
def halves_d_1d():
    half = Fraction(1, 2)
    return RegionMap(
        1,
        (
            (Box((Fraction(0),), (half,)), MaterialProps(1.0, 1.0, 1.0)),
            (Box((half,), (Fraction(1),)), MaterialProps(100.0, 1.0, 1.0)),
        ),
    )

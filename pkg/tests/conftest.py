import numpy as np
import pytest

from onlinemm.data import SynthConfig, synth_generate
from onlinemm.geo import GeoPoint, LocalProjection
from onlinemm.pipeline import prepare_workspace
from onlinemm.roadnet import RoadSegment

ORIGIN = GeoPoint(39.9, 116.3)
PROJ = LocalProjection(ORIGIN.lat, ORIGIN.lon)


def xy(x, y, t=0):
    """GeoPoint at metric offset (x east, y north) from ORIGIN."""
    lat, lon = PROJ.to_latlon(x, y)
    return GeoPoint(float(lat), float(lon), t)


def seg(i, *coords, a=None, b=None):
    return RoadSegment(i, tuple(xy(x, y) for x, y in coords), a, b)


@pytest.fixture(scope="session")
def tiny_world():
    """A 2x2-block synthetic world, split and prepared for k = 4."""
    ds = synth_generate(SynthConfig(blocks=2, n_traj=40, seed=7, l_g=25, route_segments=(8, 12)))
    return prepare_workspace(ds, seed=7, keep_rate=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from suites import verdict_lines

    lines = verdict_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

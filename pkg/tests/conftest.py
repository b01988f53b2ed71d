import pytest

from vwshare.client import ClientState, RetrievalStrategy
from vwshare.config import SimConfig
from vwshare.core import Coord
from vwshare.engine import World, stream


def build_world(points=(), seed=0, **overrides):
    """World with the default overlays and one object per point, all on one logical computer."""
    world = World(SimConfig(objects=0, seed=seed, **overrides)).build()
    world.add_logical_computer("LC-T")
    for i, p in enumerate(points):
        world.add_object(world.make_object(f"o{i:03d}", Coord(*p), "LC-T"))
    world.reset_load()
    return world


def make_client(world, p, strategy="proximity", **kw):
    return ClientState(
        position=Coord(*p),
        velocity=30.0,
        r_search=world.geom.search_radius,
        perception_range=kw.pop("perception_range", 100.0),
        strategy=RetrievalStrategy.parse(strategy),
        rng=stream(0, "test-client"),
        **kw,
    )


@pytest.fixture
def world_factory():
    return build_world


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(test_acceptance.VERDICTS[number])

import numpy as np
import pytest

from mapdiff import GeoTransform, RoadGraph, generate_scene


@pytest.fixture(scope="session")
def scene():
    """One deterministic scene shared by read-only tests."""
    return generate_scene(seed=1000)


@pytest.fixture(scope="session")
def transform():
    return GeoTransform(0.6)


def random_connected_graph(rng: np.random.Generator, n: int = 12,
                           extent: tuple[int, int] = (1000, 1000),
                           extra_edges: int = 4) -> RoadGraph:
    """Spanning tree plus a few chords; always one component."""
    verts = rng.uniform(50, extent[0] - 50, size=(n, 2))
    edges = {(int(min(i, j)), int(max(i, j)))
             for i, j in ((k, rng.integers(0, k)) for k in range(1, n))}
    while len(edges) < n - 1 + extra_edges:
        a, b = rng.integers(0, n, size=2)
        if a != b:
            edges.add((int(min(a, b)), int(max(a, b))))
    return RoadGraph(verts, np.array(sorted(edges)), np.ones(n, dtype=bool),
                     extent=extent)

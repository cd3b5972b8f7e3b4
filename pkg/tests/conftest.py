import numpy as np
import pytest

from nettom import graph_core as gc


@pytest.fixture(scope="session")
def tree30():
    net = gc.generate_network("tree30")
    return net, gc.all_pairs_shortest_paths(net)


@pytest.fixture(scope="session")
def path3():
    """0 - 1 - 2."""
    net = gc.Network.from_edges([(0, 1), (1, 2)], entry_node=0, name="path3")
    return net, gc.all_pairs_shortest_paths(net)


def delta(n: int, i: int) -> np.ndarray:
    x = np.zeros(n)
    x[i] = 1.0
    return x

import numpy as np
import pytest

from digraphgan.graph import DirectedGraph
from digraphgan.seeding import named_stream


@pytest.fixture
def triangle():
    return DirectedGraph.from_pairs(3, [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def star():
    # x -> y1..y5; each leaf's only edge
    return DirectedGraph.from_pairs(6, [(0, i) for i in range(1, 6)])


def make_bipartite(n_a: int, n_b: int, out_per_node: int, seed: int) -> DirectedGraph:
    """All edges go from group A (ids < n_a) to group B; direction is the only signal."""
    rng = named_stream(seed, "bipartite")
    pairs = set()
    for a in range(n_a):
        targets = rng.choice(n_b, size=min(out_per_node, n_b), replace=False)
        for b in targets:
            pairs.add((a, n_a + int(b)))
    return DirectedGraph.from_pairs(n_a + n_b, sorted(pairs))


def make_dag(n_nodes: int, edge_prob: float, seed: int) -> DirectedGraph:
    """Random DAG: edges only from lower to higher position in a shuffled order."""
    rng = named_stream(seed, "dag")
    order = rng.permutation(n_nodes)
    pairs = []
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < edge_prob:
                pairs.append((int(order[i]), int(order[j])))
    return DirectedGraph.from_pairs(n_nodes, pairs)


def write_edge_file(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

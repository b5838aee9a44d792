"""Directed graphs: loading, validation, link-prediction splits, seeded sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import named_stream

logger = logging.getLogger(__name__)

KIND_HELD_OUT_EDGE = "held_out_edge"
KIND_RANDOM_NONEDGE = "random_nonedge"
KIND_REVERSED_POSITIVE = "reversed_positive"

_PAIR_KINDS = (KIND_HELD_OUT_EDGE, KIND_RANDOM_NONEDGE, KIND_REVERSED_POSITIVE)


class EdgeFileError(ValueError):
    """Malformed edge-list or label file."""


@dataclass(frozen=True)
class DirectedGraph:
    """Immutable directed graph over dense node ids 0..node_count-1.

    Edges are unique ordered (src, dst) pairs with no self-loops. Adjacency
    in both directions is derived lazily and cached, so instances are cheap
    to construct and safe to share read-only across threads.
    """

    node_count: int
    edges: np.ndarray  # (E, 2) int64

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("graph needs at least one node")
        edges = np.asarray(self.edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2 or edges.shape[0] < 1:
            raise ValueError("edges must be a nonempty (E, 2) array")
        if edges.min() < 0 or edges.max() >= self.node_count:
            raise ValueError("edge endpoint outside [0, node_count)")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        keys = edges[:, 0] * self.node_count + edges[:, 1]
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate edges are not allowed")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_pairs(cls, node_count: int, pairs: Iterable[tuple[int, int]]) -> "DirectedGraph":
        return cls(node_count, np.array([(int(u), int(v)) for u, v in pairs], dtype=np.int64))

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def out_adj(self) -> tuple[np.ndarray, ...]:
        """Per-node sorted array of out-neighbors."""
        return self._adjacency(0, 1)

    @cached_property
    def in_adj(self) -> tuple[np.ndarray, ...]:
        """Per-node sorted array of in-neighbors."""
        return self._adjacency(1, 0)

    def _adjacency(self, key_col: int, val_col: int) -> tuple[np.ndarray, ...]:
        order = np.lexsort((self.edges[:, val_col], self.edges[:, key_col]))
        keys = self.edges[order, key_col]
        vals = self.edges[order, val_col]
        counts = np.bincount(keys, minlength=self.node_count)
        splits = np.cumsum(counts)[:-1]
        return tuple(np.split(vals, splits))

    @cached_property
    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.node_count)

    @cached_property
    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.node_count)

    @property
    def total_degrees(self) -> np.ndarray:
        return self.out_degrees + self.in_degrees

    @cached_property
    def _edge_keys(self) -> frozenset:
        return frozenset((self.edges[:, 0] * self.node_count + self.edges[:, 1]).tolist())

    def has_edge(self, u: int, v: int) -> bool:
        return u * self.node_count + v in self._edge_keys


@dataclass(frozen=True)
class NodeIdMap:
    """Bijection between external node labels and dense contiguous ids."""

    id_to_label: tuple[str, ...]

    @cached_property
    def label_to_id(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.id_to_label)}

    def __len__(self) -> int:
        return len(self.id_to_label)

    def id_of(self, label: str) -> int:
        return self.label_to_id[label]

    def label_of(self, node_id: int) -> str:
        return self.id_to_label[node_id]


@dataclass(frozen=True)
class LabeledPair:
    u: int
    v: int
    positive: bool
    kind: str


@dataclass(frozen=True)
class LabeledPairSet:
    """Balanced evaluation pairs: held-out positives plus matched negatives."""

    pairs: tuple[LabeledPair, ...]

    def __post_init__(self):
        n_pos = sum(1 for p in self.pairs if p.positive)
        if n_pos * 2 != len(self.pairs):
            raise ValueError("pair set must be balanced")
        for p in self.pairs:
            if p.kind not in _PAIR_KINDS:
                raise ValueError(f"unknown pair kind {p.kind!r}")
            if p.positive != (p.kind == KIND_HELD_OUT_EDGE):
                raise ValueError("pair label inconsistent with its kind")

    @property
    def positives(self) -> list[LabeledPair]:
        return [p for p in self.pairs if p.positive]

    @property
    def negatives(self) -> list[LabeledPair]:
        return [p for p in self.pairs if not p.positive]


def load_edge_list(path: str | Path, delimiter: str | None = None) -> tuple[DirectedGraph, NodeIdMap]:
    """Parse a `src<delim>dst` edge-list file into a dense-id graph.

    Lines starting with `#` and blank lines are skipped. Node labels are
    arbitrary tokens and get contiguous ids in first-seen order. Duplicate
    edges and self-loops are dropped (with counts logged); a malformed line
    raises EdgeFileError naming the line number.
    """
    path = Path(path)
    labels: dict[str, int] = {}
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    n_self_loops = 0
    n_duplicates = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split(delimiter)
            if len(tokens) != 2:
                raise EdgeFileError(f"{path}:{lineno}: expected 2 tokens, got {len(tokens)}")
            ids = []
            for tok in tokens:
                if tok not in labels:
                    labels[tok] = len(labels)
                ids.append(labels[tok])
            u, v = ids
            if u == v:
                n_self_loops += 1
                continue
            if (u, v) in seen:
                n_duplicates += 1
                continue
            seen.add((u, v))
            pairs.append((u, v))
    if not pairs:
        raise EdgeFileError(f"{path}: no edges found")
    if n_self_loops or n_duplicates:
        logger.warning(
            "%s: dropped %d self-loop(s) and %d duplicate edge(s)", path, n_self_loops, n_duplicates
        )
    graph = DirectedGraph.from_pairs(len(labels), pairs)
    return graph, NodeIdMap(tuple(labels))


def load_labels(path: str | Path, id_map: NodeIdMap, delimiter: str | None = None) -> dict[int, str]:
    """Parse a `node<delim>class` file into a node-id -> class map.

    Unlabeled nodes are permitted (partial map). A node label absent from
    id_map, or the same node listed with two different classes, is an error.
    """
    path = Path(path)
    out: dict[int, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split(delimiter)
            if len(tokens) != 2:
                raise EdgeFileError(f"{path}:{lineno}: expected 2 tokens, got {len(tokens)}")
            node_label, cls = tokens
            if node_label not in id_map.label_to_id:
                raise EdgeFileError(f"{path}:{lineno}: unknown node label {node_label!r}")
            node_id = id_map.id_of(node_label)
            if node_id in out and out[node_id] != cls:
                raise EdgeFileError(
                    f"{path}:{lineno}: node {node_label!r} labeled both {out[node_id]!r} and {cls!r}"
                )
            out[node_id] = cls
    return out


def split_link_prediction(
    g: DirectedGraph, removal_fraction: float, seed: int
) -> tuple[DirectedGraph, list[tuple[int, int]]]:
    """Hold out a fraction of edges without isolating any node.

    Edges are visited in a seeded shuffled order and removed greedily while
    both endpoints keep total degree (in+out) >= 1. If the target count is
    unreachable the maximum achievable is taken and a warning logged.
    """
    if not 0.0 <= removal_fraction < 1.0:
        raise ValueError("removal_fraction must be in [0, 1)")
    target = math.floor(removal_fraction * g.edge_count)
    if target == 0:
        return g, []
    stream = named_stream(seed, "split")
    order = stream.permutation(g.edge_count)
    degrees = g.total_degrees.copy()
    held_idx: list[int] = []
    for idx in order:
        if len(held_idx) == target:
            break
        u, v = g.edges[idx]
        if degrees[u] >= 2 and degrees[v] >= 2:
            degrees[u] -= 1
            degrees[v] -= 1
            held_idx.append(int(idx))
    if len(held_idx) < target:
        logger.warning(
            "requested %d held-out edges but only %d removable without isolating a node",
            target,
            len(held_idx),
        )
    keep = np.ones(g.edge_count, dtype=bool)
    keep[held_idx] = False
    train = DirectedGraph(g.node_count, g.edges[keep])
    held_out = [(int(g.edges[i, 0]), int(g.edges[i, 1])) for i in held_idx]
    return train, held_out


def build_test_set(
    held_out: Sequence[tuple[int, int]],
    g: DirectedGraph,
    reversed_fraction: float,
    seed: int,
) -> LabeledPairSet:
    """Pair held-out positives with an equal number of negatives.

    Negatives are first reversals (v, u) of non-bidirectional positives, up
    to floor(reversed_fraction * |held_out|), then uniformly random node
    pairs that are not edges of the full graph.
    """
    if len(held_out) == 0:
        raise ValueError("held_out must be nonempty")
    reversed_fraction = float(reversed_fraction)
    if not 0.0 <= reversed_fraction <= 1.0:
        raise ValueError("reversed_fraction must be in [0, 1]")
    stream = named_stream(seed, f"test-set/{reversed_fraction!r}")
    pairs = [LabeledPair(int(u), int(v), True, KIND_HELD_OUT_EDGE) for u, v in held_out]

    n = len(held_out)
    target_reversed = math.floor(reversed_fraction * n)
    negatives: list[LabeledPair] = []
    used: set[tuple[int, int]] = set()
    for idx in stream.permutation(n):
        if len(negatives) == target_reversed:
            break
        u, v = held_out[int(idx)]
        if not g.has_edge(v, u) and (v, u) not in used:
            used.add((v, u))
            negatives.append(LabeledPair(int(v), int(u), False, KIND_REVERSED_POSITIVE))
    if len(negatives) < target_reversed:
        logger.warning(
            "only %d of %d requested reversals are non-bidirectional; filling with random pairs",
            len(negatives),
            target_reversed,
        )

    # Random fill excludes true edges and already-chosen negatives, nothing else.
    attempts = 0
    max_attempts = 1000 * n + 1000
    while len(negatives) < n:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError("could not sample enough non-edge pairs; graph too dense")
        a = int(stream.integers(0, g.node_count))
        b = int(stream.integers(0, g.node_count))
        if a == b or g.has_edge(a, b) or (a, b) in used:
            continue
        used.add((a, b))
        negatives.append(LabeledPair(a, b, False, KIND_RANDOM_NONEDGE))

    return LabeledPairSet(tuple(pairs + negatives))


def sample_edge_batch(g: DirectedGraph, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw batch_size edges uniformly with replacement; returns an (B, 2) array."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = rng.integers(0, g.edge_count, size=batch_size)
    return g.edges[idx]


def random_directed_graph(node_count: int, edge_count: int, rng: np.random.Generator) -> DirectedGraph:
    """Uniform simple directed graph with exactly edge_count distinct edges."""
    if edge_count < 1 or edge_count > node_count * (node_count - 1):
        raise ValueError("edge_count out of range for a simple directed graph")
    chosen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    while len(pairs) < edge_count:
        block = rng.integers(0, node_count, size=(max(64, edge_count), 2))
        for u, v in block:
            if u == v:
                continue
            key = (int(u), int(v))
            if key in chosen:
                continue
            chosen.add(key)
            pairs.append(key)
            if len(pairs) == edge_count:
                break
    return DirectedGraph.from_pairs(node_count, pairs)


def save_pair_set(
    path: str | Path,
    pair_set: LabeledPairSet,
    id_map: NodeIdMap,
    metadata: dict[str, str] | None = None,
) -> None:
    """Write a split manifest: held-out positives and all negatives with kinds."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        for p in pair_set.pairs:
            label = "pos" if p.positive else "neg"
            fh.write(f"{id_map.label_of(p.u)}\t{id_map.label_of(p.v)}\t{label}\t{p.kind}\n")


def load_pair_set(path: str | Path, id_map: NodeIdMap) -> LabeledPairSet:
    """Read a split manifest written by save_pair_set."""
    path = Path(path)
    pairs: list[LabeledPair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            tokens = line.split("\t")
            if len(tokens) != 4:
                raise EdgeFileError(f"{path}:{lineno}: expected 4 tab-separated fields")
            u_label, v_label, label, kind = tokens
            if label not in ("pos", "neg"):
                raise EdgeFileError(f"{path}:{lineno}: bad label {label!r}")
            try:
                u = id_map.id_of(u_label)
                v = id_map.id_of(v_label)
            except KeyError as exc:
                raise EdgeFileError(f"{path}:{lineno}: unknown node label {exc.args[0]!r}") from None
            pairs.append(LabeledPair(u, v, label == "pos", kind))
    return LabeledPairSet(tuple(pairs))

"""Path-star graphs, uniform sampling, and the brute-force graph oracle."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import permutations
from math import prod
from typing import Iterator, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PathStarGraph:
    """A start node with ``D`` disjoint arms of ``M - 1`` nodes each.

    Each arm is listed leading node first, final node last. Node ids are
    integers in ``[0, vocab_size)``. Two graphs compare equal when they have
    the same start and the same set of arms; the order in which arms are
    listed is a property of the sampler, not of the graph.
    """

    start: int
    arms: tuple[tuple[int, ...], ...]
    vocab_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "arms", tuple(tuple(int(v) for v in a) for a in self.arms))
        object.__setattr__(self, "start", int(self.start))
        if len(self.arms) < 2:
            raise GraphError(f"need at least 2 arms, got {len(self.arms)}")
        lengths = {len(a) for a in self.arms}
        if len(lengths) != 1 or 0 in lengths:
            raise GraphError("arms must be non-empty and of equal length")
        nodes = self.nodes
        if len(set(nodes)) != len(nodes):
            raise GraphError("node ids must be pairwise distinct")
        if min(nodes) < 0 or max(nodes) >= self.vocab_size:
            raise GraphError(f"node ids must lie in [0, {self.vocab_size})")

    @property
    def D(self) -> int:
        return len(self.arms)

    @property
    def M(self) -> int:
        return len(self.arms[0]) + 1

    @property
    def nodes(self) -> list[int]:
        return [self.start] + [v for arm in self.arms for v in arm]

    @property
    def leading(self) -> list[int]:
        return [arm[0] for arm in self.arms]

    @property
    def finals(self) -> list[int]:
        return [arm[-1] for arm in self.arms]

    def edges(self) -> list[tuple[int, int]]:
        """All ``D(M-1)`` edges, each oriented away from the start, arm by arm."""
        out = []
        for arm in self.arms:
            prev = self.start
            for v in arm:
                out.append((prev, v))
                prev = v
        return out

    def arm_edges(self, arm_index: int) -> list[tuple[int, int]]:
        arm = self.arms[arm_index]
        return list(zip((self.start,) + arm[:-1], arm))

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in self.nodes}
        for u, v in self.edges():
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def arm_of(self, node: int) -> int:
        for i, arm in enumerate(self.arms):
            if node in arm:
                return i
        raise GraphError(f"node {node} is not on any arm")

    def successor(self, node: int) -> int | None:
        """The neighbour of ``node`` one step further from the start, if any."""
        if node == self.start:
            raise GraphError("the start node has D successors")
        arm = self.arms[self.arm_of(node)]
        pos = arm.index(node)
        return arm[pos + 1] if pos + 1 < len(arm) else None

    def predecessor(self, node: int) -> int:
        if node == self.start:
            raise GraphError("the start node has no predecessor")
        arm = self.arms[self.arm_of(node)]
        pos = arm.index(node)
        return arm[pos - 1] if pos > 0 else self.start

    def _key(self) -> tuple:
        return (self.start, self.vocab_size, frozenset(self.arms))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PathStarGraph):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())


@dataclass(frozen=True)
class TaskInstance:
    graph: PathStarGraph
    target: int
    target_arm_index: int = field(compare=False)

    def __post_init__(self) -> None:
        finals = self.graph.finals
        if finals.count(self.target) != 1:
            raise GraphError(f"target {self.target} is not a final node")
        if finals[self.target_arm_index] != self.target:
            raise GraphError("target_arm_index does not point at the target's arm")

    @classmethod
    def for_target(cls, graph: PathStarGraph, target: int) -> "TaskInstance":
        finals = graph.finals
        if target not in finals:
            raise GraphError(f"target {target} is not a final node")
        return cls(graph, target, finals.index(target))

    @property
    def target_arm(self) -> list[int]:
        """``[start] + arm``: the sequence the task asks for."""
        return [self.graph.start, *self.graph.arms[self.target_arm_index]]

    @property
    def leading(self) -> int:
        return self.graph.arms[self.target_arm_index][0]


def minimum_vocab(D: int, M: int) -> int:
    return D * (M - 1) + 1


def _check_shape(vocab_size: int, D: int, M: int) -> None:
    if D < 2:
        raise GraphError(f"D must be >= 2, got {D}")
    if M < 2:
        raise GraphError(f"M must be >= 2, got {M}")
    if vocab_size < minimum_vocab(D, M):
        raise GraphError(
            f"vocab_size {vocab_size} too small for D={D}, M={M}; "
            f"need at least {minimum_vocab(D, M)}"
        )


def sample_graph(vocab_size: int, D: int, M: int, rng: np.random.Generator) -> PathStarGraph:
    # Fisher-Yates over the full id range, then fill start, arm 0, arm 1, ...
    _check_shape(vocab_size, D, M)
    ids = rng.permutation(vocab_size)[: minimum_vocab(D, M)].tolist()
    arms = tuple(tuple(ids[1 + d * (M - 1) : 1 + (d + 1) * (M - 1)]) for d in range(D))
    return PathStarGraph(ids[0], arms, vocab_size)


def sample_target(graph: PathStarGraph, rng: np.random.Generator) -> TaskInstance:
    idx = int(rng.integers(graph.D))
    return TaskInstance(graph, graph.arms[idx][-1], idx)


def sample_instance(vocab_size: int, D: int, M: int, rng: np.random.Generator) -> TaskInstance:
    return sample_target(sample_graph(vocab_size, D, M, rng), rng)


def bfs_distances(graph: PathStarGraph, source: int) -> dict[int, int]:
    adj = graph.adjacency()
    if source not in adj:
        raise GraphError(f"node {source} is not in the graph")
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def graph_distance(graph: PathStarGraph, u: int, v: int) -> int:
    dist = bfs_distances(graph, u)
    if v not in dist:
        raise GraphError(f"node {v} is not in the graph")
    return dist[v]


def target_arm_oracle(graph: PathStarGraph, t: int) -> list[int]:
    """Target arm straight from its distance definition.

    A node belongs to the arm of ``t`` iff it is at least as close to ``t``
    as to every final node; the members are sorted by distance from start.
    Only BFS distances are used, never the stored arm lists.
    """
    finals = [v for v, nbrs in graph.adjacency().items() if len(nbrs) == 1]
    if t not in finals:
        raise GraphError(f"{t} is not a final node")
    from_final = {f: bfs_distances(graph, f) for f in finals}
    members = [r for r in graph.nodes if all(from_final[t][r] <= from_final[f][r] for f in finals)]
    from_start = bfs_distances(graph, graph.start)
    return sorted(members, key=from_start.__getitem__)


def count_instances(vocab_size: int, D: int, M: int) -> int:
    """Number of (graph, target) pairs: a falling factorial over all nodes, times D."""
    _check_shape(vocab_size, D, M)
    n = minimum_vocab(D, M)
    return prod(range(vocab_size - n + 1, vocab_size + 1)) * D


def enumerate_instances(vocab_size: int, D: int, M: int) -> Iterator[tuple[int, tuple, int]]:
    """Every (start, ordered arms, target arm) the sampler can produce.

    Exhaustive; only usable for tiny vocabularies.
    """
    _check_shape(vocab_size, D, M)
    n = minimum_vocab(D, M)
    for ids in permutations(range(vocab_size), n):
        arms = tuple(tuple(ids[1 + d * (M - 1) : 1 + (d + 1) * (M - 1)]) for d in range(D))
        for t in range(D):
            yield ids[0], arms, t


def degree_profile(graph: PathStarGraph) -> dict[int, int]:
    return {v: len(nbrs) for v, nbrs in graph.adjacency().items()}


def fig1_graph(vocab_size: int = 10) -> PathStarGraph:
    """The worked example graph (D=3, M=4), internal 0-based ids.

    Display labels are ``id + 1``: start 4, arms 8-2-7, 9-1-3, 5-10-6.
    """
    lab = lambda *xs: tuple(x - 1 for x in xs)  # noqa: E731
    return PathStarGraph(3, (lab(8, 2, 7), lab(9, 1, 3), lab(5, 10, 6)), vocab_size)


def as_ids(labels: Sequence[int]) -> list[int]:
    return [x - 1 for x in labels]

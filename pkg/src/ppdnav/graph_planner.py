"""Grid graph construction, Dijkstra shortest paths, and an A* comparator.

Node ids are assigned to free cells in row-major order, so graphs, distance
maps, and extracted paths are deterministic for a given map. The priority
queue breaks ties on (distance, node id), which fixes the expansion order and
predecessor tree across runs and platforms.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterable

from .warehouse_env import Cell, WarehouseMap

INF = math.inf


class NegativeWeight(ValueError):
    """An edge weight is negative; Dijkstra's precondition is violated."""


class Unreachable(ValueError):
    """No path exists between the requested cells."""


@dataclass
class NavGraph:
    cells: list[Cell]                       # node id -> cell
    node_of: dict[Cell, int]                # cell -> node id
    adjacency: list[list[tuple[int, float]]]  # node id -> [(neighbor, weight)]

    @property
    def n_nodes(self) -> int:
        return len(self.cells)

    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def check_weights(self) -> None:
        for u, adj in enumerate(self.adjacency):
            for v, w in adj:
                if w < 0:
                    raise NegativeWeight(f"edge {u}->{v} has weight {w}")


@dataclass
class DistanceMap:
    source: int
    dist: list[float]
    pred: list[int | None]
    settled_order: list[int]    # extraction order; distances along it are non-decreasing


@dataclass
class PathPlan:
    cells: list[Cell]
    total_cost: float

    def __len__(self) -> int:
        return len(self.cells)


def build_graph(
    wmap: WarehouseMap,
    blocked: Iterable[Cell] = (),
    weight: float = 1.0,
) -> NavGraph:
    """One node per free cell, unit-weight edges between 4-adjacent free cells.

    ``blocked`` removes cells for the duration of this graph only (temporary
    walls during replanning); the map itself is never mutated.
    """
    blocked = set(blocked)
    cells = [c for c in wmap.free_cells() if c not in blocked]
    node_of = {c: i for i, c in enumerate(cells)}
    adjacency: list[list[tuple[int, float]]] = [[] for _ in cells]
    for i, (x, y) in enumerate(cells):
        for nb in ((x, y - 1), (x, y + 1), (x - 1, y), (x + 1, y)):
            j = node_of.get(nb)
            if j is not None:
                adjacency[i].append((j, weight))
    return NavGraph(cells, node_of, adjacency)


def dijkstra(graph: NavGraph, source: int) -> DistanceMap:
    """Exact single-source shortest distances by min-heap relaxation."""
    graph.check_weights()
    n = graph.n_nodes
    dist = [INF] * n
    pred: list[int | None] = [None] * n
    dist[source] = 0.0
    settled = [False] * n
    settled_order: list[int] = []
    heap: list[tuple[float, int]] = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        settled_order.append(u)
        for v, w in graph.adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return DistanceMap(source, dist, pred, settled_order)


def _extract_path(graph: NavGraph, dmap: DistanceMap, target: int) -> PathPlan:
    if dmap.dist[target] == INF:
        raise Unreachable(
            f"cell {graph.cells[target]} unreachable from {graph.cells[dmap.source]}"
        )
    nodes = [target]
    while nodes[-1] != dmap.source:
        nodes.append(dmap.pred[nodes[-1]])
    nodes.reverse()
    return PathPlan([graph.cells[u] for u in nodes], dmap.dist[target])


def shortest_path(graph: NavGraph, source: int, target: int) -> PathPlan:
    return _extract_path(graph, dijkstra(graph, source), target)


def manhattan_heuristic(target: Cell) -> Callable[[Cell], float]:
    tx, ty = target
    return lambda c: abs(c[0] - tx) + abs(c[1] - ty)


def astar(
    graph: NavGraph,
    source: int,
    target: int,
    heuristic: Callable[[Cell], float] | None = None,
) -> PathPlan:
    """A* search; with an admissible heuristic the returned cost equals Dijkstra's."""
    graph.check_weights()
    if heuristic is None:
        heuristic = manhattan_heuristic(graph.cells[target])
    n = graph.n_nodes
    g = [INF] * n
    pred: list[int | None] = [None] * n
    g[source] = 0.0
    settled = [False] * n
    heap: list[tuple[float, int]] = [(heuristic(graph.cells[source]), source)]
    while heap:
        _, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        if u == target:
            break
        for v, w in graph.adjacency[u]:
            ng = g[u] + w
            if ng < g[v]:
                g[v] = ng
                pred[v] = u
                heapq.heappush(heap, (ng + heuristic(graph.cells[v]), v))
    if g[target] == INF:
        raise Unreachable(f"cell {graph.cells[target]} unreachable from {graph.cells[source]}")
    nodes = [target]
    while nodes[-1] != source:
        nodes.append(pred[nodes[-1]])
    nodes.reverse()
    return PathPlan([graph.cells[u] for u in nodes], g[target])


def plan_between(graph: NavGraph, source: Cell, target: Cell) -> PathPlan:
    """Dijkstra path between two cells. Raises Unreachable if either is off-graph."""
    su = graph.node_of.get(source)
    tu = graph.node_of.get(target)
    if su is None or tu is None:
        raise Unreachable(f"cell {source if su is None else target} is not on the graph")
    return shortest_path(graph, su, tu)


def nearest_goal(graph: NavGraph, source: Cell, goals: list[Cell]) -> tuple[Cell, float]:
    """Closest reachable goal by Dijkstra distance; ties broken by goal list order."""
    su = graph.node_of.get(source)
    if su is None:
        raise Unreachable(f"cell {source} is not on the graph")
    dmap = dijkstra(graph, su)
    best: tuple[float, int] | None = None
    for i, goal in enumerate(goals):
        gu = graph.node_of.get(goal)
        if gu is None or dmap.dist[gu] == INF:
            continue
        key = (dmap.dist[gu], i)
        if best is None or key < best:
            best = key
    if best is None:
        raise Unreachable(f"no goal reachable from {source}")
    return goals[best[1]], best[0]

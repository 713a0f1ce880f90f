"""Probabilistic roadmap and belief-space search over it.

The roadmap holds uniformly sampled free poses plus ``per_region`` pose
instantiations inside every named region, connected to their k nearest
neighbours by collision-checked straight segments. A search starts from one
node with a known belief and propagates it edge by edge: EKF prediction along
the edge in short control steps, then an EKF update at the terminal node
against every landmark in sensor range, using simulated noisy readings.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from beltmp.belief import (
    Control,
    GaussianBelief,
    NoiseModel,
    ekf_predict,
    ekf_update,
    landmarks_in_range,
    observation_mean,
    perturb_observation,
)
from beltmp.world import Pose, WorldMap, wrap_angle

ROADMAP_VERSION = 1


class MotionError(RuntimeError):
    pass


class RegionUnsampleableError(MotionError):
    pass


class NoPathError(MotionError):
    pass


class CostConfig(IntEnum):
    """Motion cost returned to the task planner.

    1: path length; 2: straight-line distance, no search; 3: path length plus
    summed node traces plus goal trace; 4: summed node traces plus goal trace.
    """

    CONFIG1 = 1
    CONFIG2 = 2
    CONFIG3 = 3
    CONFIG4 = 4


SEARCH_ORDERS = ("bfs", "cost")


@dataclass
class Roadmap:
    nodes: np.ndarray  # (N, 3) poses
    neighbors: list[list[int]]  # sorted adjacency
    region_nodes: dict[str, list[int]]
    density: float
    seed: int
    start_node: Optional[int] = None
    n_samples: int = 0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        self._tree = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return sum(len(n) for n in self.neighbors) // 2

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nbrs in enumerate(self.neighbors) for j in nbrs if i < j]

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.neighbors[i]

    def pose(self, i: int) -> Pose:
        return Pose(*self.nodes[i])

    def edge_length(self, i: int, j: int) -> float:
        a, b = self.nodes[i], self.nodes[j]
        return math.hypot(b[0] - a[0], b[1] - a[1])

    def node_region(self, i: int) -> Optional[str]:
        for name, ids in self.region_nodes.items():
            if i in ids:
                return name
        return None

    def to_dict(self) -> dict:
        return {
            "version": ROADMAP_VERSION,
            "density": self.density,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "start_node": self.start_node,
            "nodes": self.nodes.tolist(),
            "edges": [list(e) for e in self.edges()],
            "regions": self.region_nodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Roadmap":
        if data.get("version") != ROADMAP_VERSION:
            raise MotionError(f"unsupported roadmap version {data.get('version')!r}")
        nodes = np.array(data["nodes"], dtype=float).reshape(-1, 3)
        neighbors: list[list[int]] = [[] for _ in range(len(nodes))]
        for i, j in data["edges"]:
            neighbors[i].append(j)
            neighbors[j].append(i)
        return cls(
            nodes=nodes,
            neighbors=[sorted(n) for n in neighbors],
            region_nodes={k: list(v) for k, v in data["regions"].items()},
            density=float(data["density"]),
            seed=int(data["seed"]),
            start_node=data.get("start_node"),
            n_samples=int(data.get("n_samples", 0)),
        )


def dump_roadmap(roadmap: Roadmap, path) -> None:
    Path(path).write_text(json.dumps(roadmap.to_dict()))


def load_roadmap(path) -> Roadmap:
    return Roadmap.from_dict(json.loads(Path(path).read_text()))


def _sample_free(world: WorldMap, rng: np.random.Generator, count: int, rect=None, max_rounds: int = 200) -> np.ndarray:
    b = rect or world.bounds
    out = np.zeros((0, 2))
    for _ in range(max_rounds):
        need = count - len(out)
        if need <= 0:
            break
        batch = max(16, 2 * need)
        pts = np.column_stack([rng.uniform(b.xmin, b.xmax, batch), rng.uniform(b.ymin, b.ymax, batch)])
        out = np.vstack([out, pts[world.free_mask(pts)]])
    return out[:count]


def _edge_free_mask(world: WorldMap, nodes: np.ndarray, pairs: np.ndarray, step: float) -> np.ndarray:
    """Collision check of many straight segments at once."""
    if len(pairs) == 0:
        return np.zeros(0, dtype=bool)
    a = nodes[pairs[:, 0], :2]
    b = nodes[pairs[:, 1], :2]
    lengths = np.hypot(*(b - a).T)
    counts = np.maximum(1, np.ceil(lengths / step).astype(int)) + 1
    owner = np.repeat(np.arange(len(pairs)), counts)
    offsets = np.cumsum(counts) - counts
    t = (np.arange(counts.sum()) - offsets[owner]) / (counts[owner] - 1)
    pts = a[owner] + t[:, None] * (b - a)[owner]
    free = world.free_mask(pts)
    blocked = np.zeros(len(pairs), dtype=bool)
    np.logical_or.at(blocked, owner, ~free)
    return ~blocked


def build_roadmap(
    world: WorldMap,
    density: float,
    per_region: int = 5,
    seed: int = 0,
    start: Optional[Pose] = None,
    k: int = 8,
    collision_step: float = 0.1,
    max_region_tries: int = 50,
) -> Roadmap:
    """Sample ``ceil(density * free area)`` free poses plus region instantiations."""
    if density <= 0:
        raise ValueError("density must be positive")
    if per_region < 1:
        raise ValueError("per_region must be at least 1")
    rng = np.random.default_rng(seed)
    n_samples = math.ceil(density * world.free_area())
    xy = _sample_free(world, rng, n_samples)
    region_nodes: dict[str, list[int]] = {}
    chunks = [xy]
    next_id = len(xy)
    for name in sorted(world.regions):
        rect = world.regions[name]
        pts = _sample_free(world, rng, per_region, rect=rect, max_rounds=max_region_tries)
        if len(pts) < per_region:
            raise RegionUnsampleableError(f"region {name!r} has no room for {per_region} free poses")
        chunks.append(pts)
        region_nodes[name] = list(range(next_id, next_id + per_region))
        next_id += per_region
    start_node = None
    if start is not None:
        chunks.append(np.array([[start.x, start.y]]))
        start_node = next_id
    xy = np.vstack(chunks)
    theta = rng.uniform(-math.pi, math.pi, len(xy))
    nodes = np.column_stack([xy, theta])
    if start is not None:
        nodes[start_node, 2] = start.theta

    neighbors: list[set[int]] = [set() for _ in range(len(nodes))]
    if len(nodes) > 1:
        tree = cKDTree(xy)
        kk = min(k + 1, len(nodes))
        _, idx = tree.query(xy, k=kk)
        idx = np.asarray(idx).reshape(len(nodes), kk)
        pairs = {(min(i, int(j)), max(i, int(j))) for i in range(len(nodes)) for j in idx[i, 1:] if int(j) != i}
        pairs_arr = np.array(sorted(pairs), dtype=int).reshape(-1, 2)
        ok = _edge_free_mask(world, nodes, pairs_arr, collision_step)
        for (i, j), good in zip(pairs_arr, ok):
            if good:
                neighbors[i].add(int(j))
                neighbors[j].add(int(i))
    return Roadmap(
        nodes=nodes,
        neighbors=[sorted(n) for n in neighbors],
        region_nodes=region_nodes,
        density=density,
        seed=seed,
        start_node=start_node,
        n_samples=n_samples,
    )


def edge_controls(mean: np.ndarray, target: np.ndarray, step: float) -> list[Control]:
    """Turn toward ``target`` then drive there in pieces no longer than ``step``."""
    dx, dy = target[0] - mean[0], target[1] - mean[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-12:
        return []
    n = max(1, math.ceil(dist / step - 1e-9))
    rot1 = wrap_angle(math.atan2(dy, dx) - mean[2])
    return [Control(dist / n, rot1 if i == 0 else 0.0, 0.0) for i in range(n)]


@dataclass
class BeliefContext:
    """Everything belief propagation needs besides the belief itself."""

    roadmap: Roadmap
    landmark_xy: np.ndarray
    noise: NoiseModel
    seed: int
    edge_step: float = 0.5
    _draws: dict = field(default_factory=dict, repr=False)

    @classmethod
    def for_world(cls, roadmap: Roadmap, world: WorldMap, noise: NoiseModel, seed: int, edge_step: float = 0.5):
        return cls(roadmap, world.landmark_xy, noise, seed, edge_step)

    def draws(self, u: int, v: int, count: int) -> np.ndarray:
        """Standard-normal draws for the readings taken on arrival at ``v`` from ``u``."""
        key = (u, v)
        arr = self._draws.get(key)
        if arr is None or len(arr) < count:
            arr = np.random.default_rng([self.seed, u, v]).standard_normal((max(count, 1), 2))
            self._draws[key] = arr
        return arr


def observe_in_place(b: GaussianBelief, ctx: BeliefContext, draws: np.ndarray) -> GaussianBelief:
    """Sequential EKF updates against every landmark in range, in id order."""
    visible = landmarks_in_range(ctx.landmark_xy, b.mean[0], b.mean[1], ctx.noise.sensor_range)
    for k, li in enumerate(visible):
        lm = ctx.landmark_xy[li]
        z_hat = observation_mean(b.mean, lm)
        z = perturb_observation(z_hat, draws[k], ctx.noise, int(li))
        b = ekf_update(b, z, lm, ctx.noise)
    return b


def _visible_count(ctx: BeliefContext, x: float, y: float) -> int:
    return len(landmarks_in_range(ctx.landmark_xy, x, y, ctx.noise.sensor_range))


def edge_propagate(b: GaussianBelief, edge: tuple[int, int], ctx: BeliefContext) -> GaussianBelief:
    """Predict along ``edge`` in short control steps, then update at its end node."""
    u, v = edge
    target = ctx.roadmap.nodes[v]
    for c in edge_controls(b.mean, target, ctx.edge_step):
        b = ekf_predict(b, c, ctx.noise)
    n = _visible_count(ctx, b.mean[0], b.mean[1])
    if n:
        b = observe_in_place(b, ctx, ctx.draws(u, v, n))
    return b


def start_update(b: GaussianBelief, node: int, ctx: BeliefContext) -> GaussianBelief:
    """Readings taken while standing on ``node`` before departing."""
    n = _visible_count(ctx, b.mean[0], b.mean[1])
    if n:
        b = observe_in_place(b, ctx, ctx.draws(node, node, n))
    return b


def order_cost(config: CostConfig, length: float, csum: float) -> float:
    if config == CostConfig.CONFIG1:
        return length
    if config == CostConfig.CONFIG3:
        return length + csum
    return csum


def goal_cost(config: CostConfig, length: float, csum: float, goal_trace: float) -> float:
    if config in (CostConfig.CONFIG1, CostConfig.CONFIG2):
        return length
    if config == CostConfig.CONFIG3:
        return length + csum + goal_trace
    return csum + goal_trace


@dataclass
class MotionPlan:
    nodes: list[int]
    beliefs: list[GaussianBelief]
    length: float
    c_sigma: float
    c_sigma_g: float
    cost: float
    config: CostConfig

    @property
    def start(self) -> int:
        return self.nodes[0]

    @property
    def goal(self) -> int:
        return self.nodes[-1]

    def recompute_cost(self, roadmap: Roadmap) -> float:
        """Cost from stored beliefs and roadmap geometry alone."""
        length = sum(roadmap.edge_length(a, b) for a, b in zip(self.nodes, self.nodes[1:]))
        if self.config == CostConfig.CONFIG2:
            a, b = roadmap.nodes[self.start], roadmap.nodes[self.goal]
            return math.hypot(b[0] - a[0], b[1] - a[1])
        csum = sum(b.trace for b in self.beliefs)
        return goal_cost(self.config, length, csum, self.beliefs[-1].trace)


class BeliefSearch:
    """Resumable search from one start node with a fixed start belief.

    ``order="bfs"`` expands first-in first-out and keeps the first belief to
    arrive at each node. ``order="cost"`` settles nodes in order of the
    accumulated cost of the active configuration (without the goal term).
    """

    def __init__(self, ctx: BeliefContext, start: int, start_belief: GaussianBelief, config: CostConfig, order: str = "bfs"):
        if order not in SEARCH_ORDERS:
            raise ValueError(f"unknown search order {order!r}")
        self.ctx = ctx
        self.start = start
        self.config = CostConfig(config)
        self.order = order
        n = ctx.roadmap.n_nodes
        self.parent = [-1] * n
        self.belief: list[Optional[GaussianBelief]] = [None] * n
        self.length = [math.inf] * n
        self.csum = [math.inf] * n
        self.settled = [False] * n
        b0 = start_update(start_belief, start, ctx)
        self.belief[start] = b0
        self.length[start] = 0.0
        self.csum[start] = b0.trace
        self.propagations = 0
        if order == "bfs":
            self.settled[start] = True
            self._queue = deque([start])
        else:
            self._best = [math.inf] * n
            self._best[start] = order_cost(self.config, 0.0, b0.trace)
            self._heap = [(self._best[start], start)]

    def _relax_bfs(self) -> Optional[int]:
        if not self._queue:
            return None
        u = self._queue.popleft()
        rm = self.ctx.roadmap
        for v in rm.neighbors[u]:
            if self.settled[v]:
                continue
            bv = edge_propagate(self.belief[u], (u, v), self.ctx)
            self.propagations += 1
            self.settled[v] = True
            self.belief[v] = bv
            self.parent[v] = u
            self.length[v] = self.length[u] + rm.edge_length(u, v)
            self.csum[v] = self.csum[u] + bv.trace
            self._queue.append(v)
        return u

    def _relax_cost(self) -> Optional[int]:
        while self._heap:
            c, u = heapq.heappop(self._heap)
            if self.settled[u] or c > self._best[u]:
                continue
            self.settled[u] = True
            rm = self.ctx.roadmap
            for v in rm.neighbors[u]:
                if self.settled[v]:
                    continue
                bv = edge_propagate(self.belief[u], (u, v), self.ctx)
                self.propagations += 1
                length = self.length[u] + rm.edge_length(u, v)
                csum = self.csum[u] + bv.trace
                cv = order_cost(self.config, length, csum)
                if cv < self._best[v]:
                    self._best[v] = cv
                    self.belief[v] = bv
                    self.parent[v] = u
                    self.length[v] = length
                    self.csum[v] = csum
                    heapq.heappush(self._heap, (cv, v))
            return u
        return None

    def settle(self, targets: Sequence[int]) -> None:
        """Expand until every target is final or the component is exhausted."""
        pending = {t for t in targets if not self.settled[t]}
        step = self._relax_bfs if self.order == "bfs" else self._relax_cost
        while pending:
            if step() is None:
                break
            pending = {t for t in pending if not self.settled[t]}

    def reached(self, node: int) -> bool:
        return self.settled[node]

    def path_to(self, node: int) -> list[int]:
        path = [node]
        while path[-1] != self.start:
            path.append(self.parent[path[-1]])
        return path[::-1]

    def plan_to(self, goal: int) -> MotionPlan:
        if not self.settled[goal]:
            raise NoPathError(f"node {goal} is not reachable from {self.start}")
        nodes = self.path_to(goal)
        beliefs = [self.belief[i] for i in nodes]
        g_trace = beliefs[-1].trace
        return MotionPlan(
            nodes=nodes,
            beliefs=beliefs,
            length=self.length[goal],
            c_sigma=self.csum[goal],
            c_sigma_g=g_trace,
            cost=goal_cost(self.config, self.length[goal], self.csum[goal], g_trace),
            config=self.config,
        )


def euclidean_plan(roadmap: Roadmap, start: int, goal: int) -> MotionPlan:
    a, b = roadmap.nodes[start], roadmap.nodes[goal]
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    nodes = [start] if start == goal else [start, goal]
    return MotionPlan(nodes, [], d, 0.0, 0.0, d, CostConfig.CONFIG2)


def belief_bfs(
    roadmap: Roadmap,
    start_node: int,
    start_belief: GaussianBelief,
    goal_nodes: Sequence[int],
    config: CostConfig,
    noise: NoiseModel,
    seed: int,
    landmark_xy: Optional[np.ndarray] = None,
    order: str = "bfs",
    edge_step: float = 0.5,
    search: Optional[BeliefSearch] = None,
) -> tuple[MotionPlan, list[float]]:
    """Best motion plan to any goal node and the cost of every goal node.

    Unreachable goals cost ``inf``; :class:`NoPathError` if none is reachable.
    An existing :class:`BeliefSearch` from the same start can be passed to
    reuse its expansion.
    """
    config = CostConfig(config)
    if not goal_nodes:
        raise ValueError("goal_nodes must not be empty")
    if config == CostConfig.CONFIG2:
        plans = [euclidean_plan(roadmap, start_node, g) for g in goal_nodes]
        costs = [p.cost for p in plans]
        return plans[int(np.argmin(costs))], costs
    if search is None:
        if landmark_xy is None:
            landmark_xy = np.zeros((0, 2))
        ctx = BeliefContext(roadmap, landmark_xy, noise, seed, edge_step)
        search = BeliefSearch(ctx, start_node, start_belief, config, order)
    search.settle(goal_nodes)
    costs = []
    best = None
    for g in goal_nodes:
        if not search.reached(g):
            costs.append(math.inf)
            continue
        p = search.plan_to(g)
        costs.append(p.cost)
        if best is None or p.cost < best.cost:
            best = p
    if best is None:
        raise NoPathError(f"no goal node reachable from node {start_node}")
    return best, costs


def feasibility(plan: MotionPlan, eta: float) -> bool:
    return plan.c_sigma_g <= eta


def dijkstra_lengths(roadmap: Roadmap, start: int) -> list[float]:
    """Shortest geometric path length from ``start`` to every node."""
    dist = [math.inf] * roadmap.n_nodes
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v in roadmap.neighbors[u]:
            nd = d + roadmap.edge_length(u, v)
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist

"""Geometric world model: bounds, convex obstacles, named regions and landmarks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from shapely.geometry import Polygon, box
from shapely.ops import unary_union


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Landmark:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def distance_to_point(self, x: float, y: float) -> float:
        dx = max(self.xmin - x, 0.0, x - self.xmax)
        dy = max(self.ymin - y, 0.0, y - self.ymax)
        return math.hypot(dx, dy)

    def distance_to_rect(self, other: "Rect") -> float:
        dx = max(other.xmin - self.xmax, 0.0, self.xmin - other.xmax)
        dy = max(other.ymin - self.ymax, 0.0, self.ymin - other.ymax)
        return math.hypot(dx, dy)

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.xmax <= other.xmin
            or other.xmax <= self.xmin
            or self.ymax <= other.ymin
            or other.ymax <= self.ymin
        )


class WorldError(ValueError):
    pass


def _convex_halfplanes(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward edge normals and offsets of a convex polygon (any winding)."""
    n = len(vertices)
    if n < 3:
        raise WorldError("obstacle polygons need at least 3 vertices")
    # Shoelace sign gives winding; normals are flipped to point outward for CCW.
    signed_area = 0.5 * np.sum(
        vertices[:, 0] * np.roll(vertices[:, 1], -1) - np.roll(vertices[:, 0], -1) * vertices[:, 1]
    )
    if abs(signed_area) < 1e-12:
        raise WorldError("degenerate obstacle polygon")
    if signed_area < 0:
        vertices = vertices[::-1]
    edges = np.roll(vertices, -1, axis=0) - vertices
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, vertices)
    crosses = edges[:, 0] * np.roll(edges[:, 1], -1) - edges[:, 1] * np.roll(edges[:, 0], -1)
    if np.any(crosses < -1e-12):
        raise WorldError("obstacle polygons must be convex")
    return normals, offsets


@dataclass
class WorldMap:
    """Pre-mapped planar environment.

    Obstacles are convex polygons given as vertex lists. ``inflation`` grows
    every obstacle by a margin (meters) for collision queries only.
    """

    bounds: Rect
    obstacles: list[np.ndarray] = field(default_factory=list)
    regions: dict[str, Rect] = field(default_factory=dict)
    landmarks: list[Landmark] = field(default_factory=list)
    inflation: float = 0.0

    def __post_init__(self):
        self.obstacles = [np.asarray(o, dtype=float) for o in self.obstacles]
        self.regions = {name.lower(): r for name, r in self.regions.items()}
        self._planes = [_convex_halfplanes(o) for o in self.obstacles]
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise WorldError("landmark ids must be unique")
        names = list(self.regions)
        for name, rect in self.regions.items():
            if not (
                self.bounds.xmin <= rect.xmin < rect.xmax <= self.bounds.xmax
                and self.bounds.ymin <= rect.ymin < rect.ymax <= self.bounds.ymax
            ):
                raise WorldError(f"region {name!r} lies outside the map bounds")
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if self.regions[a].overlaps(self.regions[b]):
                    raise WorldError(f"regions {a!r} and {b!r} overlap")
        self.landmark_xy = np.array([[lm.x, lm.y] for lm in self.landmarks], dtype=float).reshape(-1, 2)

    def free_mask(self, points: np.ndarray) -> np.ndarray:
        """Vectorized :func:`is_free` over an (N, 2) array of points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        b = self.bounds
        free = (
            (pts[:, 0] >= b.xmin)
            & (pts[:, 0] <= b.xmax)
            & (pts[:, 1] >= b.ymin)
            & (pts[:, 1] <= b.ymax)
        )
        for normals, offsets in self._planes:
            lengths = np.hypot(normals[:, 0], normals[:, 1])
            # signed distance to each edge line; closed polygon, so boundary counts as inside
            dist = (pts @ normals.T - offsets) / lengths
            inside = np.all(dist <= self.inflation, axis=1)
            free &= ~inside
        return free

    def free_area(self) -> float:
        b = self.bounds
        shapes = [Polygon(o) for o in self.obstacles]
        if self.inflation > 0:
            shapes = [s.buffer(self.inflation, join_style=2) for s in shapes]
        blocked = unary_union(shapes).intersection(box(b.xmin, b.ymin, b.xmax, b.ymax)) if shapes else None
        return b.area - (blocked.area if blocked is not None else 0.0)


def is_free(world: WorldMap, pose: Pose) -> bool:
    """True iff the pose's position is inside the bounds and outside every obstacle."""
    return bool(world.free_mask(np.array([[pose.x, pose.y]]))[0])


def segment_points(a: Pose, b: Pose, step: float) -> np.ndarray:
    length = math.hypot(b.x - a.x, b.y - a.y)
    n = max(1, math.ceil(length / step))
    t = np.linspace(0.0, 1.0, n + 1)
    return np.column_stack([a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)])


def segment_free(world: WorldMap, a: Pose, b: Pose, step: float = 0.1) -> bool:
    """True iff every interpolated point at spacing <= ``step`` is free."""
    if step <= 0:
        raise ValueError("step must be positive")
    return bool(np.all(world.free_mask(segment_points(a, b, step))))


def region_of(world: WorldMap, pose: Pose) -> Optional[str]:
    for name, rect in world.regions.items():
        if rect.contains(pose.x, pose.y):
            return name
    return None


@dataclass
class Scenario:
    """A world plus everything the planner needs to run in it."""

    name: str
    world: WorldMap
    start: Pose
    start_cov: np.ndarray
    start_region: str
    noise: "NoiseModel"
    eta: float = 1.0
    density: float = 1.5
    per_region: int = 5
    search_order: str = "bfs"
    knn: int = 8
    edge_step: float = 0.5
    collision_step: float = 0.1


def _noise_from_json(spec: dict, sensor_range: float):
    from beltmp.belief import NoiseModel

    return NoiseModel(
        sigma_trans=float(spec.get("sigma_trans", 0.05)),
        sigma_rot=math.radians(float(spec.get("sigma_rot_deg", 1.0))),
        step=float(spec.get("step", 0.5)),
        proportional=bool(spec.get("proportional", False)),
        range_var=float(spec.get("range_var", 0.1)),
        bearing_var=math.radians(float(spec.get("bearing_std_deg", 2.0))) ** 2,
        sensor_range=sensor_range,
    )


def scenario_from_dict(data: dict) -> Scenario:
    bx0, by0, bx1, by1 = data["bounds"]
    world = WorldMap(
        bounds=Rect(bx0, by0, bx1, by1),
        obstacles=[np.array(o, dtype=float) for o in data.get("obstacles", [])],
        regions={k: Rect(*v) for k, v in data.get("regions", {}).items()},
        landmarks=[Landmark(int(lm["id"]), float(lm["x"]), float(lm["y"])) for lm in data.get("landmarks", [])],
        inflation=float(data.get("inflation", 0.0)),
    )
    start = data.get("start", {})
    start_pose = Pose(float(start["x"]), float(start["y"]), float(start.get("theta", 0.0)))
    std = start.get("std", [0.1, 0.1, math.radians(2.0)])
    start_cov = np.diag(np.square(np.asarray(std, dtype=float)))
    start_region = region_of(world, start_pose)
    if start_region is None:
        raise WorldError("start pose must lie inside a region")
    if not is_free(world, start_pose):
        raise WorldError("start pose collides with an obstacle")
    return Scenario(
        name=data.get("name", "scenario"),
        world=world,
        start=start_pose,
        start_cov=start_cov,
        start_region=start_region,
        noise=_noise_from_json(data.get("noise", {}), float(data.get("sensor_range", 5.0))),
        eta=float(data.get("eta", 1.0)),
        density=float(data.get("density", 1.5)),
        per_region=int(data.get("per_region", 5)),
        search_order=data.get("search_order", "bfs"),
        knn=int(data.get("knn", 8)),
        edge_step=float(data.get("edge_step", 0.5)),
        collision_step=float(data.get("collision_step", 0.1)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise WorldError(f"{path}: {exc}") from exc
    scenario = scenario_from_dict(data)
    if "name" not in data:
        scenario.name = path.stem
    return scenario

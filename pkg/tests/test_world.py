import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from beltmp.motion import build_roadmap
from beltmp.world import (
    Landmark,
    Pose,
    Rect,
    WorldError,
    WorldMap,
    is_free,
    region_of,
    scenario_from_dict,
    segment_free,
    wrap_angle,
)

from conftest import box


def brute_force_free(world, x, y):
    """Independent oracle: inside bounds and not covered by any obstacle."""
    b = world.bounds
    if not (b.xmin <= x <= b.xmax and b.ymin <= y <= b.ymax):
        return False
    return not any(Polygon(o).covers(Point(x, y)) for o in world.obstacles)


def test_pose_theta_is_wrapped():
    assert Pose(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    assert Pose(0, 0, -math.pi).theta == pytest.approx(math.pi)
    assert -math.pi < wrap_angle(-7.0) <= math.pi


def test_obstacle_centroid_is_not_free(blocks_world):
    assert not is_free(blocks_world, Pose(3, 5, 0))
    tri = blocks_world.obstacles[1]
    cx, cy = tri.mean(axis=0)
    assert not is_free(blocks_world, Pose(cx, cy, 1.0))


def test_out_of_bounds_is_not_free(blocks_world):
    assert not is_free(blocks_world, Pose(-0.1, 5, 0))
    assert not is_free(blocks_world, Pose(5, 10.01, 0))


def test_obstacle_boundary_is_not_free(blocks_world):
    # free means strictly outside every obstacle
    assert not is_free(blocks_world, Pose(2.0, 5.0, 0))
    assert is_free(blocks_world, Pose(1.999, 5.0, 0))


def test_is_free_matches_point_in_polygon_oracle(blocks_world):
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.5, 10.5, size=(1000, 2))
    got = [is_free(blocks_world, Pose(x, y, 0)) for x, y in pts]
    want = [brute_force_free(blocks_world, x, y) for x, y in pts]
    assert got == want


def test_office_free_mask_matches_oracle(office):
    rng = np.random.default_rng(11)
    pts = rng.uniform(0, [36, 25], size=(500, 2))
    got = office.world.free_mask(pts).tolist()
    want = [brute_force_free(office.world, x, y) for x, y in pts]
    assert got == want


def test_zero_length_segment(blocks_world):
    p = Pose(1, 1, 0)
    assert segment_free(blocks_world, p, p, 0.1)


def test_segment_through_obstacle_is_blocked(blocks_world):
    assert not segment_free(blocks_world, Pose(1, 1, 0), Pose(5, 9, 0), 0.1)
    assert segment_free(blocks_world, Pose(1, 1, 0), Pose(1, 9, 0), 0.1)


def test_segment_step_must_be_positive(blocks_world):
    with pytest.raises(ValueError):
        segment_free(blocks_world, Pose(1, 1, 0), Pose(1, 2, 0), 0.0)


def test_segment_agrees_with_finer_discretization(blocks_world):
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b = rng.uniform(0, 10, size=(2, 2))
        pa, pb = Pose(*a, 0), Pose(*b, 0)
        assert segment_free(blocks_world, pa, pb, 0.1) == segment_free(blocks_world, pa, pb, 0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_segment_free_is_symmetric(coords):
    world = WorldMap(Rect(0, 0, 10, 10), obstacles=[box(2, 2, 4, 8)])
    a, b = Pose(coords[0], coords[1], 0), Pose(coords[2], coords[3], 0)
    assert segment_free(world, a, b) == segment_free(world, b, a)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 15), st.floats(-5, 15))
def test_free_implies_within_bounds(x, y):
    world = WorldMap(Rect(0, 0, 10, 10), obstacles=[box(2, 2, 4, 8)])
    if is_free(world, Pose(x, y, 0)):
        assert 0 <= x <= 10 and 0 <= y <= 10


def test_region_of(blocks_world):
    assert region_of(blocks_world, Pose(1, 1, 0)) == "a"
    assert region_of(blocks_world, Pose(5, 9, 0)) is None


def test_region_instantiations_map_back(office):
    rm = build_roadmap(office.world, 0.3, per_region=5, seed=2, start=office.start)
    for name, ids in rm.region_nodes.items():
        assert len(ids) == 5
        for i in ids:
            assert region_of(office.world, rm.pose(i)) == name


def test_office_layout(office):
    w = office.world
    assert set(w.regions) == {"s", "l"} | {f"c{i}" for i in range(1, 10)}
    assert (w.bounds.xmax - w.bounds.xmin, w.bounds.ymax - w.bounds.ymin) == (36, 25)
    assert office.start_region == "s"
    assert len(w.landmarks) > 0


def test_free_area_of_simple_map():
    world = WorldMap(Rect(0, 0, 10, 10), obstacles=[box(2, 2, 4, 8), box(3, 3, 5, 5)])
    # union of the two boxes: 12 + 4 - 2 overlap
    assert world.free_area() == pytest.approx(100 - 14)


def test_overlapping_regions_rejected():
    with pytest.raises(WorldError, match="overlap"):
        WorldMap(Rect(0, 0, 10, 10), regions={"a": Rect(0, 0, 2, 2), "b": Rect(1, 1, 3, 3)})


def test_region_outside_bounds_rejected():
    with pytest.raises(WorldError):
        WorldMap(Rect(0, 0, 10, 10), regions={"a": Rect(9, 9, 11, 11)})


def test_duplicate_landmark_ids_rejected():
    with pytest.raises(WorldError, match="unique"):
        WorldMap(Rect(0, 0, 10, 10), landmarks=[Landmark(1, 1, 1), Landmark(1, 2, 2)])


def test_concave_obstacle_rejected():
    concave = np.array([[0, 0], [4, 0], [4, 4], [2, 1], [0, 4]], dtype=float)
    with pytest.raises(WorldError, match="convex"):
        WorldMap(Rect(0, 0, 10, 10), obstacles=[concave])


def test_inflation_grows_obstacles():
    world = WorldMap(Rect(0, 0, 10, 10), obstacles=[box(4, 4, 6, 6)], inflation=0.5)
    assert not is_free(world, Pose(3.7, 5, 0))
    assert is_free(world, Pose(3.4, 5, 0))


def test_scenario_start_must_be_in_region(office_dict):
    office_dict["start"]["x"] = 8.0
    office_dict["start"]["y"] = 9.0
    with pytest.raises(WorldError, match="region"):
        scenario_from_dict(office_dict)


def test_scenario_noise_fields(office):
    n = office.noise
    assert n.sigma_trans == 0.05
    assert n.sigma_rot == pytest.approx(math.radians(1.0))
    assert n.Q == pytest.approx(np.diag([0.1, math.radians(2.0) ** 2]))
    assert n.sensor_range == 5.0

import math

import numpy as np
import pytest

from beltmp.belief import GaussianBelief, NoiseModel, ekf_predict, ekf_update, observation_mean, perturb_observation
from beltmp.motion import (
    BeliefContext,
    BeliefSearch,
    CostConfig,
    MotionError,
    NoPathError,
    RegionUnsampleableError,
    Roadmap,
    belief_bfs,
    build_roadmap,
    dijkstra_lengths,
    dump_roadmap,
    edge_controls,
    edge_propagate,
    feasibility,
    load_roadmap,
)
from beltmp.world import Pose, Rect, WorldMap, segment_free

from conftest import box

NOISE = NoiseModel()
START_COV = np.diag([0.01, 0.01, 0.001])


def line_roadmap(n, spacing=1.0, y=0.5):
    nodes = [[0.5 + i * spacing, y, 0.0] for i in range(n)]
    nbrs = [[j for j in (i - 1, i + 1) if 0 <= j < n] for i in range(n)]
    return Roadmap(nodes, nbrs, {"a": [0], "b": [n - 1]}, density=1.0, seed=0, start_node=0)


def chain_oracle(roadmap, path, b, ctx):
    """Belief after walking ``path``, rebuilt from the EKF primitives alone."""
    for u, v in zip(path, path[1:]):
        for c in edge_controls(b.mean, roadmap.nodes[v], ctx.edge_step):
            b = ekf_predict(b, c, ctx.noise)
        visible = [i for i, lm in enumerate(ctx.landmark_xy) if math.dist(lm, b.mean[:2]) <= ctx.noise.sensor_range]
        draws = np.random.default_rng([ctx.seed, u, v]).standard_normal((max(len(visible), 1), 2))
        for k, li in enumerate(visible):
            z = perturb_observation(observation_mean(b.mean, ctx.landmark_xy[li]), draws[k], ctx.noise, li)
            b = ekf_update(b, z, ctx.landmark_xy[li], ctx.noise)
    return b


# roadmap construction


def test_node_count(blocks_world):
    rm = build_roadmap(blocks_world, 1.5, per_region=4, seed=3, start=Pose(1, 1, 0))
    assert rm.n_samples == math.ceil(1.5 * blocks_world.free_area())
    assert rm.n_nodes == rm.n_samples + 4 * len(blocks_world.regions) + 1
    assert rm.start_node == rm.n_nodes - 1
    assert rm.nodes[rm.start_node].tolist() == [1, 1, 0]


def test_roadmap_is_deterministic(blocks_world):
    a = build_roadmap(blocks_world, 1.0, seed=7)
    b = build_roadmap(blocks_world, 1.0, seed=7)
    c = build_roadmap(blocks_world, 1.0, seed=8)
    assert np.array_equal(a.nodes, b.nodes) and a.neighbors == b.neighbors
    assert not np.array_equal(a.nodes, c.nodes)


def test_nodes_and_edges_are_collision_free(blocks_world):
    rm = build_roadmap(blocks_world, 1.0, seed=1)
    assert blocks_world.free_mask(rm.nodes[:, :2]).all()
    for i, j in rm.edges():
        assert segment_free(blocks_world, rm.pose(i), rm.pose(j), 0.1)
        assert rm.has_edge(j, i)
    for name, ids in rm.region_nodes.items():
        rect = blocks_world.regions[name]
        assert all(rect.contains(*rm.nodes[i, :2]) for i in ids)
        assert all(rm.node_region(i) == name for i in ids)


def test_knn_degree_lower_bound(blocks_world):
    rm = build_roadmap(blocks_world, 2.0, seed=2, k=5)
    # the union of kNN lists can only add edges, and collision checks only remove them
    assert max(len(n) for n in rm.neighbors) >= 5


def test_dump_and_load(blocks_world, tmp_path):
    rm = build_roadmap(blocks_world, 1.0, seed=4, start=Pose(1, 1, 0.5))
    dump_roadmap(rm, tmp_path / "rm.json")
    back = load_roadmap(tmp_path / "rm.json")
    assert np.array_equal(back.nodes, rm.nodes)
    assert back.neighbors == rm.neighbors and back.region_nodes == rm.region_nodes
    assert back.start_node == rm.start_node and back.density == rm.density


def test_load_rejects_other_versions(blocks_world):
    data = build_roadmap(blocks_world, 0.5, seed=0).to_dict()
    data["version"] = 99
    with pytest.raises(MotionError):
        Roadmap.from_dict(data)


def test_unsampleable_region():
    world = WorldMap(Rect(0, 0, 10, 10), [box(4, 4, 6, 6)], {"a": Rect(4.5, 4.5, 5.5, 5.5)})
    with pytest.raises(RegionUnsampleableError):
        build_roadmap(world, 0.5, seed=0, max_region_tries=5)


def test_bad_parameters(blocks_world):
    with pytest.raises(ValueError):
        build_roadmap(blocks_world, 0.0)
    with pytest.raises(ValueError):
        build_roadmap(blocks_world, 1.0, per_region=0)


def test_density_shortens_paths(blocks_world):
    """Mean shortest a-to-b length at density 4 is within 10% of density 1 or better."""
    def mean_len(d):
        out = []
        for seed in range(5):
            rm = build_roadmap(blocks_world, d, seed=seed)
            dist = dijkstra_lengths(rm, rm.region_nodes["a"][0])
            out.append(min(dist[i] for i in rm.region_nodes["b"]))
        return np.mean(out)

    assert mean_len(4.0) <= 1.1 * mean_len(1.0)


# single-edge propagation


def test_edge_controls_cover_the_distance():
    ctrl = edge_controls(np.array([0.0, 0.0, 1.0]), np.array([3.2, 0.0, 0.0]), 0.5)
    assert len(ctrl) == 7
    assert sum(c.trans for c in ctrl) == pytest.approx(3.2)
    assert ctrl[0].rot1 == pytest.approx(-1.0) and all(c.rot1 == 0 for c in ctrl[1:])
    assert edge_controls(np.zeros(3), np.zeros(3), 0.5) == []


def test_edge_without_landmarks_only_predicts():
    rm = line_roadmap(2, spacing=2.0)
    ctx = BeliefContext(rm, np.zeros((0, 2)), NOISE, seed=0)
    b0 = GaussianBelief(rm.nodes[0], START_COV)
    b1 = edge_propagate(b0, (0, 1), ctx)
    assert b1.mean == pytest.approx(rm.nodes[1], abs=1e-12)
    assert b1.trace > b0.trace


def test_edge_with_landmark_reduces_uncertainty():
    rm = line_roadmap(2, spacing=2.0)
    bare = BeliefContext(rm, np.zeros((0, 2)), NOISE, seed=0)
    seen = BeliefContext(rm, np.array([[2.5, 2.0]]), NOISE, seed=0)
    b0 = GaussianBelief(rm.nodes[0], np.diag([0.5, 0.5, 0.05]))
    assert edge_propagate(b0, (0, 1), seen).trace < edge_propagate(b0, (0, 1), bare).trace


def test_edge_propagation_is_reproducible():
    rm = line_roadmap(2, spacing=2.0)
    ctx = BeliefContext(rm, np.array([[2.5, 2.0]]), NOISE, seed=5)
    b0 = GaussianBelief(rm.nodes[0], START_COV)
    a = edge_propagate(b0, (0, 1), ctx)
    b = edge_propagate(b0, (0, 1), BeliefContext(rm, np.array([[2.5, 2.0]]), NOISE, seed=5))
    c = edge_propagate(b0, (0, 1), BeliefContext(rm, np.array([[2.5, 2.0]]), NOISE, seed=6))
    assert a == b
    assert not np.array_equal(a.mean, c.mean)


# search


def test_start_equals_goal():
    rm = line_roadmap(3)
    for config in (CostConfig.CONFIG1, CostConfig.CONFIG4):
        best, costs = belief_bfs(rm, 0, GaussianBelief(rm.nodes[0], START_COV), [0], config, NOISE, seed=0)
        assert best.nodes == [0] and best.length == 0
        if config == CostConfig.CONFIG1:
            assert best.cost == 0


@pytest.mark.parametrize("order", ["bfs", "cost"])
def test_chain_beliefs_match_ekf_oracle(order):
    rm = line_roadmap(8)
    lms = np.array([[3.0, 3.0], [7.0, -2.0]])
    ctx = BeliefContext(rm, lms, NOISE, seed=11)
    b0 = GaussianBelief(rm.nodes[0], START_COV)
    search = BeliefSearch(ctx, 0, b0, CostConfig.CONFIG4, order)
    search.settle([7])
    p = search.plan_to(7)
    assert p.nodes == list(range(8))
    for k in range(8):
        want = chain_oracle(rm, [0, 0] + list(range(1, k + 1)), b0, ctx) if k else chain_oracle(rm, [0, 0], b0, ctx)
        assert np.allclose(p.beliefs[k].mean, want.mean, atol=1e-12)
        assert np.allclose(p.beliefs[k].cov, want.cov, atol=1e-12)
    assert p.c_sigma == pytest.approx(sum(b.trace for b in p.beliefs))
    assert p.c_sigma_g == p.beliefs[-1].trace


def test_config1_cost_order_matches_dijkstra(blocks_world):
    rm = build_roadmap(blocks_world, 1.0, seed=2)
    start = rm.region_nodes["a"][0]
    goals = rm.region_nodes["b"]
    dist = dijkstra_lengths(rm, start)
    b0 = GaussianBelief(rm.nodes[start], START_COV)
    exact, _ = belief_bfs(rm, start, b0, goals, CostConfig.CONFIG1, NOISE, 0, blocks_world.landmark_xy, order="cost")
    first, _ = belief_bfs(rm, start, b0, goals, CostConfig.CONFIG1, NOISE, 0, blocks_world.landmark_xy, order="bfs")
    assert exact.length == pytest.approx(min(dist[g] for g in goals), abs=1e-9)
    assert first.length >= exact.length - 1e-9


@pytest.mark.parametrize("config", [CostConfig.CONFIG1, CostConfig.CONFIG2, CostConfig.CONFIG3, CostConfig.CONFIG4])
def test_recompute_cost_from_stored_beliefs(blocks_world, config):
    rm = build_roadmap(blocks_world, 1.0, seed=6)
    start = rm.region_nodes["a"][0]
    b0 = GaussianBelief(rm.nodes[start], START_COV)
    best, costs = belief_bfs(rm, start, b0, rm.region_nodes["b"], config, NOISE, 0, blocks_world.landmark_xy)
    assert best.recompute_cost(rm) == pytest.approx(best.cost, rel=1e-12)
    assert best.cost == min(costs)


def test_config2_is_straight_line_distance(blocks_world):
    rm = build_roadmap(blocks_world, 1.0, seed=6)
    s, g = rm.region_nodes["a"][0], rm.region_nodes["b"]
    best, costs = belief_bfs(rm, s, GaussianBelief(rm.nodes[s], START_COV), g, CostConfig.CONFIG2, NOISE, 0)
    assert costs == pytest.approx([math.dist(rm.nodes[s, :2], rm.nodes[i, :2]) for i in g])


def test_feasibility_boundary():
    rm = line_roadmap(4)
    b0 = GaussianBelief(rm.nodes[0], START_COV)
    best, _ = belief_bfs(rm, 0, b0, [3], CostConfig.CONFIG4, NOISE, 0)
    eta = best.c_sigma_g
    assert feasibility(best, eta)
    assert not feasibility(best, np.nextafter(eta, 0))


def test_disconnected_goal_has_no_path():
    rm = Roadmap([[0.5, 0.5, 0], [5.5, 0.5, 0]], [[], []], {"a": [0], "b": [1]}, 1.0, 0)
    with pytest.raises(NoPathError):
        belief_bfs(rm, 0, GaussianBelief(rm.nodes[0], START_COV), [1], CostConfig.CONFIG1, NOISE, 0)


def test_search_resumes_without_repeating_work():
    rm = line_roadmap(10)
    ctx = BeliefContext(rm, np.zeros((0, 2)), NOISE, seed=0)
    s = BeliefSearch(ctx, 0, GaussianBelief(rm.nodes[0], START_COV), CostConfig.CONFIG4)
    s.settle([4])
    first = s.propagations
    s.settle([4])
    assert s.propagations == first
    s.settle([9])
    assert s.propagations == 9


def test_unknown_search_order():
    rm = line_roadmap(2)
    ctx = BeliefContext(rm, np.zeros((0, 2)), NOISE, seed=0)
    with pytest.raises(ValueError):
        BeliefSearch(ctx, 0, GaussianBelief(rm.nodes[0], START_COV), CostConfig.CONFIG4, "dfs")


def test_landmark_route_preferred_by_config4(detour):
    """Config 4 trades path length for sensing on the detour map."""
    rm = build_roadmap(detour.world, detour.density, detour.per_region, seed=0, start=detour.start, k=detour.knn)
    b0 = GaussianBelief.at(detour.start, detour.start_cov)
    goals = rm.region_nodes["g"]
    ctx = BeliefContext.for_world(rm, detour.world, detour.noise, 0, detour.edge_step)
    c1, _ = belief_bfs(rm, rm.start_node, b0, goals, CostConfig.CONFIG1, detour.noise, 0, order="cost",
                       search=BeliefSearch(ctx, rm.start_node, b0, CostConfig.CONFIG1, "cost"))
    c4, _ = belief_bfs(rm, rm.start_node, b0, goals, CostConfig.CONFIG4, detour.noise, 0, order="cost",
                       search=BeliefSearch(ctx, rm.start_node, b0, CostConfig.CONFIG4, "cost"))
    assert c4.length > c1.length
    assert c4.c_sigma_g < c1.c_sigma_g

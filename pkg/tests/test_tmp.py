import math

import numpy as np
import pytest

from beltmp.motion import CostConfig, build_roadmap, start_update
from beltmp.pddl import ground
from beltmp.taskplan import AdvisorQuery, UnreachableGoalError, heuristic, plan
from beltmp.tmp import (
    MissingCacheError,
    TmpSession,
    advise,
    load_report,
    permutation_costs,
    prepare_task,
    rescore_plan,
    solve,
    validate_plan,
)
from beltmp.world import scenario_from_dict

from conftest import box


def session_for(scenario, config, seed=0, density=None, eta=None):
    rm = build_roadmap(
        scenario.world, density or scenario.density, scenario.per_region, seed,
        start=scenario.start, k=scenario.knn, collision_step=scenario.collision_step,
    )
    return TmpSession(scenario, rm, config, seed, eta)


@pytest.fixture(scope="module")
def office_c4(office, office_domain, office_problem):
    return solve(office, office_domain, office_problem, CostConfig.CONFIG4, seed=0, density=1.0)


def test_query_to_own_region(office):
    s = session_for(office, CostConfig.CONFIG1, density=1.0)
    reply = s.query(AdvisorQuery("s", "s", None))
    assert reply.external == 0 and reply.goal_context == s.roadmap.start_node


def test_repeated_query_hits_the_cache(office):
    s = session_for(office, CostConfig.CONFIG4, density=1.0)
    q = AdvisorQuery("s", "c4", s.initial_context())
    first = advise(s, q)
    searches, legs = s.searches, len(s.cache)
    assert advise(s, q) == first
    assert (s.searches, len(s.cache), s.queries) == (searches, legs, 2)


def test_config4_bound_below_config1_on_detour(detour):
    for seed in range(3):
        q = AdvisorQuery("s", "g", None)
        b1 = session_for(detour, CostConfig.CONFIG1, seed).query(q).bound
        b4 = session_for(detour, CostConfig.CONFIG4, seed).query(q).bound
        assert b4 < b1


@pytest.mark.parametrize("config", [CostConfig.CONFIG1, CostConfig.CONFIG2, CostConfig.CONFIG3])
def test_lower_bounds_are_admissible(office, config):
    s = session_for(office, config, density=1.0)
    for dest in ("c1", "c3", "c5", "c9", "l"):
        node = s.initial_context()
        reply = s.query(AdvisorQuery("s", dest, node))
        assert s.lower_bound("s", dest, node) <= reply.external + 1e-9
        assert s.lower_bound("s", dest, None) <= reply.external + 1e-9


def test_config2_plan_is_returned_unchanged(office, office_domain, office_problem):
    task = prepare_task(office_domain, office_problem, ["c3", "c9"])
    s = session_for(office, CostConfig.CONFIG2, density=1.0, eta=1e9)
    p = plan(task, s)
    v = validate_plan(s, p)
    assert v.ok and v.plan is p and v.violation is None


def test_zero_eta_rejects_at_first_navigation(office, office_domain, office_problem):
    task = prepare_task(office_domain, office_problem, ["c3"])
    s = session_for(office, CostConfig.CONFIG4, density=1.0, eta=0.0)
    p = plan(task, s)
    v = validate_plan(s, p)
    assert not v.ok and v.plan is None
    assert v.violation["step"] == 0 and v.violation["eta"] == 0.0
    assert v.violation["bound"] > 0


def test_plan_from_another_session_is_missing(office, office_domain, office_problem):
    task = prepare_task(office_domain, office_problem, ["c3"])
    a = session_for(office, CostConfig.CONFIG1, density=1.0)
    p = plan(task, a)
    b = session_for(office, CostConfig.CONFIG1, density=1.0)
    with pytest.raises(MissingCacheError):
        validate_plan(b, p)
    with pytest.raises(MissingCacheError):
        b.leg("s", "c3", 12345)


def test_chain_continuity(office_c4):
    r = office_c4
    navs = r.navigation_steps()
    s = r.session
    assert navs[0]["start_node"] == s.roadmap.start_node
    for prev, nxt in zip(navs, navs[1:]):
        assert nxt["start_node"] == prev["goal_node"]
        assert nxt["origin"] == prev["dest"]
    for nav in navs:
        pinned = s.pinned[nav["start_node"]]
        first = start_update(pinned, nav["start_node"], s.ctx)
        assert np.array_equal(np.array(nav["beliefs"][0]["mean"]), first.mean)
        assert nav["nodes"][0] == nav["start_node"] and nav["nodes"][-1] == nav["goal_node"]


def test_cost_is_sum_of_legs_plus_collections(office_c4):
    r = office_c4
    collects = sum(s["action"].startswith("(collect_document") for s in r.steps)
    external = sum(n["external"] for n in r.navigation_steps())
    assert r.total_cost == pytest.approx(external + 4 * collects, abs=1e-9)
    assert collects == 4


def test_initial_heuristic_is_a_lower_bound(office_c4, office_domain, office_problem):
    task = ground(office_domain, office_problem)
    r = office_c4
    fresh = TmpSession(r.session.scenario, r.session.roadmap, CostConfig.CONFIG4, r.seed)
    assert heuristic(task.init, task, fresh) <= r.total_cost


def test_rescore_reproduces_cost(office_c4, office_domain, office_problem):
    task = ground(office_domain, office_problem)
    assert rescore_plan(office_c4.session, task, office_c4.plan) == pytest.approx(office_c4.total_cost, abs=1e-12)


def test_plan_is_the_best_permutation(office, office_domain, office_problem):
    targets = ["c3", "c6", "c9"]
    task = prepare_task(office_domain, office_problem, targets)
    s = session_for(office, CostConfig.CONFIG1, density=1.0)
    p = plan(task, s)
    costs = permutation_costs(s, task, targets)
    assert len(costs) == 6
    assert p.total_cost <= min(costs.values()) + 1e-9


def test_walled_off_cubicle_is_unreachable(office_dict, office_domain, office_problem):
    x0, y0, x1, y1 = office_dict["regions"]["c5"]
    m, t = 0.1, 0.2
    ring = [
        box(x0 - m - t, y0 - m - t, x1 + m + t, y0 - m),
        box(x0 - m - t, y1 + m, x1 + m + t, y1 + m + t),
        box(x0 - m - t, y0 - m, x0 - m, y1 + m),
        box(x1 + m, y0 - m, x1 + m + t, y1 + m),
    ]
    office_dict["obstacles"] = office_dict["obstacles"] + [r.tolist() for r in ring]
    scenario = scenario_from_dict(office_dict)
    with pytest.raises(UnreachableGoalError):
        solve(scenario, office_domain, office_problem, CostConfig.CONFIG1, seed=0, density=1.0, targets=["c5"])


def test_report_is_deterministic_without_timing(office, office_domain, office_problem, tmp_path):
    a = solve(office, office_domain, office_problem, CostConfig.CONFIG4, seed=2, density=1.0, targets=["c3", "c9"])
    b = solve(office, office_domain, office_problem, CostConfig.CONFIG4, seed=2, density=1.0, targets=["c3", "c9"])
    assert a.to_json(include_timing=False) == b.to_json(include_timing=False)
    assert "time_s" not in a.to_dict(include_timing=False)
    path = tmp_path / "r.json"
    path.write_text(a.to_json())
    assert load_report(path)["total_cost"] == a.total_cost


def test_report_version_checked(tmp_path):
    path = tmp_path / "r.json"
    path.write_text('{"version": 0}')
    with pytest.raises(ValueError):
        load_report(path)


def test_report_fields(office_c4):
    d = office_c4.to_dict()
    assert d["status"] == "ok" and d["valid"]
    assert d["roadmap"]["nodes"] == office_c4.session.roadmap.n_nodes
    for nav in office_c4.navigation_steps():
        assert len(nav["beliefs"]) == len(nav["nodes"]) == len(nav["poses"])
        assert nav["bound"] == nav["c_sigma_g"] <= d["eta"]
        assert math.isfinite(nav["external"])

import json

import numpy as np
import pytest

from beltmp.experiment import data_path
from beltmp.pddl import parse_domain, parse_problem
from beltmp.world import Landmark, Rect, WorldMap, load_scenario, scenario_from_dict


@pytest.fixture(scope="session")
def office():
    return load_scenario(data_path("office.json"))


@pytest.fixture(scope="session")
def detour():
    return load_scenario(data_path("detour.json"))


@pytest.fixture(scope="session")
def office_domain():
    return parse_domain(data_path("office_domain.pddl").read_text())


@pytest.fixture(scope="session")
def office_problem(office_domain):
    return parse_problem(data_path("office_problem.pddl").read_text(), office_domain)


@pytest.fixture(scope="session")
def detour_problem(office_domain):
    return parse_problem(data_path("detour_problem.pddl").read_text(), office_domain)


@pytest.fixture
def office_dict():
    return json.loads(data_path("office.json").read_text())


def box(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


@pytest.fixture
def blocks_world():
    """10 x 10 map with two chunky obstacles and two regions."""
    return WorldMap(
        bounds=Rect(0, 0, 10, 10),
        obstacles=[box(2, 2, 4, 8), np.array([[6, 1], [9, 3], [7, 6]], dtype=float)],
        regions={"a": Rect(0.2, 0.2, 1.8, 1.8), "b": Rect(8, 8, 9.8, 9.8)},
        landmarks=[Landmark(0, 5, 5), Landmark(1, 1, 9)],
    )


def strip_scenario(landmarks=(), length=10.0, **overrides):
    """Obstacle-free 1 m wide strip, regions at both ends."""
    data = {
        "name": "strip",
        "bounds": [0, 0, length, 1],
        "regions": {"a": [0, 0, 1, 1], "b": [length - 1, 0, length, 1]},
        "landmarks": [{"id": i, "x": x, "y": y} for i, (x, y) in enumerate(landmarks)],
        "start": {"x": 0.5, "y": 0.5, "theta": 0.0},
    }
    data.update(overrides)
    return scenario_from_dict(data)

import json

import numpy as np
import pytest

from riskplan.config import load_config
from riskplan.geometry import load_environment


@pytest.fixture
def rc():
    return load_config()


@pytest.fixture
def model(rc):
    return rc.model()


def make_env(obstacles=(), bounds=(0, 10, 0, 10), goal=(8.0, 9.5, 8.0, 9.5),
             start=(1.0, 1.0, 0.0), beta=0.1, t_max=1000):
    return load_environment({
        "bounds": {"rect": list(bounds)},
        "obstacles": [{"rect": list(o)} for o in obstacles],
        "goal": {"rect": list(goal)},
        "start": list(start),
        "risk": {"beta": beta, "t_max": t_max},
    })


@pytest.fixture
def empty_env():
    return make_env()


@pytest.fixture
def one_obstacle_env():
    return make_env(obstacles=[(4.0, 6.0, 3.0, 7.0)])


def write_env(path, **kw):
    env = {
        "bounds": {"rect": [0, 10, 0, 10]},
        "obstacles": kw.get("obstacles", []),
        "goal": {"rect": kw.get("goal", [8.0, 9.5, 8.0, 9.5])},
        "start": kw.get("start", [1.0, 1.0, 0.0]),
        "risk": kw.get("risk", {"beta": 0.1, "t_max": 1000}),
    }
    env.update({k: v for k, v in kw.items() if k in ("bounds",)})
    path.write_text(json.dumps(env))
    return path

import numpy as np
import pytest

from layerbind.layout import parse_layout
from layerbind.model import ModelSpec, init_model

THREE_LAYER_DOC = {
    "planning": "ball behind cat behind dog",
    "rewritten_prompt": "a dog in front of a cat in front of a red ball on grass",
    "background_prompt": "green grass field",
    "elements": [
        {"region_prompt": "a red ball", "layout": [100, 100, 600, 600], "order": 1},
        {"region_prompt": "a tabby cat", "layout": [300, 300, 800, 800], "order": 2},
        {"region_prompt": "a brown dog", "layout": [500, 200, 1000, 700], "order": 3},
    ],
}

_criteria = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    number, title = marker.args
    ok = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def model():
    return init_model(ModelSpec())


@pytest.fixture(scope="session")
def small_model():
    return init_model(ModelSpec(num_blocks=3, d_model=16, heads=2, grid_h=8, grid_w=8, weight_seed=7))


@pytest.fixture
def scene():
    return parse_layout(THREE_LAYER_DOC)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

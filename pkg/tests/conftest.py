import os

import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=400, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


HAND_ANNOTATIONS = {
    "classes": ["crack", "pothole"],
    "images": [
        {"id": "a", "file": "a.ppm", "width": 64, "height": 48,
         "boxes": [{"x": 0, "y": 0, "w": 10, "h": 10, "class": 0}]},
        {"id": "b", "file": "b.ppm", "width": 64, "height": 48,
         "boxes": [{"x": 20, "y": 20, "w": 20, "h": 20, "class": 1}]},
        {"id": "c", "file": "c.ppm", "width": 64, "height": 48,
         "boxes": [{"x": 5, "y": 5, "w": 20, "h": 20, "class": 0}]},
    ],
}

# the box in image c is a crack but is reported as a pothole
HAND_PREDICTIONS = {
    "a": [{"box": [0, 0, 10, 10], "class": 0, "score": 0.9}],
    "b": [{"box": [20, 20, 40, 40], "class": 1, "score": 0.8}],
    "c": [{"box": [5, 5, 25, 25], "class": 1, "score": 0.7}],
}

# two TPs out of three detections and three ground-truth boxes; crack AP covers
# recall up to 1/2 only (51 of 101 points), pothole AP is 1
HAND_EXPECTED = {"precision": 2 / 3, "recall": 2 / 3, "map50": 152 / 202, "map50_95": 152 / 202}


@pytest.fixture
def hand_fixture(tmp_path):
    import json

    from daponet.imageio import write_ppm

    imgs = tmp_path / "images"
    imgs.mkdir()
    for i, im in enumerate(HAND_ANNOTATIONS["images"]):
        write_ppm(imgs / im["file"], np.random.default_rng(i).integers(
            0, 256, (im["height"], im["width"], 3), dtype=np.uint8))
    ann = tmp_path / "ann.json"
    ann.write_text(json.dumps(HAND_ANNOTATIONS))
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps(HAND_PREDICTIONS))
    return tmp_path, imgs, ann, pred


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

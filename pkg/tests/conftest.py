from pathlib import Path

import numpy as np
import pytest

from limbpose.keypoints import NUM_JOINTS, PersonInstance

DATA = Path(__file__).parent / 'data'

_acceptance = {}


def pytest_runtest_logreport(report):
    if report.when != 'call' and not (report.when == 'setup' and report.failed):
        return
    crit = getattr(report, 'criterion', None)
    if crit is not None:
        _acceptance[crit] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker('acceptance')
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section('acceptance criteria')
    for crit in sorted(_acceptance, key=lambda c: int(c.split()[0])):
        status = 'PASS' if _acceptance[crit] == 'passed' else 'FAIL'
        terminalreporter.write_line(f'[{status}] AC{crit}')


@pytest.fixture
def coco3_bytes():
    return (DATA / 'coco3.json').read_bytes()


@pytest.fixture
def coco3_path():
    return DATA / 'coco3.json'


def make_person(xy=None, vis=2, bbox=(0, 0, 200, 300), id=1, image_id=1, area=None):
    if xy is None:
        xy = np.stack([np.arange(NUM_JOINTS) * 10.0 + 20, np.arange(NUM_JOINTS) * 15.0 + 10], 1)
    vis = np.broadcast_to(np.asarray(vis), (NUM_JOINTS,))
    return PersonInstance.from_arrays(xy, vis, bbox, id=id, image_id=image_id, area=area)


@pytest.fixture
def person():
    return make_person()


def random_stacks(rng, shape=(17, 64, 48)):
    return rng.random(shape), rng.random(shape)

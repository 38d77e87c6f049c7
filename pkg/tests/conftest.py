import numpy as np
import pytest
from hypothesis import settings

from efs_depth import kernels
from efs_depth.encodings import EncodingConfig
from efs_depth.events import EventSimConfig, FocalSweep
from efs_depth.optics import LensConfig
from efs_depth.pipeline import build_dataset, scene_configs
from efs_depth.scenes import SceneConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

TOY_SCENE = SceneConfig(num_objects=2, height=32, width=32, seed=100)
TOY_ENCODING = EncodingConfig(8, 32, 32)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    previous = kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Four noiseless 32x32 scenes with a 64-sample [1, 10] m sweep."""
    out = tmp_path_factory.mktemp("toy") / "ds"
    return build_dataset(scene_configs(TOY_SCENE, 4), LensConfig(), FocalSweep(), EventSimConfig(),
                         TOY_ENCODING, out)


_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False, "notes": []})
    if report.when == "call" or report.failed:
        entry["ran"] = entry["ran"] or report.when == "call" or report.failed
        entry["ok"] = entry["ok"] and not report.failed
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in report.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else ("SKIP" if entry["ok"] else "FAIL")
        notes = f" ({'; '.join(entry['notes'])})" if entry["notes"] else ""
        terminalreporter.write_line(f"{status} criterion {number}: {entry['title']}{notes}")

import pytest
import torch

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def _entry(marker):
    number, title = marker.args
    return _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "ran": False, "seconds": 0.0, "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    entry = _entry(marker)
    entry["seconds"] += report.duration  # setup time counts too: shared training runs there
    if report.when == "call":
        entry["ran"] = True
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}  ({e['seconds']:.1f}s)"
                                    + (f"  [{notes}]" if notes else ""))


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line of the calling test."""
    marker = request.node.get_closest_marker("criterion")
    return _entry(marker)["notes"].append if marker else (lambda text: None)

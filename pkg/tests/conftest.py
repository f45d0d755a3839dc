import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): numbered acceptance criterion")


@pytest.fixture
def measured(request):
    """Call with a short string describing the measured value; it is echoed in the summary."""
    def record(text):
        request.node.user_properties.append(("measured", text))
    return record


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        item.user_properties.append(("criterion", marker.args))


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props:
                continue
            number, label = props["criterion"]
            detail = " ".join(v for k, v in rep.user_properties if k == "measured")
            if rep.failed:
                rows[number] = ("FAIL", label, detail)
            elif rep.when == "call" and rows.get(number, ("",))[0] != "FAIL":
                rows[number] = ("PASS", label, detail)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(rows):
        status, label, detail = rows[number]
        terminalreporter.write_line(f"{status}  AC{number:02d} {label}" + (f"  [{detail}]" if detail else ""))

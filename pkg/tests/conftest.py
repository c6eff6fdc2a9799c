import pytest

from chemobound.geometry import Disk, Rectangle, compute_geometry_constants, make_domain
from chemobound.simulator import ModelParams


@pytest.fixture
def unit_square():
    return make_domain(Rectangle(0.5, 0.5, (0.5, 0.5)), (0.5, 0.5))


@pytest.fixture
def unit_square_geom(unit_square):
    return compute_geometry_constants(unit_square)


@pytest.fixture
def unit_disk_geom():
    return compute_geometry_constants(make_domain(Disk(1.0), (0.0, 0.0), 256))


@pytest.fixture
def ones():
    return ModelParams.ones()


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

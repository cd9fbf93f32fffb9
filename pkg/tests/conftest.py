import pytest

from vibalign.phantom import PhantomConfig


@pytest.fixture
def small_phantom():
    """64x64 phantom; fast enough for unit tests that render many frames."""
    return PhantomConfig(image_height=64, image_width=64, needle_depth_px=32, needle_span=(10, 54))


# Acceptance results, printed as one line per criterion after the run.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

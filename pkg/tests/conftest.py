import numpy as np
import pytest

from gidnet.imaging import ImagePlane

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def smooth_image(seed: int, h: int = 32, w: int = 32) -> ImagePlane:
    """Sum-of-sinusoids RGB image with content above the x4 LR Nyquist limit."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    chans = []
    for _ in range(3):
        fx, fy, ph = rng.uniform(0.2, 0.9, 3)
        chans.append(127 + 90 * np.sin(fx * x + ph) * np.cos(fy * y))
    return ImagePlane(np.stack(chans, -1).round().astype(np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record a named acceptance outcome for the end-of-run summary."""
    state = {}

    def _set(name, passed, detail=""):
        state["v"] = (name, bool(passed), detail)
        return passed

    yield _set
    if "v" in state:
        _ACCEPTANCE.append(state["v"])
    else:
        _ACCEPTANCE.append((request.node.name, False, "did not report"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())

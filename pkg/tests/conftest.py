import numpy as np
import pytest

from reconfnet.network import ModelConfig

# 40x30 frames with kernels scaled down from the defaults
DESK = ModelConfig(K=3, frame_h=30, frame_w=40, k1=(4, 5, 3), k2=(4, 4, 3), k3=(2, 3))

# small enough for exhaustive checks, still with two stacked 3D convolutions
SMALL = ModelConfig(M=2, m=5, tau=3, K=3, frame_h=10, frame_w=12, channels=2,
                    c1=2, c2=2, c3=2, k1=(3, 3, 2), k2=(2, 2, 2), k3=(2, 2),
                    pool1=(2, 2), pool2=(1, 1), fc_hidden=5, A=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record ``(number, passed, detail)`` for the end-of-run criterion summary."""
    def record(number, title, passed, detail=""):
        request.config._acceptance[number] = (title, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")

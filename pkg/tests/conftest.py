import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def bitmap_disk(cx, cy, r, w, h):
    """Per-pixel disk oracle: pixel (i, j) with (i - x)^2 + (j - y)^2 <= r^2."""
    out = np.zeros((h, w), dtype=bool)
    for j in range(h):
        for i in range(w):
            out[j, i] = (i - cx) ** 2 + (j - cy) ** 2 <= r * r
    return out


def random_bitmap(rng, h, w, density=None):
    if density is None:
        density = rng.uniform(0.0, 1.0)
    return rng.random((h, w)) < density


def blob_bitmap(rng, h, w):
    # rectangles and ellipses give run structure closer to real masks than noise
    out = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[:h, :w]
    for _ in range(rng.integers(1, 4)):
        cx, cy = rng.uniform(-5, w + 5), rng.uniform(-5, h + 5)
        a, b = rng.uniform(1, w / 2 + 1), rng.uniform(1, h / 2 + 1)
        if rng.random() < 0.5:
            out |= (np.abs(xx - cx) <= a) & (np.abs(yy - cy) <= b)
        else:
            out |= ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register their verdicts here; the summary prints one line each
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

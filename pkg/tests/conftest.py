import numpy as np
import pytest

from tumorbound.phantom import PhantomConfig, generate_slice


def random_mask(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Union of a few random ellipses plus salt noise; never empty."""
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0, size, size=2)
        ax, ay = rng.uniform(2, size / 3, size=2)
        mask |= ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    mask |= rng.random((size, size)) < rng.uniform(0.0, 0.05)
    mask[int(rng.integers(size)), int(rng.integers(size))] = True
    return mask


def star_blob(size: int = 64, radius: float = 18.0, cx=None, cy=None, wobble: float = 0.0, phase: float = 0.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size / 2.0 - 0.5 if cx is None else cx
    cy = size / 2.0 - 0.5 if cy is None else cy
    psi = np.arctan2(yy - cy, xx - cx)
    return np.hypot(xx - cx, yy - cy) <= radius * (1.0 + wobble * np.cos(3 * psi + phase))


@pytest.fixture(scope="session")
def phantom_cfg():
    return PhantomConfig()


@pytest.fixture(scope="session")
def phantom_slices(phantom_cfg):
    return [generate_slice(phantom_cfg, i // 5, i % 5) for i in range(100)]


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)

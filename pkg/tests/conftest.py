import numpy as np
import pytest

from painpair.synth import gen_dataset

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def synthetic_set():
    """Small bias-mode synthetic set: 6 subjects x 12 frames."""
    return gen_dataset(6, 12, seed=7, bias_mode=True)


@pytest.fixture(scope="session")
def synthetic_frames(synthetic_set):
    return np.asarray(synthetic_set[1], dtype=np.float64)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

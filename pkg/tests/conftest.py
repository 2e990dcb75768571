import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voicekit.audio import make_clip  # noqa: E402

import helpers  # noqa: E402


@pytest.fixture
def tone():
    """Two seconds of a 220 Hz sine at 16 kHz, amplitude 0.5."""
    fs = 16000
    t = np.arange(2 * fs) / fs
    return make_clip("tone220", 0.5 * np.sin(2 * np.pi * 220.0 * t), fs)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 healthy + 4 pathological speakers, short clips, for module tests."""
    root = tmp_path_factory.mktemp("tiny")
    manifest, records = helpers.build_corpus(
        root, 4, 4, seed=11, vowel_s=1.0, n_syllables=5, vowels=("a",))
    return {"root": root, "manifest": manifest, "records": records}


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """The 60-speaker corpus driven by the end-to-end tests."""
    root = tmp_path_factory.mktemp("desk")
    manifest, records = helpers.build_desk_corpus(root)
    return {"root": root, "manifest": manifest, "records": records}


# verdict lines collected by tests/test_acceptance.py, echoed at the end of
# the run so they stay visible under output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

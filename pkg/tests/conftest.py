import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from aaii.dataset import ClipRecord, Role, write_wav
from aaii.synthgen import SynthSpec, generate

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_record(path="x.wav", individual="a", role=Role.FOREGROUND, date="2013-05-01"):
    return ClipRecord(Path(path), individual, role, dt.date.fromisoformat(date))


def write_tone(path, seconds=1.0, rate=44100, freq=440.0, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    x = amp * np.sin(2 * np.pi * freq * t)
    write_wav(path, x, rate)
    return x


@pytest.fixture(scope="session")
def tiny_synth(tmp_path_factory):
    """3 individuals, 6 clips per role, 1 s each."""
    out = tmp_path_factory.mktemp("tiny")
    manifest = generate(SynthSpec(K=3, clips_per_individual=6, duration_s=1.0, seed=11), out)
    return manifest

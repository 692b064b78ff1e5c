import numpy as np
import pytest

from coughkit.audio_io import Waveform


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, sr=16000, dur=1.0, amp=1.0, phase=0.0):
    t = np.arange(int(round(sr * dur))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr, f"tone{freq}")


def bursts(sr=16000, amp=0.9, floor=0.01, burst_ms=300, gap_ms=500, lead_ms=1000, n=2, seed=0):
    """Noise bursts at ``amp`` separated by ``floor``-level noise; returns (waveform, [(s, e)])."""
    g = np.random.default_rng(seed)
    b, gap, lead = (int(sr * ms / 1000) for ms in (burst_ms, gap_ms, lead_ms))
    total = 2 * lead + n * b + (n - 1) * gap
    x = floor * g.uniform(-1, 1, total)
    spans = []
    pos = lead
    for _ in range(n):
        x[pos:pos + b] = amp * g.uniform(-1, 1, b)
        spans.append((pos, pos + b))
        pos += b + gap
    x /= np.max(np.abs(x))
    return Waveform(x, sr, "bursts"), spans


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def raw_wav(path, pcm=b"", rate=16000, channels=1, bits=16, fmt_code=1, extra_chunks=b"", data_size=None,
            fmt_body=None):
    """Assemble a WAV file byte by byte, optionally malformed."""
    if fmt_body is None:
        block = channels * bits // 8
        fmt_body = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block, block, bits)
    size = len(pcm) if data_size is None else data_size
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body + extra_chunks
            + b"data" + struct.pack("<I", size) + pcm)
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])

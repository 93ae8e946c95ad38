import numpy as np
import pytest

from ddmodem.channel import ChannelRealization, ChannelSpec, PathComponent

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def direct_received(realization: ChannelRealization, s: np.ndarray) -> np.ndarray:
    """Sample-by-sample evaluation of the path sum, independent of the matrix code.

    r(n) = Σ_i h_i s(n - l_i) exp(j2π n k_i / M), n = -M_p..M-1, zero outside the frame.
    ``s`` may carry several input vectors as columns.
    """
    spec = realization.spec
    M, Mp = spec.num_subcarriers, spec.prefix_len
    s = np.asarray(s)
    out = np.zeros((M + Mp,) + s.shape[1:], dtype=complex)
    for row in range(M + Mp):
        n = row - Mp
        acc = 0j
        for p in realization.paths:
            src = n - p.delay_grid
            if src < -Mp:
                continue
            acc = acc + p.gain * s[src + Mp] * np.exp(2j * np.pi * n * p.normalized_doppler / M)
        out[row] = acc
    return out


def single_path(spec: ChannelSpec, gain=1.0, delay=0, doppler_hz=0.0) -> ChannelRealization:
    T = spec.frame_duration
    return ChannelRealization((PathComponent(complex(gain), int(delay), float(doppler_hz), doppler_hz * T),), spec)


@pytest.fixture
def desk_spec():
    return ChannelSpec.with_speed_kmh(360, num_subcarriers=32, prefix_len=8, num_paths=4, max_delay_grid=6)


@pytest.fixture
def paper_spec():
    return ChannelSpec.with_speed_kmh(360)


@pytest.fixture
def small_spec():
    return ChannelSpec.with_speed_kmh(360, num_subcarriers=8, prefix_len=3, num_paths=3, max_delay_grid=3)

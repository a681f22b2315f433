import numpy as np
import pytest

from privaudio.channel import ChannelSet, NoiseBank


def toeplitz_block(h, n_cols, n_rows):
    """Dense convolution matrix: column j holds h shifted down by j."""
    T = np.zeros((n_rows, n_cols))
    for j in range(n_cols):
        seg = h[: max(0, min(len(h), n_rows - j))]
        T[j:j + len(seg), j] = seg
    return T


def dense_H(channels: ChannelSet) -> np.ndarray:
    K, L, N, L_x = channels.K, channels.L, channels.N, channels.L_x
    return np.block([[toeplitz_block(channels.rirs[k, i], L_x, N) for i in range(L)] for k in range(K)])


def dense_N(bank: NoiseBank, L_g: int) -> np.ndarray:
    L_x = bank.L_n + L_g - 1
    blocks = [toeplitz_block(bank.noises[i], L_g, L_x) for i in range(bank.L)]
    out = np.zeros((bank.L * L_x, bank.L * L_g))
    for i, b in enumerate(blocks):
        out[i * L_x:(i + 1) * L_x, i * L_g:(i + 1) * L_g] = b
    return out


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


def random_channels(seed, K=2, L=3, N=64, L_h=16):
    rng = np.random.default_rng(seed)
    return ChannelSet(rng.standard_normal((K, L, L_h)), N)


@pytest.fixture
def small_channels():
    return random_channels(0)


# One line per acceptance criterion, filled in by test_acceptance.py and
# echoed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

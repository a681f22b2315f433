import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privaudio.metrics import (
    StoiConfig,
    align_lag,
    relative_error,
    relative_error_optscale,
    snr_db,
    stoi,
)
from privaudio.signal import Signal, read_wav
from privaudio.speech import synthesize

DATA = Path(__file__).parent / "data"
PAIRS = sorted(p.stem for p in DATA.glob("*.wav"))
# Reference scores from the pystoi package, computed once on these files.
REFERENCE = json.loads((DATA / "pystoi_reference.json").read_text())


def load_pair(name):
    data, fs = read_wav(DATA / f"{name}.wav")
    return data[0], data[1], fs


@pytest.fixture(scope="module")
def clean():
    return synthesize(11, 3.0)


class TestStoi:
    @pytest.mark.parametrize("name", PAIRS)
    def test_frozen_reference(self, name):
        x, y, fs = load_pair(name)
        assert stoi(x, y, fs) == pytest.approx(REFERENCE[name], abs=0.02)

    @pytest.mark.parametrize("name", PAIRS)
    def test_live_reference(self, name):
        pystoi = pytest.importorskip("pystoi")
        x, y, fs = load_pair(name)
        assert stoi(x, y, fs) == pytest.approx(pystoi.stoi(x, y, int(fs)), abs=0.02)

    def test_identical_is_one(self, clean):
        assert stoi(clean, clean) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("gain", [1e-3, 0.5, 7.0])
    def test_gain_invariant(self, clean, gain):
        noisy = clean.samples + 0.05 * np.random.default_rng(0).standard_normal(len(clean))
        base = stoi(clean.samples, noisy, clean.sample_rate_hz)
        assert stoi(clean.samples, gain * noisy, clean.sample_rate_hz) == pytest.approx(base, abs=1e-9)

    def test_decreases_with_noise(self, clean):
        x = clean.samples
        n = np.random.default_rng(1).standard_normal(x.size)
        n *= np.linalg.norm(x) / np.linalg.norm(n)
        scores = [stoi(x, x + n * 10 ** (-snr / 20), 16000) for snr in (20, 10, 0, -10)]
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_unrelated_is_low(self, clean):
        other = synthesize(12, 3.0)
        assert stoi(clean, other) < 0.5

    def test_rejects(self, clean):
        with pytest.raises(ValueError):
            stoi(clean, Signal(clean.samples[:-1]))
        with pytest.raises(ValueError):
            stoi(clean, Signal(clean.samples, 8000))
        with pytest.raises(ValueError):
            stoi(np.zeros(16000), np.ones(16000), 16000)
        with pytest.raises(ValueError):
            stoi(np.ones(3000), np.ones(3000), 16000)  # under 30 frames
        with pytest.raises(ValueError):
            stoi(np.ones(16000), np.ones(16000))

    def test_config(self):
        cfg = StoiConfig()
        lo, hi = cfg.band_edges()
        assert lo[0] == pytest.approx(150 * 2 ** (-1 / 6)) and hi[-1] < 5000
        obm = cfg.band_matrix()
        assert obm.shape == (15, 257) and np.all(obm.sum(axis=0) <= 1)
        with pytest.raises(ValueError):
            StoiConfig(segment=0)
        with pytest.raises(ValueError):
            StoiConfig(fs=8000)


class TestErrors:
    def test_examples(self):
        ref = np.array([3.0, 4.0])
        assert relative_error(ref, ref) == 0.0
        assert relative_error(ref, np.zeros(2)) == 1.0
        assert relative_error(ref, 2 * ref) == pytest.approx(1.0)
        assert relative_error_optscale(ref, 2 * ref) == pytest.approx(0.0, abs=1e-15)
        assert snr_db(ref, ref) == math.inf
        assert snr_db(ref, 1.1 * ref) == pytest.approx(20.0)

    def test_rejects(self):
        with pytest.raises(ValueError):
            relative_error(np.zeros(3), np.ones(3))
        with pytest.raises(ValueError):
            snr_db(np.ones(3), np.ones(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100))
    def test_identities(self, seed, c):
        rng = np.random.default_rng(seed)
        ref, tst = rng.standard_normal((2, 40))
        e = relative_error(ref, tst)
        assert snr_db(ref, tst) == pytest.approx(-20 * math.log10(e), rel=1e-10, abs=1e-10)
        assert relative_error_optscale(ref, tst) <= e + 1e-12
        assert relative_error_optscale(ref, c * tst) == pytest.approx(relative_error_optscale(ref, tst), rel=1e-9)

    @pytest.mark.parametrize("lag", [0, 7, -12])
    def test_align_lag(self, lag):
        x = np.random.default_rng(3).standard_normal(500)
        y = np.roll(x, lag)
        assert align_lag(x, y) == lag
        assert align_lag(x, y, max_lag=20) == lag

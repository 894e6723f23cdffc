from pathlib import Path

import numpy as np
import pytest

from framemos.dsp import AudioBuffer
from framemos.synth import SynthUtterance, make_utterance, write_corpus

SR = 16_000


@pytest.fixture
def dominant_frequency():
    "Frequency of the strongest spectral peak, to ~0.1 Hz."

    def estimate(samples: np.ndarray, sample_rate: int = SR) -> float:
        n_fft = 2**18
        spectrum = np.abs(np.fft.rfft(samples * np.hanning(samples.shape[0]), n=n_fft))
        return float(np.argmax(spectrum) * sample_rate / n_fft)

    return estimate


@pytest.fixture
def tone():
    def make(freq: float, seconds: float = 1.0, amplitude: float = 0.3, sample_rate: int = SR) -> AudioBuffer:
        t = np.arange(int(seconds * sample_rate)) / sample_rate
        return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)

    return make


@pytest.fixture(scope="session")
def utterance() -> SynthUtterance:
    return make_utterance("utt000", seed=1, duration=4.0)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Path:
    "Manifest of a small synthetic corpus on disk."
    return write_corpus(tmp_path_factory.mktemp("corpus"), n_utterances=4, seed=0, duration=4.0)

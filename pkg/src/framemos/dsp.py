"""
Deterministic signal-processing primitives.

Everything here is a pure function of its inputs (and an explicit seed for the
stochastic ones): WAV I/O, STFT/ISTFT, RMS loudness normalization, pink noise,
phase randomization, and a phase vocoder for time-stretching and pitch-shifting.
"""

import logging
import math
from os import PathLike
from typing import Literal

import attrs
import numpy as np
import scipy.io.wavfile
import scipy.signal
import soundfile

log = logging.getLogger(__name__)

Seed = int | np.random.SeedSequence | None

DEFAULT_FFT_SIZE = 1024
DEFAULT_HOP = 256
DEFAULT_WINDOW = "hann"
DEFAULT_PHASE_ITERATIONS = 100

# Symmetric scale, used for both writing and reading 16-bit PCM.
PCM16_SCALE = 32767.0


class UnsupportedFormatError(ValueError):
    pass


class CannotNormalizeError(ValueError):
    pass


def _as_samples(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"Audio must be mono (1-D), not shape {arr.shape}")
    return arr


@attrs.frozen(eq=False)
class AudioBuffer:
    "Mono PCM samples at a known sample rate."

    samples: np.ndarray = attrs.field(converter=_as_samples)
    sample_rate: int = attrs.field(converter=int)

    @samples.validator
    def _check_finite(self, attribute, value: np.ndarray) -> None:
        if not np.all(np.isfinite(value)):
            raise ValueError("Audio samples must be finite")

    @sample_rate.validator
    def _check_rate(self, attribute, value: int) -> None:
        if value <= 0:
            raise ValueError(f"Sample rate must be positive, not {value}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


@attrs.frozen(eq=False)
class Spectrogram:
    """
    Complex STFT coefficients, shape ``(n_frames, fft_size // 2 + 1)``.

    ``length`` is the number of samples of the analysed signal, so `istft` can
    trim the centered padding back off.
    """

    frames: np.ndarray
    fft_size: int
    hop: int
    window: str
    sample_rate: int
    length: int

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def with_frames(self, frames: np.ndarray, length: int | None = None) -> "Spectrogram":
        return attrs.evolve(
            self, frames=frames, length=self.length if length is None else length
        )


def clip_unit(samples: np.ndarray) -> tuple[np.ndarray, int]:
    "Clip to [-1, 1]; also return how many samples were out of range."
    n_clipped = int(np.count_nonzero(np.abs(samples) > 1.0))
    return np.clip(samples, -1.0, 1.0), n_clipped


def read_wav(path: str | PathLike) -> AudioBuffer:
    """
    Read a 16-bit integer or 32-bit float PCM WAV file as a mono buffer.

    Multi-channel files are averaged down to one channel.
    """
    try:
        info = soundfile.info(str(path))
    except RuntimeError as e:
        raise OSError(f"Cannot read audio file {path}: {e}") from e

    if info.format != "WAV" or info.subtype not in ("PCM_16", "FLOAT"):
        raise UnsupportedFormatError(
            f"{path}: only 16-bit PCM and 32-bit float WAV are supported, "
            f"not {info.format}/{info.subtype}"
        )

    if info.subtype == "PCM_16":
        data, sr = soundfile.read(str(path), dtype="int16", always_2d=True)
        samples = np.clip(data.astype(np.float64) / PCM16_SCALE, -1.0, 1.0)
    else:
        data, sr = soundfile.read(str(path), dtype="float32", always_2d=True)
        samples = data.astype(np.float64)

    return AudioBuffer(samples.mean(axis=1), sr)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    "Round half away from zero onto the 16-bit grid."
    scaled = np.abs(samples) * PCM16_SCALE
    q = np.sign(samples) * np.floor(scaled + 0.5)
    return np.clip(q, -32768, 32767).astype(np.int16)


def write_wav(
    buffer: AudioBuffer,
    path: str | PathLike,
    bit_depth: Literal[16, "32f"] = 16,
) -> None:
    if len(buffer) == 0:
        raise ValueError("Refusing to write an empty buffer")

    samples, n_clipped = clip_unit(buffer.samples)
    if n_clipped:
        log.warning("Clipped %d samples writing %s", n_clipped, path)

    # `format` is explicit so temp files without a .wav suffix still work
    if bit_depth == 16:
        soundfile.write(
            str(path), quantize_pcm16(samples), buffer.sample_rate,
            subtype="PCM_16", format="WAV",
        )
    elif bit_depth == "32f":
        # libsndfile stamps float WAVs with a PEAK chunk holding the write time
        scipy.io.wavfile.write(str(path), buffer.sample_rate, samples.astype(np.float32))
    else:
        raise ValueError(f"Unsupported bit depth {bit_depth!r}; use 16 or '32f'")


def rms(samples: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(samples)))) if samples.size else 0.0


def rms_dbfs(buffer: AudioBuffer) -> float:
    level = rms(buffer.samples)
    return 20 * math.log10(level) if level > 0 else -math.inf


def loudness_gain(buffer: AudioBuffer, target_dbfs: float = -18.0) -> float:
    "Linear gain that brings the buffer's RMS level to ``target_dbfs``."
    level = rms(buffer.samples)
    if level == 0:
        raise CannotNormalizeError("Cannot loudness-normalize an all-zero buffer")
    return 10 ** (target_dbfs / 20) / level


def loudness_normalize(buffer: AudioBuffer, target_dbfs: float = -18.0) -> AudioBuffer:
    """
    Scale the buffer so its RMS level is ``target_dbfs`` (20·log10(rms)).

    Loudness here is plain RMS relative to full scale, not a perceptual measure.
    """
    gain = loudness_gain(buffer, target_dbfs)
    if gain == 1.0:
        return buffer
    return buffer.with_samples(buffer.samples * gain)


def _analysis_window(window: str, fft_size: int) -> np.ndarray:
    return scipy.signal.get_window(window, fft_size, fftbins=True)


def _check_stft_params(fft_size: int, hop: int, window: str) -> np.ndarray:
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, not {fft_size}")
    if not 0 < hop <= fft_size:
        raise ValueError(f"hop must be in (0, fft_size={fft_size}], not {hop}")
    win = _analysis_window(window, fft_size)
    if not scipy.signal.check_COLA(win, fft_size, fft_size - hop):
        raise ValueError(
            f"Window {window!r} with fft_size={fft_size}, hop={hop} is not COLA-compliant"
        )
    return win


def stft(
    buffer: AudioBuffer,
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
    window: str = DEFAULT_WINDOW,
) -> Spectrogram:
    "Short-time Fourier transform with centered frames (fft_size // 2 zeros each side)."
    win = _check_stft_params(fft_size, hop, window)

    half = fft_size // 2
    padded = np.pad(buffer.samples, (half, half))
    n_frames = 1 + (padded.shape[0] - fft_size) // hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size)[::hop][:n_frames]
    coeffs = np.fft.rfft(frames * win, axis=-1)

    return Spectrogram(
        frames=coeffs,
        fft_size=fft_size,
        hop=hop,
        window=window,
        sample_rate=buffer.sample_rate,
        length=len(buffer),
    )


def istft(spec: Spectrogram, length: int | None = None) -> AudioBuffer:
    """
    Inverse STFT by windowed overlap-add, normalized by the summed squared window.

    Returns exactly ``length`` samples (default: the analysed signal's length).
    """
    if spec.frames.ndim != 2 or spec.frames.shape[1] != spec.n_bins:
        raise ValueError(
            f"Spectrogram frames have shape {spec.frames.shape}, expected "
            f"(n_frames, {spec.n_bins}) for fft_size={spec.fft_size}"
        )
    win = _check_stft_params(spec.fft_size, spec.hop, spec.window)
    length = spec.length if length is None else length

    n_frames = spec.frames.shape[0]
    out_len = spec.fft_size + spec.hop * max(n_frames - 1, 0)
    signal = np.zeros(out_len)
    norm = np.zeros(out_len)

    frames = np.fft.irfft(spec.frames, n=spec.fft_size, axis=-1) * win
    win_sq = win**2
    for i in range(n_frames):
        start = i * spec.hop
        signal[start : start + spec.fft_size] += frames[i]
        norm[start : start + spec.fft_size] += win_sq

    nonzero = norm > np.finfo(np.float64).tiny
    signal[nonzero] /= norm[nonzero]

    half = spec.fft_size // 2
    signal = signal[half : half + length]
    if signal.shape[0] < length:
        signal = np.pad(signal, (0, length - signal.shape[0]))
    return AudioBuffer(signal, spec.sample_rate)


def pink_noise(
    n_samples: int,
    sigma: float = 0.1,
    seed: Seed = None,
    sample_rate: int = 16_000,
) -> AudioBuffer:
    """
    1/f noise with sample standard deviation exactly ``sigma``.

    White Gaussian noise is shaped by 1/sqrt(f) in the frequency domain (DC
    zeroed), which gives a power spectrum falling by 10 dB per decade.
    """
    if n_samples < 2:
        raise ValueError(f"Need at least 2 samples of pink noise, not {n_samples}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, not {sigma}")

    rng = np.random.default_rng(seed)
    spectrum = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples)
    spectrum[0] = 0.0
    spectrum[1:] /= np.sqrt(freqs[1:])
    noise = np.fft.irfft(spectrum, n=n_samples)

    std = noise.std()
    if std == 0:
        raise ValueError("Degenerate pink noise realization")
    return AudioBuffer(noise * (sigma / std), sample_rate)


def phase_randomize(
    buffer: AudioBuffer,
    seed: Seed = None,
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
    window: str = DEFAULT_WINDOW,
    n_iter: int = DEFAULT_PHASE_ITERATIONS,
    momentum: float = 0.99,
) -> AudioBuffer:
    """
    Keep the STFT magnitudes, replace every phase with one drawn from U(-π, π].

    Random phases alone are not a consistent STFT: overlap-adding them smears
    the magnitudes of every frame. Starting from the random phases, ``n_iter``
    fast Griffin-Lim iterations pull the frames back onto the input magnitudes;
    the phases never see the input's. DC and Nyquist bins stay real (random
    sign). The output is scaled to the input's RMS level.
    """
    if len(buffer) < fft_size:
        raise ValueError(
            f"Phase randomization needs at least fft_size={fft_size} samples, got {len(buffer)}"
        )
    if n_iter < 0:
        raise ValueError(f"n_iter must be non-negative, not {n_iter}")

    rng = np.random.default_rng(seed)
    spec = stft(buffer, fft_size, hop, window)
    magnitude = np.abs(spec.frames)

    angles = np.exp(1j * (np.pi - rng.uniform(0.0, 2 * np.pi, size=magnitude.shape)))
    signs = rng.choice([-1.0, 1.0], size=(magnitude.shape[0], 2))
    angles[:, 0] = signs[:, 0]
    angles[:, -1] = signs[:, 1]

    eps = np.finfo(np.float64).tiny
    rebuilt = np.zeros_like(angles)
    for _ in range(n_iter):
        previous = rebuilt
        rebuilt = stft(istft(spec.with_frames(magnitude * angles)), fft_size, hop, window).frames
        angles = rebuilt - (momentum / (1 + momentum)) * previous
        angles /= np.abs(angles) + eps

    out = istft(spec.with_frames(magnitude * angles)).samples
    in_level, out_level = rms(buffer.samples), rms(out)
    if out_level > 0:
        out = out * (in_level / out_level)
    return buffer.with_samples(out)


def _spectral_peaks(magnitude: np.ndarray) -> np.ndarray:
    "Indices of local maxima of a magnitude spectrum."
    inner = (magnitude[1:-1] > magnitude[:-2]) & (magnitude[1:-1] >= magnitude[2:])
    return np.flatnonzero(inner) + 1


def _lock_to_peaks(
    synth_phase: np.ndarray, analysis_phase: np.ndarray, magnitude: np.ndarray
) -> np.ndarray:
    """
    Identity phase locking: every bin keeps its analysis phase offset relative to
    the peak whose region of influence it lies in.
    """
    peaks = _spectral_peaks(magnitude)
    if peaks.size == 0:
        return synth_phase
    # region boundaries halfway between neighbouring peaks
    bounds = (peaks[:-1] + peaks[1:]) / 2
    owner = peaks[np.searchsorted(bounds, np.arange(magnitude.shape[0]))]
    return synth_phase[owner] + (analysis_phase - analysis_phase[owner])


def time_stretch(
    buffer: AudioBuffer,
    factor: float,
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
) -> AudioBuffer:
    """
    Phase-vocoder time stretch with identity phase locking.

    ``factor`` > 1 lengthens the signal. The output has exactly
    ``round(len(buffer) * factor)`` samples; pitch is preserved.
    """
    if not 0.25 <= factor <= 4:
        raise ValueError(f"Stretch factor must be in [0.25, 4], not {factor}")

    spec = stft(buffer, fft_size, hop)
    frames = spec.frames
    n_in = frames.shape[0]
    out_len = int(round(len(buffer) * factor))

    # same frame count `stft` would produce for a signal of length out_len
    n_out = 1 + out_len // hop
    steps = np.minimum(np.arange(n_out) / factor, n_in - 1)

    magnitude = np.abs(frames)
    phase = np.angle(frames)
    expected = 2 * np.pi * hop * np.arange(spec.n_bins) / fft_size

    out = np.empty((n_out, spec.n_bins), dtype=np.complex128)
    acc = phase[0].copy()
    for t, step in enumerate(steps):
        i0 = int(step)
        i1 = min(i0 + 1, n_in - 1)
        alpha = step - i0
        mag = (1 - alpha) * magnitude[i0] + alpha * magnitude[i1]

        locked = _lock_to_peaks(acc, phase[i0], mag)
        out[t] = mag * np.exp(1j * locked)

        delta = phase[i1] - phase[i0] - expected
        delta -= 2 * np.pi * np.round(delta / (2 * np.pi))
        acc = locked + expected + delta

    return istft(spec.with_frames(out, length=out_len))


def pitch_shift(
    buffer: AudioBuffer,
    semitone_ratio: float,
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
) -> AudioBuffer:
    """
    Multiply every frequency by ``semitone_ratio`` while keeping the duration.

    Time-stretches by the ratio, then resamples back to the input length with
    band-limited Fourier (periodic sinc) interpolation.
    """
    if not 0.5 <= semitone_ratio <= 2:
        raise ValueError(f"Pitch ratio must be in [0.5, 2], not {semitone_ratio}")

    stretched = time_stretch(buffer, semitone_ratio, fft_size, hop)
    if len(stretched) == len(buffer):
        return stretched
    return buffer.with_samples(scipy.signal.resample(stretched.samples, len(buffer)))

"""
Synthetic speech-shaped utterances with exact alignments.

Each utterance is a sequence of pauses, fricatives (high-passed noise) and vowels
(harmonic tones with a wobbling F0, shaped by two formants), over a low-level
background floor that is never digitally silent. It comes in two versions:

* ``pristine``, the clean reference;
* ``clean``, the pristine signal plus a little independent white noise, so a
  reference-based scorer gives scores that vary over time even before any
  distortion is injected.

Both are at −18 dBFS. `write_corpus` lays a set of them out on disk with a manifest.
"""

import logging
from os import PathLike
from pathlib import Path

import attrs
import numpy as np
import scipy.signal

from framemos.alignment import AlignmentTrack, SegmentAnnotation, SegmentClass, write_alignment
from framemos.dsp import AudioBuffer, loudness_normalize, pink_noise, write_wav
from framemos.manifest import ManifestRow, write_manifest

log = logging.getLogger(__name__)

# label -> (F1, F2) in Hz
VOWELS = {
    "AA": (730.0, 1090.0),
    "IY": (270.0, 2290.0),
    "UW": (300.0, 870.0),
    "EH": (530.0, 1840.0),
    "AH": (640.0, 1190.0),
}
# label -> high-pass cutoff in Hz
FRICATIVES = {"S": 4000.0, "SH": 2500.0, "F": 1500.0, "TH": 2000.0, "HH": 800.0}

RAMP_SECONDS = 0.01
VOWEL_RMS = 0.1
FRICATIVE_RMS = 0.04
FLOOR_PINK = 0.004
FLOOR_WHITE = 0.002
CLEAN_NOISE = 0.002
SYSTEM_NOISE_LEVELS = (0.0005, 0.001, 0.0015, 0.002)


@attrs.frozen(eq=False)
class SynthUtterance:
    utterance_id: str
    pristine: AudioBuffer
    clean: AudioBuffer
    track: AlignmentTrack


def _ramp(n: int, sample_rate: int) -> np.ndarray:
    "Raised-cosine on/off envelope."
    env = np.ones(n)
    k = min(int(RAMP_SECONDS * sample_rate), n // 2)
    if k > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k) + 0.5) / k)
        env[:k] = rise
        env[n - k :] = rise[::-1]
    return env


def _vowel(
    n: int, start: int, sample_rate: int, f0: float, formants: tuple[float, float], rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    t = (start + np.arange(n)) / sample_rate
    contour = f0 * (1 + 0.05 * np.sin(2 * np.pi * 3.0 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(contour) / sample_rate

    x = np.zeros(n)
    for k in range(1, int(4000 // contour.max()) + 1):
        freq = k * f0
        gain = 0.05 + sum(1 / (1 + ((freq - f) / 100.0) ** 2) for f in formants)
        # random harmonic phases keep the crest factor low
        x += gain / np.sqrt(k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    x *= VOWEL_RMS / np.sqrt(np.mean(x**2))
    return x * _ramp(n, sample_rate), float(contour.mean())


def _fricative(n: int, sample_rate: int, cutoff: float, rng: np.random.Generator) -> np.ndarray:
    sos = scipy.signal.butter(4, cutoff, btype="highpass", fs=sample_rate, output="sos")
    x = scipy.signal.sosfilt(sos, rng.standard_normal(n + 512))[512:]
    x *= FRICATIVE_RMS / np.sqrt(np.mean(x**2))
    return x * _ramp(n, sample_rate)


def _plan_segments(
    duration: float, rng: np.random.Generator
) -> list[tuple[float, float, str, str]]:
    "``(onset, offset, kind, label)`` covering ``[0, duration]``."
    segments = []
    t = float(rng.uniform(0.15, 0.3))
    segments.append((0.0, t, "pause", "SIL"))
    while True:
        syllable = []
        if rng.random() < 0.6:
            label = str(rng.choice(list(FRICATIVES)))
            syllable.append(("fricative", label, float(rng.uniform(0.08, 0.18))))
        syllable.append(("vowel", str(rng.choice(list(VOWELS))), float(rng.uniform(0.12, 0.3))))
        if rng.random() < 0.25:
            syllable.append(("pause", "SIL", float(rng.uniform(0.05, 0.15))))
        if t + sum(d for *_, d in syllable) > duration - 0.2:
            break
        for kind, label, d in syllable:
            segments.append((t, t + d, kind, label))
            t += d
    segments.append((t, duration, "pause", "SIL"))
    return segments


def make_utterance(
    utterance_id: str,
    seed: int,
    duration: float = 6.0,
    sample_rate: int = 16_000,
    clean_noise: float = CLEAN_NOISE,
) -> SynthUtterance:
    rng = np.random.default_rng(seed)
    floor_seed, white_seed, noise_seed = np.random.SeedSequence(seed).spawn(3)
    n = int(round(duration * sample_rate))
    f0 = float(rng.uniform(100.0, 220.0))

    speech = np.zeros(n)
    annotations: list[SegmentAnnotation] = []
    for onset, offset, kind, label in _plan_segments(n / sample_rate, rng):
        a, b = int(round(onset * sample_rate)), int(round(offset * sample_rate))
        onset_s, offset_s = a / sample_rate, b / sample_rate
        if b <= a:
            continue
        if kind == "vowel":
            samples, mean_f0 = _vowel(b - a, a, sample_rate, f0, VOWELS[label], rng)
            speech[a:b] += samples
            annotations += [
                SegmentAnnotation(onset_s, offset_s, label, SegmentClass.VOWEL),
                SegmentAnnotation(onset_s, offset_s, "voiced", SegmentClass.VOICED),
                SegmentAnnotation(onset_s, offset_s, f"f0={mean_f0:.1f}", SegmentClass.PITCHED),
            ]
        elif kind == "fricative":
            speech[a:b] += _fricative(b - a, sample_rate, FRICATIVES[label], rng)
            annotations.append(SegmentAnnotation(onset_s, offset_s, label, SegmentClass.FRICATIVE))
        else:
            annotations.append(SegmentAnnotation(onset_s, offset_s, label, SegmentClass.OTHER))

    floor = (
        pink_noise(n, FLOOR_PINK, floor_seed, sample_rate).samples
        + FLOOR_WHITE * np.random.default_rng(white_seed).standard_normal(n)
    )
    pristine = loudness_normalize(AudioBuffer(speech + floor, sample_rate))
    noise = clean_noise * np.random.default_rng(noise_seed).standard_normal(n)
    clean = loudness_normalize(pristine.with_samples(pristine.samples + noise))

    track = AlignmentTrack(utterance_id, n / sample_rate, annotations)
    return SynthUtterance(utterance_id, pristine, clean, track)


def make_corpus(
    n_utterances: int, seed: int = 0, duration: float = 6.0, sample_rate: int = 16_000
) -> list[SynthUtterance]:
    return [
        make_utterance(f"utt{i:03d}", seed * 100_003 + i, duration, sample_rate)
        for i in range(n_utterances)
    ]


def write_corpus(
    directory: str | PathLike,
    n_utterances: int = 20,
    seed: int = 0,
    duration: float = 6.0,
    sample_rate: int = 16_000,
) -> Path:
    """
    Write clean WAVs, reference WAVs and alignments for a synthetic corpus, plus
    ``manifest.tsv``. Utterances are spread over four "systems" that differ in how
    much noise the clean rendition carries; ``true_mos`` falls with that noise.
    Returns the manifest path.
    """
    directory = Path(directory).absolute()
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_utterances):
        system = i % len(SYSTEM_NOISE_LEVELS)
        utt = make_utterance(
            f"utt{i:03d}", seed * 100_003 + i, duration, sample_rate, SYSTEM_NOISE_LEVELS[system]
        )
        wav = directory / f"{utt.utterance_id}.wav"
        ref = directory / f"{utt.utterance_id}.ref.wav"
        align = directory / f"{utt.utterance_id}.align.tsv"
        write_wav(utt.clean, wav, bit_depth="32f")
        write_wav(utt.pristine, ref, bit_depth="32f")
        write_alignment(utt.track, align)
        rows.append(
            ManifestRow(
                utterance_id=utt.utterance_id,
                wav_path=wav,
                alignment_path=align,
                reference_path=ref,
                system_id=f"sys{system}",
                true_mos=4.5 - 0.5 * system,
            )
        )
    manifest = directory / "manifest.tsv"
    write_manifest(rows, manifest)
    log.info("Wrote %d synthetic utterances to %s", n_utterances, directory)
    return manifest

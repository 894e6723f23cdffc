"""
Frame-level scoring with chunked, multi-resolution overlap-add.

A `FrameScorer` maps one chunk of audio (plus an optional clean reference chunk)
to raw per-frame values. `score_utterance` runs a scorer over fixed-size blocks
at several block lengths, overlap-adds each resolution back onto the utterance's
frame grid, fuses the resolutions with softmax-normalized weights, and optionally
range-clips into the MOS interval with ``γ·tanh(raw) + β``.

Since every block is scored independently, a frame's score only depends on the
samples of the blocks covering it. Frame-local scorers therefore give scores that
are untouched by a distortion elsewhere in the utterance.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from fractions import Fraction
from os import PathLike
from pathlib import Path
from typing import Literal, Protocol, runtime_checkable

import attrs
import numpy as np
import pydantic
import scipy.ndimage
import scipy.signal
import scipy.special

from framemos.dsp import AudioBuffer, loudness_gain, loudness_normalize

log = logging.getLogger(__name__)

DEFAULT_FRAME_RATE = 50.0
MOS_RANGE = (1.0, 5.0)
MAGNITUDE_FLOOR = 1e-8


def _as_scores(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"Frame scores must be 1-D, not shape {arr.shape}")
    return arr


@attrs.frozen(eq=False)
class FrameScoreSequence:
    "Per-frame scalar scores at a fixed frame rate."

    utterance_id: str
    scores: np.ndarray = attrs.field(converter=_as_scores)
    frame_rate: float = DEFAULT_FRAME_RATE
    valid_range: tuple[float, float] | None = None

    def __attrs_post_init__(self) -> None:
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.utterance_id}: frame scores must be finite")
        if self.frame_rate <= 0:
            raise ValueError(f"Frame rate must be positive, not {self.frame_rate}")

    def __len__(self) -> int:
        return self.scores.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.frame_rate

    def with_scores(self, scores: np.ndarray, **changes) -> "FrameScoreSequence":
        return attrs.evolve(self, scores=scores, **changes)


def frame_count(n_samples: int, sample_rate: int, frame_rate: float = DEFAULT_FRAME_RATE) -> int:
    "``ceil(duration × frame_rate)``, computed exactly."
    return math.ceil(Fraction(n_samples) * Fraction(frame_rate) / sample_rate)


def samples_to_frames(n_samples: int, sample_rate: int, frame_rate: float) -> int:
    "Exact frame count for a sample offset that must fall on a frame boundary."
    frames = Fraction(n_samples) * Fraction(frame_rate) / sample_rate
    if frames.denominator != 1:
        raise ValueError(
            f"{n_samples} samples at {sample_rate} Hz is not a whole number of "
            f"frames at {frame_rate} frames/s"
        )
    return int(frames)


def conform_length(raw: np.ndarray, n_frames: int) -> np.ndarray:
    "Truncate, or pad by repeating the last value, to exactly ``n_frames``."
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[0] >= n_frames:
        return raw[:n_frames]
    if raw.shape[0] == 0:
        raise ValueError("Cannot pad an empty score sequence")
    return np.pad(raw, (0, n_frames - raw.shape[0]), mode="edge")


# Chunking
##########


@attrs.frozen
class ChunkPlan:
    "Fixed-size blocks of ``block_length`` samples every ``shift`` samples."

    n_samples: int
    block_length: int
    shift: int

    def __attrs_post_init__(self) -> None:
        if self.block_length <= 0:
            raise ValueError(f"Block length must be positive, not {self.block_length}")
        if not 0 < self.shift <= self.block_length:
            raise ValueError(
                f"Block shift must be in (0, {self.block_length}], not {self.shift}"
            )

    @property
    def n_blocks(self) -> int:
        if self.n_samples <= self.block_length:
            return 1
        return math.ceil((self.n_samples - self.block_length) / self.shift) + 1

    @property
    def offsets(self) -> list[int]:
        return [i * self.shift for i in range(self.n_blocks)]

    @property
    def pad(self) -> int:
        "Zeros appended after the signal so the last block is full."
        return (self.n_blocks - 1) * self.shift + self.block_length - self.n_samples


def chunk_signal(buffer: AudioBuffer, block_length: int, shift: int) -> list[AudioBuffer]:
    """
    Split into blocks of ``block_length`` samples starting every ``shift`` samples.

    The last block (or the only one, for short signals) is zero-padded to full length.
    """
    plan = ChunkPlan(len(buffer), block_length, shift)
    padded = np.pad(buffer.samples, (0, plan.pad))
    return [
        buffer.with_samples(padded[start : start + block_length]) for start in plan.offsets
    ]


def overlap_add(
    chunk_outputs: Sequence[np.ndarray],
    shift_frames: int,
    n_frames: int | None = None,
) -> np.ndarray:
    """
    Uniform-weight overlap-add of per-block frame sequences.

    Block ``i`` covers frames ``[i·shift_frames, i·shift_frames + L)``; each output
    frame is the mean over the blocks covering it. The result is trimmed (or
    edge-padded) to ``n_frames``.
    """
    if not chunk_outputs:
        raise ValueError("Nothing to overlap-add")
    if shift_frames <= 0:
        raise ValueError(f"Shift must be a positive number of frames, not {shift_frames}")
    block_frames = chunk_outputs[0].shape[0]
    if any(c.shape != (block_frames,) for c in chunk_outputs):
        raise ValueError("All chunk outputs must be 1-D with the same number of frames")

    total = (len(chunk_outputs) - 1) * shift_frames + block_frames
    acc = np.zeros(total)
    count = np.zeros(total)
    for i, out in enumerate(chunk_outputs):
        start = i * shift_frames
        acc[start : start + block_frames] += out
        count[start : start + block_frames] += 1

    covered = count > 0
    if not np.all(covered):
        raise ValueError(
            f"Shift of {shift_frames} frames leaves gaps between {block_frames}-frame blocks"
        )
    result = acc / count
    return result if n_frames is None else conform_length(result, n_frames)


# Multi-resolution fusion
#########################


def _as_floats(value) -> tuple[float, ...]:
    return tuple(float(v) for v in value)


@attrs.frozen
class ResolutionFusion:
    """
    Block lengths (seconds) scored in parallel and fused with ``softmax(logits)``.

    ``shifts`` defaults to half of each block length.
    """

    block_lengths: tuple[float, ...] = attrs.field(
        default=(1.0, 0.6, 0.4), converter=_as_floats
    )
    shifts: tuple[float, ...] = attrs.field(converter=_as_floats)
    logits: tuple[float, ...] = attrs.field(converter=_as_floats)

    @shifts.default
    def _half_blocks(self) -> tuple[float, ...]:
        return tuple(b / 2 for b in self.block_lengths)

    @logits.default
    def _uniform(self) -> tuple[float, ...]:
        return (0.0,) * len(self.block_lengths)

    def __attrs_post_init__(self) -> None:
        k = len(self.block_lengths)
        if k == 0:
            raise ValueError("Need at least one block length")
        if len(self.shifts) != k or len(self.logits) != k:
            raise ValueError(
                f"Got {k} block lengths, {len(self.shifts)} shifts and "
                f"{len(self.logits)} logits; they must match"
            )
        for b, m in zip(self.block_lengths, self.shifts):
            if not 0 < m <= b:
                raise ValueError(f"Shift {m}s must be in (0, {b}s]")

    @property
    def weights(self) -> np.ndarray:
        return scipy.special.softmax(np.asarray(self.logits, dtype=np.float64))


def fuse_resolutions(per_resolution: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    "Elementwise convex combination ``Σ_k w_k · h_k``."
    if len(per_resolution) != len(weights):
        raise ValueError(
            f"{len(per_resolution)} sequences but {len(weights)} weights"
        )
    if not per_resolution:
        raise ValueError("Nothing to fuse")
    lengths = {np.shape(seq) for seq in per_resolution}
    if len(lengths) != 1:
        raise ValueError(f"Sequences to fuse have different shapes: {sorted(lengths)}")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-12):
        raise ValueError(f"Weights must be nonnegative and sum to 1, got {w}")
    stacked = np.stack([np.asarray(seq, dtype=np.float64) for seq in per_resolution])
    return np.tensordot(w, stacked, axes=1)


def range_clip(raw: FrameScoreSequence, gamma: float = 2.0, beta: float = 3.0) -> FrameScoreSequence:
    "``γ·tanh(raw) + β``; with the defaults every score lands in [1, 5]."
    return raw.with_scores(
        gamma * np.tanh(raw.scores) + beta,
        valid_range=(beta - abs(gamma), beta + abs(gamma)),
    )


def pool_utterance_score(scores: FrameScoreSequence) -> float:
    "Temporal average pooling: the utterance score is the mean frame score."
    if len(scores) == 0:
        raise ValueError(f"{scores.utterance_id}: cannot pool an empty score sequence")
    return float(np.mean(scores.scores))


def median_window(length_ms: float, frame_rate: float = DEFAULT_FRAME_RATE) -> int:
    "Largest odd frame count not above ``round(length_ms × frame_rate / 1000)``, at least 1."
    if length_ms < 0:
        raise ValueError(f"Median filter length must be >= 0, not {length_ms}")
    frames = math.floor(length_ms * frame_rate / 1000 + 0.5)
    if frames % 2 == 0:
        frames -= 1
    return max(frames, 1)


def median_smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or values.shape[0] == 0:
        return values
    return scipy.ndimage.median_filter(values, size=window, mode="reflect")


def median_filter(scores: FrameScoreSequence, length_ms: float) -> FrameScoreSequence:
    window = median_window(length_ms, scores.frame_rate)
    if window == 1:
        return scores
    return scores.with_scores(median_smooth(scores.scores, window))


# Scorers
#########


@attrs.frozen(eq=False)
class Chunk:
    "One block handed to a scorer. ``start`` is the block's first sample in the utterance."

    audio: AudioBuffer
    reference: AudioBuffer | None
    start: int
    utterance_id: str


@runtime_checkable
class FrameScorer(Protocol):
    """
    Maps one chunk to raw per-frame values at ``frame_rate``.

    Must be stateless across chunks, and picklable so it can be shipped to worker
    processes.
    """

    frame_rate: float

    def score(self, chunk: Chunk) -> np.ndarray: ...


@attrs.frozen
class ConstantScorer:
    value: float = 0.0
    frame_rate: float = DEFAULT_FRAME_RATE

    def score(self, chunk: Chunk) -> np.ndarray:
        n = frame_count(len(chunk.audio), chunk.audio.sample_rate, self.frame_rate)
        return np.full(n, self.value)


def spectral_reference_scorer(
    degraded: AudioBuffer,
    clean: AudioBuffer,
    frame_rate: float = DEFAULT_FRAME_RATE,
    a: float = 1.5,
    b: float = 1.0,
) -> np.ndarray:
    """
    Raw score ``a − b·d_t`` where ``d_t`` is the mean absolute log-magnitude
    difference between the degraded and clean spectra of frame ``t``.

    Frames are non-overlapping, Hann-windowed and ``sample_rate / frame_rate``
    samples long, so each frame's value depends only on that frame's samples.
    Magnitudes are floored at 1e-8 before taking logs.
    """
    if len(degraded) != len(clean):
        raise ValueError(
            f"Degraded and clean chunks differ in length ({len(degraded)} vs {len(clean)})"
        )
    if degraded.sample_rate != clean.sample_rate:
        raise ValueError(
            f"Sample rates differ ({degraded.sample_rate} vs {clean.sample_rate} Hz)"
        )
    hop_f = Fraction(degraded.sample_rate) / Fraction(frame_rate)
    if hop_f.denominator != 1:
        raise ValueError(
            f"Frame rate {frame_rate} does not divide the sample rate {degraded.sample_rate}"
        )
    hop = int(hop_f)

    n_frames = frame_count(len(degraded), degraded.sample_rate, frame_rate)
    pad = n_frames * hop - len(degraded)
    window = scipy.signal.get_window("hann", hop)

    def log_magnitude(x: np.ndarray) -> np.ndarray:
        frames = np.pad(x, (0, pad)).reshape(n_frames, hop) * window
        return np.log(np.maximum(np.abs(np.fft.rfft(frames, axis=-1)), MAGNITUDE_FLOOR))

    distance = np.mean(np.abs(log_magnitude(degraded.samples) - log_magnitude(clean.samples)), axis=-1)
    return a - b * distance


@attrs.frozen
class SpectralReferenceScorer:
    "Block-local reference-based scorer; needs the clean reference for every chunk."

    frame_rate: float = DEFAULT_FRAME_RATE
    a: float = 1.5
    b: float = 1.0

    def score(self, chunk: Chunk) -> np.ndarray:
        if chunk.reference is None:
            raise ValueError(
                f"{chunk.utterance_id}: the spectral reference scorer needs a clean reference"
            )
        return spectral_reference_scorer(
            chunk.audio, chunk.reference, self.frame_rate, self.a, self.b
        )


@attrs.frozen(eq=False)
class FileScorer:
    """
    Serves precomputed raw frame scores (e.g. exported from a trained model).

    A chunk starting at sample ``start`` gets the frames from ``start`` onward;
    frames past the end of the file repeat the last value.
    """

    scores: Mapping[str, FrameScoreSequence]
    frame_rate: float = DEFAULT_FRAME_RATE

    def score(self, chunk: Chunk) -> np.ndarray:
        try:
            seq = self.scores[chunk.utterance_id]
        except KeyError:
            raise KeyError(f"No frame scores loaded for {chunk.utterance_id!r}") from None
        if seq.frame_rate != self.frame_rate:
            raise ValueError(
                f"{chunk.utterance_id}: score file has {seq.frame_rate} frames/s, "
                f"expected {self.frame_rate}"
            )
        sr = chunk.audio.sample_rate
        first = samples_to_frames(chunk.start, sr, self.frame_rate)
        n = frame_count(len(chunk.audio), sr, self.frame_rate)
        return conform_length(seq.scores[first : first + n] if first < len(seq) else seq.scores[-1:], n)


@attrs.frozen
class GlobalCouplingScorer:
    """
    Diagnostic scorer with an unlimited receptive field over its chunk.

    Whenever any frame of the inner scorer's output for a chunk falls below
    ``trigger``, ``penalty`` is subtracted from every frame of that chunk. Run
    unchunked, a single local distortion then shifts the whole utterance.
    """

    inner: FrameScorer
    penalty: float = 0.3
    trigger: float = 0.5

    @property
    def frame_rate(self) -> float:
        return self.inner.frame_rate

    def score(self, chunk: Chunk) -> np.ndarray:
        raw = self.inner.score(chunk)
        if raw.size and raw.min() < self.trigger:
            return raw - self.penalty
        return raw


# Pipeline
##########


def _score_blocks(
    scorer: FrameScorer,
    buffer: AudioBuffer,
    reference: AudioBuffer | None,
    utterance_id: str,
    block_length: int,
    shift: int,
    n_frames: int,
) -> np.ndarray:
    sr = buffer.sample_rate
    shift_frames = samples_to_frames(shift, sr, scorer.frame_rate)
    block_frames = frame_count(block_length, sr, scorer.frame_rate)

    blocks = chunk_signal(buffer, block_length, shift)
    ref_blocks = (
        chunk_signal(reference, block_length, shift) if reference is not None else [None] * len(blocks)
    )
    outputs = [
        conform_length(
            scorer.score(Chunk(block, ref_block, i * shift, utterance_id)), block_frames
        )
        for i, (block, ref_block) in enumerate(zip(blocks, ref_blocks))
    ]
    return overlap_add(outputs, shift_frames, n_frames)


def score_utterance(
    buffer: AudioBuffer,
    scorer: FrameScorer,
    fusion: ResolutionFusion | None = None,
    clip: bool = True,
    reference: AudioBuffer | None = None,
    utterance_id: str = "",
    gamma: float = 2.0,
    beta: float = 3.0,
    target_dbfs: float | None = -18.0,
) -> FrameScoreSequence:
    """
    Score one utterance.

    With a `ResolutionFusion`, every block length is chunked, scored block by block
    and overlap-added, then the resolutions are fused. With ``fusion=None`` the
    whole utterance is scored as a single block (the global-context baseline).

    Loudness is normalized to ``target_dbfs`` first; with a reference, the gain
    that normalizes the reference is applied to both signals so their relative
    level is kept.
    """
    if reference is not None:
        if reference.sample_rate != buffer.sample_rate:
            raise ValueError(
                f"{utterance_id}: reference is {reference.sample_rate} Hz, "
                f"degraded audio is {buffer.sample_rate} Hz"
            )
        if len(reference) != len(buffer):
            raise ValueError(
                f"{utterance_id}: reference has {len(reference)} samples, "
                f"degraded audio has {len(buffer)}"
            )
    if target_dbfs is not None:
        if reference is not None:
            gain = loudness_gain(reference, target_dbfs)
            if gain != 1.0:
                buffer = buffer.with_samples(buffer.samples * gain)
                reference = reference.with_samples(reference.samples * gain)
        else:
            buffer = loudness_normalize(buffer, target_dbfs)

    sr = buffer.sample_rate
    n = len(buffer)
    if n == 0:
        raise ValueError(f"{utterance_id}: cannot score an empty utterance")
    n_frames = frame_count(n, sr, scorer.frame_rate)

    if fusion is None:
        raw = _score_blocks(scorer, buffer, reference, utterance_id, n, n, n_frames)
    else:
        per_resolution = [
            _score_blocks(
                scorer, buffer, reference, utterance_id,
                int(round(block_s * sr)), int(round(shift_s * sr)), n_frames,
            )
            for block_s, shift_s in zip(fusion.block_lengths, fusion.shifts)
        ]
        raw = fuse_resolutions(per_resolution, fusion.weights)

    seq = FrameScoreSequence(utterance_id, raw, scorer.frame_rate)
    return range_clip(seq, gamma, beta) if clip else seq


def check_frame_aligned(fusion: ResolutionFusion, sample_rate: int, frame_rate: float) -> None:
    "Raise unless every block length and shift is a whole number of samples and frames."
    for seconds in fusion.block_lengths + fusion.shifts:
        samples = seconds * sample_rate
        if not math.isclose(samples, round(samples), abs_tol=1e-6):
            raise ValueError(f"{seconds}s is not a whole number of samples at {sample_rate} Hz")
    for shift in fusion.shifts:
        samples_to_frames(int(round(shift * sample_rate)), sample_rate, frame_rate)


# Frame-score files
###################

FrameScoreFormat = Literal["text", "f32"]
BINARY_SUFFIX = ".f32"


class FrameScoreSidecar(pydantic.BaseModel):
    frame_rate: float
    count: int


def sidecar_path(path: str | PathLike) -> Path:
    return Path(f"{path}.json")


def write_frame_scores(
    scores: FrameScoreSequence,
    path: str | PathLike,
    format: FrameScoreFormat = "text",
) -> None:
    """
    Write one frame score per line (``repr`` of the float), or a raw little-endian
    float32 stream plus a ``<path>.json`` sidecar holding the frame rate and count.
    """
    path = Path(path)
    if format == "text":
        path.write_text("".join(f"{float(s)!r}\n" for s in scores.scores))
    elif format == "f32":
        path.write_bytes(scores.scores.astype("<f4").tobytes())
        sidecar = FrameScoreSidecar(frame_rate=scores.frame_rate, count=len(scores))
        sidecar_path(path).write_text(sidecar.model_dump_json())
    else:
        raise ValueError(f"Unknown frame score format {format!r}")


def read_frame_scores(
    path: str | PathLike,
    utterance_id: str | None = None,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> FrameScoreSequence:
    """
    Read a frame-score file. Files ending in ``.f32`` are binary and need their
    JSON sidecar (whose frame rate wins); anything else is one float per line.
    """
    path = Path(path)
    utterance_id = utterance_id or path.name.split(".")[0]
    if path.suffix == BINARY_SUFFIX:
        try:
            sidecar = FrameScoreSidecar.model_validate_json(sidecar_path(path).read_text())
        except FileNotFoundError:
            raise FileNotFoundError(
                f"Binary frame scores {path} need a sidecar at {sidecar_path(path)}"
            ) from None
        scores = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
        if scores.shape[0] != sidecar.count:
            raise ValueError(
                f"{path}: sidecar says {sidecar.count} frames, file holds {scores.shape[0]}"
            )
        return FrameScoreSequence(utterance_id, scores, sidecar.frame_rate)

    values = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return FrameScoreSequence(utterance_id, np.array(values), frame_rate)


def load_file_scorer(
    paths: Mapping[str, str | PathLike], frame_rate: float = DEFAULT_FRAME_RATE
) -> FileScorer:
    return FileScorer(
        {utt: read_frame_scores(p, utt, frame_rate) for utt, p in paths.items()}, frame_rate
    )


def score_file_suffix(format: FrameScoreFormat) -> str:
    return ".scores.txt" if format == "text" else ".scores" + BINARY_SUFFIX


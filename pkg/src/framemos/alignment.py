"""
Segment annotations: alignment TSV parsing, phone-class mapping, and a fallback
autocorrelation voicing detector.

Alignment files are tab-separated with the header ``onset offset label class``
(seconds as decimals). A class of ``-`` means "look the phone label up in the
phone-class map".
"""

import csv
import enum
import logging
import math
from collections.abc import Iterable, Mapping
from os import PathLike
from pathlib import Path

import attrs
import numpy as np

from framemos.dsp import AudioBuffer, rms

log = logging.getLogger(__name__)

ALIGNMENT_HEADER = ("onset", "offset", "label", "class")
DURATION_TOLERANCE = 1e-3


class SegmentClass(enum.StrEnum):
    FRICATIVE = "fricative"
    VOWEL = "vowel"
    VOICED = "voiced"
    PITCHED = "pitched"
    OTHER = "other"


class AlignmentParseError(ValueError):
    def __init__(self, path: str | PathLike, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@attrs.frozen(order=True)
class SegmentAnnotation:
    onset: float
    offset: float
    label: str = attrs.field(order=False)
    klass: SegmentClass = attrs.field(converter=SegmentClass, order=False)

    def __attrs_post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"Segment onset must be >= 0, not {self.onset}")
        if not self.offset > self.onset:
            raise ValueError(
                f"Segment offset {self.offset} must be after onset {self.onset}"
            )

    @property
    def duration(self) -> float:
        return self.offset - self.onset


def _merge(segments: Iterable[SegmentAnnotation]) -> list[SegmentAnnotation]:
    "Merge overlapping segments of one class. Touching segments stay separate."
    merged: list[SegmentAnnotation] = []
    for seg in sorted(segments):
        if merged and seg.onset < merged[-1].offset:
            prev = merged[-1]
            label = prev.label if seg.label in prev.label.split("+") else f"{prev.label}+{seg.label}"
            merged[-1] = SegmentAnnotation(
                prev.onset, max(prev.offset, seg.offset), label, prev.klass
            )
        else:
            merged.append(seg)
    return merged


def normalize_segments(segments: Iterable[SegmentAnnotation]) -> tuple[SegmentAnnotation, ...]:
    "Sort by onset and merge overlaps within each class."
    by_class: dict[SegmentClass, list[SegmentAnnotation]] = {}
    for seg in segments:
        by_class.setdefault(seg.klass, []).append(seg)
    out = [s for segs in by_class.values() for s in _merge(segs)]
    return tuple(sorted(out, key=lambda s: (s.onset, s.offset, s.klass)))


@attrs.frozen
class AlignmentTrack:
    utterance_id: str
    duration: float
    segments: tuple[SegmentAnnotation, ...] = attrs.field(
        converter=normalize_segments, factory=tuple
    )

    def __attrs_post_init__(self) -> None:
        for seg in self.segments:
            if seg.offset > self.duration + DURATION_TOLERANCE:
                raise ValueError(
                    f"{self.utterance_id}: segment {seg.label!r} ends at {seg.offset}s, "
                    f"after the utterance end ({self.duration}s)"
                )

    def of_class(self, klass: SegmentClass) -> list[SegmentAnnotation]:
        return [s for s in self.segments if s.klass == klass]

    def has_class(self, klass: SegmentClass) -> bool:
        return any(s.klass == klass for s in self.segments)


# ARPAbet, stress digits stripped before lookup
DEFAULT_PHONE_MAP: Mapping[str, SegmentClass] = {
    **{
        p: SegmentClass.FRICATIVE
        for p in ("F", "V", "TH", "DH", "S", "Z", "SH", "ZH", "HH")
    },
    **{
        p: SegmentClass.VOWEL
        for p in (
            "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER",
            "EY", "IH", "IY", "OW", "OY", "UH", "UW",
        )
    },
}


def load_phone_map(path: str | PathLike) -> dict[str, SegmentClass]:
    "Read a ``label<TAB>class`` phone-class mapping file."
    mapping: dict[str, SegmentClass] = {}
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise AlignmentParseError(path, lineno, f"expected 2 columns, got {len(row)}")
            label, klass = row
            try:
                mapping[label.strip().upper()] = SegmentClass(klass.strip())
            except ValueError:
                raise AlignmentParseError(path, lineno, f"unknown class {klass!r}") from None
    return mapping


def phone_class(label: str, phone_map: Mapping[str, SegmentClass] = DEFAULT_PHONE_MAP) -> SegmentClass:
    return phone_map.get(label.strip().upper().rstrip("012"), SegmentClass.OTHER)


def parse_alignment(
    path: str | PathLike,
    utterance_id: str | None = None,
    duration: float | None = None,
    phone_map: Mapping[str, SegmentClass] = DEFAULT_PHONE_MAP,
) -> AlignmentTrack:
    """
    Parse an alignment TSV into a validated, sorted, per-class merged track.

    ``duration`` should come from the audio; when omitted, the last segment
    offset is used.
    """
    path = Path(path)
    segments: list[SegmentAnnotation] = []
    with open(path, newline="") as f:
        reader = csv.reader(f, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ALIGNMENT_HEADER:
            raise AlignmentParseError(
                path, 1, f"expected header {ALIGNMENT_HEADER!r}, got {header!r}"
            )

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise AlignmentParseError(path, lineno, f"expected 4 columns, got {len(row)}")
            onset_s, offset_s, label, klass_s = (cell.strip() for cell in row)
            try:
                onset, offset = float(onset_s), float(offset_s)
            except ValueError:
                raise AlignmentParseError(
                    path, lineno, f"onset/offset must be numbers, got {onset_s!r}, {offset_s!r}"
                ) from None
            if not (math.isfinite(onset) and math.isfinite(offset)):
                raise AlignmentParseError(path, lineno, "onset/offset must be finite")
            if offset <= onset:
                raise AlignmentParseError(
                    path, lineno, f"offset {offset} must be greater than onset {onset}"
                )
            if onset < 0:
                raise AlignmentParseError(path, lineno, f"negative onset {onset}")

            if klass_s == "-":
                klass = phone_class(label, phone_map)
            else:
                try:
                    klass = SegmentClass(klass_s)
                except ValueError:
                    raise AlignmentParseError(
                        path, lineno, f"unknown class {klass_s!r}"
                    ) from None
            segments.append(SegmentAnnotation(onset, offset, label, klass))

    if duration is None:
        duration = max((s.offset for s in segments), default=0.0)
    try:
        return AlignmentTrack(utterance_id or path.stem, duration, segments)
    except ValueError as e:
        raise AlignmentParseError(path, 0, str(e)) from e


def write_alignment(track: AlignmentTrack, path: str | PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(ALIGNMENT_HEADER)
        for seg in track.segments:
            writer.writerow([repr(seg.onset), repr(seg.offset), seg.label, seg.klass.value])


VOICING_WINDOW = 0.025
VOICING_HOP = 0.010
VOICING_MIN_F0 = 60.0
VOICING_MAX_F0 = 400.0
VOICING_THRESHOLD = 0.45
VOICING_RELATIVE_RMS = 0.05
VOICING_MIN_DURATION = 0.050


def autocorrelation_f0(
    frame: np.ndarray,
    sample_rate: int,
    min_f0: float = VOICING_MIN_F0,
    max_f0: float = VOICING_MAX_F0,
) -> tuple[float, float]:
    """
    Estimate F0 of one frame from its normalized autocorrelation.

    Returns ``(f0, peak)`` where ``peak`` is the highest normalized
    autocorrelation in the lag range. The first local maximum within 90% of that
    peak is taken as the period, which avoids octave-down errors.
    """
    min_lag = max(1, int(sample_rate / max_f0))
    max_lag = min(int(math.ceil(sample_rate / min_f0)), frame.shape[0] - 2)
    if max_lag < min_lag:
        return 0.0, 0.0

    n = frame.shape[0]
    lags = np.arange(min_lag, max_lag + 1)
    # raw[lag] = frame[:-lag] . frame[lag:]
    raw = np.correlate(frame, frame, mode="full")[n - 1 :]
    energy = np.concatenate([[0.0], np.cumsum(np.square(frame))])
    head = energy[n - lags]
    tail = energy[n] - energy[lags]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    corr = np.divide(raw[lags], denom, out=np.zeros(lags.shape[0]), where=denom > 0)

    peak = float(corr.max())
    if peak <= 0:
        return 0.0, peak
    local_max = np.r_[corr[:-1] >= corr[1:], True] & np.r_[True, corr[1:] >= corr[:-1]]
    best = int(np.flatnonzero(local_max & (corr >= 0.9 * peak))[0])
    return sample_rate / float(lags[best]), peak


def detect_voicing(buffer: AudioBuffer) -> list[SegmentAnnotation]:
    """
    Fallback voicing/pitch detector for utterances whose alignment lacks voicing.

    25 ms frames every 10 ms are voiced when their autocorrelation peak (60-400 Hz
    lags) exceeds 0.45 and their RMS exceeds 5% of the utterance RMS. Runs shorter
    than 50 ms are dropped. Each voiced segment is also emitted as ``pitched``
    with its median F0 as the label.
    """
    sr = buffer.sample_rate
    if sr < 8000:
        raise ValueError(f"Voicing detection needs >= 8 kHz audio, got {sr} Hz")

    x = buffer.samples
    utterance_rms = rms(x)
    win, hop = int(round(VOICING_WINDOW * sr)), int(round(VOICING_HOP * sr))
    if utterance_rms == 0 or len(x) < win:
        return []

    n_frames = 1 + (len(x) - win) // hop
    voiced = np.zeros(n_frames, dtype=bool)
    f0s = np.zeros(n_frames)
    for i in range(n_frames):
        frame = x[i * hop : i * hop + win]
        if rms(frame) <= VOICING_RELATIVE_RMS * utterance_rms:
            continue
        f0, peak = autocorrelation_f0(frame, sr)
        if peak > VOICING_THRESHOLD:
            voiced[i] = True
            f0s[i] = f0

    segments: list[SegmentAnnotation] = []
    edges = np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]]))
    for start, stop in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        onset = start * hop / sr
        offset = min(((stop - 1) * hop + win) / sr, buffer.duration)
        if offset - onset < VOICING_MIN_DURATION:
            continue
        median_f0 = float(np.median(f0s[start:stop]))
        segments.append(SegmentAnnotation(onset, offset, "voiced", SegmentClass.VOICED))
        segments.append(
            SegmentAnnotation(onset, offset, f"f0={median_f0:.1f}", SegmentClass.PITCHED)
        )
    return segments


def with_detected_voicing(track: AlignmentTrack, buffer: AudioBuffer) -> AlignmentTrack:
    "Add detected voiced/pitched segments when the alignment carries none."
    if track.has_class(SegmentClass.VOICED) or track.has_class(SegmentClass.PITCHED):
        return track
    detected = detect_voicing(buffer)
    log.debug("%s: no voicing in alignment, detected %d segments", track.utterance_id, len(detected))
    return attrs.evolve(track, segments=track.segments + tuple(detected))


def eligible_onsets(
    track: AlignmentTrack, klass: SegmentClass, min_duration: float = 0.0
) -> list[tuple[float, float]]:
    """
    ``(onset, time remaining until utterance end)`` for every segment of ``klass``
    whose onset leaves at least ``min_duration`` before the end.
    """
    return [
        (seg.onset, track.duration - seg.onset)
        for seg in track.of_class(klass)
        if seg.onset <= track.duration - min_duration
    ]

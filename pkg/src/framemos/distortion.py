"""
Localized artificial distortions with ground-truth annotations.

For each utterance one distortion class is sampled, then up to ``n_areas``
non-overlapping areas whose onsets coincide with segments satisfying that class's
constraint (fricatives for pink noise, voiced segments for random phase, pitched
segments for pitch shifting, vowels for stretching). Injection applies the class
to every area; vowel stretching changes the utterance length, which the record's
timeline map accounts for.
"""

import csv
import enum
import logging
from collections.abc import Iterable, Sequence
from os import PathLike

import numpy as np
import pydantic

from framemos.alignment import AlignmentTrack, SegmentClass, eligible_onsets
from framemos.dsp import (
    AudioBuffer,
    clip_unit,
    phase_randomize,
    pink_noise,
    pitch_shift,
    time_stretch,
)

log = logging.getLogger(__name__)

GROUND_TRUTH_HEADER = ("utterance_id", "onset", "offset", "class", "seed")

MIN_AREA_SECONDS = 0.05
MAX_PLACEMENT_ATTEMPTS = 100
PITCH_RATIOS = (2 ** (1 / 4), 2 ** (1 / 2))


class DistortionKind(enum.StrEnum):
    PINK_NOISE = "PinkNoise"
    RANDOM_PHASE = "RandomPhase"
    PITCH_SHIFT = "PitchShift"
    VOWEL_STRETCH = "VowelStretch"


CONSTRAINT: dict[DistortionKind, SegmentClass] = {
    DistortionKind.PINK_NOISE: SegmentClass.FRICATIVE,
    DistortionKind.RANDOM_PHASE: SegmentClass.VOICED,
    DistortionKind.PITCH_SHIFT: SegmentClass.PITCHED,
    DistortionKind.VOWEL_STRETCH: SegmentClass.VOWEL,
}


class NoEligibleClassError(ValueError):
    pass


class PlanMismatchError(ValueError):
    pass


Interval = tuple[float, float]


class DistortionClass(pydantic.BaseModel):
    """
    The sampled class and its parameters.

    ``factors`` holds one value per area: the frequency ratio for PitchShift
    (below 1 shifts down) or the duration factor for VowelStretch.
    """

    model_config = pydantic.ConfigDict(frozen=True)

    variant: DistortionKind
    sigma: float | None = None
    factors: tuple[float, ...] = ()

    @pydantic.model_validator(mode="after")
    def _check_params(self) -> "DistortionClass":
        match self.variant:
            case DistortionKind.PINK_NOISE:
                if self.sigma is None or self.sigma <= 0:
                    raise ValueError("PinkNoise needs a positive sigma")
            case DistortionKind.PITCH_SHIFT:
                if not all(0.5 <= r <= 2 for r in self.factors):
                    raise ValueError(f"Pitch ratios must be in [0.5, 2], not {self.factors}")
            case DistortionKind.VOWEL_STRETCH:
                if not all(0.25 <= f <= 4 for f in self.factors):
                    raise ValueError(f"Stretch factors must be in [0.25, 4], not {self.factors}")
        return self


class TimelineMap(pydantic.BaseModel):
    """
    Piecewise-linear map from pre-injection to post-injection time (seconds).

    Beyond the last knot, time shifts by the final offset (slope 1).
    """

    model_config = pydantic.ConfigDict(frozen=True)

    pre: tuple[float, ...] = (0.0,)
    post: tuple[float, ...] = (0.0,)

    @pydantic.model_validator(mode="after")
    def _check_knots(self) -> "TimelineMap":
        if len(self.pre) != len(self.post) or not self.pre:
            raise ValueError("Timeline knots must be non-empty and paired")
        if np.any(np.diff(self.pre) < 0) or np.any(np.diff(self.post) < 0):
            raise ValueError("Timeline knots must be non-decreasing")
        return self

    @property
    def is_identity(self) -> bool:
        return all(a == b for a, b in zip(self.pre, self.post))

    def forward(self, t: float | np.ndarray) -> float | np.ndarray:
        return _piecewise(t, self.pre, self.post)

    def inverse(self, t: float | np.ndarray) -> float | np.ndarray:
        return _piecewise(t, self.post, self.pre)


def _piecewise(t, xs: Sequence[float], ys: Sequence[float]):
    t_arr = np.asarray(t, dtype=np.float64)
    out = np.interp(t_arr, xs, ys)
    out = np.where(t_arr > xs[-1], t_arr - xs[-1] + ys[-1], out)
    out = np.where(t_arr < xs[0], t_arr - xs[0] + ys[0], out)
    return float(out) if out.ndim == 0 else out


class DistortionRecord(pydantic.BaseModel):
    "Full provenance of the distortion injected into one utterance."

    model_config = pydantic.ConfigDict(frozen=True)

    utterance_id: str
    klass: DistortionClass
    events: tuple[Interval, ...]
    source_events: tuple[Interval, ...]
    seed: int
    timeline: TimelineMap = TimelineMap()
    requested_areas: int = 3
    duration: float
    post_duration: float
    clipped_samples: int = 0

    @pydantic.model_validator(mode="after")
    def _check_events(self) -> "DistortionRecord":
        for events in (self.events, self.source_events):
            for on, off in events:
                if not off > on:
                    raise ValueError(f"Event ({on}, {off}) is empty or reversed")
            for (_, off), (on, _) in zip(events, events[1:]):
                if on < off:
                    raise ValueError("Events must be sorted and non-overlapping")
        if len(self.events) != len(self.source_events):
            raise ValueError("events and source_events must pair up")
        if len(self.klass.factors) not in (0, len(self.source_events)):
            raise ValueError("Need one class factor per event")
        return self

    @property
    def n_events(self) -> int:
        return len(self.events)


def _stretch_timeline(
    source_events: Sequence[Interval], new_lengths: Sequence[float]
) -> tuple[TimelineMap, tuple[Interval, ...]]:
    "Timeline and post-injection events when area i becomes ``new_lengths[i]`` long."
    pre, post = [0.0], [0.0]
    shift = 0.0
    events = []
    for (on, off), new_len in zip(source_events, new_lengths):
        pre += [on, off]
        post += [on + shift, on + shift + new_len]
        events.append((on + shift, on + shift + new_len))
        shift += new_len - (off - on)
    return TimelineMap(pre=tuple(pre), post=tuple(post)), tuple(events)


def _overlaps(a: Interval, others: Iterable[Interval]) -> bool:
    return any(a[0] < b[1] and b[0] < a[1] for b in others)


def sample_plan(
    track: AlignmentTrack,
    seed: int,
    n_areas: int = 3,
    duration_range: tuple[float, float] = (0.4, 0.7),
    classes: Sequence[DistortionKind] = tuple(DistortionKind),
    sigma: float = 0.1,
    pitch_ratios: Sequence[float] = PITCH_RATIOS,
    stretch_range: tuple[float, float] = (2.0, 3.0),
) -> DistortionRecord:
    """
    Plan a distortion for one utterance without touching audio.

    The class is drawn uniformly among classes with at least ``n_areas``
    eligible onsets (falling back to classes with at least one). Onsets are drawn
    without replacement; an area that collides with an earlier one is re-drawn up
    to 100 times, then dropped.
    """
    if n_areas < 1:
        raise ValueError(f"n_areas must be >= 1, not {n_areas}")
    lo, hi = duration_range
    if not 0 < lo <= hi:
        raise ValueError(f"Invalid duration range {duration_range}")

    rng = np.random.default_rng(seed)
    eligible = {
        kind: eligible_onsets(track, CONSTRAINT[kind], min_duration=MIN_AREA_SECONDS)
        for kind in classes
    }
    candidates = [k for k in classes if len(eligible[k]) >= n_areas]
    if not candidates:
        candidates = [k for k in classes if eligible[k]]
        if not candidates:
            raise NoEligibleClassError(
                f"{track.utterance_id}: no segments satisfy the constraints of any of "
                f"{[str(k) for k in classes]}"
            )
        log.info(
            "%s: no class has %d eligible onsets, sampling among %s",
            track.utterance_id, n_areas, [str(k) for k in candidates],
        )
    kind = candidates[int(rng.integers(len(candidates)))]

    pool = [on for on, _ in eligible[kind]]
    areas: list[Interval] = []
    for _ in range(min(n_areas, len(pool))):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            if not pool:
                break
            onset = pool[int(rng.integers(len(pool)))]
            offset = min(onset + float(rng.uniform(lo, hi)), track.duration)
            if not _overlaps((onset, offset), areas):
                areas.append((onset, offset))
                pool.remove(onset)
                break
        else:
            log.info("%s: dropped an area that kept colliding", track.utterance_id)
    areas.sort()

    match kind:
        case DistortionKind.PINK_NOISE:
            klass = DistortionClass(variant=kind, sigma=sigma)
        case DistortionKind.RANDOM_PHASE:
            klass = DistortionClass(variant=kind)
        case DistortionKind.PITCH_SHIFT:
            ratios = []
            for _ in areas:
                ratio = float(pitch_ratios[int(rng.integers(len(pitch_ratios)))])
                ratios.append(ratio if rng.integers(2) else 1 / ratio)
            klass = DistortionClass(variant=kind, factors=tuple(ratios))
        case DistortionKind.VOWEL_STRETCH:
            factors = tuple(float(rng.uniform(*stretch_range)) for _ in areas)
            klass = DistortionClass(variant=kind, factors=factors)

    if kind == DistortionKind.VOWEL_STRETCH:
        timeline, events = _stretch_timeline(
            areas, [(off - on) * f for (on, off), f in zip(areas, klass.factors)]
        )
    else:
        timeline, events = TimelineMap(), tuple(areas)

    return DistortionRecord(
        utterance_id=track.utterance_id,
        klass=klass,
        events=events,
        source_events=tuple(areas),
        seed=seed,
        timeline=timeline,
        requested_areas=n_areas,
        duration=track.duration,
        post_duration=float(timeline.forward(track.duration)),
    )


def fade_envelope(n: int, fade: int) -> np.ndarray:
    "Trapezoid: linear ramp up over ``fade`` samples, flat, ramp down."
    env = np.ones(n)
    fade = min(fade, n // 2)
    if fade > 0:
        ramp = (np.arange(fade) + 0.5) / fade
        env[:fade] = ramp
        env[n - fade :] = ramp[::-1]
    return env


def crossfade(original: np.ndarray, processed: np.ndarray, fade: int) -> np.ndarray:
    """
    Blend the first and last ``fade`` samples of ``processed`` with the
    corresponding ends of ``original`` so the splice has no discontinuity.
    """
    fade = min(fade, original.shape[0] // 2, processed.shape[0] // 2)
    out = processed.copy()
    if fade == 0:
        return out
    ramp = (np.arange(fade) + 0.5) / fade
    out[:fade] = original[:fade] * (1 - ramp) + processed[:fade] * ramp
    out[-fade:] = processed[-fade:] * (1 - ramp) + original[-fade:] * ramp
    return out


def _pad_process(segment: AudioBuffer, min_len: int, func) -> np.ndarray:
    "Run ``func`` on ``segment`` zero-padded to at least ``min_len``, trimmed back."
    n = len(segment)
    if n >= min_len:
        return func(segment).samples
    padded = segment.with_samples(np.pad(segment.samples, (0, min_len - n)))
    return func(padded).samples[:n]


def _render_area(
    klass: DistortionClass,
    segment: AudioBuffer,
    index: int,
    area_seed: np.random.SeedSequence,
    fade: int,
    fft_size: int,
) -> np.ndarray:
    x = segment.samples
    match klass.variant:
        case DistortionKind.PINK_NOISE:
            assert klass.sigma is not None
            if len(x) < 2:
                return x.copy()
            noise = pink_noise(len(x), klass.sigma, area_seed, segment.sample_rate)
            return x + fade_envelope(len(x), fade) * noise.samples
        case DistortionKind.RANDOM_PHASE:
            processed = _pad_process(
                segment, fft_size, lambda s: phase_randomize(s, area_seed, fft_size=fft_size)
            )
        case DistortionKind.PITCH_SHIFT:
            ratio = klass.factors[index]
            processed = _pad_process(
                segment, fft_size, lambda s: pitch_shift(s, ratio, fft_size=fft_size)
            )
        case DistortionKind.VOWEL_STRETCH:
            processed = time_stretch(segment, klass.factors[index], fft_size=fft_size).samples
    return crossfade(x, processed, fade)


def inject(
    buffer: AudioBuffer,
    plan: DistortionRecord,
    fade_ms: float = 10.0,
    fft_size: int = 1024,
) -> tuple[AudioBuffer, DistortionRecord]:
    """
    Apply a planned distortion to the (loudness-normalized) utterance.

    Samples outside the areas are copied unchanged (shifted, for vowel
    stretching). Returns the distorted audio and the record with the final,
    sample-exact post-injection events and timeline.
    """
    sr = buffer.sample_rate
    n = len(buffer)
    fade = int(round(fade_ms * sr / 1000))

    bounds = []
    for on, off in plan.source_events:
        start, stop = int(round(on * sr)), int(round(off * sr))
        if stop > n or start < 0:
            raise PlanMismatchError(
                f"{plan.utterance_id}: area ({on}, {off}) lies outside the {n / sr:.3f}s buffer"
            )
        bounds.append((start, stop))

    area_seeds = np.random.SeedSequence(plan.seed).spawn(len(bounds))
    pieces: list[np.ndarray] = []
    new_lengths: list[float] = []
    cursor = 0
    for i, (start, stop) in enumerate(bounds):
        pieces.append(buffer.samples[cursor:start])
        area = _render_area(
            plan.klass,
            buffer.with_samples(buffer.samples[start:stop]),
            i,
            area_seeds[i],
            fade,
            fft_size,
        )
        pieces.append(area)
        new_lengths.append(area.shape[0] / sr)
        cursor = stop
    pieces.append(buffer.samples[cursor:])

    samples, n_clipped = clip_unit(np.concatenate(pieces))
    if n_clipped:
        log.warning("%s: clipped %d samples after injection", plan.utterance_id, n_clipped)

    source_events = tuple((start / sr, stop / sr) for start, stop in bounds)
    if plan.klass.variant == DistortionKind.VOWEL_STRETCH:
        timeline, events = _stretch_timeline(source_events, new_lengths)
    else:
        timeline, events = TimelineMap(), source_events

    record = plan.model_copy(
        update=dict(
            events=events,
            source_events=source_events,
            timeline=timeline,
            duration=n / sr,
            post_duration=samples.shape[0] / sr,
            clipped_samples=n_clipped,
        )
    )
    return AudioBuffer(samples, sr), DistortionRecord.model_validate(record.model_dump())


def warp_reference(reference: AudioBuffer, record: DistortionRecord) -> AudioBuffer:
    """
    Map a pre-injection reference onto the post-injection timeline.

    Identity for length-preserving classes; for stretched areas every output
    sample takes the nearest source sample through the inverse timeline.
    """
    if record.timeline.is_identity:
        return reference
    sr = reference.sample_rate
    n_out = int(round(record.post_duration * sr))
    src_times = record.timeline.inverse(np.arange(n_out) / sr)
    idx = np.clip(np.rint(np.asarray(src_times) * sr).astype(np.int64), 0, len(reference) - 1)
    return reference.with_samples(reference.samples[idx])


def write_ground_truth(records: Iterable[DistortionRecord], path: str | PathLike) -> None:
    "One row per post-injection event, sorted by utterance then onset."
    rows = sorted(
        (rec.utterance_id, on, off, str(rec.klass.variant), rec.seed)
        for rec in records
        for on, off in rec.events
    )
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(GROUND_TRUTH_HEADER)
        for utt, on, off, klass, seed in rows:
            writer.writerow([utt, repr(float(on)), repr(float(off)), klass, seed])


_RECORDS = pydantic.TypeAdapter(list[DistortionRecord])


def write_records(records: Sequence[DistortionRecord], path: str | PathLike) -> None:
    with open(path, "wb") as f:
        f.write(_RECORDS.dump_json(list(records), indent=2))


def read_records(path: str | PathLike) -> list[DistortionRecord]:
    with open(path, "rb") as f:
        return _RECORDS.validate_json(f.read())

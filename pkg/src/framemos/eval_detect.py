"""
Distortion-localization metrics.

Frame scores are turned into a *detection curve* (higher = more distorted): model
scores in [1, 5] enter as ``6 − score``, human soft scores as marks / ratings.
Thresholding the (median-filtered) curve gives detected events; each is matched to
the ground truth with an intersection-based criterion:

* a detection is *valid* when the fraction of it covered by ground truth is at
  least ρ_DTC, and a *false alarm* when it does not touch any ground truth at all;
* a ground-truth event is a *hit* when the fraction of it covered by valid
  detections is at least ρ_GTC (default: ρ_DTC), otherwise a *miss*.

Sweeping the threshold gives an ROC curve of hit rate against false alarms per
hour; the AUC is the normalized area under its upper envelope up to ``e_max``.
"""

import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from os import PathLike

import attrs
import numpy as np
import xarray as xr

from framemos.scoring import (
    DEFAULT_FRAME_RATE,
    FrameScoreSequence,
    median_filter,
    median_smooth,
    median_window,
)

log = logging.getLogger(__name__)

DEFAULT_MEDFILT_LENGTHS = tuple(range(0, 501, 50))
DEFAULT_E_MAX = 100.0
SCORE_FLIP = 6.0


@attrs.frozen(order=True)
class DetectionEvent:
    utterance_id: str
    onset: float
    offset: float
    confidence: float = attrs.field(default=math.inf, order=False)

    def __attrs_post_init__(self) -> None:
        if not self.offset > self.onset:
            raise ValueError(f"Event offset {self.offset} must be after onset {self.onset}")


@attrs.frozen(order=True)
class GroundTruthEvent:
    utterance_id: str
    onset: float
    offset: float
    klass: str = attrs.field(default="", order=False)
    seed: int | None = attrs.field(default=None, order=False)

    def __attrs_post_init__(self) -> None:
        if not self.offset > self.onset:
            raise ValueError(f"Event offset {self.offset} must be after onset {self.onset}")


GroundTruth = Mapping[str, Sequence[GroundTruthEvent]]


@attrs.frozen
class DetectionOutcome:
    "Hits, misses and false alarms at one operating point; adds up across utterances."

    threshold: float = math.nan
    hits: int = 0
    misses: int = 0
    false_alarms: int = 0
    total_gt: int = 0
    total_audio_seconds: float = 0.0

    def __attrs_post_init__(self) -> None:
        assert self.hits + self.misses == self.total_gt, self
        assert min(self.hits, self.misses, self.false_alarms) >= 0, self

    def __add__(self, other: "DetectionOutcome") -> "DetectionOutcome":
        return DetectionOutcome(
            self.threshold if math.isnan(other.threshold) else other.threshold,
            self.hits + other.hits,
            self.misses + other.misses,
            self.false_alarms + other.false_alarms,
            self.total_gt + other.total_gt,
            self.total_audio_seconds + other.total_audio_seconds,
        )

    @property
    def tpr(self) -> float:
        return self.hits / self.total_gt if self.total_gt else 0.0

    @property
    def efpr(self) -> float:
        "False alarms per hour of audio."
        hours = self.total_audio_seconds / 3600
        return self.false_alarms / hours if hours else 0.0

    @property
    def precision(self) -> float:
        denom = self.hits + self.false_alarms
        return self.hits / denom if denom else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.tpr
        return 2 * p * r / (p + r) if p + r else 0.0


@attrs.frozen(eq=False)
class RocCurve:
    """
    Operating points on the upper envelope, sorted by efpr, and the normalized
    AUC up to ``e_max``.
    """

    efpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    e_max: float
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.efpr.tolist(), self.tpr.tolist()))


# Detection curves
##################


@attrs.frozen(eq=False)
class DetectionCurve:
    "Per-frame detection values, higher meaning more likely distorted."

    utterance_id: str
    values: np.ndarray = attrs.field(converter=lambda v: np.asarray(v, dtype=np.float64))
    frame_rate: float = DEFAULT_FRAME_RATE

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.frame_rate

    @classmethod
    def from_scores(cls, scores: FrameScoreSequence) -> "DetectionCurve":
        return cls(scores.utterance_id, SCORE_FLIP - scores.scores, scores.frame_rate)

    def filtered(self, length_ms: float) -> "DetectionCurve":
        window = median_window(length_ms, self.frame_rate)
        if window == 1:
            return self
        return attrs.evolve(self, values=median_smooth(self.values, window))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    "``[start, stop)`` frame ranges of maximal runs of True."
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def extract_events(
    scores: FrameScoreSequence, medfilt_ms: float, threshold: float
) -> list[DetectionEvent]:
    """
    Events where the median-filtered score is at or below ``threshold``.

    Onsets and offsets fall on frame boundaries. An event's confidence is the
    largest detection-curve value (``6 − score``) inside it: the event persists,
    shrinking, for every curve threshold up to that value.
    """
    filtered = median_filter(scores, medfilt_ms).scores
    return [
        DetectionEvent(
            scores.utterance_id,
            start / scores.frame_rate,
            stop / scores.frame_rate,
            SCORE_FLIP - float(filtered[start:stop].min()),
        )
        for start, stop in _runs(filtered <= threshold)
    ]


def curve_events(curve: DetectionCurve, threshold: float) -> list[DetectionEvent]:
    "Events where a (filtered) detection curve is at or above ``threshold``."
    values = curve.values
    return [
        DetectionEvent(
            curve.utterance_id,
            start / curve.frame_rate,
            stop / curve.frame_rate,
            float(values[start:stop].max()),
        )
        for start, stop in _runs(values >= threshold)
    ]


# Matching
##########


def _bounds(event) -> tuple[float, float]:
    if hasattr(event, "onset"):
        return event.onset, event.offset
    onset, offset = event
    return onset, offset


def _overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    return max(0.0, min(a[1], b[1]) - max(a[0], b[0]))


def _check_rho(name: str, rho: float) -> None:
    if not 0 <= rho <= 1:
        raise ValueError(f"{name} must be in [0, 1], not {rho}")


def intersection_match(
    detections: Iterable,
    ground_truth: Iterable,
    rho_dtc: float,
    rho_gtc: float | None = None,
    threshold: float = math.nan,
    audio_seconds: float = 0.0,
) -> DetectionOutcome:
    """
    Classify one utterance's detections against its ground truth.

    Events may be `DetectionEvent`/`GroundTruthEvent` instances or plain
    ``(onset, offset)`` pairs; each list must be non-overlapping. Detections that
    overlap ground truth but fall short of ``rho_dtc`` are neither valid nor false
    alarms.
    """
    rho_gtc = rho_dtc if rho_gtc is None else rho_gtc
    _check_rho("rho_dtc", rho_dtc)
    _check_rho("rho_gtc", rho_gtc)

    dets = [_bounds(d) for d in detections]
    gts = [_bounds(g) for g in ground_truth]

    valid = []
    false_alarms = 0
    for det in dets:
        inter = sum(_overlap(det, gt) for gt in gts)
        if inter > 0 and inter / (det[1] - det[0]) >= rho_dtc:
            valid.append(det)
        elif inter == 0:
            false_alarms += 1

    hits = 0
    for gt in gts:
        inter = sum(_overlap(gt, det) for det in valid)
        if inter > 0 and inter / (gt[1] - gt[0]) >= rho_gtc:
            hits += 1

    return DetectionOutcome(
        threshold=threshold,
        hits=hits,
        misses=len(gts) - hits,
        false_alarms=false_alarms,
        total_gt=len(gts),
        total_audio_seconds=audio_seconds,
    )


def _check_coverage(curves: Mapping[str, DetectionCurve], ground_truth: GroundTruth) -> None:
    missing = sorted(set(ground_truth) - set(curves))
    if missing:
        raise KeyError(f"No detection curve for ground-truth utterances: {missing}")


def outcome_at(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    threshold: float,
    rho_dtc: float,
    rho_gtc: float | None = None,
) -> DetectionOutcome:
    "Aggregate outcome over utterances of already-filtered curves at one threshold."
    _check_coverage(curves, ground_truth)
    total = DetectionOutcome(threshold=threshold)
    for utt, curve in sorted(curves.items()):
        total += intersection_match(
            curve_events(curve, threshold),
            ground_truth.get(utt, ()),
            rho_dtc,
            rho_gtc,
            threshold,
            curve.duration,
        )
    return total


def _utterance_steps(
    curve: DetectionCurve, gt: Sequence[GroundTruthEvent], rho_dtc: float, rho_gtc: float | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Outcomes at every distinct curve value of one utterance, ascending.

    For any threshold θ, the detections are those at the smallest distinct value
    ≥ θ, so these steps determine the outcome at every threshold.
    """
    levels = np.unique(curve.values)
    hits = np.empty(levels.shape[0], dtype=np.int64)
    fas = np.empty(levels.shape[0], dtype=np.int64)
    for i, level in enumerate(levels):
        outcome = intersection_match(curve_events(curve, level), gt, rho_dtc, rho_gtc)
        hits[i], fas[i] = outcome.hits, outcome.false_alarms
    return levels, hits, fas


def operating_points(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    rho_dtc: float,
    rho_gtc: float | None = None,
) -> list[DetectionOutcome]:
    """
    Aggregate outcomes at every distinct curve value over all utterances, plus a
    +∞ threshold with no detections; ordered by decreasing threshold.
    """
    _check_coverage(curves, ground_truth)
    steps = {
        utt: _utterance_steps(curve, ground_truth.get(utt, ()), rho_dtc, rho_gtc)
        for utt, curve in sorted(curves.items())
    }
    thresholds = np.unique(np.concatenate([s[0] for s in steps.values()] + [[np.inf]]))[::-1]

    total_gt = sum(len(ground_truth.get(utt, ())) for utt in curves)
    audio_seconds = math.fsum(curve.duration for _, curve in sorted(curves.items()))
    hits = np.zeros(thresholds.shape[0], dtype=np.int64)
    fas = np.zeros(thresholds.shape[0], dtype=np.int64)
    for levels, utt_hits, utt_fas in steps.values():
        idx = np.searchsorted(levels, thresholds, side="left")
        active = idx < levels.shape[0]
        hits[active] += utt_hits[idx[active]]
        fas[active] += utt_fas[idx[active]]

    return [
        DetectionOutcome(float(t), int(h), total_gt - int(h), int(f), total_gt, audio_seconds)
        for t, h, f in zip(thresholds, hits, fas)
    ]


def roc_from_outcomes(outcomes: Sequence[DetectionOutcome], e_max: float = DEFAULT_E_MAX) -> RocCurve:
    """
    Keep the operating points that raise the best tpr so far, in order of efpr.

    Every kept point is a real (threshold, efpr, tpr) triple; dropped points lie
    under the envelope and don't change the area.
    """
    if e_max <= 0:
        raise ValueError(f"e_max must be positive, not {e_max}")
    efpr = np.array([o.efpr for o in outcomes])
    tpr = np.array([o.tpr for o in outcomes])
    thresholds = np.array([o.threshold for o in outcomes])

    order = np.lexsort((tpr, efpr))
    efpr, tpr, thresholds = efpr[order], tpr[order], thresholds[order]
    keep = np.ones(efpr.shape[0], dtype=bool)
    keep[1:] = tpr[1:] > np.maximum.accumulate(tpr)[:-1]
    efpr, tpr, thresholds = efpr[keep], tpr[keep], thresholds[keep]

    right = np.minimum(np.append(efpr[1:], e_max), e_max)
    widths = np.clip(right - efpr, 0.0, None)
    auc = float(np.sum(tpr * widths) / e_max)
    return RocCurve(efpr, tpr, thresholds, e_max, min(max(auc, 0.0), 1.0))


def roc_auc(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    medfilt_ms: float = 0.0,
    rho_dtc: float = 0.5,
    rho_gtc: float | None = None,
    e_max: float = DEFAULT_E_MAX,
) -> RocCurve:
    "ROC over all thresholds of the median-filtered curves, with normalized AUC."
    if not any(ground_truth.get(utt) for utt in curves):
        raise ValueError("No ground-truth events to evaluate against")
    filtered = {utt: c.filtered(medfilt_ms) for utt, c in curves.items()}
    return roc_from_outcomes(operating_points(filtered, ground_truth, rho_dtc, rho_gtc), e_max)


def auc_table(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    rhos: Sequence[float] = (0.5, 0.7),
    lengths: Sequence[float] = DEFAULT_MEDFILT_LENGTHS,
    e_max: float = DEFAULT_E_MAX,
    rho_gtc: float | None = None,
) -> xr.DataArray:
    "AUC for every (ρ_DTC, median-filter length) pair."
    lengths = sorted(lengths)
    values = np.array(
        [
            [roc_auc(curves, ground_truth, ms, rho, rho_gtc, e_max).auc for ms in lengths]
            for rho in rhos
        ]
    )
    return xr.DataArray(
        values,
        dims=("rho_dtc", "medfilt_ms"),
        coords={"rho_dtc": list(rhos), "medfilt_ms": lengths},
        name="auc",
    )


def sweep_median_filter(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    rho_dtc: float = 0.5,
    lengths: Sequence[float] = DEFAULT_MEDFILT_LENGTHS,
    e_max: float = DEFAULT_E_MAX,
    rho_gtc: float | None = None,
) -> tuple[float, xr.DataArray]:
    "Best median-filter length by AUC (ties go to the shortest) and the full table."
    if not curves:
        raise ValueError("Empty development set")
    table = auc_table(curves, ground_truth, (rho_dtc,), lengths, e_max, rho_gtc).sel(rho_dtc=rho_dtc)
    best = table.medfilt_ms.values[int(np.argmax(table.values))]
    return float(best), table


def f1_at_threshold(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    threshold: float,
    medfilt_ms: float = 0.0,
    rho_dtc: float = 0.5,
    rho_gtc: float | None = None,
) -> float:
    "F1 of detections where the filtered curve is at or above ``threshold``."
    filtered = {utt: c.filtered(medfilt_ms) for utt, c in curves.items()}
    return outcome_at(filtered, ground_truth, threshold, rho_dtc, rho_gtc).f1


def best_f1_threshold(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    medfilt_ms: float = 0.0,
    rho_dtc: float = 0.5,
    rho_gtc: float | None = None,
) -> tuple[float, float]:
    "``(threshold, F1)`` maximizing F1; ties go to the higher threshold."
    filtered = {utt: c.filtered(medfilt_ms) for utt, c in curves.items()}
    points = operating_points(filtered, ground_truth, rho_dtc, rho_gtc)
    best = max(points, key=lambda o: o.f1)
    return best.threshold, best.f1


# Human annotations
###################


def soft_scores_from_annotations(
    counts: Sequence[int] | np.ndarray,
    ratings: int,
    utterance_id: str = "",
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> DetectionCurve:
    "Fraction of raters who marked each frame as distorted."
    if ratings <= 0:
        raise ValueError(f"{utterance_id}: number of ratings must be positive, not {ratings}")
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ValueError(f"{utterance_id}: mark counts must be >= 0")
    if np.any(counts > ratings):
        raise ValueError(
            f"{utterance_id}: a frame has {int(counts.max())} marks but only {ratings} ratings"
        )
    return DetectionCurve(utterance_id, counts / ratings, frame_rate)


def read_annotation_counts(
    path: str | PathLike,
    ratings_path: str | PathLike,
    n_frames: Mapping[str, int] | None = None,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> dict[str, DetectionCurve]:
    """
    Read ``utterance_id, frame_index, count`` rows plus a ``utterance_id, ratings``
    sidecar into soft-score curves. Frames without a row have zero marks; the
    frame count defaults to one past the highest index seen.
    """
    ratings: dict[str, int] = {}
    with open(ratings_path, newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            ratings[row["utterance_id"]] = int(row["ratings"])

    marks: dict[str, dict[int, int]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            utt = row["utterance_id"]
            frame = int(row["frame_index"])
            if frame < 0:
                raise ValueError(f"{path}: negative frame index for {utt}")
            marks.setdefault(utt, {})[frame] = int(row["count"])

    unknown = sorted(set(marks) - set(ratings))
    if unknown:
        raise KeyError(f"{ratings_path}: no rating count for {unknown}")

    curves = {}
    for utt, n_ratings in sorted(ratings.items()):
        frames = marks.get(utt, {})
        n = (n_frames or {}).get(utt, max(frames, default=-1) + 1)
        counts = np.zeros(n, dtype=np.int64)
        for frame, count in frames.items():
            if frame >= n:
                raise ValueError(f"{path}: frame {frame} of {utt} is past its {n} frames")
            counts[frame] = count
        curves[utt] = soft_scores_from_annotations(counts, n_ratings, utt, frame_rate)
    return curves


# Ground truth
##############


def read_ground_truth(path: str | PathLike) -> dict[str, list[GroundTruthEvent]]:
    "Parse the distortion ground-truth TSV into per-utterance sorted events."
    events: dict[str, list[GroundTruthEvent]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f, delimiter="\t")
        expected = {"utterance_id", "onset", "offset", "class"}
        if reader.fieldnames is None or not expected <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns {sorted(expected)}, got {reader.fieldnames}")
        for row in reader:
            seed = row.get("seed")
            event = GroundTruthEvent(
                row["utterance_id"],
                float(row["onset"]),
                float(row["offset"]),
                row["class"],
                int(seed) if seed not in (None, "") else None,
            )
            events.setdefault(event.utterance_id, []).append(event)
    return {utt: sorted(evs) for utt, evs in sorted(events.items())}


def classes_of(ground_truth: GroundTruth) -> dict[str, list[str]]:
    "Utterance ids per distortion class."
    by_class: dict[str, list[str]] = {}
    for utt, events in sorted(ground_truth.items()):
        for klass in sorted({e.klass for e in events}):
            by_class.setdefault(klass, []).append(utt)
    return by_class


def class_breakdown(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    medfilt_ms: float = 0.0,
    rho_dtc: float = 0.5,
    e_max: float = DEFAULT_E_MAX,
    rho_gtc: float | None = None,
) -> dict[str, float]:
    "AUC restricted to the utterances of each distortion class."
    return {
        klass: roc_auc(
            {u: curves[u] for u in utts},
            {u: ground_truth[u] for u in utts},
            medfilt_ms,
            rho_dtc,
            rho_gtc,
            e_max,
        ).auc
        for klass, utts in classes_of(ground_truth).items()
    }


# Cross-validation
##################


@attrs.frozen
class FoldResult:
    fold: int
    test_ids: tuple[str, ...]
    medfilt_ms: float
    threshold: float
    test_auc: float | None
    test_f1: float


def assign_folds(utterance_ids: Iterable[str], k: int) -> list[list[str]]:
    "Round-robin over sorted ids, so fold sizes differ by at most one."
    ids = sorted(utterance_ids)
    if k < 2:
        raise ValueError(f"Need k >= 2 folds to hold out data, not {k}")
    if len(ids) < k:
        raise ValueError(f"{len(ids)} utterances is fewer than {k} folds")
    return [ids[i::k] for i in range(k)]


def kfold_tune(
    curves: Mapping[str, DetectionCurve],
    ground_truth: GroundTruth,
    k: int = 5,
    lengths: Sequence[float] = DEFAULT_MEDFILT_LENGTHS,
    rho_dtc: float = 0.5,
    e_max: float = DEFAULT_E_MAX,
    rho_gtc: float | None = None,
) -> list[FoldResult]:
    """
    Tune the median-filter length and the F1 threshold on k − 1 folds, then
    evaluate AUC and F1 on the held-out fold.
    """
    folds = assign_folds(curves, k)
    results = []
    for i, test_ids in enumerate(folds):
        train_ids = [u for j, fold in enumerate(folds) if j != i for u in fold]
        train = {u: curves[u] for u in train_ids}
        train_gt = {u: ground_truth[u] for u in train_ids if u in ground_truth}
        test = {u: curves[u] for u in test_ids}
        test_gt = {u: ground_truth[u] for u in test_ids if u in ground_truth}

        best_ms, _ = sweep_median_filter(train, train_gt, rho_dtc, lengths, e_max, rho_gtc)
        threshold, _ = best_f1_threshold(train, train_gt, best_ms, rho_dtc, rho_gtc)

        if any(test_gt.values()):
            test_auc: float | None = roc_auc(test, test_gt, best_ms, rho_dtc, rho_gtc, e_max).auc
        else:
            log.warning("Fold %d has no ground-truth events; its AUC is undefined", i)
            test_auc = None
        test_f1 = f1_at_threshold(test, test_gt, threshold, best_ms, rho_dtc, rho_gtc)
        results.append(FoldResult(i, tuple(test_ids), best_ms, threshold, test_auc, test_f1))
    return results


def fold_means(results: Sequence[FoldResult]) -> tuple[float | None, float]:
    aucs = [r.test_auc for r in results if r.test_auc is not None]
    mean_auc = float(np.mean(aucs)) if aucs else None
    return mean_auc, float(np.mean([r.test_f1 for r in results]))

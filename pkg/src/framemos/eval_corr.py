"""
Agreement between predicted and true MOS, local-global coupling of frame scores,
and reference implementations of the training losses.
"""

import csv
import itertools
import logging
import math
from collections.abc import Iterable, Sequence
from os import PathLike

import attrs
import numpy as np
import pydantic
import scipy.stats

from framemos.scoring import FrameScoreSequence

log = logging.getLogger(__name__)

RATINGS_HEADER = ("utterance_id", "system_id", "true_mos", "predicted_mos")
DEFAULT_COLLAR = 0.2


class UndefinedCorrelationError(ValueError):
    pass


def _non_empty(instance, attribute, value: str) -> None:
    if not value:
        raise ValueError(f"{attribute.name} must not be empty")


@attrs.frozen
class RatedUtterance:
    utterance_id: str = attrs.field(validator=_non_empty)
    system_id: str = attrs.field(validator=_non_empty)
    true_mos: float
    predicted_mos: float


# Utterance and system level agreement
######################################


def _pairs(true: Sequence[float], predicted: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(true, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"Need two equal-length 1-D sequences, got shapes {t.shape} and {p.shape}")
    return t, p


def _check_correlatable(t: np.ndarray, p: np.ndarray) -> None:
    if t.shape[0] < 2:
        raise UndefinedCorrelationError(f"Need at least 2 pairs for a correlation, got {t.shape[0]}")
    if np.ptp(t) == 0 or np.ptp(p) == 0:
        raise UndefinedCorrelationError("Correlation is undefined for a constant sequence")


def mse(true: Sequence[float], predicted: Sequence[float]) -> float:
    t, p = _pairs(true, predicted)
    if t.shape[0] == 0:
        raise ValueError("Cannot compute the MSE of zero pairs")
    return float(np.mean(np.square(p - t)))


def lcc(true: Sequence[float], predicted: Sequence[float]) -> float:
    "Pearson's linear correlation coefficient."
    t, p = _pairs(true, predicted)
    _check_correlatable(t, p)
    return float(scipy.stats.pearsonr(t, p).statistic)


def srcc(true: Sequence[float], predicted: Sequence[float]) -> float:
    "Spearman's rank correlation coefficient; ties get average ranks."
    t, p = _pairs(true, predicted)
    _check_correlatable(t, p)
    return float(scipy.stats.spearmanr(t, p).statistic)


class CorrelationMetrics(pydantic.BaseModel):
    "MSE, LCC and SRCC; a correlation that is undefined is ``None``."

    n: int
    mse: float
    lcc: float | None
    srcc: float | None


def _metrics(true: np.ndarray, predicted: np.ndarray) -> CorrelationMetrics:
    def maybe(func) -> float | None:
        try:
            return func(true, predicted)
        except UndefinedCorrelationError as e:
            log.warning("%s undefined: %s", func.__name__.upper(), e)
            return None

    return CorrelationMetrics(
        n=int(true.shape[0]), mse=mse(true, predicted), lcc=maybe(lcc), srcc=maybe(srcc)
    )


def utterance_level(ratings: Sequence[RatedUtterance]) -> CorrelationMetrics:
    return _metrics(
        np.array([r.true_mos for r in ratings]), np.array([r.predicted_mos for r in ratings])
    )


def system_means(ratings: Iterable[RatedUtterance]) -> dict[str, tuple[float, float]]:
    "Mean ``(true, predicted)`` MOS per system."
    by_system: dict[str, list[RatedUtterance]] = {}
    for r in ratings:
        by_system.setdefault(r.system_id, []).append(r)
    return {
        system: (
            float(np.mean([r.true_mos for r in rs])),
            float(np.mean([r.predicted_mos for r in rs])),
        )
        for system, rs in sorted(by_system.items())
    }


def system_level(ratings: Sequence[RatedUtterance]) -> CorrelationMetrics:
    "Utterance-level metrics applied to per-system mean MOS."
    means = system_means(ratings)
    if len(means) < 2:
        raise ValueError(f"System-level metrics need at least 2 systems, got {len(means)}")
    true, predicted = map(np.array, zip(*means.values()))
    return _metrics(true, predicted)


def read_ratings(path: str | PathLike) -> list[RatedUtterance]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RATINGS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(RATINGS_HEADER)}, got {reader.fieldnames}")
        ratings = []
        for lineno, row in enumerate(reader, start=2):
            try:
                ratings.append(
                    RatedUtterance(
                        row["utterance_id"],
                        row["system_id"],
                        float(row["true_mos"]),
                        float(row["predicted_mos"]),
                    )
                )
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from e
    return ratings


def write_ratings(ratings: Iterable[RatedUtterance], path: str | PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for r in ratings:
            writer.writerow([r.utterance_id, r.system_id, repr(r.true_mos), repr(r.predicted_mos)])


# Local-global coupling
#######################


def dtw_cost(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Minimal total ``|a_i − b_j|`` over boundary-anchored monotone alignments
    with unit-weight horizontal, vertical and diagonal steps.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("DTW needs two non-empty sequences")

    n, m = a.shape[0], b.shape[0]
    acc = np.full((n + 1, m + 1), math.inf)
    acc[0, 0] = 0.0
    # cells on one anti-diagonal only depend on the two before it
    for d in range(2, n + m + 1):
        i = np.arange(max(1, d - m), min(n, d - 1) + 1)
        j = d - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = np.abs(a[i - 1] - b[j - 1]) + best
    return float(acc[n, m])


class CouplingReport(pydantic.BaseModel):
    """
    Agreement of the unaffected left/right subsequences of one utterance's scores
    before and after a distortion. Sides too short to compare are ``None``.
    """

    utterance_id: str = ""
    lpcc: float | None
    rpcc: float | None
    ldtw: float | None
    rdtw: float | None
    left_frames: int
    right_frames: int
    collar: float = DEFAULT_COLLAR


def _pcc(a: np.ndarray, b: np.ndarray) -> float | None:
    if a.shape[0] < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(scipy.stats.pearsonr(a, b).statistic)


def _side(a: np.ndarray, b: np.ndarray) -> tuple[float | None, float | None, int]:
    n = min(a.shape[0], b.shape[0])
    a, b = a[:n], b[:n]
    if n < 2:
        return None, None, n
    return _pcc(a, b), dtw_cost(a, b), n


def coupling_analysis(
    before: FrameScoreSequence,
    after: FrameScoreSequence,
    events: Sequence[tuple[float, float]],
    collar: float = DEFAULT_COLLAR,
    before_events: Sequence[tuple[float, float]] | None = None,
) -> CouplingReport:
    """
    Compare scores left of the first event and right of the last, excluding a
    collar around them.

    ``events`` are in the ``after`` timeline; ``before_events`` (default: the
    same) locate them in the ``before`` timeline when the distortion changed the
    utterance length.
    """
    if before.frame_rate != after.frame_rate:
        raise ValueError(
            f"Frame rates differ ({before.frame_rate} vs {after.frame_rate})"
        )
    if not events:
        raise ValueError("Coupling analysis needs at least one distortion event")
    before_events = events if before_events is None else before_events
    fr = before.frame_rate

    def left(seq: FrameScoreSequence, evs) -> np.ndarray:
        stop = math.floor((min(on for on, _ in evs) - collar) * fr)
        return seq.scores[: max(stop, 0)]

    def right(seq: FrameScoreSequence, evs) -> np.ndarray:
        start = math.ceil((max(off for _, off in evs) + collar) * fr)
        return seq.scores[min(start, len(seq)) :]

    lpcc, ldtw, n_left = _side(left(before, before_events), left(after, events))
    rpcc, rdtw, n_right = _side(right(before, before_events), right(after, events))
    return CouplingReport(
        utterance_id=after.utterance_id,
        lpcc=lpcc,
        rpcc=rpcc,
        ldtw=ldtw,
        rdtw=rdtw,
        left_frames=n_left,
        right_frames=n_right,
        collar=collar,
    )


class CouplingSummary(pydantic.BaseModel):
    "Means over utterances; missing values are excluded and counted."

    n_utterances: int
    lpcc: float | None
    rpcc: float | None
    ldtw: float | None
    rdtw: float | None
    missing_left: int
    missing_right: int


def summarize_coupling(reports: Sequence[CouplingReport]) -> CouplingSummary:
    def mean(field: str) -> float | None:
        values = [getattr(r, field) for r in reports if getattr(r, field) is not None]
        return float(np.mean(values)) if values else None

    return CouplingSummary(
        n_utterances=len(reports),
        lpcc=mean("lpcc"),
        rpcc=mean("rpcc"),
        ldtw=mean("ldtw"),
        rdtw=mean("rdtw"),
        missing_left=sum(r.ldtw is None for r in reports),
        missing_right=sum(r.rdtw is None for r in reports),
    )


# Losses
########


def clipped_mse_loss(pred: float, target: float, tau: float = 0.1) -> float:
    "Squared error, zeroed while ``|pred − target|`` is at most ``tau``."
    diff = pred - target
    return diff * diff if abs(diff) > tau else 0.0


def contrastive_loss(
    pred_i: float, pred_j: float, target_i: float, target_j: float, alpha: float = 0.1
) -> float:
    "Hinge on how far the predicted difference strays from the true difference."
    return max(0.0, abs((pred_i - pred_j) - (target_i - target_j)) - alpha)


def utterance_loss(
    preds: Sequence[float], targets: Sequence[float], tau: float = 0.1, alpha: float = 0.1
) -> float:
    "Batch loss: mean clipped MSE plus mean contrastive loss over all pairs."
    if len(preds) != len(targets) or not preds:
        raise ValueError("Need equally many, and at least one, predictions and targets")
    regression = math.fsum(clipped_mse_loss(p, t, tau) for p, t in zip(preds, targets)) / len(preds)
    pairs = list(itertools.combinations(range(len(preds)), 2))
    if not pairs:
        return regression
    contrast = math.fsum(
        contrastive_loss(preds[i], preds[j], targets[i], targets[j], alpha) for i, j in pairs
    ) / len(pairs)
    return regression + contrast

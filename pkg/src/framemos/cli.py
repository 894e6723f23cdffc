"""
Command-line entry point: ``framemos distort | score | eval-detect | eval-coupling | eval-corr``.

Exit codes: 0 on success, 1 when any utterance failed or the inputs don't match
up (details in ``skipped.tsv`` or on stderr), 2 for usage and config errors.
"""

import csv
import enum
import logging
import os
from collections import Counter
from pathlib import Path
from typing import Annotated, Callable, List, Optional

import attrs
import numpy as np
import pydantic
import typer

from framemos import cache
from framemos.alignment import parse_alignment, with_detected_voicing
from framemos.config import DistortionConfig, RunConfig, ScoringConfig
from framemos.distortion import (
    DistortionRecord,
    inject,
    read_records,
    sample_plan,
    warp_reference,
    write_ground_truth,
    write_records,
)
from framemos.dsp import AudioBuffer, loudness_normalize, read_wav, write_wav
from framemos.eval_corr import (
    RatedUtterance,
    UndefinedCorrelationError,
    coupling_analysis,
    read_ratings,
    summarize_coupling,
    system_level,
    system_means,
    utterance_level,
    write_ratings,
)
from framemos.eval_detect import (
    DetectionCurve,
    GroundTruthEvent,
    auc_table,
    best_f1_threshold,
    class_breakdown,
    fold_means,
    kfold_tune,
    read_annotation_counts,
    read_ground_truth,
    roc_auc,
    sweep_median_filter,
)
from framemos.hash import utterance_seed
from framemos.manifest import ManifestError, ManifestRow, read_manifest, write_manifest
from framemos.models import (
    AucCell,
    BestFilter,
    CorrReport,
    CouplingRunReport,
    DetectReport,
    DistortSummary,
    FoldReport,
    KFoldReport,
    RocPoint,
    VersionStamp,
)
from framemos.scoring import (
    ConstantScorer,
    FileScorer,
    FrameScorer,
    FrameScoreSequence,
    GlobalCouplingScorer,
    SpectralReferenceScorer,
    pool_utterance_score,
    read_frame_scores,
    score_file_suffix,
    score_utterance,
    sidecar_path,
    write_frame_scores,
)
from framemos.workers import run_parallel

log = logging.getLogger(__name__)

cli = typer.Typer(
    no_args_is_help=True,
    help="Frame-level speech quality scores: inject distortions, score, and evaluate.",
)


# Shared options
################

ConfigOption = Annotated[
    Optional[Path],
    typer.Option("--config", help="RunConfig JSON file", exists=True, dir_okay=False),
]
OutputOption = Annotated[
    Optional[Path],
    typer.Option(
        "--output-dir", "-o", envvar="FRAMEMOS_OUTPUT_DIR", help="Where to write outputs"
    ),
]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Global seed")]
JobsOption = Annotated[
    Optional[int], typer.Option("--jobs", "-j", min=1, help="Worker processes")
]
CacheOption = Annotated[
    Optional[Path], typer.Option("--cache-dir", help="Memoize scoring on disk here")
]


@cli.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(config_path: Path | None, **overrides) -> RunConfig:
    try:
        return RunConfig.load(config_path).with_overrides(**overrides)
    except (pydantic.ValidationError, ValueError) as e:
        raise typer.BadParameter(str(e), param_hint="--config") from e


def _prepare_output(config: RunConfig, command: str) -> Path:
    if config.output_dir is None:
        raise typer.BadParameter(
            "No output directory: pass --output-dir or set FRAMEMOS_OUTPUT_DIR",
            param_hint="--output-dir",
        )
    out = config.output_dir.absolute()
    out.mkdir(parents=True, exist_ok=True)
    # the output location itself is left out so reruns elsewhere are byte-identical
    _atomic_text(out / "run_config.json", config.model_dump_json(indent=2, exclude={"output_dir", "jobs"}) + "\n")
    _atomic_text(out / "version.json", VersionStamp(command=command).model_dump_json(indent=2) + "\n")
    return out


def _read_manifest(path: Path) -> list[ManifestRow]:
    try:
        return read_manifest(path)
    except ManifestError as e:
        raise typer.BadParameter(str(e), param_hint="MANIFEST") from e


# Atomic writes
###############


def _atomic(path: Path, write: Callable[[Path], None]) -> None:
    "Write via a temp file in the same directory, then rename into place."
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write(tmp)
        if sidecar_path(tmp).exists():
            os.replace(sidecar_path(tmp), sidecar_path(path))
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _atomic_text(path: Path, text: str) -> None:
    _atomic(path, lambda tmp: tmp.write_text(text))


def _atomic_csv(path: Path, header: list[str], rows: list[list[object]], delimiter: str = ",") -> None:
    def write(tmp: Path) -> None:
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

    _atomic(path, write)


def _write_skipped(out: Path, skipped: list[tuple[str, str]]) -> None:
    _atomic_csv(out / "skipped.tsv", ["utterance_id", "reason"], sorted(skipped), "\t")


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _finite_or_none(value: float) -> float | None:
    return float(value) if np.isfinite(value) else None


# distort
#########


@attrs.frozen
class DistortTask:
    row: ManifestRow
    seed: int
    config: DistortionConfig
    wav_out: Path
    reference_out: Path


@attrs.frozen
class DistortResult:
    utterance_id: str
    record: DistortionRecord | None = None
    reference_path: Path | None = None
    error: str | None = None


def _distort_one(task: DistortTask) -> DistortResult:
    row, cfg = task.row, task.config
    try:
        if row.alignment_path is None:
            raise ValueError("no alignment_path in manifest")
        audio = read_wav(row.wav_path)
        track = parse_alignment(row.alignment_path, row.utterance_id, audio.duration)
        track = with_detected_voicing(track, audio)
        audio = loudness_normalize(audio, cfg.target_dbfs)

        plan = sample_plan(
            track,
            task.seed,
            n_areas=cfg.n_areas,
            duration_range=cfg.duration_range,
            classes=cfg.classes,
            sigma=cfg.sigma,
            pitch_ratios=cfg.pitch_ratios,
            stretch_range=cfg.stretch_range,
        )
        distorted, record = inject(audio, plan, fade_ms=cfg.fade_ms, fft_size=cfg.fft_size)
        _atomic(task.wav_out, lambda tmp: write_wav(distorted, tmp, cfg.bit_depth))

        reference_path = row.reference_path
        if not record.timeline.is_identity:
            source = read_wav(row.reference_path) if row.reference_path else audio
            warped = warp_reference(source, record)
            _atomic(task.reference_out, lambda tmp: write_wav(warped, tmp, "32f"))
            reference_path = task.reference_out
        return DistortResult(row.utterance_id, record, reference_path)
    except (ValueError, OSError) as e:
        log.warning("%s: skipped: %s", row.utterance_id, e)
        return DistortResult(row.utterance_id, error=f"{type(e).__name__}: {e}")


def _mirrored(row: ManifestRow, manifest_dir: Path, out: Path, suffix: str) -> Path:
    "Output path mirroring the input's location under the manifest directory."
    try:
        rel = row.wav_path.absolute().relative_to(manifest_dir.absolute())
    except ValueError:
        rel = Path(row.wav_path.name)
    return out / rel.parent / (rel.name.removesuffix(rel.suffix) + suffix)


@cli.command()
def distort(
    manifest: Annotated[Path, typer.Argument(exists=True, dir_okay=False, help="Corpus manifest TSV")],
    config_path: ConfigOption = None,
    output_dir: OutputOption = None,
    seed: SeedOption = None,
    jobs: JobsOption = None,
    n_areas: Annotated[Optional[int], typer.Option(min=1, help="Distortion areas per utterance")] = None,
):
    """
    Inject localized artificial distortions and write ground truth.

    Writes ``<name>.distorted.wav`` per utterance (mirroring the input layout),
    ``ground_truth.tsv``, ``records.json``, ``distorted_manifest.tsv`` and
    ``skipped.tsv``.
    """
    config = _load_config(
        config_path,
        output_dir=output_dir,
        global_seed=seed,
        jobs=jobs,
        distortion={"n_areas": n_areas},
    )
    out = _prepare_output(config, "distort")
    rows = _read_manifest(manifest)

    tasks = [
        DistortTask(
            row,
            utterance_seed(config.global_seed, row.utterance_id),
            config.distortion,
            _mirrored(row, manifest.parent, out, ".distorted.wav"),
            _mirrored(row, manifest.parent, out, ".reference.wav"),
        )
        for row in rows
    ]
    results = run_parallel(_distort_one, tasks, config.jobs)

    records = [r.record for r in results if r.record is not None]
    skipped = [(r.utterance_id, r.error) for r in results if r.error is not None]
    distorted_rows = [
        attrs.evolve(task.row, wav_path=task.wav_out, reference_path=result.reference_path, score_path=None)
        for task, result in zip(tasks, results)
        if result.record is not None
    ]

    _atomic(out / "ground_truth.tsv", lambda tmp: write_ground_truth(records, tmp))
    _atomic(out / "records.json", lambda tmp: write_records(records, tmp))
    _atomic(out / "distorted_manifest.tsv", lambda tmp: write_manifest(distorted_rows, tmp))
    _write_skipped(out, skipped)

    class_counts = Counter(str(r.klass.variant) for r in records)
    summary = DistortSummary(
        n_utterances=len(rows),
        n_distorted=len(records),
        n_skipped=len(skipped),
        class_counts=dict(sorted(class_counts.items())),
        n_events=sum(r.n_events for r in records),
        clipped_samples=sum(r.clipped_samples for r in records),
    )
    _atomic_text(out / "distort_summary.json", summary.model_dump_json(indent=2) + "\n")

    typer.echo(f"Distorted {len(records)} of {len(rows)} utterances into {out}")
    for klass, count in sorted(class_counts.items()):
        typer.echo(f"  {klass:<14} {count}")
    if skipped:
        typer.echo(f"Skipped {len(skipped)} utterances, see {out / 'skipped.tsv'}", err=True)
        raise typer.Exit(code=1)


# score
#######


class ScorerKind(str, enum.Enum):
    file = "file"
    spectral_ref = "spectral-ref"
    constant = "constant"
    global_coupling = "global-coupling"


@attrs.frozen
class ScoreTask:
    row: ManifestRow
    scorer: ScorerKind
    config: ScoringConfig
    constant: float
    score_out: Path
    cache_dir: Path | None


@attrs.frozen
class ScoreResult:
    utterance_id: str
    pooled: float | None = None
    error: str | None = None


def _build_scorer(task: ScoreTask) -> FrameScorer:
    fr = task.config.frame_rate
    match task.scorer:
        case ScorerKind.constant:
            return ConstantScorer(task.constant, fr)
        case ScorerKind.spectral_ref:
            return SpectralReferenceScorer(fr)
        case ScorerKind.global_coupling:
            return GlobalCouplingScorer(SpectralReferenceScorer(fr))
        case ScorerKind.file:
            assert task.row.score_path is not None
            seq = read_frame_scores(task.row.score_path, task.row.utterance_id, fr)
            return FileScorer({task.row.utterance_id: seq}, fr)


_cached_score_utterance = cache.cache(score_utterance)


def _score_one(task: ScoreTask) -> ScoreResult:
    row, cfg = task.row, task.config
    if task.cache_dir is not None and not cache.enabled():
        cache.configure(task.cache_dir)
    try:
        audio = read_wav(row.wav_path)
        reference = None
        if task.scorer in (ScorerKind.spectral_ref, ScorerKind.global_coupling):
            assert row.reference_path is not None
            reference = read_wav(row.reference_path)
        cfg.check_sample_rate(audio.sample_rate)

        scores = _cached_score_utterance(
            audio,
            _build_scorer(task),
            fusion=cfg.fusion(),
            clip=cfg.clip,
            reference=reference,
            utterance_id=row.utterance_id,
            gamma=cfg.gamma,
            beta=cfg.beta,
            target_dbfs=cfg.target_dbfs,
        )
        _atomic(task.score_out, lambda tmp: write_frame_scores(scores, tmp, cfg.frame_format))
        return ScoreResult(row.utterance_id, pool_utterance_score(scores))
    except (ValueError, OSError, KeyError) as e:
        log.warning("%s: skipped: %s", row.utterance_id, e)
        return ScoreResult(row.utterance_id, error=f"{type(e).__name__}: {e}")


@cli.command()
def score(
    manifest: Annotated[Path, typer.Argument(exists=True, dir_okay=False, help="Corpus manifest TSV")],
    scorer: Annotated[ScorerKind, typer.Option(help="Frame scorer to run")] = ScorerKind.spectral_ref,
    config_path: ConfigOption = None,
    output_dir: OutputOption = None,
    jobs: JobsOption = None,
    cache_dir: CacheOption = None,
    chunked: Annotated[
        Optional[bool], typer.Option("--chunked/--unchunked", help="Multi-resolution chunking")
    ] = None,
    clip: Annotated[Optional[bool], typer.Option("--clip/--no-clip", help="Range-clip into [1, 5]")] = None,
    constant: Annotated[float, typer.Option(help="Raw value for the constant scorer")] = 0.0,
):
    """
    Compute frame-level scores for every utterance.

    Writes one frame-score file per utterance under ``scores/``, pooled utterance
    scores in ``utterance_scores.csv``, ``scores_manifest.tsv`` for the evaluation
    commands and, when the manifest has ``system_id`` and ``true_mos``, ``ratings.csv``.
    """
    config = _load_config(
        config_path,
        output_dir=output_dir,
        jobs=jobs,
        scoring={"chunked": chunked, "clip": clip},
    )
    out = _prepare_output(config, "score")
    rows = _read_manifest(manifest)

    needed = {
        ScorerKind.file: ("wav_path", "score_path"),
        ScorerKind.spectral_ref: ("wav_path", "reference_path"),
        ScorerKind.global_coupling: ("wav_path", "reference_path"),
        ScorerKind.constant: ("wav_path",),
    }[scorer]
    problems = []
    for row in rows:
        for column in needed:
            if getattr(row, column) is None:
                problems.append(f"{row.utterance_id}: no {column}")
        problems += [f"{row.utterance_id}: missing file {p}" for p in row.missing_files(*needed)]
    if problems:
        for problem in problems:
            typer.echo(problem, err=True)
        typer.echo(f"{len(problems)} missing inputs; nothing was scored", err=True)
        raise typer.Exit(code=1)

    suffix = score_file_suffix(config.scoring.frame_format)
    tasks = [
        ScoreTask(
            row, scorer, config.scoring, constant,
            out / "scores" / f"{row.utterance_id}{suffix}", cache_dir,
        )
        for row in rows
    ]
    if cache_dir is not None:
        cache.configure(cache_dir)
    results = run_parallel(_score_one, tasks, config.jobs)

    scored = {r.utterance_id: r.pooled for r in results if r.pooled is not None}
    skipped = [(r.utterance_id, r.error) for r in results if r.error is not None]
    _atomic_csv(
        out / "utterance_scores.csv",
        ["utterance_id", "pooled_score"],
        [[utt, _fmt(pooled)] for utt, pooled in sorted(scored.items())],
    )
    score_rows = [
        attrs.evolve(task.row, score_path=task.score_out)
        for task in tasks
        if task.row.utterance_id in scored
    ]
    _atomic(out / "scores_manifest.tsv", lambda tmp: write_manifest(score_rows, tmp))

    rated = [r for r in rows if r.utterance_id in scored and r.system_id and r.true_mos is not None]
    if rated:
        ratings = [
            RatedUtterance(r.utterance_id, r.system_id, r.true_mos, scored[r.utterance_id])
            for r in rated
        ]
        _atomic(out / "ratings.csv", lambda tmp: write_ratings(ratings, tmp))
    _write_skipped(out, skipped)

    typer.echo(f"Scored {len(scored)} of {len(rows)} utterances into {out}")
    if scored:
        typer.echo(f"  mean pooled score {np.mean(list(scored.values())):.4f}")
    if skipped:
        typer.echo(f"Skipped {len(skipped)} utterances, see {out / 'skipped.tsv'}", err=True)
        raise typer.Exit(code=1)


# eval-detect
#############


def _score_paths(path: Path) -> dict[str, Path]:
    rows = _read_manifest(path)
    missing = [r.utterance_id for r in rows if r.score_path is None]
    if missing:
        raise typer.BadParameter(f"{path}: rows without score_path: {missing}", param_hint="--scores")
    return {r.utterance_id: r.score_path for r in rows}  # type: ignore


def _load_scores(paths: dict[str, Path], frame_rate: float) -> dict[str, FrameScoreSequence]:
    return {utt: read_frame_scores(p, utt, frame_rate) for utt, p in sorted(paths.items())}


def _report_mismatch(label: str, ids: list[str]) -> None:
    for utt in ids:
        typer.echo(f"{label}: {utt}", err=True)
    typer.echo(f"{len(ids)} utterances don't match up; nothing was evaluated", err=True)
    raise typer.Exit(code=1)


def _roc_points(roc) -> list[RocPoint]:
    return [
        RocPoint(efpr=float(e), tpr=float(t), threshold=_finite_or_none(th))
        for e, t, th in zip(roc.efpr, roc.tpr, roc.thresholds)
    ]


@cli.command("eval-detect")
def eval_detect(
    ground_truth: Annotated[Path, typer.Argument(exists=True, dir_okay=False, help="ground_truth.tsv")],
    scores: Annotated[
        Optional[Path], typer.Option(exists=True, dir_okay=False, help="Manifest with score_path per utterance")
    ] = None,
    annotations: Annotated[
        Optional[Path],
        typer.Option(exists=True, dir_okay=False, help="Annotation counts TSV (utterance_id, frame_index, count)"),
    ] = None,
    annotation_ratings: Annotated[
        Optional[Path], typer.Option(exists=True, dir_okay=False, help="Ratings per utterance for --annotations")
    ] = None,
    config_path: ConfigOption = None,
    output_dir: OutputOption = None,
    rho: Annotated[Optional[List[float]], typer.Option("--rho", help="ρ_DTC (repeatable)")] = None,
    medfilt: Annotated[
        Optional[List[float]], typer.Option("--medfilt", help="Median filter length in ms (repeatable)")
    ] = None,
    e_max: Annotated[Optional[float], typer.Option(help="ROC cap in false alarms per hour")] = None,
    kfold: Annotated[Optional[int], typer.Option(help="Cross-validate with k folds")] = None,
):
    """
    Distortion-localization AUC per ρ_DTC and median-filter length, best filter
    per ρ_DTC with ROC points, F1 and per-class AUC, and optionally k-fold results.
    """
    config = _load_config(
        config_path,
        output_dir=output_dir,
        detection={"rho_dtc": rho or None, "medfilt_lengths": medfilt or None, "e_max": e_max, "kfold": kfold},
    )
    det = config.detection
    out = _prepare_output(config, "eval-detect")
    gt = read_ground_truth(ground_truth)
    fr = config.scoring.frame_rate

    if (scores is None) == (annotations is None):
        raise typer.BadParameter("Pass exactly one of --scores and --annotations")
    if annotations is not None:
        if annotation_ratings is None:
            raise typer.BadParameter("--annotations needs --annotation-ratings")
        try:
            curves = read_annotation_counts(annotations, annotation_ratings, frame_rate=fr)
        except (KeyError, ValueError) as e:
            raise typer.BadParameter(str(e), param_hint="--annotations") from e
    else:
        assert scores is not None
        curves = {
            utt: DetectionCurve.from_scores(seq)
            for utt, seq in _load_scores(_score_paths(scores), fr).items()
        }

    missing = sorted(set(gt) - set(curves))
    if missing:
        _report_mismatch("no scores for ground-truth utterance", missing)
    extra = sorted(set(curves) - set(gt))
    if extra:
        log.warning("Ignoring %d scored utterances without ground truth: %s", len(extra), extra)
    curves = {utt: curves[utt] for utt in gt}

    table = auc_table(curves, gt, det.rho_dtc, det.medfilt_lengths, det.e_max, det.rho_gtc)
    best = []
    for rho_dtc in det.rho_dtc:
        best_ms, row = sweep_median_filter(
            curves, gt, rho_dtc, det.medfilt_lengths, det.e_max, det.rho_gtc
        )
        roc = roc_auc(curves, gt, best_ms, rho_dtc, det.rho_gtc, det.e_max)
        threshold, f1 = best_f1_threshold(curves, gt, best_ms, rho_dtc, det.rho_gtc)
        best.append(
            BestFilter(
                rho_dtc=rho_dtc,
                medfilt_ms=best_ms,
                auc=roc.auc,
                roc=_roc_points(roc),
                f1=f1,
                f1_threshold=_finite_or_none(threshold),
                per_class_auc=class_breakdown(curves, gt, best_ms, rho_dtc, det.e_max, det.rho_gtc),
            )
        )

    kfold_reports = None
    if det.kfold is not None:
        kfold_reports = []
        for rho_dtc in det.rho_dtc:
            folds = kfold_tune(
                curves, gt, det.kfold, det.medfilt_lengths, rho_dtc, det.e_max, det.rho_gtc
            )
            mean_auc, mean_f1 = fold_means(folds)
            kfold_reports.append(
                KFoldReport(
                    k=det.kfold,
                    rho_dtc=rho_dtc,
                    folds=[
                        FoldReport(
                            fold=f.fold,
                            test_ids=list(f.test_ids),
                            medfilt_ms=f.medfilt_ms,
                            threshold=_finite_or_none(f.threshold),
                            test_auc=f.test_auc,
                            test_f1=f.test_f1,
                        )
                        for f in folds
                    ],
                    mean_auc=mean_auc,
                    mean_f1=mean_f1,
                )
            )

    report = DetectReport(
        n_utterances=len(curves),
        n_events=sum(len(events) for events in gt.values()),
        total_audio_seconds=sum(c.duration for c in curves.values()),
        e_max=det.e_max,
        auc_table=[
            AucCell(rho_dtc=float(r), medfilt_ms=float(ms), auc=float(table.sel(rho_dtc=r, medfilt_ms=ms)))
            for r in table.rho_dtc.values
            for ms in table.medfilt_ms.values
        ],
        best=best,
        kfold=kfold_reports,
    )
    _atomic_text(out / "eval_detect.json", report.model_dump_json(indent=2) + "\n")
    _atomic_csv(
        out / "auc_table.csv",
        ["rho_dtc"] + [f"{ms:g}ms" for ms in table.medfilt_ms.values],
        [[_fmt(r)] + [_fmt(v) for v in table.sel(rho_dtc=r).values] for r in table.rho_dtc.values],
    )
    for b in best:
        _atomic_csv(
            out / f"roc_rho{b.rho_dtc:g}.csv",
            ["efpr", "tpr", "threshold"],
            [[_fmt(p.efpr), _fmt(p.tpr), _fmt(p.threshold)] for p in b.roc],
        )

    typer.echo(f"Evaluated {len(curves)} utterances, {report.n_events} events")
    for b in best:
        typer.echo(
            f"  rho_dtc={b.rho_dtc:g}: AUC {b.auc:.4f} with {b.medfilt_ms:g} ms median filter, F1 {b.f1:.4f}"
        )
    for k in kfold_reports or ():
        auc = "n/a" if k.mean_auc is None else f"{k.mean_auc:.4f}"
        typer.echo(f"  {k.k}-fold rho_dtc={k.rho_dtc:g}: mean AUC {auc}, mean F1 {k.mean_f1:.4f}")


# eval-coupling
###############


def _events_from(
    records: Path | None, ground_truth: Path | None
) -> dict[str, tuple[list[tuple[float, float]], list[tuple[float, float]]]]:
    "Per utterance: (post-injection events, pre-injection events)."
    if records is not None:
        return {
            r.utterance_id: (list(r.events), list(r.source_events)) for r in read_records(records)
        }
    assert ground_truth is not None
    events: dict[str, tuple[list, list]] = {}
    for utt, evs in read_ground_truth(ground_truth).items():
        spans = [(e.onset, e.offset) for e in evs]
        events[utt] = (spans, spans)
    return events


@cli.command("eval-coupling")
def eval_coupling(
    before: Annotated[Path, typer.Argument(exists=True, dir_okay=False, help="Scores manifest before distortion")],
    after: Annotated[Path, typer.Argument(exists=True, dir_okay=False, help="Scores manifest after distortion")],
    records: Annotated[
        Optional[Path], typer.Option(exists=True, dir_okay=False, help="records.json from distort")
    ] = None,
    ground_truth: Annotated[
        Optional[Path], typer.Option(exists=True, dir_okay=False, help="ground_truth.tsv (length-preserving distortions)")
    ] = None,
    config_path: ConfigOption = None,
    output_dir: OutputOption = None,
    collar: Annotated[Optional[float], typer.Option(min=0.0, help="Collar in seconds")] = None,
):
    """
    Local-global coupling: PCC and DTW cost between before/after scores left and
    right of the distortion, outside a collar. Also writes per-utterance score
    trajectories under ``trajectories/``.
    """
    if (records is None) == (ground_truth is None):
        raise typer.BadParameter("Pass exactly one of --records and --ground-truth")
    config = _load_config(config_path, output_dir=output_dir, coupling={"collar": collar})
    out = _prepare_output(config, "eval-coupling")
    fr = config.scoring.frame_rate

    before_paths, after_paths = _score_paths(before), _score_paths(after)
    events = _events_from(records, ground_truth)
    ids = set(before_paths) | set(after_paths)
    mismatched = sorted(
        ids.symmetric_difference(set(before_paths) & set(after_paths))
        | {u for u in set(before_paths) & set(after_paths) if u not in events}
    )
    if mismatched:
        _report_mismatch("not in both score sets and the distortion events", mismatched)

    before_scores = _load_scores(before_paths, fr)
    after_scores = _load_scores(after_paths, fr)
    reports = []
    for utt in sorted(before_paths):
        post, pre = events[utt]
        b, a = before_scores[utt], after_scores[utt]
        reports.append(coupling_analysis(b, a, post, config.coupling.collar, before_events=pre))
        n = max(len(b), len(a))
        _atomic_csv(
            out / "trajectories" / f"{utt}.csv",
            ["frame", "time", "before", "after"],
            [
                [
                    t,
                    repr(t / fr),
                    _fmt(b.scores[t]) if t < len(b) else "",
                    _fmt(a.scores[t]) if t < len(a) else "",
                ]
                for t in range(n)
            ],
        )

    summary = summarize_coupling(reports)
    report = CouplingRunReport(collar=config.coupling.collar, summary=summary, utterances=reports)
    _atomic_text(out / "eval_coupling.json", report.model_dump_json(indent=2) + "\n")
    _atomic_csv(
        out / "coupling.csv",
        ["utterance_id", "lpcc", "rpcc", "ldtw", "rdtw", "left_frames", "right_frames"],
        [
            [r.utterance_id, _fmt(r.lpcc), _fmt(r.rpcc), _fmt(r.ldtw), _fmt(r.rdtw), r.left_frames, r.right_frames]
            for r in reports
        ]
        + [["mean", _fmt(summary.lpcc), _fmt(summary.rpcc), _fmt(summary.ldtw), _fmt(summary.rdtw), "", ""]],
    )

    def show(v: float | None) -> str:
        return "n/a" if v is None else f"{v:.4f}"

    typer.echo(f"Coupling over {summary.n_utterances} utterances (collar {config.coupling.collar:g}s)")
    typer.echo(
        f"  lPCC {show(summary.lpcc)}  rPCC {show(summary.rpcc)}  "
        f"lDTW {show(summary.ldtw)}  rDTW {show(summary.rdtw)}"
    )
    if summary.missing_left or summary.missing_right:
        typer.echo(f"  missing sides: {summary.missing_left} left, {summary.missing_right} right")


# eval-corr
###########


@cli.command("eval-corr")
def eval_corr(
    ratings: Annotated[
        Path, typer.Argument(exists=True, dir_okay=False, help="CSV: utterance_id,system_id,true_mos,predicted_mos")
    ],
    config_path: ConfigOption = None,
    output_dir: OutputOption = None,
):
    "Utterance- and system-level MSE, LCC and SRCC."
    config = _load_config(config_path, output_dir=output_dir)
    out = _prepare_output(config, "eval-corr")
    try:
        rated = read_ratings(ratings)
    except ValueError as e:
        raise typer.BadParameter(str(e), param_hint="RATINGS") from e
    if not rated:
        raise typer.BadParameter(f"{ratings} has no rows", param_hint="RATINGS")

    n_systems = len(system_means(rated))
    system, reason = None, None
    try:
        system = system_level(rated)
    except (ValueError, UndefinedCorrelationError) as e:
        reason = str(e)
        log.warning("System-level metrics unavailable: %s", e)

    report = CorrReport(
        n_utterances=len(rated),
        n_systems=n_systems,
        utterance=utterance_level(rated),
        system=system,
        system_unavailable_reason=reason,
    )
    _atomic_text(out / "eval_corr.json", report.model_dump_json(indent=2) + "\n")

    def show(v: float | None) -> str:
        return "n/a" if v is None else f"{v:.4f}"

    for level, m in (("utterance", report.utterance), ("system", report.system)):
        if m is None:
            typer.echo(f"  {level:<9}  unavailable ({reason})")
        else:
            typer.echo(f"  {level:<9}  MSE {m.mse:.4f}  LCC {show(m.lcc)}  SRCC {show(m.srcc)}")


if __name__ == "__main__":
    cli()

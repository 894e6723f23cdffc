"""
End to end on synthetic speech: a frame-local scorer keeps the scores outside a
distorted area untouched and localizes the area, while a scorer with a global
receptive field lets the area shift every score.
"""

import pytest

from framemos.distortion import DistortionKind, inject, sample_plan
from framemos.eval_corr import coupling_analysis, summarize_coupling
from framemos.eval_detect import DetectionCurve, GroundTruthEvent, roc_auc
from framemos.hash import utterance_seed
from framemos.scoring import (
    GlobalCouplingScorer,
    ResolutionFusion,
    SpectralReferenceScorer,
    score_utterance,
)
from framemos.synth import make_corpus

N_UTTERANCES = 20


@pytest.fixture(scope="module")
def distorted():
    "(utterance, distorted audio, record) for 6-second utterances with one noise burst each."
    out = []
    for utt in make_corpus(N_UTTERANCES, seed=0, duration=6.0):
        plan = sample_plan(
            utt.track,
            utterance_seed(0, utt.utterance_id),
            n_areas=1,
            classes=(DistortionKind.PINK_NOISE,),
        )
        audio, record = inject(utt.clean, plan)
        out.append((utt, audio, record))
    return out


def score_pair(utt, audio, scorer, fusion):
    before = score_utterance(
        utt.clean, scorer, fusion, reference=utt.pristine, utterance_id=utt.utterance_id
    )
    after = score_utterance(
        audio, scorer, fusion, reference=utt.pristine, utterance_id=utt.utterance_id
    )
    return before, after


@pytest.fixture(scope="module")
def detection(distorted):
    "Detection curves of the local scorer and ground truth per utterance."
    curves, gt = {}, {}
    for utt, audio, record in distorted:
        _, after = score_pair(utt, audio, SpectralReferenceScorer(), ResolutionFusion())
        curves[utt.utterance_id] = DetectionCurve.from_scores(after)
        gt[utt.utterance_id] = [
            GroundTruthEvent(utt.utterance_id, on, off, str(record.klass.variant))
            for on, off in record.events
        ]
    return curves, gt


def test_chunked_local_scorer_is_decoupled(distorted):
    reports = []
    for utt, audio, record in distorted:
        before, after = score_pair(utt, audio, SpectralReferenceScorer(), ResolutionFusion())
        assert after.scores.min() >= 1.0 and after.scores.max() <= 5.0
        reports.append(coupling_analysis(before, after, record.events))

    summary = summarize_coupling(reports)
    assert summary.n_utterances == N_UTTERANCES
    for report in reports:
        for dtw in (report.ldtw, report.rdtw):
            assert dtw is None or dtw == pytest.approx(0.0, abs=1e-9)
        for pcc in (report.lpcc, report.rpcc):
            assert pcc is None or pcc > 0.99
    assert summary.ldtw is not None or summary.rdtw is not None


def test_global_scorer_is_coupled(distorted):
    reports = []
    for utt, audio, record in distorted:
        before, after = score_pair(utt, audio, GlobalCouplingScorer(SpectralReferenceScorer()), None)
        reports.append(coupling_analysis(before, after, record.events))

    summary = summarize_coupling(reports)
    assert summary.ldtw is not None and summary.ldtw > 5.0
    assert summary.rdtw is not None and summary.rdtw > 5.0


def test_local_scorer_localizes_distortions(detection):
    curves, gt = detection
    auc_05 = roc_auc(curves, gt, medfilt_ms=0, rho_dtc=0.5).auc
    auc_07 = roc_auc(curves, gt, medfilt_ms=0, rho_dtc=0.7).auc
    assert auc_05 > 0.8
    # a stricter overlap requirement never finds more
    assert auc_05 >= auc_07

    # every curve judged against another utterance's distortion
    ids = sorted(curves)
    shuffled = {
        utt: DetectionCurve(utt, curves[other].values, curves[other].frame_rate)
        for utt, other in zip(ids, ids[1:] + ids[:1])
        if len(curves[other]) == len(curves[utt])
    }
    chance = roc_auc(shuffled, {utt: gt[utt] for utt in shuffled}, medfilt_ms=0, rho_dtc=0.7).auc
    assert chance <= 0.3
    assert auc_07 >= chance + 0.3

import numpy as np
import pytest

from framemos.dsp import AudioBuffer
from framemos.scoring import (
    ChunkPlan,
    ConstantScorer,
    FileScorer,
    FrameScorer,
    FrameScoreSequence,
    GlobalCouplingScorer,
    ResolutionFusion,
    SpectralReferenceScorer,
    check_frame_aligned,
    chunk_signal,
    conform_length,
    frame_count,
    fuse_resolutions,
    load_file_scorer,
    median_filter,
    median_window,
    overlap_add,
    pool_utterance_score,
    range_clip,
    read_frame_scores,
    samples_to_frames,
    score_utterance,
    spectral_reference_scorer,
    write_frame_scores,
)

SR = 16_000


@pytest.fixture
def pair() -> tuple[AudioBuffer, AudioBuffer]:
    "(degraded, clean): clean noise plus a little independent noise."
    rng = np.random.default_rng(0)
    clean = 0.1 * rng.standard_normal(int(2.3 * SR))
    degraded = clean + 0.01 * rng.standard_normal(clean.shape[0])
    return AudioBuffer(degraded, SR), AudioBuffer(clean, SR)


def test_frame_count():
    assert frame_count(SR, SR, 50.0) == 50
    assert frame_count(SR + 1, SR, 50.0) == 51
    assert frame_count(1, SR, 50.0) == 1
    assert samples_to_frames(8000, SR, 50.0) == 25
    with pytest.raises(ValueError, match="whole number"):
        samples_to_frames(100, SR, 50.0)


def test_conform_length():
    assert conform_length(np.array([1.0, 2.0, 3.0]), 2).tolist() == [1.0, 2.0]
    assert conform_length(np.array([1.0, 2.0]), 4).tolist() == [1.0, 2.0, 2.0, 2.0]
    with pytest.raises(ValueError):
        conform_length(np.array([]), 3)


def test_chunk_plan():
    short = ChunkPlan(10_000, 16_000, 8_000)
    assert short.n_blocks == 1
    assert short.pad == 6_000

    plan = ChunkPlan(20_000, 16_000, 8_000)
    assert plan.n_blocks == 2
    assert plan.offsets == [0, 8_000]
    assert plan.pad == 4_000

    with pytest.raises(ValueError):
        ChunkPlan(100, 10, 20)


def test_chunk_signal():
    x = AudioBuffer(np.arange(10, dtype=float), SR)
    blocks = chunk_signal(x, 4, 3)
    assert [b.samples.tolist() for b in blocks] == [
        [0, 1, 2, 3],
        [3, 4, 5, 6],
        [6, 7, 8, 9],
    ]
    blocks = chunk_signal(x, 4, 4)
    assert blocks[-1].samples.tolist() == [8, 9, 0, 0]


def test_overlap_add():
    out = overlap_add([np.ones(4), np.full(4, 3.0)], shift_frames=2)
    assert out.tolist() == [1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
    assert overlap_add([np.ones(4), np.full(4, 3.0)], 2, n_frames=5).tolist() == [1, 1, 2, 2, 3]

    with pytest.raises(ValueError, match="gaps"):
        overlap_add([np.ones(4), np.ones(4)], shift_frames=5)
    with pytest.raises(ValueError, match="same number"):
        overlap_add([np.ones(4), np.ones(3)], shift_frames=2)


def test_resolution_fusion():
    fusion = ResolutionFusion()
    assert fusion.shifts == (0.5, 0.3, 0.2)
    np.testing.assert_allclose(fusion.weights, [1 / 3] * 3)

    weighted = ResolutionFusion((1.0, 0.5), logits=(0.0, np.log(3.0)))
    np.testing.assert_allclose(weighted.weights, [0.25, 0.75])

    with pytest.raises(ValueError, match="must match"):
        ResolutionFusion((1.0, 0.5), logits=(0.0,))
    with pytest.raises(ValueError, match="Shift"):
        ResolutionFusion((1.0,), shifts=(2.0,))


def test_fuse_resolutions():
    fused = fuse_resolutions([np.zeros(3), np.full(3, 4.0)], [0.25, 0.75])
    assert fused.tolist() == [3.0, 3.0, 3.0]
    with pytest.raises(ValueError, match="sum to 1"):
        fuse_resolutions([np.zeros(3), np.zeros(3)], [0.5, 0.6])
    with pytest.raises(ValueError, match="different shapes"):
        fuse_resolutions([np.zeros(3), np.zeros(4)], [0.5, 0.5])


def test_check_frame_aligned():
    check_frame_aligned(ResolutionFusion(), SR, 50.0)
    with pytest.raises(ValueError, match="whole number"):
        check_frame_aligned(ResolutionFusion((0.5,), shifts=(0.25,)), SR, 50.0)


def test_range_clip_and_pooling():
    raw = FrameScoreSequence("u", [0.0, 100.0, -100.0, 0.5])
    clipped = range_clip(raw)
    assert clipped.scores[:3].tolist() == [3.0, 5.0, 1.0]
    assert clipped.valid_range == (1.0, 5.0)
    assert np.all((clipped.scores >= 1) & (clipped.scores <= 5))
    assert pool_utterance_score(FrameScoreSequence("u", [1.0, 2.0, 4.5])) == pytest.approx(2.5)


@pytest.mark.parametrize(
    "length_ms, window", [(0, 1), (20, 1), (40, 1), (50, 3), (60, 3), (100, 5), (500, 25)]
)
def test_median_window(length_ms, window):
    assert median_window(length_ms, 50.0) == window


def test_median_filter():
    seq = FrameScoreSequence("u", [4.0, 4.0, 1.0, 4.0, 4.0, 2.0, 2.0, 2.0])
    assert median_filter(seq, 0) is seq
    assert median_filter(seq, 60).scores.tolist() == [4.0, 4.0, 4.0, 4.0, 4.0, 2.0, 2.0, 2.0]


def test_scorers_satisfy_protocol():
    scorers = [
        ConstantScorer(),
        SpectralReferenceScorer(),
        FileScorer({}),
        GlobalCouplingScorer(ConstantScorer()),
    ]
    assert all(isinstance(s, FrameScorer) for s in scorers)


def test_constant_scorer_clipped():
    buffer = AudioBuffer(np.random.default_rng(0).standard_normal(int(2.3 * SR)) * 0.1, SR)
    scores = score_utterance(buffer, ConstantScorer(0.0), ResolutionFusion())
    assert len(scores) == frame_count(len(buffer), SR) == 115
    np.testing.assert_allclose(scores.scores, 3.0)

    unchunked = score_utterance(buffer, ConstantScorer(0.7), fusion=None, clip=False)
    np.testing.assert_allclose(unchunked.scores, 0.7)


def test_spectral_reference_scorer(pair):
    degraded, clean = pair
    same = spectral_reference_scorer(clean, clean)
    np.testing.assert_allclose(same, 1.5)
    noisy = spectral_reference_scorer(degraded, clean)
    assert noisy.shape == (frame_count(len(clean), SR),)
    assert np.all(noisy < 1.5)

    with pytest.raises(ValueError, match="differ in length"):
        spectral_reference_scorer(degraded, clean.with_samples(clean.samples[:-1]))
    with pytest.raises(ValueError, match="does not divide"):
        spectral_reference_scorer(degraded, clean, frame_rate=48.0)


def test_scoring_is_frame_local(pair):
    "A change to some frames leaves every other frame's chunked score untouched."
    degraded, clean = pair
    before = score_utterance(degraded, SpectralReferenceScorer(), ResolutionFusion(), reference=clean)

    samples = degraded.samples.copy()
    samples[int(1.0 * SR) : int(1.2 * SR)] += 0.2 * np.random.default_rng(1).standard_normal(int(0.2 * SR))
    after = score_utterance(
        degraded.with_samples(samples), SpectralReferenceScorer(), ResolutionFusion(), reference=clean
    )

    np.testing.assert_array_equal(after.scores[:50], before.scores[:50])
    np.testing.assert_array_equal(after.scores[60:], before.scores[60:])
    assert np.all(after.scores[50:60] < before.scores[50:60])


def test_global_coupling_scorer_shifts_everything(pair):
    degraded, clean = pair
    scorer = GlobalCouplingScorer(SpectralReferenceScorer(), penalty=0.3, trigger=0.5)
    before = score_utterance(degraded, scorer, fusion=None, clip=False, reference=clean)
    assert before.scores.min() >= 0.5

    samples = degraded.samples.copy()
    samples[SR : SR + 3200] += 0.5 * np.random.default_rng(1).standard_normal(3200)
    after = score_utterance(degraded.with_samples(samples), scorer, fusion=None, clip=False, reference=clean)
    np.testing.assert_allclose(after.scores[:50], before.scores[:50] - 0.3)
    np.testing.assert_allclose(after.scores[60:], before.scores[60:] - 0.3)


def test_reference_length_mismatch(pair):
    degraded, clean = pair
    with pytest.raises(ValueError, match="samples"):
        score_utterance(degraded, SpectralReferenceScorer(), reference=clean.with_samples(clean.samples[:-10]))


def test_file_scorer_recovers_scores():
    n = int(2.3 * SR)
    raw = FrameScoreSequence("utt", np.linspace(-1, 1, frame_count(n, SR)))
    scorer = FileScorer({"utt": raw})
    buffer = AudioBuffer(np.random.default_rng(0).standard_normal(n) * 0.1, SR)

    scores = score_utterance(buffer, scorer, ResolutionFusion(), clip=False, utterance_id="utt")
    np.testing.assert_allclose(scores.scores, raw.scores, atol=1e-12)

    with pytest.raises(KeyError, match="other"):
        score_utterance(buffer, scorer, utterance_id="other")


@pytest.mark.parametrize("format, suffix", [("text", ".txt"), ("f32", ".f32")])
def test_frame_score_files(tmp_path, format, suffix):
    seq = FrameScoreSequence("utt7", [1.0, 2.5, 4.75, 3.0], frame_rate=50.0)
    path = tmp_path / f"utt7.scores{suffix}"
    write_frame_scores(seq, path, format)
    back = read_frame_scores(path)
    assert back.utterance_id == "utt7"
    assert back.frame_rate == 50.0
    assert back.scores.tolist() == seq.scores.tolist()

    scorer = load_file_scorer({"utt7": path})
    assert scorer.scores["utt7"].scores.tolist() == seq.scores.tolist()


def test_frame_score_file_errors(tmp_path):
    path = tmp_path / "u.scores.f32"
    path.write_bytes(np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(FileNotFoundError, match="sidecar"):
        read_frame_scores(path)

    text = tmp_path / "u.scores.txt"
    text.write_text("1.0\nabc\n")
    with pytest.raises(ValueError, match=":2:"):
        read_frame_scores(text)

import csv
import json
import shutil
from pathlib import Path

import jsonschema
import pytest
from typer.testing import CliRunner

from framemos.cli import cli
from framemos.eval_detect import read_ground_truth
from framemos.manifest import ManifestRow, read_manifest, write_manifest
from framemos.synth import write_corpus

runner = CliRunner()


def invoke(*args: object):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def files_of(directory: Path) -> dict[str, bytes]:
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def pink_config(tmp_path_factory) -> Path:
    # float output keeps the unaffected audio bit-exact apart from rounding to float32
    path = tmp_path_factory.mktemp("config") / "config.json"
    path.write_text(json.dumps({"distortion": {"classes": ["PinkNoise"], "bit_depth": "32f"}}))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, corpus, pink_config) -> Path:
    "Output root after distort + score (before and after) on the synthetic corpus."
    out = tmp_path_factory.mktemp("pipeline")
    result = invoke("distort", corpus, "--config", pink_config, "-o", out / "distort", "--n-areas", 1)
    assert result.exit_code == 0, result.output
    for name, manifest in [
        ("before", corpus),
        ("after", out / "distort" / "distorted_manifest.tsv"),
    ]:
        result = invoke("score", manifest, "--config", pink_config, "-o", out / name)
        assert result.exit_code == 0, result.output
    return out


def test_distort_outputs(pipeline, corpus):
    out = pipeline / "distort"
    gt = read_ground_truth(out / "ground_truth.tsv")
    assert sorted(gt) == [r.utterance_id for r in read_manifest(corpus)]
    assert all(e.klass == "PinkNoise" for events in gt.values() for e in events)
    assert all(len(events) == 1 for events in gt.values())

    rows = read_manifest(out / "distorted_manifest.tsv")
    assert [r.wav_path.name for r in rows] == [f"{r.utterance_id}.distorted.wav" for r in rows]
    assert all(r.wav_path.exists() and r.reference_path.exists() for r in rows)

    summary = json.loads((out / "distort_summary.json").read_text())
    assert summary["n_distorted"] == 4
    assert summary["class_counts"] == {"PinkNoise": 4}
    assert (out / "skipped.tsv").read_text() == "utterance_id\treason\n"

    stamp = json.loads((out / "version.json").read_text())
    assert stamp["tool"] == "framemos"
    assert stamp["command"] == "distort"
    assert "output_dir" not in json.loads((out / "run_config.json").read_text())


def test_distort_is_reproducible(tmp_path, corpus):
    a = invoke("distort", corpus, "-o", tmp_path / "a", "--seed", 3)
    b = invoke("distort", corpus, "-o", tmp_path / "b", "--seed", 3, "--jobs", 2)
    assert a.exit_code == b.exit_code == 0
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")

    c = invoke("distort", corpus, "-o", tmp_path / "c", "--seed", 4)
    assert c.exit_code == 0
    assert (tmp_path / "c" / "ground_truth.tsv").read_bytes() != (
        tmp_path / "a" / "ground_truth.tsv"
    ).read_bytes()


def test_distort_skips_unusable_rows(tmp_path, corpus):
    rows = read_manifest(corpus)
    rows[1] = ManifestRow(rows[1].utterance_id, rows[1].wav_path)
    manifest = tmp_path / "manifest.tsv"
    write_manifest(rows, manifest)

    result = invoke("distort", manifest, "-o", tmp_path / "out")
    assert result.exit_code == 1
    with open(tmp_path / "out" / "skipped.tsv", newline="") as f:
        skipped = list(csv.DictReader(f, delimiter="\t"))
    assert [s["utterance_id"] for s in skipped] == [rows[1].utterance_id]
    assert "alignment_path" in skipped[0]["reason"]
    assert len(read_ground_truth(tmp_path / "out" / "ground_truth.tsv")) == 3


def test_score_outputs(pipeline):
    out = pipeline / "before"
    rows = read_manifest(out / "scores_manifest.tsv")
    assert len(rows) == 4
    for row in rows:
        assert row.score_path == out / "scores" / f"{row.utterance_id}.scores.txt"
        assert row.score_path.exists()

    with open(out / "utterance_scores.csv", newline="") as f:
        pooled = {r["utterance_id"]: float(r["pooled_score"]) for r in csv.DictReader(f)}
    assert sorted(pooled) == [r.utterance_id for r in rows]
    assert all(1.0 <= v <= 5.0 for v in pooled.values())
    assert (out / "ratings.csv").exists()


def test_score_missing_inputs(tmp_path, corpus):
    rows = read_manifest(corpus)
    rows[0] = ManifestRow(rows[0].utterance_id, tmp_path / "nowhere.wav", reference_path=rows[0].reference_path)
    manifest = tmp_path / "manifest.tsv"
    write_manifest(rows, manifest)

    result = invoke("score", manifest, "-o", tmp_path / "out")
    assert result.exit_code == 1
    assert "nowhere.wav" in result.output
    assert not (tmp_path / "out" / "scores").exists()


def test_eval_detect(pipeline, tmp_path):
    result = invoke(
        "eval-detect",
        pipeline / "distort" / "ground_truth.tsv",
        "--scores", pipeline / "after" / "scores_manifest.tsv",
        "-o", tmp_path,
        "--rho", 0.5,
        "--medfilt", 0,
        "--medfilt", 100,
    )
    assert result.exit_code == 0, result.output

    report = json.loads((tmp_path / "eval_detect.json").read_text())
    assert report["n_utterances"] == 4
    assert report["n_events"] == 4
    assert len(report["auc_table"]) == 2
    assert [b["rho_dtc"] for b in report["best"]] == [0.5]
    assert 0.0 <= report["best"][0]["auc"] <= 1.0
    assert report["best"][0]["roc"][0]["threshold"] is None

    with open(tmp_path / "auc_table.csv", newline="") as f:
        assert next(csv.reader(f)) == ["rho_dtc", "0ms", "100ms"]
    assert (tmp_path / "roc_rho0.5.csv").exists()


def test_eval_detect_missing_scores(pipeline, tmp_path):
    rows = read_manifest(pipeline / "after" / "scores_manifest.tsv")
    scores = tmp_path / "scores.tsv"
    write_manifest(rows[1:], scores)

    result = invoke(
        "eval-detect", pipeline / "distort" / "ground_truth.tsv", "--scores", scores, "-o", tmp_path / "out"
    )
    assert result.exit_code == 1
    assert rows[0].utterance_id in result.output
    assert not (tmp_path / "out" / "eval_detect.json").exists()


def test_eval_detect_needs_one_input(pipeline, tmp_path):
    result = invoke("eval-detect", pipeline / "distort" / "ground_truth.tsv", "-o", tmp_path)
    assert result.exit_code == 2


def test_eval_coupling(pipeline, tmp_path):
    result = invoke(
        "eval-coupling",
        pipeline / "before" / "scores_manifest.tsv",
        pipeline / "after" / "scores_manifest.tsv",
        "--records", pipeline / "distort" / "records.json",
        "-o", tmp_path,
    )
    assert result.exit_code == 0, result.output

    report = json.loads((tmp_path / "eval_coupling.json").read_text())
    assert report["collar"] == 0.2
    assert report["summary"]["n_utterances"] == 4
    for utt in report["utterances"]:
        # a frame-local scorer leaves both sides unchanged up to float32 rounding
        for side, frames in (("ldtw", "left_frames"), ("rdtw", "right_frames")):
            if utt[side] is not None:
                assert utt[side] / utt[frames] < 1e-3

    trajectory = (tmp_path / "trajectories" / "utt000.csv").read_text().splitlines()
    assert trajectory[0] == "frame,time,before,after"
    assert len(trajectory) == 1 + 200
    assert (tmp_path / "coupling.csv").read_text().splitlines()[-1].startswith("mean,")


def test_eval_coupling_needs_events(pipeline, tmp_path):
    result = invoke(
        "eval-coupling",
        pipeline / "before" / "scores_manifest.tsv",
        pipeline / "after" / "scores_manifest.tsv",
        "-o", tmp_path,
    )
    assert result.exit_code == 2


def test_eval_corr(pipeline, tmp_path):
    result = invoke("eval-corr", pipeline / "before" / "ratings.csv", "-o", tmp_path)
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "eval_corr.json").read_text())
    assert report["n_utterances"] == 4
    assert report["n_systems"] == 4
    assert report["utterance"]["n"] == 4
    assert report["system"]["n"] == 4


def test_eval_corr_single_system(tmp_path):
    ratings = tmp_path / "ratings.csv"
    ratings.write_text(
        "utterance_id,system_id,true_mos,predicted_mos\nu0,a,4.0,3.5\nu1,a,2.0,2.5\n"
    )
    result = invoke("eval-corr", ratings, "-o", tmp_path / "out")
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "eval_corr.json").read_text())
    assert report["system"] is None
    assert "at least 2 systems" in report["system_unavailable_reason"]


def test_output_dir_from_environment(tmp_path):
    ratings = tmp_path / "ratings.csv"
    ratings.write_text(
        "utterance_id,system_id,true_mos,predicted_mos\nu0,a,4.0,3.5\nu1,b,2.0,2.5\n"
    )
    result = runner.invoke(cli, ["eval-corr", str(ratings)], env={"FRAMEMOS_OUTPUT_DIR": str(tmp_path / "env")})
    assert result.exit_code == 0, result.output
    assert (tmp_path / "env" / "eval_corr.json").exists()

    result = runner.invoke(cli, ["eval-corr", str(ratings)], env={"FRAMEMOS_OUTPUT_DIR": None})
    assert result.exit_code == 2


@pytest.mark.parametrize(
    "config",
    [
        {"distortion": {"n_areas": 0}},
        {"distortion": {"classes": ["Reverb"]}},
        {"unknown": 1},
    ],
)
def test_bad_config(tmp_path, corpus, config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    result = invoke("distort", corpus, "--config", path, "-o", tmp_path / "out")
    assert result.exit_code == 2
    assert not (tmp_path / "out" / "ground_truth.tsv").exists()


def run_chain(config: Path, out: Path) -> None:
    "distort, score and eval-detect with paths relative to the working directory."
    steps = [
        ("distort", "corpus/manifest.tsv", "--config", config, "-o", out / "distort", "--seed", 11),
        ("score", out / "distort" / "distorted_manifest.tsv", "--config", config, "-o", out / "after"),
        (
            "eval-detect", out / "distort" / "ground_truth.tsv",
            "--scores", out / "after" / "scores_manifest.tsv",
            "--config", config, "-o", out / "detect",
        ),
    ]
    for args in steps:
        result = invoke(*args)
        assert result.exit_code == 0, result.output


def test_chained_run_is_byte_identical(tmp_path, monkeypatch, pink_config):
    monkeypatch.chdir(tmp_path)
    write_corpus(Path("corpus"), n_utterances=3, seed=1, duration=4.0)
    out = Path("out")

    run_chain(pink_config, out)
    first = files_of(out)
    assert "detect/eval_detect.json" in first
    assert any(name.startswith("after/scores/") for name in first)

    shutil.rmtree(out)
    run_chain(pink_config, out)
    assert files_of(out) == first


SCHEMAS = Path(__file__).parent.parent / "schemas"


def test_reports_match_schemas(pipeline, tmp_path):
    reports = {
        "distort_summary": pipeline / "distort" / "distort_summary.json",
        "version": pipeline / "distort" / "version.json",
    }
    result = invoke(
        "eval-detect", pipeline / "distort" / "ground_truth.tsv",
        "--scores", pipeline / "after" / "scores_manifest.tsv", "-o", tmp_path / "detect",
    )
    assert result.exit_code == 0, result.output
    reports["eval_detect"] = tmp_path / "detect" / "eval_detect.json"
    result = invoke(
        "eval-coupling",
        pipeline / "before" / "scores_manifest.tsv",
        pipeline / "after" / "scores_manifest.tsv",
        "--records", pipeline / "distort" / "records.json",
        "-o", tmp_path / "coupling",
    )
    assert result.exit_code == 0, result.output
    reports["eval_coupling"] = tmp_path / "coupling" / "eval_coupling.json"
    result = invoke("eval-corr", pipeline / "before" / "ratings.csv", "-o", tmp_path / "corr")
    assert result.exit_code == 0, result.output
    reports["eval_corr"] = tmp_path / "corr" / "eval_corr.json"

    for name, path in reports.items():
        schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
        jsonschema.validate(json.loads(path.read_text()), schema)

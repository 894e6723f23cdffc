import json
from pathlib import Path

from typer.testing import CliRunner

from framemos.cli import cli
from framemos.synth import write_corpus

out = Path("demo")
manifest = write_corpus(out / "corpus", n_utterances=12, seed=0)

# noise bursts only, written as float so unaffected audio survives the round trip
config = out / "config.json"
config.write_text(json.dumps({"distortion": {"classes": ["PinkNoise"], "bit_depth": "32f"}}))

runner = CliRunner()


def run(*args: object) -> None:
    result = runner.invoke(cli, [str(a) for a in args])
    print(result.output)
    if result.exit_code != 0:
        raise SystemExit(result.exit_code)


run("distort", manifest, "--config", config, "-o", out / "distort", "--n-areas", 1)
run("score", manifest, "--config", config, "-o", out / "before")
run("score", out / "distort" / "distorted_manifest.tsv", "--config", config, "-o", out / "after")
run(
    "eval-detect",
    out / "distort" / "ground_truth.tsv",
    "--scores", out / "after" / "scores_manifest.tsv",
    "-o", out / "detect",
)
run(
    "eval-coupling",
    out / "before" / "scores_manifest.tsv",
    out / "after" / "scores_manifest.tsv",
    "--records", out / "distort" / "records.json",
    "-o", out / "coupling",
)
run("eval-corr", out / "before" / "ratings.csv", "-o", out / "corr")

# # what a predictor with a global receptive field looks like
# run("score", manifest, "--scorer", "global-coupling", "--unchunked", "-o", out / "before-global")
# run(
#     "score", out / "distort" / "distorted_manifest.tsv",
#     "--scorer", "global-coupling", "--unchunked", "-o", out / "after-global",
# )
# run(
#     "eval-coupling",
#     out / "before-global" / "scores_manifest.tsv",
#     out / "after-global" / "scores_manifest.tsv",
#     "--records", out / "distort" / "records.json",
#     "-o", out / "coupling-global",
# )

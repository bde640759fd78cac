"""Run every CLI stage end to end on a fresh toy corpus.

Predicted structures come from a noise oracle (noisy copies of the
targets), so the numbers only exercise the evaluation machinery.
"""

import argparse
from pathlib import Path

from polyfold.afig_eval import build_targets, load_decoy_pool
from polyfold.cli import main as polyfold
from polyfold.dataset import read_manifest
from polyfold.synthetic import write_toy_corpus, write_toy_predictions


def run(*argv):
    argv = [str(x) for x in argv]
    print("$ polyfold", " ".join(argv))
    code = polyfold(argv)
    if code:
        raise SystemExit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("work", type=Path)
    p.add_argument("--threads", type=int, default=2)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--families", type=int, default=16)
    p.add_argument("--test-n", type=int, default=10, help="stats need at least 5 test proteins")
    a = p.parse_args()
    w = a.work
    corpus = write_toy_corpus(w / "corpus", n_families=a.families, n_bench=a.test_n + 1, seed=0)
    t = ("--threads", a.threads)
    man = w / "manifest.jsonl"
    run(*t, "dataset", "build", "--structures", corpus["structures"], "--benchmark", corpus["benchmark"],
        "--test-n", a.test_n, "--val-n", 1, "--out", man)
    run(*t, "featurize", "--manifest", man, "--split", "all", "--out", w / "features")
    ckpt = w / "model.ckpt"
    run(*t, "train", "--manifest", man, "--out", ckpt, "--epochs", a.epochs, "--node-s", 16, "--node-v", 4,
        "--edge-s", 8, "--layers", 2, "--batch-size", 2)
    run(*t, "sample", "--manifest", man, "--weights", ckpt, "--n", 4, "--out", w / "samples.fasta")
    run(*t, "score", "--manifest", man, "--weights", ckpt, "--out", w / "score_native.csv")
    run(*t, "score", "--manifest", man, "--weights", ckpt, "--fasta", w / "samples.fasta",
        "--out", w / "score_designed.csv")

    targets = build_targets(read_manifest(man), "test", load_decoy_pool(corpus["decoys"]), 0.4)
    for name, sigma, seed in (("sharp", 1.0, 1), ("blurry", 2.5, 2)):
        write_toy_predictions(targets, w / "pred" / name, sigma=sigma, seed=seed)
    ev = w / "eval"
    run(*t, "eval", "--manifest", man, "--predictions", f"sharp={w / 'pred/sharp'}",
        "--predictions", f"blurry={w / 'pred/blurry'}", "--decoys", corpus["decoys"], "--out", ev)
    run("stats", "--a", ev / "report_sharp.csv", "--b", ev / "report_blurry.csv", "--out", w / "stats.csv")
    print((w / "stats.csv").read_text())


if __name__ == "__main__":
    main()

"""Write a synthetic conformer corpus (structures, benchmark list, decoy pool)."""

import argparse

from polyfold.synthetic import write_toy_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out")
    p.add_argument("--families", type=int, default=8)
    p.add_argument("--bench", type=int, default=4)
    p.add_argument("--singletons", type=int, default=3)
    p.add_argument("--decoys", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    paths = write_toy_corpus(a.out, n_families=a.families, n_bench=a.bench, n_singletons=a.singletons,
                             n_decoys=a.decoys, seed=a.seed)
    for k, v in paths.items():
        print(f"{k:10s} {v}")


if __name__ == "__main__":
    main()

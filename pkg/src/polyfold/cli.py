"""Command-line entry point: ``polyfold <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import IoFailure, PolyfoldError
from .parallel import default_threads, parallel_map

logger = logging.getLogger("polyfold")


def _versions() -> dict:
    import scipy
    import torch
    return {"polyfold": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "torch": torch.__version__}


def _config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        if isinstance(v, (list, tuple)):
            v = [str(x) for x in v]
        elif not isinstance(v, (int, float, str, bool, type(None))):
            v = str(v)
        out[k] = v
    return out


def write_run_log(path, args, extra: Optional[dict] = None) -> None:
    """Config echo, seed and versions next to a primary output. No timestamps, so reruns match."""
    log = {"command": args.command, "config": _config(args), "seed": getattr(args, "seed", None),
           "versions": _versions()}
    if extra:
        log.update(extra)
    Path(path).write_text(json.dumps(log, indent=2, sort_keys=True) + "\n")


def _runlog_path(out) -> Path:
    out = Path(out)
    return out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")


def _ensure_parent(path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {path.parent}: {e}") from e
    return path


def _require(path, kind="file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise IoFailure(f"{kind} not found: {p}")
    return p


# ---- dataset -------------------------------------------------------------

def cmd_dataset_build(args) -> int:
    from .dataset import build_dataset, read_benchmark, write_manifest
    _require(args.structures, "dir")
    _require(args.benchmark)
    bench = read_benchmark(args.benchmark)
    m = build_dataset(args.structures, bench, args.identity, args.tm_max, args.test_n, args.val_n,
                      threads=args.threads)
    out = _ensure_parent(args.out)
    write_manifest(m, out)
    write_run_log(_runlog_path(out), args, {"counts": {s: len(m.split(s)) for s in ("train", "val", "test", "excluded")}})
    return 0


# ---- featurize -----------------------------------------------------------

def _pairs(manifest, split, pair_ids=None):
    pairs = manifest.split(split) if split != "all" else list(manifest.pairs)
    if pair_ids:
        wanted = set(pair_ids)
        pairs = [p for p in manifest.pairs if p.pair_id in wanted]
        missing = wanted - {p.pair_id for p in pairs}
        if missing:
            raise PolyfoldError(f"pair not in manifest: {sorted(missing)[0]}")
    return sorted(pairs, key=lambda p: p.pair_id)


def _multigraphs(manifest, pairs, noise, seed, threads):
    from .featurizer import build_multigraph, derive_seed
    resolver = manifest.resolver()
    return parallel_map(lambda p: build_multigraph(p, resolver, noise, derive_seed(seed, p.pair_id)),
                        pairs, threads)


def cmd_featurize(args) -> int:
    from .dataset import read_manifest
    from .featurizer import dump_features
    m = read_manifest(_require(args.manifest))
    pairs = _pairs(m, args.split, args.pair)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mgs = _multigraphs(m, pairs, args.noise, args.seed, args.threads)
    for p, mg in zip(pairs, mgs):
        for label, g in zip("AB", mg.conformers):
            dump_features(g, out / f"{p.pair_id}_{label}.pft", {"pair_id": p.pair_id, "state": label,
                                                                 "noise": args.noise, "seed": args.seed})
    write_run_log(out / "run.json", args, {"pairs": [p.pair_id for p in pairs]})
    return 0


# ---- train ---------------------------------------------------------------

def cmd_train(args) -> int:
    import torch
    from .dataset import read_manifest
    from .gvpnn import ModelConfig, MultiStateGVP, fit, save_checkpoint, score_sequences, run_encoder
    m = read_manifest(_require(args.manifest))
    train_pairs = _pairs(m, "train")
    if args.limit:
        train_pairs = train_pairs[: args.limit]
    if not train_pairs:
        raise PolyfoldError("manifest has no train pairs")
    val_pairs = _pairs(m, "val")
    cfg = ModelConfig(node_s=args.node_s, node_v=args.node_v, edge_s=args.edge_s,
                      n_encoder=args.layers, n_decoder=args.layers, dropout=args.dropout)
    torch.manual_seed(args.seed)
    model = MultiStateGVP(cfg)
    val_graphs = _multigraphs(m, val_pairs, 0.0, args.seed, args.threads) if val_pairs else []

    def batches(epoch):
        graphs = _multigraphs(m, train_pairs, args.noise, args.seed * 7919 + epoch, args.threads)
        order = np.random.default_rng(args.seed + epoch).permutation(len(graphs))
        graphs = [graphs[i] for i in order]
        return [graphs[i:i + args.batch_size] for i in range(0, len(graphs), args.batch_size)]

    def validate(model):
        model.eval()
        with torch.no_grad():
            ppl = [score_sequences(run_encoder(g, model), g, model, [g.native])[1] for g in val_graphs]
        return float(np.mean(ppl))

    res = fit(model, batches, args.epochs, args.lr, args.seed, validate if val_graphs else None, args.val_every)
    out = _ensure_parent(args.out)
    save_checkpoint(model, out, {"best_epoch": res.best_epoch})
    write_run_log(_runlog_path(out), args, {"history": res.history, "best_epoch": res.best_epoch})
    return 0


# ---- sample / score ------------------------------------------------------

def _load_model(path):
    from .gvpnn import load_checkpoint
    model, _ = load_checkpoint(_require(path))
    return model


def cmd_sample(args) -> int:
    import torch
    from .dataset import read_manifest
    from .featurizer import derive_seed
    from .gvpnn import run_encoder, sample_sequences
    m = read_manifest(_require(args.manifest))
    model = _load_model(args.weights)
    pairs = _pairs(m, args.split, args.pair)
    mgs = _multigraphs(m, pairs, 0.0, None, args.threads)

    def one(job):
        p, mg = job
        with torch.no_grad():
            pooled = run_encoder(mg, model)
        return sample_sequences(pooled, mg, model, args.n, args.temperature, derive_seed(args.seed, p.pair_id))
    results = parallel_map(one, list(zip(pairs, mgs)), args.threads)
    lines = []
    for p, seqs in zip(pairs, results):
        for i, s in enumerate(seqs):
            lines.append(f">{p.pair_id}|{i}|logp={s.total_log_prob:.4f}")
            lines.append(s.sequence)
    out = _ensure_parent(args.out)
    out.write_text("\n".join(lines) + "\n")
    write_run_log(_runlog_path(out), args)
    return 0


def read_fasta(path) -> dict:
    """``{protein: [sequences in seqidx order]}`` from a sample FASTA file."""
    out, header = {}, None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            header = line[1:].split("|")
            continue
        if header is None:
            raise PolyfoldError(f"{path}: sequence before any header")
        out.setdefault(header[0], []).append((int(header[1]) if len(header) > 1 else 0, line))
    return {k: [s for _, s in sorted(v)] for k, v in out.items()}


def cmd_score(args) -> int:
    import torch
    from .dataset import read_manifest
    from .gvpnn import run_encoder, score_sequences
    m = read_manifest(_require(args.manifest))
    model = _load_model(args.weights)
    pairs = _pairs(m, args.split, args.pair)
    mgs = _multigraphs(m, pairs, 0.0, None, args.threads)
    designed = read_fasta(_require(args.fasta)) if args.fasta else {}

    def one(mg):
        seqs = designed.get(mg.pair_id, [mg.native])
        with torch.no_grad():
            return score_sequences(run_encoder(mg, model), mg, model, seqs)
    results = parallel_map(one, mgs, args.threads)
    lines = ["protein,recovery,perplexity"]
    for p, (rec, ppl) in zip(pairs, results):
        lines.append(f"{p.pair_id},{rec:.6f},{ppl:.6f}")
    lines.append(f"mean,{np.nanmean([r for r, _ in results]):.6f},{np.nanmean([q for _, q in results]):.6f}")
    out = _ensure_parent(args.out)
    out.write_text("\n".join(lines) + "\n")
    write_run_log(_runlog_path(out), args)
    return 0


# ---- eval / stats --------------------------------------------------------

def _named_dirs(specs):
    from .afig_eval import model_name_for
    out = []
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = model_name_for(spec), spec
        out.append((name, _require(path, "dir")))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise PolyfoldError(f"duplicate model names in --predictions: {names}")
    return out


def cmd_eval(args) -> int:
    from . import afig_eval as ae
    from .dataset import read_manifest
    m = read_manifest(_require(args.manifest))
    models = _named_dirs(args.predictions)
    pool = ae.load_decoy_pool(args.decoys) if args.decoys else None
    targets = ae.build_targets(m, args.split, pool, args.tm_max, args.threads)
    rows, records = {}, {}
    for name, d in models:
        preds = ae.load_predictions(d, sorted(targets))
        records[name], rows[name] = ae.evaluate_model(preds, targets, args.n_sequences, args.threads)
    stats = []
    if len(models) > 1:
        ref = models[0][0]
        for name, _ in models[1:]:
            stats += [(f"{ref}-vs-{name}:{t}", s, p, n) for t, s, p, n in ae.compare_models(rows[ref], rows[name])]
    out = Path(args.out)
    ae.emit_report(rows, stats, out, records)
    decoys = {pid: dict(sorted(t.decoys.items())) for pid, t in sorted(targets.items())}
    write_run_log(out / "run.json", args, {"decoys": decoys})
    return 0


def cmd_stats(args) -> int:
    from . import afig_eval as ae
    a = ae.read_report(_require(args.a))
    b = ae.read_report(_require(args.b))
    metrics = args.metric or list(ae.PAIRED_METRICS)
    res = ae.compare_models(a, b, metrics)
    out = _ensure_parent(args.out)
    ae._write_csv(out, ("test", "statistic", "p", "n"), res)
    write_run_log(_runlog_path(out), args)
    return 0


# ---- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyfold", description="Multi-state inverse folding toolkit.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: POLYFOLD_THREADS or CPU count)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    ds = sub.add_parser("dataset", help="dataset construction")
    ds_sub = ds.add_subparsers(dest="action")
    b = ds_sub.add_parser("build", help="cluster, pair and split a structure directory")
    b.add_argument("--structures", required=True)
    b.add_argument("--benchmark", required=True)
    b.add_argument("--test-n", type=int, default=94)
    b.add_argument("--val-n", type=int, default=100)
    b.add_argument("--identity", type=float, default=0.95)
    b.add_argument("--tm-max", type=float, default=0.4)
    b.add_argument("--out", default="manifest.jsonl")
    b.set_defaults(func=cmd_dataset_build)

    def with_pairs(sp, split="test"):
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--split", default=split, choices=("train", "val", "test", "excluded", "all"))
        sp.add_argument("--pair", action="append", help="restrict to a pair id (repeatable)")

    f = sub.add_parser("featurize", help="dump per-conformer feature tensors")
    with_pairs(f)
    f.add_argument("--noise", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="train a model on the manifest's train split")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", default="model.ckpt")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--noise", type=float, default=0.1)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--node-s", type=int, default=128)
    t.add_argument("--node-v", type=int, default=16)
    t.add_argument("--edge-s", type=int, default=32)
    t.add_argument("--layers", type=int, default=8)
    t.add_argument("--val-every", type=int, default=3)
    t.add_argument("--limit", type=int, default=0, help="use only the first N train pairs")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="sample designed sequences to FASTA")
    with_pairs(s)
    s.add_argument("--weights", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--temperature", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default="samples.fasta")
    s.set_defaults(func=cmd_sample)

    sc = sub.add_parser("score", help="recovery and perplexity of native or designed sequences")
    with_pairs(sc)
    sc.add_argument("--weights", required=True)
    sc.add_argument("--fasta", help="score these sequences instead of the natives")
    sc.add_argument("--out", default="score.csv")
    sc.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="multi-state evaluation of predicted structures")
    e.add_argument("--manifest", required=True)
    e.add_argument("--predictions", required=True, action="append",
                   help="prediction directory, optionally NAME=DIR (repeatable; first is compared to the rest)")
    e.add_argument("--decoys", help="decoy pool directory")
    e.add_argument("--split", default="test")
    e.add_argument("--n-sequences", type=int, default=16)
    e.add_argument("--tm-max", type=float, default=0.4)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", help="Shapiro-Wilk and Wilcoxon tests between two reports")
    st.add_argument("--a", required=True, help="report CSV of the first model")
    st.add_argument("--b", required=True, help="report CSV of the second model")
    st.add_argument("--metric", action="append")
    st.add_argument("--out", default="stats.csv")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    import torch
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except PolyfoldError as e:
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

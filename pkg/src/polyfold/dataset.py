"""Conformer-pair dataset construction.

Chains are clustered by sequence identity, the most distant pair of
conformers is taken from each cluster, and pairs are split into
test/val/train with a TM-score leakage filter against held-out states.
"""

from __future__ import annotations

import glob
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import geometry
from .alignment import align_pair, identity, residue_map
from .errors import BenchmarkTooSmall, IoFailure, ResolutionFailure, SchemaVersionMismatch
from .parallel import parallel_map
from .struct_io import BackboneChain, extract_backbone, parse_models

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test", "excluded")
MIN_CHAIN_LENGTH = 10


@dataclass(frozen=True, order=True)
class ChainRef:
    structure: str
    chain: str

    def __str__(self):
        return f"{self.structure}:{self.chain}"

    @classmethod
    def parse(cls, text: str) -> "ChainRef":
        structure, sep, chain = text.strip().rpartition(":")
        if not sep or not structure or not chain:
            raise ValueError(f"chain reference must look like 'structure:chain', got {text!r}")
        return cls(structure, chain)


@dataclass
class ConformerCluster:
    cluster_id: str
    members: list
    pairwise_rmsd: Optional[np.ndarray] = None


@dataclass
class ConformerPair:
    pair_id: str
    state_a: ChainRef
    state_b: ChainRef
    inter_state_rmsd: float
    environment_a: list = field(default_factory=list)
    environment_b: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if self.state_a == self.state_b:
            raise ValueError("a conformer pair needs two distinct states")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def states(self):
        return (self.state_a, self.state_b)


@dataclass
class Manifest:
    version: int
    pairs: list
    provenance: str = ""
    structures_root: Optional[str] = None

    def __post_init__(self):
        ids = [p.pair_id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("pair ids in a manifest must be unique")

    def split(self, name: str) -> list:
        return [p for p in self.pairs if p.split == name]

    def resolver(self) -> "StructureResolver":
        if self.structures_root is None:
            raise ResolutionFailure("manifest has no structures_root")
        return StructureResolver(self.structures_root)


def make_pair_id(a: ChainRef, b: ChainRef) -> str:
    return f"{a.structure}.{a.chain}--{b.structure}.{b.chain}"


class StructureResolver:
    """Maps structure ids to parsed structures under one directory.

    Files ``<stem>.pdb`` / ``<stem>.ent`` provide id ``<stem>``, or
    ``<stem>#<k>`` per model for multi-model files. Parsed files are cached.
    """

    def __init__(self, root):
        self.root = os.fspath(root)
        if not os.path.isdir(self.root):
            raise ResolutionFailure(f"structure directory {self.root!r} does not exist")
        self._files = {}
        for path in sorted(glob.glob(os.path.join(self.root, "*.pdb")) + glob.glob(os.path.join(self.root, "*.ent"))):
            stem = os.path.splitext(os.path.basename(path))[0]
            self._files.setdefault(stem, path)
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def stems(self) -> list:
        return sorted(self._files)

    def _load(self, stem):
        with self._lock:
            if stem not in self._cache:
                if stem not in self._files:
                    raise ResolutionFailure(f"no structure file for {stem!r} under {self.root!r}")
                self._cache[stem] = {s.id: s for s in parse_models(self._files[stem])}
            return self._cache[stem]

    def structures(self, stem) -> list:
        return list(self._load(stem).values())

    def structure(self, structure_id: str):
        stem = structure_id.split("#", 1)[0]
        models = self._load(stem)
        if structure_id not in models:
            raise ResolutionFailure(f"structure {structure_id!r} not found in {self._files[stem]!r}")
        return models[structure_id]

    def backbone(self, ref: ChainRef) -> BackboneChain:
        try:
            return extract_backbone(self.structure(ref.structure), ref.chain)
        except ResolutionFailure:
            raise
        except Exception as exc:
            raise ResolutionFailure(f"cannot resolve {ref}: {exc}") from exc

    def environment(self, ref: ChainRef) -> list:
        s = self.structure(ref.structure)
        return [ChainRef(ref.structure, cid) for cid in s.chain_ids if cid != ref.chain]

    def all_refs(self) -> list:
        refs = []
        for stem in self.stems:
            for s in self.structures(stem):
                refs.extend(ChainRef(s.id, cid) for cid in s.chain_ids)
        return refs


def cluster_chains(chains: Sequence, threshold: float = 0.95, identity_fn: Optional[Callable] = None,
                   threads: int = 1) -> list:
    """Single-linkage clusters under sequence identity >= ``threshold``.

    ``chains`` holds (id, sequence) tuples. Members are sorted by id and
    clusters are ordered by their first member.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    identity_fn = identity_fn or (lambda a, b: identity(align_pair(a, b)))
    items = sorted(chains, key=lambda c: str(c[0]))
    n = len(items)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    cells = [(i, j) for i in range(n) for j in range(i + 1, n)]
    scores = parallel_map(lambda ij: identity_fn(items[ij[0]][1], items[ij[1]][1]), cells, threads)
    for (i, j), s in zip(cells, scores):
        if s >= threshold:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(items[i][0])
    ordered = sorted(groups.values(), key=lambda m: str(m[0]))
    return [ConformerCluster(f"c{k:05d}", members) for k, members in enumerate(ordered)]


def mapped_ca_rmsd(a: BackboneChain, b: BackboneChain, superposed: bool = True) -> float:
    """CA RMSD over residues paired by global sequence alignment."""
    rm = residue_map(align_pair(a.sequence, b.sequence))
    if len(rm) < 3:
        return float("nan")
    return geometry.rmsd(a.ca[rm.index_a], b.ca[rm.index_b], superposed=superposed)


def attach_rmsd(cluster: ConformerCluster, backbones: dict, threads: int = 1) -> ConformerCluster:
    """Fill ``cluster.pairwise_rmsd`` from ``backbones`` (member id -> BackboneChain)."""
    m = len(cluster.members)
    mat = np.zeros((m, m))
    cells = [(i, j) for i in range(m) for j in range(i + 1, m)]
    vals = parallel_map(
        lambda ij: mapped_ca_rmsd(backbones[cluster.members[ij[0]]], backbones[cluster.members[ij[1]]]),
        cells, threads)
    for (i, j), v in zip(cells, vals):
        mat[i, j] = mat[j, i] = v
    cluster.pairwise_rmsd = mat
    return cluster


def select_max_rmsd_pair(cluster: ConformerCluster) -> Optional[ConformerPair]:
    """Most distant conformer pair; ties go to the lexicographically smallest (id_a, id_b)."""
    members = cluster.members
    if len(members) < 2:
        return None
    mat = cluster.pairwise_rmsd
    best = None
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            v = mat[i, j]
            if np.isnan(v):
                continue
            a, b = sorted((members[i], members[j]), key=str)
            key = (-v, str(a), str(b))
            if best is None or key < best[0]:
                best = (key, a, b, v)
    if best is None:
        return None
    _, a, b, v = best
    a = a if isinstance(a, ChainRef) else ChainRef.parse(str(a))
    b = b if isinstance(b, ChainRef) else ChainRef.parse(str(b))
    return ConformerPair(make_pair_id(a, b), a, b, float(v))


def structure_tm_fn(resolver: StructureResolver) -> Callable:
    """TM-score of a candidate state against a held-out reference state, by reference length."""
    def tm(candidate: ChainRef, reference: ChainRef) -> float:
        ref = resolver.backbone(reference)
        cand = resolver.backbone(candidate)
        rm = residue_map(align_pair(ref.sequence, cand.sequence))
        if len(rm) < 5:
            return 0.0
        return geometry.tm_score(ref.ca, cand.ca, rm.pairs, target_length=len(ref))
    return tm


def split_dataset(pairs: Sequence[ConformerPair], benchmark_ids: Iterable[str], tm_threshold: float = 0.4,
                  test_n: int = 94, val_n: int = 100, tm_fn: Optional[Callable] = None,
                  threads: int = 1, provenance: str = "", structures_root=None) -> Manifest:
    """Assign test/val from the benchmark by descending RMSD, filter the rest by TM-score.

    Every remaining pair with either state scoring TM > ``tm_threshold``
    against any test/val state is ``excluded``; the others are ``train``.
    ``tm_fn(candidate_ref, reference_ref)`` supplies the TM-scores.
    """
    benchmark_ids = set(benchmark_ids)
    bench = [p for p in pairs if p.pair_id in benchmark_ids]
    if len(bench) < test_n + val_n:
        raise BenchmarkTooSmall(f"{len(bench)} benchmark pairs for a test+val quota of {test_n + val_n}")
    if tm_fn is None:
        raise ValueError("split_dataset needs a tm_fn")
    bench.sort(key=lambda p: (-p.inter_state_rmsd, p.pair_id))
    assigned = {}
    for p in bench[:test_n]:
        assigned[p.pair_id] = "test"
    for p in bench[test_n:test_n + val_n]:
        assigned[p.pair_id] = "val"
    held_states = [s for p in bench[:test_n + val_n] for s in p.states]
    pool = [p for p in pairs if p.pair_id not in assigned]

    def leaks(p):
        return any(tm_fn(s, h) > tm_threshold for s in p.states for h in held_states)

    flags = parallel_map(leaks, pool, threads)
    for p, bad in zip(pool, flags):
        assigned[p.pair_id] = "excluded" if bad else "train"
    out = [replace(p, split=assigned[p.pair_id]) for p in pairs]
    return Manifest(MANIFEST_VERSION, out, provenance, structures_root)


def read_benchmark(path) -> list:
    """Benchmark file: one pair per line, two ``structure:chain`` refs; ``#`` starts a comment."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two chain references")
            entries.append((ChainRef.parse(parts[0]), ChainRef.parse(parts[1])))
    return entries


def build_dataset(structures_dir, benchmark: Sequence, identity_threshold: float = 0.95,
                  tm_threshold: float = 0.4, test_n: int = 94, val_n: int = 100,
                  threads: int = 1) -> Manifest:
    """Cluster every chain under ``structures_dir`` and split into a manifest.

    Chains shorter than ``MIN_CHAIN_LENGTH`` residues are skipped.
    """
    resolver = StructureResolver(structures_dir)
    backbones = {}
    for ref in resolver.all_refs():
        try:
            bb = resolver.backbone(ref)
        except ResolutionFailure as exc:
            logger.warning("skipping %s: %s", ref, exc)
            continue
        if len(bb) >= MIN_CHAIN_LENGTH:
            backbones[ref] = bb
    clusters = cluster_chains([(ref, bb.sequence) for ref, bb in backbones.items()],
                              identity_threshold, threads=threads)
    pairs = {}
    for cl in clusters:
        if len(cl.members) < 2:
            continue
        attach_rmsd(cl, backbones, threads)
        p = select_max_rmsd_pair(cl)
        if p is not None:
            pairs[p.pair_id] = p
    bench_ids = []
    for a, b in benchmark:
        a, b = sorted((a, b), key=str)
        pid = make_pair_id(a, b)
        if pid not in pairs:
            try:
                v = mapped_ca_rmsd(resolver.backbone(a), resolver.backbone(b))
            except ResolutionFailure as exc:
                raise ResolutionFailure(f"benchmark pair {a} {b}: {exc}") from exc
            pairs[pid] = ConformerPair(pid, a, b, float(v))
        bench_ids.append(pid)
    ordered = [pairs[k] for k in sorted(pairs)]
    for p in ordered:
        p.environment_a = resolver.environment(p.state_a)
        p.environment_b = resolver.environment(p.state_b)
    root = os.path.abspath(structures_dir)
    prov = (f"clusters={len(clusters)} identity>={identity_threshold} tm_max={tm_threshold} "
            f"test_n={test_n} val_n={val_n} benchmark={len(bench_ids)}")
    return split_dataset(ordered, bench_ids, tm_threshold, test_n, val_n,
                         structure_tm_fn(resolver), threads, prov, root)


def _ref_list(refs):
    return [str(r) for r in refs]


def pair_to_record(p: ConformerPair) -> dict:
    return {
        "pair_id": p.pair_id,
        "state_a": str(p.state_a),
        "state_b": str(p.state_b),
        "inter_state_rmsd": p.inter_state_rmsd,
        "environment_a": _ref_list(p.environment_a),
        "environment_b": _ref_list(p.environment_b),
        "split": p.split,
    }


def record_to_pair(rec: dict) -> ConformerPair:
    return ConformerPair(
        pair_id=rec["pair_id"],
        state_a=ChainRef.parse(rec["state_a"]),
        state_b=ChainRef.parse(rec["state_b"]),
        inter_state_rmsd=float(rec["inter_state_rmsd"]),
        environment_a=[ChainRef.parse(r) for r in rec["environment_a"]],
        environment_b=[ChainRef.parse(r) for r in rec["environment_b"]],
        split=rec["split"],
    )


def write_manifest(m: Manifest, path) -> None:
    """JSON lines: a header record followed by one record per pair.

    ``structures_root`` is stored relative to the manifest's directory.
    """
    path = os.fspath(path)
    root = m.structures_root
    if root is not None:
        base = os.path.dirname(os.path.abspath(path))
        root = os.path.relpath(os.path.abspath(root), base)
    header = {"kind": "header", "version": m.version, "provenance": m.provenance, "structures_root": root}
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for p in m.pairs:
                fh.write(json.dumps({"kind": "pair", **pair_to_record(p)}) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path!r}: {exc}") from exc


def read_manifest(path) -> Manifest:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path!r}: {exc}") from exc
    if not lines:
        raise IoFailure(f"manifest {path!r} is empty")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise IoFailure(f"manifest {path!r} lacks a header record")
    if header.get("version") != MANIFEST_VERSION:
        raise SchemaVersionMismatch(
            f"manifest version {header.get('version')!r}, expected {MANIFEST_VERSION}")
    root = header.get("structures_root")
    if root is not None and not os.path.isabs(root):
        root = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(path)), root))
    pairs = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        rec.pop("kind", None)
        pairs.append(record_to_pair(rec))
    return Manifest(header["version"], pairs, header.get("provenance", ""), root)

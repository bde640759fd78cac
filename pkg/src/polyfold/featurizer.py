"""Node/edge features for single conformers and aligned multi-conformer graphs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .alignment import align_pair, identity, residue_map
from .errors import AlignmentTooSparse, EmptyBackbone, ResolutionFailure
from .struct_io import BackboneChain
from .tensorfile import read_tensors, write_tensors

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}
MASK = 20
NUM_TOKENS = 21

POS_DIM = 16
CHAIN_GAP = 100
NODE_SCALAR_DIM = POS_DIM + 6 + 4
EDGE_SCALAR_DIM = geometry.RBF_COUNT + 1
MIN_MAPPED_COLUMNS = 10

_FEATURE_MAGIC = b"PFFT"


def encode_sequence(seq: str) -> np.ndarray:
    """Residue tokens; anything outside the 20 standard residues becomes MASK."""
    return np.array([AA_INDEX.get(a, MASK) for a in seq], dtype=np.int64)


def decode_sequence(tokens) -> str:
    return "".join(AMINO_ACIDS[t] if t < 20 else "X" for t in np.asarray(tokens).tolist())


def derive_seed(seed: Optional[int], *parts) -> Optional[int]:
    """Deterministic child seed from a base seed and string parts."""
    if seed is None:
        return None
    h = hashlib.sha256("|".join([str(seed), *map(str, parts)]).encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass
class ConformerGraph:
    node_scalar: np.ndarray     # N x 26
    node_vector: np.ndarray     # N x 1 x 3
    edge_index: geometry.EdgeList
    edge_scalar: np.ndarray     # E x 33
    edge_vector: np.ndarray     # E x 2 x 3
    context_aa: np.ndarray      # N
    angle_mask: np.ndarray      # N x 5 (phi, psi, omega, kappa, alpha)
    target_span: tuple          # (start, stop) node range of the design chain
    chain_index: np.ndarray     # N, 0 for the target chain
    ca: np.ndarray              # N x 3 coordinates the graph was built from

    @property
    def n_nodes(self):
        return len(self.node_scalar)

    @property
    def src(self):
        return self.edge_index.src

    @property
    def dst(self):
        return self.edge_index.dst


@dataclass
class MultiGraph:
    conformers: list
    column_map: np.ndarray      # columns x k node indices, -1 where gapped
    gap_mask: np.ndarray        # columns x k, True where the conformer has a residue
    target_span: list
    sequences: list = field(default_factory=list)
    pair_id: str = ""

    def __post_init__(self):
        if not self.conformers:
            raise ValueError("a MultiGraph needs at least one conformer")
        if not np.array_equal(self.gap_mask, self.column_map >= 0):
            raise ValueError("gap_mask must mark exactly the resolved columns")
        if not self.gap_mask.any(axis=1).all():
            raise ValueError("every column must be present in at least one conformer")

    @property
    def k(self):
        return len(self.conformers)

    @property
    def n_columns(self):
        return len(self.column_map)

    @property
    def output_columns(self) -> np.ndarray:
        """Columns decoded into the designed sequence: those present in the first state."""
        return np.nonzero(self.gap_mask[:, 0])[0]

    @property
    def native(self) -> str:
        return self.sequences[0] if self.sequences else ""

    def permuted(self, order) -> "MultiGraph":
        order = list(order)
        return MultiGraph([self.conformers[i] for i in order], self.column_map[:, order],
                          self.gap_mask[:, order], [self.target_span[i] for i in order],
                          [self.sequences[i] for i in order] if self.sequences else [], self.pair_id)


def positional_encoding(positions, dim: int = POS_DIM) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, dim, 2) / dim)
    ang = positions * freq
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def mask_partners(env: Sequence[BackboneChain], target_seq: str, threshold: float = 0.70) -> list:
    """Visibility per environment chain: True unless identity to the target exceeds ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    return [identity(align_pair(e.sequence, target_seq)) <= threshold for e in env]


def _angle_features(X):
    dih, dmask = geometry.dihedrals(X)
    va, vmask = geometry.virtual_angles(X)
    ang = np.concatenate([dih, va], axis=1)
    feats = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    # group as (sin phi, cos phi, sin psi, ...) pairs
    feats = feats.reshape(len(X), 2, 5).transpose(0, 2, 1).reshape(len(X), 10)
    return feats, np.concatenate([dmask, vmask], axis=1)


def featurize_conformer(chain: BackboneChain, env: Sequence[BackboneChain] = (), noise_sigma: float = 0.0,
                        seed: Optional[int] = None, k: int = 16, env_visible: Optional[Sequence[bool]] = None,
                        mask_threshold: float = 0.70) -> ConformerGraph:
    """Featurize the target chain together with its environment chains.

    Target nodes come first. Gaussian noise (``noise_sigma`` in Å) is added
    to all backbone atoms before any feature or the k-NN graph is built.
    Environment residue identities are exposed unless the partner is
    masked by :func:`mask_partners`; the target is always MASK.
    """
    if chain is None or len(chain) == 0:
        raise EmptyBackbone("empty target chain")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    chains = [chain, *env]
    if env_visible is None:
        env_visible = mask_partners(env, chain.sequence, mask_threshold)
    rng = np.random.default_rng(seed)

    scalars, vectors_ca, ctx, masks, chain_idx = [], [], [], [], []
    start = 0
    for c, ch in enumerate(chains):
        X = np.array(ch.coords, dtype=np.float64)
        if noise_sigma > 0:
            X = X + rng.normal(0.0, noise_sigma, X.shape)
        n = len(X)
        pe = positional_encoding(np.arange(start, start + n))
        start += n + CHAIN_GAP
        ang, amask = _angle_features(X)
        scalars.append(np.concatenate([pe, ang], axis=1))
        masks.append(amask)
        vectors_ca.append(X[:, 1])
        if c == 0 or not env_visible[c - 1]:
            ctx.append(np.full(n, MASK, dtype=np.int64))
        else:
            ctx.append(encode_sequence(ch.sequence))
        chain_idx.append(np.full(n, c, dtype=np.int64))

    ca = np.concatenate(vectors_ca)
    node_vector = (ca - ca.mean(axis=0))[:, None, :]
    edges = geometry.knn_graph(ca, k)
    diff = ca[edges.src] - ca[edges.dst]
    unit = diff / edges.length[:, None]
    edge_scalar = np.concatenate([geometry.rbf_expand(edges.length), edges.length[:, None]], axis=1)
    edge_vector = np.stack([unit, -unit], axis=1)
    return ConformerGraph(
        node_scalar=np.concatenate(scalars),
        node_vector=node_vector,
        edge_index=edges,
        edge_scalar=edge_scalar,
        edge_vector=edge_vector,
        context_aa=np.concatenate(ctx),
        angle_mask=np.concatenate(masks),
        target_span=(0, len(chain)),
        chain_index=np.concatenate(chain_idx),
        ca=ca,
    )


def _columns_for(seqs: Sequence[str]) -> np.ndarray:
    k = len(seqs)
    if k == 1:
        return np.arange(len(seqs[0]))[:, None]
    if k == 2:
        al = align_pair(seqs[0], seqs[1])
        cols = []
        ia = ib = 0
        for tag in al.columns:
            if tag in ("match", "mismatch"):
                cols.append((ia, ib))
                ia += 1
                ib += 1
            elif tag == "gap_b":
                cols.append((ia, -1))
                ia += 1
            else:
                cols.append((-1, ib))
                ib += 1
        return np.array(cols, dtype=np.int64)
    # k > 2: columns follow the first state; every other state is mapped onto it
    cmap = np.full((len(seqs[0]), k), -1, dtype=np.int64)
    cmap[:, 0] = np.arange(len(seqs[0]))
    for c in range(1, k):
        rm = residue_map(align_pair(seqs[0], seqs[c]))
        for a, b in rm.pairs:
            cmap[a, c] = b
    return cmap


def build_multigraph_from_states(states: Sequence, noise_sigma: float = 0.0, seed: Optional[int] = None,
                                 pair_id: str = "", k: int = 16, mask_threshold: float = 0.70) -> MultiGraph:
    """``states`` holds (target BackboneChain, environment chains) per conformer."""
    graphs = [
        featurize_conformer(chain, env, noise_sigma, derive_seed(seed, pair_id, i), k,
                            mask_threshold=mask_threshold)
        for i, (chain, env) in enumerate(states)
    ]
    seqs = [chain.sequence for chain, _ in states]
    cmap = _columns_for(seqs)
    if len(states) > 1:
        mapped = int((cmap >= 0).all(axis=1).sum())
        # short chains only need every residue of the shorter state mapped
        if mapped < min(MIN_MAPPED_COLUMNS, min(len(s) for s in seqs)):
            raise AlignmentTooSparse(f"{pair_id or 'states'}: only {mapped} aligned columns")
    return MultiGraph(graphs, cmap, cmap >= 0, [g.target_span for g in graphs], seqs, pair_id)


def build_multigraph(pair, structures, noise_sigma: float = 0.0, seed: Optional[int] = None,
                     k: int = 16, mask_threshold: float = 0.70) -> MultiGraph:
    """Featurize both states of a ConformerPair, resolved through ``structures``."""
    states = []
    try:
        for ref, env_refs in ((pair.state_a, pair.environment_a), (pair.state_b, pair.environment_b)):
            chain = structures.backbone(ref)
            env = [structures.backbone(r) for r in env_refs]
            states.append((chain, env))
    except ResolutionFailure:
        raise
    except Exception as exc:
        raise ResolutionFailure(f"{pair.pair_id}: {exc}") from exc
    return build_multigraph_from_states(states, noise_sigma, seed, pair.pair_id, k, mask_threshold)


def dump_features(g: ConformerGraph, path, meta: Optional[dict] = None) -> None:
    """Write a conformer's feature tensors (float32) for cross-implementation diffing."""
    tensors = {
        "node_scalar": g.node_scalar,
        "node_vector": g.node_vector,
        "edge_src": g.src,
        "edge_dst": g.dst,
        "edge_scalar": g.edge_scalar,
        "edge_vector": g.edge_vector,
        "context_aa": g.context_aa,
        "angle_mask": g.angle_mask,
    }
    write_tensors(path, tensors, {"target_span": list(g.target_span), **(meta or {})}, _FEATURE_MAGIC)


def load_features(path) -> tuple:
    return read_tensors(path, _FEATURE_MAGIC)

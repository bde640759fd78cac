"""Multi-state GVP encoder, conformer pooling and autoregressive decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..errors import EmptyColumn, LengthMismatch
from ..featurizer import (EDGE_SCALAR_DIM, MASK, NODE_SCALAR_DIM, NUM_TOKENS, ConformerGraph, MultiGraph,
                          decode_sequence, encode_sequence)
from .layers import GVP, MessageLayer

NUM_AA = 20


@dataclass
class ModelConfig:
    node_s: int = 128
    node_v: int = 16
    edge_s: int = 32
    edge_v: int = 1
    n_encoder: int = 8
    n_decoder: int = 8
    k: int = 16
    dropout: float = 0.1

    def to_dict(self):
        return asdict(self)


@dataclass
class PooledEmbedding:
    s: torch.Tensor        # columns x node_s
    v: torch.Tensor        # columns x node_v x 3
    columns: np.ndarray    # alignment column index of each row


@dataclass
class DecoderGraph:
    """Target-only graph over output positions; edges are the union over conformers."""

    src: torch.Tensor
    dst: torch.Tensor
    edge_scalar: torch.Tensor
    edge_vector: torch.Tensor
    columns: np.ndarray


class MultiStateGVP(nn.Module):
    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        node_dims = (config.node_s, config.node_v)
        edge_dims = (config.edge_s, config.edge_v)
        self.node_in_norm = nn.LayerNorm(NODE_SCALAR_DIM)
        self.edge_in_norm = nn.LayerNorm(EDGE_SCALAR_DIM)
        self.node_in = GVP((NODE_SCALAR_DIM, 1), node_dims, activation=False)
        self.edge_in = GVP((EDGE_SCALAR_DIM, 2), edge_dims, activation=False)
        self.aa_embed = nn.Embedding(NUM_TOKENS, config.node_s)
        self.encoder_layers = nn.ModuleList(
            MessageLayer(node_dims, edge_dims, config.dropout) for _ in range(config.n_encoder))
        self.decoder_layers = nn.ModuleList(
            MessageLayer(node_dims, (config.edge_s + config.node_s, config.edge_v), config.dropout)
            for _ in range(config.n_decoder))
        self.out_head = nn.Linear(config.node_s, NUM_AA)

    @property
    def dtype(self):
        return self.out_head.weight.dtype

    def _t(self, x, dtype=None):
        return torch.as_tensor(np.asarray(x), dtype=dtype or self.dtype)

    def embed_edges(self, e_s, e_v):
        return self.edge_in(self.edge_in_norm(e_s), e_v)

    def encode_conformer(self, g: ConformerGraph):
        s, v = self.node_in(self.node_in_norm(self._t(g.node_scalar)), self._t(g.node_vector))
        s = s + self.aa_embed(torch.as_tensor(g.context_aa, dtype=torch.long))
        e_s, e_v = self.embed_edges(self._t(g.edge_scalar), self._t(g.edge_vector))
        src = torch.as_tensor(g.src, dtype=torch.long)
        dst = torch.as_tensor(g.dst, dtype=torch.long)
        for layer in self.encoder_layers:
            s, v = layer(s, v, src, dst, e_s, e_v)
        return s, v


def encode(mg: MultiGraph, model: MultiStateGVP) -> list:
    """Per-conformer node embeddings; conformers never exchange information."""
    return [model.encode_conformer(g) for g in mg.conformers]


def pool_conformations(embeddings: Sequence, mg: MultiGraph) -> PooledEmbedding:
    """Mean of target-node embeddings over the conformers present at each column."""
    s_sum = v_sum = None
    count = torch.zeros(mg.n_columns, dtype=torch.long)
    for c, (s, v) in enumerate(embeddings):
        present = torch.as_tensor(mg.gap_mask[:, c])
        idx = torch.as_tensor(np.where(mg.gap_mask[:, c], mg.column_map[:, c], 0), dtype=torch.long)
        sc = torch.where(present[:, None], s[idx], torch.zeros((), dtype=s.dtype))
        vc = torch.where(present[:, None, None], v[idx], torch.zeros((), dtype=v.dtype))
        s_sum = sc if s_sum is None else s_sum + sc
        v_sum = vc if v_sum is None else v_sum + vc
        count = count + present.long()
    if (count == 0).any():
        raise EmptyColumn("a column is gapped in every conformer")
    denom = count.to(s_sum.dtype)
    return PooledEmbedding(s_sum / denom[:, None], v_sum / denom[:, None, None], np.arange(mg.n_columns))


def decoder_graph(mg: MultiGraph, model: MultiStateGVP) -> DecoderGraph:
    """Union of per-conformer k-NN edges among output positions, features averaged."""
    cols = mg.output_columns
    L = len(cols)
    pos_of_col = np.full(mg.n_columns, -1, dtype=np.int64)
    pos_of_col[cols] = np.arange(L)
    keys, es, ev = [], [], []
    for c, g in enumerate(mg.conformers):
        start, stop = g.target_span
        node_pos = np.full(g.n_nodes, -1, dtype=np.int64)
        present = mg.gap_mask[:, c]
        node_pos[mg.column_map[present, c]] = pos_of_col[np.nonzero(present)[0]]
        node_pos[:start] = -1
        node_pos[stop:] = -1
        ps, pd = node_pos[g.src], node_pos[g.dst]
        keep = (ps >= 0) & (pd >= 0)
        keys.append(ps[keep] * L + pd[keep])
        es.append(g.edge_scalar[keep])
        ev.append(g.edge_vector[keep])
    keys = np.concatenate(keys)
    es = np.concatenate(es)
    ev = np.concatenate(ev)
    uniq, inv = np.unique(keys, return_inverse=True)
    s_sum = np.zeros((len(uniq), es.shape[1]))
    v_sum = np.zeros((len(uniq),) + ev.shape[1:])
    cnt = np.zeros(len(uniq))
    np.add.at(s_sum, inv, es)
    np.add.at(v_sum, inv, ev)
    np.add.at(cnt, inv, 1.0)
    return DecoderGraph(
        src=torch.as_tensor(uniq // L, dtype=torch.long),
        dst=torch.as_tensor(uniq % L, dtype=torch.long),
        edge_scalar=model._t(s_sum / cnt[:, None]),
        edge_vector=model._t(v_sum / cnt[:, None, None]),
        columns=cols,
    )


def _tokens(sequence, L):
    tokens = encode_sequence(sequence) if isinstance(sequence, str) else np.asarray(sequence, dtype=np.int64)
    if len(tokens) != L:
        raise LengthMismatch(f"sequence length {len(tokens)} != {L} output columns")
    return torch.as_tensor(tokens, dtype=torch.long)


def _decoder_inputs(pooled: PooledEmbedding, mg: MultiGraph, model: MultiStateGVP, dg: Optional[DecoderGraph]):
    dg = dg or decoder_graph(mg, model)
    rows = torch.as_tensor(dg.columns, dtype=torch.long)
    s0, v0 = pooled.s[rows], pooled.v[rows]
    e_s, e_v = model.embed_edges(dg.edge_scalar, dg.edge_vector)
    return dg, s0, v0, e_s, e_v


def decode_logits(pooled: PooledEmbedding, mg: MultiGraph, sequence, model: MultiStateGVP,
                  dg: Optional[DecoderGraph] = None) -> torch.Tensor:
    """Teacher-forced logits (positions x 20) in a single causal sweep.

    A message from neighbour j to position i carries j's decoder state and
    residue embedding when j < i, and only j's encoder state otherwise.
    """
    dg, s0, v0, e_s, e_v = _decoder_inputs(pooled, mg, model, dg)
    tokens = _tokens(sequence, len(dg.columns))
    src, dst = dg.src, dg.dst
    seen = (dst < src)
    seq_e = model.aa_embed(tokens)[dst] * seen[:, None].to(s0.dtype)
    e_s_dec = torch.cat([e_s, seq_e], dim=-1)
    s, v = s0, v0
    for layer in model.decoder_layers:
        nbr_s = torch.where(seen[:, None], s[dst], s0[dst])
        nbr_v = torch.where(seen[:, None, None], v[dst], v0[dst])
        s, v = layer(s, v, src, dst, e_s_dec, e_v, nbr=(nbr_s, nbr_v))
    return model.out_head(s)


class IncrementalDecoder:
    """Position-by-position decoding with cached per-layer states.

    Equivalent to :func:`decode_logits` but each step only touches the
    edges into the current position.
    """

    def __init__(self, pooled, mg, model, dg=None):
        self.model = model
        self.dg, self.s0, self.v0, self.e_s, self.e_v = _decoder_inputs(pooled, mg, model, dg)
        self.L = len(self.dg.columns)
        n_layers = len(model.decoder_layers)
        self.cache_s = [self.s0.clone()] + [torch.zeros_like(self.s0) for _ in range(n_layers)]
        self.cache_v = [self.v0.clone()] + [torch.zeros_like(self.v0) for _ in range(n_layers)]
        self.seq_embed = torch.zeros_like(self.s0)
        src = self.dg.src.numpy()
        self._edges_of = [torch.as_tensor(np.nonzero(src == i)[0], dtype=torch.long) for i in range(self.L)]
        self.pos = 0

    def step(self) -> torch.Tensor:
        """Logits for the current position given every residue fixed so far."""
        i = self.pos
        eidx = self._edges_of[i]
        dst = self.dg.dst[eidx]
        seen = dst < i
        seq_e = self.seq_embed[dst] * seen[:, None].to(self.s0.dtype)
        e_s = torch.cat([self.e_s[eidx], seq_e], dim=-1)
        e_v = self.e_v[eidx]
        zeros = torch.zeros(len(eidx), dtype=torch.long)
        for l, layer in enumerate(self.model.decoder_layers):
            s_l, v_l = self.cache_s[l], self.cache_v[l]
            s_i, v_i = s_l[i:i + 1], v_l[i:i + 1]
            nbr_s = torch.where(seen[:, None], s_l[dst], self.s0[dst])
            nbr_v = torch.where(seen[:, None, None], v_l[dst], self.v0[dst])
            m_s, m_v = layer.edge_messages(s_i[zeros], v_i[zeros], nbr_s, nbr_v, e_s, e_v)
            agg_s = m_s.sum(dim=0, keepdim=True)
            agg_v = m_v.sum(dim=0, keepdim=True)
            s_new, v_new = layer.node_update(s_i, v_i, agg_s, agg_v)
            self.cache_s[l + 1][i] = s_new[0]
            self.cache_v[l + 1][i] = v_new[0]
        return self.model.out_head(self.cache_s[-1][i])

    def commit(self, token: int):
        self.seq_embed[self.pos] = self.model.aa_embed.weight[int(token)]
        self.pos += 1


def run_encoder(mg: MultiGraph, model: MultiStateGVP) -> PooledEmbedding:
    return pool_conformations(encode(mg, model), mg)


def sequence_log_probs(pooled, mg, sequence, model, dg=None) -> torch.Tensor:
    """Per-position log-probabilities of ``sequence`` under teacher forcing."""
    logits = decode_logits(pooled, mg, sequence, model, dg)
    tokens = _tokens(sequence, logits.shape[0])
    logp = F.log_softmax(logits, dim=-1)
    safe = torch.clamp(tokens, max=NUM_AA - 1)
    return torch.where(tokens < NUM_AA, logp.gather(1, safe[:, None])[:, 0], torch.zeros((), dtype=logp.dtype))


@torch.no_grad()
def incremental_log_probs(pooled, mg, sequence, model) -> torch.Tensor:
    dec = IncrementalDecoder(pooled, mg, model)
    tokens = _tokens(sequence, dec.L)
    out = []
    for i in range(dec.L):
        logp = F.log_softmax(dec.step(), dim=-1)
        t = int(tokens[i])
        out.append(logp[t] if t < NUM_AA else torch.zeros((), dtype=logp.dtype))
        dec.commit(t)
    return torch.stack(out)


@dataclass
class SampledSequence:
    sequence: str
    log_probs: np.ndarray      # per-residue log p under the untempered model

    @property
    def total_log_prob(self) -> float:
        return float(self.log_probs.sum())


@torch.no_grad()
def sample_sequences(pooled, mg, model, n: int = 16, temperature: float = 0.1,
                     seed: Optional[int] = None) -> list:
    """Left-to-right sampling from softmax(logits / temperature).

    ``temperature == 0`` decodes greedily (argmax).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        dec = IncrementalDecoder(pooled, mg, model)
        tokens, lps = [], []
        for _ in range(dec.L):
            logits = dec.step().double()
            logp = F.log_softmax(logits, dim=-1).numpy()
            if temperature == 0:
                t = int(np.argmax(logp))
            else:
                p = np.exp(F.log_softmax(logits / temperature, dim=-1).numpy())
                p = p / p.sum()
                t = int(rng.choice(NUM_AA, p=p))
            tokens.append(t)
            lps.append(logp[t])
            dec.commit(t)
        out.append(SampledSequence(decode_sequence(tokens), np.array(lps)))
    return out


def recovery_and_perplexity(logits: torch.Tensor, sequence) -> tuple:
    """Argmax recovery and perplexity of one sequence, ignoring non-standard positions."""
    tokens = _tokens(sequence, logits.shape[0])
    valid = tokens < NUM_AA
    if not valid.any():
        return float("nan"), float("nan")
    logits = logits.detach()
    pred = logits.argmax(dim=-1)
    rec = (pred[valid] == tokens[valid]).double().mean().item()
    nll = F.cross_entropy(logits[valid].double(), tokens[valid], reduction="mean").item()
    return rec, float(np.exp(nll))


@torch.no_grad()
def score_sequences(pooled, mg, model, seqs: Sequence) -> tuple:
    """Mean recovery and perplexity over ``seqs``, each decoded teacher-forced.

    Recovery compares the argmax prediction with the native residue;
    perplexity is exp of the per-position NLL of ``seqs`` (positions pooled).
    """
    dg = decoder_graph(mg, model)
    native = _tokens(mg.native, design_length(mg))
    recs, nll_sum, count = [], 0.0, 0
    for seq in seqs:
        logits = decode_logits(pooled, mg, seq, model, dg)
        tokens = _tokens(seq, logits.shape[0])
        valid = tokens < NUM_AA
        if not valid.any():
            continue
        nat = native < NUM_AA
        if nat.any():
            recs.append((logits.argmax(dim=-1)[nat] == native[nat]).double().mean().item())
        nll_sum += F.cross_entropy(logits[valid].double(), tokens[valid], reduction="sum").item()
        count += int(valid.sum())
    if not count:
        return float("nan"), float("nan")
    return float(np.mean(recs)), float(np.exp(nll_sum / count))


def native_tokens(mg: MultiGraph) -> np.ndarray:
    return encode_sequence(mg.native)


def design_length(mg: MultiGraph) -> int:
    return len(mg.output_columns)


"""Small models and multi-state inputs shared by the network tests."""

import numpy as np
import torch

from polyfold.featurizer import build_multigraph_from_states
from polyfold.gvpnn import ModelConfig, MultiStateGVP
from polyfold.synthetic import hinge_variant, make_chain, mutate, toy_chain


def small_model(seed=0, dtype=torch.float64, node_s=16, node_v=4, edge_s=8, layers=2, k=16):
    torch.manual_seed(seed)
    cfg = ModelConfig(node_s=node_s, node_v=node_v, edge_s=edge_s, n_encoder=layers, n_decoder=layers,
                      k=k, dropout=0.0)
    model = MultiStateGVP(cfg).to(dtype)
    # perturb biases and gates away from their zero init so every path carries signal
    with torch.no_grad():
        g = torch.Generator().manual_seed(seed + 1)
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    model.eval()
    return model


def two_state_pair(n, rng, drop=None, partner=True):
    """Two hinge conformers of one chain (optionally one residue dropped from B) plus a partner."""
    a = toy_chain(n, rng)
    Xb = hinge_variant(a.coords, rng, hinge=max(1, n // 2), angle=0.8)
    seq_b = a.sequence
    if drop is not None:
        keep = [i for i in range(n) if i != drop]
        Xb, seq_b = Xb[keep], "".join(a.sequence[i] for i in keep)
    b = make_chain(seq_b, Xb)
    env = [toy_chain(6, rng, chain_id="B", offset=a.ca.mean(0) + 9.0)] if partner else []
    return [(a, env), (b, env)]


def moved_states(states, R, t):
    out = []
    for chain, env in states:
        mv = lambda c: make_chain(c.sequence, c.coords @ R.T + t, c.chain_id)
        out.append((mv(chain), [mv(e) for e in env]))
    return out


def toy_multigraph(n, rng, seed=None, k=16, **kw):
    return build_multigraph_from_states(two_state_pair(n, rng, **kw), seed=seed, k=k)

"""Geometric vector perceptron layers.

Scalar features have shape ``[..., n_s]``; vector features ``[..., n_v, 3]``.
Every operation on vectors is a linear channel mix, a norm, or a scalar
gate, so vector outputs rotate with the inputs and scalar outputs do not.
"""

import math

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import ShapeMismatch

NORM_EPS = 1e-8


def norm_no_nan(v, eps=NORM_EPS):
    """Row norms of ``[..., c, 3]`` vectors, clamped to avoid a NaN gradient at zero."""
    return torch.sqrt(torch.clamp(torch.sum(v * v, dim=-1), min=eps))


class GVP(nn.Module):
    """One geometric vector perceptron with vector gating.

    V_h = W_h v, s' = relu(W_m [s, |V_h|] + b), V_mu = W_mu V_h,
    v' = sigmoid(W_g s' + b_g) * V_mu.
    """

    def __init__(self, in_dims, out_dims, activation=True):
        super().__init__()
        self.si, self.vi = in_dims
        self.so, self.vo = out_dims
        self.activation = activation
        self.h = max(self.vi, self.vo)
        if self.vi:
            self.W_h = nn.Linear(self.vi, self.h, bias=False)
        if self.vo:
            if not self.vi:
                raise ValueError("vector outputs need vector inputs")
            self.W_mu = nn.Linear(self.h, self.vo, bias=False)
            self.W_g = nn.Linear(self.so, self.vo)
        self.W_m = nn.Linear(self.si + (self.h if self.vi else 0), self.so)
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.W_m.in_features)
        nn.init.uniform_(self.W_m.weight, -math.sqrt(3) * bound, math.sqrt(3) * bound)
        nn.init.zeros_(self.W_m.bias)
        if self.vi:
            nn.init.orthogonal_(self.W_h.weight)
        if self.vo:
            nn.init.orthogonal_(self.W_mu.weight)
            self.W_mu.weight.data.mul_(1.0 / math.sqrt(self.h))
            nn.init.uniform_(self.W_g.weight, -1.0 / math.sqrt(self.so), 1.0 / math.sqrt(self.so))
            nn.init.zeros_(self.W_g.bias)

    def forward(self, s, v=None):
        if s.shape[-1] != self.si:
            raise ShapeMismatch(f"GVP expects {self.si} scalar channels, got {s.shape[-1]}")
        if self.vi:
            if v is None or v.shape[-2] != self.vi or v.shape[-1] != 3:
                got = None if v is None else tuple(v.shape[-2:])
                raise ShapeMismatch(f"GVP expects ({self.vi}, 3) vector channels, got {got}")
            vh = self.W_h(v.transpose(-1, -2)).transpose(-1, -2)
            s_out = self.W_m(torch.cat([s, norm_no_nan(vh)], dim=-1))
        else:
            s_out = self.W_m(s)
        if self.activation:
            s_out = F.relu(s_out)
        if not self.vo:
            return s_out, None
        vmu = self.W_mu(vh.transpose(-1, -2)).transpose(-1, -2)
        gate = torch.sigmoid(self.W_g(s_out))
        return s_out, gate.unsqueeze(-1) * vmu


class GVPLayerNorm(nn.Module):
    """LayerNorm on scalars; vectors divided by their RMS channel norm."""

    def __init__(self, dims):
        super().__init__()
        self.s_norm = nn.LayerNorm(dims[0])
        self.has_v = dims[1] > 0

    def forward(self, s, v=None):
        s = self.s_norm(s)
        if self.has_v and v is not None:
            vn = torch.sqrt(torch.mean(torch.clamp(torch.sum(v * v, dim=-1), min=NORM_EPS), dim=-1, keepdim=True))
            v = v / vn.unsqueeze(-1)
        return s, v


class MessageLayer(nn.Module):
    """Message GVP over (s_i, v_i, s_j, v_j, e_ij), sum aggregate, update GVP, residual + norm."""

    def __init__(self, node_dims, edge_dims, drop_rate=0.0):
        super().__init__()
        ns, nv = node_dims
        es, ev = edge_dims
        self.message = GVP((2 * ns + es, 2 * nv + ev), (ns, nv))
        self.update = GVP((2 * ns, 2 * nv), (ns, nv))
        self.norm = GVPLayerNorm(node_dims)
        self.dropout = nn.Dropout(drop_rate)

    def edge_messages(self, s_i, v_i, s_j, v_j, e_s, e_v):
        return self.message(torch.cat([s_i, s_j, e_s], dim=-1), torch.cat([v_i, v_j, e_v], dim=-2))

    def node_update(self, s, v, m_s, m_v):
        ds, dv = self.update(torch.cat([s, m_s], dim=-1), torch.cat([v, m_v], dim=-2))
        return self.norm(s + self.dropout(ds), v + dv)

    def forward(self, s, v, src, dst, e_s, e_v, nbr=None):
        """Node ``src[e]`` receives the message from neighbour ``dst[e]``.

        ``nbr`` optionally replaces the neighbour features per edge (used by
        the causal decoder); it is a ``(s_j, v_j)`` pair already gathered.
        """
        if nbr is None:
            s_j, v_j = s[dst], v[dst]
        else:
            s_j, v_j = nbr
        m_s, m_v = self.edge_messages(s[src], v[src], s_j, v_j, e_s, e_v)
        agg_s = torch.zeros_like(s).index_add_(0, src, m_s)
        agg_v = torch.zeros_like(v).index_add_(0, src, m_v)
        return self.node_update(s, v, agg_s, agg_v)

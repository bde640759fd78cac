"""Superposition and geometric primitives. All angles are in radians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyBackbone, LengthMismatch, TooShort

RBF_COUNT = 32
RBF_MAX = 20.0


@dataclass(frozen=True)
class Superposition:
    """Rigid transform mapping the moving set onto the reference: ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float
    degenerate: bool = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class EdgeList:
    src: np.ndarray
    dst: np.ndarray
    length: np.ndarray
    k: int

    def __len__(self):
        return len(self.src)

    @property
    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.length.tolist()))


def _check_pair(P, Q):
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise LengthMismatch(f"coordinate sets differ in shape: {P.shape} vs {Q.shape}")
    return P, Q


def kabsch_superpose(P, Q) -> Superposition:
    """Optimal proper rotation taking ``Q`` onto ``P`` (reference).

    Rank-deficient covariance (collinear or coincident points) still
    yields a proper rotation; the result is flagged ``degenerate``.
    """
    P, Q = _check_pair(P, Q)
    if P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("expected n x 3 coordinates")
    if len(P) < 3:
        raise TooShort("Kabsch superposition needs at least 3 points")
    if np.isnan(P).any() or np.isnan(Q).any():
        raise ValueError("NaN in coordinates")
    cp = P.mean(axis=0)
    cq = Q.mean(axis=0)
    p = P - cp
    q = Q - cq
    H = q.T @ p
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = cp - R @ cq
    diff = q @ R.T - p
    value = float(np.sqrt(max(np.mean(np.sum(diff * diff, axis=1)), 0.0)))
    degenerate = bool(S[0] == 0 or S[1] <= 1e-9 * S[0])
    return Superposition(R, t, value, degenerate)


def rmsd(P, Q, superposed: bool = True) -> float:
    P, Q = _check_pair(P, Q)
    if superposed:
        return kabsch_superpose(P, Q).rmsd
    diff = P - Q
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1))))


def _as_ca(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, 1] if x.ndim == 3 else x


def tm_d0(length: int) -> float:
    if length <= 15:
        return 0.5
    return max(0.5, 1.24 * np.cbrt(length - 15) - 1.8)


def _tm_sum(d, d0):
    return float(np.sum(1.0 / (1.0 + (d / d0) ** 2)))


def tm_score(P, Q, mapping: Optional[Sequence] = None, *, n_rounds: int = 20,
             target_length: Optional[int] = None) -> float:
    """TM-score of model ``Q`` against target ``P``, normalized by the target length.

    ``mapping`` lists (index_in_P, index_in_Q) pairs; identity when omitted.
    The superposition search seeds from contiguous fragments of length
    L, L/2 and L/4 over the mapped pairs and refines each seed for up to
    ``n_rounds`` rounds on the residues within the distance cutoff.
    """
    P = _as_ca(P)
    Q = _as_ca(Q)
    if mapping is None:
        if len(P) != len(Q):
            raise LengthMismatch("identity mapping needs equal lengths")
        ia = ib = np.arange(len(P))
    else:
        pairs = np.asarray(list(mapping), dtype=np.int64).reshape(-1, 2)
        ia, ib = pairs[:, 0], pairs[:, 1]
    n = len(ia)
    if n < 5:
        raise TooShort(f"TM-score needs at least 5 aligned pairs, got {n}")
    L = target_length if target_length is not None else len(P)
    x = P[ia]
    y = Q[ib]
    d0 = tm_d0(L)
    d0_search = min(max(d0, 4.5), 8.0)

    best = 0.0
    seen_seeds = set()
    for frag in sorted({n, max(n // 2, 4), max(n // 4, 4)}, reverse=True):
        step = max(1, frag // 4)
        for start in range(0, n - frag + 1, step):
            sel = np.zeros(n, dtype=bool)
            sel[start:start + frag] = True
            key = sel.tobytes()
            if key in seen_seeds:
                continue
            seen_seeds.add(key)
            for _ in range(n_rounds):
                sup = kabsch_superpose(x[sel], y[sel])
                d = np.linalg.norm(sup.apply(y) - x, axis=1)
                best = max(best, _tm_sum(d, d0) / L)
                cut = d0_search
                new = d < cut
                while new.sum() < 3:
                    cut += 0.5
                    new = d < cut
                if np.array_equal(new, sel):
                    break
                sel = new
    return min(best, 1.0)


def _torsion(a, b, c, d):
    """Signed torsion of four points (broadcast over leading axes), plus validity."""
    b0 = a - b
    b1 = c - b
    b2 = d - c
    b1n = np.linalg.norm(b1, axis=-1, keepdims=True)
    u = b1 / np.where(b1n > 0, b1n, 1.0)
    v = b0 - np.sum(b0 * u, axis=-1, keepdims=True) * u
    w = b2 - np.sum(b2 * u, axis=-1, keepdims=True) * u
    x = np.sum(v * w, axis=-1)
    y = np.sum(np.cross(u, v) * w, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    ref = np.maximum(np.linalg.norm(b0, axis=-1), np.linalg.norm(b2, axis=-1))
    valid = (b1n[..., 0] > 0) & (nv > 1e-9 * np.maximum(ref, 1.0)) & (nw > 1e-9 * np.maximum(ref, 1.0))
    ang = np.where(valid, np.arctan2(y, x), 0.0)
    return _wrap(ang), valid


def _bond_angle(a, b, c):
    u = a - b
    v = c - b
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    valid = (nu > 0) & (nv > 0)
    cos = np.sum(u * v, axis=-1) / np.where(valid, nu * nv, 1.0)
    ang = np.arccos(np.clip(cos, -1.0, 1.0))
    return np.where(valid, ang, 0.0), valid


def _wrap(ang):
    # map -pi onto pi so outputs lie in (-pi, pi]
    return np.where(ang <= -np.pi, ang + 2 * np.pi, ang)


def torsion(a, b, c, d) -> float:
    ang, _ = _torsion(*(np.asarray(x, dtype=np.float64) for x in (a, b, c, d)))
    return float(ang)


def dihedrals(chain) -> tuple:
    """Backbone (phi, psi, omega) per residue and an n x 3 validity mask.

    phi_i uses C(i-1); psi_i and omega_i use residue i+1, so the first phi
    and the last psi/omega are undefined and reported as 0, masked invalid.
    """
    X = np.asarray(getattr(chain, "coords", chain), dtype=np.float64)
    n = len(X)
    if n == 0:
        raise EmptyBackbone("no residues")
    angles = np.zeros((n, 3))
    mask = np.zeros((n, 3), dtype=bool)
    if n >= 2:
        N, CA, C = X[:, 0], X[:, 1], X[:, 2]
        phi, vphi = _torsion(C[:-1], N[1:], CA[1:], C[1:])
        psi, vpsi = _torsion(N[:-1], CA[:-1], C[:-1], N[1:])
        omg, vomg = _torsion(CA[:-1], C[:-1], N[1:], CA[1:])
        angles[1:, 0], mask[1:, 0] = phi, vphi
        angles[:-1, 1], mask[:-1, 1] = psi, vpsi
        angles[:-1, 2], mask[:-1, 2] = omg, vomg
    return angles, mask


def virtual_angles(chain) -> tuple:
    """Virtual CA bond angle kappa and torsion alpha per residue, with masks.

    kappa_i spans CA(i-2), CA(i), CA(i+2); alpha_i spans CA(i-1..i+2).
    """
    X = np.asarray(getattr(chain, "coords", chain), dtype=np.float64)
    ca = X[:, 1] if X.ndim == 3 else X
    n = len(ca)
    angles = np.zeros((n, 2))
    mask = np.zeros((n, 2), dtype=bool)
    if n >= 5:
        k, vk = _bond_angle(ca[:-4], ca[2:-2], ca[4:])
        angles[2:-2, 0], mask[2:-2, 0] = k, vk
    if n >= 4:
        a, va = _torsion(ca[:-3], ca[1:-2], ca[2:-1], ca[3:])
        angles[1:-2, 1], mask[1:-2, 1] = a, va
    return angles, mask


def knn_graph(coords, k: int = 16) -> EdgeList:
    """Directed k-NN edges ``src -> dst`` where dst is one of src's nearest neighbours.

    Ties in distance go to the lower index. Distances are ranked at
    1e-9 Å resolution so roundoff from a rigid motion cannot reorder ties.
    """
    x = np.asarray(coords, dtype=np.float64)
    n = len(x)
    kk = min(k, n - 1)
    if kk <= 0:
        return EdgeList(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), k)
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps lower index first among equal distances
    order = np.argsort(np.round(dist, 9), axis=1, kind="stable")[:, :kk]
    src = np.repeat(np.arange(n), kk)
    dst = order.reshape(-1)
    return EdgeList(src, dst, dist[src, dst], k)


def rbf_centers(count: int = RBF_COUNT, d_max: float = RBF_MAX) -> tuple:
    mu = np.linspace(0.0, d_max, count)
    return mu, mu[1] - mu[0]


def rbf_expand(d, count: int = RBF_COUNT, d_max: float = RBF_MAX) -> np.ndarray:
    """Gaussian radial basis of distances; trailing axis has ``count`` entries."""
    mu, sigma = rbf_centers(count, d_max)
    d = np.asarray(d, dtype=np.float64)[..., None]
    return np.exp(-((d - mu) ** 2) / (2 * sigma ** 2))

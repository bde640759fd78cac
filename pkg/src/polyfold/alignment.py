"""Global pairwise sequence alignment and residue correspondence maps."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptySequence

MATCH = 1
MISMATCH = -1
GAP_OPEN = -2
GAP_EXTEND = -1

_NEG = float("-inf")
# traceback states
_M, _X, _Y = 0, 1, 2


@dataclass(frozen=True)
class Alignment:
    aligned_a: str
    aligned_b: str
    score: int
    columns: tuple  # per-column tag: "match", "mismatch", "gap_a" (gap in a) or "gap_b"

    def __post_init__(self):
        if len(self.aligned_a) != len(self.aligned_b):
            raise ValueError("aligned rows differ in length")

    @property
    def seq_a(self) -> str:
        return self.aligned_a.replace("-", "")

    @property
    def seq_b(self) -> str:
        return self.aligned_b.replace("-", "")


@dataclass(frozen=True)
class ResidueMap:
    pairs: tuple

    @property
    def index_a(self):
        return [p[0] for p in self.pairs]

    @property
    def index_b(self):
        return [p[1] for p in self.pairs]

    def __len__(self):
        return len(self.pairs)


def _sub(x: str, y: str) -> int:
    # unknown residues never count as identical
    return MATCH if (x == y and x != "X") else MISMATCH


def align_pair(a: str, b: str, match: int = MATCH, mismatch: int = MISMATCH,
               gap_open: int = GAP_OPEN, gap_extend: int = GAP_EXTEND) -> Alignment:
    """Needleman-Wunsch with affine gaps (Gotoh).

    A gap run of length L scores ``gap_open + (L - 1) * gap_extend``.
    Traceback prefers diagonal, then up (gap in b), then left (gap in a).
    """
    if not a or not b:
        raise EmptySequence("cannot align an empty sequence")
    n, m = len(a), len(b)

    def sub(x, y):
        return match if (x == y and x != "X") else mismatch

    # M: ends in a[i-1]/b[j-1] pair, X: ends with a[i-1] against a gap, Y: b[j-1] against a gap
    M = [[_NEG] * (m + 1) for _ in range(n + 1)]
    X = [[_NEG] * (m + 1) for _ in range(n + 1)]
    Y = [[_NEG] * (m + 1) for _ in range(n + 1)]
    # back-pointers hold the predecessor state
    PM = [[0] * (m + 1) for _ in range(n + 1)]
    PX = [[0] * (m + 1) for _ in range(n + 1)]
    PY = [[0] * (m + 1) for _ in range(n + 1)]
    M[0][0] = 0
    for i in range(1, n + 1):
        X[i][0] = gap_open + (i - 1) * gap_extend
        PX[i][0] = _X if i > 1 else _M
    for j in range(1, m + 1):
        Y[0][j] = gap_open + (j - 1) * gap_extend
        PY[0][j] = _Y if j > 1 else _M

    for i in range(1, n + 1):
        ai = a[i - 1]
        Mi, Xi, Yi = M[i], X[i], Y[i]
        Mp, Xp, Yp = M[i - 1], X[i - 1], Y[i - 1]
        PMi, PXi, PYi = PM[i], PX[i], PY[i]
        for j in range(1, m + 1):
            # M
            best, arg = Mp[j - 1], _M
            if Xp[j - 1] > best:
                best, arg = Xp[j - 1], _X
            if Yp[j - 1] > best:
                best, arg = Yp[j - 1], _Y
            Mi[j] = best + sub(ai, b[j - 1])
            PMi[j] = arg
            # X (up)
            o, e = Mp[j] + gap_open, Xp[j] + gap_extend
            if o >= e:
                Xi[j], PXi[j] = o, _M
            else:
                Xi[j], PXi[j] = e, _X
            # a Y->X transition would put gaps in both rows of adjacent columns; allow it
            y2x = Yp[j] + gap_open
            if y2x > Xi[j]:
                Xi[j], PXi[j] = y2x, _Y
            # Y (left)
            o, e = Mi[j - 1] + gap_open, Yi[j - 1] + gap_extend
            if o >= e:
                Yi[j], PYi[j] = o, _M
            else:
                Yi[j], PYi[j] = e, _Y
            x2y = Xi[j - 1] + gap_open
            if x2y > Yi[j]:
                Yi[j], PYi[j] = x2y, _X

    # final state: diagonal > up > left on ties
    best, state = M[n][m], _M
    if X[n][m] > best:
        best, state = X[n][m], _X
    if Y[n][m] > best:
        best, state = Y[n][m], _Y

    ra, rb, tags = [], [], []
    i, j = n, m
    while i > 0 or j > 0:
        if state == _M:
            prev = PM[i][j]
            ra.append(a[i - 1])
            rb.append(b[j - 1])
            tags.append("match" if _sub(a[i - 1], b[j - 1]) > 0 else "mismatch")
            i, j = i - 1, j - 1
        elif state == _X:
            prev = PX[i][j]
            ra.append(a[i - 1])
            rb.append("-")
            tags.append("gap_b")
            i -= 1
        else:
            prev = PY[i][j]
            ra.append("-")
            rb.append(b[j - 1])
            tags.append("gap_a")
            j -= 1
        state = prev
    ra.reverse()
    rb.reverse()
    tags.reverse()
    return Alignment("".join(ra), "".join(rb), int(best), tuple(tags))


def identity(al: Alignment) -> float:
    """Identical columns divided by the shorter ungapped sequence length."""
    matches = sum(1 for t in al.columns if t == "match")
    shorter = min(len(al.seq_a), len(al.seq_b))
    return matches / shorter if shorter else 0.0


def residue_map(al: Alignment) -> ResidueMap:
    pairs = []
    ia = ib = 0
    for tag in al.columns:
        if tag in ("match", "mismatch"):
            pairs.append((ia, ib))
            ia += 1
            ib += 1
        elif tag == "gap_b":
            ia += 1
        else:
            ib += 1
    return ResidueMap(tuple(pairs))


def sequence_identity(a: str, b: str) -> float:
    return identity(align_pair(a, b))

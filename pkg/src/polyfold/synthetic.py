"""Synthetic backbones and sequences for fixtures, toy corpora and demos.

Backbones are built atom by atom from ideal bond geometry and prescribed
(phi, psi, omega) torsions.
"""

from __future__ import annotations

import numpy as np

from .struct_io import BackboneChain

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"

BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
ANGLE_N_CA_C = np.deg2rad(111.2)
ANGLE_CA_C_N = np.deg2rad(116.2)
ANGLE_C_N_CA = np.deg2rad(121.7)

HELIX = (np.deg2rad(-57.0), np.deg2rad(-47.0))
STRAND = (np.deg2rad(-120.0), np.deg2rad(130.0))


def place_atom(a, b, c, bond, angle, torsion):
    """Position d such that |cd| = bond, angle(b, c, d) = angle and torsion(a, b, c, d) = torsion."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([
        -bond * np.cos(angle),
        bond * np.sin(angle) * np.cos(torsion),
        bond * np.sin(angle) * np.sin(torsion),
    ])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def build_backbone(phi, psi, omega=None) -> np.ndarray:
    """n x 3 x 3 (N, CA, C) coordinates realizing the given torsions.

    ``phi[0]`` and ``psi[-1]``/``omega[-1]`` are unused (undefined at the termini).
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = len(phi)
    omega = np.full(n, np.pi) if omega is None else np.asarray(omega, dtype=np.float64)
    X = np.zeros((n, 3, 3))
    N = np.array([0.0, 0.0, 0.0])
    CA = np.array([BOND_N_CA, 0.0, 0.0])
    C = CA + BOND_CA_C * np.array([-np.cos(ANGLE_N_CA_C), np.sin(ANGLE_N_CA_C), 0.0])
    X[0] = N, CA, C
    for i in range(1, n):
        N = place_atom(X[i - 1, 0], X[i - 1, 1], X[i - 1, 2], BOND_C_N, ANGLE_CA_C_N, psi[i - 1])
        CA = place_atom(X[i - 1, 1], X[i - 1, 2], N, BOND_N_CA, ANGLE_C_N_CA, omega[i - 1])
        C = place_atom(X[i - 1, 2], N, CA, BOND_CA_C, ANGLE_N_CA_C, phi[i])
        X[i] = N, CA, C
    return X


def random_sequence(n, rng) -> str:
    return "".join(rng.choice(list(AMINO_ACIDS), size=n))


def mutate(seq: str, n_mut: int, rng) -> str:
    s = list(seq)
    for pos in rng.choice(len(s), size=n_mut, replace=False):
        s[pos] = rng.choice([a for a in AMINO_ACIDS if a != s[pos]])
    return "".join(s)


def helix_backbone(n) -> np.ndarray:
    return build_backbone(np.full(n, HELIX[0]), np.full(n, HELIX[1]))


def random_torsions(n, rng, helix_fraction=0.5):
    """Mix of helix- and strand-like residues with small jitter."""
    is_helix = rng.random(n) < helix_fraction
    phi = np.where(is_helix, HELIX[0], STRAND[0]) + rng.normal(0, 0.15, n)
    psi = np.where(is_helix, HELIX[1], STRAND[1]) + rng.normal(0, 0.15, n)
    return phi, psi


def random_coil_backbone(n, rng) -> np.ndarray:
    phi = rng.uniform(-np.pi, np.pi, n)
    psi = rng.uniform(-np.pi, np.pi, n)
    return build_backbone(phi, psi)


def hinge_variant(X, rng, hinge=None, angle=None) -> np.ndarray:
    """Second conformer: rotate everything after a hinge residue about the hinge CA."""
    X = np.array(X, dtype=np.float64)
    n = len(X)
    h = n // 2 if hinge is None else hinge
    theta = rng.uniform(0.5, 1.5) if angle is None else angle
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = rotation_about(axis, theta)
    pivot = X[h, 1]
    X[h + 1:] = (X[h + 1:] - pivot) @ R.T + pivot
    return X


def rotation_about(axis, theta) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * K @ K


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def make_chain(seq, coords, chain_id="A", start=1, confidence=None) -> BackboneChain:
    return BackboneChain(chain_id, seq, coords, np.arange(start, start + len(seq)), confidence)


def toy_chain(n, rng, chain_id="A", seq=None, offset=None) -> BackboneChain:
    phi, psi = random_torsions(n, rng)
    X = build_backbone(phi, psi)
    if offset is not None:
        X = X + np.asarray(offset)
    return make_chain(seq or random_sequence(n, rng), X, chain_id)


def _write(path, chains):
    # local import keeps struct_io free of a synthetic dependency
    from .struct_io import write_pdb
    write_pdb(chains, path)


def write_toy_corpus(root, n_families: int = 8, n_bench: int = 4, n_singletons: int = 3,
                     n_decoys: int = 6, length=(30, 44), seed: int = 0) -> dict:
    """Write a small conformer corpus under ``root``.

    Each family has two or three conformers of one chain A (hinge motions,
    at most one point mutation) and a short partner chain B. Also writes
    unpaired singletons, a benchmark file listing the first ``n_bench``
    families and an unrelated decoy pool. Returns the paths.
    """
    import os
    rng = np.random.default_rng(seed)
    root = os.fspath(root)
    sdir = os.path.join(root, "structures")
    ddir = os.path.join(root, "decoys")
    os.makedirs(sdir, exist_ok=True)
    os.makedirs(ddir, exist_ok=True)
    bench = []
    for f in range(n_families):
        n = int(rng.integers(length[0], length[1] + 1))
        seq = random_sequence(n, rng)
        phi, psi = random_torsions(n, rng, helix_fraction=0.7)
        X = build_backbone(phi, psi)
        partner_seq = random_sequence(12, rng)
        partner = build_backbone(*random_torsions(12, rng)) + X[:, 1].mean(axis=0) + rng.normal(0, 1, 3) * 8
        n_conf = 3 if f % 3 == 0 else 2
        names = []
        for c in range(n_conf):
            Xc = X if c == 0 else hinge_variant(X, rng, hinge=int(rng.integers(n // 3, 2 * n // 3)),
                                                 angle=float(rng.uniform(0.4, 1.4)))
            s = seq if c == 0 else mutate(seq, int(c == 2), rng)
            name = f"fam{f:02d}{'abc'[c]}"
            chains = [make_chain(s, Xc, "A"),
                      make_chain(partner_seq, partner + rng.normal(0, 0.3, partner.shape), "B")]
            _write(os.path.join(sdir, name + ".pdb"), chains)
            names.append(name)
        if f < n_bench:
            bench.append((f"{names[0]}:A", f"{names[1]}:A"))
    for i in range(n_singletons):
        n = int(rng.integers(length[0], length[1] + 1))
        _write(os.path.join(sdir, f"single{i:02d}.pdb"), [toy_chain(n, rng)])
    for i in range(n_decoys):
        n = int(rng.integers(length[0], length[1] + 1))
        phi, psi = random_torsions(n, rng, helix_fraction=0.2)
        _write(os.path.join(ddir, f"decoy{i:02d}.pdb"), [make_chain(random_sequence(n, rng), build_backbone(phi, psi))])
    bench_path = os.path.join(root, "benchmark.txt")
    with open(bench_path, "w") as fh:
        fh.write("# state_a state_b\n")
        for a, b in bench:
            fh.write(f"{a} {b}\n")
    return {"structures": sdir, "decoys": ddir, "benchmark": bench_path}


def write_toy_predictions(targets, out_dir, sigma: float = 1.0, n_sequences: int = 16, seed: int = 0,
                          decoy_sigma: float = 4.0) -> None:
    """Stand-in oracle outputs: noisy copies of each target with random pLDDT.

    ``targets`` maps protein id to an object with ``states`` (label ->
    chain); decoy predictions are heavier-noise copies written for every
    state, which is enough to exercise the decoy normalization.
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for pid in sorted(targets):
        t = targets[pid]
        for i in range(n_sequences):
            scale = sigma * rng.uniform(0.5, 1.5)
            for label in sorted(t.states):
                ch = t.states[label]
                for state, s in ((label, scale), ("decoy" + label, decoy_sigma)):
                    X = ch.coords + rng.normal(0, s, ch.coords.shape)
                    conf = np.clip(rng.normal(80 - 8 * s, 5, len(ch)), 0, 100)
                    _write(os.path.join(out_dir, f"{pid}_{i}_{state}.pdb"),
                           [make_chain(ch.sequence, X, "A", confidence=conf)])

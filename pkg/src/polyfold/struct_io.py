"""Legacy PDB parsing and backbone extraction.

Only the fixed-column ATOM/MODEL/ENDMDL/TER records are read. HETATM
records, waters and ligands are ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ChainNotFound, EmptyBackbone, MalformedRecord, MissingConfidence, NoProteinChains

THREE_TO_ONE = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C",
    "GLN": "Q", "GLU": "E", "GLY": "G", "HIS": "H", "ILE": "I",
    "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F", "PRO": "P",
    "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
}
ONE_TO_THREE = {v: k for k, v in THREE_TO_ONE.items()}
BACKBONE_ATOMS = ("N", "CA", "C")


@dataclass
class Atom:
    name: str
    xyz: tuple
    bfactor: float


@dataclass
class Residue:
    name: str
    number: int
    icode: str
    atoms: dict = field(default_factory=dict)

    @property
    def one_letter(self) -> str:
        return THREE_TO_ONE.get(self.name, "X")

    @property
    def nonstandard(self) -> bool:
        return self.name not in THREE_TO_ONE


@dataclass
class RawChain:
    chain_id: str
    residues: list = field(default_factory=list)

    @property
    def sequence(self) -> str:
        return "".join(r.one_letter for r in self.residues)


@dataclass
class Structure:
    id: str
    chains: list
    source_path: str = ""

    def __post_init__(self):
        ids = [c.chain_id for c in self.chains]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate chain identifiers in {self.id}: {ids}")

    def chain(self, chain_id: str) -> RawChain:
        for c in self.chains:
            if c.chain_id == chain_id:
                return c
        raise ChainNotFound(f"chain {chain_id!r} not in structure {self.id!r}")

    @property
    def chain_ids(self) -> list:
        return [c.chain_id for c in self.chains]


@dataclass(frozen=True)
class BackboneChain:
    """Ordered backbone of one chain: ``coords[i]`` holds (N, CA, C) of residue i."""

    chain_id: str
    sequence: str
    coords: np.ndarray
    residue_numbers: np.ndarray
    confidence: Optional[np.ndarray] = None
    dropped: tuple = ()

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        nums = np.asarray(self.residue_numbers, dtype=np.int64)
        n = len(self.sequence)
        if coords.shape != (n, 3, 3):
            raise ValueError(f"coords shape {coords.shape} does not match sequence length {n}")
        if np.isnan(coords).any():
            raise ValueError("NaN in backbone coordinates")
        if nums.shape != (n,):
            raise ValueError("residue_numbers length differs from sequence length")
        # insertion codes can repeat a number; anything else must increase
        if n > 1 and np.any(np.diff(nums) < 0):
            raise ValueError("residue_numbers must be non-decreasing")
        coords.setflags(write=False)
        nums.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "residue_numbers", nums)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != (n,):
                raise ValueError("confidence length differs from sequence length")
            conf.setflags(write=False)
            object.__setattr__(self, "confidence", conf)

    def __len__(self):
        return len(self.sequence)

    @property
    def ca(self) -> np.ndarray:
        return self.coords[:, 1]

    def with_coords(self, coords) -> "BackboneChain":
        return BackboneChain(self.chain_id, self.sequence, coords, self.residue_numbers,
                             self.confidence, self.dropped)


def _parse_float(line, start, stop, lineno, what):
    text = line[start:stop].strip()
    try:
        return float(text)
    except ValueError:
        raise MalformedRecord(f"non-numeric {what} field {text!r}", lineno) from None


def _parse_lines(lines: Iterable[str]) -> list:
    """Return one list of RawChain per MODEL (a single list when MODEL is absent)."""
    models = []
    chains: dict = {}
    order: list = []

    def flush():
        if chains:
            models.append([chains[c] for c in order])

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        rec = line[:6]
        if rec.startswith("MODEL"):
            flush()
            chains, order = {}, []
            continue
        if rec.startswith("ENDMDL"):
            flush()
            chains, order = {}, []
            continue
        if rec != "ATOM  ":
            continue
        if len(line) < 54:
            raise MalformedRecord("ATOM record shorter than 54 columns", lineno)
        atom_name = line[12:16].strip()
        resname = line[17:20].strip()
        chain_id = line[21]
        try:
            resnum = int(line[22:26])
        except ValueError:
            raise MalformedRecord(f"non-numeric residue number {line[22:26]!r}", lineno) from None
        icode = line[26].strip()
        x = _parse_float(line, 30, 38, lineno, "x")
        y = _parse_float(line, 38, 46, lineno, "y")
        z = _parse_float(line, 46, 54, lineno, "z")
        btext = line[60:66].strip()
        if btext:
            bfac = _parse_float(line, 60, 66, lineno, "B-factor")
        else:
            bfac = 0.0
        if chain_id not in chains:
            chains[chain_id] = RawChain(chain_id)
            order.append(chain_id)
        chain = chains[chain_id]
        res = chain.residues[-1] if chain.residues else None
        # residue boundary is (number, icode); an altloc with a different name stays in the first residue
        if res is None or res.number != resnum or res.icode != icode:
            res = Residue(resname, resnum, icode)
            chain.residues.append(res)
        # altloc: first occurrence of each atom name wins
        if atom_name not in res.atoms:
            res.atoms[atom_name] = Atom(atom_name, (x, y, z), bfac)
    flush()
    return models


def _is_protein(chain: RawChain) -> bool:
    return any(r.name in THREE_TO_ONE for r in chain.residues)


def parse_models(path, format: str = "pdb") -> list:
    """Parse every MODEL block of a PDB file into its own :class:`Structure`.

    Single-model files keep the file stem as id; multi-model files get
    ``"{stem}#{model}"`` with 1-based model numbers.
    """
    if format != "pdb":
        raise ValueError(f"unsupported format {format!r}")
    path = os.fspath(path)
    with open(path) as fh:
        models = _parse_lines(fh)
    stem = os.path.splitext(os.path.basename(path))[0]
    out = []
    for k, chains in enumerate(models, start=1):
        chains = [c for c in chains if _is_protein(c)]
        if not chains:
            continue
        sid = stem if len(models) == 1 else f"{stem}#{k}"
        out.append(Structure(sid, chains, path))
    if not out:
        raise NoProteinChains(f"{path}: no amino-acid ATOM records")
    return out


def parse_structure(path, format: str = "pdb", model: Optional[int] = None) -> Structure:
    """Parse a PDB file. ``model`` selects a 1-based MODEL; default is the first."""
    structures = parse_models(path, format)
    if model is None:
        return structures[0]
    if not 1 <= model <= len(structures):
        raise ValueError(f"{path}: model {model} out of range 1..{len(structures)}")
    return structures[model - 1]


def extract_backbone(s: Structure, chain_id: str) -> BackboneChain:
    """Backbone of ``chain_id``; residues missing N, CA or C are dropped.

    Confidence is the CA B-factor column (pLDDT for predicted structures).
    Indices of dropped residues are kept on ``BackboneChain.dropped``.
    """
    chain = s.chain(chain_id)
    seq, coords, nums, conf, dropped = [], [], [], [], []
    for i, res in enumerate(chain.residues):
        if not all(a in res.atoms for a in BACKBONE_ATOMS):
            dropped.append(i)
            continue
        seq.append(res.one_letter)
        coords.append([res.atoms[a].xyz for a in BACKBONE_ATOMS])
        nums.append(res.number)
        conf.append(res.atoms["CA"].bfactor)
    if not seq:
        raise EmptyBackbone(f"chain {chain_id!r} of {s.id!r} has no complete backbone residue")
    return BackboneChain(
        chain_id=chain_id,
        sequence="".join(seq),
        coords=np.asarray(coords, dtype=np.float64),
        residue_numbers=np.asarray(nums),
        confidence=np.asarray(conf, dtype=np.float64),
        dropped=tuple(dropped),
    )


def read_confidence(c: BackboneChain) -> float:
    if c.confidence is None:
        raise MissingConfidence(f"chain {c.chain_id!r} carries no confidence values")
    return float(np.mean(c.confidence))


def format_atom_line(serial, atom_name, resname, chain_id, resnum, xyz, bfactor=0.0, element=None):
    name = atom_name if len(atom_name) == 4 else f" {atom_name:<3s}"
    element = element or atom_name[0]
    return (
        f"ATOM  {serial:5d} {name} {resname:>3s} {chain_id}{resnum:4d}    "
        f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{1.0:6.2f}{bfactor:6.2f}"
        f"          {element:>2s}"
    )


def write_pdb(chains: Sequence[BackboneChain], path, models: Optional[Sequence[Sequence[BackboneChain]]] = None):
    """Write backbone chains as a PDB file (N, CA, C per residue).

    Pass ``models`` instead of ``chains`` to emit several MODEL blocks.
    Confidence, when present, goes to every atom's B-factor column.
    """
    blocks = models if models is not None else [chains]
    lines = []
    for k, block in enumerate(blocks, start=1):
        if models is not None:
            lines.append(f"MODEL     {k:4d}")
        serial = 1
        for ch in block:
            for i, aa in enumerate(ch.sequence):
                resname = ONE_TO_THREE.get(aa, "UNK")
                b = float(ch.confidence[i]) if ch.confidence is not None else 0.0
                for j, atom in enumerate(BACKBONE_ATOMS):
                    lines.append(format_atom_line(serial, atom, resname, ch.chain_id,
                                                  int(ch.residue_numbers[i]), ch.coords[i, j], b))
                    serial += 1
            lines.append("TER")
        if models is not None:
            lines.append("ENDMDL")
    lines.append("END")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_chains(path) -> list:
    """All backbone chains of the first model, in file order."""
    s = parse_structure(path)
    return [extract_backbone(s, cid) for cid in s.chain_ids]

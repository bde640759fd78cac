import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyfold.errors import ChainNotFound, EmptyBackbone, MalformedRecord, MissingConfidence, NoProteinChains
from polyfold.struct_io import (BackboneChain, extract_backbone, format_atom_line, load_chains,
                                parse_models, parse_structure, read_confidence, write_pdb)
from polyfold.synthetic import make_chain, toy_chain


def atom(serial, name, resname, chain, resnum, xyz, b=0.0, altloc=" ", icode=" "):
    line = format_atom_line(serial, name, resname, chain, resnum, xyz, b)
    return line[:16] + altloc + line[17:26] + icode + line[27:]


def residue_lines(chain, resnum, resname="ALA", start=1, b=50.0, atoms=("N", "CA", "C"), icode=" "):
    out = []
    for j, a in enumerate(atoms):
        out.append(atom(start + j, a, resname, chain, resnum, (resnum + j * 0.5, 1.0, -2.0), b, icode=icode))
    return out


def write(tmp_path, lines, name="x.pdb"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\nEND\n")
    return p


def test_atom_line_columns():
    line = format_atom_line(7, "CA", "GLY", "B", 42, (1.5, -22.25, 333.125), 87.5)
    assert line[:6] == "ATOM  "
    assert line[12:16].strip() == "CA"
    assert line[17:20] == "GLY"
    assert line[21] == "B"
    assert int(line[22:26]) == 42
    assert float(line[30:38]) == 1.5
    assert float(line[38:46]) == -22.25
    assert float(line[46:54]) == 333.125
    assert float(line[60:66]) == 87.5


def test_one_chain_three_residues(tmp_path):
    lines = sum((residue_lines("A", i, start=3 * i) for i in range(1, 4)), [])
    s = parse_structure(write(tmp_path, lines))
    assert s.chain_ids == ["A"]
    assert len(s.chains[0].residues) == 3
    assert s.id == "x"


def test_chain_order_preserved(tmp_path):
    lines = residue_lines("B", 1) + residue_lines("A", 1)
    s = parse_structure(write(tmp_path, lines))
    assert s.chain_ids == ["B", "A"]


def test_non_numeric_x_names_line(tmp_path):
    lines = residue_lines("A", 1)
    bad = lines[1][:30] + "   abc.d" + lines[1][38:]
    lines[1] = bad
    p = write(tmp_path, ["REMARK header"] + lines)
    with pytest.raises(MalformedRecord) as exc:
        parse_structure(p)
    assert exc.value.line_number == 3
    assert "line 3" in str(exc.value)


def test_short_atom_line_is_malformed(tmp_path):
    lines = residue_lines("A", 1)
    lines[0] = lines[0][:40]
    with pytest.raises(MalformedRecord):
        parse_structure(write(tmp_path, lines))


def test_no_protein_chains(tmp_path):
    lines = [atom(1, "P", "DA", "A", 1, (0, 0, 0))]
    with pytest.raises(NoProteinChains):
        parse_structure(write(tmp_path, lines))
    with pytest.raises(NoProteinChains):
        parse_structure(write(tmp_path, ["REMARK nothing"], "y.pdb"))


def test_altloc_keeps_first(tmp_path):
    lines = residue_lines("A", 1)
    alt = atom(9, "CA", "ALA", "A", 1, (9.0, 9.0, 9.0), 10.0, altloc="B")
    lines.insert(2, alt)
    ch = extract_backbone(parse_structure(write(tmp_path, lines)), "A")
    assert ch.coords[0, 1, 0] == 1.5


def test_hetatm_ignored(tmp_path):
    lines = residue_lines("A", 1) + ["HETATM    9  O   HOH A 101       1.000   1.000   1.000  1.00  0.00           O"]
    s = parse_structure(write(tmp_path, lines))
    assert len(s.chains[0].residues) == 1


def test_nonstandard_maps_to_x(tmp_path):
    lines = residue_lines("A", 1) + residue_lines("A", 2, resname="MSE", start=4)
    ch = extract_backbone(parse_structure(write(tmp_path, lines)), "A")
    assert ch.sequence == "AX"
    assert parse_structure(tmp_path / "x.pdb").chains[0].residues[1].nonstandard


def test_insertion_codes_split_residues(tmp_path):
    lines = residue_lines("A", 5) + residue_lines("A", 5, start=4, icode="A") + residue_lines("A", 6, start=7)
    ch = extract_backbone(parse_structure(write(tmp_path, lines)), "A")
    assert len(ch) == 3
    assert list(ch.residue_numbers) == [5, 5, 6]


def test_models_become_structures(tmp_path):
    lines = ["MODEL        1"] + residue_lines("A", 1) + ["ENDMDL", "MODEL        2"] + residue_lines("A", 1) + ["ENDMDL"]
    structs = parse_models(write(tmp_path, lines, "nmr.pdb"))
    assert [s.id for s in structs] == ["nmr#1", "nmr#2"]
    assert parse_structure(tmp_path / "nmr.pdb", model=2).id == "nmr#2"


def test_extract_backbone_shapes_and_drop(tmp_path):
    lines = (residue_lines("A", 1, start=1) + residue_lines("A", 2, start=4, atoms=("N", "CA"))
             + residue_lines("A", 3, start=7))
    s = parse_structure(write(tmp_path, lines))
    ch = extract_backbone(s, "A")
    assert len(ch) == 2
    assert ch.coords.shape == (2, 3, 3)
    assert list(ch.dropped) == [1]
    full = extract_backbone(parse_structure(write(tmp_path, sum((residue_lines("A", i, start=3 * i) for i in range(1, 4)), []), "f.pdb")), "A")
    assert full.coords.shape == (3, 3, 3)


def test_extract_errors(tmp_path):
    s = parse_structure(write(tmp_path, residue_lines("A", 1, atoms=("N", "CA"))))
    with pytest.raises(EmptyBackbone):
        extract_backbone(s, "A")
    with pytest.raises(ChainNotFound):
        extract_backbone(s, "Z")


def test_confidence_is_ca_bfactor(tmp_path):
    bs = [91.5, 40.25, 77.0]
    lines = []
    for i, b in enumerate(bs, start=1):
        for j, a in enumerate(("N", "CA", "C")):
            # off-CA atoms carry a different value so the CA column is the one read
            lines.append(atom(3 * i + j, a, "ALA", "A", i, (i, j, 0.0), b if a == "CA" else 1.0))
    ch = extract_backbone(parse_structure(write(tmp_path, lines)), "A")
    assert list(ch.confidence) == bs


def test_read_confidence_examples():
    rng = np.random.default_rng(0)
    c = toy_chain(2, rng)
    assert read_confidence(make_chain(c.sequence, c.coords, confidence=[100.0, 100.0])) == 100.0
    assert read_confidence(make_chain(c.sequence, c.coords, confidence=[40.0, 60.0])) == 50.0
    c5 = toy_chain(5, rng)
    vals = [12.5, 99.0, 50.0, 0.0, 33.25]
    assert read_confidence(make_chain(c5.sequence, c5.coords, confidence=vals)) == pytest.approx((12.5 + 99 + 50 + 0 + 33.25) / 5)
    with pytest.raises(MissingConfidence):
        read_confidence(c)


def test_backbone_chain_invariants():
    rng = np.random.default_rng(1)
    c = toy_chain(4, rng)
    with pytest.raises(Exception):
        BackboneChain("A", "AAA", c.coords, np.arange(4))
    bad = c.coords.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(Exception):
        BackboneChain("A", c.sequence, bad, np.arange(4))
    with pytest.raises(Exception):
        BackboneChain("A", c.sequence, c.coords, np.array([1, 3, 2, 4]))
    with pytest.raises(ValueError):
        c.coords[0, 0, 0] = 1.0


@given(n=st.integers(1, 40), seed=st.integers(0, 2 ** 31 - 1))
def test_round_trip_write_read(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    c = toy_chain(n, rng, offset=rng.uniform(-500, 500, 3))
    c = make_chain(c.sequence, np.round(c.coords, 3), "C", start=int(rng.integers(-50, 50)),
                   confidence=np.round(rng.uniform(0, 100, n), 2))
    p = tmp_path_factory.mktemp("rt") / "c.pdb"
    write_pdb([c], p)
    (back,) = load_chains(p)
    assert back.sequence == c.sequence
    assert np.array_equal(back.coords, c.coords)
    assert np.array_equal(back.residue_numbers, c.residue_numbers)
    assert np.array_equal(back.confidence, c.confidence)
    assert len(back.sequence) == back.coords.shape[0]
    assert np.all(np.diff(back.residue_numbers) >= 0)

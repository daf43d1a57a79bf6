import json

import numpy as np
import pytest

from molmark.errors import DataError, ParseError
from molmark.molecule import (Molecule, QM9_ELEMENTS, batch_molecules, geom_drug_elements,
                              load_corpus, parse_xyz, random_corpus, unbatch, write_xyz)

WATER = "3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0"


def test_parse_water():
    mol = parse_xyz(WATER)
    assert mol.n_atoms == 3
    assert mol.element_symbols == ["O", "H", "H"]
    assert np.allclose(mol.positions[1], [0.96, 0, 0])
    assert np.all(mol.charges == 0.0)


def test_parse_rejects_single_atom():
    with pytest.raises(DataError):
        parse_xyz("1\n\nC 1.0 2.0 3.0")


def test_parse_unknown_element_names_line():
    with pytest.raises(ParseError, match="line 4"):
        parse_xyz("2\n\nC 0 0 0\nXx 1 1 1")


def test_parse_malformed_count_line():
    with pytest.raises(ParseError, match="line 1"):
        parse_xyz("three\n\nC 0 0 0\nC 1 1 1")


def test_parse_non_numeric_coordinate():
    with pytest.raises(ParseError, match="line 3"):
        parse_xyz("2\n\nC zero 0 0\nC 1 1 1")


def test_onehot_rows_valid():
    mol = parse_xyz(WATER)
    assert mol.atom_types.shape == (3, 5)
    assert (mol.atom_types.sum(axis=1) == 1).all()
    assert np.isin(mol.atom_types, (0.0, 1.0)).all()


def test_write_parse_round_trip():
    mol = parse_xyz(WATER)
    again = parse_xyz(write_xyz(mol))
    assert again.element_symbols == mol.element_symbols
    assert np.abs(again.positions - mol.positions).max() < 1e-9


def test_round_trip_with_charges():
    mol = Molecule.from_symbols(["C", "O"], [[0, 0, 0], [1.2, 0, 0]],
                                charges=np.array([[1.0], [-1.0]]))
    text = write_xyz(mol)
    assert len(text.splitlines()[2].split()) == 5
    again = parse_xyz(text)
    assert np.array_equal(again.charges, mol.charges)


def test_round_trip_high_precision():
    pos = np.array([[0.123456789012, -3.210987654321, 1.111111111111],
                    [2.0, 1.0, -1.987654321098]])
    mol = Molecule.from_symbols(["C", "N"], pos)
    again = parse_xyz(write_xyz(mol))
    assert np.abs(again.positions - pos).max() < 1e-9


def test_random_round_trip_property():
    rng = np.random.default_rng(5)
    for mol in random_corpus(rng, 20, (2, 9)):
        again = parse_xyz(write_xyz(mol))
        assert again.element_symbols == mol.element_symbols
        assert np.abs(again.positions - mol.positions).max() < 1e-9


def test_geom_vocabulary_has_16_species():
    assert len(geom_drug_elements()) == 16


def test_load_corpus_directory_order(tmp_path):
    names = ["b.xyz", "a.xyz", "c.xyz"]
    for k, name in enumerate(names):
        mol = Molecule.from_symbols(["C", "C"], [[0, 0, 0], [1.5 + k, 0, 0]])
        (tmp_path / name).write_text(write_xyz(mol))
    mols = load_corpus(str(tmp_path))
    assert len(mols) == 3
    # lexicographic by filename: a (k=1), b (k=0), c (k=2)
    assert [m.positions[1, 0] for m in mols] == [2.5, 1.5, 3.5]


def test_load_corpus_empty_directory(tmp_path):
    with pytest.raises(DataError, match="empty corpus"):
        load_corpus(str(tmp_path))


def test_load_corpus_missing_path():
    with pytest.raises(DataError):
        load_corpus("/nonexistent/path/xyz")


def test_load_corpus_reports_bad_record(tmp_path):
    good = write_xyz(Molecule.from_symbols(["C", "C"], [[0, 0, 0], [1.5, 0, 0]]))
    bad = "2\n\nC 0 0 0\nQq 1 1 1\n"
    (tmp_path / "mix.xyz").write_text(good + bad)
    with pytest.raises(ParseError, match="record 2"):
        load_corpus(str(tmp_path))


def test_load_corpus_jsonl(tmp_path):
    rec = {"elements": ["N", "N"], "positions": [[0, 0, 0], [1.1, 0, 0]], "charges": [0, 0]}
    (tmp_path / "mols.jsonl").write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
    mols = load_corpus(str(tmp_path))
    assert len(mols) == 2 and mols[0].element_symbols == ["N", "N"]


def test_batch_sizes_and_padding():
    rng = np.random.default_rng(0)
    mols = [m for n in (2, 4, 3) for m in [next(iter(random_corpus(rng, 1, (n, n))))]]
    batches = batch_molecules(mols, 2)
    assert len(batches) == 2
    assert batches[0].n_max == 4 and list(batches[0].sizes) == [2, 4]
    assert batches[1].n_max == 3
    b = batches[0]
    assert b.mask[0, :2].all() and not b.mask[0, 2:].any()
    assert (b.positions[0, 0, 2:] == 0).all() and (b.atom_types[0, 0, 2:] == 0).all()


def test_batch_single_molecule():
    rng = np.random.default_rng(1)
    batches = batch_molecules(random_corpus(rng, 1, (3, 3)), 64)
    assert len(batches) == 1 and batches[0].batch_size == 1


def test_batch_130_into_64():
    rng = np.random.default_rng(2)
    mols = random_corpus(rng, 130, (2, 5))
    batches = batch_molecules(mols, 64)
    assert [b.batch_size for b in batches] == [64, 64, 2]


def test_unbatch_recovers_molecules():
    rng = np.random.default_rng(3)
    mols = random_corpus(rng, 17, (2, 9))
    back = unbatch(batch_molecules(mols, 5))
    assert len(back) == len(mols)
    for a, b in zip(mols, back):
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.atom_types, b.atom_types)
        assert a.element_symbols == b.element_symbols


def test_mask_iff_below_size():
    rng = np.random.default_rng(4)
    for batch in batch_molecules(random_corpus(rng, 9, (2, 11)), 4):
        for k in range(batch.batch_size):
            n = batch.sizes[k]
            assert batch.mask[k, :n].all()
            assert not batch.mask[k, n:].any()


def test_molecule_invariants():
    with pytest.raises(DataError):
        Molecule.from_symbols(["C", "C"], [[0, 0, 0], [np.nan, 0, 0]])
    bad_onehot = np.array([[0.5, 0.5, 0, 0, 0], [1, 0, 0, 0, 0]])
    with pytest.raises(DataError):
        Molecule(np.zeros((2, 3)), bad_onehot, np.zeros((2, 1)), ["C", "H"], QM9_ELEMENTS)

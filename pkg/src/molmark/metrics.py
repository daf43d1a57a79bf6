"""Molecule-quality and payload metrics.

Bond inference is table-driven: a pair gets the highest bond order whose
tabulated length brackets the observed distance within the table's margin.
Stability, validity, uniqueness, and novelty are all derived from the
inferred bond graph, so they are invariant under rigid motions and atom
reordering. This is a self-contained valence/connectivity rule, not a
cheminformatics-toolkit sanitization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
import os

import numpy as np

from .errors import DataError
from .geometry import squared_distances
from .molecule import Molecule

_BOND_TABLE_FILE = os.path.join(os.path.dirname(__file__), "data", "bond_table.txt")


@dataclass
class BondTable:
    """Tabulated bond lengths (angstrom), allowed valences, atomic weights."""

    lengths: dict            # frozenset-or-pair key -> (single, double, triple), None = absent
    margin: float
    valences: dict           # element -> tuple of allowed valences
    weights: dict            # element -> g/mol

    def __post_init__(self):
        if self.margin <= 0:
            raise DataError("bond length margin must be positive")
        for pair, lens in self.lengths.items():
            for val in lens:
                if val is not None and val <= 0:
                    raise DataError(f"non-positive bond length for pair {pair}")

    def pair_lengths(self, el1: str, el2: str):
        key = (el1, el2) if el1 <= el2 else (el2, el1)
        if key not in self.lengths:
            raise DataError(f"bond table has no entry for element pair {el1}-{el2}")
        return self.lengths[key]

    def allowed_valences(self, el: str) -> tuple:
        if el not in self.valences:
            raise DataError(f"bond table has no valence for element {el!r}")
        return self.valences[el]

    def atomic_weight(self, el: str) -> float:
        if el not in self.weights:
            raise DataError(f"bond table has no atomic weight for element {el!r}")
        return self.weights[el]


def parse_bond_table(text: str) -> BondTable:
    lengths, valences, weights = {}, {}, {}
    margin, section = None, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]").lower()
            continue
        parts = line.split()
        if parts[0] == "margin":
            margin = float(parts[1])
            continue
        try:
            if section == "bonds":
                el1, el2 = parts[0], parts[1]
                vals = tuple(None if v == "-" else float(v) for v in parts[2:5])
                key = (el1, el2) if el1 <= el2 else (el2, el1)
                lengths[key] = vals
            elif section == "valence":
                valences[parts[0]] = tuple(int(v) for v in parts[1].split("|"))
            elif section == "weights":
                weights[parts[0]] = float(parts[1])
            else:
                raise DataError(f"line {lineno}: data outside any section")
        except (ValueError, IndexError):
            raise DataError(f"bond table line {lineno}: cannot parse {raw!r}") from None
    if margin is None:
        raise DataError("bond table defines no margin")
    return BondTable(lengths, margin, valences, weights)


@lru_cache(maxsize=1)
def default_bond_table() -> BondTable:
    with open(_BOND_TABLE_FILE) as fh:
        return parse_bond_table(fh.read())


def infer_bonds(mol: Molecule, table: BondTable | None = None) -> np.ndarray:
    """Integer bond-order matrix (N,N): highest order whose tabulated length
    brackets the observed distance within the margin, else 0."""
    table = table or default_bond_table()
    n = mol.n_atoms
    dist = np.sqrt(squared_distances(mol.positions))
    orders = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            lens = table.pair_lengths(mol.element_symbols[i], mol.element_symbols[j])
            order = 0
            for k, ref in enumerate(lens, start=1):
                if ref is not None and abs(dist[i, j] - ref) <= table.margin:
                    order = k
            orders[i, j] = orders[j, i] = order
    return orders


def _stable_flags(mol: Molecule, table: BondTable) -> np.ndarray:
    orders = infer_bonds(mol, table)
    sums = orders.sum(axis=1)
    return np.array([int(sums[i]) in table.allowed_valences(el)
                     for i, el in enumerate(mol.element_symbols)])


def atom_stability(mol: Molecule, table: BondTable | None = None) -> float:
    """Fraction of atoms whose total inferred bond order hits an allowed valence."""
    table = table or default_bond_table()
    flags = _stable_flags(mol, table)
    return float(flags.mean())


def molecule_stability(mol: Molecule, table: BondTable | None = None) -> int:
    """1 iff every atom is stable."""
    table = table or default_bond_table()
    return int(_stable_flags(mol, table).all())


def _connected(orders: np.ndarray) -> bool:
    n = orders.shape[0]
    seen, frontier = {0}, [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(orders[i] > 0):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


def validity(mol: Molecule, table: BondTable | None = None) -> int:
    """1 iff no atom exceeds its maximum valence and the bond graph is connected."""
    table = table or default_bond_table()
    orders = infer_bonds(mol, table)
    sums = orders.sum(axis=1)
    for i, el in enumerate(mol.element_symbols):
        if sums[i] > max(table.allowed_valences(el)):
            return 0
    return int(_connected(orders))


def canonical_hash(mol: Molecule, table: BondTable | None = None) -> str:
    """Order-independent structural hash via iterative neighborhood refinement
    over (element, incident bond orders)."""
    table = table or default_bond_table()
    orders = infer_bonds(mol, table)
    n = mol.n_atoms
    labels = [f"{el}" for el in mol.element_symbols]
    for _ in range(n):
        new = []
        for i in range(n):
            neigh = sorted(f"{orders[i, j]}:{labels[j]}" for j in np.flatnonzero(orders[i] > 0))
            new.append(hashlib.sha256((labels[i] + "|" + ";".join(neigh)).encode()).hexdigest())
        if sorted(new) == sorted(labels):
            break
        labels = new
    digest = hashlib.sha256("|".join(sorted(labels)).encode())
    return digest.hexdigest()


def uniqueness(mols: list[Molecule], table: BondTable | None = None) -> float:
    """Distinct structural hashes over total molecules."""
    if not mols:
        raise DataError("uniqueness of an empty molecule list")
    table = table or default_bond_table()
    hashes = [canonical_hash(m, table) for m in mols]
    return len(set(hashes)) / len(hashes)


def novelty(mols: list[Molecule], reference_hashes: set, table: BondTable | None = None) -> float:
    """Fraction of molecules whose hash is absent from the reference set."""
    if not mols:
        raise DataError("novelty of an empty molecule list")
    table = table or default_bond_table()
    outside = sum(canonical_hash(m, table) not in reference_hashes for m in mols)
    return outside / len(mols)


def molecular_weight(mol: Molecule, table: BondTable | None = None) -> float:
    """Sum of standard atomic weights, g/mol."""
    table = table or default_bond_table()
    return float(sum(table.atomic_weight(el) for el in mol.element_symbols))


def bit_accuracy(m, m_prime) -> float:
    """Matching bits over total bits; payloads must have equal length."""
    a = np.asarray(getattr(m, "bits", m)).reshape(-1)
    b = np.asarray(getattr(m_prime, "bits", m_prime)).reshape(-1)
    if a.size != b.size:
        raise DataError(f"payload lengths differ: {a.size} vs {b.size}")
    return float((a == b).mean())


@dataclass
class QualityReport:
    """Corpus-level fractions with the counts behind them."""

    atom_stability: float
    mol_stability: float
    validity: float
    uniqueness: float
    novelty: float
    n_molecules: int
    n_atoms: int
    n_stable_atoms: int
    n_stable_molecules: int
    n_valid: int
    n_unique: int
    n_novel: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_corpus(mols: list[Molecule], table: BondTable | None = None,
                    reference_hashes: set | None = None) -> QualityReport:
    """Aggregate quality metrics; novelty is 1.0 when no reference is given."""
    if not mols:
        raise DataError("cannot evaluate an empty corpus")
    table = table or default_bond_table()
    stable_atoms = atoms = stable_mols = valid = 0
    hashes = []
    for mol in mols:
        flags = _stable_flags(mol, table)
        stable_atoms += int(flags.sum())
        atoms += mol.n_atoms
        stable_mols += int(flags.all())
        valid += validity(mol, table)
        hashes.append(canonical_hash(mol, table))
    unique = len(set(hashes))
    ref = reference_hashes if reference_hashes is not None else set()
    novel = sum(h not in ref for h in hashes)
    n = len(mols)
    return QualityReport(
        atom_stability=stable_atoms / atoms, mol_stability=stable_mols / n,
        validity=valid / n, uniqueness=unique / n, novelty=novel / n,
        n_molecules=n, n_atoms=atoms, n_stable_atoms=stable_atoms,
        n_stable_molecules=stable_mols, n_valid=valid, n_unique=unique, n_novel=novel)


def corpus_hashes(mols: list[Molecule], table: BondTable | None = None) -> set:
    table = table or default_bond_table()
    return {canonical_hash(m, table) for m in mols}

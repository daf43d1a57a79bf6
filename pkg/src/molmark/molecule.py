"""Molecule data model, XYZ/JSON-lines corpus parsing, and variable-size batching.

Positions are in the dataset's length units (angstrom scale). Atom types are
one-hot rows over a fixed element vocabulary; charges default to formal
charge 0 when the input provides none.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

QM9_ELEMENTS = ("H", "C", "N", "O", "F")

_GEOM_VOCAB_FILE = os.path.join(os.path.dirname(__file__), "data", "geom_drug_elements.txt")


def geom_drug_elements() -> tuple[str, ...]:
    """Load the 16-element drug-like vocabulary shipped as a data file."""
    with open(_GEOM_VOCAB_FILE) as fh:
        elems = tuple(line.strip() for line in fh if line.strip() and not line.startswith("#"))
    return elems


def resolve_vocabulary(name_or_list) -> tuple[str, ...]:
    """Map 'qm9'/'geom' or an explicit element list to a vocabulary tuple."""
    if isinstance(name_or_list, str):
        key = name_or_list.strip().lower()
        if key == "qm9":
            return QM9_ELEMENTS
        if key in ("geom", "geom-drug", "geom_drug"):
            return geom_drug_elements()
        raise DataError(f"unknown vocabulary name {name_or_list!r}")
    return tuple(name_or_list)


@dataclass
class Molecule:
    """A 3D molecule: positions (N,3), one-hot atom types (N,e), charges (N,1)."""

    positions: np.ndarray
    atom_types: np.ndarray
    charges: np.ndarray
    element_symbols: list[str]
    vocabulary: tuple[str, ...] = QM9_ELEMENTS

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.atom_types = np.asarray(self.atom_types, dtype=np.float64)
        self.charges = np.asarray(self.charges, dtype=np.float64).reshape(-1, 1)
        n = self.positions.shape[0]
        if n < 2:
            raise DataError(f"molecule must have at least 2 atoms, got {n}")
        if not np.isfinite(self.positions).all():
            raise DataError("non-finite atom position")
        if self.atom_types.shape != (n, len(self.vocabulary)):
            raise DataError(
                f"atom_types shape {self.atom_types.shape} does not match "
                f"{n} atoms x {len(self.vocabulary)} species"
            )
        ok = np.isin(self.atom_types, (0.0, 1.0)).all() and (self.atom_types.sum(axis=1) == 1.0).all()
        if not ok:
            raise DataError("atom_types rows must be one-hot")
        if len(self.element_symbols) != n:
            raise DataError("element_symbols length mismatch")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def with_positions(self, positions: np.ndarray) -> "Molecule":
        """Copy of this molecule with replaced coordinates; node features untouched."""
        return Molecule(np.array(positions, dtype=np.float64), self.atom_types.copy(),
                        self.charges.copy(), list(self.element_symbols), self.vocabulary)

    @classmethod
    def from_symbols(cls, symbols, positions, vocabulary=QM9_ELEMENTS, charges=None) -> "Molecule":
        vocabulary = tuple(vocabulary)
        index = {el: i for i, el in enumerate(vocabulary)}
        onehot = np.zeros((len(symbols), len(vocabulary)))
        for row, el in enumerate(symbols):
            if el not in index:
                raise DataError(f"element {el!r} not in vocabulary {vocabulary}")
            onehot[row, index[el]] = 1.0
        if charges is None:
            charges = np.zeros((len(symbols), 1))
        return cls(np.asarray(positions, dtype=np.float64), onehot,
                   np.asarray(charges, dtype=np.float64), list(symbols), vocabulary)


@dataclass
class EdgeSet:
    """Complete-graph neighbor lists: row i holds every atom index j != i."""

    edges: np.ndarray

    @classmethod
    def complete(cls, n_atoms: int) -> "EdgeSet":
        idx = np.arange(n_atoms)
        rows = [np.delete(idx, i) for i in range(n_atoms)]
        return cls(np.stack(rows).astype(np.int64))

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64)
        n = e.shape[0]
        if e.shape != (n, n - 1):
            raise DataError(f"edge matrix must be N x (N-1), got {e.shape}")
        for i in range(n):
            expected = np.delete(np.arange(n), i)
            if not np.array_equal(np.sort(e[i]), expected):
                raise DataError(f"edge row {i} is not a permutation of the other atom indices")
        self.edges = e


@dataclass
class MoleculeBatch:
    """Zero-padded stack of molecules with a per-atom validity mask.

    positions (B,1,Nmax,3), atom_types (B,1,Nmax,e), charges (B,1,Nmax,1),
    mask (B,Nmax) with mask[b,i] = 1 iff i < sizes[b].
    """

    positions: np.ndarray
    atom_types: np.ndarray
    charges: np.ndarray
    mask: np.ndarray
    sizes: np.ndarray
    molecules: list[Molecule] = field(default_factory=list, repr=False)

    @property
    def batch_size(self) -> int:
        return self.positions.shape[0]

    @property
    def n_max(self) -> int:
        return self.positions.shape[2]


def parse_xyz(text: str, vocabulary=QM9_ELEMENTS) -> Molecule:
    """Parse one XYZ block: count line, comment line, then 'El x y z [charge]' rows."""
    vocabulary = resolve_vocabulary(vocabulary)
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty XYZ text")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"line 1: malformed atom count {lines[0]!r}") from None
    if len(lines) < count + 2:
        raise ParseError(f"expected {count} atom lines, file ends after line {len(lines)}")
    symbols, positions, charges = [], [], []
    index = {el: i for i, el in enumerate(vocabulary)}
    for k in range(count):
        lineno = k + 3
        parts = lines[k + 2].split()
        if len(parts) not in (4, 5):
            raise ParseError(f"line {lineno}: expected 'Element x y z [charge]', got {lines[k + 2]!r}")
        el = parts[0]
        if el not in index:
            raise ParseError(f"line {lineno}: unknown element symbol {el!r}")
        try:
            xyz = [float(v) for v in parts[1:4]]
            q = float(parts[4]) if len(parts) == 5 else 0.0
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric coordinate in {lines[k + 2]!r}") from None
        if not all(math.isfinite(v) for v in xyz):
            raise ParseError(f"line {lineno}: non-finite coordinate")
        symbols.append(el)
        positions.append(xyz)
        charges.append([q])
    return Molecule.from_symbols(symbols, np.array(positions), vocabulary, np.array(charges))


def write_xyz(mol: Molecule, comment: str = "") -> str:
    """Render a molecule as XYZ text; inverse of parse_xyz to 1e-9 in positions."""
    with_charge = bool(np.any(mol.charges != 0.0))
    lines = [str(mol.n_atoms), comment]
    for i in range(mol.n_atoms):
        x, y, z = mol.positions[i]
        row = f"{mol.element_symbols[i]} {x:.12g} {y:.12g} {z:.12g}"
        if with_charge:
            row += f" {mol.charges[i, 0]:.12g}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def _parse_json_record(line: str, vocabulary) -> Molecule:
    rec = json.loads(line)
    return Molecule.from_symbols(
        rec["elements"], np.array(rec["positions"], dtype=np.float64), vocabulary,
        np.array(rec["charges"], dtype=np.float64).reshape(-1, 1) if "charges" in rec else None,
    )


def _load_file(path: str, vocabulary) -> list[Molecule]:
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".json", ".jsonl")):
        mols = []
        for k, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            try:
                mols.append(_parse_json_record(line, vocabulary))
            except (json.JSONDecodeError, KeyError, DataError) as exc:
                raise ParseError(f"{path}: record {k + 1}: {exc}") from None
        return mols
    # XYZ: possibly several concatenated blocks
    lines = text.splitlines()
    mols, i, record = [], 0, 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        record += 1
        try:
            count = int(lines[i].strip())
        except ValueError:
            raise ParseError(f"{path}: record {record}: line {i + 1}: malformed atom count") from None
        block = "\n".join(lines[i: i + count + 2])
        try:
            mols.append(parse_xyz(block, vocabulary))
        except ParseError as exc:
            raise ParseError(f"{path}: record {record}: {exc}") from None
        i += count + 2
    return mols


def load_corpus(path: str, vocabulary=QM9_ELEMENTS) -> list[Molecule]:
    """Load every molecule under a file or directory, in deterministic order.

    Directories are scanned for .xyz/.json/.jsonl files, lexicographically by
    filename; records keep their in-file order. Any malformed record raises
    with the offending file and record/line named.
    """
    vocabulary = resolve_vocabulary(vocabulary)
    if not os.path.exists(path):
        raise DataError(f"corpus path does not exist: {path}")
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith((".xyz", ".json", ".jsonl")))
        mols = []
        for name in names:
            mols.extend(_load_file(os.path.join(path, name), vocabulary))
    else:
        mols = _load_file(path, vocabulary)
    if not mols:
        raise DataError(f"empty corpus: {path}")
    return mols


def batch_molecules(mols: list[Molecule], batch_size: int) -> list[MoleculeBatch]:
    """Group molecules in order into zero-padded batches of at most batch_size."""
    if not mols:
        raise DataError("cannot batch an empty molecule list")
    if batch_size < 1:
        raise DataError(f"batch size must be >= 1, got {batch_size}")
    e = mols[0].atom_types.shape[1]
    batches = []
    for start in range(0, len(mols), batch_size):
        chunk = mols[start: start + batch_size]
        b = len(chunk)
        n_max = max(m.n_atoms for m in chunk)
        pos = np.zeros((b, 1, n_max, 3))
        types = np.zeros((b, 1, n_max, e))
        charges = np.zeros((b, 1, n_max, 1))
        mask = np.zeros((b, n_max))
        sizes = np.zeros(b, dtype=np.int64)
        for k, m in enumerate(chunk):
            n = m.n_atoms
            pos[k, 0, :n] = m.positions
            types[k, 0, :n] = m.atom_types
            charges[k, 0, :n] = m.charges
            mask[k, :n] = 1.0
            sizes[k] = n
        batches.append(MoleculeBatch(pos, types, charges, mask, sizes, list(chunk)))
    return batches


def unbatch(batches: list[MoleculeBatch]) -> list[Molecule]:
    """Recover the exact molecule list fed to batch_molecules."""
    out = []
    for b in batches:
        for k in range(b.batch_size):
            n = int(b.sizes[k])
            src = b.molecules[k]
            out.append(Molecule(b.positions[k, 0, :n].copy(), b.atom_types[k, 0, :n].copy(),
                                b.charges[k, 0, :n].copy(), list(src.element_symbols), src.vocabulary))
    return out


def random_molecule(rng: np.random.Generator, n_atoms: int, vocabulary=QM9_ELEMENTS,
                    box: float = 1.5, min_dist: float = 0.8) -> Molecule:
    """Synthetic molecule with well-separated atoms uniform in [-box, box]^3."""
    vocabulary = resolve_vocabulary(vocabulary)
    pts = np.empty((0, 3))
    while pts.shape[0] < n_atoms:
        cand = rng.uniform(-box, box, size=3)
        if pts.size == 0 or np.linalg.norm(pts - cand, axis=1).min() > min_dist:
            pts = np.vstack([pts, cand])
    symbols = [vocabulary[i] for i in rng.integers(0, len(vocabulary), size=n_atoms)]
    return Molecule.from_symbols(symbols, pts, vocabulary)


def random_corpus(rng: np.random.Generator, n_molecules: int, n_atoms_range=(5, 12),
                  vocabulary=QM9_ELEMENTS) -> list[Molecule]:
    lo, hi = n_atoms_range
    return [random_molecule(rng, int(rng.integers(lo, hi + 1)), vocabulary)
            for _ in range(n_molecules)]

import numpy as np
import pytest

from molmark.errors import DataError
from molmark.geometry import distance_matrix
from molmark.molecule import random_corpus
from molmark.transforms import (RigidTransform, SweepSpec, apply, compose, default_sweeps,
                                random_transform, reflection_across_axis, rotation_about_axis,
                                sweep, translation_along_axis)


def test_rotation_z_90():
    t = rotation_about_axis("Z", 90)
    assert np.allclose(apply(np.array([[1.0, 0, 0]]), t), [[0, 1, 0]], atol=1e-12)


def test_rotation_zero_is_identity():
    t = rotation_about_axis("X", 0)
    assert np.allclose(t.A, np.eye(3), atol=1e-15) and np.all(t.T == 0)


def test_rotation_full_turn_is_identity():
    t = rotation_about_axis("Y", 360)
    assert np.abs(t.A - np.eye(3)).max() < 1e-12


def test_translation_examples():
    t = translation_along_axis("X", 0.5)
    assert np.allclose(apply(np.zeros((1, 3)), t), [[0.5, 0, 0]])
    assert np.allclose(translation_along_axis("Y", 0).A, np.eye(3))
    t = translation_along_axis("Z", -1.8)
    assert np.allclose(apply(np.array([[0, 0, 1.8]]), t), [[0, 0, 0]])


def test_reflection_examples():
    t = reflection_across_axis("X")
    assert np.allclose(apply(np.array([[1.0, 2, 3]]), t), [[-1, 2, 3]])
    twice = apply(apply(np.array([[1.0, 2, 3]]), t), t)
    assert np.allclose(twice, [[1, 2, 3]])
    ty = reflection_across_axis("Y")
    assert np.allclose(apply(np.array([[1.0, 0, 3]]), ty), [[1, 0, 3]])
    assert np.isclose(np.linalg.det(t.A), -1.0)


def test_apply_rotation_two_points():
    t = rotation_about_axis("Z", 90)
    out = apply(np.array([[1.0, 0, 0], [0, 1.0, 0]]), t)
    assert np.allclose(out, [[0, 1, 0], [-1, 0, 0]], atol=1e-12)


def test_composition_matches_matrix_product_oracle():
    rng = np.random.default_rng(7)
    for _ in range(30):
        t1, t2 = random_transform(rng), random_transform(rng)
        p = rng.normal(size=(6, 3))
        sequential = apply(apply(p, t1), t2)
        # oracle: p (A1 A2) + (T1 A2 + T2)
        direct = p @ (t1.A @ t2.A) + (t1.T @ t2.A + t2.T)
        assert np.abs(sequential - direct).max() < 1e-12
        combined = apply(p, compose(t1, t2))
        assert np.abs(sequential - combined).max() < 1e-12


def test_sweep_sizes():
    assert len(sweep(SweepSpec("rotation", "X"))) == 37
    assert len(sweep(SweepSpec("translation", "Y"))) == 37
    assert len(sweep(SweepSpec("reflection", "Z"))) == 1
    specs = default_sweeps()
    # 37 rotations and 37 translations per axis plus one reflection per axis
    assert sum(len(sweep(s)) for s in specs) == 3 * 37 + 3 * 37 + 3


def test_sweep_value_ranges():
    rot = SweepSpec("rotation", "X")
    assert rot.values[0] == 0.0 and rot.values[-1] == 360.0
    tr = SweepSpec("translation", "Z")
    assert tr.values[0] == -1.8 and tr.values[-1] == 1.8
    assert np.allclose(np.diff(tr.values), 0.1)
    with pytest.raises(DataError):
        SweepSpec("rotation", "X", (0.0, 400.0))
    with pytest.raises(DataError):
        SweepSpec("translation", "X", (-2.5,))


def test_sweep_fragment_round_trip():
    spec = SweepSpec("translation", "Y")
    frag = spec.to_fragment()
    again = SweepSpec.from_fragment(frag)
    assert len(again.values) == 37
    assert np.allclose(again.values, spec.values)


def test_generated_transforms_are_orthogonal():
    rng = np.random.default_rng(1)
    all_specs = default_sweeps()
    transforms = [t for s in all_specs for t in sweep(s)]
    transforms += [random_transform(rng) for _ in range(50)]
    for t in transforms:
        assert np.abs(t.A.T @ t.A - np.eye(3)).max() <= 1e-12
        det = np.linalg.det(t.A)
        assert min(abs(det - 1), abs(det + 1)) <= 1e-12


def test_rotation_determinant_plus_one_reflection_minus_one():
    assert np.isclose(np.linalg.det(rotation_about_axis("X", 123).A), 1.0)
    for ax in "XYZ":
        assert np.isclose(np.linalg.det(reflection_across_axis(ax).A), -1.0)


def test_distance_preservation_property():
    rng = np.random.default_rng(11)
    for mol in random_corpus(rng, 10, (2, 29)):
        d0 = distance_matrix(mol.positions).d
        for _ in range(5):
            t = random_transform(rng)
            d1 = distance_matrix(apply(mol.positions, t)).d
            assert np.abs(d1 - d0).max() <= 1e-9


def test_bad_transform_rejected():
    with pytest.raises(Exception):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))

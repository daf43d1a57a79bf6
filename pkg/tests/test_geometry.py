import numpy as np
import pytest

from molmark.errors import NumericError
from molmark.geometry import (DistanceMatrix, canonical_signs, canonicalize, distance_matrix,
                              double_center, invariant_coordinates, mds_embed)
from molmark.molecule import random_corpus
from molmark.transforms import apply, random_transform


def test_three_four_five_triangle():
    d = distance_matrix(np.array([[0.0, 0, 0], [3.0, 4.0, 0]]))
    assert np.isclose(d.d[0, 1], 5.0)


def test_zero_diagonal():
    rng = np.random.default_rng(0)
    d = distance_matrix(rng.normal(size=(7, 3)))
    assert np.all(np.diag(d.d) == 0.0)


def test_distance_invariance_property():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = rng.normal(size=(rng.integers(2, 30), 3)) * 2
        d0 = distance_matrix(p).d
        t = random_transform(rng)
        assert np.abs(distance_matrix(apply(p, t)).d - d0).max() <= 1e-9


def test_double_center_two_points():
    b = double_center(DistanceMatrix(np.array([[0.0, 2.0], [2.0, 0.0]])))
    assert np.allclose(b, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-12)


def test_double_center_coincident_points():
    b = double_center(DistanceMatrix(np.zeros((4, 4))))
    assert np.all(b == 0.0)


def test_double_center_row_sums_vanish():
    rng = np.random.default_rng(2)
    for _ in range(10):
        d = distance_matrix(rng.normal(size=(8, 3)))
        b = double_center(d)
        assert np.abs(b.sum(axis=1)).max() < 1e-9
        assert np.abs(b - b.T).max() < 1e-12


def test_mds_equilateral_triangle():
    p = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    r = mds_embed(distance_matrix(p))
    # hand eigen-solve: B = J/2 with spectrum {1/2, 1/2, 0}
    assert np.allclose(r.eigenvalues, [0.5, 0.5, 0.0], atol=1e-12)
    assert r.rank_used == 2
    assert np.abs(r.p_hat[:, 2]).max() == 0.0          # planar
    d_back = distance_matrix(r.p_hat).d
    assert np.allclose(d_back, distance_matrix(p).d, atol=1e-9)


def test_mds_two_points():
    r = mds_embed(DistanceMatrix(np.array([[0.0, 2.0], [2.0, 0.0]])))
    p = canonicalize(r)
    assert p.shape == (2, 3)
    assert np.allclose(p, [[1.0, 0, 0], [-1.0, 0, 0]], atol=1e-9)


def test_mds_round_trip_random_point_sets():
    rng = np.random.default_rng(3)
    for _ in range(30):
        p = rng.normal(size=(rng.integers(4, 20), 3)) * 1.5
        d0 = distance_matrix(p)
        p_hat = mds_embed(d0).p_hat
        d1 = distance_matrix(p_hat)
        rel = np.abs(d1.d - d0.d).max() / d0.d.max()
        assert rel <= 1e-6


def test_mds_rejects_invalid_input():
    with pytest.raises(NumericError):
        DistanceMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))       # asymmetric
    with pytest.raises(NumericError):
        DistanceMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))     # negative


def test_no_retained_eigenvalue_negative():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = rng.normal(size=(6, 3))
        p[:, 2] = 0.0                                            # planar: one zero eigenvalue
        r = mds_embed(distance_matrix(p))
        lam = (r.p_hat ** 2).sum(axis=0)                         # recovered column norms
        assert (lam >= 0).all()
        assert r.rank_used <= 3


def test_canonicalize_idempotent():
    rng = np.random.default_rng(5)
    p = rng.normal(size=(9, 3))
    r = mds_embed(distance_matrix(p))
    c1 = canonicalize(r)
    r2 = mds_embed(distance_matrix(c1))
    c2 = canonicalize(r2)
    assert np.abs(np.abs(c1) - np.abs(c2)).max() < 1e-8
    assert np.abs(c1 - c2).max() < 1e-8


def test_canonical_sign_rule():
    col = np.array([[0.1], [-0.9], [0.3]])
    assert canonical_signs(col)[0] == -1.0                       # largest magnitude is negative
    flipped = col * -1.0
    assert canonical_signs(flipped)[0] == 1.0
    assert np.array_equal(col * canonical_signs(col), flipped * canonical_signs(flipped))


def test_canonicalize_negated_column_restored():
    rng = np.random.default_rng(6)
    p = rng.normal(size=(7, 3))
    r = mds_embed(distance_matrix(p))
    base = canonicalize(r)
    negated = r.p_hat.copy()
    negated[:, 1] *= -1.0
    from molmark.geometry import MdsResult
    r2 = MdsResult(negated, r.eigenvalues.copy(), r.rank_used)
    assert np.allclose(canonicalize(r2), base, atol=1e-12)


def test_canonical_invariance_under_rigid_motion():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 25:
        p = rng.normal(size=(rng.integers(4, 15), 3)) * 1.5
        r = mds_embed(distance_matrix(p))
        gaps = np.diff(r.eigenvalues[:4])
        if np.abs(gaps).min() < 1e-3:                            # simple spectra only
            continue
        base = invariant_coordinates(p)
        t = random_transform(rng)
        moved = invariant_coordinates(apply(p, t))
        assert np.abs(moved - base).max() < 1e-6
        checked += 1


def test_canonicalize_bit_stable():
    rng = np.random.default_rng(8)
    p = rng.normal(size=(10, 3))
    a = invariant_coordinates(p)
    b = invariant_coordinates(p.copy())
    assert np.array_equal(a, b)

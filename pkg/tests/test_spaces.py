from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from evolproc import DiscreteSpace, norm, op_norm
from evolproc.errors import DimensionError, GramError
from evolproc.spaces import norms


def test_euclidean_norm():
    sp = DiscreteSpace.euclidean(2)
    assert norm(sp, [3.0, 4.0]) == 5.0


def test_zero_vector_has_zero_norm():
    rng = np.random.default_rng(1)
    sp = DiscreteSpace(random_spd(rng, 4), random_spd(rng, 4))
    assert norm(sp, np.zeros(4), "X") == 0.0
    assert norm(sp, np.zeros(4), "Y") == 0.0


def test_weighted_norm_direct_formula():
    sp = DiscreteSpace(np.diag([2.0, 1.0]), np.eye(2))
    assert norm(sp, [1.0, 1.0], "X") == pytest.approx(math.sqrt(3), rel=1e-15)


def test_op_norm_identity_and_diagonal():
    sp = DiscreteSpace.euclidean(3)
    assert op_norm(sp, sp, np.eye(3)) == pytest.approx(1.0, rel=1e-15)
    sp2 = DiscreteSpace.euclidean(2)
    assert op_norm(sp2, sp2, np.diag([1.0, -3.0])) == pytest.approx(3.0, rel=1e-14)


def test_op_norm_against_brute_force_maximisation():
    frm = DiscreteSpace(np.diag([4.0, 1.0]), np.eye(2))
    to = DiscreteSpace.euclidean(2)
    val = op_norm(frm, to, np.eye(2))
    # brute force over the unit circle of the source norm
    th = np.linspace(0, 2 * np.pi, 20001)
    u = np.stack([np.cos(th), np.sin(th)], axis=1)
    ratio = np.linalg.norm(u, axis=1) / norms(frm, u, "X")
    assert val == pytest.approx(ratio.max(), rel=1e-8)
    assert val == pytest.approx(1.0, rel=1e-12)


def test_embedding_constant_is_best_constant():
    rng = np.random.default_rng(3)
    gx = random_spd(rng, 5)
    gy = gx + random_spd(rng, 5)
    sp = DiscreteSpace(gx, gy)
    us = rng.standard_normal((2000, 5))
    ratios = norms(sp, us, "X") / norms(sp, us, "Y")
    assert ratios.max() <= sp.embed_const * (1 + 1e-12)
    assert sp.embed_const <= 1.0 + 1e-12


def test_sup_norm_constant_bounds_entries():
    rng = np.random.default_rng(4)
    sp = DiscreteSpace(random_spd(rng, 6), random_spd(rng, 6))
    us = rng.standard_normal((3000, 6))
    assert (np.abs(us).max(axis=1) / norms(sp, us, "Y")).max() <= sp.sup_norm_const() * (1 + 1e-12)


@pytest.mark.parametrize(
    "gram",
    [np.array([[1.0, 2.0], [0.0, 1.0]]), np.diag([1.0, -1.0]), np.diag([1.0, 1e-14]), np.ones(3)],
)
def test_invalid_grams_are_rejected(gram):
    with pytest.raises(GramError):
        DiscreteSpace(gram, np.eye(len(gram)))


def test_dimension_mismatch():
    sp = DiscreteSpace.euclidean(3)
    with pytest.raises(DimensionError):
        norm(sp, [1.0, 2.0])
    with pytest.raises(DimensionError):
        op_norm(sp, sp, np.eye(2))


def test_op_norm_is_vectorised():
    rng = np.random.default_rng(5)
    sp = DiscreteSpace(random_spd(rng, 3), random_spd(rng, 3))
    ms = rng.standard_normal((7, 3, 3))
    batched = op_norm(sp, sp, ms, "X", "Y")
    assert batched.shape == (7,)
    assert np.allclose(batched, [op_norm(sp, sp, m, "X", "Y") for m in ms], rtol=1e-14)


seeds = st.integers(0, 2**32 - 1)


@pytest.mark.invariant
@given(seeds, st.integers(1, 6))
def test_op_norm_submultiplicative(seed, d):
    rng = np.random.default_rng(seed)
    s1, s2, s3 = (DiscreteSpace(random_spd(rng, d), random_spd(rng, d)) for _ in range(3))
    a, b = rng.standard_normal((2, d, d))
    lhs = op_norm(s1, s3, a @ b)
    rhs = op_norm(s2, s3, a) * op_norm(s1, s2, b)
    assert lhs <= rhs * (1 + 1e-12)


@pytest.mark.invariant
@given(seeds, st.integers(1, 8))
def test_op_norm_identity_grams_matches_power_iteration(seed, d):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((d, d))
    sp = DiscreteSpace.euclidean(d)
    v = rng.standard_normal(d)
    g = m.T @ m
    for _ in range(5000):
        w = g @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        if np.linalg.norm(w / nw - v) < 1e-15:
            v = w / nw
            break
        v = w / nw
    est = math.sqrt(v @ g @ v)
    assert op_norm(sp, sp, m) == pytest.approx(est, rel=1e-10)

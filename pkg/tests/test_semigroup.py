from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import const_family, random_sectorial
from evolproc import Contour, SemigroupEvaluator, eta
from evolproc.errors import DomainError
from evolproc.problems import ReactionDiffusionConfig, build_reaction_diffusion
from evolproc.spaces import op_norm


def eig_expm(a: np.ndarray, t: float) -> np.ndarray:
    """Oracle: ``exp(-t a)`` through a dense eigendecomposition."""
    w, v = np.linalg.eig(a)
    return (v * np.exp(-t * w)) @ np.linalg.inv(v)


def rel_fro(x, y):
    return np.linalg.norm(x - y) / np.linalg.norm(y)


def test_diagonal_semigroup():
    ev = SemigroupEvaluator(const_family(np.diag([1.0, 2.0])))
    out = ev.semigroup_at(0.3, 1.0)
    assert np.allclose(out, np.diag([math.exp(-1), math.exp(-2)]), rtol=1e-12, atol=1e-14)


def test_time_zero_is_identity():
    ev = SemigroupEvaluator(const_family(random_sectorial(np.random.default_rng(0), 4)))
    assert np.array_equal(ev.semigroup_at(0.0, 0.0), np.eye(4))
    assert np.array_equal(ev.semigroups(0.0, [0.0, 0.5])[0], np.eye(4))


def test_negative_time_rejected():
    ev = SemigroupEvaluator(const_family(1.0))
    with pytest.raises(DomainError):
        ev.semigroup_at(0.0, -0.1)


def test_sign_self_check():
    Contour().sign_check()
    ev = SemigroupEvaluator(const_family(1.0))
    assert ev.semigroup_at(0.0, 1.0)[0, 0] == pytest.approx(math.exp(-1), rel=1e-12)


@pytest.mark.parametrize("t", [0.1, 1.0])
def test_matches_eigendecomposition_oracle(t):
    rng = np.random.default_rng(2024)
    for _ in range(20):
        a = random_sectorial(rng, 6)
        out = SemigroupEvaluator(const_family(a)).semigroup_at(0.0, t)
        assert rel_fro(out, eig_expm(a, t)) <= 1e-8


def test_batched_path_matches_single_path():
    rng = np.random.default_rng(7)
    a = random_sectorial(rng, 5)
    ev = SemigroupEvaluator(const_family(a))
    ts = np.array([0.02, 0.1, 0.5, 1.0, 3.0])
    batch = ev.semigroups(0.0, ts)
    for t, m in zip(ts, batch):
        assert rel_fro(m, eig_expm(a, t)) <= 1e-10
        assert rel_fro(m, ev.semigroup_at(0.0, t)) <= 1e-10


def test_tanh_sinh_variant():
    rng = np.random.default_rng(8)
    a = random_sectorial(rng, 4)
    ev = SemigroupEvaluator(const_family(a), Contour(quadrature="tanh-sinh", nodes_per_ray=200))
    assert rel_fro(ev.semigroup_at(0.0, 1.0), eig_expm(a, 1.0)) <= 1e-8


def test_a_semigroup_scalar_and_diagonal():
    ev = SemigroupEvaluator(const_family(2.0))
    assert ev.a_semigroup_at(0.0, 1.0)[0, 0] == pytest.approx(2 * math.exp(-2), rel=1e-12)
    ev2 = SemigroupEvaluator(const_family(np.diag([1.0, 4.0])))
    expect = np.diag([math.exp(-0.5), 4 * math.exp(-2)])
    assert np.allclose(ev2.a_semigroup_at(0.0, 0.5), expect, rtol=1e-12, atol=1e-14)
    assert np.allclose(ev2.a_semigroup_contour(0.0, 0.5), expect, rtol=1e-10, atol=1e-12)


def test_a_semigroup_two_routes_agree():
    rng = np.random.default_rng(9)
    a = random_sectorial(rng, 5)
    ev = SemigroupEvaluator(const_family(a))
    for t in (0.05, 0.5, 2.0):
        assert rel_fro(ev.a_semigroup_contour(0.0, t), ev.a_semigroup_at(0.0, t)) <= 1e-9


def test_smoothing_constant_stable_under_refinement():
    """``sup_t t |A T(t)|`` is finite and does not move when the quadrature is refined."""
    fam = build_reaction_diffusion(ReactionDiffusionConfig(n_cells=32), 0.0).fam
    sp = fam.space
    ts = np.geomspace(0.01, 1.0, 15)

    def sup(contour):
        ev = SemigroupEvaluator(fam, contour)
        return max(t * op_norm(sp, sp, ev.a_semigroup_at(0.5, t)) for t in ts)

    coarse = sup(Contour())
    fine = sup(Contour(panel_nodes=24, reach=60))
    assert math.isfinite(coarse)
    assert coarse == pytest.approx(fine, rel=1e-8)
    assert coarse <= 1 / math.e + 1e-8  # self-adjoint: sup_s s e^{-s}


def test_generator_first_order():
    rng = np.random.default_rng(10)
    a = random_sectorial(rng, 4)
    ev = SemigroupEvaluator(const_family(a))
    hs = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    errs = [np.linalg.norm((np.eye(4) - ev.semigroup_at(0.0, h)) / h - a) for h in hs]
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(slopes > 0.9)


# --------------------------------------------------------------------------- invariants

seeds = st.integers(0, 2**32 - 1)
times = st.floats(0.01, 1.0)


@pytest.mark.invariant
@given(seeds, times, times)
def test_semigroup_property(seed, t, s):
    a = random_sectorial(np.random.default_rng(seed), 4)
    ev = SemigroupEvaluator(const_family(a))
    lhs = ev.semigroup_at(0.0, t) @ ev.semigroup_at(0.0, s)
    assert rel_fro(lhs, ev.semigroup_at(0.0, t + s)) <= 1e-8


@pytest.mark.invariant
@given(seeds, st.sampled_from([0.25, 0.5, 0.75]))
def test_semigroup_distance_bound(seed, theta):
    """``|T_e(t) - T_0(t)| <= C t^{-theta} eta^theta`` with ``C`` stable across ``eps``."""
    rng = np.random.default_rng(seed)
    base = random_sectorial(rng, 3)
    pert = rng.standard_normal((3, 3))
    f0 = const_family(base)
    ev0 = SemigroupEvaluator(f0)
    ts = np.geomspace(0.01, 1.0, 6)
    cs = []
    for e in (1e-1, 1e-2, 1e-3):
        fe = const_family(base + e * pert, eps=e)
        evs = SemigroupEvaluator(fe)
        et = eta(fe, f0, [0.0])
        ratio = max(np.linalg.norm(evs.semigroup_at(0.0, t) - ev0.semigroup_at(0.0, t), 2) * t**theta
                    for t in ts) / et**theta
        cs.append(ratio)
    # the fitted constant does not grow as eps decreases
    assert cs[-1] <= 1.1 * cs[0]


@pytest.mark.invariant
@given(st.sampled_from([4, 8, 16]))
def test_smoothing_into_y(n_cells):
    """``t^{1 - beta} |T(t)|_{L(X, Y)}`` stays bounded on ``[1e-3, 1]`` with ``beta = 1/2``."""
    fam = build_reaction_diffusion(ReactionDiffusionConfig(n_cells=n_cells), 0.0).fam
    ev = SemigroupEvaluator(fam)
    sp = fam.space
    ts = np.geomspace(1e-3, 1.0, 12)
    vals = [t**0.5 * op_norm(sp, sp, ev.semigroup_at(0.0, t), "X", "Y") for t in ts]
    assert max(vals) <= 2.0

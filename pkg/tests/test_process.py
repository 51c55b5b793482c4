from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import const_family, random_sectorial, scalar_family
from evolproc import (
    DiscreteSpace,
    OperatorFamily,
    SemigroupEvaluator,
    TimeGrid,
    build_process,
    check_process_axioms,
    process_distance,
    propagate,
    solve_phi,
)
from evolproc.errors import ConvergenceError, DomainError, GridMismatchError
from evolproc.problems import ReactionDiffusionConfig, build_reaction_diffusion
from evolproc.process import dump_process_json, load_process, phi_kernel, product_weights, save_process
from evolproc.spaces import op_norm


def process_for(fam, grid, method="product-integration", **kw):
    ev = SemigroupEvaluator(fam)
    return build_process(ev, solve_phi(ev, grid, method, **kw))


def matrix_ode_oracle(fam, ts):
    """``U' = -A(t) U, U(t_0) = I`` by implicit Radau at tight tolerances."""
    d = fam.dim
    eye = sps.identity(d, format="csr")
    sol = solve_ivp(lambda t, y: (-fam(t) @ y.reshape(d, d)).ravel(), (ts[0], ts[-1]), np.eye(d).ravel(),
                    method="Radau", t_eval=ts, rtol=1e-12, atol=1e-14,
                    jac=lambda t, y: sps.kron(sps.csr_matrix(-fam(t)), eye, format="csc"))
    return sol.y.T.reshape(len(ts), d, d)


def scalar_phi_oracle(a, ts):
    """Nyström trapezoid solution of ``P(t) = k(t, 0) + int_0^t k(t, s) P(s) ds``."""
    k = lambda t, s: (a(s) - a(t)) * np.exp(-a(s) * (t - s))  # noqa: E731
    p = np.zeros(len(ts))
    for i in range(1, len(ts)):
        h = np.diff(ts[: i + 1])
        w = np.zeros(i + 1)
        w[:-1] += h / 2
        w[1:] += h / 2
        p[i] = k(ts[i], ts[0]) + np.dot(w[:i] * k(ts[i], ts[:i]), p[:i])
    return p


@pytest.fixture(scope="module")
def rd16():
    return build_reaction_diffusion(ReactionDiffusionConfig(n_cells=16, a="2 + sin(t)*cos(pi*x)"), 0.0)


# --------------------------------------------------------------------------- grid


def test_grid_nodes_and_refinement():
    g = TimeGrid(0.0, 1.0, 4)
    assert np.allclose(g.nodes, [0, 1 / 16, 1 / 4, 9 / 16, 1])
    assert np.array_equal(g.refine(2).nodes[::2], g.nodes)
    assert g.refine(2).coarsen() == g
    assert g.index_of(0.25) == 2
    u = TimeGrid(1.0, 3.0, 4, rule="uniform")
    assert np.allclose(u.nodes, [1, 1.5, 2, 2.5, 3])


@pytest.mark.parametrize("kw", [dict(tau=1.0, t_end=1.0, n_steps=4), dict(tau=0, t_end=1, n_steps=0),
                                dict(tau=0, t_end=1, n_steps=4, rule="cubic")])
def test_grid_validation(kw):
    with pytest.raises(DomainError):
        TimeGrid(**kw)


def test_index_of_off_grid():
    with pytest.raises(DomainError):
        TimeGrid(0, 1, 4).index_of(0.3)


# --------------------------------------------------------------------------- phi kernel


def test_phi_kernel_autonomous_zero():
    ev = SemigroupEvaluator(const_family(random_sectorial(np.random.default_rng(0), 3)))
    assert np.array_equal(phi_kernel(ev, 1.0, 0.0), np.zeros((3, 3)))


def test_phi_kernel_scalar():
    ev = SemigroupEvaluator(scalar_family(lambda t: 1 + t))
    assert phi_kernel(ev, 1.0, 0.0)[0, 0] == pytest.approx(-math.exp(-1), rel=1e-12)


def test_phi_autonomous_vanishes():
    ev = SemigroupEvaluator(const_family(np.diag([1.0, 3.0])))
    phi = solve_phi(ev, TimeGrid(0, 1, 16))
    assert np.array_equal(phi.table, np.zeros_like(phi.table))


def test_phi_scalar_matches_refined_trapezoid():
    a = lambda t: 1 + 0.5 * t  # noqa: E731
    ev = SemigroupEvaluator(scalar_family(a))
    errs = []
    for n in (64, 128):
        g = TimeGrid(0, 1, n)
        ours = solve_phi(ev, g).values[:, 0, 0]
        oracle = scalar_phi_oracle(a, g.refine(4).nodes)[::4]
        errs.append(np.abs(ours - oracle).max())
    assert errs[1] <= 1e-6
    assert errs[0] / errs[1] >= 3.5  # second order


@pytest.mark.parametrize("fam_kind", ["scalar", "rd"])
def test_phi_methods_agree(fam_kind, rd16):
    fam = scalar_family(lambda t: 1 + t) if fam_kind == "scalar" else rd16.fam
    ev = SemigroupEvaluator(fam)
    g = TimeGrid(0, 1, 16)
    rule = product_weights(ev, g)
    tol = 1e-10
    direct = solve_phi(ev, g, rule=rule)
    neumann = solve_phi(ev, g, "neumann", tol=tol, rule=rule)
    sp = fam.space
    diff = (direct.table - neumann.table).transpose(0, 2, 1, 3).reshape(-1, fam.dim, fam.dim)
    assert np.max(op_norm(sp, sp, diff)) <= 10 * tol
    assert neumann.iterations > 1 and neumann.residuals[-1] <= tol


def test_neumann_iteration_limit():
    ev = SemigroupEvaluator(scalar_family(lambda t: 1 + t))
    with pytest.raises(ConvergenceError) as exc:
        solve_phi(ev, TimeGrid(0, 1, 8), "neumann", tol=1e-300, max_iter=2)
    assert len(exc.value.history) == 2


def test_unknown_method():
    ev = SemigroupEvaluator(scalar_family(lambda t: 1 + t))
    with pytest.raises(DomainError):
        solve_phi(ev, TimeGrid(0, 1, 8), "galerkin")


def test_phi_singularity_bound_stable(rd16):
    bounds = []
    for n in (16, 32):
        ev = SemigroupEvaluator(rd16.fam)
        bounds.append(solve_phi(ev, TimeGrid(0, 1, n)).singularity_bound(rd16.fam))
    assert all(math.isfinite(b) for b in bounds)
    assert bounds[1] == pytest.approx(bounds[0], rel=0.05)


# --------------------------------------------------------------------------- process


def test_autonomous_process_is_semigroup():
    a = random_sectorial(np.random.default_rng(1), 4)
    fam = const_family(a)
    g = TimeGrid(0.5, 1.5, 16)
    p = process_for(fam, g)
    ev = SemigroupEvaluator(fam)
    for j in (0, 5):
        expect = ev.semigroups(0.5, g.nodes[j:] - g.nodes[j])
        assert np.allclose(p.values[j:, j], expect, rtol=0, atol=1e-13)
    rep = check_process_axioms(p)
    assert rep.identity_defect == 0.0
    assert rep.cocycle_defect <= 1e-10


def test_scalar_process_closed_form():
    fam = scalar_family(lambda t: 1 + t)
    errs = []
    for n in (64, 256):
        p = process_for(fam, TimeGrid(0, 1, n))
        errs.append(max(abs(p.values[i, 0, 0, 0] - math.exp(-(t + t * t / 2))) for i, t in enumerate(p.nodes)))
    assert math.exp(-1.5) == pytest.approx(0.223130, abs=5e-7)
    assert p(1.0, 0.0)[0, 0] == pytest.approx(math.exp(-1.5), rel=1e-5)
    assert errs[0] <= 1e-4 * math.exp(-1.5)
    assert errs[0] / errs[1] >= 12  # second order


def test_identity_on_diagonal(rd16):
    p = process_for(rd16.fam, TimeGrid(0, 1, 16))
    idx = np.arange(p.grid.size)
    assert np.array_equal(p.values[idx, idx], np.broadcast_to(np.eye(16), (p.grid.size, 16, 16)))


def test_random_nonautonomous_matches_ode_oracle():
    rng = np.random.default_rng(11)
    base = random_sectorial(rng, 6)
    drift = rng.standard_normal((6, 6))
    drift = drift @ drift.T
    drift *= 2.0 / np.linalg.norm(drift, 2)  # variation comparable to the spread of the spectrum
    fam = OperatorFamily(DiscreteSpace.euclidean(6), lambda t: base + math.sin(2 * t) * drift)
    g64 = TimeGrid(0, 1, 64)
    ref = matrix_ode_oracle(fam, g64.refine(2).nodes)
    errs = []
    for g in (g64.coarsen(), g64):
        p = process_for(fam, g)
        k = [g64.refine(2).index_of(t) for t in g.nodes]
        errs.append(max(np.linalg.norm(p.values[i, 0] - ref[k[i]], 2) / np.linalg.norm(ref[k[i]], 2)
                        for i in range(1, g.size)))
    assert errs[1] <= 1e-4
    assert errs[1] < errs[0]


def test_process_call_and_bounds(rd16):
    p = process_for(rd16.fam, TimeGrid(0, 1, 16))
    assert np.array_equal(p(p.nodes[5], p.nodes[2]), p.values[5, 2])
    with pytest.raises(DomainError):
        p(0.1, 0.5)
    with pytest.raises(DomainError):
        p(0.3, 0.0)


def test_tolerance_is_measured(rd16):
    ev = SemigroupEvaluator(rd16.fam)
    p = propagate(ev, TimeGrid(0, 1, 16))
    assert p.tolerance is not None and 0 < p.tolerance < 1e-2
    rep = check_process_axioms(p)
    assert rep.cocycle_ok
    assert rep.bound_x >= 1 and math.isfinite(rep.fitted_K)
    assert math.isfinite(rep.bound_xy_beta) and math.isfinite(rep.derivative_bound)


def test_generator_residual_first_order(rd16):
    res = [check_process_axioms(process_for(rd16.fam, TimeGrid(0, 1, n))).generator_residual for n in (16, 32)]
    assert res[0] / res[1] >= 1.8


def test_axioms_need_eight_nodes():
    p = process_for(scalar_family(lambda t: 1 + t), TimeGrid(0, 1, 4))
    with pytest.raises(DomainError):
        check_process_axioms(p)


def test_process_distance_same_and_closed_form():
    g = TimeGrid(0, 1, 32)
    a0 = lambda t: 1 + 0.5 * t  # noqa: E731
    p0 = process_for(scalar_family(a0), g)
    assert np.array_equal(process_distance(p0, p0), np.zeros(g.size))
    e = 0.05
    pe = process_for(scalar_family(lambda t: a0(t) + e, e), g)
    d = process_distance(pe, p0)
    ts = g.nodes
    exact = np.exp(-(ts + ts**2 / 4)) * (1 - np.exp(-e * ts))
    assert np.all(d <= exact * (1 + 1e-4) + 1e-12)
    assert np.allclose(d, exact, rtol=1e-4, atol=1e-12)


def test_process_distance_grid_mismatch():
    f = scalar_family(lambda t: 1 + t)
    with pytest.raises(GridMismatchError):
        process_distance(process_for(f, TimeGrid(0, 1, 8)), process_for(f, TimeGrid(0, 1, 16)))


def test_save_load_round_trip(tmp_path, rd16):
    p = process_for(rd16.fam, TimeGrid(0, 1, 8))
    path = save_process(p, tmp_path / "proc.npz")
    q = load_process(path, rd16.fam)
    assert np.array_equal(q.values, p.values) and q.grid == p.grid
    js = dump_process_json(p, tmp_path / "proc.json")
    assert js.read_text().startswith("{")


# --------------------------------------------------------------------------- invariants


@pytest.mark.invariant
@given(st.integers(0, 2**32 - 1))
def test_cocycle_defect_shrinks_with_refinement(seed):
    rng = np.random.default_rng(seed)
    base = random_sectorial(rng, 3)
    drift = rng.standard_normal((3, 3))
    fam = OperatorFamily(DiscreteSpace.euclidean(3), lambda t: base + 0.5 * t * (drift @ drift.T))
    defects = [check_process_axioms(process_for(fam, TimeGrid(0, 1, n)), n_triples=500).cocycle_defect
               for n in (8, 16)]
    assert defects[1] < defects[0]


@pytest.mark.invariant
@given(st.sampled_from([8, 16]))
def test_process_bounds(n_cells):
    """``|U| <= C e^{K (t - s)}`` with the reported fit and bounded ``(t - s)^{1 - beta} |U|_{L(X,Y)}``."""
    fam = build_reaction_diffusion(ReactionDiffusionConfig(n_cells=n_cells), 0.0).fam
    p = process_for(fam, TimeGrid(0, 1, 16))
    rep = check_process_axioms(p, n_triples=200)
    sp = fam.space
    ii, jj = np.tril_indices(p.grid.size, k=-1)
    gaps = p.nodes[ii] - p.nodes[jj]
    nx = op_norm(sp, sp, p.values[ii, jj])
    assert np.all(nx <= 1.0 + 1e-6)  # contraction: A(t) is accretive in X
    assert rep.bound_xy_beta <= 3.0
    assert np.all(np.isfinite(gaps**0.5 * op_norm(sp, sp, p.values[ii, jj], "X", "Y")))


@pytest.mark.invariant
@given(st.sampled_from([0.5, 1.0]))
def test_phi_singularity_bound_invariant(delta):
    fam = build_reaction_diffusion(ReactionDiffusionConfig(n_cells=8), 0.0).fam
    ev = SemigroupEvaluator(fam)
    b = [solve_phi(ev, TimeGrid(0, 1, n), delta=delta).singularity_bound(fam) for n in (8, 16)]
    assert math.isfinite(b[1]) and b[1] <= 1.2 * b[0]

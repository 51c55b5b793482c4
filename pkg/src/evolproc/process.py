"""Linear evolution processes ``U(t, tau)`` from the parametrix construction.

With ``T_s = T_{A(s)}`` the frozen semigroup,

    phi(t, tau) = [A(tau) - A(t)] T_tau(t - tau)
    Phi(t, tau) = phi(t, tau) + int_tau^t phi(t, s) Phi(s, tau) ds
    U(t, tau)   = T_tau(t - tau) + int_tau^t T_s(t - s) Phi(s, tau) ds

Both integrals have the form ``int T_s(t_i - s) g(s) ds``.  On a panel
``[t_k, t_{k+1}]`` the stiff factor is frozen at an endpoint and integrated
exactly against the linear interpolant of ``g`` (exponential product
integration); the resulting matrix weights ``V[i, m]`` are shared by the
Volterra solve and the assembly.  Every column ``j`` of the tables uses
``t_j`` as its initial time, so ``U(t_i, t_j)`` for all ``i >= j`` comes out
of the same pass and the cocycle is never used to fill entries.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._io import atomic_savez, atomic_write_json
from .errors import ConvergenceError, DomainError, GridMismatchError
from .family import OperatorFamily, estimate_delta
from .semigroup import SemigroupEvaluator
from .spaces import op_norm

SCHEMA = "evolproc.process/1"
RULES = ("uniform", "graded")
METHODS = ("product-integration", "neumann")


@dataclass(frozen=True)
class TimeGrid:
    """Nodes ``tau + (t_end - tau) (j/n)^q``; ``q = 1`` for the uniform rule."""

    tau: float
    t_end: float
    n_steps: int
    rule: str = "graded"
    q: float = 2.0

    def __post_init__(self) -> None:
        if not self.tau < self.t_end:
            raise DomainError(f"grid needs tau < t_end, got [{self.tau}, {self.t_end}]")
        if self.n_steps < 1:
            raise DomainError("n_steps must be positive")
        if self.rule not in RULES:
            raise DomainError(f"unknown grid rule {self.rule!r}")
        if self.q < 1:
            raise DomainError(f"grading exponent must be >= 1, got {self.q}")

    @cached_property
    def nodes(self) -> np.ndarray:
        s = np.arange(self.n_steps + 1) / self.n_steps
        if self.rule == "graded":
            s = s**self.q
        out = self.tau + (self.t_end - self.tau) * s
        out[-1] = self.t_end
        out.setflags(write=False)
        return out

    @property
    def size(self) -> int:
        return self.n_steps + 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self, factor: int = 2) -> "TimeGrid":
        """Same rule with ``factor`` times the steps; old nodes stay nodes."""
        return TimeGrid(self.tau, self.t_end, self.n_steps * factor, self.rule, self.q)

    def coarsen(self) -> "TimeGrid":
        if self.n_steps % 2:
            raise DomainError("only grids with an even step count can be coarsened")
        return TimeGrid(self.tau, self.t_end, self.n_steps // 2, self.rule, self.q)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a grid node")
        return i

    def as_dict(self) -> dict:
        return {"tau": self.tau, "t_end": self.t_end, "n_steps": self.n_steps,
                "rule": self.rule, "q": self.q}


@dataclass(eq=False)
class ProductRule:
    """Quadrature tables shared by the Volterra solve and the assembly.

    ``T[i, j] = T_{A(t_j)}(t_i - t_j)``; ``V[i, m]`` is the weight multiplying
    the node value ``g(t_m)`` in ``int_{t_j}^{t_i} T_s(t_i - s) g(s) ds``.
    ``panel_left[k]``, ``panel_right[k]`` are the one-panel weights used by
    the semilinear solver.
    """

    grid: TimeGrid
    A: np.ndarray
    T: np.ndarray
    V: np.ndarray
    panel_left: np.ndarray
    panel_right: np.ndarray


def _endpoint_integrals(b: np.ndarray, binv: np.ndarray, e: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``J0 = int_0^h T(r) dr`` and ``J1 = int_0^h r T(r) dr`` with ``e = T(h)``."""
    eye = np.eye(b.shape[0])
    j0 = binv @ (eye - e)
    j1 = binv @ (j0 - h * e)
    return j0, j1


def product_weights(ev: SemigroupEvaluator, grid: TimeGrid, workers: int = 1) -> ProductRule:
    ts = grid.nodes
    n = grid.n_steps
    big_n = n + 1
    fam = ev.fam
    d = fam.dim
    h = grid.steps
    t_min = float(h.min())
    A = fam.stack(ts)
    T = np.zeros((big_n, big_n, d, d))
    V = np.zeros_like(T)
    pl = np.zeros((n, d, d))
    pr = np.zeros((n, d, d))

    def column(j: int) -> None:
        r1 = ts[j:] - ts[j]
        r2 = ts[j + 1:] - ts[j + 1] if j < n else np.zeros(0)
        hs = [h[j] if j < n else 0.0, h[j - 1] if j > 0 else 0.0]
        s = ev.semigroups(ts[j], np.concatenate([r1, r2, hs]), t_min=t_min)
        s1, s2 = s[: r1.size], s[r1.size: r1.size + r2.size]
        T[j:, j] = s1
        binv = fam.inverse(ts[j])
        if j < n:
            _, j1 = _endpoint_integrals(A[j], binv, s[-2], h[j])
            pl[j] = j1 / h[j]
            V[j + 1:, j] += s2 @ pl[j]
        if j > 0:
            j0, j1 = _endpoint_integrals(A[j], binv, s[-1], h[j - 1])
            pr[j - 1] = j0 - j1 / h[j - 1]
            V[j:, j] += s1 @ pr[j - 1]

    # each column writes a disjoint slice of T, V, pl, pr
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(column, range(big_n)))
    else:
        for j in range(big_n):
            column(j)
    return ProductRule(grid, A, T, V, pl, pr)


def phi_kernel(ev: SemigroupEvaluator, t: float, tau: float) -> np.ndarray:
    """``[A(tau) - A(t)] T_{A(tau)}(t - tau)``."""
    if not t > tau:
        raise DomainError(f"phi kernel needs t > tau, got t={t}, tau={tau}")
    fam = ev.fam
    return (fam(tau) - fam(t)) @ ev.semigroup_at(tau, t - tau)


@dataclass(eq=False)
class PhiResolvent:
    """Discrete ``Phi(t_i, t_j)`` for every start node ``j``.

    ``table`` is stored as ``(i, a, j, c)`` so that sums over the middle time
    index become single matrix products.
    """

    grid: TimeGrid
    table: np.ndarray
    delta: float
    method: str
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    rule: ProductRule | None = field(default=None, repr=False)

    def pair(self, i: int, j: int) -> np.ndarray:
        return self.table[i, :, j, :]

    @property
    def values(self) -> np.ndarray:
        """``Phi(t_i, tau)`` at every node, shape ``(N, d, d)``."""
        return np.ascontiguousarray(self.table[:, :, 0, :])

    def singularity_bound(self, fam: OperatorFamily) -> float:
        """``max_i (t_i - tau)^{1 - delta} |Phi(t_i, tau)|_X`` over ``i >= 1``."""
        sp = fam.space
        s = self.grid.nodes[1:] - self.grid.tau
        return float(np.max(s ** (1 - self.delta) * op_norm(sp, sp, self.values[1:])))


def _volterra_data(rule: ProductRule) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-row kernel weights ``Q_i = [(A_m - A_i) V[i, m]]_m`` and ``phi`` table."""
    A, T, V = rule.A, rule.T, rule.V
    big_n, d = A.shape[0], A.shape[1]
    q_rows = []
    phi = np.zeros((big_n, d, big_n, d))
    for i in range(big_n):
        q = (A[:i] - A[i]) @ V[i, :i]
        q_rows.append(q.transpose(1, 0, 2).reshape(d, i * d))
        phi[i, :, :i, :] = ((A[:i] - A[i]) @ T[i, :i]).transpose(1, 0, 2)
    return q_rows, phi


def _resolve_delta(fam: OperatorFamily, grid: TimeGrid, delta: float | None) -> float:
    if delta is not None:
        return float(delta)
    declared = fam.declared.delta if fam.declared is not None else 1.0
    probe = np.linspace(grid.tau, grid.t_end, 9)
    fit = estimate_delta(fam, probe, grid.tau)
    if fit.autonomous:
        return declared
    return float(min(declared, max(fit.delta_fit, 1e-3), 1.0))


def solve_phi(
    ev: SemigroupEvaluator,
    grid: TimeGrid,
    method: str = "product-integration",
    tol: float = 1e-10,
    max_iter: int = 200,
    delta: float | None = None,
    rule: ProductRule | None = None,
    workers: int = 1,
) -> PhiResolvent:
    """Discrete solution of the Volterra equation for ``Phi``.

    The product rule integrates the stiff factor exactly, so the weak
    singularity of the kernel needs no special weights; ``delta`` only
    enters through the grid grading and the reported singularity bound.
    ``delta`` defaults to ``min(declared, fitted)``.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {METHODS}")
    if rule is None:
        rule = product_weights(ev, grid, workers)
    elif rule.grid != grid:
        raise GridMismatchError("product rule was built on a different grid")
    delta = _resolve_delta(ev.fam, grid, delta)
    q_rows, phi = _volterra_data(rule)
    big_n, d = grid.size, ev.fam.dim

    if method == "product-integration":
        table = np.zeros_like(phi)
        for i in range(1, big_n):
            acc = (q_rows[i] @ table[:i].reshape(i * d, big_n * d)).reshape(d, big_n, d)
            table[i, :, :i, :] = phi[i, :, :i, :] + acc[:, :i]
        return PhiResolvent(grid, table, delta, method, 1, [], rule)

    sp = ev.fam.space
    table = phi.copy()
    history: list[float] = []
    growth = 0
    for it in range(1, max_iter + 1):
        new = phi.copy()
        for i in range(1, big_n):
            acc = (q_rows[i] @ table[:i].reshape(i * d, big_n * d)).reshape(d, big_n, d)
            new[i, :, :i, :] += acc[:, :i]
        diff = (new - table).transpose(0, 2, 1, 3)
        dist = float(np.max(op_norm(sp, sp, diff.reshape(-1, d, d)))) if diff.size else 0.0
        history.append(dist)
        table = new
        if dist <= tol:
            return PhiResolvent(grid, table, delta, method, it, history, rule)
        growth = growth + 1 if len(history) > 1 and dist > history[-2] else 0
        if growth >= 3:
            raise ConvergenceError(
                "Neumann iteration is not contracting on this grid; refine the grid", history
            )
    raise ConvergenceError(f"Neumann iteration did not reach tol={tol} in {max_iter} sweeps", history)


@dataclass(eq=False)
class EvolutionProcess:
    """``U(t_i, t_j)`` for ``i >= j`` on a fixed grid.

    ``values[i, j]`` is zero above the diagonal.  ``tolerance`` is the
    discretization tolerance, the largest ``L(X)`` change against the
    half-resolution build at shared nodes, when it has been measured.
    """

    fam: OperatorFamily
    grid: TimeGrid
    values: np.ndarray
    panel_left: np.ndarray
    panel_right: np.ndarray
    tolerance: float | None = None
    delta: float = 1.0
    method: str = "product-integration"

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def space(self):
        return self.fam.space

    def __call__(self, t: float, s: float) -> np.ndarray:
        i, j = self.grid.index_of(t), self.grid.index_of(s)
        if i < j:
            raise DomainError(f"U(t, s) needs t >= s, got t={t}, s={s}")
        return self.values[i, j]

    def from_start(self, j: int = 0) -> np.ndarray:
        """``U(t_i, t_j)`` for ``i >= j``."""
        return self.values[j:, j]

    def meta(self) -> dict:
        return {"schema": SCHEMA, "grid": self.grid.as_dict(), "dim": self.fam.dim,
                "family": self.fam.name, "epsilon": self.fam.epsilon,
                "tolerance": self.tolerance, "delta": self.delta, "method": self.method,
                "quadrature": "exponential product rule, linear interpolation of the smooth factor"}


def build_process(
    ev: SemigroupEvaluator,
    phi_res: PhiResolvent,
    grid: TimeGrid | None = None,
    tolerance: float | None = None,
) -> EvolutionProcess:
    """Assemble ``U(t_i, t_j) = T[i, j] + sum_m V[i, m] Phi(t_m, t_j)``."""
    grid = phi_res.grid if grid is None else grid
    if grid != phi_res.grid:
        raise GridMismatchError("Phi was solved on a different grid")
    rule = phi_res.rule if phi_res.rule is not None else product_weights(ev, grid)
    big_n, d = grid.size, ev.fam.dim
    table = phi_res.table
    U = np.zeros((big_n, big_n, d, d))
    for i in range(big_n):
        vcat = rule.V[i, : i + 1].transpose(1, 0, 2).reshape(d, (i + 1) * d)
        acc = (vcat @ table[: i + 1].reshape((i + 1) * d, big_n * d)).reshape(d, big_n, d)
        U[i, : i + 1] = rule.T[i, : i + 1] + acc[:, : i + 1].transpose(1, 0, 2)
        U[i, i] = np.eye(d)
    return EvolutionProcess(ev.fam, grid, U, rule.panel_left, rule.panel_right,
                            tolerance, phi_res.delta, phi_res.method)


def propagate(
    ev: SemigroupEvaluator,
    grid: TimeGrid,
    method: str = "product-integration",
    measure_tolerance: bool = True,
    workers: int = 1,
    **phi_kwargs,
) -> EvolutionProcess:
    """Build a process; optionally measure its tolerance against ``grid.coarsen()``."""
    proc = build_process(ev, solve_phi(ev, grid, method, workers=workers, **phi_kwargs))
    if measure_tolerance and grid.n_steps % 2 == 0 and grid.n_steps >= 4:
        coarse = build_process(ev, solve_phi(ev, grid.coarsen(), method, workers=workers, **phi_kwargs))
        proc.tolerance = refinement_gap(coarse, proc)
    return proc


def refinement_gap(coarse: EvolutionProcess, fine: EvolutionProcess) -> float:
    """Max ``L(X)`` difference at the node pairs the two grids share."""
    if fine.grid != coarse.grid.refine(2):
        raise GridMismatchError("fine grid must be the 2x refinement of the coarse grid")
    sp = fine.space
    sub = fine.values[::2, ::2]
    gap = op_norm(sp, sp, (sub - coarse.values).reshape(-1, fine.fam.dim, fine.fam.dim))
    return float(np.max(gap))


#: cocycle floor for autonomous families, whose refinement gap is round-off
COCYCLE_FLOOR = 1e-10


@dataclass
class AxiomReport:
    n_nodes: int
    identity_defect: float
    cocycle_defect: float
    cocycle_triples: int
    tolerance: float | None
    generator_residual: float
    generator_residual_all: float
    bound_x: float
    fitted_K: float
    fitted_C: float
    bound_xy_beta: float
    derivative_bound: float
    beta: float

    @property
    def cocycle_ok(self) -> bool | None:
        if self.tolerance is None:
            return None
        return self.cocycle_defect <= max(10 * self.tolerance, COCYCLE_FLOOR)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["cocycle_ok"] = self.cocycle_ok
        return out


def generator_residuals(proc: EvolutionProcess, j: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``|D_t U(t_i, t_j) + A(t_i) U(t_i, t_j)|_X`` at interior nodes.

    ``D_t`` is the three-point central difference on the nonuniform grid.
    Returns the node times and residuals.
    """
    ts = proc.nodes
    u = proc.values[:, j]
    sp = proc.space
    idx = np.arange(j + 1, ts.size - 1)
    hm = (ts[idx] - ts[idx - 1])[:, None, None]
    hp = (ts[idx + 1] - ts[idx])[:, None, None]
    du = (-hp / (hm * (hm + hp)) * u[idx - 1] + (hp - hm) / (hm * hp) * u[idx]
          + hm / (hp * (hm + hp)) * u[idx + 1])
    a = proc.fam.stack(ts[idx])
    return ts[idx], np.atleast_1d(op_norm(sp, sp, du + a @ u[idx]))


def check_process_axioms(proc: EvolutionProcess, n_triples: int = 4000, seed: int = 0) -> AxiomReport:
    """Identity, cocycle, generator and boundedness diagnostics.

    All triples ``tau = t_0 <= s <= t`` are checked, plus ``n_triples`` random
    triples with an arbitrary start node.
    """
    big_n = proc.grid.size
    if big_n < 8:
        raise DomainError("axiom checks need a process on at least 8 nodes")
    sp = proc.space
    d = proc.fam.dim
    U = proc.values
    ts = proc.nodes
    ident = float(np.max(np.abs(U[np.arange(big_n), np.arange(big_n)] - np.eye(d))))

    ii, kk = np.tril_indices(big_n)
    tri = [(i, k, 0) for i, k in zip(ii, kk)]
    rng = np.random.default_rng(seed)
    if n_triples:
        r = np.sort(rng.integers(0, big_n, size=(n_triples, 3)), axis=1)
        tri += [(c, b, a) for a, b, c in r]
    tri = np.asarray(tri)
    defects = []
    for chunk in np.array_split(tri, max(1, len(tri) // 2000)):
        i, k, j = chunk.T
        defects.append(op_norm(sp, sp, U[i, k] @ U[k, j] - U[i, j]))
    cocycle = float(np.max(np.concatenate([np.atleast_1d(x) for x in defects])))

    t_res, res = generator_residuals(proc)
    late = t_res - proc.grid.tau >= 0.5 * (proc.grid.t_end - proc.grid.tau)
    gen_late = float(res[late].max()) if late.any() else float(res.max())

    ii, jj = np.tril_indices(big_n, k=-1)
    gaps = ts[ii] - ts[jj]
    nx = np.atleast_1d(op_norm(sp, sp, U[ii, jj]))
    K, logC = np.polyfit(gaps, np.log(nx), 1)
    beta = proc.fam.declared.beta if proc.fam.declared is not None else 1.0
    nxy = np.atleast_1d(op_norm(sp, sp, U[ii, jj], "X", "Y"))
    col = U[1:, 0]
    au = proc.fam.stack(ts[1:]) @ col
    deriv = float(np.max((ts[1:] - ts[0]) * np.atleast_1d(op_norm(sp, sp, au))))
    return AxiomReport(
        n_nodes=big_n,
        identity_defect=ident,
        cocycle_defect=cocycle,
        cocycle_triples=int(len(tri)),
        tolerance=proc.tolerance,
        generator_residual=gen_late,
        generator_residual_all=float(res.max()),
        bound_x=float(max(1.0, nx.max())),
        fitted_K=float(K),
        fitted_C=float(math.exp(logC)),
        bound_xy_beta=float(np.max(gaps ** (1 - beta) * nxy)),
        derivative_bound=deriv,
        beta=beta,
    )


def process_distance(p_eps: EvolutionProcess, p_0: EvolutionProcess, which: str = "X", start: int = 0) -> np.ndarray:
    """``|U_eps(t_i, t_start) - U_0(t_i, t_start)|`` for ``i >= start``.

    ``which`` is ``"X"`` for ``L(X)`` or ``"XY"`` for ``L(X, Y)``.  Entry
    ``k`` of the result belongs to node ``start + k``.
    """
    if p_eps.grid != p_0.grid:
        raise GridMismatchError("processes live on different grids")
    if p_eps.fam.dim != p_0.fam.dim:
        raise GridMismatchError("processes act on spaces of different dimension")
    to = {"X": "X", "XY": "Y"}.get(which.upper())
    if to is None:
        raise DomainError(f"which must be 'X' or 'XY', got {which!r}")
    sp = p_0.space
    diff = p_eps.values[start:, start] - p_0.values[start:, start]
    return np.atleast_1d(op_norm(sp, sp, diff, "X", to))


def save_process(proc: EvolutionProcess, path) -> Path:
    """Binary dump: versioned JSON header, node array and the ``(N, N, d, d)`` table."""
    header = json.dumps(proc.meta(), sort_keys=True)
    return atomic_savez(path, header=np.array(header), nodes=proc.nodes, values=proc.values,
                        panel_left=proc.panel_left, panel_right=proc.panel_right)


def load_process(path, fam: OperatorFamily) -> EvolutionProcess:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["header"]))
        if meta.get("schema") != SCHEMA:
            raise DomainError(f"unsupported process schema {meta.get('schema')!r}")
        grid = TimeGrid(**meta["grid"])
        if not np.array_equal(grid.nodes, z["nodes"]):
            raise GridMismatchError("stored nodes do not match the stored grid description")
        return EvolutionProcess(fam, grid, z["values"], z["panel_left"], z["panel_right"],
                                meta["tolerance"], meta["delta"], meta["method"])


def process_json(proc: EvolutionProcess) -> dict:
    """JSON form holding ``U(t_i, tau)`` as row-major nested lists."""
    return {**proc.meta(), "nodes": proc.nodes.tolist(),
            "U_from_tau": [m.tolist() for m in proc.from_start(0)]}


def dump_process_json(proc: EvolutionProcess, path) -> Path:
    return atomic_write_json(path, process_json(proc))

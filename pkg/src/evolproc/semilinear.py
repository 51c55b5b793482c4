"""Mild solutions ``u(t) = U(t, tau) u0 + int_tau^t U(t, s) F(s, u(s)) ds``.

The integral is split at grid nodes with the cocycle of the *discrete*
process, ``U(t_i, s) = U(t_i, t_{k+1}) U(t_{k+1}, s)`` for ``s`` in panel
``k``, and the short factor ``U(t_{k+1}, s)`` is integrated against the
linear interpolant of ``F`` with the same exponential panel weights the
process assembly uses.  Picard iteration solves the resulting fixed point.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text
from .errors import BlowUpError, ConvergenceError, DimensionError, DomainError, GridMismatchError
from .process import EvolutionProcess, TimeGrid
from .spaces import DiscreteSpace, norms

Scalar = Callable[[float, np.ndarray], np.ndarray]


def cutoff_profile(s, radius: float):
    """C^1 radial profile: identity up to ``R``, quadratic blend to ``1.5 R`` at ``2 R``."""
    s = np.asarray(s, dtype=float)
    r = float(radius)
    blend = s - (s - r) ** 2 / (2 * r)
    return np.where(s <= r, s, np.where(s >= 2 * r, 1.5 * r, blend))


def retract(space: DiscreteSpace, u: np.ndarray, radius: float) -> np.ndarray:
    """``u psi(|u|_Y) / |u|_Y``; the identity inside the ``Y``-ball of radius ``R``."""
    s = float(np.linalg.norm(space.factor("Y") @ u))
    if s <= radius:
        return u
    return u * (float(cutoff_profile(s, radius)) / s)


class Nonlinearity:
    """``(t, u) -> F(t, u)`` with its Lipschitz (``Y -> X``) and ``X``-bound constants.

    With ``cutoff_radius`` set the argument is first retracted radially in the
    ``Y``-norm.  The retraction has Lipschitz constant one, so ``lip_const``
    only needs to hold on the ball of radius ``1.5 R``.  ``raw_lip_const`` is
    the constant of the uncut map on that ball.  ``scalar`` is the pointwise
    reaction ``f(t, s)`` when there is one; the dissipativity check uses it.
    """

    def __init__(
        self,
        space: DiscreteSpace,
        eval: Callable[[float, np.ndarray], np.ndarray],
        lip_const: float,
        bound_const: float,
        cutoff_radius: float | None = None,
        raw_lip_const: float | None = None,
        scalar: Scalar | None = None,
        name: str = "",
    ) -> None:
        if cutoff_radius is not None and not cutoff_radius > 0:
            raise DomainError(f"cutoff radius must be positive, got {cutoff_radius}")
        self.space = space
        self.eval = eval
        self.lip_const = float(lip_const)
        self.bound_const = float(bound_const)
        self.cutoff_radius = None if cutoff_radius is None else float(cutoff_radius)
        self.raw_lip_const = self.lip_const if raw_lip_const is None else float(raw_lip_const)
        self.scalar = scalar
        self.name = name
        self._zero = False

    def __repr__(self) -> str:
        return f"Nonlinearity(name={self.name!r}, L={self.lip_const:.4g}, M={self.bound_const:.4g}, R={self.cutoff_radius})"

    @classmethod
    def zero(cls, space: DiscreteSpace) -> "Nonlinearity":
        d = space.dim
        out = cls(space, lambda t, u: np.zeros(d), 0.0, 0.0, scalar=lambda t, s: np.zeros_like(s), name="zero")
        out._zero = True
        return out

    @property
    def is_zero(self) -> bool:
        return self._zero

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.space.dim,):
            raise DimensionError(f"state of shape {u.shape} does not match dim {self.space.dim}")
        if self.cutoff_radius is not None:
            u = retract(self.space, u, self.cutoff_radius)
        return np.asarray(self.eval(float(t), u), dtype=float)

    def with_cutoff(self, radius: float | None, lip_const: float | None = None,
                    bound_const: float | None = None) -> "Nonlinearity":
        out = Nonlinearity(self.space, self.eval,
                           self.lip_const if lip_const is None else lip_const,
                           self.bound_const if bound_const is None else bound_const,
                           radius, self.raw_lip_const, self.scalar, self.name)
        out._zero = self._zero
        return out


def ball_samples(space: DiscreteSpace, radius: float, n: int, seed: int = 0) -> np.ndarray:
    """``n`` random vectors with ``Y``-norms spread over ``[0, radius]``."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, space.dim))
    z /= norms(space, z, "Y")[:, None]
    return z * (radius * rng.uniform(0, 1, n) ** (1 / 3))[:, None]


def sampled_lipschitz(F: Nonlinearity, t_samples: Sequence[float], u_samples: np.ndarray,
                      seed: int = 0) -> float:
    """Largest ``|F(t,u) - F(t,v)|_X / |u - v|_Y`` over random pairs and nearby pairs."""
    sp = F.space
    rng = np.random.default_rng(seed)
    best = 0.0
    for t in t_samples:
        perm = rng.permutation(len(u_samples))
        for u, v in zip(u_samples, u_samples[perm]):
            for w in (v, u + 1e-4 * (v - u)):
                du = sp.factor("Y") @ (u - w)
                den = float(np.linalg.norm(du))
                if den > 1e-12:
                    num = float(np.linalg.norm(sp.factor("X") @ (F(t, u) - F(t, w))))
                    best = max(best, num / den)
    return best


def gamma(f_eps: Nonlinearity, f_0: Nonlinearity, t_samples: Sequence[float], u_samples) -> float:
    """``max |F_eps(t, u) - F_0(t, u)|_X`` over the sample product grid."""
    if f_eps.space.dim != f_0.space.dim:
        raise DimensionError("nonlinearities act on different spaces")
    if f_eps is f_0:
        return 0.0
    sp = f_0.space
    diffs = np.array([f_eps(t, u) - f_0(t, u) for t in t_samples for u in np.atleast_2d(u_samples)])
    return float(norms(sp, diffs, "X").max()) if diffs.size else 0.0


@dataclass
class Trajectory:
    """States ``u(t_j)`` at the node times, with per-node norms."""

    times: np.ndarray
    states: np.ndarray
    initial: np.ndarray
    y_norms: np.ndarray
    x_norms: np.ndarray
    grid: TimeGrid | None = None
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)

    @property
    def blown_up(self) -> bool:
        return not np.all(np.isfinite(self.y_norms))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y_norm", "x_norm"])
        for row in zip(self.times, self.y_norms, self.x_norms):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def to_csv(self, path, states_path=None) -> None:
        """Norm series to ``path``; full state vectors to ``states_path`` if given."""
        atomic_write_text(path, self.csv_text())
        if states_path is not None:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["t"] + [f"u{k}" for k in range(self.states.shape[1])])
            for t, u in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in u])
            atomic_write_text(states_path, buf.getvalue())


def _node_forcing(F: Nonlinearity, ts: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.stack([F(t, u) for t, u in zip(ts, states)])


def solve_semilinear(
    proc: EvolutionProcess,
    F: Nonlinearity,
    u_tau,
    grid: TimeGrid | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    blowup: float = 1e8,
) -> Trajectory:
    """Picard iteration on the discretized variation-of-constants map.

    Stops when the sup over nodes of the ``Y``-norm change is at most ``tol``.
    """
    if grid is not None and grid != proc.grid:
        raise GridMismatchError("the process does not cover the requested grid")
    sp = proc.space
    u0 = np.asarray(u_tau, dtype=float)
    if u0.shape != (sp.dim,):
        raise DimensionError(f"initial state of shape {u0.shape} does not match dim {sp.dim}")
    ts = proc.nodes
    big_n, d = ts.size, sp.dim
    U = proc.values
    free = U[:, 0] @ u0
    ry = sp.factor("Y")

    def guard(states: np.ndarray) -> np.ndarray:
        y = norms(sp, states, "Y")
        bad = ~np.isfinite(y) | (y > blowup)
        if bad.any():
            k = int(np.argmax(bad))
            raise BlowUpError("trajectory exceeded the blow-up guard", ts[k], y[k])
        return y

    guard(free)
    if F.is_zero:
        return _trajectory(proc, u0, free, 0, [])
    big = U.transpose(0, 2, 1, 3).reshape(big_n * d, big_n * d)
    pl, pr = proc.panel_left, proc.panel_right
    u = free
    history: list[float] = []
    for it in range(1, max_iter + 1):
        f = _node_forcing(F, ts, u)
        g = np.zeros((big_n, d))
        g[1:] = np.einsum("kab,kb->ka", pl, f[:-1]) + np.einsum("kab,kb->ka", pr, f[1:])
        new = free + (big @ g.ravel()).reshape(big_n, d)
        guard(new)
        change = float(np.max(np.linalg.norm((new - u) @ ry.T, axis=1)))
        history.append(change)
        u = new
        if change <= tol:
            return _trajectory(proc, u0, u, it, history)
    raise ConvergenceError(f"Picard iteration did not reach tol={tol} in {max_iter} sweeps", history)


def _trajectory(proc: EvolutionProcess, u0, states, it, history) -> Trajectory:
    sp = proc.space
    return Trajectory(np.array(proc.nodes), states, u0, norms(sp, states, "Y"), norms(sp, states, "X"),
                      proc.grid, it, history)


def solve_windows(
    procs: Sequence[EvolutionProcess],
    F: Nonlinearity,
    u_tau,
    **kwargs,
) -> Trajectory:
    """Chain solves over consecutive windows; each window starts where the last ended."""
    if not procs:
        raise DomainError("no windows given")
    u = np.asarray(u_tau, dtype=float)
    parts = []
    its = 0
    hist: list[float] = []
    for k, p in enumerate(procs):
        if k and not math.isclose(p.grid.tau, procs[k - 1].grid.t_end, rel_tol=0, abs_tol=1e-12):
            raise GridMismatchError("windows are not contiguous")
        tr = solve_semilinear(p, F, u, **kwargs)
        parts.append(tr if k == 0 else _drop_first(tr))
        its = max(its, tr.iterations)
        hist += tr.residuals
        u = tr.states[-1]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return Trajectory(cat("times"), cat("states"), np.asarray(u_tau, dtype=float),
                      cat("y_norms"), cat("x_norms"), None, its, hist)


def _drop_first(tr: Trajectory) -> Trajectory:
    return Trajectory(tr.times[1:], tr.states[1:], tr.initial, tr.y_norms[1:], tr.x_norms[1:],
                      tr.grid, tr.iterations, tr.residuals)


def solution_distance(traj_eps: Trajectory, traj_0: Trajectory, space: DiscreteSpace) -> np.ndarray:
    """``|u_eps(t_j) - u_0(t_j)|_Y`` at every node."""
    if traj_eps.times.shape != traj_0.times.shape or not np.array_equal(traj_eps.times, traj_0.times):
        raise GridMismatchError("trajectories live on different grids")
    return norms(space, traj_eps.states - traj_0.states, "Y")


@dataclass(frozen=True)
class Dissipativity:
    """``f(t, s) s <= (1 - omega) s^2 + N`` on the sample grid."""

    omega: float
    N: float
    holds: bool
    s_max: float


def dissipativity(
    f: Scalar,
    t_samples: Sequence[float],
    s_max: float = 100.0,
    n_s: int = 2001,
    omegas: Sequence[float] | None = None,
) -> Dissipativity:
    """Largest ``omega`` on ``{0.05, ..., 0.95}`` whose sampled constant ``N`` is genuine.

    On a finite grid any ``omega`` gives a finite ``N``; it is accepted only
    when the maximum of ``f(t,s) s - (1 - omega) s^2`` is not attained in the
    outer tenth of the ``s`` range, i.e. the excess is not still growing.
    """
    if omegas is None:
        omegas = np.round(np.arange(1, 20) * 0.05, 10)
    s = np.linspace(-s_max, s_max, n_s)
    fs = np.stack([np.asarray(f(t, s), dtype=float) * s for t in t_samples])
    outer = np.abs(s) >= 0.9 * s_max
    for om in sorted(omegas, reverse=True):
        ex = fs - (1 - om) * s**2
        inner_max = float(ex[:, ~outer].max())
        scale = max(1.0, float(np.abs(fs).max()))
        if ex[:, outer].max() <= inner_max + 1e-12 * scale:
            return Dissipativity(float(om), max(0.0, inner_max), True, s_max)
    return Dissipativity(float("nan"), float("inf"), False, s_max)


@dataclass
class AbsorbingReport:
    radius_E: float
    entry_times: list[float]
    radius_per_family: list[float]
    spread: float
    horizon: float
    dissipativity: list[Dissipativity]

    def as_dict(self) -> dict:
        return {
            "radius_E": self.radius_E,
            "entry_times": self.entry_times,
            "radius_per_family": self.radius_per_family,
            "spread": self.spread,
            "horizon": self.horizon,
            "dissipativity": [{"omega": d.omega, "N": d.N, "holds": d.holds} for d in self.dissipativity],
        }


def absorbing_check(
    proc_family: Sequence[EvolutionProcess | Sequence[EvolutionProcess]],
    F_family: Sequence[Nonlinearity],
    initial_ball: Sequence[np.ndarray],
    horizon: float | None = None,
    t_samples: Sequence[float] = (0.0,),
    **solve_kwargs,
) -> AbsorbingReport:
    """Evolve every initial state under every family and measure an absorbing radius.

    Each entry of ``proc_family`` is one process or a list of consecutive
    window processes covering the horizon.  ``E_family`` is the largest
    ``Y``-norm over the second half of the horizon for that family; ``E`` is
    their maximum and a trajectory's entry time is the first node after which
    it stays within ``E``.
    """
    if len(proc_family) != len(F_family):
        raise DomainError("need one nonlinearity per process family")
    diss = []
    for F in F_family:
        if F.scalar is not None and not F.is_zero:
            d = dissipativity(F.scalar, t_samples)
            if not d.holds:
                raise DomainError(f"sampled sign condition fails for {F.name!r}")
            diss.append(d)
    runs = []
    for procs, F in zip(proc_family, F_family):
        procs = [procs] if isinstance(procs, EvolutionProcess) else list(procs)
        t0, t1 = procs[0].grid.tau, procs[-1].grid.t_end
        if horizon is not None and t1 - t0 < horizon - 1e-12:
            raise DomainError(f"processes cover {t1 - t0}, shorter than the horizon {horizon}")
        runs.append([solve_windows(procs, F, u, **solve_kwargs) for u in initial_ball])
    per_family = []
    for trs in runs:
        t = trs[0].times
        late = t - t[0] >= 0.5 * (t[-1] - t[0])
        per_family.append(float(max(tr.y_norms[late].max() for tr in trs)))
    big_e = max(per_family)
    entries = []
    for trs in runs:
        for tr in trs:
            above = np.nonzero(tr.y_norms > big_e * (1 + 1e-12))[0]
            entries.append(float(tr.times[0] if above.size == 0 else tr.times[min(above[-1] + 1, tr.times.size - 1)]))
    spread = (max(per_family) - min(per_family)) / big_e if big_e > 0 else 0.0
    hz = runs[0][0].times[-1] - runs[0][0].times[0]
    return AbsorbingReport(big_e, entries, per_family, spread, float(hz), diss)

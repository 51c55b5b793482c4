"""Time-dependent operator families and measured hypothesis constants.

An :class:`OperatorFamily` wraps ``t -> A(t)`` together with the space it acts
on.  The estimators here sample the family and return the constants that the
convergence theory only asserts to exist: the sector constants, the Hölder
exponent in time and the distances ``eta`` and ``xi`` between two families.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, SingularResolventError
from .spaces import DiscreteSpace, op_norm

#: ``lam I + A`` with a 2-norm condition number above this is treated as singular
COND_LIMIT = 1.0 / (100.0 * np.finfo(float).eps)


@dataclass(frozen=True)
class HypothesisConstants:
    """Declared sector angle, resolvent constant, ``beta`` and Hölder data."""

    phi: float = 3 * math.pi / 4
    c_sector: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    holder_const: float = 1.0

    def __post_init__(self) -> None:
        if not math.pi / 2 < self.phi < math.pi:
            raise DomainError(f"sector angle must lie in (pi/2, pi), got {self.phi}")
        if not 0 < self.beta <= 1:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0 < self.delta <= 1:
            raise DomainError(f"delta must lie in (0, 1], got {self.delta}")
        if not (self.c_sector > 0 and self.holder_const > 0):
            raise DomainError("c_sector and holder_const must be positive")


class OperatorFamily:
    """``t -> A(t)`` on a :class:`DiscreteSpace`.

    Evaluations are memoised per exact float ``t`` and returned read-only, so
    repeated calls give bitwise identical matrices.  ``eval`` must be a pure
    function of ``t``.
    """

    def __init__(
        self,
        space: DiscreteSpace,
        eval: Callable[[float], np.ndarray],
        epsilon: float = 0.0,
        declared: HypothesisConstants | None = None,
        name: str = "",
    ) -> None:
        if epsilon < 0:
            raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
        self.space = space
        self.eval = eval
        self.epsilon = float(epsilon)
        self.declared = declared
        self.name = name
        self._cache: dict[float, np.ndarray] = {}
        self._inv_cache: dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"OperatorFamily(name={self.name!r}, dim={self.dim}, epsilon={self.epsilon})"

    @property
    def dim(self) -> int:
        return self.space.dim

    def __call__(self, t: float) -> np.ndarray:
        t = float(t)
        m = self._cache.get(t)
        if m is None:
            m = np.array(self.eval(t), dtype=float)
            if m.shape != (self.dim, self.dim):
                raise DimensionError(f"A({t}) has shape {m.shape}, expected {(self.dim, self.dim)}")
            m.setflags(write=False)
            with self._lock:
                m = self._cache.setdefault(t, m)
        return m

    def stack(self, ts: Sequence[float]) -> np.ndarray:
        return np.stack([self(t) for t in ts])

    def inverse(self, t: float) -> np.ndarray:
        """``A(t)^{-1}``; raises :class:`SingularResolventError` at ``lam = 0``."""
        t = float(t)
        m = self._inv_cache.get(t)
        if m is None:
            m = resolvent(self, t, 0.0).real.copy()
            m.setflags(write=False)
            with self._lock:
                m = self._inv_cache.setdefault(t, m)
        return m


def _check_same_space(a: OperatorFamily, b: OperatorFamily) -> None:
    if a.space is not b.space and a.dim != b.dim:
        raise DimensionError(f"families act on different spaces ({a.dim} vs {b.dim})")


def resolvent(fam: OperatorFamily, t: float, lam: complex) -> np.ndarray:
    """``(lam I + A(t))^{-1}`` by a dense solve.

    The result is real when ``lam == 0`` and complex otherwise.
    """
    m = fam(t)
    if lam != 0:
        m = m + complex(lam) * np.eye(fam.dim)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularResolventError(lam, t, cond)
    return np.linalg.solve(m, np.eye(fam.dim, dtype=m.dtype))


@dataclass
class SectorReport:
    ok: bool
    worst_c_x: float
    worst_c_y: float
    worst_c_xy_beta: float
    phi: float
    beta: float
    n_samples: int
    failure: tuple[float, complex] | None = None
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "worst_c_x": self.worst_c_x,
            "worst_c_y": self.worst_c_y,
            "worst_c_xy_beta": self.worst_c_xy_beta,
            "phi": self.phi,
            "beta": self.beta,
            "n_samples": self.n_samples,
            "failure": None if self.failure is None else
            {"t": self.failure[0], "lambda": [self.failure[1].real, self.failure[1].imag]},
            "message": self.message,
        }


def sector_lambdas(phi: float, per_ray: int = 20, r_min: float = 1e-3, r_max: float = 1e3) -> np.ndarray:
    """``lam = 0`` plus a geometric grid on both rays ``r e^{+-i phi}``."""
    r = np.geomspace(r_min, r_max, per_ray)
    return np.concatenate([[0.0], r * np.exp(1j * phi), r * np.exp(-1j * phi)])


def check_sector(
    fam: OperatorFamily,
    phi: float,
    t_samples: Sequence[float],
    lambda_samples_per_ray: int = 20,
    beta: float | None = None,
    r_min: float = 1e-3,
    r_max: float = 1e3,
) -> SectorReport:
    """Worst resolvent constants over sampled ``(t, lam)``."""
    if not math.pi / 2 < phi < math.pi:
        raise DomainError(f"sector angle must lie in (pi/2, pi), got {phi}")
    if len(t_samples) == 0 or lambda_samples_per_ray < 1:
        raise DomainError("check_sector needs at least one t sample and one lambda per ray")
    if beta is None:
        beta = fam.declared.beta if fam.declared is not None else 1.0
    sp = fam.space
    lams = sector_lambdas(phi, lambda_samples_per_ray, r_min, r_max)
    cx = cy = cxy = 0.0
    n = 0
    for t in t_samples:
        for lam in lams:
            try:
                r = resolvent(fam, t, lam)
            except SingularResolventError as exc:
                return SectorReport(False, cx, cy, cxy, phi, beta, n, (float(t), complex(lam)), str(exc))
            a = abs(lam)
            cx = max(cx, float((a + 1) * op_norm(sp, sp, r, "X", "X")))
            cy = max(cy, float((a + 1) * op_norm(sp, sp, r, "Y", "Y")))
            cxy = max(cxy, float((a**beta + 1) * op_norm(sp, sp, r, "X", "Y")))
            n += 1
    ok = all(map(math.isfinite, (cx, cy, cxy)))
    return SectorReport(ok, cx, cy, cxy, phi, beta, n)


@dataclass(frozen=True)
class HolderFit:
    delta_fit: float
    holder_const: float
    autonomous: bool = False
    n_pairs: int = 0


def estimate_delta(fam: OperatorFamily, t_grid: Sequence[float], tau: float) -> HolderFit:
    """Fit ``|[A(t) - A(t')] A(tau)^{-1}|_X ~ C |t - t'|^delta`` over all pairs."""
    ts = np.unique(np.asarray(t_grid, dtype=float))
    if ts.size < 4:
        raise DomainError("estimate_delta needs at least 4 distinct time points")
    sp = fam.space
    ainv = fam.inverse(tau)
    i, j = np.triu_indices(ts.size, k=1)
    mats = fam.stack(ts)
    diffs = (mats[i] - mats[j]) @ ainv
    vals = np.atleast_1d(op_norm(sp, sp, diffs))
    scale = max(np.abs(mats).max(), 1.0)
    keep = vals > 1e-13 * scale
    if not keep.any():
        return HolderFit(math.inf, 0.0, autonomous=True, n_pairs=int(i.size))
    x = np.log(ts[j] - ts[i])[keep]
    y = np.log(vals[keep])
    slope, icpt = np.polyfit(x, y, 1)
    return HolderFit(float(slope), float(math.exp(icpt)), False, int(keep.sum()))


def eta(fam_eps: OperatorFamily, fam_0: OperatorFamily, t_samples: Sequence[float]) -> float:
    """``max_t |A_eps(t)^{-1} - A_0(t)^{-1}|_{L(X,Y)}``."""
    _check_same_space(fam_eps, fam_0)
    if fam_eps is fam_0:
        return 0.0
    sp = fam_0.space
    diffs = np.stack([fam_eps.inverse(t) - fam_0.inverse(t) for t in t_samples])
    return float(np.max(op_norm(sp, sp, diffs, "X", "Y")))


def xi_pairs(fam: OperatorFamily, t_samples: Sequence[float], tau_samples: Sequence[float]) -> np.ndarray:
    """``A(t) A(tau)^{-1}`` for every ``(t, tau)``, shape ``(nt, ntau, d, d)``."""
    a = fam.stack(t_samples)
    ainv = np.stack([fam.inverse(s) for s in tau_samples])
    return a[:, None] @ ainv[None, :]


def xi(
    fam_eps: OperatorFamily,
    fam_0: OperatorFamily,
    t_samples: Sequence[float],
    tau_samples: Sequence[float],
) -> float:
    """``max |A_eps(t) A_eps(tau)^{-1} - A_0(t) A_0(tau)^{-1}|_{L(X)}`` over the grid."""
    _check_same_space(fam_eps, fam_0)
    if fam_eps is fam_0:
        return 0.0
    sp = fam_0.space
    d = xi_pairs(fam_eps, t_samples, tau_samples) - xi_pairs(fam_0, t_samples, tau_samples)
    return float(np.max(op_norm(sp, sp, d)))


def resolvent_gap(fam_eps: OperatorFamily, fam_0: OperatorFamily, t: float, lam: complex) -> float:
    """``|A_eps (lam + A_eps)^{-1} - A_0 (lam + A_0)^{-1}|_{L(X)}`` at one ``(t, lam)``."""
    def part(f: OperatorFamily) -> np.ndarray:
        return f(t) @ resolvent(f, t, lam)

    sp = fam_0.space
    return op_norm(sp, sp, part(fam_eps) - part(fam_0))


@dataclass
class FamilyReport:
    """Measured constants for one family, with the sampling window recorded."""

    name: str
    epsilon: float
    sector: SectorReport
    holder: HolderFit
    declared: HypothesisConstants | None
    window: tuple[float, float]
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        decl = None
        if self.declared is not None:
            d = self.declared
            decl = {"phi": d.phi, "c_sector": d.c_sector, "beta": d.beta,
                    "delta": d.delta, "holder_const": d.holder_const}
        h = self.holder
        return {
            "name": self.name,
            "epsilon": self.epsilon,
            "window": list(self.window),
            "sector": self.sector.as_dict(),
            "holder": {"delta_fit": None if h.autonomous else h.delta_fit,
                       "holder_const": h.holder_const, "autonomous": h.autonomous},
            "declared": decl,
            **self.extra,
        }


def measure_family(
    fam: OperatorFamily,
    t_samples: Sequence[float],
    phi: float | None = None,
    lambda_samples_per_ray: int = 20,
) -> FamilyReport:
    """Run the sector and Hölder estimators over one sampling window."""
    ts = np.asarray(t_samples, dtype=float)
    if phi is None:
        phi = fam.declared.phi if fam.declared is not None else 3 * math.pi / 4
    sector = check_sector(fam, phi, ts, lambda_samples_per_ray)
    holder = estimate_delta(fam, ts, float(ts[0]))
    return FamilyReport(fam.name, fam.epsilon, sector, holder, fam.declared, (float(ts.min()), float(ts.max())))

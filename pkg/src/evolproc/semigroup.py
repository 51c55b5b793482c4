"""Frozen-time analytic semigroups by contour quadrature of the resolvent.

``T(t) = (1/2 pi i) int_Gamma e^{lam t} (lam + A)^{-1} d lam`` where ``Gamma``
is the pair of rays ``r e^{+-i phi}`` traversed with increasing imaginary part.
For a real matrix the lower-ray resolvents are conjugates of the upper-ray
ones, so the batched path only factors the upper ray and takes twice the real
part.  Single evaluations integrate both rays and use the discarded imaginary
part as a quadrature self-check.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, QuadratureError, SingularResolventError
from .family import OperatorFamily

QUADRATURES = ("composite-gauss-legendre", "tanh-sinh")


@lru_cache(maxsize=8)
def _gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(m)


@dataclass(frozen=True)
class Contour:
    """Quadrature layout on the rays ``r e^{+-i phi}``, ``0 <= r <= R``.

    With ``radius_max=None`` the truncation adapts to the smallest time asked
    for, ``R = reach / (t_min |cos phi|)``.  The Gauss-Legendre layout uses
    panels ``[0, r0], [r0, g r0], [g r0, g^2 r0], ...`` with ``panel_nodes``
    points each, so ``nodes_per_ray`` follows from ``R``.  For ``tanh-sinh``
    the half-line double-exponential substitution ``r = exp(pi/2 sinh u)``
    is used with ``nodes_per_ray`` trapezoid points.
    """

    phi: float = 3 * math.pi / 4
    radius_max: float | None = None
    nodes_per_ray: int | None = None
    quadrature: str = "composite-gauss-legendre"
    reach: float = 40.0
    panel_nodes: int = 12
    panel_ratio: float = 2.0
    first_panel: float = 1e-2

    def __post_init__(self) -> None:
        if not math.pi / 2 < self.phi < math.pi:
            raise DomainError(f"contour angle must lie in (pi/2, pi), got {self.phi}")
        if self.quadrature not in QUADRATURES:
            raise DomainError(f"unknown quadrature {self.quadrature!r}; choose from {QUADRATURES}")
        if self.reach < 30:
            raise DomainError(f"reach {self.reach} leaves truncation error above 1e-13")
        if self.nodes_per_ray is not None and self.nodes_per_ray < 16:
            raise DomainError("nodes_per_ray must be at least 16")
        if self.panel_nodes < 2 or self.panel_ratio <= 1 or self.first_panel <= 0:
            raise DomainError("invalid panel layout")

    def radius(self, t_min: float) -> float:
        if t_min <= 0:
            raise DomainError(f"contour truncation needs t_min > 0, got {t_min}")
        c = abs(math.cos(self.phi))
        if self.radius_max is None:
            return self.reach / (t_min * c)
        if self.radius_max * c * t_min < 30:
            raise DomainError(
                f"radius_max={self.radius_max} is too small for t_min={t_min}: "
                "need radius_max*|cos phi|*t_min >= 30"
            )
        return float(self.radius_max)

    def radial_nodes(self, t_min: float) -> tuple[np.ndarray, np.ndarray]:
        """Radii and weights for one ray."""
        big_r = self.radius(t_min)
        if self.quadrature == "tanh-sinh":
            n = self.nodes_per_ray or 160
            lo = math.asinh(2 / math.pi * math.log(1e-12))
            hi = math.asinh(2 / math.pi * math.log(big_r))
            u, du = np.linspace(lo, hi, n, retstep=True)
            r = np.exp(0.5 * math.pi * np.sinh(u))
            w = du * 0.5 * math.pi * np.cosh(u) * r
            w[[0, -1]] *= 0.5
            return r, w
        bps = [0.0, self.first_panel]
        while bps[-1] < big_r:
            bps.append(bps[-1] * self.panel_ratio)
        x, w = _gauss_legendre(self.panel_nodes)
        a = np.asarray(bps[:-1])[:, None]
        b = np.asarray(bps[1:])[:, None]
        r = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        return r, (0.5 * (b - a) * w).ravel()

    def upper_ray(self, t_min: float) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``lam`` and weights on the upper ray, ``1/(2 pi i)`` folded in.

        The lower ray is the complex conjugate of both.
        """
        r, w = self.radial_nodes(t_min)
        e = np.exp(1j * self.phi)
        return r * e, w * e / (2j * math.pi)

    def nodes(self, t_min: float) -> tuple[np.ndarray, np.ndarray]:
        """Both rays."""
        lam, wt = self.upper_ray(t_min)
        return np.concatenate([lam, lam.conj()]), np.concatenate([wt, wt.conj()])

    def sign_check(self) -> None:
        """Integrate the scalar ``A = 1`` at ``t = 1`` and demand ``+e^{-1}``.

        Catches an orientation or weight sign error before any real use.
        """
        lam, wt = self.nodes(1.0)
        val = np.sum(wt * np.exp(lam) / (lam + 1.0))
        if not (val.real > 0 and abs(val - math.exp(-1)) < 1e-8):
            raise QuadratureError("contour orientation self-check failed", abs(val - math.exp(-1)))


def batched_resolvents(a: np.ndarray, lam: np.ndarray, t: float = math.nan) -> np.ndarray:
    """``(lam_k I + A)^{-1}`` for every node, shape ``(k, d, d)``."""
    d = a.shape[0]
    m = lam[:, None, None] * np.eye(d) + a
    try:
        out = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        out = None
    if out is None or not np.all(np.isfinite(out)):
        for lk, mk in zip(lam, m):
            c = np.linalg.cond(mk)
            if not np.isfinite(c) or c > 1e15:
                raise SingularResolventError(lk, t, c)
        raise SingularResolventError(lam[0], t)
    return out


class SemigroupEvaluator:
    """Evaluates ``T_{A(tau)}(t)`` for one family.

    ``semigroup_at`` results are cached by the exact float pair ``(tau, t)``;
    ``semigroups`` is the batched path used by the process builder and does
    not populate the cache.
    """

    def __init__(self, fam: OperatorFamily, contour: Contour | None = None, residue_tol: float = 1e-10) -> None:
        self.fam = fam
        self.contour = contour if contour is not None else Contour()
        self.contour.sign_check()
        self.residue_tol = residue_tol
        self._cache: dict[tuple[float, float], np.ndarray] = {}
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"SemigroupEvaluator({self.fam!r}, {self.contour!r})"

    def _weights(self, lam: np.ndarray, wt: np.ndarray, ts: np.ndarray) -> np.ndarray:
        return np.exp(np.outer(ts, lam)) * wt

    def semigroup_at(self, tau: float, t: float) -> np.ndarray:
        tau, t = float(tau), float(t)
        if t < 0:
            raise DomainError(f"semigroup time must be nonnegative, got {t}")
        key = (tau, t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = self.fam.dim
        if t == 0:
            out = np.eye(d)
        else:
            lam, wt = self.contour.nodes(t)
            res = batched_resolvents(self.fam(tau), lam, tau)
            full = np.tensordot(wt * np.exp(lam * t), res, axes=1)
            out = full.real.copy()
            scale = max(np.linalg.norm(out), np.finfo(float).tiny)
            resid = np.linalg.norm(full.imag) / scale
            if resid > self.residue_tol:
                raise QuadratureError(f"imaginary residue too large for tau={tau}, t={t}", resid)
        out.setflags(write=False)
        with self._lock:
            return self._cache.setdefault(key, out)

    def semigroups(self, tau: float, ts, t_min: float | None = None) -> np.ndarray:
        """``T_{A(tau)}(t)`` for every ``t`` in ``ts``; returns ``(len(ts), d, d)``.

        ``t_min`` fixes the contour truncation and defaults to the smallest
        positive entry of ``ts``.
        """
        ts = np.asarray(ts, dtype=float)
        if np.any(ts < 0):
            raise DomainError("semigroup times must be nonnegative")
        d = self.fam.dim
        out = np.empty((ts.size, d, d))
        pos = ts > 0
        out[~pos] = np.eye(d)
        if pos.any():
            if t_min is None:
                t_min = float(ts[pos].min())
            lam, wt = self.contour.upper_ray(t_min)
            res = batched_resolvents(self.fam(tau), lam, tau).reshape(lam.size, d * d)
            w = self._weights(lam, wt, ts[pos])
            out[pos] = 2.0 * (w @ res).real.reshape(-1, d, d)
        return out

    def a_semigroup_at(self, tau: float, t: float) -> np.ndarray:
        """``A(tau) T_{A(tau)}(t)`` by the matrix product route."""
        if t <= 0:
            raise DomainError(f"A T(t) needs t > 0, got {t}")
        return self.fam(tau) @ self.semigroup_at(tau, t)

    def a_semigroup_contour(self, tau: float, t: float) -> np.ndarray:
        """Cross-check route: ``-(1/2 pi i) int lam e^{lam t} (lam + A)^{-1} d lam``."""
        if t <= 0:
            raise DomainError(f"A T(t) needs t > 0, got {t}")
        lam, wt = self.contour.upper_ray(float(t))
        res = batched_resolvents(self.fam(tau), lam, tau)
        return -2.0 * np.tensordot(wt * lam * np.exp(lam * t), res, axes=1).real

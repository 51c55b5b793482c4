"""Finite-dimensional Banach pairs ``Y -> X`` given by Gram matrices.

Norms are ``sqrt(u^T G u)``.  With the upper Cholesky factor ``G = R^T R`` the
norm is ``|R u|_2``, so the weighted operator norm of ``M`` from ``(G_from)``
to ``(G_to)`` is the largest singular value of ``R_to M R_from^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, GramError

Which = Literal["X", "Y"]

#: smallest eigenvalue must exceed this fraction of the largest one
SPD_RTOL = 1e-12
SYM_RTOL = 1e-12


def _check_spd(name: str, g: np.ndarray) -> np.ndarray:
    g = np.array(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise GramError(f"{name} must be a square matrix, got shape {g.shape}")
    scale = max(np.abs(g).max(), np.finfo(float).tiny)
    if np.abs(g - g.T).max() > SYM_RTOL * scale:
        raise GramError(f"{name} is not symmetric")
    ev = np.linalg.eigvalsh(g)
    if not ev[0] > SPD_RTOL * ev[-1]:
        raise GramError(
            f"{name} is not positive definite (eigenvalue range [{ev[0]:.3e}, {ev[-1]:.3e}])"
        )
    g = 0.5 * (g + g.T)
    g.setflags(write=False)
    return g


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Stand-in for the pair ``Y -> X``.

    ``embed_const`` is computed as ``|I|_{L(Y,X)}``, the best constant in
    ``|u|_X <= C |u|_Y``.
    """

    gram_x: np.ndarray
    gram_y: np.ndarray
    name: str = ""
    embed_const: float = field(init=False)
    _chol: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        gx = _check_spd("gram_x", self.gram_x)
        gy = _check_spd("gram_y", self.gram_y)
        if gx.shape != gy.shape:
            raise GramError(f"Gram shapes differ: {gx.shape} vs {gy.shape}")
        chol = {"X": sla.cholesky(gx, lower=False), "Y": sla.cholesky(gy, lower=False)}
        object.__setattr__(self, "gram_x", gx)
        object.__setattr__(self, "gram_y", gy)
        object.__setattr__(self, "_chol", chol)
        ry_inv = sla.solve_triangular(chol["Y"], np.eye(gx.shape[0]), lower=False)
        object.__setattr__(self, "embed_const", float(np.linalg.norm(chol["X"] @ ry_inv, 2)))

    @property
    def dim(self) -> int:
        return self.gram_x.shape[0]

    def gram(self, which: Which) -> np.ndarray:
        return self.gram_x if _which(which) == "X" else self.gram_y

    def factor(self, which: Which) -> np.ndarray:
        """Upper Cholesky factor ``R`` with ``G = R^T R``."""
        return self._chol[_which(which)]

    def factor_inv(self, which: Which) -> np.ndarray:
        w = _which(which)
        key = w + "inv"
        if key not in self._chol:
            inv = sla.solve_triangular(self._chol[w], np.eye(self.dim), lower=False)
            inv.setflags(write=False)
            self._chol[key] = inv
        return self._chol[key]

    def sup_norm_const(self) -> float:
        """Best constant ``c`` in ``max_i |u_i| <= c |u|_Y``."""
        ginv_diag = np.diag(sla.cho_solve((self._chol["Y"], False), np.eye(self.dim)))
        return float(np.sqrt(ginv_diag.max()))

    @classmethod
    def euclidean(cls, dim: int, name: str = "euclidean") -> "DiscreteSpace":
        eye = np.eye(dim)
        return cls(eye, eye, name=name)


def _which(which: str) -> str:
    w = str(which).upper()
    if w not in ("X", "Y"):
        raise ValueError(f"norm selector must be 'X' or 'Y', got {which!r}")
    return w


def norm(space: DiscreteSpace, u, which: Which = "X") -> float:
    u = np.asarray(u)
    if u.shape != (space.dim,):
        raise DimensionError(f"vector of shape {u.shape} does not live in a space of dim {space.dim}")
    return float(np.linalg.norm(space.factor(which) @ u))


def norms(space: DiscreteSpace, us, which: Which = "X") -> np.ndarray:
    """Row-wise norms of a stack of vectors ``us[..., dim]``."""
    us = np.asarray(us)
    if us.shape[-1] != space.dim:
        raise DimensionError(f"last axis {us.shape[-1]} != space dim {space.dim}")
    return np.linalg.norm(us @ space.factor(which).T, axis=-1)


def weighted(space_from: DiscreteSpace, space_to: DiscreteSpace, m, frm: Which = "X", to: Which = "X") -> np.ndarray:
    """``R_to M R_from^{-1}`` for a matrix or a stack of matrices."""
    m = np.asarray(m)
    if m.shape[-2:] != (space_to.dim, space_from.dim):
        raise DimensionError(
            f"matrix of shape {m.shape[-2:]} does not map dim {space_from.dim} -> {space_to.dim}"
        )
    return space_to.factor(to) @ m @ space_from.factor_inv(frm)


def op_norm(space_from: DiscreteSpace, space_to: DiscreteSpace, m, frm: Which = "X", to: Which = "X"):
    """Exact weighted operator norm; vectorised over leading axes."""
    w = weighted(space_from, space_to, m, frm, to)
    if w.ndim == 2:
        return float(np.linalg.norm(w, 2))
    return np.linalg.norm(w, 2, axis=(-2, -1))

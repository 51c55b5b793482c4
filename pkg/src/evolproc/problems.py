"""Concrete problem families: reaction-diffusion, damped wave, scalar.

Each generator returns a :class:`Bundle` holding the space pair, the operator
family and the nonlinearity for one value of the parameter.  Coefficients are
either callables or expression strings (see :mod:`evolproc.expr`) in which
``eps`` (or ``alpha``) is bound at build time.

The reaction-diffusion problem is posed on the interval ``(0, 1)`` with
Neumann conditions.  The wave problem uses the exact Dirichlet spectrum
``mu_k = k^2`` of ``(0, pi)`` and the closed-form fractional powers of the
first-order operator matrix, mode by mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.fft import dst

from .errors import ConfigError
from .expr import parse
from .family import HypothesisConstants, OperatorFamily
from .semilinear import Nonlinearity
from .spaces import DiscreteSpace

Coefficient = Union[str, Callable]

#: sharp sector constant at angle 3 pi / 4 for operators self-adjoint in X with spectrum in [1, inf)
RD_SECTOR_CONST = 2.62


@dataclass
class Bundle:
    space: DiscreteSpace
    fam: OperatorFamily
    F: Nonlinearity
    epsilon: float
    kind: str
    info: dict = field(default_factory=dict)


def _field(coef: Coefficient, variables: tuple[str, ...], params: dict) -> Callable:
    """Normalise a coefficient to a callable of ``variables`` with ``params`` bound."""
    if isinstance(coef, str):
        ex = parse(coef, params, variables)

        def fn(*args):
            out = ex(**dict(zip(variables, args)))
            shape = np.broadcast(*[np.asarray(a) for a in args]).shape
            return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

        return fn
    if callable(coef):
        vals = tuple(params.values())
        return lambda *args: coef(*args, *vals)
    raise ConfigError(f"coefficient must be an expression string or callable, got {type(coef).__name__}")


def _sup_derivative(f: Callable, t_samples, s_max: float, n: int = 4001) -> tuple[float, float]:
    """``sup |f|`` and ``sup |df/ds|`` over ``[-s_max, s_max]`` by dense sampling."""
    s = np.linspace(-s_max, s_max, n)
    sup_f = sup_df = 0.0
    for t in t_samples:
        v = np.asarray(f(t, s), dtype=float)
        sup_f = max(sup_f, float(np.abs(v).max()))
        sup_df = max(sup_df, float(np.abs(np.diff(v) / np.diff(s)).max()))
    return sup_f, sup_df


# --------------------------------------------------------------------------- reaction-diffusion


@dataclass
class ReactionDiffusionConfig:
    """``u_t - (a(t,x) u_x)_x + u = f(t, u)`` on ``(0, 1)``, zero flux at both ends."""

    n_cells: int = 32
    a: Coefficient = "2 + sin(t)*cos(pi*x) + eps*x"
    a_grad_x: Coefficient | None = None
    f: Coefficient = "tanh(s) + eps*sin(s)"
    eps_list: Sequence[float] = (0.1, 0.03, 0.01, 0.003)
    growth_rho: float = 1.0
    delta: float = 1.0
    window: tuple[float, float] = (0.0, 1.0)

    def a_field(self, eps: float) -> Callable:
        return _field(self.a, ("t", "x"), {"eps": eps})

    def a_grad_field(self, eps: float) -> Callable:
        if self.a_grad_x is not None:
            return _field(self.a_grad_x, ("t", "x"), {"eps": eps})
        a = self.a_field(eps)
        dx = 1e-6
        return lambda t, x: (a(t, np.asarray(x) + dx) - a(t, np.asarray(x) - dx)) / (2 * dx)

    def f_field(self, eps: float) -> Callable:
        return _field(self.f, ("t", "s"), {"eps": eps})


def rd_mesh(n_cells: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Cell centres, interior faces and the cell width."""
    h = 1.0 / n_cells
    return (np.arange(n_cells) + 0.5) * h, np.arange(1, n_cells) * h, h


def rd_stiffness(face_coef: np.ndarray, h: float) -> np.ndarray:
    """``sum_faces c (e_i - e_{i+1})(e_i - e_{i+1})^T / h`` (zero flux at the ends)."""
    n = face_coef.size + 1
    k = np.zeros((n, n))
    i = np.arange(n - 1)
    c = face_coef / h
    k[i, i] += c
    k[i + 1, i + 1] += c
    k[i, i + 1] -= c
    k[i + 1, i] -= c
    return k


def rd_space(n_cells: int) -> DiscreteSpace:
    """Mass matrix for ``L^2`` and mass plus unit stiffness for ``H^1``."""
    _, xf, h = rd_mesh(n_cells)
    mass = h * np.eye(n_cells)
    return DiscreteSpace(mass, mass + rd_stiffness(np.ones_like(xf), h), name=f"fd-h1-l2-{n_cells}")


def rd_probe(cfg: ReactionDiffusionConfig, eps: float, n_t: int = 33) -> dict:
    """Sampled checks of positivity, time regularity and growth of the data."""
    xc, xf, _ = rd_mesh(cfg.n_cells)
    xs = np.concatenate([xc, xf, [0.0, 1.0]])
    ts = np.linspace(cfg.window[0], cfg.window[1], n_t)
    a = cfg.a_field(eps)
    vals = np.array([np.asarray(a(t, xs), dtype=float) for t in ts])
    m, big_m = float(vals.min()), float(vals.max())
    if not m > 0:
        raise ConfigError(f"diffusion coefficient must be positive, sampled minimum {m:.3e}")
    dt = np.abs(ts[:, None] - ts[None, :])
    off = dt > 0
    dv = np.abs(vals[:, None, :] - vals[None, :, :]).max(axis=2)
    holder = float((dv[off] / dt[off] ** cfg.delta).max())
    f = cfg.f_field(eps)
    s = np.linspace(-50, 50, 2001)
    growth = max(float(np.max(np.abs(f(t, s)) / (1 + np.abs(s) ** cfg.growth_rho))) for t in ts[::4])
    return {"m": m, "M": big_m, "holder_const": holder, "growth_const": growth}


def rd_matrix(n_cells: int, a: Callable, t: float) -> np.ndarray:
    """Finite-difference ``-(a u_x)_x + u`` with zero flux; symmetric, eigenvalues >= 1."""
    _, xf, h = rd_mesh(n_cells)
    coef = np.asarray(a(t, xf), dtype=float)
    if np.any(coef <= 0):
        raise ConfigError(f"diffusion coefficient is not positive at t={t}")
    return np.eye(n_cells) + rd_stiffness(coef, h) / h


def pointwise_nonlinearity(
    space: DiscreteSpace,
    f: Callable,
    cutoff_radius: float | None,
    t_samples: Sequence[float],
    name: str,
    raw_radius: float = 50.0,
) -> Nonlinearity:
    """``F(t, u)_i = f(t, u_i)`` with constants measured on the relevant range.

    Inside the cut-off ball ``|u_i| <= c_inf 1.5 R`` where ``c_inf`` is the
    sup-norm embedding constant of ``Y``.
    """
    c_inf = space.sup_norm_const()
    s_max = c_inf * 1.5 * cutoff_radius if cutoff_radius is not None else raw_radius
    sup_f, sup_df = _sup_derivative(f, t_samples, s_max)
    _, raw_df = _sup_derivative(f, t_samples, max(s_max, raw_radius))
    mass = float(np.sqrt(np.sum(space.gram_x)))
    lip = sup_df * space.embed_const
    return Nonlinearity(space, lambda t, u: np.asarray(f(t, u), dtype=float), lip, sup_f * mass,
                        cutoff_radius, raw_df * space.embed_const, scalar=f, name=name)


def build_reaction_diffusion(
    cfg: ReactionDiffusionConfig,
    eps: float,
    cutoff_radius: float | None = None,
) -> Bundle:
    if cfg.n_cells < 2:
        raise ConfigError("n_cells must be at least 2")
    probe = rd_probe(cfg, eps)
    space = rd_space(cfg.n_cells)
    a = cfg.a_field(eps)
    declared = HypothesisConstants(phi=3 * math.pi / 4, c_sector=RD_SECTOR_CONST, beta=0.5,
                                   delta=cfg.delta, holder_const=max(probe["holder_const"], 1e-12))
    fam = OperatorFamily(space, lambda t: rd_matrix(cfg.n_cells, a, t), eps, declared, name=f"rd[eps={eps:g}]")
    ts = np.linspace(cfg.window[0], cfg.window[1], 9)
    F = pointwise_nonlinearity(space, cfg.f_field(eps), cutoff_radius, ts, f"rd-f[eps={eps:g}]")
    return Bundle(space, fam, F, eps, "reaction-diffusion", {"probe": probe, "beta": 0.5})


def coefficient_gap(cfg: ReactionDiffusionConfig, eps: float, t_samples: Sequence[float]) -> float:
    """``|a_eps - a_0|_inf + |d_x a_eps - d_x a_0|_inf`` on the mesh."""
    xc, xf, _ = rd_mesh(cfg.n_cells)
    xs = np.concatenate([xc, xf])
    a_e, a_0 = cfg.a_field(eps), cfg.a_field(0.0)
    g_e, g_0 = cfg.a_grad_field(eps), cfg.a_grad_field(0.0)
    d0 = max(float(np.abs(a_e(t, xs) - a_0(t, xs)).max()) for t in t_samples)
    d1 = max(float(np.abs(g_e(t, xs) - g_0(t, xs)).max()) for t in t_samples)
    return d0 + d1


def cosine_states(space: DiscreteSpace, n: int, radius: float, seed: int = 0, n_modes: int = 4) -> np.ndarray:
    """Random combinations of the lowest cosine modes, scaled to ``Y``-norm at most ``radius``."""
    rng = np.random.default_rng(seed)
    d = space.dim
    xc = (np.arange(d) + 0.5) / d
    basis = np.stack([np.cos(k * np.pi * xc) for k in range(n_modes)])
    out = rng.standard_normal((n, n_modes)) @ basis
    ny = np.linalg.norm(out @ space.factor("Y").T, axis=1)
    return out * (radius * rng.uniform(0.2, 1.0, n) / ny)[:, None]


# --------------------------------------------------------------------------- damped wave


@dataclass
class WaveConfig:
    """Damped wave ``u_tt + 2 A(t)^{1/2} u_t + A(t) u = 0`` with ``A(t) = -a(t) Laplacian``."""

    n_modes: int = 16
    a: Coefficient = "1.5 + 0.4*sin(t)"
    alpha_list: Sequence[float] = (0.6, 0.8, 0.9, 0.95, 0.99)
    f: Coefficient | None = None
    window: tuple[float, float] = (0.0, 2 * math.pi)

    def a_field(self) -> Callable:
        return _field(self.a, ("t",), {})


def wave_blocks(s: np.ndarray, alpha: float) -> np.ndarray:
    """Per-mode ``2x2`` blocks of ``Lambda^alpha`` where ``A`` acts as ``s = a mu_k``."""
    s = np.asarray(s, dtype=float)
    al = float(alpha)
    out = np.empty(s.shape + (2, 2))
    out[..., 0, 0] = (1 - al) * s ** (al / 2)
    out[..., 0, 1] = -al * s ** ((al - 1) / 2)
    out[..., 1, 0] = al * s ** ((1 + al) / 2)
    out[..., 1, 1] = (1 + al) * s ** (al / 2)
    return out


def wave_inverse_blocks(s: np.ndarray, alpha: float) -> np.ndarray:
    """Per-mode blocks of ``Lambda^{-alpha}`` (closed form)."""
    s = np.asarray(s, dtype=float)
    al = float(alpha)
    out = np.empty(s.shape + (2, 2))
    out[..., 0, 0] = (1 + al) * s ** (-al / 2)
    out[..., 0, 1] = al * s ** ((-1 - al) / 2)
    out[..., 1, 0] = -al * s ** ((1 - al) / 2)
    out[..., 1, 1] = (1 - al) * s ** (-al / 2)
    return out


def block_diag(blocks: np.ndarray) -> np.ndarray:
    n = blocks.shape[0]
    out = np.zeros((2 * n, 2 * n))
    for k in range(n):
        out[2 * k: 2 * k + 2, 2 * k: 2 * k + 2] = blocks[k]
    return out


def wave_space(n_modes: int) -> DiscreteSpace:
    """``X = E^{1/2} x E`` with mode-wise Gram ``diag(mu_k, 1)``; ``Y = X``."""
    mu = np.arange(1, n_modes + 1, dtype=float) ** 2
    g = np.diag(np.column_stack([mu, np.ones(n_modes)]).ravel())
    return DiscreteSpace(g, g, name=f"wave-{n_modes}")


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")


def wave_matrix(cfg: WaveConfig, alpha: float, t: float, inverse: bool = False) -> np.ndarray:
    _check_alpha(alpha)
    a = float(cfg.a_field()(t))
    if not a > 0:
        raise ConfigError(f"wave coefficient must be positive, got a({t})={a}")
    s = a * np.arange(1, cfg.n_modes + 1, dtype=float) ** 2
    return block_diag((wave_inverse_blocks if inverse else wave_blocks)(s, alpha))


def fractional_gap(cfg: WaveConfig, alpha: float, t_samples: Sequence[float]) -> float:
    """``max_t |Lambda(t)^{-alpha} - Lambda(t)^{-1}|_{L(X)}``."""
    from .spaces import op_norm

    sp = wave_space(cfg.n_modes)
    diffs = np.stack([wave_matrix(cfg, alpha, t, True) - wave_matrix(cfg, 1.0, t, True) for t in t_samples])
    return float(np.max(op_norm(sp, sp, diffs)))


def _wave_nonlinearity(space: DiscreteSpace, cfg: WaveConfig, t_samples) -> Nonlinearity:
    """``F(t, (u, v)) = (0, P f(t, u(x)))`` through a sine transform on a fine grid."""
    n = cfg.n_modes
    m = 4 * n + 3
    f = _field(cfg.f, ("t", "s"), {})
    c = math.sqrt((m + 1) / math.pi)

    def ev(t, w):
        coeffs = np.zeros(m)
        coeffs[:n] = w[0::2]
        vals = c * dst(coeffs, type=1, norm="ortho")
        back = dst(np.asarray(f(t, vals), dtype=float), type=1, norm="ortho") / c
        out = np.zeros(2 * n)
        out[1::2] = back[:n]
        return out

    sup_f, sup_df = _sup_derivative(f, t_samples, 50.0)
    return Nonlinearity(space, ev, sup_df, sup_f * math.sqrt(math.pi), scalar=f, name="wave-f")


def build_wave(cfg: WaveConfig, alpha: float) -> Bundle:
    _check_alpha(alpha)
    if cfg.n_modes < 1:
        raise ConfigError("n_modes must be positive")
    ts = np.linspace(cfg.window[0], cfg.window[1], 33)
    a_vals = np.array([float(cfg.a_field()(t)) for t in ts])
    if not a_vals.min() > 0:
        raise ConfigError(f"wave coefficient must be positive, sampled minimum {a_vals.min():.3e}")
    space = wave_space(cfg.n_modes)
    dt = np.abs(ts[:, None] - ts[None, :])
    off = dt > 0
    holder = float((np.abs(a_vals[:, None] - a_vals[None, :])[off] / dt[off]).max())
    declared = HypothesisConstants(phi=3 * math.pi / 4, c_sector=10.0, beta=1.0, delta=1.0,
                                   holder_const=max(holder, 1e-12))
    eps = 1.0 - alpha
    fam = OperatorFamily(space, lambda t: wave_matrix(cfg, alpha, t), eps, declared, name=f"wave[alpha={alpha:g}]")
    F = Nonlinearity.zero(space) if cfg.f is None else _wave_nonlinearity(space, cfg, ts[::4])
    info = {"alpha": alpha, "a_range": [float(a_vals.min()), float(a_vals.max())], "beta": 1.0}
    return Bundle(space, fam, F, eps, "wave", info)


# --------------------------------------------------------------------------- scalar


@dataclass
class ScalarConfig:
    """``u' + a(t) u = f(t, u)`` in one dimension, ``X = Y = R``."""

    a: Coefficient = "1 + 0.5*t + eps"
    f: Coefficient = "0.5*tanh(s) + eps*sin(s)"
    eps_list: Sequence[float] = (0.1, 0.03, 0.01, 0.003)
    window: tuple[float, float] = (0.0, 1.0)


def build_scalar(cfg: ScalarConfig, eps: float, cutoff_radius: float | None = None) -> Bundle:
    a = _field(cfg.a, ("t",), {"eps": eps})
    ts = np.linspace(cfg.window[0], cfg.window[1], 33)
    av = np.array([float(a(t)) for t in ts])
    if not av.min() > 0:
        raise ConfigError(f"scalar coefficient must be positive, sampled minimum {av.min():.3e}")
    space = DiscreteSpace.euclidean(1, name="scalar")
    declared = HypothesisConstants(beta=1.0, delta=1.0, c_sector=RD_SECTOR_CONST)
    fam = OperatorFamily(space, lambda t: np.array([[float(a(t))]]), eps, declared, name=f"scalar[eps={eps:g}]")
    F = pointwise_nonlinearity(space, _field(cfg.f, ("t", "s"), {"eps": eps}), cutoff_radius, ts[::8],
                               f"scalar-f[eps={eps:g}]")
    return Bundle(space, fam, F, eps, "scalar", {"beta": 1.0})

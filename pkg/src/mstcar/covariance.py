"""Covariance algebra for the multivariate space-time CAR random effects.

Stacked per-site vectors of length ``n_groups * n_time`` are ordered
time-major, group-minor: entry ``(t, k)`` lives at ``t * n_groups + k``.
Equivalently, arrays of shape ``(..., n_time, n_groups)`` flatten to that
layout with a C-order reshape.

The nonseparable covariance is ``Sigma_eta = A diag(G_1..G_T) A'`` where
``A`` applies, to each group's time series, the lower Cholesky factor of
that group's AR(1) correlation matrix.  ``A`` is never formed in the
sampler: its action and inverse are O(n_time) recursions.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, InvalidRho, NotPositiveDefinite

DENSE_LIMIT = 512


def _check_rho(rho):
    r = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r < 0.0) or np.any(r >= 1.0):
        raise InvalidRho(f"rho must lie in [0, 1), got {rho!r}")
    return r


def ar1_matrix(rho: float, n_time: int) -> np.ndarray:
    """Dense AR(1) correlation matrix with entries ``rho**|t - t'|``."""
    rho = float(_check_rho(rho))
    lag = np.abs(np.subtract.outer(np.arange(n_time), np.arange(n_time)))
    return rho ** lag


def ar1_cholesky(rho: float, n_time: int) -> np.ndarray:
    """Closed-form lower Cholesky factor of :func:`ar1_matrix`.

    Column 0 holds ``rho**t``; column ``j >= 1`` holds
    ``rho**(t - j) * sqrt(1 - rho**2)`` on and below the diagonal.
    """
    rho = float(_check_rho(rho))
    t = np.arange(n_time)
    lag = np.subtract.outer(t, t)
    out = np.where(lag >= 0, rho ** np.maximum(lag, 0), 0.0)
    out[:, 1:] *= np.sqrt(1.0 - rho * rho)
    return out


def ar1_whiten(series, rho, axis: int = 0) -> np.ndarray:
    """Apply the inverse AR(1) Cholesky factor along ``axis`` in O(n_time).

    ``rho`` may be an array broadcasting against the remaining axes, which is
    how several groups are whitened at once.
    """
    rho = _check_rho(rho)
    x = np.moveaxis(np.asarray(series, dtype=float), axis, 0)
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = (x[1:] - rho * x[:-1]) / np.sqrt(1.0 - rho * rho)
    return np.moveaxis(out, 0, axis)


def ar1_color(series, rho, axis: int = 0) -> np.ndarray:
    """Multiply by the AR(1) Cholesky factor along ``axis``; inverse of :func:`ar1_whiten`."""
    rho = _check_rho(rho)
    x = np.moveaxis(np.asarray(series, dtype=float), axis, 0)
    s = np.sqrt(1.0 - rho * rho)
    out = np.empty(np.broadcast_shapes(x.shape, np.shape(rho)))
    out[0] = x[0]
    for t in range(1, x.shape[0]):
        out[t] = rho * out[t - 1] + s * x[t]
    return np.moveaxis(out, 0, axis)


def _as_blocks(vec, n_groups):
    v = np.asarray(vec, dtype=float)
    if v.ndim >= 2:
        if v.shape[-1] != n_groups:
            raise DimensionMismatch(f"last axis {v.shape[-1]} != {n_groups} groups")
        return v, False
    if v.shape[-1] % n_groups:
        raise DimensionMismatch(f"length {v.shape[-1]} not divisible by {n_groups} groups")
    return v.reshape(-1, n_groups), True


def whiten_increment(increment, rho_list) -> np.ndarray:
    """Apply ``A^{-1}``: whiten every group's time series with its own rho.

    Accepts a flat length ``n_time*n_groups`` vector or any array whose last
    two axes are ``(n_time, n_groups)``; the output has the input's shape.
    """
    rho = _check_rho(np.atleast_1d(rho_list))
    blocks, flat = _as_blocks(increment, len(rho))
    out = ar1_whiten(blocks, rho, axis=-2)
    return out.reshape(np.shape(increment)) if flat else out


def mix_increment(white, rho_list) -> np.ndarray:
    """Apply ``A``; inverse of :func:`whiten_increment`."""
    rho = _check_rho(np.atleast_1d(rho_list))
    blocks, flat = _as_blocks(white, len(rho))
    out = ar1_color(blocks, rho, axis=-2)
    return out.reshape(np.shape(white)) if flat else out


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Variance parameters of the model.

    ``g``: ``(n_time, n_groups, n_groups)`` stack of between-group covariances;
    ``rho``: per-group AR(1) correlation; ``tau2``: per-group error variance
    (a cell's variance is ``tau2[k] / pop``).
    """

    g: np.ndarray
    rho: np.ndarray
    tau2: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim == 2:
            g = g[None]
        rho = np.atleast_1d(np.array(self.rho, dtype=float))
        tau2 = np.atleast_1d(np.array(self.tau2, dtype=float))
        n_g = g.shape[-1]
        if g.ndim != 3 or g.shape[1] != n_g:
            raise DimensionMismatch(f"g must be (n_time, n_groups, n_groups), got {g.shape}")
        if rho.shape != (n_g,) or tau2.shape != (n_g,):
            raise DimensionMismatch(
                f"rho {rho.shape} and tau2 {tau2.shape} must both have length {n_g}"
            )
        _check_rho(rho)
        if np.any(tau2 <= 0):
            raise ValueError("tau2 must be positive")
        check_spd(g)
        for name, val in (("g", g), ("rho", rho), ("tau2", tau2)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_time(self) -> int:
        return self.g.shape[0]

    @property
    def n_groups(self) -> int:
        return self.g.shape[1]

    @property
    def dim(self) -> int:
        return self.n_time * self.n_groups

    def replace(self, **changes) -> "CovarianceSpec":
        return replace(self, **changes)

    @classmethod
    def separable(cls, g, rho: float, n_time: int, tau2) -> "CovarianceSpec":
        g = np.asarray(g, dtype=float)
        return cls(np.broadcast_to(g, (n_time,) + g.shape), np.full(g.shape[0], rho), tau2)


def check_spd(mats) -> np.ndarray:
    """Return Cholesky factors of a stack of matrices, raising if any is not SPD."""
    m = np.asarray(mats, dtype=float)
    if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=1e-10, atol=1e-12):
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def mixing_matrix(rho_list, n_time: int) -> np.ndarray:
    """Dense block lower-triangular ``A`` (test and diagnostic use only)."""
    rho = np.atleast_1d(rho_list)
    n_g = len(rho)
    a = np.zeros((n_time, n_g, n_time, n_g))
    for k, r in enumerate(rho):
        a[:, k, :, k] = ar1_cholesky(r, n_time)
    return a.reshape(n_time * n_g, n_time * n_g)


def _block_diag(g):
    n_t, n_g, _ = g.shape
    out = np.zeros((n_t, n_g, n_t, n_g))
    for t in range(n_t):
        out[t, :, t, :] = g[t]
    return out.reshape(n_t * n_g, n_t * n_g)


def assemble_sigma_eta(spec: CovarianceSpec) -> np.ndarray:
    """Dense ``Sigma_eta`` in time-major/group-minor order."""
    if spec.dim > DENSE_LIMIT:
        raise ValueError(f"refusing to materialise a {spec.dim}-dimensional Sigma_eta")
    a = mixing_matrix(spec.rho, spec.n_time)
    sigma = a @ _block_diag(spec.g) @ a.T
    return 0.5 * (sigma + sigma.T)


def sigma_eta_logdet(spec: CovarianceSpec) -> float:
    """``sum_k log|R_k| + sum_t log|G_t|`` without forming ``Sigma_eta``."""
    chol = np.linalg.cholesky(spec.g)
    logdet_g = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum()
    logdet_r = (spec.n_time - 1) * np.log1p(-spec.rho ** 2).sum()
    return float(logdet_g + logdet_r)


def sigma_eta_precision(spec: CovarianceSpec) -> np.ndarray:
    """``Sigma_eta^{-1} = A^{-T} diag(G_t^{-1}) A^{-1}``, built from the factors.

    The result is block tridiagonal in time.
    """
    n_t, n_g = spec.n_time, spec.n_groups
    # row j of the result is A^{-1} e_j, i.e. column j of A^{-1}
    a_inv = whiten_increment(np.eye(spec.dim).reshape(spec.dim, n_t, n_g), spec.rho)
    a_inv = a_inv.reshape(spec.dim, spec.dim).T
    g_inv = np.linalg.inv(spec.g)
    g_inv = 0.5 * (g_inv + np.swapaxes(g_inv, 1, 2))
    q = a_inv.T @ _block_diag(g_inv) @ a_inv
    return 0.5 * (q + q.T)


def edge_scatter(increments, rho_list) -> np.ndarray:
    """Whitened scatter ``S_t = sum_e u_{e,t} u_{e,t}'`` with ``u_e = A^{-1} d_e``.

    ``increments`` is ``(n_edges, n_time, n_groups)``; returns
    ``(n_time, n_groups, n_groups)``.
    """
    u = whiten_increment(increments, rho_list)
    return np.einsum("etk,etl->tkl", u, u)


def quadratic_from_scatter(scatter, g) -> float:
    """``sum_t tr(G_t^{-1} S_t)``."""
    return float(np.trace(np.linalg.solve(g, scatter), axis1=1, axis2=2).sum())

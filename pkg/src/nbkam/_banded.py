"""Damped Newton iteration for objectives with a block-tridiagonal Hessian.

Discrete path functionals couple each interior node only to its neighbours,
so the Hessian is block-tridiagonal and a Newton step costs O(K) banded
Cholesky work.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg


@dataclass
class NewtonResult:
    x: np.ndarray
    value: float
    grad_norm: float
    decrement: float
    iterations: int
    converged: bool


@lru_cache(maxsize=64)
def _band_index(nblocks: int, bs: int):
    """Index arrays mapping diagonal/off-diagonal blocks into upper banded storage."""
    u = 2 * bs - 1
    r, c = np.triu_indices(bs)
    rows_d, cols_d, _src_d = [], [], []
    rr, cc = np.meshgrid(np.arange(bs), np.arange(bs), indexing="ij")
    rows_o, cols_o = [], []
    for b in range(nblocks):
        i = b * bs + r
        j = b * bs + c
        rows_d.append(u + i - j)
        cols_d.append(j)
        if b + 1 < nblocks:
            i = b * bs + rr.ravel()
            j = (b + 1) * bs + cc.ravel()
            rows_o.append(u + i - j)
            cols_o.append(j)
    diag = (np.concatenate(rows_d), np.concatenate(cols_d), r, c)
    off = (np.concatenate(rows_o), np.concatenate(cols_o)) if rows_o else (np.zeros(0, int),) * 2
    return u, diag, off


def to_banded(diag_blocks: np.ndarray, off_blocks: np.ndarray) -> np.ndarray:
    nblocks, bs, _ = diag_blocks.shape
    u, (rd, cd, r, c), (ro, co) = _band_index(nblocks, bs)
    ab = np.zeros((u + 1, nblocks * bs))
    ab[rd, cd] = diag_blocks[:, r, c].ravel()
    if nblocks > 1:
        ab[ro, co] = off_blocks.reshape(nblocks - 1, -1).ravel()
    return ab


def newton_banded(
    fun,
    x0: np.ndarray,
    value_only=None,
    rtol: float = 1e-13,
    max_iter: int = 200,
) -> NewtonResult:
    """Minimize ``fun`` starting from ``x0`` of shape ``(nblocks, bs)``.

    ``fun(x)`` returns ``(value, grad, diag_blocks, off_blocks)``. ``value_only``
    (defaults to ``fun(x)[0]``) is used in the line search; it may return
    ``inf`` for infeasible points. Steps are Levenberg-damped until the shifted
    Hessian is positive definite, then backtracked (Armijo).
    """
    if value_only is None:
        value_only = lambda z: fun(z)[0]  # noqa: E731
    x = np.array(x0, dtype=float)
    nblocks, bs = x.shape
    lam = 0.0
    value, grad, dblk, oblk = fun(x)
    decrement = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ab = to_banded(dblk, oblk)
        scale = float(np.mean(np.abs(ab[-1]))) or 1.0
        g = grad.ravel()
        step = None
        mu = lam
        for _ in range(60):
            shifted = ab.copy()
            shifted[-1] += mu * scale
            try:
                cb = scipy.linalg.cholesky_banded(shifted, lower=False)
            except np.linalg.LinAlgError:
                mu = max(4.0 * mu, 1e-8)
                continue
            step = -scipy.linalg.cho_solve_banded((cb, False), g)
            break
        if step is None:
            break
        decrement = float(-g @ step)
        if decrement <= rtol * max(abs(value), 1e-300):
            converged = True
            break
        t = 1.0
        accepted = False
        while t > 1e-12:
            trial = x + t * step.reshape(nblocks, bs)
            tv = value_only(trial)
            if np.isfinite(tv) and tv <= value - 1e-4 * t * decrement:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # the decrement may sit at round-off level already
            converged = decrement <= 1e3 * rtol * max(abs(value), 1e-300)
            break
        x = trial
        lam = mu / 4.0 if mu > 1e-8 else 0.0
        value, grad, dblk, oblk = fun(x)
    return NewtonResult(
        x=x,
        value=float(value),
        grad_norm=float(np.linalg.norm(grad)),
        decrement=float(decrement),
        iterations=it,
        converged=converged,
    )

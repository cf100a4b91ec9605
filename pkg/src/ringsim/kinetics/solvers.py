"""Explicit and exponential time steppers."""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from .models import ModelError

log = logging.getLogger(__name__)


def _check(derivs, name):
    for d in derivs:
        if not np.all(np.isfinite(d)):
            raise ModelError(f"{name}: non-finite derivative")
    return derivs


def euler_step(model, state, ht, params):
    """Forward Euler; step-style models advance themselves."""
    if model.step_style:
        return [np.asarray(x, dtype=float) for x in model.step(state, params, ht)]
    f = _check(model.rhs(state, params), model.name)
    return [s + ht * d for s, d in zip(state, f)]


def rk4_step(model, state, ht, params):
    """Classical four-stage Runge-Kutta."""
    if model.step_style:
        raise ModelError(f"{model.name} is a step-style model; rk4 needs a right-hand side")
    k1 = _check(model.rhs(state, params), model.name)
    k2 = model.rhs([s + 0.5 * ht * k for s, k in zip(state, k1)], params)
    k3 = model.rhs([s + 0.5 * ht * k for s, k in zip(state, k2)], params)
    k4 = _check(model.rhs([s + ht * k for s, k in zip(state, k3)], params), model.name)
    return [s + ht / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)]


def gate_coefficients(alpha, beta, ht):
    """Return ``(yinf, decay)`` with ``y' = yinf + (y - yinf) * decay``."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha < 0) or np.any(beta < 0):
        raise ModelError("negative gate transition rate")
    total = alpha + beta
    with np.errstate(invalid="ignore", divide="ignore"):
        yinf = np.where(total > 0, alpha / np.where(total > 0, total, 1.0), 0.0)
    decay = np.exp(-total * ht)
    return yinf, decay


def rush_larsen_gate_step(y, alpha, beta, ht):
    """Exact solution of ``y' = alpha (1 - y) - beta y`` over ``ht`` with
    frozen rates; rates both zero leave ``y`` unchanged."""
    yinf, decay = gate_coefficients(alpha, beta, ht)
    y = np.asarray(y, dtype=float)
    out = yinf + (y - yinf) * decay
    total = np.asarray(alpha, dtype=float) + np.asarray(beta, dtype=float)
    out = np.where(total > 0, out, y)
    return float(out) if out.ndim == 0 else out


_COND_LIMIT = 1e10


def transition_matrix(A, ht, fallback=True):
    """``exp(ht*A)`` via eigendecomposition, batched over leading axes.

    Generators whose eigenvector matrix is (nearly) singular fall back to a
    scaling-and-squaring exponential with a warning.
    """
    A = np.asarray(A, dtype=float)
    batch = A.shape[:-2]
    flat = A.reshape((-1,) + A.shape[-2:])
    w, S = np.linalg.eig(flat)
    cond = np.linalg.cond(S)
    bad = ~np.isfinite(cond) | (cond > _COND_LIMIT)
    T = np.empty_like(flat)
    good = ~bad
    if np.any(good):
        Sg = S[good]
        E = np.exp(w[good] * ht)
        Tg = np.einsum("pij,pj,pjk->pik", Sg, E, np.linalg.inv(Sg))
        T[good] = Tg.real
    if np.any(bad):
        if not fallback:
            raise ModelError("transition matrix is not diagonalizable")
        log.warning("%d non-diagonalizable generator(s); using scaling-and-squaring exponential",
                    int(bad.sum()))
        for i in np.flatnonzero(bad):
            T[i] = scipy.linalg.expm(ht * flat[i])
    return T.reshape(batch + A.shape[-2:])


def apply_transition(T, u):
    """``T @ u`` per point, clamping tiny negative round-off to zero.

    ``T`` is ``(n, n)`` or ``(npts, n, n)``; ``u`` is ``(n,)`` or ``(n, npts)``.
    """
    u = np.asarray(u, dtype=float)
    if T.ndim == 2:
        out = T @ u
    else:
        out = np.einsum("pij,jp->ip", T, u)
    return np.where((out < 0) & (out >= -1e-12), 0.0, out)


def matrix_rush_larsen_step(u, A, ht, fallback=True):
    """Advance Markov-chain probabilities ``u`` by ``exp(ht*A)``."""
    return apply_transition(transition_matrix(A, ht, fallback), u)


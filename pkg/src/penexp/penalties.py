"""Penalties with exact proximal maps and subdifferential certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Absolute tolerance for deciding whether a point sits on the l1-ball
# boundary in the constrained KKT check.
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class L1Penalty:
    """h(b) = level * ||b||_1."""

    level: float

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("penalty level must be >= 0")


@dataclass(frozen=True)
class L1BallConstraint:
    """Indicator of {||b||_1 <= radius}: 0 inside, +inf outside."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")


@dataclass(frozen=True, eq=False)
class GroupPenalty:
    """h(b) = level * sum_k ||b_{G_k}|| over a group partition."""

    level: float
    groups: object

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("penalty level must be >= 0")


def soft_threshold(x, t):
    """sign(x) (|x| - t)_+ with exact zeros."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def project_l1_ball(x, radius):
    """Euclidean projection onto {||b||_1 <= radius} by sort and threshold."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    # The relative slack keeps the map idempotent: re-projecting a point
    # whose norm equals the radius up to rounding leaves it untouched.
    if a.sum() <= radius * (1.0 + 1e-12):
        return x.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, x.size + 1)
    # Largest k with u_k above the running threshold (css_k - R)/k.
    last = np.nonzero(u > (css - radius) / k)[0][-1]
    theta = (css[last] - radius) / (last + 1.0)
    return soft_threshold(x, theta)


def _block_view(spec, v):
    return np.asarray(v, dtype=float)[np.vstack(spec.groups.groups)]


def penalty_value(spec, beta):
    beta = np.asarray(beta, dtype=float)
    if isinstance(spec, L1Penalty):
        return float(spec.level * np.abs(beta).sum())
    if isinstance(spec, L1BallConstraint):
        l1 = np.abs(beta).sum()
        if l1 <= spec.radius + BOUNDARY_TOL * max(1.0, spec.radius):
            return 0.0
        return float("inf")
    if isinstance(spec, GroupPenalty):
        norms = np.linalg.norm(_block_view(spec, beta), axis=1)
        return float(spec.level * norms.sum())
    raise TypeError("unknown penalty %r" % (spec,))


def prox(spec, x, step=1.0):
    """prox of step*h at x. Thresholded coordinates come out exactly 0."""
    if step <= 0:
        raise ValueError("prox step must be > 0")
    x = np.asarray(x, dtype=float)
    if isinstance(spec, L1Penalty):
        return soft_threshold(x, step * spec.level)
    if isinstance(spec, L1BallConstraint):
        return project_l1_ball(x, spec.radius)
    if isinstance(spec, GroupPenalty):
        idx = np.vstack(spec.groups.groups)
        blocks = x[idx]
        norms = np.linalg.norm(blocks, axis=1)
        # Shrink the norm, keep the direction: unit * (||x_G|| - t*level)_+.
        # With singleton groups this reproduces soft thresholding bitwise.
        alive = norms > step * spec.level
        units = np.zeros_like(blocks)
        units[alive] = blocks[alive] / norms[alive, None]
        shrunk = np.maximum(norms - step * spec.level, 0.0)
        out = np.empty_like(x)
        out[idx] = units * shrunk[:, None]
        return out
    raise TypeError("unknown penalty %r" % (spec,))


def subdifferential_residual(spec, beta, grad):
    """Minimal-norm violation of -grad in the subdifferential of h at beta.

    Zero at an exact minimizer of f + h when grad is the gradient of f at
    beta. For the ball constraint an infeasible beta reports +inf; a boundary
    point (within BOUNDARY_TOL) is scored against the normal cone with
    multiplier ||grad||_inf.
    """
    beta = np.asarray(beta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if beta.shape != grad.shape:
        raise ValueError("beta and grad dimensions differ")
    if isinstance(spec, L1Penalty):
        res = np.where(beta != 0.0,
                       np.abs(grad + spec.level * np.sign(beta)),
                       np.maximum(np.abs(grad) - spec.level, 0.0))
        return float(res.max()) if res.size else 0.0
    if isinstance(spec, GroupPenalty):
        idx = np.vstack(spec.groups.groups)
        b_blk = beta[idx]
        g_blk = grad[idx]
        b_norms = np.linalg.norm(b_blk, axis=1)
        worst = 0.0
        zero = b_norms == 0.0
        if zero.any():
            slack = np.linalg.norm(g_blk[zero], axis=1) - spec.level
            worst = max(worst, float(np.maximum(slack, 0.0).max()))
        if (~zero).any():
            dirs = b_blk[~zero] / b_norms[~zero][:, None]
            dev = np.linalg.norm(g_blk[~zero] + spec.level * dirs, axis=1)
            worst = max(worst, float(dev.max()))
        return worst
    if isinstance(spec, L1BallConstraint):
        l1 = np.abs(beta).sum()
        if l1 > spec.radius + BOUNDARY_TOL * max(1.0, spec.radius):
            return float("inf")
        gmax = float(np.abs(grad).max()) if grad.size else 0.0
        if l1 < spec.radius - BOUNDARY_TOL * max(1.0, spec.radius):
            # Strict interior: stationarity needs a vanishing gradient.
            return gmax
        nz = beta != 0.0
        if not nz.any():
            return gmax
        return float(np.abs(grad[nz] + gmax * np.sign(beta[nz])).max())
    raise TypeError("unknown penalty %r" % (spec,))

"""Shared numerical helpers: finite differences, bump profiles, local search."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def max_workers() -> int:
    """Worker cap for grid sweeps, from HOFERLAB_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("HOFERLAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map with deterministic output order; threads only if the env asks."""
    n = max_workers()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def quintic_step(u):
    """C^2 monotone step 6u^5-15u^4+10u^3, clamped to [0,1]."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def quintic_step_deriv(u):
    """Derivative of quintic_step (zero outside (0,1))."""
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u * u * (u - 1.0) * (u - 1.0), 0.0)


def box_bump(x, lo, hi, margin):
    """Plateau bump: exactly 1 on the box [lo,hi], 0 outside [lo-margin,
    hi+margin]; C^2 product of per-axis quintic shoulders.

    x has shape (..., d); lo, hi broadcast per axis, margin scalar.
    """
    x = np.asarray(x, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rise = quintic_step((x - (lo - margin)) / margin)
    fall = quintic_step(((hi + margin) - x) / margin)
    return np.prod(rise * fall, axis=-1)


def box_bump_grad(x, lo, hi, margin):
    """Gradient of box_bump, shape like x."""
    x = np.asarray(x, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ur = (x - (lo - margin)) / margin
    uf = ((hi + margin) - x) / margin
    rise = quintic_step(ur)
    fall = quintic_step(uf)
    factors = rise * fall  # (..., d)
    dfac = (quintic_step_deriv(ur) * fall - rise * quintic_step_deriv(uf)) / margin
    total = np.prod(factors, axis=-1, keepdims=True)
    # avoid 0/0 at the outer boundary: where a factor vanishes so does grad
    safe = np.where(factors > 1e-300, factors, 1.0)
    out = total * dfac / safe
    out = np.where(factors > 1e-300, out, 0.0)
    return out


def fd_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at points x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    g = np.empty((n, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[:, i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_hessian(f, x, h=1e-4):
    """Central-difference Hessian of scalar f at points x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    hess = np.empty((n, d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        hess[:, i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            mixed = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h * h)
            hess[:, i, j] = mixed
            hess[:, j, i] = mixed
    return hess


def fd_jacobian(phi, x, h=1e-5):
    """Central-difference Jacobian of map phi at points x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    jac = np.empty((n, d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jac[:, :, i] = (phi(x + e) - phi(x - e)) / (2.0 * h)
    return jac


def pattern_search_max(f, x0, radius=1e-2, shrink=0.5, tol=1e-8, max_iter=200):
    """Derivative-free local maximisation, batched over rows of x0.

    Probes +-radius along each coordinate axis, keeps improvements, shrinks
    the radius when no probe improves.  Deterministic; robust to kinks.
    Returns (argmax points, values).
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n, d = x.shape
    fx = f(x)
    r = np.full(n, float(radius))
    for _ in range(max_iter):
        improved = np.zeros(n, dtype=bool)
        for i in range(d):
            for sgn in (1.0, -1.0):
                cand = x.copy()
                cand[:, i] += sgn * r
                fc = f(cand)
                better = fc > fx
                x[better] = cand[better]
                fx = np.where(better, fc, fx)
                improved |= better
        r = np.where(improved, r, r * shrink)
        if np.all(r < tol):
            break
    return x, fx


def simpson_weights(n):
    """Composite Simpson weights on n uniformly spaced nodes (n odd)."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of nodes >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def simpson_integrate(values, a, b):
    """Composite Simpson integral of sampled values over [a, b]."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    h = (b - a) / (n - 1)
    return h * np.tensordot(simpson_weights(n), values, axes=(0, 0))

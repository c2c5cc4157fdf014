"""Numerical integration of Hamiltonian ODEs and conservation audits.

Schemes: classical RK4 and the implicit midpoint rule (symplectic; fixed
point iteration to 1e-12 residual).  Sphere trajectories are integrated in
ambient R^3 and renormalized every step.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    GeometryError,
    Grid,
    ManifoldSpec,
    omega_matrix,
    sphere_tangent_basis,
)
from .hamiltonian import Hamiltonian, sgrad
from .report import Report

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 50


class FlowError(RuntimeError):
    pass


def _renorm(M: ManifoldSpec, x):
    if M.kind == "sphere2":
        return x / np.linalg.norm(x, axis=-1, keepdims=True)
    return x


def _rk4_step(field, x, t, h):
    k1 = field(x, t)
    k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _midpoint_step(field, x, t, h):
    x_next = x + h * field(x, t)  # explicit Euler predictor
    tm = t + 0.5 * h
    for _ in range(FIXED_POINT_MAX_ITER):
        cand = x + h * field(0.5 * (x + x_next), tm)
        err = np.max(np.abs(cand - x_next))
        x_next = cand
        if err < FIXED_POINT_TOL:
            return x_next
    raise FlowError(
        f"implicit midpoint fixed point stalled at residual {err:.2e}"
    )


def integrate_flow(
    F: Hamiltonian,
    x0,
    t0: float,
    t1: float,
    scheme: str = "rk4",
    step: float = 1e-3,
    store: bool = True,
    field=None,
):
    """Integrate xdot = sgrad F_t(x) from t0 to t1 (either direction).

    Returns (times, states) with states of shape (n_steps+1, N, d) when
    ``store``, else just the final state.  Euclidean trajectories escaping
    a generous chart box raise FlowError.
    """
    if step <= 0:
        raise FlowError("step must be positive")
    M = F.manifold
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    if field is None:
        field = lambda y, t: sgrad(F, y, t)
    span = t1 - t0
    if abs(span) < 1e-15:
        return (np.array([t0]), x[None, ...]) if store else x
    n_steps = max(1, int(round(abs(span) / step)))
    h = span / n_steps
    stepper = _midpoint_step if scheme == "implicit_midpoint" else _rk4_step
    if scheme not in ("rk4", "implicit_midpoint"):
        raise FlowError(f"unknown scheme {scheme!r}")
    times = t0 + h * np.arange(n_steps + 1)
    traj = np.empty((n_steps + 1,) + x.shape) if store else None
    if store:
        traj[0] = x
    for k in range(n_steps):
        x = stepper(field, x, times[k], h)
        x = _renorm(M, x)
        if M.kind == "euclidean" and np.max(np.abs(x)) > 1e6:
            raise FlowError("trajectory escaped the euclidean chart box")
        if store:
            traj[k + 1] = x
    return (times, traj) if store else x


@dataclass
class FlowMap:
    """Time-t maps of a Hamiltonian with an append-only trajectory cache.

    Share freely after construction; integration on demand runs behind an
    internal lock so concurrent readers see consistent cache state.
    """

    hamiltonian: Hamiltonian
    scheme: str = "rk4"
    step: float = 1e-3
    use_exact: bool = False
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def map(self, x, t0: float, t1: float):
        """Image of points x under the flow from time t0 to t1."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.use_exact and self.hamiltonian.exact_flow is not None:
            return self.hamiltonian.exact_flow(x, t0, t1)
        key = (x.tobytes(), x.shape, float(t0), float(t1), self.scheme, self.step)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                return hit.copy()
        out = integrate_flow(
            self.hamiltonian, x, t0, t1, scheme=self.scheme, step=self.step,
            store=False,
        )
        with self._lock:
            self._cache.setdefault(key, out.copy())
        return out

    def trajectory(self, x0, t0: float, t1: float):
        return integrate_flow(
            self.hamiltonian, x0, t0, t1, scheme=self.scheme, step=self.step
        )

    def error_estimate(self, x, t0, t1):
        """Step-halving error estimate of the time-t map at x."""
        coarse = integrate_flow(
            self.hamiltonian, x, t0, t1, self.scheme, self.step, store=False
        )
        fine = integrate_flow(
            self.hamiltonian, x, t0, t1, self.scheme, self.step / 2.0, store=False
        )
        return float(np.max(np.abs(coarse - fine)))


@dataclass
class MonodromyMatrix:
    """Solution M(t) of Mdot = C(t) M, M(0) = I, along a fixed point."""

    base_point: np.ndarray
    times: np.ndarray
    matrices: np.ndarray  # (n_t, 2n, 2n)

    def at(self, t: float):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise FlowError(f"time {t} not on the monodromy grid")
        return self.matrices[idx]


def linearized_generator(F: Hamiltonian, x_fixed, t):
    """C(t) = J Hess F(x, t) at a fixed point, in chart coordinates
    (orthonormal tangent-frame coordinates on the sphere)."""
    M = F.manifold
    x = np.asarray(x_fixed, dtype=float)
    if M.kind == "sphere2":
        e1, e2 = sphere_tangent_basis(x)
        h = 1e-5
        cols = []
        for e in (e1, e2):
            xp = (x + h * e) / np.linalg.norm(x + h * e)
            xm = (x - h * e) / np.linalg.norm(x - h * e)
            dv = (sgrad(F, xp, t) - sgrad(F, xm, t)) / (2 * h)
            cols.append([float(np.dot(e1, dv)), float(np.dot(e2, dv))])
        return np.array(cols).T
    J = omega_matrix(M)
    H = F.hess(x[None, :], t)[0]
    return J @ H


def monodromy(F: Hamiltonian, x_fixed, t1: float, n_steps: int = 1000) -> MonodromyMatrix:
    """Linearized flow along a fixed point of sgrad F.

    The base point must satisfy |sgrad F(x, t)| <= 1e-8 for sampled t.
    """
    x = np.asarray(x_fixed, dtype=float)
    for t in np.linspace(0.0, t1, 9):
        v = sgrad(F, x, t)
        if np.max(np.abs(v)) > 1e-8:
            raise FlowError(
                f"base point is not fixed: |sgrad| = {np.max(np.abs(v)):.2e} at t={t}"
            )
    dim = 2 if F.manifold.kind == "sphere2" else F.manifold.dim
    times = np.linspace(0.0, t1, n_steps + 1)
    h = t1 / n_steps
    mats = np.empty((n_steps + 1, dim, dim))
    mats[0] = np.eye(dim)
    Mcur = np.eye(dim)

    def rhs(Mmat, t):
        return linearized_generator(F, x, t) @ Mmat

    for k in range(n_steps):
        t = times[k]
        k1 = rhs(Mcur, t)
        k2 = rhs(Mcur + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(Mcur + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(Mcur + h * k3, t + h)
        Mcur = Mcur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        mats[k + 1] = Mcur
    dets = np.linalg.det(mats)
    if np.max(np.abs(dets - 1.0)) > 1e-6:
        raise FlowError("monodromy lost symplecticity (det drifted from 1)")
    return MonodromyMatrix(base_point=x, times=times, matrices=mats)


def symplecticity_report(flow: FlowMap, g: Grid, t: float, fd_step=1e-5) -> Report:
    """Max norm of J_f^T Omega J_f - Omega over the grid, J_f by central
    differences of the time-t map."""
    M = g.manifold
    pts = g.points
    rep = Report(experiment="symplecticity")

    if M.kind == "sphere2":
        resid = 0.0
        for x in pts:
            e1, e2 = sphere_tangent_basis(x)
            h = fd_step
            cols = []
            for e in (e1, e2):
                xp = (x + h * e) / np.linalg.norm(x + h * e)
                xm = (x - h * e) / np.linalg.norm(x - h * e)
                d = (flow.map(xp[None], 0.0, t)[0] - flow.map(xm[None], 0.0, t)[0]) / (2 * h)
                y = flow.map(x[None], 0.0, t)[0]
                f1, f2 = sphere_tangent_basis(y)
                cols.append([float(np.dot(f1, d)), float(np.dot(f2, d))])
            Jf = np.array(cols).T
            Wstd = np.array([[0.0, 1.0], [-1.0, 0.0]])
            resid = max(resid, float(np.max(np.abs(Jf.T @ Wstd @ Jf - Wstd))))
    else:
        W = omega_matrix(M)
        d = M.dim
        n = len(pts)
        jac = np.empty((n, d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = fd_step
            jac[:, :, i] = (
                flow.map(pts + e, 0.0, t) - flow.map(pts - e, 0.0, t)
            ) / (2 * fd_step)
        resid = float(
            np.max(np.abs(np.einsum("nji,jk,nkl->nil", jac, W, jac) - W))
        )
    rep.add_scalar("max_symplectic_residual", resid, err=fd_step**2)
    rep.config = {"t": t, "scheme": flow.scheme, "step": flow.step}
    return rep


def conservation_report(flow: FlowMap, x0, t1: float, n_samples: int = 201) -> Report:
    """max_t |F(x(t)) - F(x(0))| for an autonomous Hamiltonian."""
    F = flow.hamiltonian
    if not F.autonomous:
        raise FlowError("conservation audit needs an autonomous Hamiltonian")
    times, traj = integrate_flow(
        F, x0, 0.0, t1, scheme=flow.scheme, step=flow.step
    )
    stride = max(1, len(times) // n_samples)
    vals = np.stack([F(traj[k], 0.0) for k in range(0, len(times), stride)])
    drift = float(np.max(np.abs(vals - vals[0])))
    rep = Report(experiment="conservation")
    rep.add_scalar("max_energy_drift", drift)
    rep.config = {"t1": t1, "scheme": flow.scheme, "step": flow.step}
    return rep

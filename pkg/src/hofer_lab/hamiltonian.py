"""Time-dependent Hamiltonians and their closed-form algebra.

Sign conventions, fixed once and validated against worked examples:

* Hamiltonian vector field: i_xi Omega = -dF, so in canonical (p, q) charts
  sgrad F = (-dF/dq, dF/dp);
* Poisson bracket: {F, G} = Omega(sgrad G, sgrad F) = -dG(sgrad F);
* on the sphere, sgrad F(x) = cross(x, grad F(x)) / area_scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    GeometryError,
    Grid,
    ManifoldSpec,
    mean_value,
    sample_grid,
)
from .util import box_bump, fd_gradient, fd_hessian

GRAD_FD_STEP = 1e-5
HESS_FD_STEP = 1e-4
SUPPORT_SHELL_TOL = 1e-12


class HamiltonianError(ValueError):
    pass


@dataclass
class Hamiltonian:
    """Scalar field F(x, t) with optional analytic derivative providers.

    ``eval_fn(points, t)`` takes an (N, n_coords) array and a scalar time.
    ``grad_fn`` returns chart partials (ambient gradient on the sphere);
    ``hess_fn`` returns (N, d, d) symmetric matrices.  ``support`` is an
    axis-aligned box in chart coordinates outside which F vanishes (open
    manifolds only).  ``exact_flow(points, t0, t1)``, when present, is the
    closed-form time-t map used by flow code on request.
    """

    manifold: ManifoldSpec
    eval_fn: callable
    grad_fn: callable | None = None
    hess_fn: callable | None = None
    support: np.ndarray | None = None
    time_interval: tuple = (0.0, 1.0)
    autonomous: bool = True
    exact_flow: callable | None = None
    name: str = ""

    def __call__(self, points, t=0.0):
        vals = np.asarray(
            self.eval_fn(np.asarray(points, dtype=float), float(t)), dtype=float
        )
        if not np.all(np.isfinite(vals)):
            raise HamiltonianError(f"non-finite Hamiltonian value in {self.name!r}")
        return vals

    def grad(self, points, t=0.0):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.grad_fn is not None:
            return np.asarray(self.grad_fn(points, float(t)), dtype=float)
        return fd_gradient(lambda x: self(x, t), points, h=GRAD_FD_STEP)

    def hess(self, points, t=0.0):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(points, float(t)), dtype=float)
        return fd_hessian(lambda x: self(x, t), points, h=HESS_FD_STEP)

    def check_time(self, t):
        a, b = self.time_interval
        if t < a - 1e-12 or t > b + 1e-12:
            raise HamiltonianError(
                f"time {t} outside interval [{a}, {b}] of {self.name!r}"
            )

    def check_support(self, n_shell=64):
        """Evaluate on a shell just outside the declared support box."""
        if self.support is None:
            return
        box = np.asarray(self.support, dtype=float)
        d = box.shape[0]
        rng = np.random.default_rng(0)
        pts = rng.uniform(box[:, 0], box[:, 1], size=(n_shell, d))
        for axis in range(d):
            for side, off in ((0, -1e-3), (1, 1e-3)):
                shell = pts.copy()
                shell[:, axis] = box[axis, side] + off * (1 + np.arange(n_shell) % 3)
                vals = self(shell, self.time_interval[0])
                if np.max(np.abs(vals)) > SUPPORT_SHELL_TOL:
                    raise HamiltonianError(
                        f"{self.name!r} does not vanish outside its support box"
                    )


@dataclass
class NormalizedHamiltonian(Hamiltonian):
    """Hamiltonian in the normalized class: zero quadrature mean per time
    slice (closed manifold) or fixed compact support (open manifold)."""

    mean_evidence: np.ndarray | None = None  # (n_t, 2): t, |mean|


def sgrad(F: Hamiltonian, x, t=0.0):
    """Hamiltonian vector field of F at points x (vectorised).

    Canonical charts: (-dF/dq, dF/dp).  Sphere: the unique tangent field
    with i_xi Omega = -dF, computed from the ambient gradient.
    """
    F.check_time(t)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    g = F.grad(pts, t)
    M = F.manifold
    if M.kind == "sphere2":
        out = np.cross(pts, g) / M.area_scale
    else:
        n = M.dim // 2
        out = np.empty_like(g)
        out[:, :n] = -g[:, n:]
        out[:, n:] = g[:, :n]
    if not np.all(np.isfinite(out)):
        raise HamiltonianError("non-finite Hamiltonian vector field")
    return out[0] if single else out


def poisson_bracket(F: Hamiltonian, G: Hamiltonian, x, t=0.0):
    """{F, G} = Omega(sgrad G, sgrad F) = -dG(sgrad F) at x."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    xf = sgrad(F, pts, t)
    gg = G.grad(pts, t)
    if F.manifold.kind == "sphere2":
        from .geometry import sphere_tangent_project

        gg = sphere_tangent_project(pts, gg)
    out = -np.sum(gg * xf, axis=-1)
    return float(out[0]) if single else out


def normalize(F: Hamiltonian, M: ManifoldSpec, g: Grid, n_t=9) -> NormalizedHamiltonian:
    """Subtract the per-time quadrature mean (closed M) or validate the
    declared compact support (open M)."""
    if M.closed:
        w = g.weights / np.sum(g.weights)
        pts = g.points

        def eval_fn(x, t, _F=F, _pts=pts, _w=w):
            return _F(x, t) - float(np.sum(_w * _F(_pts, t)))

        grad_fn = F.grad_fn  # constants do not change the gradient
        hess_fn = F.hess_fn
        a, b = F.time_interval
        ts = np.linspace(a, b, n_t)
        H = NormalizedHamiltonian(
            manifold=M,
            eval_fn=eval_fn,
            grad_fn=grad_fn,
            hess_fn=hess_fn,
            time_interval=F.time_interval,
            autonomous=F.autonomous,
            exact_flow=F.exact_flow,
            name=F.name + "~norm",
        )
        H.mean_evidence = np.array(
            [[t, abs(float(np.sum(w * H(pts, t))))] for t in ts]
        )
        if np.max(H.mean_evidence[:, 1]) > 1e-6:
            raise HamiltonianError("normalization failed to reach zero mean")
        return H
    if F.support is None:
        raise HamiltonianError(
            "normalizing on an open manifold needs a declared support box"
        )
    F.check_support()
    return NormalizedHamiltonian(
        manifold=M,
        eval_fn=F.eval_fn,
        grad_fn=F.grad_fn,
        hess_fn=F.hess_fn,
        support=F.support,
        time_interval=F.time_interval,
        autonomous=F.autonomous,
        exact_flow=F.exact_flow,
        name=F.name,
    )


def product_hamiltonian(F: Hamiltonian, G: Hamiltonian, flowF) -> Hamiltonian:
    """Generator of the product path {f_t g_t}: H(x,t) = F(x,t) + G(f_t^{-1}x, t).

    ``flowF`` must integrate F; a residual spot check enforces the match.
    f_t^{-1} is evaluated by backward integration.
    """
    _check_flow_matches(flowF, F)

    def eval_fn(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = flowF.map(x, t, 0.0)
        return F(x, t) + G(y, t)

    return Hamiltonian(
        manifold=F.manifold,
        eval_fn=eval_fn,
        time_interval=F.time_interval,
        autonomous=False,
        name=f"product({F.name},{G.name})",
    )


def inverse_hamiltonian(F: Hamiltonian, flowF) -> Hamiltonian:
    """Generator of the inverse path {f_t^{-1}}: (x, t) -> -F(f_t x, t)."""
    _check_flow_matches(flowF, F)

    def eval_fn(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -F(flowF.map(x, 0.0, t), t)

    return Hamiltonian(
        manifold=F.manifold,
        eval_fn=eval_fn,
        time_interval=F.time_interval,
        autonomous=False,
        name=f"inverse({F.name})",
    )


def _check_flow_matches(flowF, F, tol=1e-5):
    if flowF.hamiltonian is not F:
        # residual test: d/dt f_t x = sgrad F(f_t x) on a couple of samples
        probe = _probe_points(F.manifold)
        t0, t1 = F.time_interval
        tm = 0.5 * (t0 + min(t1, t0 + 1.0))
        h = 1e-4
        fp = flowF.map(probe, t0, tm + h)
        fm = flowF.map(probe, t0, tm - h)
        vel = (fp - fm) / (2 * h)
        expect = sgrad(F, flowF.map(probe, t0, tm), tm)
        if np.max(np.abs(vel - expect)) > tol:
            raise HamiltonianError("flow does not integrate this Hamiltonian")


def _probe_points(M: ManifoldSpec):
    if M.kind == "sphere2":
        pts = np.array([[0.6, 0.0, 0.8], [0.0, -0.8, 0.6], [0.48, 0.6, 0.64]])
        return pts / np.linalg.norm(pts, axis=1, keepdims=True)
    d = M.dim
    base = np.linspace(0.15, 0.45, d)
    return np.stack([base, base[::-1] * 0.7, base * 0.3 + 0.1])


def reparametrize(F: NormalizedHamiltonian, b, bprime) -> Hamiltonian:
    """Time change t -> b(t): the path {f_{b(t)}} is generated by
    b'(t) F(x, b(t)).  Requires b(0) = 0."""
    if abs(float(b(0.0))) > 1e-12:
        raise HamiltonianError("time map must satisfy b(0) = 0")

    def eval_fn(x, t):
        return float(bprime(t)) * F(x, float(b(t)))

    def grad_fn(x, t):
        return float(bprime(t)) * F.grad(x, float(b(t)))

    return Hamiltonian(
        manifold=F.manifold,
        eval_fn=eval_fn,
        grad_fn=grad_fn,
        support=F.support,
        time_interval=F.time_interval,
        autonomous=False,
        name=f"reparam({F.name})",
    )


def cutoff(H, region, margin: float, M: ManifoldSpec) -> Hamiltonian:
    """Multiply the scalar field H by a quintic-smoothstep plateau bump:
    identically 1 on the region box, 0 outside region + margin."""
    if region is None or (np.asarray(region, dtype=float).size == 0):
        return Hamiltonian(
            manifold=M,
            eval_fn=lambda x, t: np.zeros(np.atleast_2d(x).shape[0]),
            support=np.zeros((M.dim, 2)),
            name="cutoff(empty)",
        )
    if margin <= 0:
        raise HamiltonianError("cutoff margin must be positive")
    box = np.asarray(region, dtype=float)
    lo, hi = box[:, 0], box[:, 1]

    def eval_fn(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        hv = H(x, t) if isinstance(H, Hamiltonian) else np.asarray(H(x), dtype=float)
        return box_bump(x, lo, hi, margin) * hv

    support = np.stack([lo - margin, hi + margin], axis=1)
    return Hamiltonian(
        manifold=M, eval_fn=eval_fn, support=support, name="cutoff"
    )


# ---------------------------------------------------------------------------
# catalog


def _oscillator(M, lam):
    two_pi_lam = 2.0 * math.pi * lam

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        return 0.5 * two_pi_lam * (x[:, 0] ** 2 + x[:, 1] ** 2)

    def grad_fn(x, t):
        return two_pi_lam * np.atleast_2d(x)

    def hess_fn(x, t):
        n = np.atleast_2d(x).shape[0]
        return np.broadcast_to(two_pi_lam * np.eye(2), (n, 2, 2)).copy()

    def exact_flow(x, t0, t1):
        # z(t) = exp(2 pi lam i (t1-t0)) z(t0), z = p + iq; t0/t1 may be
        # arrays matched to the rows of x
        x = np.atleast_2d(x)
        th = two_pi_lam * (np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float))
        c, s = np.cos(th), np.sin(th)
        out = np.empty_like(x)
        out[:, 0] = c * x[:, 0] - s * x[:, 1]
        out[:, 1] = s * x[:, 0] + c * x[:, 1]
        return out

    return Hamiltonian(
        manifold=M,
        eval_fn=eval_fn,
        grad_fn=grad_fn,
        hess_fn=hess_fn,
        exact_flow=exact_flow,
        name=f"oscillator(lambda={lam})",
    )


def _rotation(M, k):
    c = 2.0 * math.pi * k * M.area_scale

    def exact_flow(x, t0, t1):
        # rotation about the x3 axis; z = x1 + i x2 obeys z' = -2 pi k i z
        x = np.atleast_2d(x)
        th = -2.0 * math.pi * k * (np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float))
        co, si = np.cos(th), np.sin(th)
        out = x.copy()
        out[:, 0] = co * x[:, 0] - si * x[:, 1]
        out[:, 1] = si * x[:, 0] + co * x[:, 1]
        return out

    return Hamiltonian(
        manifold=M,
        eval_fn=lambda x, t: c * np.atleast_2d(x)[:, 2],
        grad_fn=lambda x, t: np.broadcast_to(
            np.array([0.0, 0.0, c]), np.atleast_2d(x).shape
        ).copy(),
        exact_flow=exact_flow,
        name=f"rotation_{k}",
    )


def _translation_gen(M, u):
    return Hamiltonian(
        manifold=M,
        eval_fn=lambda x, t: u * np.atleast_2d(x)[:, 0],
        grad_fn=lambda x, t: np.broadcast_to(
            np.array([u, 0.0]), np.atleast_2d(x).shape
        ).copy(),
        hess_fn=lambda x, t: np.zeros((np.atleast_2d(x).shape[0], 2, 2)),
        exact_flow=lambda x, t0, t1: np.atleast_2d(x) + np.array([0.0, u * (t1 - t0)]),
        name=f"translation_gen(u={u})",
    )


def _radial_bump(M, height, p_width):
    lo = np.array([-p_width / 2.0])
    hi = np.array([p_width / 2.0])
    margin = p_width / 2.0

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        return height * box_bump(x[:, :1], lo, hi, margin)

    support = np.array([[-p_width, p_width], [0.0, 1.0]])
    return Hamiltonian(
        manifold=M,
        eval_fn=eval_fn,
        support=support,
        name=f"radial_bump(h={height},w={p_width})",
    )


def _torus_bump(M, center, radius, height):
    center = np.asarray(center, dtype=float)

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        d = x - center
        d -= np.round(d)
        return height * box_bump(d, -radius / 2.0, radius / 2.0, radius / 2.0)

    return Hamiltonian(
        manifold=M, eval_fn=eval_fn, name=f"torus_bump(c={tuple(center)},r={radius})"
    )


def _tilted_height(M, a=1.0, b=0.5):
    tp = 2.0 * math.pi

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        return a * np.cos(tp * x[:, 0]) + b * np.cos(tp * x[:, 1])

    def grad_fn(x, t):
        x = np.atleast_2d(x)
        return np.stack(
            [-a * tp * np.sin(tp * x[:, 0]), -b * tp * np.sin(tp * x[:, 1])], axis=-1
        )

    def hess_fn(x, t):
        x = np.atleast_2d(x)
        h = np.zeros((x.shape[0], 2, 2))
        h[:, 0, 0] = -a * tp * tp * np.cos(tp * x[:, 0])
        h[:, 1, 1] = -b * tp * tp * np.cos(tp * x[:, 1])
        return h

    return Hamiltonian(
        manifold=M, eval_fn=eval_fn, grad_fn=grad_fn, hess_fn=hess_fn,
        name=f"tilted_height(a={a},b={b})",
    )


def catalog(name: str, M: ManifoldSpec | None = None, **params) -> Hamiltonian:
    """Named model Hamiltonians used across the experiments."""
    if name.startswith("rotation_"):
        k = int(name.split("_", 1)[1])
        return _rotation(M or ManifoldSpec("sphere2"), k)
    if name == "oscillator":
        return _oscillator(M or ManifoldSpec("euclidean", dim=2), params.get("lam", 1.0))
    if name == "translation_gen":
        return _translation_gen(M or ManifoldSpec("euclidean", dim=2), params.get("u", 1.0))
    if name == "radial_bump":
        return _radial_bump(
            M or ManifoldSpec("cylinder"),
            params.get("height", 1.0),
            params.get("p_width", 0.5),
        )
    if name == "torus_bump":
        return _torus_bump(
            M or ManifoldSpec("torus2"),
            params.get("center", (0.25, 0.25)),
            params.get("radius", 0.2),
            params.get("height", 1.0),
        )
    if name == "tilted_height":
        return _tilted_height(
            M or ManifoldSpec("torus2"), params.get("a", 1.0), params.get("b", 0.5)
        )
    raise HamiltonianError(f"unknown catalog name {name!r}")

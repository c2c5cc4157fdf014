"""Variational theory of Hamiltonian paths under the oscillation norm.

Quasi-autonomy test (fixed extrema), variations built from mean-zero-in-time
generators, length profiles eps -> l(eps), the second-variation forms Q+-,
finite-difference cross-checks, and conjugate-point scans of the linearized
flow at the fixed extrema.

The quadratic form follows the derivation's final line,

    Q(v) = - int_0^1 ( Omega(C^{-1} vdot, vdot) + Omega(vdot, v) ) dt,

whose cross term is Omega(vdot, v); the displayed statement's
Omega(vdot, vdot) is identically zero and is treated as a misprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowMap, MonodromyMatrix, integrate_flow, linearized_generator, monodromy
from .geometry import Grid, ManifoldSpec, omega_matrix
from .hamiltonian import Hamiltonian, NormalizedHamiltonian, sgrad
from .hofer import _refine_extremum
from .util import simpson_integrate

V1_TOL = 1e-8


class GeodesicError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# derivatives of sampled curves


def derivative_samples(values, dt, order=4):
    """First derivative of uniformly sampled values (axis 0), 4th order
    central stencil inside, one-sided 4th order at the edges."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    out = np.empty_like(v)
    if order == 2 or n < 6:
        return np.gradient(v, dt, axis=0, edge_order=2)
    out[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * dt)
    out[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * dt)
    out[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * dt)
    out[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * dt)
    out[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * dt)
    return out


def fd_second_derivative(values, h):
    """5-point second derivative at the center from values at
    (-2h, -h, 0, h, 2h)."""
    m2, m1, c, p1, p2 = values
    return (-p2 + 16 * p1 - 30 * c + 16 * m1 - m2) / (12 * h * h)


# ---------------------------------------------------------------------------
# domain types


@dataclass
class VariationField:
    """Curve v(t) in a fixed tangent plane with v(0) = v(1) = 0."""

    times: np.ndarray  # (nt,), uniform on [0, 1]
    samples: np.ndarray  # (nt, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if np.any(self.samples[0] != 0.0) or np.any(self.samples[-1] != 0.0):
            raise GeodesicError("variation fields must vanish at t = 0 and t = 1")

    def derivative(self):
        dt = self.times[1] - self.times[0]
        return derivative_samples(self.samples, dt)


def circle_variation(r: float, n: int = 1025, orientation: float = 1.0) -> VariationField:
    """v(t) = r (cos 2 pi t - 1, sin 2 pi t): a circle through the origin."""
    ts = np.linspace(0.0, 1.0, n)
    v = np.stack(
        [r * (np.cos(2 * np.pi * ts) - 1.0), orientation * r * np.sin(2 * np.pi * ts)],
        axis=-1,
    )
    v[0] = 0.0
    v[-1] = 0.0
    return VariationField(times=ts, samples=v)


def curve_energy(v: VariationField) -> float:
    vd = v.derivative()
    return float(simpson_integrate(np.sum(vd * vd, axis=-1), 0.0, 1.0))


def curve_area(v: VariationField) -> float:
    """Signed area 1/2 int omega(v, vdot) dt enclosed by the closed curve."""
    vd = v.derivative()
    w = v.samples[:, 0] * vd[:, 1] - v.samples[:, 1] * vd[:, 0]
    return 0.5 * float(simpson_integrate(w, 0.0, 1.0))


@dataclass
class ExtremalData:
    """Time-independent extремal points with linearized generators C(t)."""

    manifold: ManifoldSpec
    times: np.ndarray
    x_plus: np.ndarray | None = None
    x_minus: np.ndarray | None = None
    C_plus: np.ndarray | None = None  # (nt, 2, 2)
    C_minus: np.ndarray | None = None
    nondegenerate_plus: bool = False
    nondegenerate_minus: bool = False
    oscillation: float = 0.0


# ---------------------------------------------------------------------------
# quasi-autonomy


def quasiautonomous_test(F: Hamiltonian, g: Grid, tol: float = 1e-6, n_t: int = 17):
    """True iff the grid extrema stay put over time and the oscillation is
    t-constant within tol.  Also returns the extremal data to feed the
    second-variation machinery."""
    a, b = F.time_interval
    ts = np.linspace(a, b, n_t)
    M = g.manifold
    cell = (
        2.0 / g.resolution
        if M.kind == "sphere2"
        else float(np.max(((g.region[:, 1] - g.region[:, 0]) if g.region is not None else 1.0)))
        / g.resolution
    )

    argmax, argmin, osc = [], [], []
    for t in ts:
        vals = F(g.points, t)
        hi, xh = _refine_extremum(F, t, g.points[int(np.argmax(vals))], +1, cell, M)
        lo, xl = _refine_extremum(F, t, g.points[int(np.argmin(vals))], -1, cell, M)
        argmax.append(xh)
        argmin.append(xl)
        osc.append(hi - lo)
    argmax = np.array(argmax)
    argmin = np.array(argmin)
    osc = np.array(osc)

    moved = max(
        float(np.max(M.distance(argmax, argmax[:1]))),
        float(np.max(M.distance(argmin, argmin[:1]))),
    )
    fixed = moved <= 2.0 * cell
    constant = float(np.max(osc) - np.min(osc)) <= tol
    ok = bool(fixed and constant)

    x_plus = argmax.mean(axis=0)
    x_minus = argmin.mean(axis=0)
    if M.kind == "sphere2":
        x_plus /= np.linalg.norm(x_plus)
        x_minus /= np.linalg.norm(x_minus)
    data = extremal_data(F, x_plus=x_plus, x_minus=x_minus, n_t=n_t)
    data.oscillation = float(np.mean(osc))
    return ok, data


def extremal_data(F: Hamiltonian, x_plus=None, x_minus=None, n_t: int = 65) -> ExtremalData:
    """Linearized generators C(t) = J Hess F at the declared extrema, with
    nondegeneracy flags from the Hessian definiteness."""
    a, b = F.time_interval
    ts = np.linspace(a, b, n_t)
    data = ExtremalData(manifold=F.manifold, times=ts)

    def fill(x, want_negative):
        x = np.asarray(x, dtype=float)
        mats = np.stack([linearized_generator(F, x, t) for t in ts])
        J = np.array([[0.0, 1.0], [-1.0, 0.0]]) if F.manifold.kind == "sphere2" else omega_matrix(F.manifold)
        # recover Hess = -J C (J^2 = -1 in dim 2)
        hessians = np.einsum("ij,njk->nik", -J, mats)
        eigs = np.linalg.eigvalsh(0.5 * (hessians + np.transpose(hessians, (0, 2, 1))))
        if want_negative:
            nondeg = bool(np.all(eigs < -1e-10))
        else:
            nondeg = bool(np.all(eigs > 1e-10))
        return mats, nondeg

    if x_plus is not None:
        data.x_plus = np.asarray(x_plus, dtype=float)
        data.C_plus, data.nondegenerate_plus = fill(x_plus, want_negative=True)
    if x_minus is not None:
        data.x_minus = np.asarray(x_minus, dtype=float)
        data.C_minus, data.nondegenerate_minus = fill(x_minus, want_negative=False)
    return data


# ---------------------------------------------------------------------------
# generators of variations (members of V1)


@dataclass
class SeparableGenerator:
    """G(x, t) = sum_j c_j(t) B_j(x) with antiderivatives C_j, C_j(0) = 0.

    Mean-zero time profiles make G a tangent direction to the space of
    loop Hamiltonians (the endpoint-fixing class V1).
    """

    manifold: ManifoldSpec
    profiles: list  # (c_j(t), C_j(t)) scalar callables, vectorised over t
    fields: list  # B_j: Hamiltonian, autonomous, analytic grad preferred

    def check_v1(self, tol=V1_TOL):
        for c, C in self.profiles:
            total = float(C(1.0)) - float(C(0.0))
            if abs(total) > tol:
                raise GeodesicError(
                    f"generator profile integrates to {total:.2e}, not in V1"
                )

    def eval_rows(self, pts, ts):
        """G at (pts[i], ts[i]) row by row."""
        ts = np.asarray(ts, dtype=float)
        out = np.zeros(np.atleast_2d(pts).shape[0])
        for (c, _), B in zip(self.profiles, self.fields):
            out += np.asarray(c(ts), dtype=float) * B(pts, 0.0)
        return out

    def sgrad_rows(self, pts, ts):
        ts = np.asarray(ts, dtype=float)
        out = None
        for (c, _), B in zip(self.profiles, self.fields):
            term = np.asarray(c(ts), dtype=float)[:, None] * sgrad(B, pts, 0.0)
            out = term if out is None else out + term
        return out

    def k_sgrad_rows(self, pts, ts):
        """sgrad of K_t(x) = int_0^t G(x, s) ds, rows with their own t."""
        ts = np.asarray(ts, dtype=float)
        out = None
        for (_, C), B in zip(self.profiles, self.fields):
            term = np.asarray(C(ts), dtype=float)[:, None] * sgrad(B, pts, 0.0)
            out = term if out is None else out + term
        return out

    def sgrad_at_point(self, x, ts):
        """sgrad G(x, t) for a fixed point x over a time vector."""
        x = np.asarray(x, dtype=float)
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((len(ts), x.shape[-1]))
        for (c, _), B in zip(self.profiles, self.fields):
            out += np.asarray(c(ts), dtype=float)[:, None] * sgrad(B, x[None, :], 0.0)[0]
        return out

    def k_integral_at_point(self, x, ts):
        """int_0^t sgrad G(x, s) ds at a fixed point, exact antiderivatives."""
        x = np.asarray(x, dtype=float)
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((len(ts), x.shape[-1]))
        for (_, C), B in zip(self.profiles, self.fields):
            out += np.asarray(C(ts), dtype=float)[:, None] * sgrad(B, x[None, :], 0.0)[0]
        return out

    def as_hamiltonian(self) -> Hamiltonian:
        def eval_fn(x, t):
            x = np.atleast_2d(x)
            return self.eval_rows(x, np.full(x.shape[0], float(t)))

        return Hamiltonian(
            manifold=self.manifold, eval_fn=eval_fn, autonomous=False, name="v1_generator"
        )


def v1_project(K: Hamiltonian, n_quad: int = 33) -> Hamiltonian:
    """G(x, t) = K(x, t) - int_0^1 K(x, s) ds (Simpson in s)."""
    ss = np.linspace(0.0, 1.0, n_quad)

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        mean = simpson_integrate(np.stack([K(x, s) for s in ss]), 0.0, 1.0)
        return K(x, t) - mean

    return Hamiltonian(
        manifold=K.manifold,
        eval_fn=eval_fn,
        autonomous=False,
        name=f"v1_project({K.name})",
    )


_PROFILE_BASIS = [
    # (c(t), antiderivative C(t) with C(0) = 0)
    (lambda t, k=1: np.cos(2 * np.pi * t), lambda t: np.sin(2 * np.pi * t) / (2 * np.pi)),
    (lambda t: np.sin(2 * np.pi * t), lambda t: (1.0 - np.cos(2 * np.pi * t)) / (2 * np.pi)),
    (lambda t: np.cos(4 * np.pi * t), lambda t: np.sin(4 * np.pi * t) / (4 * np.pi)),
    (lambda t: np.sin(4 * np.pi * t), lambda t: (1.0 - np.cos(4 * np.pi * t)) / (4 * np.pi)),
    (lambda t: t - 0.5, lambda t: 0.5 * t * t - 0.5 * t),
]


def gaussian_field(M: ManifoldSpec, center, sigma, coef) -> Hamiltonian:
    """(a0 + a1 p + a2 q) exp(-|x-c|^2 / 2 sigma^2) with analytic gradient."""
    center = np.asarray(center, dtype=float)
    a0, a1, a2 = coef

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        d = x - center
        e = np.exp(-np.sum(d * d, axis=-1) / (2 * sigma * sigma))
        return (a0 + a1 * x[:, 0] + a2 * x[:, 1]) * e

    def grad_fn(x, t):
        x = np.atleast_2d(x)
        d = x - center
        e = np.exp(-np.sum(d * d, axis=-1) / (2 * sigma * sigma))
        lin = a0 + a1 * x[:, 0] + a2 * x[:, 1]
        g = -(lin * e)[:, None] * d / (sigma * sigma)
        g[:, 0] += a1 * e
        g[:, 1] += a2 * e
        return g

    return Hamiltonian(manifold=M, eval_fn=eval_fn, grad_fn=grad_fn, name="gauss_field")


def torus_trig_field(M: ManifoldSpec, shift, coef) -> Hamiltonian:
    """coef * cos(2 pi (p - a)) cos(2 pi (q - b)) with analytic gradient."""
    a, b = shift
    tp = 2 * np.pi

    def eval_fn(x, t):
        x = np.atleast_2d(x)
        return coef * np.cos(tp * (x[:, 0] - a)) * np.cos(tp * (x[:, 1] - b))

    def grad_fn(x, t):
        x = np.atleast_2d(x)
        cp, sq = np.cos(tp * (x[:, 0] - a)), np.sin(tp * (x[:, 1] - b))
        sp, cq = np.sin(tp * (x[:, 0] - a)), np.cos(tp * (x[:, 1] - b))
        return coef * tp * np.stack([-sp * cq, -cp * sq], axis=-1)

    return Hamiltonian(manifold=M, eval_fn=eval_fn, grad_fn=grad_fn, name="trig_field")


def random_v1_generator(M: ManifoldSpec, seed: int, n_terms: int = 2,
                        scale: float = 1.0) -> SeparableGenerator:
    """Seeded random member of V1 built from the profile basis and smooth
    localized fields."""
    rng = np.random.default_rng(seed)
    profiles, fields = [], []
    for _ in range(n_terms):
        c, C = _PROFILE_BASIS[int(rng.integers(len(_PROFILE_BASIS)))]
        amp = scale * float(rng.uniform(0.4, 1.0)) * (1 if rng.random() < 0.5 else -1)
        profiles.append((lambda t, c=c, a=amp: a * np.asarray(c(t)), lambda t, C=C, a=amp: a * np.asarray(C(t))))
        if M.kind == "torus2":
            fields.append(torus_trig_field(M, rng.uniform(0, 1, 2), 1.0))
        else:
            center = rng.uniform(-0.3, 0.3, 2)
            coef = rng.uniform(-1, 1, 3)
            fields.append(gaussian_field(M, center, float(rng.uniform(0.5, 1.2)), coef))
    gen = SeparableGenerator(manifold=M, profiles=profiles, fields=fields)
    gen.check_v1()
    return gen


# ---------------------------------------------------------------------------
# variations


@dataclass
class Variation:
    """Endpoint-fixing family f_{t,eps} = f_t o h_{t,eps}, where h_{t,eps}
    is the time-eps flow of x -> int_0^t G(x, s) ds."""

    flow: FlowMap
    generator: SeparableGenerator
    extremal: ExtremalData | None = None
    inner_step: float = 2e-3

    def __post_init__(self):
        self.generator.check_v1()
        M = self.flow.hamiltonian.manifold
        if M.kind == "sphere2":
            raise GeodesicError("variation scans run in chart coordinates")

    def h_map(self, ts, eps: float, pts):
        """Rows of h_{t,eps}: flow the i-th point by eps under sgrad K_{t_i}."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        ts = np.asarray(ts, dtype=float)
        if abs(eps) < 1e-15:
            return pts
        n_steps = max(4, int(math.ceil(abs(eps) / self.inner_step)))
        h = eps / n_steps
        field = lambda y: self.generator.k_sgrad_rows(y, ts)
        for _ in range(n_steps):
            k1 = field(pts)
            k2 = field(pts + 0.5 * h * k1)
            k3 = field(pts + 0.5 * h * k2)
            k4 = field(pts + h * k3)
            pts = pts + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return pts

    def flow_rows(self, pts, ts):
        """Rows of f_{t_i}(pts[i]) for the base flow."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ts = np.asarray(ts, dtype=float)
        F = self.flow.hamiltonian
        if self.flow.use_exact and F.exact_flow is not None:
            return F.exact_flow(pts, 0.0, ts)
        # single joint integration over [0, max t], rows frozen at their t
        order = np.argsort(ts)
        out = pts.copy()
        cur = pts[order].copy()
        t_sorted = ts[order]
        t_now = 0.0
        for i, t_target in enumerate(t_sorted):
            if t_target > t_now + 1e-15:
                cur[i:] = integrate_flow(
                    F, cur[i:], t_now, t_target, scheme=self.flow.scheme,
                    step=self.flow.step, store=False,
                )
                t_now = t_target
            out[order[i]] = cur[i]
        return out

    def map(self, ts, eps: float, pts):
        """f_{t,eps} row-wise: the varied path applied to pts."""
        return self.flow_rows(self.h_map(ts, eps, pts), ts)

    def eps_term(self, pts, ts, eps: float, n_quad: int = 9):
        """E(y, t, eps) = int_{-eps}^0 G(phi^u_{K_t} y, t) du: the part of the
        varied generator beyond F itself, evaluated at y = f_t^{-1} x."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ts = np.asarray(ts, dtype=float)
        if abs(eps) < 1e-15:
            return np.zeros(pts.shape[0])
        # Simpson nodes on [-eps, 0], walked incrementally from u = 0
        if n_quad % 2 == 0:
            n_quad += 1
        us = np.linspace(0.0, -eps, n_quad)
        vals = np.empty((n_quad, pts.shape[0]))
        cur = pts.copy()
        vals[0] = self.generator.eval_rows(cur, ts)
        for j in range(1, n_quad):
            cur = self._k_flow(cur, ts, us[j - 1], us[j])
            vals[j] = self.generator.eval_rows(cur, ts)
        integral = simpson_integrate(vals, 0.0, -eps)
        return -integral  # orientation: int_{-eps}^0 = - int_0^{-eps}

    def _k_flow(self, pts, ts, u0, u1):
        n_steps = max(2, int(math.ceil(abs(u1 - u0) / self.inner_step)))
        h = (u1 - u0) / n_steps
        field = lambda y: self.generator.k_sgrad_rows(y, ts)
        cur = pts
        for _ in range(n_steps):
            k1 = field(cur)
            k2 = field(cur + 0.5 * h * k1)
            k3 = field(cur + 0.5 * h * k2)
            k4 = field(cur + h * k3)
            cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return cur

    def base_values(self, xs, ts):
        F = self.flow.hamiltonian
        if F.autonomous:
            return F(xs, 0.0)
        return np.array([F(xs[i : i + 1], ts[i])[0] for i in range(len(ts))])

    def varied_generator_at(self, ys, ts, eps: float):
        """F(x, t, eps) evaluated at x = f_t(y): F(f_t y, t) + E(y, t, eps)."""
        xs = self.flow_rows(ys, ts)
        return self.base_values(xs, ts) + self.eps_term(ys, ts, eps)

    def v_field(self, sign: str, monodromy_steps: int = 800) -> VariationField:
        """v_pm(t) = f_{t*} int_0^t sgrad G(x_pm, s) ds at the fixed extremum."""
        if self.extremal is None:
            raise GeodesicError("variation carries no extremal data")
        x = self.extremal.x_plus if sign == "+" else self.extremal.x_minus
        if x is None:
            raise GeodesicError(f"no {sign} extremum available")
        F = self.flow.hamiltonian
        mono = monodromy(F, x, 1.0, n_steps=monodromy_steps)
        ts = mono.times
        integral = self.generator.k_integral_at_point(x, ts)
        v = np.einsum("nij,nj->ni", mono.matrices, integral)
        v[0] = 0.0
        v[-1] = 0.0
        return VariationField(times=ts, samples=v)

    def endpoint_residual(self, eps_values, probe_pts) -> float:
        """max |f_{1,eps} - f_1| over probes: the loop property of h_{1,eps}."""
        ts = np.ones(len(probe_pts))
        base = self.map(ts, 0.0, probe_pts)
        worst = 0.0
        for eps in eps_values:
            moved = self.map(ts, eps, probe_pts)
            worst = max(worst, float(np.max(np.abs(moved - base))))
        return worst


def build_variation(f: FlowMap, G: SeparableGenerator,
                    extremal: ExtremalData | None = None) -> Variation:
    """Validated variation (G in V1 to 1e-8) of the path integrated by f."""
    return Variation(flow=f, generator=G, extremal=extremal)


# ---------------------------------------------------------------------------
# length profiles


def _track_extremum(var: Variation, ts, eps, seed_pts, sign, radius=5e-2):
    """Warm-started maximisation (sign=+) or minimisation of the varied
    generator over y, batched over the time rows."""
    ys = np.array(seed_pts, dtype=float)
    F = var.flow.hamiltonian

    def target(Y):
        xs = var.flow_rows(Y, ts)
        base = np.empty(len(ts))
        for i, t in enumerate(ts):
            base[i] = F(xs[i : i + 1], t)[0]
        vals = base + var.eps_term(Y, ts, eps)
        return vals if sign > 0 else -vals

    fx = target(ys)
    r = np.full(len(ts), float(radius))
    for _ in range(60):
        improved = np.zeros(len(ts), dtype=bool)
        for axis in range(ys.shape[1]):
            for sgn in (1.0, -1.0):
                cand = ys.copy()
                cand[:, axis] += sgn * r
                fc = target(cand)
                better = fc > fx
                ys[better] = cand[better]
                fx = np.where(better, fc, fx)
                improved |= better
        r = np.where(improved, r, 0.5 * r)
        if np.all(r < 1e-7):
            break
    return ys, (fx if sign > 0 else -fx)


def length_profile(var: Variation, eps_list, n_t: int = 65, drift_tol: float = 0.5):
    """l, l_plus, l_minus over the eps scan.

    l_plus(eps) integrates the tracked maximum of the varied generator,
    l_minus the tracked minimum; l = l_plus - l_minus when both extrema are
    available.  Tracking that wanders further than drift_tol from the
    unvaried extremum flags the run.
    """
    if var.extremal is None:
        raise GeodesicError("length_profile needs extremal data")
    if n_t % 2 == 0:
        n_t += 1
    ts = np.linspace(0.0, 1.0, n_t)
    eps_list = np.asarray(eps_list, dtype=float)
    data = var.extremal
    out = {"eps": eps_list, "flags": []}

    for label, x0, sign in (("plus", data.x_plus, +1), ("minus", data.x_minus, -1)):
        if x0 is None:
            out[f"ell_{label}"] = None
            continue
        profile = np.empty(len(eps_list))
        seeds = np.tile(np.asarray(x0, dtype=float), (n_t, 1))
        # scan outward from eps = 0 so warm starts stay warm
        order = np.argsort(np.abs(eps_list))
        tracked = {0: seeds}
        for idx in order:
            eps = eps_list[idx]
            seed = tracked.get(0) if abs(eps) < 1e-15 else tracked.get(np.sign(eps), seeds)
            ys, vals = _track_extremum(var, ts, eps, seed, sign)
            drift = float(np.max(np.linalg.norm(ys - np.asarray(x0), axis=1)))
            if drift > drift_tol:
                out["flags"].append(
                    f"extremum tracking drifted {drift:.3f} at eps={eps:+.4f} ({label})"
                )
            tracked[np.sign(eps)] = ys
            profile[idx] = simpson_integrate(vals, 0.0, 1.0)
        out[f"ell_{label}"] = profile

    if out["ell_plus"] is not None and out["ell_minus"] is not None:
        out["ell"] = out["ell_plus"] - out["ell_minus"]
    else:
        out["ell"] = None
    return out


def length_profile_second_derivative(var: Variation, sign: str, h: float = 1e-2,
                                     n_t: int = 65, richardson: bool = False):
    """FD^2 of l_plus or l_minus at eps = 0 on the 5-point stencil; with
    ``richardson`` a half-step estimate is returned alongside."""
    eps = np.array([-2 * h, -h, 0.0, h, 2 * h])
    prof = length_profile(var, eps, n_t=n_t)
    key = f"ell_{'plus' if sign == '+' else 'minus'}"
    if prof[key] is None:
        raise GeodesicError(f"no {sign} extremum to differentiate")
    d2 = fd_second_derivative(prof[key], h)
    if not richardson:
        return d2
    prof2 = length_profile(var, eps / 2.0, n_t=n_t)
    return d2, fd_second_derivative(prof2[key], h / 2.0)


# ---------------------------------------------------------------------------
# second variation and conjugate points


def second_variation_Q(extremal: ExtremalData, sign: str, v: VariationField) -> float:
    """Q_pm(v) = - int_0^1 ( Omega(C^{-1} vdot, vdot) + Omega(vdot, v) ) dt."""
    C = extremal.C_plus if sign == "+" else extremal.C_minus
    x = extremal.x_plus if sign == "+" else extremal.x_minus
    if C is None or x is None:
        raise GeodesicError(f"no {sign} extremal data")
    ts = v.times
    if len(ts) != len(extremal.times) or abs(ts[0] - extremal.times[0]) > 1e-12:
        # resample C(t) onto the field's grid
        C = np.stack(
            [
                [np.interp(ts, extremal.times, C[:, i, j]) for j in range(2)]
                for i in range(2)
            ],
            axis=0,
        ).transpose(2, 0, 1)
    dets = np.abs(np.linalg.det(C))
    if np.min(dets) < 1e-12:
        raise GeodesicError("singular linearized generator C(t)")
    vd = v.derivative()
    Cinv_vd = np.einsum("nij,nj->ni", np.linalg.inv(C), vd)

    def omega(a, b):
        return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]

    integrand = omega(Cinv_vd, vd) + omega(vd, v.samples)
    return -float(simpson_integrate(integrand, 0.0, 1.0))


def conjugate_point_scan(F: Hamiltonian, extremal_point, T_grid,
                         touch_tol: float = 1e-6, n_steps: int = 4000):
    """Parameters T with det(M(T) - I) = 0 for the linearized flow at a
    fixed extremum: sign-change brackets refined by bisection, plus
    tangential zeros located as touching minima.

    Returns a list of dicts {T, det, kernel}; a determinant that is ~0 on a
    large fraction of the grid flags the scan as degenerate instead.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    T_max = float(np.max(T_grid))
    mono = monodromy(F, extremal_point, T_max, n_steps=n_steps)
    dim = mono.matrices.shape[1]
    eye = np.eye(dim)
    dets_dense = np.linalg.det(mono.matrices - eye)
    scale = max(1.0, float(np.max(np.abs(dets_dense))))

    if np.mean(np.abs(dets_dense) < touch_tol * scale) > 0.2:
        raise GeodesicError("determinant nearly vanishes on the whole grid; "
                            "degenerate case, no roots claimed")

    def det_at(T):
        idx = int(np.argmin(np.abs(mono.times - T)))
        base_t = mono.times[idx]
        Mmat = mono.matrices[idx]
        if abs(T - base_t) > 1e-15:
            x = mono.base_point
            h = (T - base_t) / 4.0
            for k in range(4):
                t = base_t + k * h

                def rhs(Mm, tt):
                    return linearized_generator(F, x, tt) @ Mm

                k1 = rhs(Mmat, t)
                k2 = rhs(Mmat + 0.5 * h * k1, t + 0.5 * h)
                k3 = rhs(Mmat + 0.5 * h * k2, t + 0.5 * h)
                k4 = rhs(Mmat + h * k3, t + h)
                Mmat = Mmat + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return float(np.linalg.det(Mmat - eye)), Mmat

    # restrict the dense samples to the requested scan window
    lo, hi = float(np.min(T_grid)), T_max
    mask = (mono.times >= lo - 1e-12) & (mono.times > 1e-12)
    ts = mono.times[mask]
    ds = dets_dense[mask]

    roots = []

    def add_root(T):
        d, Mm = det_at(T)
        u, s, vt = np.linalg.svd(Mm - eye)
        roots.append({"T": float(T), "det": d, "kernel": vt[-1]})

    # sign changes -> bisection
    sign_change = np.where(np.sign(ds[:-1]) * np.sign(ds[1:]) < 0)[0]
    for i in sign_change:
        a, b = ts[i], ts[i + 1]
        fa, _ = det_at(a)
        for _ in range(60):
            m = 0.5 * (a + b)
            fm, _ = det_at(m)
            if fa * fm <= 0:
                b = m
            else:
                a, fa = m, fm
            if b - a < 1e-9:
                break
        add_root(0.5 * (a + b))

    # touching minima of |det|
    absds = np.abs(ds)
    for i in range(1, len(ts) - 1):
        if absds[i] <= absds[i - 1] and absds[i] <= absds[i + 1]:
            if any(abs(r["T"] - ts[i]) < 5 * (ts[1] - ts[0]) for r in roots):
                continue
            a, b = ts[i - 1], ts[i + 1]
            for _ in range(80):
                m1 = a + (b - a) / 3.0
                m2 = b - (b - a) / 3.0
                f1 = abs(det_at(m1)[0])
                f2 = abs(det_at(m2)[0])
                if f1 < f2:
                    b = m2
                else:
                    a = m1
                if b - a < 1e-8:
                    break
            T = 0.5 * (a + b)
            val = abs(det_at(T)[0])
            if val <= touch_tol * scale:
                add_root(T)
    # endpoint touch (e.g. a zero exactly at the right edge of the window)
    if absds[-1] <= touch_tol * scale and not any(
        abs(r["T"] - ts[-1]) < 1e-6 for r in roots
    ):
        add_root(ts[-1])

    roots.sort(key=lambda r: r["T"])
    return roots


# ---------------------------------------------------------------------------
# the endpoint-average identity of varied generators


def variation_epsilon_integral(var: Variation, x, eps: float = 0.0,
                               h: float = 1e-3, n_t: int = 129) -> float:
    """int_0^1 dF/deps (f_{t,eps} x, t, eps) dt, central differences in eps.

    Vanishes for genuine endpoint-fixing variations; the numerical value is
    a whole-pipeline residual.
    """
    if n_t % 2 == 0:
        n_t += 1
    ts = np.linspace(0.0, 1.0, n_t)
    pts = np.tile(np.asarray(x, dtype=float), (n_t, 1))

    def sampled(e):
        ys = var.h_map(ts, e, pts)
        return var.varied_generator_at(ys, ts, e)

    vals = (sampled(eps + h) - sampled(eps - h)) / (2.0 * h)
    return float(simpson_integrate(vals, 0.0, 1.0))

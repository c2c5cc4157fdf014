"""Model phase spaces with their symplectic forms, grids, and quadrature.

Supported manifolds:

* ``euclidean(n)`` -- R^{2n} with coordinates (p_1..p_n, q_1..q_n) and
  omega = sum dp_j ^ dq_j;
* ``torus2`` -- R^2/Z^2 with dp ^ dq (total area 1);
* ``sphere2`` -- unit sphere in R^3 with area_scale times the induced area
  form (total area 4*pi*area_scale; area_scale = 1/(4*pi) gives total area 1);
* ``cylinder`` -- R(p) x S^1(q) with dp ^ dq.

Sphere tangent vectors live in ambient R^3, orthogonal to the base point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPHERE_TANGENT_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldSpec:
    """One of the model phase spaces."""

    kind: str  # euclidean | torus2 | sphere2 | cylinder
    dim: int = 2
    area_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus2", "sphere2", "cylinder"):
            raise GeometryError(f"unknown manifold kind {self.kind!r}")
        if self.kind != "euclidean" and self.dim != 2:
            raise GeometryError(f"{self.kind} has dim 2, got {self.dim}")
        if self.dim % 2:
            raise GeometryError("dim must be even")
        if self.area_scale <= 0:
            raise GeometryError("area_scale must be positive")

    @property
    def closed(self) -> bool:
        return self.kind in ("torus2", "sphere2")

    @property
    def n_coords(self) -> int:
        # points on the sphere carry 3 ambient coordinates
        return 3 if self.kind == "sphere2" else self.dim

    def total_area(self) -> float:
        if self.kind == "torus2":
            return 1.0
        if self.kind == "sphere2":
            return 4.0 * math.pi * self.area_scale
        raise GeometryError(f"{self.kind} has infinite volume")

    def wrap(self, x):
        """Reduce chart coordinates modulo the lattice where applicable."""
        x = np.asarray(x, dtype=float)
        if self.kind == "torus2":
            return np.mod(x, 1.0)
        if self.kind == "cylinder":
            out = x.copy()
            out[..., 1] = np.mod(out[..., 1], 1.0)
            return out
        return x

    def distance(self, x, y):
        """Pointwise distance between (...,d) arrays of points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "sphere2":
            dots = np.clip(np.sum(x * y, axis=-1), -1.0, 1.0)
            return np.arccos(dots)
        diff = x - y
        if self.kind == "torus2":
            diff = diff - np.round(diff)
        elif self.kind == "cylinder":
            diff = diff.copy()
            diff[..., 1] -= np.round(diff[..., 1])
        return np.linalg.norm(diff, axis=-1)


def euclidean(n: int) -> ManifoldSpec:
    return ManifoldSpec("euclidean", dim=2 * n)


def torus2() -> ManifoldSpec:
    return ManifoldSpec("torus2")


def sphere2(area_scale: float = 1.0) -> ManifoldSpec:
    return ManifoldSpec("sphere2", area_scale=area_scale)


def normalized_sphere2() -> ManifoldSpec:
    """Sphere rescaled so the total symplectic area is 1."""
    return ManifoldSpec("sphere2", area_scale=1.0 / (4.0 * math.pi))


def cylinder() -> ManifoldSpec:
    return ManifoldSpec("cylinder")


@dataclass
class Grid:
    """Finite sample of a region with quadrature weights."""

    points: np.ndarray  # (N, n_coords)
    weights: np.ndarray  # (N,)
    resolution: int
    manifold: ManifoldSpec
    region: np.ndarray | None = None  # (d, 2) box in chart coordinates

    def total_weight(self) -> float:
        return float(np.sum(self.weights))


def omega_matrix(M: ManifoldSpec) -> np.ndarray:
    """Matrix of the symplectic form in chart coordinates (not sphere)."""
    if M.kind == "sphere2":
        raise GeometryError("sphere2 has no global chart; use omega_eval")
    n = M.dim // 2
    J = np.zeros((M.dim, M.dim))
    # coordinates ordered (p_1..p_n, q_1..q_n); omega(xi, eta) = xi^T J eta
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


def omega_eval(M: ManifoldSpec, x, xi, eta) -> float:
    """Value of the symplectic form on two tangent vectors at x.

    On the sphere the vectors must be ambient and orthogonal to x within
    1e-9; the form is area_scale * <eta, cross(x, xi)>.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if M.kind == "sphere2":
        for v, name in ((xi, "xi"), (eta, "eta")):
            resid = abs(float(np.dot(x, v)))
            if resid > SPHERE_TANGENT_TOL:
                raise GeometryError(
                    f"{name} is not tangent at x: normal residual {resid:.3e}"
                )
        return M.area_scale * float(np.dot(eta, np.cross(x, xi)))
    J = omega_matrix(M)
    return float(xi @ J @ eta)


def omega_eval_batch(M: ManifoldSpec, x, xi, eta) -> np.ndarray:
    """Vectorised omega over matching (..., d) arrays; sphere vectors are
    projected to the tangent plane (no tolerance check)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if M.kind == "sphere2":
        xi_t = xi - np.sum(xi * x, axis=-1, keepdims=True) * x
        eta_t = eta - np.sum(eta * x, axis=-1, keepdims=True) * x
        return M.area_scale * np.sum(eta_t * np.cross(x, xi_t), axis=-1)
    J = omega_matrix(M)
    return np.einsum("...i,ij,...j->...", xi, J, eta)


def sphere_tangent_project(x, v):
    """Project ambient vectors v to the tangent planes at unit points x."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - np.sum(v * x, axis=-1, keepdims=True) * x


def sphere_tangent_basis(x):
    """Deterministic orthonormal tangent basis (e1, e2) at a unit point x."""
    x = np.asarray(x, dtype=float)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(x[2]) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(x, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(x, e1)
    return e1, e2


# ---------------------------------------------------------------------------
# grids


def _icosahedron_vertices():
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            verts.append((0.0, a, b))
            verts.append((a, b, 0.0))
            verts.append((b, 0.0, a))
    v = np.array(verts)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _icosahedron_faces(verts):
    # faces = vertex triples at minimal pairwise distance (edge length)
    d = np.linalg.norm(verts[:, None, :] - verts[None, :, :], axis=-1)
    edge = np.min(d[d > 1e-12])
    faces = []
    nv = len(verts)
    for i in range(nv):
        for j in range(i + 1, nv):
            if abs(d[i, j] - edge) > 1e-9:
                continue
            for k in range(j + 1, nv):
                if abs(d[i, k] - edge) < 1e-9 and abs(d[j, k] - edge) < 1e-9:
                    faces.append((i, j, k))
    assert len(faces) == 20
    return faces


def icosahedral_sphere_grid(level: int):
    """Triangulated sphere: `level` loop subdivisions of the icosahedron.

    Returns (centroids on the sphere, spherical-triangle-count); points are
    projected face centroids in a deterministic order.
    """
    verts = _icosahedron_vertices()
    tris = [verts[list(f)] for f in _icosahedron_faces(verts)]
    for _ in range(level):
        new = []
        for tri in tris:
            a, b, c = tri
            ab = (a + b) / 2.0
            bc = (b + c) / 2.0
            ca = (c + a) / 2.0
            ab /= np.linalg.norm(ab)
            bc /= np.linalg.norm(bc)
            ca /= np.linalg.norm(ca)
            new.extend(
                [
                    np.array([a, ab, ca]),
                    np.array([ab, b, bc]),
                    np.array([ca, bc, c]),
                    np.array([ab, bc, ca]),
                ]
            )
        tris = new
    centroids = np.array([t.mean(axis=0) for t in tris])
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    order = np.lexsort((centroids[:, 0], centroids[:, 1], centroids[:, 2]))
    return centroids[order], len(tris)


def _sphere_level(resolution: int) -> int:
    # roughly resolution^2 sample points: 20 * 4^L faces
    return max(0, int(round(math.log2(max(resolution, 4) / 4.0))))


def sample_grid(M: ManifoldSpec, resolution: int, region=None) -> Grid:
    """Uniform grid on chart manifolds; icosahedral sampling on the sphere.

    * torus2: resolution^2 cell centers, weights 1/resolution^2;
    * cylinder/euclidean: cell centers of the region box (required for
      unbounded directions; cylinder default p in [-1, 1]);
    * sphere2: projected face centroids of the subdivided icosahedron with
      equal weights summing to the total symplectic area.
    """
    if resolution < 4:
        raise GeometryError("resolution must be >= 4")

    if M.kind == "sphere2":
        pts, nfaces = icosahedral_sphere_grid(_sphere_level(resolution))
        w = np.full(len(pts), M.total_area() / nfaces)
        return Grid(points=pts, weights=w, resolution=resolution, manifold=M)

    if M.kind == "torus2":
        if region is not None:
            region = np.asarray(region, dtype=float)
            if np.any(region < -1e-12) or np.any(region > 1.0 + 1e-12):
                raise GeometryError("region outside the unit chart of torus2")
        box = np.array([[0.0, 1.0], [0.0, 1.0]]) if region is None else region
    elif M.kind == "cylinder":
        box = (
            np.array([[-1.0, 1.0], [0.0, 1.0]])
            if region is None
            else np.asarray(region, dtype=float)
        )
        if box[1, 0] < -1e-12 or box[1, 1] > 1.0 + 1e-12:
            raise GeometryError("cylinder q-range must sit inside [0, 1]")
    else:
        if region is None:
            raise GeometryError("euclidean grids need an explicit region box")
        box = np.asarray(region, dtype=float)

    d = M.dim
    if box.shape != (d, 2):
        raise GeometryError(f"region must be a ({d}, 2) box")
    axes = []
    for lo, hi in box:
        if not hi > lo:
            raise GeometryError("degenerate region box")
        step = (hi - lo) / resolution
        axes.append(lo + step * (np.arange(resolution) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    vol = float(np.prod(box[:, 1] - box[:, 0]))
    w = np.full(len(pts), vol / len(pts))
    return Grid(
        points=pts, weights=w, resolution=resolution, manifold=M, region=box
    )


def mean_value(M: ManifoldSpec, F, g: Grid) -> float:
    """Quadrature mean of a scalar field on a closed manifold."""
    if not M.closed:
        raise GeometryError(
            "mean_value asks for a closed manifold; open manifolds are "
            "normalized by compact support instead"
        )
    vals = np.asarray(F(g.points), dtype=float)
    return float(np.sum(g.weights * vals) / np.sum(g.weights))

"""Closed test manifolds: circle, ellipse and round 2-sphere.

Points are given in chart coordinates.  Curves use the arc-length parameter
``s`` (floats or arrays of floats); the sphere uses ``(theta, phi)`` pairs,
colatitude first, stored in the last axis of an array.  Everything is
vectorised over leading axes.

Each model also knows its ambient space.  ``ambient="euclidean"`` embeds the
curve in R^2 and the sphere in R^3; ``ambient="self"`` treats the manifold as
its own ambient space (identity embedding), which is what the restricted heat
kernel of the manifold itself needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ellipeinc, ellipe, roots_legendre

TWO_PI = 2.0 * np.pi
AMBIENTS = ("euclidean", "self")


class GuardError(ValueError):
    """A query left the injectivity range where the unique-geodesic picture holds."""


@dataclass(frozen=True)
class CurvatureData:
    scal_L: np.ndarray | float
    tau_sq: np.ndarray | float
    rbar: np.ndarray | float
    ricbar: np.ndarray | float
    scal_M: np.ndarray | float


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    spacing: float

    @property
    def node_count(self) -> int:
        return len(self.weights)


class ManifoldModel:
    name: str
    intrinsic_dim: int
    homogeneous: bool = False

    def __init__(self, ambient: str = "euclidean"):
        if ambient not in AMBIENTS:
            raise ValueError(f"unknown ambient {ambient!r}")
        self.ambient = ambient

    @property
    def ambient_dim(self) -> int:
        if self.ambient == "self":
            return self.intrinsic_dim
        return self.intrinsic_dim + 1

    def ambient_distance(self, x, y):
        if self.ambient == "self":
            return self.geodesic_distance(x, y)
        return np.linalg.norm(self.embed(x) - self.embed(y), axis=-1)

    def spec(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.spec().items())
        return f"{type(self).__name__}({args})"


class _Curve(ManifoldModel):
    intrinsic_dim = 1

    @property
    def perimeter(self) -> float:
        raise NotImplementedError

    @property
    def total_volume(self) -> float:
        return self.perimeter

    def reduce(self, s):
        return np.mod(s, self.perimeter)

    def signed_arc(self, x, y):
        """Shortest signed arc from ``x`` to ``y``, in ``[-P/2, P/2)``; ties go negative."""
        p = self.perimeter
        return np.mod(np.asarray(y, float) - np.asarray(x, float) + 0.5 * p, p) - 0.5 * p

    def geodesic_distance(self, x, y):
        d = np.abs(np.mod(np.asarray(x, float) - np.asarray(y, float), self.perimeter))
        return np.minimum(d, self.perimeter - d)

    def move(self, x, direction, s):
        return self.reduce(np.asarray(x, float) + np.sign(direction) * s)

    def build_quadrature(self, resolution: int) -> QuadratureGrid:
        if resolution < 16:
            raise ValueError("resolution must be >= 16")
        h = self.perimeter / resolution
        nodes = h * np.arange(resolution)
        return QuadratureGrid(nodes, np.full(resolution, h), h)

    def grid_spacing(self, resolution: int) -> float:
        return self.perimeter / resolution

    def injectivity_guard(self) -> float:
        return self.perimeter / 4.0


class Circle(_Curve):
    name = "circle"
    homogeneous = True

    def __init__(self, radius: float = 1.0, ambient: str = "euclidean"):
        super().__init__(ambient)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def spec(self):
        return {"kind": "circle", "radius": self.radius, "ambient": self.ambient}

    @property
    def perimeter(self):
        return TWO_PI * self.radius

    def embed(self, s):
        u = np.asarray(s, float) / self.radius
        return self.radius * np.stack([np.cos(u), np.sin(u)], axis=-1)

    def ambient_distance(self, x, y):
        if self.ambient == "self":
            return self.geodesic_distance(x, y)
        d = self.geodesic_distance(x, y)
        return 2.0 * self.radius * np.sin(d / (2.0 * self.radius))

    def curvature_at(self, s) -> CurvatureData:
        shape = np.shape(s)
        zero = np.zeros(shape)
        tau = zero if self.ambient == "self" else np.full(shape, 1.0 / self.radius**2)
        return CurvatureData(zero, tau, zero, zero, zero)


class Ellipse(_Curve):
    """Ellipse ``(a cos u, b sin u)``, ``a >= b``, parametrised by arc length from ``(a, 0)``."""

    name = "ellipse"
    TABLE_SIZE = 4096

    def __init__(self, semi_axis_a: float = 1.0, semi_axis_b: float = 0.5,
                 ambient: str = "euclidean"):
        if ambient != "euclidean":
            raise ValueError("the ellipse is only modelled inside the Euclidean plane")
        super().__init__(ambient)
        if not semi_axis_a >= semi_axis_b > 0:
            raise ValueError("need semi_axis_a >= semi_axis_b > 0")
        self.a = float(semi_axis_a)
        self.b = float(semi_axis_b)
        self._m = 1.0 - (self.b / self.a) ** 2

    def spec(self):
        return {"kind": "ellipse", "semi_axis_a": self.a, "semi_axis_b": self.b,
                "ambient": self.ambient}

    @cached_property
    def perimeter(self):
        return 4.0 * self.a * float(ellipe(self._m))

    def arc_of_angle(self, u):
        """Arc length from the major vertex to parameter angle ``u``."""
        u = np.asarray(u, float)
        quarter = self.a * ellipe(self._m)
        return self.a * ellipeinc(u - np.pi / 2, self._m) + quarter

    def _speed(self, u):
        return np.sqrt((self.a * np.sin(u)) ** 2 + (self.b * np.cos(u)) ** 2)

    @cached_property
    def _table(self):
        u = np.linspace(0.0, TWO_PI, self.TABLE_SIZE + 1)
        s = self.arc_of_angle(u)
        s[-1] = self.perimeter
        return PchipInterpolator(s, u)

    def angle_of_arc(self, s):
        """Invert the arc-length map: monotone-table initial guess, then two Newton steps."""
        s = self.reduce(np.asarray(s, float))
        u = self._table(s)
        for _ in range(2):
            u = u - (self.arc_of_angle(u) - s) / self._speed(u)
        return u

    def embed(self, s):
        u = self.angle_of_arc(s)
        return np.stack([self.a * np.cos(u), self.b * np.sin(u)], axis=-1)

    def curvature(self, s):
        u = self.angle_of_arc(s)
        return self.a * self.b / self._speed(u) ** 3

    def curvature_at(self, s) -> CurvatureData:
        kappa = self.curvature(s)
        zero = np.zeros(np.shape(kappa))
        return CurvatureData(zero, kappa**2, zero, zero, zero)


class Sphere2(ManifoldModel):
    name = "sphere2"
    intrinsic_dim = 2
    homogeneous = True

    def __init__(self, radius: float = 1.0, ambient: str = "euclidean"):
        super().__init__(ambient)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def spec(self):
        return {"kind": "sphere2", "radius": self.radius, "ambient": self.ambient}

    @property
    def total_volume(self):
        return 2.0 * TWO_PI * self.radius**2

    def reduce(self, x):
        """Normalise chart coordinates to ``theta in [0, pi]``, ``phi in [0, 2 pi)``."""
        return self.chart(self.unit(x))

    @staticmethod
    def unit(x):
        x = np.asarray(x, float)
        th, ph = x[..., 0], x[..., 1]
        st = np.sin(th)
        return np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)

    @staticmethod
    def chart(v):
        v = np.asarray(v, float)
        rho = np.hypot(v[..., 0], v[..., 1])
        th = np.arctan2(rho, v[..., 2])
        ph = np.mod(np.arctan2(v[..., 1], v[..., 0]), TWO_PI)
        return np.stack([th, ph], axis=-1)

    @staticmethod
    def frame(x):
        """Orthonormal tangent frame ``(e_theta, e_phi)`` at chart points ``x``."""
        x = np.asarray(x, float)
        th, ph = x[..., 0], x[..., 1]
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
        return e_th, e_ph

    def embed(self, x):
        return self.radius * self.unit(x)

    @staticmethod
    def angle_between(u, v):
        """Angle between unit vectors; ``atan2`` keeps full precision near 0 and pi."""
        cross = np.linalg.norm(np.cross(u, v), axis=-1)
        dot = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
        return np.arctan2(cross, dot)

    def geodesic_distance(self, x, y):
        return self.radius * self.angle_between(self.unit(x), self.unit(y))

    def ambient_distance(self, x, y):
        if self.ambient == "self":
            return self.geodesic_distance(x, y)
        return self.radius * np.linalg.norm(self.unit(x) - self.unit(y), axis=-1)

    def curvature_at(self, x) -> CurvatureData:
        shape = np.shape(x)[:-1]
        k = 1.0 / self.radius**2
        scal = np.full(shape, 2.0 * k)
        if self.ambient == "self":
            # identity embedding: totally geodesic, partial traces are full traces
            return CurvatureData(scal, np.zeros(shape), scal, scal, scal)
        zero = np.zeros(shape)
        return CurvatureData(scal, np.full(shape, 4.0 * k), zero, zero, zero)

    def move(self, x, direction, s):
        """Endpoint of the unit-speed geodesic of length ``s`` leaving ``x`` along ``direction``.

        ``direction`` is either a bearing angle measured from ``e_theta``
        towards ``e_phi`` or an ambient 3-vector, projected to the tangent plane.
        """
        u = self.unit(x)
        d = self._tangent(x, direction)
        a = np.asarray(s, float)[..., None] / self.radius
        return self.chart(np.cos(a) * u + np.sin(a) * d)

    def _tangent(self, x, direction):
        e_th, e_ph = self.frame(x)
        direction = np.asarray(direction, float)
        if direction.shape[-1:] == (3,):
            u = self.unit(x)
            d = direction - np.sum(direction * u, axis=-1, keepdims=True) * u
        else:
            psi = direction[..., None]
            d = np.cos(psi) * e_th + np.sin(psi) * e_ph
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def build_quadrature(self, resolution: int) -> QuadratureGrid:
        """Gauss-Legendre in ``cos(theta)`` times a uniform ``phi`` grid of twice the size."""
        if resolution < 16:
            raise ValueError("resolution must be >= 16")
        u, w = roots_legendre(resolution)
        nphi = 2 * resolution
        phi = TWO_PI * np.arange(nphi) / nphi
        th = np.arccos(u)
        nodes = np.stack(np.meshgrid(th, phi, indexing="ij"), axis=-1).reshape(-1, 2)
        weights = np.outer(w * self.radius**2, np.full(nphi, TWO_PI / nphi)).ravel()
        return QuadratureGrid(nodes, weights, self.grid_spacing(resolution))

    def grid_spacing(self, resolution: int) -> float:
        return np.pi * self.radius / resolution

    def injectivity_guard(self) -> float:
        return np.pi * self.radius / 2.0


def make_manifold(spec: dict) -> ManifoldModel:
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "circle":
        return Circle(**spec)
    if kind == "ellipse":
        return Ellipse(**spec)
    if kind == "sphere2":
        return Sphere2(**spec)
    raise ValueError(f"unknown manifold kind {kind!r}")


def geodesic_distance(mf: ManifoldModel, x, y):
    return mf.geodesic_distance(x, y)


def ambient_distance(mf: ManifoldModel, x, y):
    return mf.ambient_distance(x, y)


def embed(mf: ManifoldModel, x):
    return mf.embed(x)


def curvature_at(mf: ManifoldModel, x) -> CurvatureData:
    return mf.curvature_at(x)


def build_quadrature(mf: ManifoldModel, resolution: int) -> QuadratureGrid:
    return mf.build_quadrature(resolution)


def chord_arc_defect(mf: ManifoldModel, x, direction, s: float) -> float:
    """``(d_M**2 - d_L**2) / d_L**4`` for the geodesic endpoint at arc distance ``s``."""
    guard = mf.injectivity_guard()
    if not 0.0 < s < guard:
        raise GuardError(f"s={s} outside (0, {guard})")
    y = mf.move(x, direction, s)
    d_m = mf.ambient_distance(x, y)
    return (d_m**2 - s**2) / s**4

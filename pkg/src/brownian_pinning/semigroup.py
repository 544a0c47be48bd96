"""Kernel operators applied by quadrature, their products over partitions, and short-time residuals."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import lpmv

from .geometry import Circle, Ellipse, ManifoldModel, QuadratureGrid, Sphere2
from .kernels import (KernelFamily, adequate_resolution, check_grid, kernel_value,
                      normalization_exponent, rescaling_exponent)

ROW_CHUNK = 128


@dataclass(frozen=True)
class TestFunction:
    id: str
    evaluator: Callable[[np.ndarray], np.ndarray]
    laplacian_evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = None

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.evaluator(x)

    def laplacian(self, x):
        if self.laplacian_evaluator is None:
            raise ValueError(f"{self.id} has no closed-form Laplacian")
        return self.laplacian_evaluator(x)


def circle_mode(mf: Circle, k: int) -> TestFunction:
    r = mf.radius
    return TestFunction(f"circle_mode({k})",
                        lambda s: np.cos(k * np.asarray(s, float) / r),
                        lambda s: -((k / r) ** 2) * np.cos(k * np.asarray(s, float) / r))


def ellipse_mode(mf: Ellipse, k: int) -> TestFunction:
    w = 2.0 * np.pi * k / mf.perimeter
    return TestFunction(f"ellipse_mode({k})",
                        lambda s: np.cos(w * np.asarray(s, float)),
                        lambda s: -(w**2) * np.cos(w * np.asarray(s, float)))


def curve_mode(mf: ManifoldModel, k: int) -> TestFunction:
    return circle_mode(mf, k) if isinstance(mf, Circle) else ellipse_mode(mf, k)


def sphere_harmonic(mf: Sphere2, ell: int, m: int = 0) -> TestFunction:
    """Real spherical harmonic ``P_l^|m|(cos theta) * cos(m phi)`` (unnormalised)."""
    if abs(m) > ell:
        raise ValueError("need |m| <= l")
    lam = -ell * (ell + 1) / mf.radius**2

    def f(x):
        x = np.asarray(x, float)
        return lpmv(abs(m), ell, np.cos(x[..., 0])) * np.cos(m * x[..., 1])

    return TestFunction(f"sphere_harmonic({ell},{m})", f, lambda x: lam * f(x))


def bump(mf: ManifoldModel, center, width: float) -> TestFunction:
    def f(x):
        d = mf.geodesic_distance(center, x)
        return np.exp(-0.5 * (d / width) ** 2)

    return TestFunction(f"bump(width={width})", f)


@dataclass(frozen=True)
class ChernoffReport:
    t_grid: np.ndarray
    residual_sup: np.ndarray
    fitted_order: float


def _values(f, nodes):
    if isinstance(f, TestFunction):
        return np.asarray(f(nodes), float)
    return np.asarray(f, float)


def operator_rows(fam: KernelFamily, mf: ManifoldModel, t: float, x_nodes, grid: QuadratureGrid,
                  threads: int = 1) -> np.ndarray:
    """Weighted operator matrix ``rows[i, j] = w_j * q(x_i, y_j)`` with the normalisation applied."""
    check_grid(grid, t)
    x_nodes = np.asarray(x_nodes, float)
    n = len(x_nodes)

    def chunk(i0):
        xs = x_nodes[i0:i0 + ROW_CHUNK]
        k = kernel_value(fam, mf, t, xs[:, None, ...] if xs.ndim > 1 else xs[:, None],
                         grid.nodes[None, ...]) * grid.weights
        if fam.normalization == "markov_T":
            k = k / k.sum(axis=1, keepdims=True)
        elif fam.normalization == "rescaled_B":
            k = k * np.exp(t * np.asarray(rescaling_exponent(fam.kind, mf, xs)))[:, None]
        return k

    starts = range(0, n, ROW_CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(i) for i in starts]
    return np.concatenate(parts, axis=0)


def apply_operator(fam: KernelFamily, mf: ManifoldModel, t: float, f, grid: QuadratureGrid,
                   x_nodes=None, threads: int = 1) -> np.ndarray:
    """``S(t) f`` at ``x_nodes`` (default: the grid nodes), as a quadrature sum.

    ``f`` is a :class:`TestFunction` or an array of values on the grid nodes.
    ``global_sigma`` acts like ``raw_S`` on a single step.
    """
    if x_nodes is None:
        x_nodes = grid.nodes
    fv = _values(f, grid.nodes)
    rows = operator_rows(fam, mf, t, x_nodes, grid, threads)
    return (rows * fv).sum(axis=1)


def chernoff_product(fam: KernelFamily, mf: ManifoldModel, partition, f, grid: QuadratureGrid,
                     threads: int = 1) -> np.ndarray:
    """``S(t_1) S(t_2) ... S(t_r) f`` on the grid nodes; the rightmost factor acts first."""
    increments = np.diff(partition.times)
    for dt in increments:
        check_grid(grid, dt)
    cache: dict[float, np.ndarray] = {}
    g = _values(f, grid.nodes)
    for dt in increments[::-1]:
        key = float(dt)
        if key not in cache:
            cache[key] = operator_rows(fam, mf, key, grid.nodes, grid, threads)
        g = (cache[key] * g).sum(axis=1)
    return g


def mass_exponent(fam: KernelFamily, mf: ManifoldModel, x):
    """Zeroth-order coefficient of ``(S(t) f - f) / t`` as ``t -> 0``.

    ``E`` for the raw kernel; zero once the mass is divided out (``markov_T``)
    or rescaled away (``rescaled_B``).
    """
    if fam.normalization in ("markov_T", "rescaled_B"):
        return np.zeros(np.shape(mf.curvature_at(x).scal_L))
    return normalization_exponent(fam.kind, mf, x)


def fit_order(t, r, trim: bool = True) -> float:
    """Least-squares slope of ``log r`` against ``log t``; drops both ends when ``trim``."""
    t = np.asarray(t, float)
    r = np.asarray(r, float)
    if trim and len(t) >= 5:
        t, r = t[1:-1], r[1:-1]
    return float(np.polyfit(np.log(t), np.log(r), 1)[0])


def probe_nodes(mf: ManifoldModel, count: int = 64) -> np.ndarray:
    """Deterministic evaluation points for residual sups."""
    if isinstance(mf, Sphere2):
        th = np.arccos(1.0 - 2.0 * (np.arange(count) + 0.5) / count)
        ph = np.mod(np.arange(count) * np.pi * (3.0 - np.sqrt(5.0)), 2.0 * np.pi)
        return np.stack([th, ph], axis=-1)
    return mf.perimeter * (np.arange(count) + 0.5) / count


def chernoff_residual(fam: KernelFamily, mf: ManifoldModel, f: TestFunction, t_grid,
                      grid: QuadratureGrid | None = None, probes: int = 64,
                      threads: int = 1) -> ChernoffReport:
    """Sup over probe points of ``|(S(t) f - f)/t - (c f + Delta f / 2)|`` for each ``t``.

    ``c`` is :func:`mass_exponent`.  Without an explicit grid, each ``t`` gets
    the coarsest adequate one.
    """
    t_grid = np.asarray(sorted(t_grid), float)
    x = probe_nodes(mf, probes)
    fx = f(x)
    target = np.asarray(mass_exponent(fam, mf, x)) * fx + 0.5 * f.laplacian(x)
    res = []
    for t in t_grid:
        g = grid if grid is not None else mf.build_quadrature(adequate_resolution(mf, t))
        sf = apply_operator(fam, mf, t, f, g, x_nodes=x, threads=threads)
        res.append(float(np.max(np.abs((sf - fx) / t - target))))
    res = np.asarray(res)
    return ChernoffReport(t_grid, res, fit_order(t_grid, res))

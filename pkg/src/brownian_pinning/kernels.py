"""One-step kernels ``q_t(x, y)`` on the test manifolds and their total masses.

Three kinds are provided:

``intrinsic_gauss``
    ``(2 pi t)**(-l/2) * exp(-d_L(x, y)**2 / 2t)``
``ambient_gauss``
    the same with the ambient (chordal) distance ``d_M``
``heat_restricted``
    ``(2 pi t)**((m - l)/2) * p_t^M(x, y)`` with ``p_t^M`` the heat kernel of the
    ambient space.  For a Euclidean ambient this coincides with
    ``ambient_gauss``; for ``ambient="self"`` it is the heat kernel of the
    circle or sphere itself.

Sign bookkeeping, fixed by brute-force quadrature of the masses: the
normalisation exponent ``E`` satisfies ``b(t, x) = exp(t E(x)) + O(t**1.5)``
(the ``(2 pi t)**(-l/2)`` prefactor is part of the kernel), and the rescaling
exponent ``D = -E`` is what :func:`rescaled_kernel_value` multiplies in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Circle, Ellipse, ManifoldModel, QuadratureGrid, Sphere2

KINDS = ("intrinsic_gauss", "ambient_gauss", "heat_restricted")
NORMALIZATIONS = ("raw_S", "markov_T", "rescaled_B", "global_sigma")

SPHERE_HEAT_MIN_T = 1e-4


class UnsupportedCombination(ValueError):
    """The requested kernel family is not available on this manifold."""


class GridError(ValueError):
    """Quadrature grid too coarse for the kernel's length scale."""


@dataclass(frozen=True)
class KernelFamily:
    kind: str
    normalization: str = "raw_S"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True)
class NormalizationReport:
    t: float
    x: np.ndarray
    b_value: float
    predicted: float
    residual: float


def check_supported(kind: str, mf: ManifoldModel) -> None:
    if kind not in KINDS:
        raise UnsupportedCombination(f"unknown kernel kind {kind!r}")
    if kind == "heat_restricted" and mf.ambient == "self":
        if not isinstance(mf, (Circle, Sphere2)):
            raise UnsupportedCombination(f"no heat kernel for {mf.name} as its own ambient")


def supported_pairs(manifolds) -> list[tuple[str, ManifoldModel]]:
    out = []
    for mf in manifolds:
        for kind in KINDS:
            try:
                check_supported(kind, mf)
            except UnsupportedCombination:
                continue
            out.append((kind, mf))
    return out


# --- heat kernel series -----------------------------------------------------

def wrapped_heat_kernel(circumference: float, t: float, arc):
    """Heat kernel of a circle of the given circumference, as a sum over images."""
    if t <= 0:
        raise ValueError("t must be positive")
    c = float(circumference)
    a = np.mod(np.asarray(arc, float) + 0.5 * c, c) - 0.5 * c
    norm = 1.0 / np.sqrt(2.0 * np.pi * t)
    total = norm * np.exp(-(a**2) / (2.0 * t))
    j = 1
    while True:
        new = norm * (np.exp(-((a + j * c) ** 2) / (2.0 * t))
                      + np.exp(-((a - j * c) ** 2) / (2.0 * t)))
        total = total + new
        if np.all(new <= 1e-17 * total):
            return total
        j += 1


def _sphere_spectrum(r: float, t: float) -> np.ndarray:
    """Factors ``exp(-l(l+1) t / 2r**2)`` up to the point where the tail is negligible."""
    if t < SPHERE_HEAT_MIN_T * r**2:
        raise ValueError(f"t={t} below the sphere series range {SPHERE_HEAT_MIN_T}*r**2")
    tau = t / (2.0 * r**2)
    # (2l+1) e^{-l(l+1) tau} falls below 1e-16 of its l=0 value past this bound
    lmax = int(np.ceil(np.sqrt(48.0 / tau))) + 4
    ell = np.arange(lmax + 1)
    return np.exp(-ell * (ell + 1) * tau)


def _legendre_sum(coeffs: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``sum_l coeffs[l] * P_l(c)`` by the three-term recurrence."""
    p_prev = np.ones_like(c)
    out = coeffs[0] * p_prev
    if len(coeffs) == 1:
        return out
    p = c.copy()
    out = out + coeffs[1] * p
    for ell in range(1, len(coeffs) - 1):
        p_prev, p = p, ((2 * ell + 1) * c * p - ell * p_prev) / (ell + 1)
        out = out + coeffs[ell + 1] * p
    return out


def sphere_heat_kernel(r: float, t: float, geodesic_angle):
    """Heat kernel of ``exp(t Delta / 2)`` on the sphere of radius ``r``, by Legendre series."""
    lam = _sphere_spectrum(r, t)
    ell = np.arange(len(lam))
    c = np.cos(np.asarray(geodesic_angle, float))
    # the recurrence costs len(lam) passes, so evaluate each distinct angle once
    uc, inverse = np.unique(c, return_inverse=True)
    val = _legendre_sum((2 * ell + 1) * lam / (4.0 * np.pi * r**2), uc)[inverse]
    val = val.reshape(np.shape(c))
    if np.any(val < -1e-12 * val.max(initial=1.0)):
        raise ArithmeticError("sphere heat series rang below zero")
    return np.maximum(val, 0.0)


def sphere_heat_angle_cdf(r: float, t: float, geodesic_angle):
    """Probability that sphere Brownian motion at time ``t`` is within the given angle of its start."""
    lam = _sphere_spectrum(r, t)
    c = np.atleast_1d(np.cos(np.asarray(geodesic_angle, float)))
    # int_c^1 P_l = (P_{l-1}(c) - P_{l+1}(c)) / (2l + 1) for l >= 1
    coeffs = np.zeros(len(lam) + 1)
    coeffs[0] = 1.0
    coeffs[1] = -1.0
    for ell in range(1, len(lam)):
        coeffs[ell - 1] += lam[ell]
        coeffs[ell + 1] -= lam[ell]
    out = 0.5 * _legendre_sum(coeffs, c)
    return np.clip(out, 0.0, 1.0).reshape(np.shape(np.asarray(geodesic_angle)))


# --- kernels ----------------------------------------------------------------

def _gauss(l: int, t: float, d):
    return (2.0 * np.pi * t) ** (-l / 2) * np.exp(-(np.asarray(d) ** 2) / (2.0 * t))


def kernel_value(fam: KernelFamily | str, mf: ManifoldModel, t: float, x, y):
    """Un-normalised kernel ``q_t(x, y)``; ``x`` and ``y`` broadcast against each other."""
    kind = fam if isinstance(fam, str) else fam.kind
    check_supported(kind, mf)
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    l = mf.intrinsic_dim
    if kind == "intrinsic_gauss":
        return _gauss(l, t, mf.geodesic_distance(x, y))
    if kind == "ambient_gauss" or mf.ambient == "euclidean":
        return _gauss(l, t, mf.ambient_distance(x, y))
    if isinstance(mf, Circle):
        return wrapped_heat_kernel(mf.perimeter, t, mf.signed_arc(x, y))
    return sphere_heat_kernel(mf.radius, t, mf.geodesic_distance(x, y) / mf.radius)


def radial_kernel(kind: str, mf: ManifoldModel, t: float, rho):
    """Kernel as a function of geodesic distance ``rho``, for models where that suffices."""
    check_supported(kind, mf)
    rho = np.asarray(rho, float)
    l = mf.intrinsic_dim
    if kind == "intrinsic_gauss" or mf.ambient == "self" and kind == "ambient_gauss":
        return _gauss(l, t, rho)
    if isinstance(mf, Ellipse):
        raise UnsupportedCombination("ellipse chords depend on position, not only on arc length")
    if kind == "heat_restricted" and mf.ambient == "self":
        if isinstance(mf, Circle):
            return wrapped_heat_kernel(mf.perimeter, t, rho)
        return sphere_heat_kernel(mf.radius, t, rho / mf.radius)
    r = mf.radius
    return _gauss(l, t, 2.0 * r * np.sin(rho / (2.0 * r)))


def normalization_exponent(kind: str, mf: ManifoldModel, x):
    """``E(x)`` with ``b(t, x) = exp(t E(x)) + O(t**1.5)``."""
    check_supported(kind, mf)
    cd = mf.curvature_at(x)
    if kind == "intrinsic_gauss":
        return -cd.scal_L / 6.0
    e = -cd.scal_L / 4.0 + cd.tau_sq / 8.0
    if kind == "ambient_gauss":
        return e + cd.rbar / 12.0
    return e + (cd.rbar + cd.ricbar + cd.scal_M) / 12.0


def rescaling_exponent(kind: str, mf: ManifoldModel, x):
    """``D(x) = -E(x)``, the exponent of the factor ``exp(t D(x))`` that makes masses tend to one."""
    return -normalization_exponent(kind, mf, x)


def rescaled_kernel_value(fam: KernelFamily | str, mf: ManifoldModel, t: float, x, y):
    kind = fam if isinstance(fam, str) else fam.kind
    return kernel_value(kind, mf, t, x, y) * np.exp(t * np.asarray(rescaling_exponent(kind, mf, x)))


def symmetric_rescaled_kernel_value(mf: ManifoldModel, t: float, x, y):
    """Intrinsic Gaussian with the scalar-curvature correction split evenly between both points."""
    sx = mf.curvature_at(x).scal_L
    sy = mf.curvature_at(y).scal_L
    return kernel_value("intrinsic_gauss", mf, t, x, y) * np.exp(t * (sx + sy) / 12.0)


def check_grid(grid: QuadratureGrid, t: float) -> None:
    if grid.spacing > np.sqrt(t) / 4.0 * (1 + 1e-12):
        raise GridError(f"grid spacing {grid.spacing:.4g} exceeds sqrt(t)/4 = {np.sqrt(t) / 4:.4g}")


def adequate_resolution(mf: ManifoldModel, t: float) -> int:
    """Smallest resolution whose grid passes :func:`check_grid` at ``t``."""
    h = np.sqrt(t) / 4.0
    if isinstance(mf, Sphere2):
        res = int(np.ceil(np.pi * mf.radius / h))
    else:
        res = int(np.ceil(mf.perimeter / h))
    return max(res, 16)


def mass(kind: str, mf: ManifoldModel, t: float, x, grid: QuadratureGrid) -> float:
    check_grid(grid, t)
    return float(np.sum(grid.weights * kernel_value(kind, mf, t, x, grid.nodes)))


def normalization_b(fam: KernelFamily | str, mf: ManifoldModel, t: float, x,
                    grid: QuadratureGrid) -> NormalizationReport:
    kind = fam if isinstance(fam, str) else fam.kind
    b = mass(kind, mf, t, x, grid)
    pred = float(np.exp(t * normalization_exponent(kind, mf, x)))
    return NormalizationReport(float(t), np.asarray(x, float), b, pred, b - pred)


def residual_order(t, residual, exact_factor: float = 1e-3):
    """Log-log slope of ``|residual|`` against ``t``, or ``"exact"``.

    ``"exact"`` means every residual sits below ``exact_factor * t**1.5``: the
    mass is known in closed form to equal its prediction and what remains is
    rounding, whose slope carries no information.
    """
    t = np.asarray(t, float)
    r = np.abs(np.asarray(residual, float))
    if np.all(r <= exact_factor * t**1.5):
        return "exact"
    return float(np.polyfit(np.log(t), np.log(np.maximum(r, 1e-300)), 1)[0])

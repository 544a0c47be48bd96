"""Curvature exponents, discrete Feynman-Kac weights, and pinned-versus-weighted ensemble comparison.

Sign convention: :func:`d_function` returns ``D``, the exponent of the rescaling
``exp(t D(x))`` that turns a raw kernel into one of asymptotically unit mass.
The raw path measure then differs from the rescaled one by the factor
``exp(-sum dt_k D(y_{k-1}))``, and :func:`discrete_fk_weight` returns the log
of exactly that factor.  This is the weight a reference Brownian motion must
carry to reproduce the globally normalised pinned ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import ManifoldModel, Sphere2
from .kernels import check_supported, rescaling_exponent, sphere_heat_angle_cdf
from .pinning import BLOCK, Partition, PathBatch, WeightedPath, _run_blocks, block_rng
from .semigroup import curve_mode, sphere_harmonic

MIN_ESS_FRACTION = 0.05
ANGLE_TABLE = 1 << 15


class WeightDegeneracy(RuntimeError):
    """Effective sample size of a weighted ensemble is too small to trust."""


def d_function(kind: str, mf: ManifoldModel, x):
    """``D(x)``: ``Scal/6``, ``Scal/4 - |tau|^2/8 - Rbar/12``, or the heat variant with the Ricci terms."""
    return rescaling_exponent(kind, mf, x)


def discrete_fk_weight(path: WeightedPath | PathBatch, kind: str, mf: ManifoldModel):
    """Log of ``dP_S/dP_B``: ``-sum_k (t_k - t_{k-1}) D(y_{k-1})``, a left-endpoint Riemann sum.

    Accepts a single path (returns a float) or a batch (returns one value per path).
    """
    check_supported(kind, mf)
    dt = np.diff(path.times)
    d = np.asarray(d_function(kind, mf, path.skeleton))
    out = -(d[..., :-1] * dt).sum(axis=-1)
    return float(out) if isinstance(path, WeightedPath) else out


# --- reference Brownian motion ----------------------------------------------

def _angle_sampler(r: float, dt: float):
    theta = np.linspace(0.0, np.pi, ANGLE_TABLE + 1)
    cdf = np.maximum.accumulate(sphere_heat_angle_cdf(r, dt, theta))
    cdf[0], cdf[-1] = 0.0, 1.0
    # np.interp needs a strictly increasing abscissa; flat stretches carry no mass anyway
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    cdf_k, th_k = cdf[keep], theta[keep]
    return lambda u: np.interp(u, cdf_k, th_k)


def reference_bm_sampler(mf: ManifoldModel, partition: Partition, x, seed: int, paths: int,
                         threads: int = 1) -> PathBatch:
    """Exact Brownian skeletons on ``mf`` (arc-length Brownian motion for curves)."""
    x = np.asarray(x, float)
    incs = partition.increments
    sphere = isinstance(mf, Sphere2)
    samplers = {}
    if sphere:
        for dt in set(map(float, incs)):
            samplers[dt] = _angle_sampler(mf.radius, dt)

    def block(b, lo, hi):
        rng = block_rng(seed, b, purpose=2)
        n = hi - lo
        state = np.broadcast_to(mf.reduce(x), (n,) + x.shape).copy()
        out = [state]
        for dt in incs:
            if sphere:
                u = rng.random((n, 2))
                state = mf.move(state, 2.0 * np.pi * u[:, 1], mf.radius * samplers[float(dt)](u[:, 0]))
            else:
                state = mf.reduce(state + np.sqrt(dt) * rng.standard_normal(n))
            out.append(state)
        return np.stack(out, axis=1)

    skel = np.concatenate(_run_blocks(block, paths, threads))
    return PathBatch(skel, partition.times, np.zeros(paths), meta={"reference": True})


# --- functionals and estimators ---------------------------------------------

@dataclass(frozen=True)
class Functional:
    id: str
    fn: Callable[[PathBatch], np.ndarray]

    def __call__(self, batch: PathBatch) -> np.ndarray:
        return np.asarray(self.fn(batch), float)


def builtin_functionals(mf: ManifoldModel, x) -> list[Functional]:
    """Terminal value and time average of the lowest mode, and the maximal distance from ``x``."""
    f = sphere_harmonic(mf, 1) if isinstance(mf, Sphere2) else curve_mode(mf, 1)

    def terminal(b):
        return f(b.skeleton[:, -1])

    def time_avg(b):
        return (f(b.skeleton[:, :-1]) * np.diff(b.times)).sum(axis=1)

    def max_disp(b):
        return mf.geodesic_distance(np.asarray(x, float), b.skeleton).max(axis=1)

    return [Functional(f"terminal_{f.id}", terminal),
            Functional(f"time_avg_{f.id}", time_avg),
            Functional("max_displacement", max_disp)]


def curvature_occupation(mf: ManifoldModel) -> Functional:
    """Left Riemann sum of ``|tau|^2`` along the skeleton."""
    def occ(b):
        tau = np.asarray(mf.curvature_at(b.skeleton[:, :-1]).tau_sq)
        return (tau * np.diff(b.times)).sum(axis=1)

    return Functional("curvature_occupation", occ)


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    ess: float
    weight_free: bool


def weighted_estimate(values, log_weights, min_ess_fraction: float = MIN_ESS_FRACTION) -> Estimate:
    """Self-normalised importance estimate with its delta-method standard error."""
    v = np.asarray(values, float)
    lw = np.asarray(log_weights, float)
    n = len(v)
    weight_free = bool(np.var(lw) < 1e-20)
    w = np.ones(n) if weight_free else np.exp(lw - lw.max())
    sw = w.sum()
    mean = float((w * v).sum() / sw)
    ess = float(sw**2 / (w**2).sum())
    if ess < min_ess_fraction * n:
        raise WeightDegeneracy(f"effective sample size {ess:.0f} below {min_ess_fraction:.0%} of {n}")
    if weight_free:
        se = float(np.std(v, ddof=1) / np.sqrt(n))
    else:
        se = float(np.sqrt((w**2 * (v - mean) ** 2).sum()) / sw)
    return Estimate(mean, se, ess, weight_free)


@dataclass(frozen=True)
class ComparisonReport:
    functional_id: str
    pinned_estimate: float
    pinned_se: float
    weighted_reference_estimate: float
    weighted_reference_se: float
    z_score: float
    n_paths: int
    mesh: float
    pinned_ess: float
    reference_ess: float
    weight_free: bool

    @property
    def difference(self) -> float:
        return self.pinned_estimate - self.weighted_reference_estimate

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.pinned_se, self.weighted_reference_se))


def compare_ensembles(pinned: PathBatch, reference: PathBatch, kind: str, mf: ManifoldModel,
                      functionals: Sequence[Functional]) -> list[ComparisonReport]:
    """Pinned ensemble (weighted by its own raw log-masses) against Feynman-Kac weighted reference paths."""
    if not np.array_equal(pinned.times, reference.times):
        raise ValueError("ensembles must share the partition")
    ref_lw = discrete_fk_weight(reference, kind, mf)
    mesh = float(np.max(np.diff(pinned.times)))
    out = []
    for fn in functionals:
        p = weighted_estimate(fn(pinned), pinned.log_weight)
        r = weighted_estimate(fn(reference), ref_lw)
        diff = p.mean - r.mean
        se = float(np.hypot(p.se, r.se))
        z = diff / se if se > 0 else (0.0 if diff == 0 else np.inf * np.sign(diff))
        out.append(ComparisonReport(fn.id, p.mean, p.se, r.mean, r.se, float(z), len(pinned), mesh,
                                    p.ess, r.ess, p.weight_free and r.weight_free))
    return out


def passes_with_allowance(report: ComparisonReport, allowance: float, z_max: float = 3.0) -> bool:
    """``|difference| <= z_max * SE + allowance``."""
    return abs(report.difference) <= z_max * report.combined_se + allowance


__all__ = ["BLOCK", "ComparisonReport", "Estimate", "Functional", "WeightDegeneracy",
           "builtin_functionals", "compare_ensembles", "curvature_occupation", "d_function",
           "discrete_fk_weight", "passes_with_allowance", "reference_bm_sampler",
           "weighted_estimate"]

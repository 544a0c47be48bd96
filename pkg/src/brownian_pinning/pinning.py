"""Discrete pinned path measures: skeleton sampling, weights, and interpolation between skeleton points.

Paths are generated in fixed blocks of :data:`BLOCK` paths.  Block ``k``
draws from its own counter-based stream keyed by ``(seed, k)``, so the output
never depends on how blocks are distributed over threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import roots_legendre

from .geometry import Ellipse, ManifoldModel, Sphere2
from .kernels import (KernelFamily, adequate_resolution, check_supported, kernel_value,
                      radial_kernel, rescaling_exponent)

BLOCK = 4096
RADIAL_TABLE = 8192
INTERPOLATIONS = ("none", "l_geodesic", "m_geodesic", "euclidean_bridge")


# --- partitions -------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a partition needs at least two times")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise ValueError("a partition must start at 0 and end at 1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self):
        return len(self.times)

    @classmethod
    def uniform(cls, n: int) -> "Partition":
        if n < 1:
            raise ValueError("need at least one step")
        t = np.arange(n + 1) / n
        return cls(t)

    @classmethod
    def geometric(cls, ratio: float, steps: int, blocks: int = 1) -> "Partition":
        """``blocks`` equal blocks, each split into ``steps`` increments growing by ``ratio``.

        With ``blocks=1`` this is a plain geometric partition; its mesh stays near
        ``(ratio - 1) / ratio`` however many steps are used, so refinement is
        done by adding blocks.
        """
        if ratio <= 0 or steps < 1 or blocks < 1:
            raise ValueError("need ratio > 0, steps >= 1, blocks >= 1")
        inc = ratio ** np.arange(steps)
        inc = inc / inc.sum() / blocks
        t = np.concatenate([[0.0], np.cumsum(np.tile(inc, blocks))])
        t[-1] = 1.0
        return cls(t)

    @classmethod
    def from_spec(cls, spec) -> "Partition":
        if isinstance(spec, (list, tuple)):
            return cls(np.asarray(spec, float))
        spec = dict(spec)
        kind = spec.pop("kind", "uniform")
        if kind == "uniform":
            return cls.uniform(int(spec["n"]))
        if kind == "geometric":
            return cls.geometric(float(spec["ratio"]), int(spec["steps"]), int(spec.get("blocks", 1)))
        if kind == "explicit":
            return cls(np.asarray(spec["times"], float))
        raise ValueError(f"unknown partition kind {kind!r}")


# --- random streams ---------------------------------------------------------

def block_rng(seed: int, block: int, purpose: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(paths: int):
    return [(b, b * BLOCK, min(paths, (b + 1) * BLOCK)) for b in range((paths + BLOCK - 1) // BLOCK)]


def _run_blocks(fn, paths: int, threads: int):
    jobs = _blocks(paths)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda j: fn(*j), jobs))
    return [fn(*j) for j in jobs]


# --- alias tables -----------------------------------------------------------

class AliasTable:
    """Vose's alias method for a fixed categorical distribution."""

    def __init__(self, probs):
        p = np.asarray(probs, float)
        if np.any(p < 0) or not np.isfinite(p).all() or p.sum() <= 0:
            raise ValueError("probabilities must be finite, non-negative, not all zero")
        n = len(p)
        scaled = p * (n / p.sum())
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)

    def sample(self, u_index, u_coin):
        n = len(self.prob)
        i = np.minimum((u_index * n).astype(np.int64), n - 1)
        return np.where(u_coin < self.prob[i], i, self.alias[i])


# --- one-step samplers ------------------------------------------------------

class _RadialStepper:
    """Transitions whose law depends only on the geodesic distance travelled.

    The radial density is tabulated on a fine uniform grid of distances and
    drawn with an alias table, then placed uniformly inside its cell; the
    direction is a random sign on curves and a uniform bearing on the sphere.
    """

    def __init__(self, kind: str, mf: ManifoldModel, t: float):
        self.mf = mf
        if isinstance(mf, Sphere2):
            rmax = np.pi * mf.radius
        else:
            rmax = 0.5 * mf.perimeter
        rmax = min(rmax, 40.0 * np.sqrt(t))
        edges = np.linspace(0.0, rmax, RADIAL_TABLE + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        h = edges[1] - edges[0]
        q = radial_kernel(kind, mf, t, mid)
        if isinstance(mf, Sphere2):
            r = mf.radius
            # exact cell area of the spherical annulus
            jac = 2.0 * np.pi * r**2 * (np.cos(edges[:-1] / r) - np.cos(edges[1:] / r)) / h
        else:
            jac = np.full_like(mid, 2.0)
        cell = q * jac * h
        self.edges = edges
        self.table = AliasTable(cell)
        self.log_mass = float(np.log(self._mass(kind, mf, t)))

    @staticmethod
    def _mass(kind, mf, t):
        # midpoint sums of the radial table are only second-order; the mass uses GL
        x, w = roots_legendre(400)
        if isinstance(mf, Sphere2):
            rmax = min(np.pi * mf.radius, 40.0 * np.sqrt(t))
        else:
            rmax = min(0.5 * mf.perimeter, 40.0 * np.sqrt(t))
        total = 0.0
        pieces = 16
        for k in range(pieces):
            a, b = rmax * k / pieces, rmax * (k + 1) / pieces
            rho = 0.5 * (b - a) * x + 0.5 * (a + b)
            q = radial_kernel(kind, mf, t, rho)
            if isinstance(mf, Sphere2):
                jac = 2.0 * np.pi * mf.radius * np.sin(rho / mf.radius)
            else:
                jac = 2.0
            total += 0.5 * (b - a) * np.sum(w * q * jac)
        return total

    def step(self, state: np.ndarray, rng: np.random.Generator):
        n = len(state)
        u = rng.random((n, 4))
        cell = self.table.sample(u[:, 0], u[:, 1])
        rho = self.edges[cell] + u[:, 2] * (self.edges[cell + 1] - self.edges[cell])
        if isinstance(self.mf, Sphere2):
            return self.mf.move(state, 2.0 * np.pi * u[:, 3], rho)
        return self.mf.move(state, np.where(u[:, 3] < 0.5, -1.0, 1.0), rho)

    def log_mass_at(self, state):
        return np.full(len(state), self.log_mass)


class _LatticeStepper:
    """Transitions on a curve restricted to the lattice ``x0 + k h``; one inverse-CDF row per node."""

    def __init__(self, kind: str, mf: ManifoldModel, t: float, x0: float, resolution: int):
        self.mf = mf
        p = mf.perimeter
        n = resolution
        self.h = p / n
        self.x0 = float(x0)
        nodes = mf.reduce(self.x0 + self.h * np.arange(n))
        q = kernel_value(kind, mf, t, nodes[:, None], nodes[None, :]) * self.h
        row_mass = q.sum(axis=1)
        cdf = np.cumsum(q / row_mass[:, None], axis=1)
        cdf[:, -1] = 1.0
        # rows stacked end to end so one searchsorted serves every row
        self.flat = (cdf + np.arange(n)[:, None]).ravel()
        self.n = n
        self.nodes = nodes
        self.log_masses = np.log(row_mass)

    def index_of(self, s):
        k = np.rint(np.mod(np.asarray(s, float) - self.x0, self.mf.perimeter) / self.h)
        return np.mod(k.astype(np.int64), self.n)

    def step(self, state, rng):
        i = self.index_of(state)
        u = rng.random(len(state))
        j = np.searchsorted(self.flat, i + u, side="right") - i * self.n
        return self.nodes[np.clip(j, 0, self.n - 1)]

    def log_mass_at(self, state):
        return self.log_masses[self.index_of(state)]


def _stepper(kind, mf, t, x0, resolution):
    if isinstance(mf, Ellipse) and kind != "intrinsic_gauss":
        return _LatticeStepper(kind, mf, t, x0, resolution)
    return _RadialStepper(kind, mf, t)


# --- configuration and paths ------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    paths: int
    partition: Partition
    family: KernelFamily
    resolution: int = 1024
    interpolation: str = "none"
    refinement_depth: int = 6

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    def lattice_resolution(self, mf: ManifoldModel) -> int:
        need = adequate_resolution(mf, float(np.min(self.partition.increments)))
        if self.resolution < need:
            raise ValueError(f"resolution {self.resolution} below the adequate {need}")
        return self.resolution


@dataclass
class WeightedPath:
    skeleton: np.ndarray
    times: np.ndarray
    log_weight: float
    interpolation: str = "none"
    fine_path: Optional[np.ndarray] = None
    fine_times: Optional[np.ndarray] = None


@dataclass
class PathBatch:
    """``paths`` skeletons stored as one array of shape ``(paths, len(times), *point_shape)``."""

    skeleton: np.ndarray
    times: np.ndarray
    log_weight: np.ndarray
    interpolation: str = "none"
    fine_path: Optional[np.ndarray] = None
    fine_times: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.log_weight)

    def path(self, i: int) -> WeightedPath:
        return WeightedPath(self.skeleton[i], self.times, float(self.log_weight[i]),
                            self.interpolation,
                            None if self.fine_path is None else self.fine_path[i],
                            self.fine_times)


def step_sample(fam: KernelFamily | str, mf: ManifoldModel, t: float, x, rng: np.random.Generator,
                size: int | None = None, resolution: int = 0):
    """Draw ``y`` from one transition out of ``x``; returns ``(y, log_mass)``.

    ``log_mass`` is the log of the kernel's total mass at ``x``; callers with a
    Markov normalisation simply ignore it.
    """
    kind = fam if isinstance(fam, str) else fam.kind
    check_supported(kind, mf)
    x = np.asarray(x, float)
    n = 1 if size is None else size
    state = np.broadcast_to(x, (n,) + x.shape).copy()
    res = max(resolution, adequate_resolution(mf, t))
    x0 = float(x) if x.ndim == 0 else 0.0
    st = _stepper(kind, mf, t, x0, res)
    y = st.step(state, rng)
    lm = st.log_mass_at(state)
    if size is None:
        return y[0], float(lm[0])
    return y, lm


def _skeleton_block(cfg: SamplerConfig, mf: ManifoldModel, x, steppers, d_of, block, lo, hi):
    rng = block_rng(cfg.seed, block)
    n = hi - lo
    x = np.asarray(x, float)
    state = np.broadcast_to(x, (n,) + x.shape).copy()
    skel = [state]
    logw = np.zeros(n)
    norm = cfg.family.normalization
    for dt, st in zip(cfg.partition.increments, steppers):
        if norm != "markov_T":
            logw += st.log_mass_at(state)
            if norm == "rescaled_B":
                logw += dt * d_of(state)
        state = st.step(state, rng)
        skel.append(state)
    return np.stack(skel, axis=1), logw


def _prepare(cfg: SamplerConfig, mf: ManifoldModel, x):
    kind = cfg.family.kind
    check_supported(kind, mf)
    x = np.asarray(x, float)
    if x.ndim == 0:
        x = np.asarray(mf.reduce(x), float)
    res = cfg.lattice_resolution(mf)
    x0 = float(x) if x.ndim == 0 else 0.0
    cache: dict[float, object] = {}
    steppers = []
    for dt in cfg.partition.increments:
        key = float(dt)
        if key not in cache:
            cache[key] = _stepper(kind, mf, key, x0, res)
        steppers.append(cache[key])

    def d_of(state):
        return np.broadcast_to(rescaling_exponent(kind, mf, state), (len(state),))

    return x, steppers, d_of


def sample_batch(cfg: SamplerConfig, mf: ManifoldModel, x, threads: int = 1) -> PathBatch:
    x, steppers, d_of = _prepare(cfg, mf, x)
    parts = _run_blocks(lambda b, lo, hi: _skeleton_block(cfg, mf, x, steppers, d_of, b, lo, hi),
                        cfg.paths, threads)
    skel = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    batch = PathBatch(skel, cfg.partition.times, logw, meta={"family": cfg.family})
    if cfg.interpolation != "none":
        batch = interpolate_batch(batch, mf, cfg.interpolation, cfg.refinement_depth,
                                  cfg.seed, threads)
    return batch


def sample_skeleton(cfg: SamplerConfig, mf: ManifoldModel, x, path_index: int = 0) -> WeightedPath:
    """Path number ``path_index`` of the batch that ``cfg`` describes.

    Only the block holding that path is simulated.
    """
    if not 0 <= path_index < cfg.paths:
        raise IndexError("path_index outside the batch")
    x, steppers, d_of = _prepare(cfg, mf, x)
    block = path_index // BLOCK
    lo, hi = block * BLOCK, min(cfg.paths, (block + 1) * BLOCK)
    skel, logw = _skeleton_block(cfg, mf, x, steppers, d_of, block, lo, hi)
    batch = PathBatch(skel, cfg.partition.times, logw, meta={"family": cfg.family})
    if cfg.interpolation != "none":
        batch = interpolate_batch(batch, mf, cfg.interpolation, cfg.refinement_depth,
                                  cfg.seed, first_block=block)
    return batch.path(path_index - lo)


# --- interpolation ----------------------------------------------------------

def _geodesic_fill(mf: ManifoldModel, a, b, lam):
    """Points at fractions ``lam`` along the chosen minimising geodesic from ``a`` to ``b``."""
    if isinstance(mf, Sphere2):
        ua, ub = mf.unit(a), mf.unit(b)
        ang = mf.angle_between(ua, ub)
        e_th, _ = mf.frame(a)
        perp = ub - np.sum(ua * ub, axis=-1, keepdims=True) * ua
        norm = np.linalg.norm(perp, axis=-1, keepdims=True)
        # antipodal tie: leave along -e_theta, the lexicographically smallest chart tangent
        tie = norm[..., 0] < 1e-12
        d = np.where(tie[..., None], -e_th, perp / np.where(tie[..., None], 1.0, norm))
        th = ang[..., None, None] * lam[:, None]
        pts = np.cos(th) * ua[..., None, :] + np.sin(th) * d[..., None, :]
        return mf.radius * pts
    arc = mf.signed_arc(a, b)
    s = np.asarray(a, float)[..., None] + arc[..., None] * lam
    return mf.embed(s)


def _bridge_noise(rng, shape_prefix, m, depth, dt):
    """Brownian-bridge deviations from the chord on ``2**depth`` dyadic cells, by midpoint bisection.

    Returns an array ``(..., 2**depth + 1, m)`` vanishing at both ends.
    """
    k = 2**depth
    out = np.zeros(shape_prefix + (k + 1, m))
    step = k
    while step > 1:
        half = step // 2
        left = np.arange(0, k, step)
        mid = left + half
        var = dt * step / (4.0 * k)  # midpoint of a bridge over a cell of length dt*step/k
        z = rng.standard_normal(shape_prefix + (len(mid), m))
        out[..., mid, :] = 0.5 * (out[..., left, :] + out[..., left + step, :]) + np.sqrt(var) * z
        step = half
    return out


def interpolate_batch(batch: PathBatch, mf: ManifoldModel, mode: str, depth: int = 6,
                      seed: int = 0, threads: int = 1, first_block: int = 0) -> PathBatch:
    """Attach fine paths; ``first_block`` offsets the bridge streams when ``batch`` is one block of a larger run."""
    if mode not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation {mode!r}")
    if mode == "none":
        return replace(batch, interpolation="none", fine_path=None, fine_times=None)
    if mode == "euclidean_bridge" and mf.ambient != "euclidean":
        raise ValueError("bridge interpolation needs a Euclidean ambient space")
    k = 2**depth
    lam = np.arange(k + 1) / k
    times = batch.times
    fine_times = np.concatenate([(times[:-1, None] + np.diff(times)[:, None] * lam[:-1]).ravel(),
                                 times[-1:]])
    emb = mf.embed(batch.skeleton)
    m = emb.shape[-1]

    def work(block, lo, hi):
        a = batch.skeleton[lo:hi, :-1]
        b = batch.skeleton[lo:hi, 1:]
        ea, eb = emb[lo:hi, :-1], emb[lo:hi, 1:]
        if mode == "l_geodesic":
            seg = _geodesic_fill(mf, a, b, lam)
        else:
            seg = ea[..., None, :] + lam[:, None] * (eb - ea)[..., None, :]
            if mode == "euclidean_bridge":
                rng = block_rng(seed, first_block + block, purpose=1)
                dts = np.diff(times)
                noise = np.stack([_bridge_noise(rng, (hi - lo,), m, depth, dt) for dt in dts], axis=1)
                seg = seg + noise
        # segment ends are the embedded skeleton points, bit for bit
        seg[..., 0, :] = ea
        seg[..., -1, :] = eb
        body = seg[..., :-1, :].reshape(hi - lo, -1, m)
        return np.concatenate([body, eb[:, -1:, :]], axis=1)

    parts = _run_blocks(work, len(batch), threads)
    return replace(batch, interpolation=mode, fine_path=np.concatenate(parts),
                   fine_times=fine_times, meta={**batch.meta, "depth": depth})


def interpolate(path: WeightedPath, mf: ManifoldModel, mode: str, refinement_depth: int = 6,
                rng: np.random.Generator | int = 0) -> WeightedPath:
    """Single-path form of :func:`interpolate_batch`; an integer ``rng`` is used as the seed."""
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(2**63))
    batch = PathBatch(path.skeleton[None], path.times, np.array([path.log_weight]))
    return interpolate_batch(batch, mf, mode, refinement_depth, seed).path(0)


def segment_excursions(batch: PathBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per segment: maximal distance of the fine path from the straight chord, and the segment length."""
    if batch.fine_path is None:
        raise ValueError("batch has no interpolation")
    depth = batch.meta["depth"]
    k = 2**depth
    r = len(batch.times) - 1
    fp = batch.fine_path
    seg = np.stack([fp[:, j * k:(j + 1) * k + 1] for j in range(r)], axis=1)
    lam = np.arange(k + 1) / k
    chord = seg[..., :1, :] + lam[:, None] * (seg[..., -1:, :] - seg[..., :1, :])
    dev = np.linalg.norm(seg - chord, axis=-1).max(axis=-1)
    dts = np.broadcast_to(np.diff(batch.times), dev.shape)
    return dev.ravel(), dts.ravel()


def bridge_excursion_stat(batch: PathBatch, alpha) -> np.ndarray:
    """Fraction of segments whose bridge strays further than ``alpha`` from its chord."""
    dev, _ = segment_excursions(batch)
    alpha = np.atleast_1d(np.asarray(alpha, float))
    return np.array([(dev > a).mean() for a in alpha]).reshape(np.shape(np.asarray(alpha)) or ())


def fit_excursion_tail(alphas, fractions, dt: float) -> float:
    """``chi_hat`` from a least-squares fit of ``log(fraction/dt)`` against ``alpha**2/dt``."""
    alphas = np.asarray(alphas, float)
    fr = np.asarray(fractions, float)
    keep = fr > 0
    if keep.sum() < 2:
        raise ValueError("need at least two non-zero fractions to fit")
    slope = np.polyfit(alphas[keep] ** 2 / dt, np.log(fr[keep] / dt), 1)[0]
    return float(-slope)

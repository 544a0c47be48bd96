import numpy as np
import pytest
from scipy import stats

from brownian_pinning.density import (Functional, WeightDegeneracy, builtin_functionals,
                                      compare_ensembles, curvature_occupation, d_function,
                                      discrete_fk_weight, reference_bm_sampler, weighted_estimate)
from brownian_pinning.geometry import Circle, Ellipse, Sphere2
from brownian_pinning.kernels import KernelFamily, sphere_heat_angle_cdf
from brownian_pinning.pinning import Partition, SamplerConfig, WeightedPath, sample_batch

C, E, S = Circle(), Ellipse(1.0, 0.5), Sphere2()
S_SELF = Sphere2(ambient="self")


class TestDFunction:
    def test_examples(self):
        x = np.array([1.0, 2.0])
        assert d_function("intrinsic_gauss", S, x) == pytest.approx(1 / 3)
        assert d_function("ambient_gauss", S, x) == pytest.approx(0.0, abs=1e-15)
        assert d_function("ambient_gauss", E, 0.0) == pytest.approx(-2.0)
        assert d_function("intrinsic_gauss", C, 0.4) == 0.0

    def test_ellipse_is_minus_kappa_sq_over_8(self):
        s = np.linspace(0, E.perimeter, 50)
        np.testing.assert_allclose(d_function("ambient_gauss", E, s), -E.curvature(s) ** 2 / 8, rtol=1e-12)
        np.testing.assert_array_equal(d_function("heat_restricted", E, s), d_function("ambient_gauss", E, s))

    def test_self_ambient_heat(self):
        assert d_function("heat_restricted", S_SELF, np.array([0.3, 0.3])) == pytest.approx(0.0, abs=1e-15)


class TestFkWeight:
    def test_circle_zero(self):
        p = WeightedPath(np.linspace(0, 3, 11), np.linspace(0, 1, 11), 0.0)
        assert discrete_fk_weight(p, "intrinsic_gauss", C) == 0.0

    def test_constant_d_is_minus_d(self):
        """Log of dP_S/dP_B: the constant D = 1/3 enters with a minus sign."""
        rng = np.random.default_rng(0)
        pts = np.stack([rng.uniform(0, np.pi, 9), rng.uniform(0, 6, 9)], -1)
        p = WeightedPath(pts, Partition.geometric(1.3, 8).times, 0.0)
        assert discrete_fk_weight(p, "intrinsic_gauss", S) == pytest.approx(-1 / 3, abs=1e-15)

    def test_direct_loop_oracle(self):
        cfg = SamplerConfig(1, 50, Partition.geometric(1.2, 8, 4), KernelFamily("ambient_gauss", "markov_T"))
        b = sample_batch(cfg, E, 0.2)
        fast = discrete_fk_weight(b, "ambient_gauss", E)
        for i in range(len(b)):
            sk, t = b.skeleton[i], b.times
            acc = 0.0
            for k in range(1, len(t)):
                kap = float(E.curvature(sk[k - 1]))
                acc -= (t[k] - t[k - 1]) * (-kap * kap / 8)
            assert abs(fast[i] - acc) <= 1e-14
            assert discrete_fk_weight(b.path(i), "ambient_gauss", E) == fast[i]

    @pytest.mark.parametrize("kind,mf,x", [
        ("intrinsic_gauss", C, 0.0), ("ambient_gauss", C, 0.0), ("ambient_gauss", E, 0.3),
        ("heat_restricted", E, 0.3), ("intrinsic_gauss", E, 0.3),
        ("intrinsic_gauss", S, np.array([1.0, 1.0])), ("ambient_gauss", S, np.array([1.0, 1.0])),
        ("heat_restricted", S_SELF, np.array([1.0, 1.0])),
    ])
    def test_weight_ratio_identity(self, kind, mf, x):
        part = Partition.uniform(16)
        raw = sample_batch(SamplerConfig(9, 300, part, KernelFamily(kind, "raw_S")), mf, x)
        res = sample_batch(SamplerConfig(9, 300, part, KernelFamily(kind, "rescaled_B")), mf, x)
        assert np.array_equal(raw.skeleton, res.skeleton)
        np.testing.assert_allclose(raw.log_weight - res.log_weight,
                                   discrete_fk_weight(raw, kind, mf), atol=1e-8, rtol=0)


class TestReferenceBM:
    def test_circle_increment_sd(self):
        b = reference_bm_sampler(C, Partition.uniform(64), 0.5, 3, 100_000)
        assert np.all(b.skeleton[:, 0] == 0.5)
        inc = C.signed_arc(b.skeleton[:, 0], b.skeleton[:, 1])
        assert np.std(inc) == pytest.approx(1 / 8, rel=0.02)

    def test_sphere_marginal_ks(self):
        x = np.array([0.7, 1.1])
        b = reference_bm_sampler(S, Partition.uniform(8), x, 4, 100_000, threads=4)
        np.testing.assert_array_equal(b.skeleton[:, 0], np.broadcast_to(x, (100_000, 2)))
        ang = S.geodesic_distance(x, b.skeleton[:, -1])
        assert stats.kstest(ang, lambda a: sphere_heat_angle_cdf(1.0, 1.0, a)).pvalue > 0.01

    def test_sphere_one_step_ks(self):
        x = np.array([0.7, 1.1])
        b = reference_bm_sampler(S, Partition.uniform(64), x, 5, 50_000)
        ang = S.geodesic_distance(x, b.skeleton[:, 1])
        assert stats.kstest(ang, lambda a: sphere_heat_angle_cdf(1.0, 1 / 64, a)).pvalue > 0.01

    def test_ellipse_runs_on_arc_length(self):
        b = reference_bm_sampler(E, Partition.uniform(4), 0.1, 1, 1000)
        assert b.skeleton.min() >= 0 and b.skeleton.max() < E.perimeter


class TestEstimates:
    def test_weight_free(self):
        est = weighted_estimate(np.arange(10.0), np.full(10, 3.7))
        assert est.weight_free and est.mean == 4.5
        assert est.se == pytest.approx(np.std(np.arange(10.0), ddof=1) / np.sqrt(10))

    def test_matches_explicit_ratio(self):
        rng = np.random.default_rng(2)
        v, lw = rng.normal(size=500), 0.3 * rng.normal(size=500)
        w = np.exp(lw)
        est = weighted_estimate(v, lw)
        assert est.mean == pytest.approx((w * v).sum() / w.sum(), rel=1e-13)
        assert est.ess == pytest.approx(w.sum() ** 2 / (w**2).sum())

    def test_ess_rejection(self):
        lw = np.zeros(1000)
        lw[0] = 50.0
        with pytest.raises(WeightDegeneracy):
            weighted_estimate(np.ones(1000), lw)


class TestCompare:
    def test_circle_both_unweighted(self):
        part = Partition.uniform(32)
        pin = sample_batch(SamplerConfig(1, 20_000, part, KernelFamily("intrinsic_gauss", "global_sigma")), C, 0.0)
        ref = reference_bm_sampler(C, part, 0.0, 2, 20_000)
        reps = compare_ensembles(pin, ref, "intrinsic_gauss", C, builtin_functionals(C, 0.0))
        for r in reps:
            assert r.weight_free
            assert abs(r.z_score) < 3
            assert r.pinned_se > 0 and r.weighted_reference_se > 0

    def test_sphere_heat_self_collapse(self):
        part = Partition.uniform(8)
        x = np.array([0.0, 0.0])
        pin = sample_batch(SamplerConfig(1, 5000, part, KernelFamily("heat_restricted", "global_sigma")),
                           S_SELF, x)
        ref = reference_bm_sampler(S_SELF, part, x, 2, 5000)
        reps = compare_ensembles(pin, ref, "heat_restricted", S_SELF, builtin_functionals(S_SELF, x))
        assert all(r.weight_free for r in reps)

    def test_partition_mismatch(self):
        a = reference_bm_sampler(C, Partition.uniform(4), 0.0, 1, 10)
        b = reference_bm_sampler(C, Partition.uniform(8), 0.0, 1, 10)
        with pytest.raises(ValueError):
            compare_ensembles(a, b, "intrinsic_gauss", C, [Functional("x", lambda bb: bb.skeleton[:, -1])])

    def test_ellipse_mesh_refinement(self):
        """Bias shrinks with the mesh: each |difference| at most the previous one plus 2 SE."""
        x, n = 0.0, 100_000
        fns = builtin_functionals(E, x)
        diffs = []
        for steps in (16, 32, 64):
            part = Partition.uniform(steps)
            pin = sample_batch(SamplerConfig(5, n, part, KernelFamily("ambient_gauss", "global_sigma")),
                               E, x, threads=8)
            ref = reference_bm_sampler(E, part, x, 6, n, threads=8)
            diffs.append(compare_ensembles(pin, ref, "ambient_gauss", E, fns))
        for coarse, fine in zip(diffs, diffs[1:]):
            for c, f in zip(coarse, fine):
                assert abs(f.difference) <= abs(c.difference) + 2 * f.combined_se, f.functional_id

    def test_curvature_occupation_functional(self):
        b = reference_bm_sampler(E, Partition.uniform(4), 0.0, 1, 3)
        b.skeleton[:] = 0.0
        np.testing.assert_allclose(curvature_occupation(E)(b), 16.0)

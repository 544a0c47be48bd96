import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from brownian_pinning.geometry import (Circle, Ellipse, GuardError, Sphere2, chord_arc_defect,
                                       make_manifold)

C, E, S = Circle(), Ellipse(1.0, 0.5), Sphere2()


def ellipse_perimeter_oracle(a, b):
    return quad(lambda u: np.hypot(a * np.sin(u), b * np.cos(u)), 0, 2 * np.pi,
                epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def test_volumes():
    assert Circle(2.0).total_volume == pytest.approx(4 * np.pi, rel=1e-12)
    assert Sphere2(1.5).total_volume == pytest.approx(4 * np.pi * 2.25, rel=1e-12)
    assert E.perimeter == pytest.approx(ellipse_perimeter_oracle(1.0, 0.5), rel=1e-10)


def test_dimensions():
    assert (C.intrinsic_dim, C.ambient_dim) == (1, 2)
    assert (E.intrinsic_dim, E.ambient_dim) == (1, 2)
    assert (S.intrinsic_dim, S.ambient_dim) == (2, 3)
    assert Circle(ambient="self").ambient_dim == 1


class TestDistances:
    def test_examples(self):
        assert C.geodesic_distance(0.0, np.pi) == pytest.approx(np.pi)
        assert S.geodesic_distance([0.0, 0.0], [np.pi / 2, 0.0]) == pytest.approx(np.pi / 2)
        assert E.geodesic_distance(0.0, E.perimeter / 2) == pytest.approx(E.perimeter / 2)
        assert C.ambient_distance(0.0, np.pi) == pytest.approx(2.0)
        assert C.ambient_distance(0.0, 0.7) == pytest.approx(2 * np.sin(0.35))
        assert S.ambient_distance([0.0, 0.0], [np.pi / 2, 0.0]) == pytest.approx(np.sqrt(2))

    def test_sphere_small_angles_keep_precision(self):
        x = np.array([1.0, 0.3])
        y = S.move(x, 0.4, 1e-9)
        assert S.geodesic_distance(x, y) == pytest.approx(1e-9, rel=1e-6)

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20))
    def test_curve_metric_properties(self, a, b, c):
        for mf in (C, E):
            dab = mf.geodesic_distance(a, b)
            assert dab == pytest.approx(mf.geodesic_distance(b, a), abs=1e-12)
            assert dab <= mf.geodesic_distance(a, c) + mf.geodesic_distance(c, b) + 1e-12
            assert mf.ambient_distance(a, b) <= dab + 1e-12

    @given(st.tuples(st.floats(0, np.pi), st.floats(0, 2 * np.pi)),
           st.tuples(st.floats(0, np.pi), st.floats(0, 2 * np.pi)))
    def test_sphere_metric_properties(self, x, y):
        d = S.geodesic_distance(x, y)
        assert d == pytest.approx(S.geodesic_distance(y, x), abs=1e-12)
        assert S.ambient_distance(x, y) <= d + 1e-12
        assert 0 <= d <= np.pi + 1e-12


class TestEmbedding:
    def test_examples(self):
        np.testing.assert_allclose(C.embed(0.0), [1, 0], atol=1e-15)
        np.testing.assert_allclose(S.embed([np.pi / 2, np.pi / 2]), [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(E.embed(0.0), [1, 0], atol=1e-15)

    def test_ellipse_is_unit_speed(self):
        s = np.linspace(0, E.perimeter, 2001)
        h = 1e-5
        speed = np.linalg.norm(E.embed(s + h) - E.embed(s - h), axis=-1) / (2 * h)
        np.testing.assert_allclose(speed, 1.0, atol=1e-8)

    def test_ellipse_points_on_curve(self):
        p = E.embed(np.linspace(0, 10, 777))
        np.testing.assert_allclose(p[:, 0] ** 2 + (p[:, 1] / 0.5) ** 2, 1.0, atol=1e-13)

    def test_sphere_chart_round_trip(self):
        rng = np.random.default_rng(0)
        x = np.stack([rng.uniform(0.01, np.pi - 0.01, 50), rng.uniform(0, 2 * np.pi, 50)], -1)
        np.testing.assert_allclose(S.reduce(x), x, atol=1e-12)


def _curve_curvature_fd(mf, s, h=1e-3):
    p0, pp, pm = mf.embed(s), mf.embed(s + h), mf.embed(s - h)
    return np.linalg.norm((pp - 2 * p0 + pm) / h**2)


class TestCurvature:
    def test_circle(self):
        cd = Circle(2.0).curvature_at(1.3)
        assert (cd.scal_L, cd.tau_sq, cd.rbar, cd.ricbar, cd.scal_M) == (0, 0.25, 0, 0, 0)

    def test_sphere_against_finite_differences(self):
        """Second fundamental form by finite differences of the embedding along the frame."""
        x = np.array([1.1, 0.4])
        h = 1e-4
        e_th, e_ph = S.frame(x)
        u = S.unit(x)
        hess = np.zeros((2, 2, 3))
        dirs = [e_th, e_ph]
        for i, a in enumerate(dirs):
            for j, b in enumerate(dirs):
                def f(p, q):
                    v = u + p * a + q * b
                    return v / np.linalg.norm(v)
                hess[i, j] = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)
        # normal part of the Hessian of the projection = second fundamental form
        sff = np.einsum("ijk,k->ij", hess, u)[..., None] * u
        tau = sff[0, 0] + sff[1, 1]
        cd = S.curvature_at(x)
        assert float(tau @ tau) == pytest.approx(cd.tau_sq, rel=1e-6)
        gauss = np.dot(sff[0, 0], sff[1, 1]) - np.dot(sff[0, 1], sff[0, 1])
        assert 2 * gauss == pytest.approx(cd.scal_L, rel=1e-6)

    def test_ellipse_vertex(self):
        assert E.curvature_at(0.0).tau_sq == pytest.approx(16.0, rel=1e-12)
        assert _curve_curvature_fd(E, 0.0) ** 2 == pytest.approx(16.0, rel=1e-5)

    def test_ellipse_curvature_matches_fd_everywhere(self):
        s = np.linspace(0.1, E.perimeter - 0.1, 9)
        k_fd = np.array([_curve_curvature_fd(E, x) for x in s])
        np.testing.assert_allclose(E.curvature(s), k_fd, rtol=1e-5)

    def test_tau_second_order_smooth_along_ellipse(self):
        s0 = 0.7
        tau = lambda s: E.curvature_at(s).tau_sq
        exact = None
        errs = []
        for h in (0.02, 0.01, 0.005):
            d = (tau(s0 + h) - tau(s0 - h)) / (2 * h)
            errs.append(d)
        exact = (4 * errs[2] - errs[1]) / 3
        e = np.abs(np.array(errs) - exact)[:2]
        assert np.log2(e[0] / e[1]) > 1.8

    def test_self_ambient_sphere(self):
        cd = Sphere2(ambient="self").curvature_at(np.array([0.5, 0.5]))
        assert (cd.scal_L, cd.tau_sq, cd.rbar, cd.ricbar, cd.scal_M) == (2, 0, 2, 2, 2)


class TestChordArc:
    def test_circle(self):
        assert chord_arc_defect(C, 0.3, 1.0, 1e-2) == pytest.approx(-1 / 12, abs=1e-3)

    def test_sphere_great_circle(self):
        for bearing in (0.0, 1.0, 2.5):
            assert chord_arc_defect(S, np.array([0.9, 2.0]), bearing, 1e-2) == pytest.approx(-1 / 12, abs=1e-3)

    def test_ellipse_vertex(self):
        assert chord_arc_defect(E, 0.0, 1.0, 1e-2) == pytest.approx(-16 / 12, abs=2e-2)

    def test_ellipse_richardson(self):
        d1 = chord_arc_defect(E, 0.0, 1.0, 2e-2)
        d2 = chord_arc_defect(E, 0.0, 1.0, 1e-2)
        assert (4 * d2 - d1) / 3 == pytest.approx(-16 / 12, abs=1e-4)

    @staticmethod
    def _order(fn, lim):
        s = np.array([0.08, 0.04, 0.02, 0.01])
        err = np.abs([fn(h) - lim for h in s])
        return np.polyfit(np.log(s), np.log(err), 1)[0]

    def test_order_two_convergence(self):
        x = np.array([0.9, 2.0])
        assert self._order(lambda h: chord_arc_defect(C, 0.0, 1.0, h), -1 / 12) >= 1.9
        assert self._order(lambda h: chord_arc_defect(S, x, 0.3, h), -1 / 12) >= 1.9
        assert self._order(lambda h: chord_arc_defect(E, 0.0, 1.0, h), -16 / 12) >= 1.9

    def test_ellipse_generic_point(self):
        """Away from a vertex the curvature slope adds an odd O(s) term; the two-sided mean removes it."""
        lim = -E.curvature_at(0.4).tau_sq / 12
        mean = lambda h: 0.5 * (chord_arc_defect(E, 0.4, 1.0, h) + chord_arc_defect(E, 0.4, -1.0, h))
        assert self._order(mean, lim) >= 1.9
        assert self._order(lambda h: chord_arc_defect(E, 0.4, 1.0, h), lim) >= 0.9

    def test_guards(self):
        with pytest.raises(GuardError):
            chord_arc_defect(C, 0.0, 1.0, 2.0)
        with pytest.raises(GuardError):
            chord_arc_defect(S, np.array([1.0, 0.0]), 0.0, 1.6)
        with pytest.raises(GuardError):
            chord_arc_defect(C, 0.0, 1.0, 0.0)


class TestQuadrature:
    def test_circle(self):
        g = C.build_quadrature(100)
        assert g.node_count == 100
        np.testing.assert_allclose(g.weights, 2 * np.pi / 100)

    def test_sphere(self):
        g = S.build_quadrature(32)
        assert g.node_count == 32 * 64
        assert g.weights.sum() == pytest.approx(4 * np.pi, abs=1e-12)
        assert np.all(g.weights > 0)

    def test_ellipse(self):
        assert E.build_quadrature(256).weights.sum() == pytest.approx(ellipse_perimeter_oracle(1, 0.5), abs=1e-12)

    def test_sphere_integrates_polynomials(self):
        g = S.build_quadrature(16)
        z = np.cos(g.nodes[:, 0])
        assert (g.weights * z**2).sum() == pytest.approx(4 * np.pi / 3, rel=1e-13)

    def test_min_resolution(self):
        with pytest.raises(ValueError):
            C.build_quadrature(8)


def test_make_manifold():
    assert isinstance(make_manifold({"kind": "ellipse", "semi_axis_a": 2, "semi_axis_b": 1}), Ellipse)
    with pytest.raises(ValueError):
        make_manifold({"kind": "torus"})
    with pytest.raises(ValueError):
        Ellipse(0.5, 1.0)

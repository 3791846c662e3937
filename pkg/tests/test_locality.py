import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import quad

from wfp.fields import Grid, SpatialField, Spectrum, forward_transform, plane_wave
from wfp.locality import (
    DegenerateFrequency,
    TheoremSetup,
    dominant_mode_deviation,
    duhamel_approx,
    fit_scatter_constant,
    gradient_bound_ratios,
    outside_window_fraction,
    scattered_energy,
    spectrum_timeline,
    theorem_trajectory,
    verify_theorem,
    window_mask,
    write_theorem_csv,
    write_timeline_csv,
)
from wfp.solver import Medium, SolverConfig


def cos_setup(eps, T=0.05, k0=20, n=4096):
    g = Grid(1, n, 2 * np.pi)
    return TheoremSetup.from_field(SpatialField(g, np.cos(g.coords()[0])), k0, eps, T)


def galerkin_amplitudes(k0, eps, T, half_width=30):
    """Exact modal evolution for c^2 = 1 + eps cos x on [0, 2 pi).

    Truncated to modes k0 +- half_width and integrated with a matrix
    exponential, independent of the finite-difference solver.
    """
    ns = np.arange(k0 - half_width, k0 + half_width + 1)
    diff = ns[:, None] - ns[None, :]
    chat = np.where(diff == 0, 1.0, np.where(np.abs(diff) == 1, eps / 2, 0.0))
    stiff = -ns[:, None] * chat * ns[None, :]
    m = ns.size
    gen = np.block([[np.zeros((m, m)), np.eye(m)], [stiff, np.zeros((m, m))]])
    y0 = np.zeros(2 * m)
    y0[half_width] = 1.0
    y = scipy.linalg.expm(gen * T) @ y0
    return dict(zip(ns.tolist(), y[:m]))


class TestDuhamel:
    def test_zero_at_t0(self):
        assert duhamel_approx(cos_setup(0.01), 21, 0.0) == 0

    def test_zero_without_coupling(self):
        # p = cos x only couples neighbours of k0
        assert abs(duhamel_approx(cos_setup(0.01), 23, 0.05)) < 1e-18

    def test_orthogonal_wavevectors(self):
        g = Grid(2, 32, 2 * np.pi)
        p = Spectrum.from_modes(g, {(-3, 2): 0.25, (3, -2): 0.25})
        s = TheoremSetup((3, 0), 0.01, p, 0.1)
        assert duhamel_approx(s, (0, 2), 0.1) == 0

    def test_matches_quadrature(self):
        s = cos_setup(0.02, T=0.3)
        for n1, t in [(19, 0.3), (21, 0.17), (22, 0.05)]:
            a, b = abs(n1), 20.0
            integrand = lambda r: np.sin(a * t - (a - b) * r) + np.sin(a * t - (a + b) * r)
            val, _ = quad(integrand, 0, t, epsabs=1e-14, epsrel=1e-13)
            phat = s.p_hat[n1 - 20]
            expect = -s.eps * (n1 * 20) / (2 * a) * phat * val
            assert duhamel_approx(s, n1, t) == pytest.approx(expect, abs=1e-10 * max(1, abs(expect)))

    def test_resonant_pair_is_finite(self):
        # |(3, 4)| == |(5, 0)|: the closed form must not divide by zero
        g = Grid(2, 32, 2 * np.pi)
        p = Spectrum.from_modes(g, {(-2, 4): 0.25, (2, -4): 0.25})
        s = TheoremSetup((5, 0), 0.01, p, 0.2)
        t = 0.2
        val = duhamel_approx(s, (3, 4), t)
        assert np.isfinite(val)
        # resonant term reduces to t sin(a t); the other is (cos bt - cos at)/(a+b) = 0
        assert val == pytest.approx(-0.01 * 15 / 10 * 0.25 * t * np.sin(5 * t), rel=1e-12)

    def test_linear_in_eps_and_p(self):
        s1 = cos_setup(0.01)
        s2 = cos_setup(0.02)
        assert duhamel_approx(s2, 21, 0.05) == pytest.approx(2 * duhamel_approx(s1, 21, 0.05), rel=1e-14)
        g = s1.grid
        half = TheoremSetup.from_field(SpatialField(g, 0.5 * np.cos(g.coords()[0])), 20, 0.01, 0.05)
        assert duhamel_approx(half, 21, 0.05) == pytest.approx(0.5 * duhamel_approx(s1, 21, 0.05), rel=1e-12)

    def test_rejects_degenerate_queries(self):
        s = cos_setup(0.01)
        with pytest.raises(ValueError):
            duhamel_approx(s, 20, 0.01)
        with pytest.raises(DegenerateFrequency):
            duhamel_approx(s, 0, 0.01)
        with pytest.raises(ValueError):
            duhamel_approx(s, 21, 1.0)


class TestSetup:
    def test_eta(self):
        assert cos_setup(0.01).eta == pytest.approx(0.01 * 0.05 * 20)

    @pytest.mark.parametrize("eps", [-0.01, 0.2])
    def test_eps_range(self, eps):
        with pytest.raises(ValueError):
            cos_setup(eps)

    def test_rejects_mean_and_large_p(self):
        g = Grid(1, 64, 2 * np.pi)
        (x,) = g.coords()
        with pytest.raises(ValueError):
            TheoremSetup.from_field(SpatialField(g, 0.1 + np.cos(x)), 5, 0.01, 0.1)
        with pytest.raises(ValueError):
            TheoremSetup.from_field(SpatialField(g, 2 * np.cos(x)), 5, 0.01, 0.1)

    def test_zero_k0(self):
        with pytest.raises(DegenerateFrequency):
            cos_setup(0.01, k0=0)

    def test_validity_regime(self):
        with pytest.raises(ValueError, match="eta"):
            verify_theorem(cos_setup(0.05, T=0.25), [21], SolverConfig(0.25))


class TestVerify:
    def test_eps_zero_gives_zero_error(self):
        reps = verify_theorem(cos_setup(0.0, n=1024), [19, 21], SolverConfig(0.05))
        for r in reps:
            assert abs(r.u_true) < 1e-13 and r.u_approx == 0 and r.error_over_eta == 0.0

    def test_bookkeeping(self):
        for r in verify_theorem(cos_setup(0.01, n=1024), [18, 19, 21, 22], SolverConfig(0.05)):
            assert r.error_over_eta * r.eta == pytest.approx(r.abs_error, rel=1e-12)
            assert r.abs_error == pytest.approx(abs(r.u_true - r.u_approx), rel=1e-12)

    def test_solver_amplitudes_match_galerkin_oracle(self):
        s = cos_setup(0.02, T=0.25)
        exact = galerkin_amplitudes(20, 0.02, 0.25)
        for r in verify_theorem(s, [18, 19, 21, 22], SolverConfig(0.25)):
            assert abs(r.u_true - exact[r.n1[0]]) < 1e-9

    def test_first_order_error_shrinks_with_eps(self):
        errs = [max(r.error_over_eta for r in verify_theorem(cos_setup(e), [19, 21], SolverConfig(0.05))) for e in (0.04, 0.02, 0.01)]
        assert errs[0] > errs[1] > errs[2]

    def test_without_richardson_still_close(self):
        s = cos_setup(0.01, n=2048)
        plain = verify_theorem(s, [21], SolverConfig(0.05), richardson=False)[0]
        extrap = verify_theorem(s, [21], SolverConfig(0.05))[0]
        assert abs(plain.u_true - extrap.u_true) < 1e-2 * abs(extrap.u_true)

    def test_under_resolved_grid(self):
        with pytest.raises(ValueError, match="points per wavelength"):
            verify_theorem(cos_setup(0.01, n=128), [21], SolverConfig(0.05))

    def test_csv(self, tmp_path):
        s = cos_setup(0.01, n=1024)
        write_theorem_csv(tmp_path / "t.csv", s, verify_theorem(s, [19, 21], SolverConfig(0.05)))
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0].startswith("eps,T,k0,n1,eta,abs_err,err_over_eta")
        assert len(lines) == 3


@pytest.fixture(scope="module")
def snaps():
    s = cos_setup(0.04, T=0.5, n=1024)
    return s, theorem_trajectory(s, SolverConfig(0.5), n_snaps=11)


class TestEnergyBounds:
    def test_gradient_bound(self, snaps):
        s, traj = snaps
        assert gradient_bound_ratios(s, traj).max() <= 1 + 1e-3

    def test_dominant_mode_deviation(self, snaps):
        s, traj = snaps
        dev, bound = dominant_mode_deviation(s, traj)
        assert dev[0] < 1e-14
        assert np.all(dev[1:] <= bound[1:])

    def test_scatter_constant(self, snaps):
        s, traj = snaps
        assert 0 < fit_scatter_constant(s, traj) <= 50

    def test_pure_wave_has_no_scattered_energy(self):
        g = Grid(1, 64, 2 * np.pi)
        u = forward_transform(plane_wave(g, 5))
        assert scattered_energy(u, Spectrum.zeros(g), 5, 0.01) == 0.0

    def test_scattered_energy_example(self):
        g = Grid(1, 64, 2 * np.pi)
        u = Spectrum.from_modes(g, {5: 1.0, 6: 0.1})
        v = Spectrum.from_modes(g, {4: 0.2})
        expect = 0.2**2 + 0.99 * 36 * 0.01
        assert scattered_energy(u, v, 5, 0.01) == pytest.approx(expect, rel=1e-13)


class TestTimeline:
    def test_first_frame_is_initial_spectrum(self):
        g = Grid(1, 128)
        (x,) = g.coords()
        f = SpatialField(g, np.sin(2 * np.pi * 10 * x))
        frames = spectrum_timeline(f, Medium.homogeneous(g), SolverConfig(0.02), [0.0, 0.01, 0.02])
        assert np.allclose(frames[0].coeffs, forward_transform(f).coeffs, atol=1e-15)

    def test_homogeneous_support_stays_put(self):
        g = Grid(1, 128)
        (x,) = g.coords()
        f = SpatialField(g, np.sin(2 * np.pi * 10 * x))
        last = spectrum_timeline(f, Medium.homogeneous(g), SolverConfig(0.02), [0.02])[-1]
        off = np.ones(128, bool)
        off[[10, -10]] = False
        assert np.abs(last.coeffs[off]).max() < 1e-14

    def test_locality_in_weak_medium(self):
        g = Grid(1, 1024)
        (x,) = g.coords()
        p = SpatialField(g, np.sin(2 * np.pi * 3 * x) * 0.5 + 0.5 * np.cos(2 * np.pi * 5 * x))
        m = Medium.perturbed(p, 0.01)
        f = SpatialField(g, np.sin(2 * np.pi * 40 * x))
        traj_u = spectrum_timeline(f, m, SolverConfig(0.02), [0.02])[-1]
        frac = outside_window_fraction(traj_u, Spectrum.zeros(g), [40, -40], 7)
        assert frac < 1e-2

    def test_timeline_csv(self, tmp_path):
        g = Grid(1, 16)
        frames = [Spectrum.from_modes(g, {2: 0.5, -2: 0.5})]
        write_timeline_csv(tmp_path / "tl.csv", [0.0], frames)
        lines = (tmp_path / "tl.csv").read_text().splitlines()
        assert lines[0] == "t,k0,abs_u"
        assert sorted(lines[1:]) == ["0,-2,5.0000000000e-01", "0,2,5.0000000000e-01"]


def test_window_mask_counts():
    g = Grid(2, 32)
    assert window_mask(g, [(5, 5)], 2).sum() == 25
    assert window_mask(g, [(5, 5), (-5, -5)], 0).sum() == 2

import numpy as np
import pytest

from ebmrec.kspace import (
    ConvergenceError,
    CoilSensitivities,
    KSpaceMeasurement,
    SamplingMask,
    dc_project_calibfree,
    dc_project_multicoil,
    dc_project_single,
    forward,
    make_mask,
    zero_filled,
)
from ebmrec.metrics import psnr
from ebmrec.numerics import RandomStream, fft2
from ebmrec.phantom import PhantomSpec, make_phantom


def dense_dft_matrix(n):
    """Unitary 2-D DFT as a dense matrix acting on row-major flattened images."""
    f1 = np.fft.fft(np.eye(n), norm="ortho")
    return np.kron(f1, f1)


def random_complex(rng, h, w):
    return rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))


@pytest.fixture
def mask8(rng):
    return make_mask("random2d", 2.5, 8, 8, 0.05, RandomStream(77))


class TestMakeMask:
    def test_full_sampling_all_true(self):
        for pattern in ("cartesian1d", "pseudo_radial", "random2d", "poisson_disk"):
            m = make_mask(pattern, 1, 32, 32, 0.08)
            assert m.keep.all()

    def test_cartesian_row_counts(self):
        m = make_mask("cartesian1d", 4, 64, 64, 0.0625, RandomStream(5))
        rows = m.keep.any(axis=1)
        n_rows = int(rows.sum())
        assert 14 <= n_rows <= 18  # 16 +- 2
        # whole rows only
        assert np.array_equal(m.keep, np.broadcast_to(rows[:, None], (64, 64)))
        # the 4 central rows survive the ifftshift to indices {0, 1, 63} + one more
        centered = np.fft.fftshift(m.keep, axes=0)
        assert centered[30:34].all()

    def test_pseudo_radial_fraction(self):
        m = make_mask("pseudo_radial", 5, 64, 64, 0.02, RandomStream(6))
        assert 0.17 <= m.kept_fraction <= 0.23

    @pytest.mark.parametrize("pattern", ["cartesian1d", "pseudo_radial", "random2d", "poisson_disk"])
    @pytest.mark.parametrize("accel", [2.0, 3.0, 4.0])
    def test_kept_fraction_within_slack(self, pattern, accel):
        cf = 0.0625 if pattern == "cartesian1d" else 0.04
        m = make_mask(pattern, accel, 64, 64, cf, RandomStream(9))
        target = 1.0 / accel
        assert abs(m.kept_fraction - target) <= 0.15 * target

    def test_center_region_always_kept(self):
        for pattern in ("pseudo_radial", "random2d", "poisson_disk"):
            m = make_mask(pattern, 4, 64, 64, 0.04, RandomStream(10))
            centered = np.fft.fftshift(m.keep)
            yy, xx = np.mgrid[0:64, 0:64]
            radius = np.sqrt(0.04 * 64 * 64 / np.pi)
            disk = (yy - 31.5) ** 2 + (xx - 31.5) ** 2 <= radius**2
            assert centered[disk].all()

    def test_infeasible_center_fraction(self):
        with pytest.raises(ValueError):
            make_mask("cartesian1d", 4, 64, 64, 0.5, RandomStream(0))

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            make_mask("spiral", 2, 32, 32, 0.05, RandomStream(0))
        with pytest.raises(ValueError):
            make_mask("random2d", 0.5, 32, 32, 0.05, RandomStream(0))

    def test_mask_type_validates(self):
        with pytest.raises(ValueError):
            SamplingMask(np.zeros((8, 8), dtype=bool), "random2d", 2.0)
        patchy = np.zeros((8, 8), dtype=bool)
        patchy[0, 0] = True
        with pytest.raises(ValueError):  # not whole rows
            SamplingMask(patchy, "cartesian1d", 64.0)

    def test_deterministic(self):
        a = make_mask("poisson_disk", 3, 32, 32, 0.04, RandomStream(3))
        b = make_mask("poisson_disk", 3, 32, 32, 0.04, RandomStream(3))
        np.testing.assert_array_equal(a.keep, b.keep)


class TestForward:
    def test_full_mask_is_fft(self, rng):
        m = make_mask("random2d", 1, 16, 16, 0.05)
        x = random_complex(rng, 16, 16)
        y = forward(x, m)
        np.testing.assert_allclose(y.data[0], fft2(x), atol=1e-14)

    def test_zero_image_noise_only_on_kept(self, mask8):
        y = forward(np.zeros((8, 8), dtype=complex), mask8, noise_std=0.3, stream=RandomStream(4))
        assert np.all(y.data[0][~mask8.keep] == 0)
        assert np.any(y.data[0][mask8.keep] != 0)

    def test_delta_spectrum_on_kept(self, mask8):
        x = np.zeros((8, 8), dtype=complex)
        x[0, 0] = 1.0
        y = forward(x, mask8)
        want = 1.0 / 8.0  # 1/sqrt(64)
        np.testing.assert_allclose(y.data[0][mask8.keep], want, atol=1e-14)
        assert np.all(y.data[0][~mask8.keep] == 0)

    def test_linearity(self, mask8, rng):
        x1, x2 = random_complex(rng, 8, 8), random_complex(rng, 8, 8)
        a, b = 0.7 - 1.1j, 2.0 + 0.4j
        lhs = forward(a * x1 + b * x2, mask8).data
        rhs = a * forward(x1, mask8).data + b * forward(x2, mask8).data
        assert np.abs(lhs - rhs).max() < 1e-12 * np.abs(rhs).max()

    def test_noise_std_calibrated(self, rng):
        m = make_mask("random2d", 1, 32, 32, 0.05)
        y = forward(np.zeros((32, 32), dtype=complex), m, noise_std=0.5, stream=RandomStream(8))
        # complex variance |n|^2 should average noise_std^2
        assert abs(np.mean(np.abs(y.data) ** 2) - 0.25) < 0.01

    def test_shape_mismatch_rejected(self, mask8, rng):
        with pytest.raises(ValueError):
            forward(random_complex(rng, 16, 16), mask8)
        maps = np.ones((2, 16, 16), dtype=complex) / np.sqrt(2)
        with pytest.raises(ValueError):
            forward(random_complex(rng, 8, 8), mask8, CoilSensitivities(maps))


class TestZeroFilled:
    def test_full_mask_exact(self, rng):
        m = make_mask("random2d", 1, 16, 16, 0.05)
        x = random_complex(rng, 16, 16)
        assert np.abs(zero_filled(forward(x, m)) - x).max() < 1e-12

    def test_zero_measurement(self, mask8):
        y = KSpaceMeasurement(np.zeros((1, 8, 8), dtype=complex), mask8)
        np.testing.assert_array_equal(zero_filled(y), np.zeros((8, 8), dtype=complex))

    def test_undersampling_degrades_psnr(self):
        x = make_phantom(PhantomSpec(height=64, width=64, seed=3))
        full = make_mask("cartesian1d", 1, 64, 64, 0.08)
        quarter = make_mask("cartesian1d", 4, 64, 64, 0.0625, RandomStream(12))
        p_full = psnr(x, zero_filled(forward(x, full)))
        p_quarter = psnr(x, zero_filled(forward(x, quarter)))
        assert p_quarter < p_full

    def test_multicoil_adjoint_combine(self, rng):
        from ebmrec.phantom import simulate_sensitivities

        x = random_complex(rng, 16, 16)
        coils = simulate_sensitivities(3, (16, 16))
        m = make_mask("random2d", 1, 16, 16, 0.05)
        y = forward(x, m, coils)
        np.testing.assert_allclose(zero_filled(y, coils), x, atol=1e-10)

    def test_calibfree_rss(self, rng):
        from ebmrec.phantom import simulate_sensitivities

        x = random_complex(rng, 16, 16)
        coils = simulate_sensitivities(4, (16, 16))
        m = make_mask("random2d", 1, 16, 16, 0.05)
        y = forward(x, m, coils)
        out = zero_filled(y)  # no maps: RSS magnitude
        np.testing.assert_allclose(np.abs(out), np.abs(x), atol=1e-10)


class TestDCProjectSingle:
    def test_hard_dc_replaces_kept_only(self, mask8, rng):
        x0 = random_complex(rng, 8, 8)
        xt = random_complex(rng, 8, 8)
        y = forward(x0, mask8)
        out = dc_project_single(xt, y, 0.0)
        k_out = fft2(out)
        k_xt = fft2(xt)
        np.testing.assert_allclose(k_out[mask8.keep], y.data[0][mask8.keep], atol=1e-13)
        np.testing.assert_allclose(k_out[~mask8.keep], k_xt[~mask8.keep], atol=1e-13)
        again = dc_project_single(out, y, 0.0)
        np.testing.assert_allclose(again, out, atol=1e-13)

    def test_huge_lam_returns_estimate(self, mask8, rng):
        xt = random_complex(rng, 8, 8)
        y = forward(random_complex(rng, 8, 8), mask8)
        out = dc_project_single(xt, y, 1e9)
        assert np.abs(out - xt).max() / np.abs(xt).max() < 1e-6

    @pytest.mark.parametrize("lam", [0.0, 0.1, 1.0, 10.0])
    def test_matches_dense_solve(self, mask8, rng, lam):
        x0 = random_complex(rng, 8, 8)
        xt = random_complex(rng, 8, 8)
        y = forward(x0, mask8)
        got = dc_project_single(xt, y, lam)

        F = dense_dft_matrix(8)
        P = np.diag(mask8.keep.ravel().astype(float))
        yvec = y.data[0].ravel()
        if lam == 0:
            merged = np.where(mask8.keep.ravel(), yvec, F @ xt.ravel())
            want = (F.conj().T @ merged).reshape(8, 8)
        else:
            A = F.conj().T @ P @ F + lam * np.eye(64)
            b = F.conj().T @ P @ yvec + lam * xt.ravel()
            want = np.linalg.solve(A, b).reshape(8, 8)
        assert np.abs(got - want).max() < 1e-10

    def test_objective_not_increased(self, mask8, rng):
        def objective(x, y, xt, lam):
            data = np.linalg.norm(y.mask.keep * (fft2(x) - y.data[0])) ** 2
            return data + lam * np.linalg.norm(x - xt) ** 2

        for lam in (0.0, 0.5, 2.0):
            x0 = random_complex(rng, 8, 8)
            xt = random_complex(rng, 8, 8)
            y = forward(x0, mask8)
            out = dc_project_single(xt, y, lam)
            val = objective(out, y, xt, lam)
            assert val <= objective(xt, y, xt, lam) + 1e-9
            assert val <= objective(zero_filled(y), y, xt, lam) + 1e-9

    def test_rejects_negative_lam(self, mask8, rng):
        y = forward(random_complex(rng, 8, 8), mask8)
        with pytest.raises(ValueError):
            dc_project_single(random_complex(rng, 8, 8), y, -0.1)


class TestDCProjectMulticoil:
    def test_reduces_to_single_coil(self, mask8, rng):
        x0, xt = random_complex(rng, 8, 8), random_complex(rng, 8, 8)
        y = forward(x0, mask8)
        ones = CoilSensitivities(np.ones((1, 8, 8), dtype=complex))
        got = dc_project_multicoil(xt, y, ones, 0.7, tol=1e-12, max_iter=300)
        want = dc_project_single(xt, y, 0.7)
        assert np.abs(got - want).max() < 1e-8

    def test_full_mask_tiny_lam_recovers(self, rng):
        from ebmrec.phantom import simulate_sensitivities

        m = make_mask("random2d", 1, 16, 16, 0.05)
        x = random_complex(rng, 16, 16)
        coils = simulate_sensitivities(3, (16, 16))
        y = forward(x, m, coils)
        got = dc_project_multicoil(np.zeros_like(x), y, coils, 1e-6, tol=1e-10, max_iter=400)
        assert np.abs(got - x).max() < 1e-4

    def test_matches_dense_normal_equations(self, mask8, rng):
        nc = 2
        maps = rng.normal(size=(nc, 8, 8)) + 1j * rng.normal(size=(nc, 8, 8))
        maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))[None]
        coils = CoilSensitivities(maps)
        x0, xt = random_complex(rng, 8, 8), random_complex(rng, 8, 8)
        data = np.stack([fft2(maps[c] * x0) * mask8.keep for c in range(nc)])
        y = KSpaceMeasurement(data, mask8)
        lam = 1.0
        got = dc_project_multicoil(xt, y, coils, lam, tol=1e-12, max_iter=500)

        F = dense_dft_matrix(8)
        P = np.diag(mask8.keep.ravel().astype(float))
        E = np.vstack([P @ F @ np.diag(maps[c].ravel()) for c in range(nc)])
        A = E.conj().T @ E + lam * np.eye(64)
        b = E.conj().T @ np.concatenate([data[c].ravel() for c in range(nc)]) + lam * xt.ravel()
        want = np.linalg.solve(A, b).reshape(8, 8)
        assert np.abs(got - want).max() < 1e-8

    def test_residual_bound_on_return(self, mask8, rng):
        from ebmrec.phantom import simulate_sensitivities

        coils = simulate_sensitivities(2, (8, 8))
        x0, xt = random_complex(rng, 8, 8), random_complex(rng, 8, 8)
        y = forward(x0, mask8, coils)
        lam, tol = 0.3, 1e-8
        x = dc_project_multicoil(xt, y, coils, lam, tol=tol, max_iter=300)

        keep = mask8.keep[None]
        from ebmrec.numerics import ifft2

        ax = np.sum(np.conj(coils.maps) * ifft2(fft2(coils.maps * x[None]) * keep), axis=0) + lam * x
        b = np.sum(np.conj(coils.maps) * ifft2(y.data * keep), axis=0) + lam * xt
        assert np.linalg.norm(ax - b) / np.linalg.norm(b) <= tol

    def test_nonconvergence_reports_residual(self, mask8, rng):
        from ebmrec.phantom import simulate_sensitivities

        coils = simulate_sensitivities(2, (8, 8))
        y = forward(random_complex(rng, 8, 8), mask8, coils)
        with pytest.raises(ConvergenceError, match="residual"):
            dc_project_multicoil(
                random_complex(rng, 8, 8), y, coils, 0.3, tol=1e-14, max_iter=1
            )

    def test_rejects_lam_zero(self, mask8, rng):
        from ebmrec.phantom import simulate_sensitivities

        coils = simulate_sensitivities(2, (8, 8))
        y = forward(random_complex(rng, 8, 8), mask8, coils)
        with pytest.raises(ValueError):
            dc_project_multicoil(random_complex(rng, 8, 8), y, coils, 0.0)


class TestDCProjectCalibfree:
    def test_single_coil_degenerate(self, mask8, rng):
        x0, xt = random_complex(rng, 8, 8), random_complex(rng, 8, 8)
        y = forward(x0, mask8)
        got = dc_project_calibfree(xt[None], y, 0.4)
        want = dc_project_single(xt, y, 0.4)
        np.testing.assert_array_equal(got[0], want)

    def test_hard_dc_full_mask_returns_measured(self, rng):
        from ebmrec.phantom import simulate_sensitivities

        m = make_mask("random2d", 1, 8, 8, 0.05)
        x = random_complex(rng, 8, 8)
        coils = simulate_sensitivities(3, (8, 8))
        y = forward(x, m, coils)
        out = dc_project_calibfree(np.zeros((3, 8, 8), dtype=complex), y, 0.0)
        for c in range(3):
            np.testing.assert_allclose(out[c], coils.maps[c] * x, atol=1e-12)

    def test_per_coil_equivalence_bitwise(self, mask8, rng):
        nc = 3
        maps = np.full((nc, 8, 8), 1 / np.sqrt(nc), dtype=complex)
        coils = CoilSensitivities(maps)
        x0 = random_complex(rng, 8, 8)
        y = forward(x0, mask8, coils)
        xt = np.stack([random_complex(rng, 8, 8) for _ in range(nc)])
        out = dc_project_calibfree(xt, y, 0.2)
        for c in range(nc):
            yc = KSpaceMeasurement(y.data[c][None], mask8)
            np.testing.assert_array_equal(out[c], dc_project_single(xt[c], yc, 0.2))

    def test_coil_count_mismatch_rejected(self, mask8, rng):
        from ebmrec.phantom import simulate_sensitivities

        coils = simulate_sensitivities(3, (8, 8))
        y = forward(random_complex(rng, 8, 8), mask8, coils)
        with pytest.raises(ValueError):
            dc_project_calibfree(np.zeros((2, 8, 8), dtype=complex), y, 0.1)


class TestMeasurementType:
    def test_rejects_offmask_energy(self, mask8):
        data = np.ones((1, 8, 8), dtype=complex)
        if (~mask8.keep).any():
            with pytest.raises(ValueError):
                KSpaceMeasurement(data, mask8)

    def test_rejects_shape_mismatch(self, mask8):
        with pytest.raises(ValueError):
            KSpaceMeasurement(np.zeros((1, 4, 4), dtype=complex), mask8)

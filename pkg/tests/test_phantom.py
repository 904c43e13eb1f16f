import numpy as np
import pytest

from ebmrec.kspace import forward, make_mask, zero_filled
from ebmrec.numerics import RandomStream
from ebmrec.phantom import PhantomSpec, make_dataset, make_phantom, simulate_sensitivities


class TestMakePhantom:
    def test_zero_shapes_gives_zero_image(self):
        spec = PhantomSpec(min_shapes=0, max_shapes=0, height=32, width=32)
        img = make_phantom(spec, RandomStream(1))
        np.testing.assert_array_equal(img, np.zeros((32, 32), dtype=complex))

    def test_same_stream_reproduces(self):
        spec = PhantomSpec(height=32, width=32)
        a = make_phantom(spec, RandomStream(5))
        b = make_phantom(spec, RandomStream(5))
        np.testing.assert_array_equal(a, b)

    def test_seed_field_is_default_stream(self):
        spec = PhantomSpec(height=32, width=32, seed=9)
        np.testing.assert_array_equal(make_phantom(spec), make_phantom(spec, RandomStream(9)))

    def test_magnitude_normalized(self):
        for seed in range(5):
            img = make_phantom(PhantomSpec(height=32, width=32), RandomStream(seed))
            mag = np.abs(img)
            assert abs(mag.max() - 1.0) < 1e-12
            assert mag.min() >= 0.0

    def test_phase_bounded_by_amplitude(self):
        spec = PhantomSpec(height=32, width=32, phase_amplitude=0.4)
        img = make_phantom(spec, RandomStream(2))
        support = np.abs(img) > 1e-6
        assert np.abs(np.angle(img[support])).max() <= 0.4 + 1e-9

    def test_blobs_kind(self):
        img = make_phantom(PhantomSpec(kind="blobs", height=32, width=32), RandomStream(3))
        assert abs(np.abs(img).max() - 1.0) < 1e-12

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            PhantomSpec(kind="squares")
        with pytest.raises(ValueError):
            PhantomSpec(min_shapes=5, max_shapes=2)
        with pytest.raises(ValueError):
            PhantomSpec(phase_amplitude=-0.1)


class TestMakeDataset:
    def test_split_arithmetic(self):
        spec = PhantomSpec(height=16, width=16)
        train, test = make_dataset(spec, 2, RandomStream(1))
        assert len(train) == 1 and len(test) == 1
        train, test = make_dataset(spec, 20, RandomStream(1))
        assert len(train) == 18 and len(test) == 2

    def test_disjoint_and_distinct(self):
        spec = PhantomSpec(height=16, width=16)
        train, test = make_dataset(spec, 10, RandomStream(2))
        for a in train:
            for b in test:
                assert np.linalg.norm(a - b) > 0

    def test_distinct_seeds_distinct_phantoms(self):
        spec = PhantomSpec(height=16, width=16)
        a, _ = make_dataset(spec, 4, RandomStream(3))
        b, _ = make_dataset(spec, 4, RandomStream(4))
        assert all(np.linalg.norm(x - y) > 0 for x, y in zip(a, b))

    def test_reproducible(self):
        spec = PhantomSpec(height=16, width=16)
        a_train, a_test = make_dataset(spec, 6, RandomStream(7))
        b_train, b_test = make_dataset(spec, 6, RandomStream(7))
        for a, b in zip(a_train + a_test, b_train + b_test):
            np.testing.assert_array_equal(a, b)

    def test_count_too_small(self):
        with pytest.raises(ValueError):
            make_dataset(PhantomSpec(), 1, RandomStream(0))


class TestSensitivities:
    def test_single_coil_constant_ones(self):
        coils = simulate_sensitivities(1, (16, 16))
        np.testing.assert_array_equal(coils.maps, np.ones((1, 16, 16), dtype=complex))

    @pytest.mark.parametrize("n_coils", [2, 4, 8])
    def test_sos_is_one_everywhere(self, n_coils):
        coils = simulate_sensitivities(n_coils, (32, 32))
        sos = np.sum(np.abs(coils.maps) ** 2, axis=0)
        np.testing.assert_allclose(sos, 1.0, atol=1e-12)

    def test_forward_zero_filled_roundtrip(self):
        x = make_phantom(PhantomSpec(height=32, width=32), RandomStream(11))
        coils = simulate_sensitivities(4, (32, 32))
        full = make_mask("random2d", 1, 32, 32, 0.05)
        y = forward(x, full, coils)
        np.testing.assert_allclose(zero_filled(y, coils), x, atol=1e-10)

    def test_rejects_zero_coils(self):
        with pytest.raises(ValueError):
            simulate_sensitivities(0, (8, 8))

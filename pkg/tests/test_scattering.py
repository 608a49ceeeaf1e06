import numpy as np
import pytest
from scipy.ndimage import convolve1d

from liwn.dtcwt import dtcwt_forward, fold_trees, get_filters
from liwn.scattering import (GAMMA, PreconditionError, ScatterLayout, StabilityProbe,
                             modulus, modulus_backward, propagate, propagate_backward,
                             relative_distance, scatter, scatter_distance, scatter_order1,
                             scatter_order2, shift_image, shift_ratio, smooth_displacement,
                             warp_curve, warp_image, wavelet_modulus_propagator)


def naive_propagator(x, f):
    """Level-1 bands by direct separable filtering and explicit quadrant combination."""
    def col(a, h):
        return convolve1d(a, h, axis=-2, mode="reflect")

    def row(a, h):
        return convolve1d(a, h, axis=-1, mode="reflect")

    lo, hi = col(x, f.h0o), col(x, f.h1o)
    quads = {"lolo": row(lo, f.h0o), "horiz": row(hi, f.h0o),
             "vert": row(lo, f.h1o), "diag": row(hi, f.h1o)}

    def q2c(y):
        p, q = y[..., 0::2, 0::2], y[..., 0::2, 1::2]
        r, s = y[..., 1::2, 0::2], y[..., 1::2, 1::2]
        k = np.sqrt(0.5)
        return k * ((p - s) + 1j * (q + r)), k * ((p + s) + 1j * (q - r))

    bands = [None] * 6
    for name, (i, j) in (("horiz", (0, 5)), ("diag", (1, 4)), ("vert", (2, 3))):
        bands[i], bands[j] = q2c(quads[name])
    C = x.shape[0]
    out = np.zeros((C, 7) + bands[0].shape[-2:])
    out[:, 0] = fold_trees(quads["lolo"])
    for k in range(6):
        out[:, k + 1] = np.abs(bands[k])
    return out.reshape(7 * C, *out.shape[-2:])


class TestModulus:
    def test_values(self):
        np.testing.assert_allclose(modulus(np.array([3.0]), np.array([4.0])), [5.0])

    def test_smooth_floor(self):
        m = modulus(np.zeros(1), np.zeros(1), floor=0.1)
        np.testing.assert_allclose(m, [0.0])

    def test_gradient_zero_at_origin(self):
        gr, gi = modulus_backward(np.ones(2), np.zeros(2), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(gr, [0.0, 0.0])
        np.testing.assert_array_equal(gi, [0.0, 1.0])


class TestPropagator:
    def test_channel_count(self, rng):
        assert wavelet_modulus_propagator(rng.standard_normal((3, 16, 16))).shape == (21, 8, 8)

    def test_constant_input(self):
        z = wavelet_modulus_propagator(np.full((2, 16, 16), 1.5)).reshape(2, 7, 8, 8)
        # the tree fold has DC gain 2
        np.testing.assert_allclose(z[:, 0], 3.0, rtol=1e-12)
        assert np.abs(z[:, 1:]).max() < 1e-12

    def test_equals_composition(self, rng):
        x = rng.standard_normal((3, 16, 16))
        pyr = dtcwt_forward(x, 1)
        mag = np.sqrt(pyr.real[0] ** 2 + pyr.imag[0] ** 2)
        ref = np.concatenate([pyr.decimated_lowpass()[:, None], mag], axis=1).reshape(21, 8, 8)
        np.testing.assert_array_equal(wavelet_modulus_propagator(x), ref)

    @pytest.mark.parametrize("pair", [("near_sym_a", "qshift_a"), ("near_sym_b", "qshift_b")])
    def test_matches_direct_filtering(self, rng, pair):
        f = get_filters(*pair)
        x = rng.standard_normal((2, 8, 8))
        np.testing.assert_allclose(wavelet_modulus_propagator(x, f), naive_propagator(x, f),
                                   atol=1e-12)

    def test_magnitudes_nonnegative(self, rng):
        z = wavelet_modulus_propagator(rng.standard_normal((3, 16, 16))).reshape(3, 7, 8, 8)
        assert z[:, 1:].min() >= 0

    def test_odd_extent(self):
        with pytest.raises(ValueError):
            wavelet_modulus_propagator(np.zeros((1, 9, 8)))

    def test_batched(self, rng):
        x = rng.standard_normal((2, 3, 8, 8))
        np.testing.assert_allclose(wavelet_modulus_propagator(x)[1], wavelet_modulus_propagator(x[1]))

    def test_backward_is_vjp(self, rng):
        x = rng.standard_normal((2, 8, 8))
        z, cache = propagate(x)
        g = rng.standard_normal(z.shape)
        gx = propagate_backward(g, cache)
        d = rng.standard_normal(x.shape)
        h = 1e-6
        fd = (np.sum(g * wavelet_modulus_propagator(x + h * d))
              - np.sum(g * wavelet_modulus_propagator(x - h * d))) / (2 * h)
        np.testing.assert_allclose(np.sum(gx * d), fd, rtol=1e-6)


class TestLayout:
    @pytest.mark.parametrize("C,order", [(1, 1), (3, 1), (3, 2), (16, 2)])
    def test_ranges_partition(self, C, order):
        layout = ScatterLayout.build(C, order)
        covered = np.zeros(layout.total_channels, dtype=int)
        for e in layout.entries:
            covered[e.start:e.stop] += 1
        np.testing.assert_array_equal(covered, 1)
        assert layout.total_channels == C * GAMMA ** order

    def test_rgb_order2_counts(self):
        layout = ScatterLayout.build(3, 2)
        assert layout.total_channels == 147
        assert layout.counts() == {"S0": 3, "U1(phi)": 18, "S1": 18, "U2": 108}

    def test_paths(self):
        layout = ScatterLayout.build(1, 2)
        e = layout.entries[7 * 3 + 5]
        assert e.gammas == (3, 5)
        assert e.path == (75, 135)
        assert e.kind == "U2"

    def test_channels_selector(self):
        layout = ScatterLayout.build(2, 2)
        np.testing.assert_array_equal(layout.channels("S0"), [0, 49])
        assert len(layout.channels("U2", channel=1)) == 36


class TestScatterOrder2:
    def test_shape(self, rng):
        s, layout = scatter_order2(rng.standard_normal((3, 32, 32)))
        assert s.shape == (147, 8, 8)
        assert layout.total_channels == 147

    def test_order1(self, rng):
        s, layout = scatter_order1(rng.standard_normal((3, 32, 32)))
        assert s.shape == (21, 16, 16) and layout.total_channels == 21

    def test_needs_multiple_of_four(self):
        with pytest.raises(ValueError):
            scatter_order2(np.zeros((3, 30, 30)))
        with pytest.raises(ValueError):
            scatter(np.zeros((1, 8, 8)), order=3)

    def test_magnitude_channels_nonnegative(self, rng):
        s, layout = scatter_order2(rng.standard_normal((3, 32, 32)))
        mag = [e.start for e in layout.entries if e.gammas[-1] != 0]
        assert s[mag].min() >= 0

    def test_is_two_propagators(self, rng):
        x = rng.standard_normal((3, 16, 16))
        np.testing.assert_array_equal(scatter(x),
                                      wavelet_modulus_propagator(wavelet_modulus_propagator(x)))


class TestDistance:
    def test_zero_and_symmetric(self, rng):
        a, b = rng.standard_normal((2, 3, 16, 16))
        assert scatter_distance(a, a) == 0
        assert scatter_distance(a, b) == pytest.approx(scatter_distance(b, a), rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            scatter_distance(np.zeros((1, 8, 8)), np.zeros((1, 16, 16)))

    def test_nonexpansive_on_random_pairs(self, rng):
        for _ in range(10):
            a = rng.standard_normal((3, 32, 32))
            b = a + rng.uniform(0.01, 1.0) * rng.standard_normal(a.shape)
            assert scatter_distance(a, b) <= np.linalg.norm(a - b) * (1 + 1e-6)

    def test_energy_bounded(self, rng):
        for _ in range(10):
            x = rng.standard_normal((3, 32, 32))
            assert np.linalg.norm(scatter(x)) <= (1 + 1e-6) * np.linalg.norm(x)


class TestWarp:
    def test_zero_field_identity(self, rng):
        x = rng.standard_normal((2, 12, 12))
        np.testing.assert_array_equal(warp_image(x, StabilityProbe(np.zeros((2, 12, 12)))), x)

    def test_integer_shift(self, rng):
        x = rng.standard_normal((12, 12))
        np.testing.assert_allclose(shift_image(x, 2)[2:], x[:-2])
        np.testing.assert_allclose(shift_image(x, 0, -3)[:, :-3], x[:, 3:])
        # symmetric extension at the border
        np.testing.assert_allclose(shift_image(x, 2)[:2], x[1::-1])

    def test_subpixel_is_bilinear(self):
        x = np.arange(16.0).reshape(4, 4)
        tau = np.zeros((2, 4, 4))
        tau[1] = 0.25
        y = warp_image(x, StabilityProbe(tau))
        np.testing.assert_allclose(y[:, 1:], x[:, 1:] - 0.25)

    def test_gradient_precondition(self):
        tau = np.zeros((2, 16, 16))
        tau[0] = np.linspace(0, 12, 16)[:, None]
        with pytest.raises(PreconditionError):
            warp_image(np.zeros((16, 16)), StabilityProbe(tau))

    def test_wrong_field_shape(self):
        with pytest.raises(ValueError):
            warp_image(np.zeros((8, 8)), StabilityProbe(np.zeros((2, 4, 4))))

    def test_smooth_field_normalised(self):
        field, g = smooth_displacement((32, 32), seed=3)
        assert StabilityProbe(field).max_displacement == pytest.approx(1.0)
        assert 0 < g < 1

    def test_curve_monotone_and_below_pixel_ratio(self):
        from liwn.data import natural_patches
        x = natural_patches(1, seed=0)[0]
        curves = []
        for seed in range(20):
            _, g = smooth_displacement(x.shape[-2:], seed)
            amps = np.linspace(0.2, 1.0, 5) * 0.25 / g
            rows, _ = warp_curve(x, amps, seed)
            curves.append([r[1:] for r in rows])
        med = np.median(np.array(curves), axis=0)
        assert np.all(np.diff(med[:, 0]) > 0)
        assert np.all(med[:, 0] < med[:, 1])

    def test_curve_rejects_large_gradient(self, rng):
        x = rng.standard_normal((1, 16, 16))
        _, g = smooth_displacement((16, 16), 0)
        with pytest.raises(PreconditionError):
            warp_curve(x, [0.3 / g], 0)


class TestShiftRatio:
    def test_below_one_for_smooth_images(self):
        from liwn.data import natural_patches
        for x in natural_patches(5, seed=1):
            for order in (1, 2):
                assert shift_ratio(x, 1, order) < 1.0

    def test_order2_more_invariant_than_order1(self):
        from liwn.data import natural_patches
        r = np.array([[shift_ratio(x, 1, o) for o in (1, 2)] for x in natural_patches(5, seed=2)])
        assert np.median(r[:, 1]) < np.median(r[:, 0])

    def test_relative_distance(self):
        assert relative_distance(np.array([3.0, 4.0]), np.array([3.0, 0.0])) == pytest.approx(4 / 3)

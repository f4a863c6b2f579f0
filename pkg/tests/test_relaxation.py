"""Tests for the Gaussian smoothing operator and spectral diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlab.flowfield import (
    GridField,
    Lattice,
    LinearField,
    band_limited_field,
    inject_band_noise,
    sample_on_grid,
)
from flowlab.relaxation import (
    SmoothedField,
    attenuation_profile,
    band_energy,
    estimate_lipschitz,
    make_kernel,
    relax_field,
)


def random_field(extents, seed, components=1):
    rng = np.random.default_rng(seed)
    shape = extents if isinstance(extents, tuple) else (extents,)
    return GridField(Lattice(extents), 0.0, rng.standard_normal(shape + (components,)))


class TestMakeKernel:
    def test_sigma_one_taps_match_the_formula(self):
        kernel = make_kernel(1.0)
        offsets = np.arange(-3, 4)
        expected = np.exp(-offsets**2 / 2.0)
        expected /= expected.sum()
        assert kernel.taps.size == 7
        assert abs(kernel.taps.sum() - 1.0) <= 1e-12
        assert np.abs(kernel.taps - expected).max() <= 1e-15
        assert kernel.taps[3] == kernel.taps.max()

    def test_tiny_sigma_is_near_delta(self):
        kernel = make_kernel(1e-4)
        assert kernel.taps[kernel.radius] >= 1.0 - 1e-8

    @given(st.floats(min_value=0.05, max_value=20.0))
    @settings(max_examples=40, deadline=None)
    def test_symmetry_and_length(self, sigma):
        kernel = make_kernel(sigma)
        assert kernel.taps.size == 2 * math.ceil(3 * sigma) + 1
        assert np.array_equal(kernel.taps, kernel.taps[::-1])

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            make_kernel(0.0)
        with pytest.raises(ValueError):
            make_kernel(-1.0)
        with pytest.raises(ValueError):
            make_kernel(20_000.0)


class TestRelaxField:
    def test_constant_field_unchanged(self):
        field = GridField(Lattice((9, 7)), 0.1, np.full((9, 7, 2), -1.25))
        out = relax_field(field, 2.0)
        assert np.abs(out.values - field.values).max() <= 1e-12

    def test_sigma_zero_is_identity(self):
        field = random_field(12, 0)
        assert relax_field(field, 0) is field

    def test_sinusoid_gain_matches_kernel_dft(self):
        n = 64
        freq_bin = 6
        values = np.sin(2 * np.pi * freq_bin * np.arange(n) / n)[:, None]
        field = GridField(Lattice(n), 0.0, values)
        out = relax_field(field, 1.0)
        gain = np.sqrt(attenuation_profile(1.0, n)[freq_bin])
        interior = slice(8, n - 8)
        assert np.abs(out.values[interior] - gain * values[interior]).max() <= 1e-9

    def test_separable_matches_dense_2d_convolution(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((16, 16, 1))
        field = GridField(Lattice((16, 16)), 0.0, values)
        out = relax_field(field, 1.0)

        taps = make_kernel(1.0).taps
        r = taps.size // 2
        dense = np.zeros((16, 16))
        for i in range(16):
            for j in range(16):
                acc = mass = 0.0
                for p in range(-r, r + 1):
                    for q in range(-r, r + 1):
                        if 0 <= i + p < 16 and 0 <= j + q < 16:
                            w = taps[p + r] * taps[q + r]
                            acc += w * values[i + p, j + q, 0]
                            mass += w
                dense[i, j] = acc / mass
        assert np.abs(out.values[..., 0] - dense).max() <= 1e-10

    def test_linearity(self):
        f = random_field(20, 1)
        g = random_field(20, 2)
        combo = GridField(f.lattice, 0.0, 0.7 * f.values - 1.3 * g.values)
        lhs = relax_field(combo, 1.5).values
        rhs = 0.7 * relax_field(f, 1.5).values - 1.3 * relax_field(g, 1.5).values
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_not_idempotent(self):
        # Gaussian blur is not a projection; blurring twice keeps smoothing.
        field = random_field(32, 4)
        once = relax_field(field, 1.0)
        twice = relax_field(once, 1.0)
        assert np.abs(twice.values - once.values).max() > 1e-6


class TestBandEnergy:
    def test_constant_field_has_no_high_band(self):
        field = GridField(Lattice(16), 0.0, np.full((16, 1), 2.0))
        report = band_energy(field, 0.25)
        assert report.high_energy == pytest.approx(0.0, abs=1e-12)

    def test_low_sinusoid_stays_in_low_band(self):
        n = 64
        values = np.sin(2 * np.pi * 4 * np.arange(n) / n)[:, None]
        report = band_energy(GridField(Lattice(n), 0.0, values), 0.25)
        assert report.low_energy / report.total_energy >= 1 - 1e-9

    def test_amplitude_ratio_splits_energy_four_to_one(self):
        # Parseval oracle: amplitudes 1 (below cutoff) and 2 (above) give a
        # high:low energy ratio of exactly 4.
        n = 64
        x = np.arange(n)
        values = (np.sin(2 * np.pi * 3 * x / n) + 2.0 * np.sin(2 * np.pi * 20 * x / n))[:, None]
        report = band_energy(GridField(Lattice(n), 0.0, values), 0.25)
        assert report.high_energy / report.low_energy == pytest.approx(4.0, abs=1e-6)

    def test_parseval_consistency(self):
        field = random_field((12, 10), 5, components=2)
        report = band_energy(field, 0.3)
        assert report.low_energy + report.high_energy == pytest.approx(
            report.total_energy, abs=1e-9 * report.total_energy
        )

    def test_rejects_cutoff_outside_range(self):
        field = random_field(16, 6)
        for eta in (0.0, -0.1, 0.6):
            with pytest.raises(ValueError):
                band_energy(field, eta)


class TestAttenuationProfile:
    def test_dc_gain_is_one(self):
        assert attenuation_profile(1.0, 64)[0] == pytest.approx(1.0, abs=1e-12)

    def test_nyquist_below_dc(self):
        profile = attenuation_profile(1.0, 64)
        assert profile[-1] < profile[0]

    @pytest.mark.parametrize("sigma", [0.3, 0.5, 1.0])
    def test_monotone_non_increasing(self, sigma):
        profile = attenuation_profile(sigma, 64)
        assert (np.diff(profile) <= 1e-9).all()

    def test_matches_continuous_gaussian_at_low_frequency(self):
        # Squared gain of the continuous kernel is exp(-sigma^2 w^2); the
        # discrete profile tracks it within 5% up to half Nyquist.
        n = 64
        profile = attenuation_profile(1.0, n)
        for k in range(1, n // 4 + 1):
            omega = 2 * np.pi * k / n
            expected = np.exp(-(omega**2))
            assert abs(profile[k] - expected) <= 0.05 * expected


class TestEstimateLipschitz:
    def test_constant_field_is_zero(self):
        field = GridField(Lattice(8), 0.0, np.full((8, 1), 3.0))
        assert estimate_lipschitz(field) == 0.0

    def test_identity_ramp_is_one(self):
        lattice = Lattice(16, spacing=0.5)
        values = lattice.positions()
        field = GridField(lattice, 0.0, values)
        assert estimate_lipschitz(field) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_never_increases_under_relaxation(self, sigma):
        for seed in range(10):
            field = random_field(48, 100 + seed)
            assert estimate_lipschitz(relax_field(field, sigma)) <= (
                estimate_lipschitz(field) + 1e-9
            )


class TestErrorReduction:
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_relaxation_reduces_distance_to_the_clean_field(self, sigma):
        # Low-band signal plus high-band noise; smoothing must bring the
        # corrupted field strictly closer to the signal, per seed.
        lattice = Lattice(64)
        for seed in range(20):
            signal = band_limited_field(lattice, 0.1, 1.0, seed, n_waves=5)
            noisy = inject_band_noise(signal, 0.25, 1.0, seed + 999, lattice)
            clean = sample_on_grid(signal, lattice, 0.4).values
            corrupt = sample_on_grid(noisy, lattice, 0.4)
            raw = np.linalg.norm(clean - corrupt.values)
            relaxed = np.linalg.norm(clean - relax_field(corrupt, sigma).values)
            assert relaxed < raw


class TestSmoothedField:
    def test_affine_fields_pass_through_exactly(self):
        base = LinearField(np.array([[0.3, -0.2], [0.1, 0.5]]), np.array([1.0, -2.0]))
        smoothed = SmoothedField(base, 1.0, step=0.5)
        x = np.random.default_rng(0).standard_normal((6, 2))
        assert np.abs(smoothed.velocity(x, 0.1) - base.velocity(x, 0.1)).max() <= 1e-12

    def test_sigma_zero_passthrough(self):
        base = LinearField(np.eye(1), np.zeros(1))
        assert SmoothedField(base, 0.0).velocity(np.ones(1), 0.0) == base.velocity(
            np.ones(1), 0.0
        )

    def test_matches_lattice_relaxation_away_from_edges(self):
        # On lattice sites far from the boundary, smoothing the analytic
        # field with unit step equals relaxing the sampled grid.
        lattice = Lattice(64)
        field = band_limited_field(lattice, 0.2, 1.0, seed=8)
        grid = relax_field(sample_on_grid(field, lattice, 0.0), 1.0)
        smoothed = SmoothedField(field, 1.0, step=1.0)
        sites = lattice.positions()[8:-8]
        direct = smoothed.velocity(sites, 0.0)
        assert np.abs(direct - grid.values[8:-8]).max() <= 1e-9

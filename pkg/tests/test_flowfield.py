"""Oracle and perturbation tests for the analytic mixture flow fields."""

import json

import numpy as np
import pytest

from flowlab.flowfield import (
    LinearField,
    AnalyticFlowField,
    GaussianMixture,
    GridField,
    Lattice,
    PerturbedField,
    band_limited_field,
    inject_band_noise,
    marginal_std,
    monte_carlo_velocity,
    oracle_velocity,
    sample_on_grid,
)
from flowlab.relaxation import band_energy
from flowlab.sampler import BranchPair, Schedule, batch_sample


def mix(*components):
    return GaussianMixture.from_components(components)


STANDARD = mix((1.0, [0.0], 1.0))
SHIFTED_NARROW = mix((1.0, [1.0], 1e-6))
BIMODAL = mix((0.5, [-3.0], 0.5), (0.5, [3.0], 0.5))


class TestGaussianMixture:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([0.6, 0.5]), np.array([[0.0], [1.0]]), np.array([1.0, 1.0]))

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([1.5, -0.5]), np.array([[0.0], [1.0]]), np.array([1.0, 1.0]))

    def test_stds_must_be_positive(self):
        with pytest.raises(ValueError):
            mix((1.0, [0.0], 0.0))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            GaussianMixture(np.array([]), np.zeros((0, 1)), np.array([]))

    def test_json_round_trip(self):
        rebuilt = GaussianMixture.from_json(BIMODAL.to_json())
        assert np.array_equal(rebuilt.weights, BIMODAL.weights)
        assert np.array_equal(rebuilt.means, BIMODAL.means)
        assert np.array_equal(rebuilt.stds, BIMODAL.stds)

    def test_schema_fields(self):
        spec = json.loads(BIMODAL.to_json())
        assert set(spec) == {"dimension", "components"}
        assert set(spec["components"][0]) == {"weight", "mean", "std"}


class TestOracleVelocity:
    def test_symmetric_target_midpoint_is_stationary(self):
        # Source equals target, so the interpolant variance is symmetric
        # about t = 0.5 and the velocity vanishes there for any state.
        for x in (-1.3, 0.0, 0.7, 4.2):
            assert oracle_velocity(STANDARD, np.array([x]), 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_target_formula(self):
        # sigma -> 0 limit gives (mu - x) / (1 - t); checked against the
        # Monte-Carlo oracle at 10^6 samples, 3 standard errors.
        v = oracle_velocity(SHIFTED_NARROW, np.array([0.0]), 0.0)
        assert v == pytest.approx(1.0, abs=1e-9)
        est, se = monte_carlo_velocity(SHIFTED_NARROW, np.array([0.0]), 0.0, n=1_000_000, seed=0)
        assert abs(v[0] - est[0]) <= 3 * se[0]

    def test_bimodal_against_monte_carlo(self):
        v = oracle_velocity(BIMODAL, np.array([2.9]), 0.8)
        est, se = monte_carlo_velocity(BIMODAL, np.array([2.9]), 0.8, n=1_000_000, seed=1)
        assert np.all(np.abs(v - est) <= 3 * se)

    def test_rejects_late_times(self):
        with pytest.raises(ValueError):
            oracle_velocity(STANDARD, np.array([0.0]), 1.0)

    def test_batched_evaluation_matches_pointwise(self):
        xs = np.linspace(-3, 3, 7).reshape(-1, 1)
        batch = oracle_velocity(BIMODAL, xs, 0.4)
        single = np.stack([oracle_velocity(BIMODAL, x, 0.4) for x in xs])
        assert np.array_equal(batch, single)

    def test_fifty_random_probes_match_monte_carlo(self):
        # Invariant: oracle and Monte-Carlo estimates agree within three
        # standard errors at 50 seeded (mixture, x, t) probes.
        rng = np.random.default_rng(2024)
        for probe in range(50):
            dim = int(rng.integers(1, 3))
            n_comp = int(rng.integers(1, 4))
            w = rng.uniform(0.2, 1.0, n_comp)
            w /= w.sum()
            w[-1] = 1.0 - w[:-1].sum()
            m = GaussianMixture(w, rng.uniform(-2, 2, (n_comp, dim)), rng.uniform(0.4, 1.5, n_comp))
            t = float(rng.uniform(0.0, 0.9))
            x = t * m.means[rng.integers(n_comp)] + rng.normal(0, marginal_std(m, t), dim)
            v = oracle_velocity(m, x, t)
            # Narrower kernel than the estimator default keeps the kernel
            # bias well under the standard error, so 3 SE is a fair band.
            est, se = monte_carlo_velocity(
                m, x, t, n=300_000, bandwidth=0.07 * marginal_std(m, t), seed=1000 + probe
            )
            assert np.all(np.abs(v - est) <= 3 * se), f"probe {probe} diverged"


class TestMonteCarloVelocity:
    def test_seed_consistency(self):
        a, se_a = monte_carlo_velocity(BIMODAL, np.array([2.9]), 0.8, n=200_000, seed=11)
        b, se_b = monte_carlo_velocity(BIMODAL, np.array([2.9]), 0.8, n=200_000, seed=12)
        assert np.all(np.abs(a - b) <= 3 * np.hypot(se_a, se_b))

    def test_standard_error_shrinks_at_root_two_rate(self):
        _, se_n = monte_carlo_velocity(BIMODAL, np.array([0.5]), 0.5, n=200_000, seed=5)
        _, se_2n = monte_carlo_velocity(BIMODAL, np.array([0.5]), 0.5, n=400_000, seed=5)
        ratio = se_2n[0] / se_n[0]
        assert abs(ratio - 1 / np.sqrt(2)) <= 0.2 / np.sqrt(2)

    def test_symmetric_case_is_zero(self):
        est, se = monte_carlo_velocity(STANDARD, np.array([0.3]), 0.5, n=100_000, seed=3)
        assert np.all(np.abs(est) <= 3 * se)

    def test_rejects_small_sample_counts(self):
        with pytest.raises(ValueError):
            monte_carlo_velocity(STANDARD, np.array([0.0]), 0.5, n=100)

    def test_no_mass_near_far_query_fails(self):
        with pytest.raises(RuntimeError):
            monte_carlo_velocity(STANDARD, np.array([40.0]), 0.1, n=10_000, seed=0)


class TestPushforward:
    def test_single_component_transport(self):
        # Exact integration of the oracle field carries the source onto the
        # target component within sampling tolerance.
        target = mix((1.0, [2.0], 0.1))
        field = AnalyticFlowField(target)
        finals = batch_sample(
            BranchPair(field, field), Schedule(1000, 0.0, t_end=1.0 - 1e-3),
            10_000, 0, 1, "observation_only",
        )
        assert abs(finals.mean() - 2.0) < 0.05
        assert abs(finals.std() - 0.1) < 0.05


class TestSampleOnGrid:
    def test_far_target_field_is_constant_in_the_window(self):
        # v = mu - x at t = 0, so on a fixed window the relative variation
        # shrinks like window / |mu|.
        far = mix((1.0, [1e8], 1e-6))
        field = AnalyticFlowField(far)
        grid = sample_on_grid(field, Lattice(8, spacing=0.5, origin=-2.0), 0.0)
        assert np.allclose(grid.values, grid.values.reshape(-1, 1)[0], rtol=1e-6)

    def test_exactly_constant_field(self):
        constant = LinearField(np.zeros((2, 2)), np.array([1.5, -0.25]))
        grid = sample_on_grid(constant, Lattice((5, 4)), 0.2)
        assert np.array_equal(grid.values, np.broadcast_to([1.5, -0.25], (5, 4, 2)))

    def test_zero_amplitude_is_bitwise_identity(self):
        field = AnalyticFlowField(BIMODAL)
        noisy = inject_band_noise(field, 0.25, 0.0, seed=4)
        lattice = Lattice(16, spacing=0.3, origin=-2.0)
        assert np.array_equal(
            sample_on_grid(noisy, lattice, 0.3).values,
            sample_on_grid(field, lattice, 0.3).values,
        )

    def test_rejects_tiny_lattices_and_late_times(self):
        field = AnalyticFlowField(STANDARD)
        with pytest.raises(ValueError):
            sample_on_grid(field, Lattice(3), 0.1)
        with pytest.raises(ValueError):
            sample_on_grid(field, Lattice(8), 1.0)


class TestBandNoise:
    def test_spectral_energy_above_cutoff(self):
        # DFT oracle: perturbed minus base on the verification lattice must
        # carry at least 95% of its energy above the cutoff (here: all of it).
        lattice = Lattice(64)
        field = AnalyticFlowField(STANDARD)
        noisy = inject_band_noise(field, 0.25, 1.0, seed=9, lattice=lattice)
        base = sample_on_grid(field, lattice, 0.2)
        pert = sample_on_grid(noisy, lattice, 0.2)
        diff = GridField(lattice, 0.2, pert.values - base.values)
        report = band_energy(diff, 0.25)
        assert report.high_fraction >= 0.95

    def test_same_seed_bitwise_identical(self):
        field = AnalyticFlowField(STANDARD)
        a = inject_band_noise(field, 0.3, 0.7, seed=21)
        b = inject_band_noise(field, 0.3, 0.7, seed=21)
        x = np.linspace(-2, 2, 17).reshape(-1, 1)
        assert np.array_equal(a.velocity(x, 0.1), b.velocity(x, 0.1))

    def test_amplitude_scales_linearly(self):
        lattice = Lattice(64)
        field = AnalyticFlowField(STANDARD)
        base = sample_on_grid(field, lattice, 0.2).values
        norms = []
        for amp in (0.5, 1.0):
            pert = inject_band_noise(field, 0.25, amp, seed=6, lattice=lattice)
            vals = sample_on_grid(pert, lattice, 0.2).values
            norms.append(np.linalg.norm(vals - base))
        assert abs(norms[1] / norms[0] - 2.0) < 1e-9

    def test_rejects_cutoff_at_or_above_nyquist(self):
        field = AnalyticFlowField(STANDARD)
        with pytest.raises(ValueError):
            inject_band_noise(field, 0.5, 1.0, seed=0)

    def test_band_limited_field_stays_below_cutoff(self):
        lattice = Lattice(64)
        field = band_limited_field(lattice, 0.1, 1.0, seed=3)
        grid = sample_on_grid(field, lattice, 0.0)
        report = band_energy(grid, 0.1)
        assert report.high_energy <= 1e-9 * report.total_energy


class TestGridFieldSerialization:
    def make_field(self):
        rng = np.random.default_rng(0)
        lattice = Lattice((6, 5), spacing=(0.5, 0.25), origin=(-1.0, 2.0))
        return GridField(lattice, 0.25, rng.standard_normal((6, 5, 2)))

    def test_binary_round_trip(self, tmp_path):
        field = self.make_field()
        path = tmp_path / "field.bin"
        field.to_binary(path)
        back = GridField.from_binary(path)
        assert np.array_equal(back.values, field.values)
        assert back.lattice.extents == field.lattice.extents
        assert back.lattice.spacing == field.lattice.spacing
        assert back.t == field.t

    def test_csv_round_trip(self, tmp_path):
        field = self.make_field()
        path = tmp_path / "field.csv"
        field.to_csv(path)
        back = GridField.from_csv(path)
        assert np.array_equal(back.values, field.values)

    def test_rejects_non_finite_values(self):
        with pytest.raises(ValueError):
            GridField(Lattice(4), 0.0, np.array([[0.0], [np.inf], [0.0], [0.0]]))

    def test_perturbing_a_grid_field(self):
        field = self.make_field()
        noisy = inject_band_noise(field, 0.2, 0.5, seed=1, lattice=field.lattice)
        assert isinstance(noisy, PerturbedField)
        pos = field.lattice.positions()
        assert np.isfinite(noisy.velocity(pos, 0.25)).all()

"""Tests for trajectory pools, generators, splits and perturbations."""

import numpy as np
import pytest

from sake.errors import ConfigurationError, GenerationError, ShapeError, SplitError
from sake.trajstore import (
    PerturbSpec,
    TrajectoryPool,
    generate,
    generate_diffusion2d,
    generate_linear_lag_system,
    perturb,
    split_pool,
    split_sizes,
)
from sake.trajstore.generators import companion_spectral_radius, sample_var_coefficients


def _pool(n_traj=4, T=5, C=1, H=4, W=4, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectoryPool(data=rng.normal(size=(n_traj, T, C, H, W)), meta={"generator": "test"})


class TestTrajectoryPool:
    def test_shape_properties(self):
        pool = _pool(n_traj=3, T=6, C=2, H=4, W=5)
        assert (pool.n_traj, pool.T, pool.C, pool.H, pool.W) == (3, 6, 2, 4, 5)
        assert pool.frame_shape == (2, 4, 5)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError, match="5-D"):
            TrajectoryPool(data=np.zeros((2, 3, 4)))

    def test_rejects_short_trajectories(self):
        with pytest.raises(ShapeError, match="T >= 2"):
            TrajectoryPool(data=np.zeros((2, 1, 1, 1, 1)))

    def test_rejects_non_finite(self):
        data = np.zeros((1, 3, 1, 1, 1))
        data[0, 1] = np.nan
        with pytest.raises(ShapeError, match="non-finite"):
            TrajectoryPool(data=data)

    def test_data_is_read_only(self):
        pool = _pool()
        with pytest.raises(ValueError):
            pool.data[0, 0, 0, 0, 0] = 1.0

    def test_mask_must_match_spatial_shape(self):
        with pytest.raises(ShapeError, match="mask shape"):
            TrajectoryPool(data=np.zeros((1, 2, 1, 4, 4)), mask=np.zeros((2, 2), dtype=bool))


class TestLinearGenerator:
    def test_zero_coefficients_give_iid_noise(self):
        pool = generate_linear_lag_system(
            dim=1, true_lag=1, n_traj=50, T=40, noise_sigma=1.0, stability_margin=0.1, seed=0, coef_scale=0.0
        )
        values = pool.data[:, 1:, 0, 0, 0]
        assert abs(values.std() - 1.0) < 0.1
        lag1 = np.corrcoef(values[:, :-1].ravel(), values[:, 1:].ravel())[0, 1]
        assert abs(lag1) < 0.1

    def test_meta_records_true_lag(self):
        pool = generate_linear_lag_system(
            dim=4, true_lag=3, n_traj=2, T=20, noise_sigma=0.05, stability_margin=0.1, seed=0
        )
        assert pool.meta["true_lag"] == 3
        assert pool.meta["generator"] == "linear"
        assert pool.frame_shape == (4, 1, 1)
        assert pool.meta["spectral_radius"] <= 0.9

    def test_sampled_coefficients_are_stable(self):
        rng = np.random.default_rng(0)
        coefs = sample_var_coefficients(dim=3, true_lag=2, stability_margin=0.2, rng=rng)
        assert coefs.shape == (2, 3, 3)
        assert companion_spectral_radius(coefs) <= 0.8

    def test_unsatisfiable_stability_is_an_error(self):
        rng = np.random.default_rng(0)
        with pytest.raises(GenerationError, match="stability_margin"):
            sample_var_coefficients(dim=4, true_lag=2, stability_margin=0.99, rng=rng, coef_scale=50.0)

    def test_short_horizon_rejected(self):
        with pytest.raises(ConfigurationError, match="true_lag"):
            generate_linear_lag_system(
                dim=1, true_lag=3, n_traj=1, T=5, noise_sigma=0.1, stability_margin=0.1, seed=0
            )

    def test_deterministic(self):
        kwargs = dict(dim=2, true_lag=2, n_traj=3, T=10, noise_sigma=0.1, stability_margin=0.2, seed=7)
        assert generate_linear_lag_system(**kwargs).equals(generate_linear_lag_system(**kwargs))


class TestDiffusionGenerator:
    def test_deterministic(self):
        a = generate_diffusion2d(grid=16, n_traj=8, T=32, diffusivity=0.2, seed=0)
        b = generate_diffusion2d(grid=16, n_traj=8, T=32, diffusivity=0.2, seed=0)
        assert a.equals(b)

    def test_mass_conserved(self, diffusion_pool):
        totals = diffusion_pool.data.astype(np.float64).sum(axis=(2, 3, 4))
        scale = np.abs(diffusion_pool.data).sum(axis=(2, 3, 4)).max()
        assert np.allclose(totals, totals[:, :1], atol=1e-6 * scale)

    def test_constant_field_is_fixed_point(self):
        from sake.trajstore.generators import simulate_diffusion

        frames = simulate_diffusion(np.full((6, 6), 2.5), T=5, r=0.2)
        assert np.allclose(frames, 2.5)

    def test_unstable_scheme_rejected(self):
        with pytest.raises(ConfigurationError, match="unstable"):
            generate_diffusion2d(grid=8, n_traj=1, T=4, diffusivity=0.3, seed=0)

    def test_dispatch_by_name(self):
        pool = generate("diffusion2d", {"grid": 4, "n_traj": 2, "T": 3, "diffusivity": 0.1}, seed=1)
        assert pool.frame_shape == (1, 4, 4)

    def test_unknown_generator(self):
        with pytest.raises(ConfigurationError, match="unknown generator"):
            generate("shallow_water", {}, seed=0)

    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError, match="bad parameters"):
            generate("linear", {"dimension": 3}, seed=0)


class TestSplit:
    def test_exact_division(self):
        assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)

    def test_thousand_trajectories(self):
        assert split_sizes(1000, (0.8, 0.1, 0.1)) == (800, 100, 100)

    def test_train_only(self):
        split = split_pool(_pool(n_traj=5), (1.0, 0.0, 0.0), seed=0)
        assert split.train.n_traj == 5
        assert split.val is None and split.test is None
        with pytest.raises(SplitError, match="empty"):
            split.part("val")

    def test_partition_is_disjoint_and_exhaustive(self):
        for seed in range(5):
            split = split_pool(_pool(n_traj=13), (0.6, 0.2, 0.2), seed=seed)
            indices = [i for name in ("train", "val", "test") for i in split.indices[name]]
            assert sorted(indices) == list(range(13))

    def test_deterministic(self):
        a = split_pool(_pool(n_traj=10), (0.8, 0.1, 0.1), seed=3)
        b = split_pool(_pool(n_traj=10, seed=99), (0.8, 0.1, 0.1), seed=3)
        assert a.indices == b.indices

    def test_too_few_trajectories(self):
        with pytest.raises(SplitError, match="cannot fill"):
            split_sizes(2, (0.5, 0.25, 0.25))

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(SplitError, match="sum to 1"):
            split_sizes(10, (0.5, 0.1, 0.1))


class TestPerturb:
    def test_identity_copies_exactly(self):
        pool = _pool()
        assert perturb(pool, PerturbSpec()).equals(pool)

    def test_zero_sigma_noise_is_exact(self):
        pool = _pool()
        out = perturb(pool, PerturbSpec(kind="gaussian_noise", sigma=0.0))
        assert np.array_equal(out.data, pool.data)
        assert out.equals(pool)
        assert "perturbations" not in out.meta

    def test_noise_grows_with_sigma(self):
        pool = _pool(n_traj=4, T=8)
        diffs = []
        for sigma in (0.0, 0.01, 0.05, 0.1):
            out = perturb(pool, PerturbSpec(kind="gaussian_noise", sigma=sigma, seed=2))
            diffs.append(float(np.mean((out.data - pool.data) ** 2)))
        assert diffs == sorted(diffs)
        assert diffs[0] == 0.0

    def test_downsample_block_constant_field_is_lossless(self):
        coarse = np.arange(2 * 3 * 2 * 2, dtype=np.float64).reshape(2, 3, 1, 2, 2)
        fine = coarse.repeat(2, axis=3).repeat(2, axis=4)
        out = perturb(TrajectoryPool(data=fine), PerturbSpec(kind="downsample", factor=2))
        assert np.array_equal(out.data, coarse.astype(np.float32))

    def test_downsample_must_divide(self):
        pool = _pool(H=6, W=6)
        with pytest.raises(ShapeError, match="does not divide"):
            perturb(pool, PerturbSpec(kind="downsample", factor=4))

    def test_invalid_factor(self):
        with pytest.raises(ConfigurationError, match="factor"):
            PerturbSpec(kind="downsample", factor=3)

    def test_random_mask_zeroes_fixed_sites(self):
        pool = _pool(n_traj=2, T=4, C=2, H=5, W=5)
        out = perturb(pool, PerturbSpec(kind="random_mask", mask_fraction=0.4, seed=1))
        assert out.mask.sum() == 10
        assert np.all(out.data[..., out.mask] == 0.0)
        assert np.array_equal(out.data[..., ~out.mask], pool.data[..., ~out.mask])
        assert out.meta["perturbations"][-1]["kind"] == "random_mask"

    def test_sparse_probe_keeps_strided_sites(self):
        pool = _pool(H=8, W=8)
        out = perturb(pool, PerturbSpec(kind="sparse_probe", probes=3))
        assert out.frame_shape == (1, 3, 3)
        assert np.array_equal(out.data[..., 0, 0], pool.data[..., 0, 0])
        assert np.array_equal(out.data[..., 2, 2], pool.data[..., 7, 7])

    def test_labels(self):
        assert PerturbSpec().label == "clean"
        assert PerturbSpec(kind="gaussian_noise", sigma=0.05).label == "noise0.05"
        assert PerturbSpec(kind="downsample", factor=2).label == "down2"
        assert PerturbSpec(kind="random_mask", mask_fraction=0.25).label == "mask0.25"

    def test_invalid_kind(self):
        with pytest.raises(ConfigurationError, match="invalid perturbation kind"):
            PerturbSpec(kind="blur")

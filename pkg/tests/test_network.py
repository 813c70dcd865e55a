import numpy as np
import pytest

from densecount.fileio import FileFormatError
from densecount.network import (
    ArchConfig,
    LOGVAR_MAX,
    LOGVAR_MIN,
    forward_all,
    forward_head,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def small_arch():
    return ArchConfig(front_channels=(4, 8), back_channels=(8,), num_heads=3)


@pytest.fixture
def image():
    rng = np.random.default_rng(0)
    return rng.random((16, 16))


class TestInitParams:
    def test_same_seed_bitwise_identical(self, small_arch):
        a = init_params(small_arch, seed=7)
        b = init_params(small_arch, seed=7)
        for ta, tb in zip(a.all_tensors(), b.all_tensors()):
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_weight_std_matches_config(self):
        # enough weights for the empirical std to sit within 20% of init_std
        arch = ArchConfig(front_channels=(16, 32), back_channels=(32, 32), num_heads=10)
        params = init_params(arch, seed=1)
        weights = np.concatenate(
            [w.data.ravel() for w, _ in params.front + params.back + params.heads]
        )
        assert weights.size >= 10_000
        assert abs(weights.std() - arch.init_std) < 0.2 * arch.init_std

    def test_biases_zero(self, small_arch):
        params = init_params(small_arch, seed=2)
        for _, b in params.front + params.back + params.heads + [params.log_var]:
            np.testing.assert_array_equal(b.data, np.zeros_like(b.data))

    def test_heads_differ(self, small_arch):
        params = init_params(small_arch, seed=3)
        w0 = params.heads[0][0].data
        w1 = params.heads[1][0].data
        assert not np.array_equal(w0, w1)

    def test_all_tensors_trainable(self, small_arch):
        params = init_params(small_arch, seed=4)
        assert all(t.requires_grad for t in params.all_tensors())


class TestForward:
    def test_output_shape_is_input_over_downsample(self, small_arch, image):
        params = init_params(small_arch, seed=5)
        out = forward_head(params, image, 0)
        assert small_arch.downsample_factor == 4
        assert out.density.shape == (1, 4, 4)
        assert out.log_variance.shape == (1, 4, 4)

    def test_density_non_negative(self, small_arch):
        rng = np.random.default_rng(6)
        params = init_params(small_arch, seed=6)
        for _ in range(5):
            out = forward_head(params, rng.random((16, 16)), 1)
            assert np.all(out.density.data >= 0)

    def test_logvar_within_clamp_band(self, small_arch, image):
        params = init_params(small_arch, seed=7)
        out = forward_head(params, image, 0)
        assert np.all(out.log_variance.data >= LOGVAR_MIN)
        assert np.all(out.log_variance.data <= LOGVAR_MAX)

    def test_forward_all_matches_forward_head_bitwise(self, small_arch, image):
        params = init_params(small_arch, seed=8)
        densities, logvar = forward_all(params, image)
        assert len(densities) == small_arch.num_heads
        for k in range(small_arch.num_heads):
            single = forward_head(params, image, k)
            np.testing.assert_array_equal(densities[k].data, single.density.data)
            np.testing.assert_array_equal(logvar.data, single.log_variance.data)

    def test_single_head_arch(self, image):
        arch = ArchConfig(front_channels=(4, 8), back_channels=(8,), num_heads=1)
        params = init_params(arch, seed=9)
        densities, _ = forward_all(params, image)
        assert len(densities) == 1
        np.testing.assert_array_equal(
            densities[0].data, forward_head(params, image, 0).density.data
        )

    def test_head_index_out_of_range(self, small_arch, image):
        params = init_params(small_arch, seed=10)
        with pytest.raises(ValueError, match="head index"):
            forward_head(params, image, 3)
        with pytest.raises(ValueError, match="head index"):
            forward_head(params, image, -1)

    def test_indivisible_image_raises(self, small_arch):
        params = init_params(small_arch, seed=11)
        with pytest.raises(ValueError, match="divisible"):
            forward_head(params, np.zeros((18, 16)), 0)

    def test_zeroing_one_head_only_changes_that_density(self, small_arch, image):
        params = init_params(small_arch, seed=12)
        before, logvar_before = forward_all(params, image)
        params.heads[1][0].data[:] = 0.0
        params.heads[1][1].data[:] = 0.0
        after, logvar_after = forward_all(params, image)
        assert not np.array_equal(before[1].data, after[1].data)
        for k in (0, 2):
            np.testing.assert_array_equal(before[k].data, after[k].data)
        np.testing.assert_array_equal(logvar_before.data, logvar_after.data)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, small_arch, tmp_path):
        params = init_params(small_arch, seed=13)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.arch == small_arch
        for a, b in zip(params.all_tensors(), loaded.all_tensors()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_loaded_params_produce_identical_outputs(self, small_arch, image, tmp_path):
        params = init_params(small_arch, seed=14)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        a = forward_head(params, image, 2)
        b = forward_head(loaded, image, 2)
        np.testing.assert_array_equal(a.density.data, b.density.data)

    def test_corrupted_magic(self, small_arch, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(small_arch, seed=15), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(raw)
        with pytest.raises(FileFormatError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, small_arch, tmp_path):
        import struct

        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(small_arch, seed=16), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(raw)
        with pytest.raises(FileFormatError, match="version"):
            load_checkpoint(path)

    def test_truncated_file(self, small_arch, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(init_params(small_arch, seed=17), path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FileFormatError, match="truncated"):
            load_checkpoint(path)

    def test_checkpoint_bytes_deterministic(self, small_arch, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(init_params(small_arch, seed=18), a)
        save_checkpoint(init_params(small_arch, seed=18), b)
        assert a.read_bytes() == b.read_bytes()


class TestArchConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_heads": 0},
            {"init_std": 0.0},
            {"dilation": 0},
            {"front_channels": ()},
            {"back_channels": (0,)},
        ],
    )
    def test_invalid_arch_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ArchConfig(**kwargs)

    def test_downsample_factor_tracks_pool_count(self):
        assert ArchConfig(front_channels=(8,), back_channels=(8,)).downsample_factor == 2
        assert ArchConfig().downsample_factor == 4

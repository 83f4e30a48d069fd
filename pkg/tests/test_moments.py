"""Streaming moment accumulation against dense and two-pass oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmdkit import (
    DimensionError,
    EmptyAccumulatorError,
    MomentAccumulator,
    SolverConfig,
    ValidationError,
    accumulate,
    align_datasets,
    evaluate_r2,
    solve,
)

from conftest import make_ds


def dense_sums(u, z):
    """Independent oracle: everything from whole-matrix expressions."""
    return {
        "sum_z": z.sum(axis=0),
        "sum_u": u.sum(axis=0),
        "sum_zz": z.T @ z,
        "sum_uz": u.T @ z,
        "trace": float((u * u).sum()),
    }


def fill(acc, u, z, chunk=None):
    if chunk is None:
        acc.update(u, z)
    else:
        for s in range(0, len(u), chunk):
            acc.update(u[s : s + chunk], z[s : s + chunk])
    return acc


class TestObserve:
    def test_zero_observation(self):
        acc = MomentAccumulator(d_u=1, kd=2)
        acc.observe(np.array([0.0]), np.array([0.0, 0.0]))
        assert acc.count == 1
        assert np.all(acc.sum_zz == 0) and np.all(acc.sum_uz == 0)
        assert acc.sum_uu_trace == 0.0

    def test_single_sample_arithmetic(self):
        acc = MomentAccumulator(d_u=1, kd=2)
        acc.observe(np.array([2.0]), np.array([1.0, 3.0]))
        assert np.array_equal(acc.sum_uz, [[2.0, 6.0]])
        assert np.array_equal(acc.sum_zz, [[1.0, 3.0], [3.0, 9.0]])
        assert acc.sum_uu_trace == 4.0
        assert np.array_equal(acc.sum_z, [1.0, 3.0])
        assert np.array_equal(acc.sum_u, [2.0])

    def test_thousand_rows_vs_dense_oracle(self, rng):
        u = rng.standard_normal((1000, 3))
        z = rng.standard_normal((1000, 7))
        acc = fill(MomentAccumulator(3, 7), u, z, chunk=128)
        oracle = dense_sums(u, z)
        for name in ("sum_z", "sum_u", "sum_zz", "sum_uz"):
            np.testing.assert_allclose(getattr(acc, name), oracle[name], rtol=1e-12)
        np.testing.assert_allclose(acc.sum_uu_trace, oracle["trace"], rtol=1e-12)
        assert acc.count == 1000

    def test_symmetry_exact_after_updates(self, rng):
        acc = fill(MomentAccumulator(2, 5), rng.standard_normal((40, 2)),
                   rng.standard_normal((40, 5)), chunk=9)
        assert np.array_equal(acc.sum_zz, acc.sum_zz.T)

    def test_dimension_mismatch(self):
        acc = MomentAccumulator(2, 3)
        with pytest.raises(DimensionError):
            acc.observe(np.zeros(2), np.zeros(4))
        with pytest.raises(DimensionError):
            acc.update(np.zeros((3, 2)), np.zeros((4, 3)))

    def test_nonfinite_rejected(self):
        acc = MomentAccumulator(1, 1)
        with pytest.raises(ValidationError):
            acc.observe(np.array([np.nan]), np.array([1.0]))


class TestMerge:
    def test_identity_element(self, rng):
        acc = fill(MomentAccumulator(2, 3), rng.standard_normal((10, 2)),
                   rng.standard_normal((10, 3)))
        out = acc.merge(MomentAccumulator(2, 3))
        for name in ("sum_z", "sum_u", "sum_zz", "sum_uz"):
            assert np.array_equal(getattr(out, name), getattr(acc, name))
        assert out.sum_uu_trace == acc.sum_uu_trace
        assert out.count == acc.count

    def test_commutative_exact(self, rng):
        a = fill(MomentAccumulator(2, 3), rng.standard_normal((11, 2)),
                 rng.standard_normal((11, 3)))
        b = fill(MomentAccumulator(2, 3), rng.standard_normal((7, 2)),
                 rng.standard_normal((7, 3)))
        ab, ba = a.merge(b), b.merge(a)
        for name in ("sum_z", "sum_u", "sum_zz", "sum_uz"):
            assert np.array_equal(getattr(ab, name), getattr(ba, name))
        assert ab.sum_uu_trace == ba.sum_uu_trace

    def test_associative_exact_for_identical_operands(self, rng):
        # FP addition is not associative for arbitrary operands; the
        # guarantee is exact equality when merging copies of one shard.
        acc = fill(MomentAccumulator(1, 2), rng.standard_normal((5, 1)),
                   rng.standard_normal((5, 2)))
        left = acc.merge(acc).merge(acc)
        right = acc.merge(acc.merge(acc))
        assert np.array_equal(left.sum_zz, right.sum_zz)
        assert left.sum_uu_trace == right.sum_uu_trace
        assert left.count == right.count == 3 * acc.count

    def test_shard_split_matches_downstream_fit(self, rng):
        u = rng.standard_normal((400, 2))
        z = rng.standard_normal((400, 6))
        whole = fill(MomentAccumulator(2, 6, dims=[3, 3]), u, z)
        h1 = fill(MomentAccumulator(2, 6, dims=[3, 3]), u[:200], z[:200])
        h2 = fill(MomentAccumulator(2, 6, dims=[3, 3]), u[200:], z[200:])
        merged = h1.merge(h2)
        sol_whole = solve(whole.finalize(center=True), SolverConfig(mode="full_rank", center=True))
        sol_merged = solve(merged.finalize(center=True), SolverConfig(mode="full_rank", center=True))
        np.testing.assert_allclose(sol_merged.W, sol_whole.W, rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            MomentAccumulator(2, 3).merge(MomentAccumulator(2, 4))


class TestFinalize:
    def test_single_observation_uncentered(self):
        acc = MomentAccumulator(1, 2)
        acc.observe(np.array([2.0]), np.array([1.0, -1.0]))
        s = acc.finalize(center=False)
        assert np.array_equal(s.zz, np.outer([1.0, -1.0], [1.0, -1.0]))
        assert np.array_equal(s.uz, [[2.0, -2.0]])
        assert s.u_sq == 4.0

    def test_constant_rows_zero_covariance(self):
        acc = MomentAccumulator(1, 3)
        for _ in range(5):
            acc.observe(np.array([7.0]), np.array([1.0, 2.0, 3.0]))
        s = acc.finalize(center=True)
        np.testing.assert_allclose(s.zz, 0.0, atol=1e-14)
        np.testing.assert_allclose(s.uz, 0.0, atol=1e-14)
        np.testing.assert_allclose(s.u_sq, 0.0, atol=1e-12)
        assert np.array_equal(s.mean_z, [1.0, 2.0, 3.0])

    def test_centered_vs_two_pass_oracle(self, rng):
        u = rng.standard_normal((500, 2))
        z = rng.standard_normal((500, 6))
        s = fill(MomentAccumulator(2, 6), u, z, chunk=64).finalize(center=True)
        zc = z - z.mean(axis=0)
        uc = u - u.mean(axis=0)
        np.testing.assert_allclose(s.zz, zc.T @ zc / 500, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.uz, uc.T @ zc / 500, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.u_sq, (uc * uc).sum() / 500, rtol=1e-12)
        np.testing.assert_allclose(s.mean_z, z.mean(axis=0), rtol=1e-12)

    def test_shift_invariance_of_centered_moments(self, rng):
        u = rng.standard_normal((300, 2))
        z = rng.standard_normal((300, 4))
        s0 = fill(MomentAccumulator(2, 4), u, z).finalize(center=True)
        shift_u, shift_z = rng.standard_normal(2) * 5, rng.standard_normal(4) * 5
        s1 = fill(MomentAccumulator(2, 4), u + shift_u, z + shift_z).finalize(center=True)
        np.testing.assert_allclose(s1.zz, s0.zz, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(s1.uz, s0.uz, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(s1.u_sq, s0.u_sq, rtol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(2, 60), kd=st.integers(1, 8))
    def test_covariance_psd(self, seed, n, kd):
        gen = np.random.default_rng(seed)
        z = gen.standard_normal((n, kd)) * 10.0 ** gen.integers(-2, 3)
        acc = fill(MomentAccumulator(1, kd), gen.standard_normal((n, 1)), z)
        s = acc.finalize(center=True)
        evals = np.linalg.eigvalsh(s.zz)
        assert evals[0] >= -1e-10 * max(evals[-1], 0.0)

    def test_empty_errors(self):
        with pytest.raises(EmptyAccumulatorError):
            MomentAccumulator(1, 1).finalize(center=False)
        acc = MomentAccumulator(1, 1)
        acc.observe(np.array([1.0]), np.array([1.0]))
        with pytest.raises(EmptyAccumulatorError):
            acc.finalize(center=True)


class TestSnapshot:
    def test_roundtrip_exact(self, tmp_path, rng):
        acc = fill(MomentAccumulator(2, 5, dims=[2, 3]), rng.standard_normal((30, 2)),
                   rng.standard_normal((30, 5)))
        path = acc.save(tmp_path / "acc.lmdmom")
        back = MomentAccumulator.load(path)
        assert back.count == acc.count
        for name in ("sum_z", "sum_u", "sum_zz", "sum_uz"):
            assert np.array_equal(getattr(back, name), getattr(acc, name))
        assert back.sum_uu_trace == acc.sum_uu_trace


class TestAccumulateFromView:
    def test_matches_manual(self, rng):
        u_ds = make_ds("u", rng.standard_normal((50, 2)))
        v_ds = make_ds("v", rng.standard_normal((50, 3)))
        w_ds = make_ds("w", rng.standard_normal((50, 4)))
        acc = accumulate(align_datasets([v_ds, w_ds], target=u_ds), chunk_rows=16)
        z = np.concatenate([v_ds.values, w_ds.values], axis=1)
        oracle = dense_sums(u_ds.values, z)
        np.testing.assert_allclose(acc.sum_zz, oracle["sum_zz"], rtol=1e-12)
        np.testing.assert_allclose(acc.sum_uz, oracle["sum_uz"], rtol=1e-12)
        assert acc.dims == [3, 4]

    def test_requires_target(self, rng):
        view = align_datasets([make_ds("v", rng.standard_normal((5, 2)))])
        with pytest.raises(DimensionError):
            accumulate(view)

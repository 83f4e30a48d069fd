"""R2/rho metrics: Pearson reduction, structure, invariances, analyses."""

import math

import numpy as np
import pytest

from lmdkit import (
    DatasetGroup,
    DegenerateTargetError,
    DimensionError,
    LmdSolution,
    SolverConfig,
    SynthSpec,
    evaluate_r2,
    fit_datasets,
    generate,
    group_analysis,
    length_sweep,
    pairwise_analysis,
)
from lmdkit.metrics import format_float, group_csv, matrix_csv, plotdata, sweep_csv

from conftest import make_ds

EXACT = SolverConfig(mode="full_rank", lambda_=0.0, center=True)
MINNORM = SolverConfig(mode="min_norm", lambda_=0.0, center=True)


def r2_in_sample(target, bases, config=EXACT):
    sol = fit_datasets(target, bases, config)
    return evaluate_r2(sol, target, bases, in_sample=True).r2


def groups_from_synth(seed, n_train, n_test, dims, d_u, rule="exact_combination",
                      sigma=0.0, seq_len=128, names=None):
    out = {}
    for stream, (split, n) in enumerate({"train": n_train, "test": n_test}.items()):
        spec = SynthSpec(seed=seed, n=n, dims=dims, d_u=d_u, target_rule=rule,
                         noise_sigma=sigma, stream=stream, split=split, seq_len=seq_len,
                         model_names=names)
        target, bases, _ = generate(spec)
        for ds in [target] + bases:
            out.setdefault(ds.model_name, {})[split] = ds
    return [DatasetGroup(name=k, splits=v) for k, v in out.items()]


class TestEvaluateR2:
    def test_perfect_self_fit(self, rng):
        u = make_ds("u", rng.standard_normal((300, 4)))
        assert abs(r2_in_sample(u, [u]) - 1.0) <= 1e-10

    def test_mean_predictor_r2_zero(self, rng):
        u = make_ds("u", rng.standard_normal((200, 3)) + 5.0)
        v = make_ds("v", rng.standard_normal((200, 2)))
        sol = LmdSolution(
            W=np.zeros((3, 2)), dims=[2], bias=u.values.mean(axis=0),
            lambda_used=0.0, eig_floor=0.0, rank_deficient=False, solver_mode="min_norm",
        )
        report = evaluate_r2(sol, u, [v], in_sample=True)
        assert abs(report.r2) <= 1e-12
        assert report.n_eval == 200

    def test_d1_reduces_to_squared_pearson(self, rng):
        x = rng.standard_normal(4000)
        y = 0.7 * x + 0.3 * rng.standard_normal(4000)
        u = make_ds("u", y.reshape(-1, 1))
        v = make_ds("v", x.reshape(-1, 1))
        pearson_sq = float(np.corrcoef(x, y)[0, 1] ** 2)
        r2_uv = r2_in_sample(u, [v])
        r2_vu = r2_in_sample(v, [u])
        assert abs(r2_uv - pearson_sq) <= 1e-12
        assert abs(r2_vu - pearson_sq) <= 1e-12

    def test_constant_target_degenerate(self, rng):
        u = make_ds("u", np.full((50, 2), 3.0))
        v = make_ds("v", rng.standard_normal((50, 2)))
        sol = LmdSolution(W=np.zeros((2, 2)), dims=[2], bias=np.zeros(2), lambda_used=0.0,
                          eig_floor=0.0, rank_deficient=False, solver_mode="min_norm")
        with pytest.raises(DegenerateTargetError, match="'u'"):
            evaluate_r2(sol, u, [v])

    def test_block_width_mismatch(self, rng):
        u = make_ds("u", rng.standard_normal((20, 2)))
        v = make_ds("v", rng.standard_normal((20, 3)))
        sol = LmdSolution(W=np.zeros((2, 3)), dims=[3], bias=None, lambda_used=0.0,
                          eig_floor=0.0, rank_deficient=False, solver_mode="min_norm")
        w = make_ds("w", rng.standard_normal((20, 2)))
        with pytest.raises(DimensionError):
            evaluate_r2(sol, u, [w])

    def test_in_sample_bounds_with_bias(self, rng):
        # centered exact solve in-sample: R2 confined to [0, 1] up to rounding
        for seed in (0, 1, 2):
            gen = np.random.default_rng(seed)
            u = make_ds("u", gen.standard_normal((150, 3)))
            v = make_ds("v", gen.standard_normal((150, 5)))
            r2 = r2_in_sample(u, [v])
            assert -1e-10 <= r2 <= 1 + 1e-10

    def test_out_of_sample_not_clamped(self, rng):
        # tiny training set, pure-noise relation: held-out R2 goes negative
        train_u = make_ds("u", rng.standard_normal((12, 2)))
        train_v = make_ds("v", rng.standard_normal((12, 10)))
        test_u = make_ds("u", rng.standard_normal((200, 2)), split="test")
        test_v = make_ds("v", rng.standard_normal((200, 10)), split="test")
        sol = fit_datasets(train_u, [train_v], MINNORM)
        report = evaluate_r2(sol, test_u, [test_v], in_sample=False)
        assert report.r2 < 0.0
        assert not report.in_sample
        np.testing.assert_allclose(report.r2, 1.0 - report.ssr / report.sst, rtol=0, atol=0)


class TestInvariances:
    def setup_method(self):
        gen = np.random.default_rng(99)
        self.v1 = make_ds("v1", gen.standard_normal((400, 3)))
        self.v2 = make_ds("v2", gen.standard_normal((400, 4)))
        noise = 0.5 * gen.standard_normal((400, 2))
        mix = gen.standard_normal((7, 2))
        u_vals = np.concatenate([self.v1.values, self.v2.values], axis=1) @ mix + noise
        self.u = make_ds("u", u_vals)
        self.base_r2 = r2_in_sample(self.u, [self.v1, self.v2])

    def test_target_scaling(self):
        for c in (1e-3, 7.0, -2.0):
            scaled = make_ds("u", self.u.values * c)
            r2 = r2_in_sample(scaled, [self.v1, self.v2])
            assert abs(r2 - self.base_r2) < 1e-10

    def test_basis_affine(self, rng):
        A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        b = rng.standard_normal(3)
        v1t = make_ds("v1", self.v1.values @ A.T + b)
        r2 = r2_in_sample(self.u, [v1t, self.v2])
        assert abs(r2 - self.base_r2) < 1e-9

    def test_identical_row_permutation(self, rng):
        perm = rng.permutation(400)
        r2 = r2_in_sample(
            make_ds("u", self.u.values[perm]),
            [make_ds("v1", self.v1.values[perm]), make_ds("v2", self.v2.values[perm])],
        )
        assert abs(r2 - self.base_r2) < 1e-12

    def test_monotone_in_basis_set(self, rng):
        gen = np.random.default_rng(1234)
        bases = [make_ds(f"b{i}", gen.standard_normal((300, 3))) for i in range(4)]
        signal = sum(b.values @ gen.standard_normal((3, 2)) for b in bases[:3])
        u = make_ds("u", signal + gen.standard_normal((300, 2)))
        for _ in range(5):
            order = rng.permutation(4)
            previous = -np.inf
            for size in range(1, 5):
                subset = [bases[i] for i in order[:size]]
                r2 = r2_in_sample(u, subset, MINNORM)
                assert r2 >= previous - 1e-10
                previous = r2


class TestPairwise:
    def test_duplicate_models_rho_one(self, rng):
        values = rng.standard_normal((300, 4))
        groups = [
            DatasetGroup("a", {"train": make_ds("a", values)}),
            DatasetGroup("a_copy", {"train": make_ds("a_copy", values.copy())}),
        ]
        report = pairwise_analysis(groups, EXACT, eval_split="train")
        assert abs(report.pairwise_rho[0, 1] - 1.0) <= 1e-9
        assert report.pairwise_rho[0, 0] == 1.0
        assert not report.errors

    def test_structure_three_models(self, rng):
        groups = []
        for name in ("a", "b", "c"):
            train = make_ds(name, rng.standard_normal((200, 3)))
            test = make_ds(name, rng.standard_normal((80, 3)), split="test")
            groups.append(DatasetGroup(name, {"train": train, "test": test}))
        report = pairwise_analysis(groups, SolverConfig(), eval_split="test")
        rho = report.pairwise_rho
        assert np.array_equal(rho, rho.T)
        assert np.all(np.diag(rho) == 1.0)
        r2 = report.pairwise_r2
        for i in range(3):
            for j in range(i + 1, 3):
                assert rho[i, j] == (r2[i, j] + r2[j, i]) / 2.0

    def test_cell_failure_degrades(self, rng):
        ok_train = make_ds("ok", rng.standard_normal((100, 2)))
        ok_test = make_ds("ok", rng.standard_normal((40, 2)), split="test")
        flat_train = make_ds("flat", rng.standard_normal((100, 2)))
        flat_test = make_ds("flat", np.full((40, 2), 1.0), split="test")  # degenerate on eval
        groups = [
            DatasetGroup("ok", {"train": ok_train, "test": ok_test}),
            DatasetGroup("flat", {"train": flat_train, "test": flat_test}),
        ]
        report = pairwise_analysis(groups, SolverConfig(), eval_split="test")
        assert report.errors  # the flat-target cell is recorded, not fatal
        assert math.isnan(report.pairwise_r2[1, 0])
        assert not math.isnan(report.pairwise_r2[0, 1])
        assert any(key.startswith("row__flat") for key in report.errors)

    def test_needs_two_models(self, rng):
        from lmdkit import AlignmentError

        with pytest.raises(AlignmentError):
            pairwise_analysis(
                [DatasetGroup("a", {"train": make_ds("a", rng.standard_normal((10, 2)))})],
                EXACT,
                eval_split="train",
            )


class TestGroup:
    def test_two_models_equal_directional_pairwise(self, rng):
        groups = []
        for name in ("a", "b"):
            train = make_ds(name, rng.standard_normal((150, 3)))
            test = make_ds(name, rng.standard_normal((60, 3)), split="test")
            groups.append(DatasetGroup(name, {"train": train, "test": test}))
        pair = pairwise_analysis(groups, SolverConfig(), eval_split="test")
        grp = group_analysis(groups, SolverConfig(), eval_split="test")
        assert grp.group_r2[0] == pair.pairwise_r2[0, 1]
        assert grp.group_r2[1] == pair.pairwise_r2[1, 0]
        assert grp.group_rho == float(np.mean(grp.group_r2))

    def test_constructed_dependence(self, rng):
        v1 = rng.standard_normal((500, 3))
        v2 = rng.standard_normal((500, 3))
        groups = [
            DatasetGroup("v1", {"train": make_ds("v1", v1)}),
            DatasetGroup("v2", {"train": make_ds("v2", v2)}),
            DatasetGroup("u", {"train": make_ds("u", v1 + v2)}),
        ]
        report = group_analysis(groups, MINNORM, eval_split="train")
        r2_u = report.group_r2[report.models.index("u")]
        assert abs(r2_u - 1.0) <= 1e-9


class TestSweep:
    def test_single_t_equals_group_analysis(self, rng):
        groups = groups_from_synth(5, 200, 80, [3, 3], 3, sigma=0.4, rule="noisy_combination")
        single = group_analysis(groups, SolverConfig(), eval_split="test")
        sweep = length_sweep({128: groups}, SolverConfig(), eval_split="test")
        assert sweep.group_r2[128] == single.group_r2
        assert sweep.group_rho[128] == single.group_rho
        assert sweep.seq_lens == [128]

    def test_noise_schedule_increases_with_t(self):
        groups_by_t = {}
        for t, sigma in ((16, 2.5), (64, 0.8), (512, 0.1)):
            groups_by_t[t] = groups_from_synth(
                7, 400, 150, [3, 3], 3, rule="noisy_combination", sigma=sigma, seq_len=t
            )
        report = length_sweep(groups_by_t, SolverConfig(), eval_split="test")
        rhos = [report.group_rho[t] for t in report.seq_lens]
        assert report.seq_lens == [16, 64, 512]
        assert rhos[0] < rhos[1] < rhos[2]

    def test_standard_length_grid(self):
        lengths = [16, 32, 64, 128, 256, 512]
        groups_by_t = {
            t: groups_from_synth(11, 120, 50, [2, 2], 2, rule="noisy_combination",
                                 sigma=0.5, seq_len=t)
            for t in lengths
        }
        report = length_sweep(groups_by_t, SolverConfig(), eval_split="test")
        assert report.seq_lens == lengths
        assert set(report.group_rho) == set(lengths)
        lines = sweep_csv(report).strip().split("\n")
        assert lines[0] == "model," + ",".join(f"T={t}" for t in lengths)

    def test_model_order_mismatch_rejected(self, rng):
        from lmdkit import AlignmentError

        g1 = groups_from_synth(1, 50, 20, [2], 2)
        g2 = list(reversed(groups_from_synth(1, 50, 20, [2], 2)))
        with pytest.raises(AlignmentError):
            length_sweep({16: g1, 32: g2}, SolverConfig(), eval_split="test")


class TestEmission:
    def test_matrix_csv_layout(self):
        m = np.array([[1.0, 0.25], [0.5, 1.0]])
        text = matrix_csv(["a", "b"], m)
        lines = text.strip().split("\n")
        assert lines[0] == "model,a,b"
        assert lines[1] == "a,1.0,0.25"
        assert lines[2] == "b,0.5,1.0"

    def test_group_csv_mean_row(self, rng):
        groups = groups_from_synth(3, 100, 40, [2, 2], 2)
        report = group_analysis(groups, SolverConfig(), eval_split="test")
        lines = group_csv(report).strip().split("\n")
        assert lines[0] == f"model,T={report.seq_len}"
        assert lines[-1].startswith("Group Corr,")
        parsed = [float(line.split(",")[1]) for line in lines[1:-1]]
        corr = float(lines[-1].split(",")[1])
        assert corr == float(np.mean(parsed))  # repr round-trips exactly

    def test_sweep_csv_layout(self):
        groups_by_t = {
            16: groups_from_synth(2, 80, 30, [2], 2, seq_len=16),
            32: groups_from_synth(2, 80, 30, [2], 2, seq_len=32),
        }
        report = length_sweep(groups_by_t, SolverConfig(), eval_split="test")
        lines = sweep_csv(report).strip().split("\n")
        assert lines[0] == "model,T=16,T=32"
        assert lines[-1].startswith("Group Corr,")
        assert len(lines) == 2 + len(report.models)

    def test_plotdata_shape(self):
        payload = plotdata(["a", "b"], np.array([[1.0, float("nan")], [0.5, 1.0]]), "pairwise_rho")
        assert payload["labels"] == ["a", "b"]
        assert payload["values"][0][1] is None  # NaN becomes null for JSON
        assert payload["kind"] == "pairwise_rho"

    def test_format_float_round_trip(self):
        for v in (1.0, 0.1 + 0.2, 1e-300, -3.5e17):
            assert float(format_float(v)) == v
        assert format_float(float("nan")) == "nan"

"""Goodness-of-fit and correlation metrics over fitted decompositions.

R2 = 1 - SSR/SST, where SSR is the mean squared residual norm and SST
the mean squared deviation of the target from its own evaluation-set
mean. The mean in SST always comes from the rows being evaluated, not
from the training rows. In-sample with a centered exact solve this lands
in [0, 1]; out-of-sample values are reported raw, never clamped, with an
``in_sample`` flag so consumers can tell which guarantee applies.

The pairwise correlation of two models is the arithmetic mean of the two
directional R2 values; the group correlation of n models is the mean of
the n leave-one-out R2 values. Reports always store the directional R2
matrix and derive the symmetric one from it, never the reverse.

Analyses are embarrassingly parallel across cells; each cell (one
target, one basis set) is fitted on the train split and scored on the
evaluation split independently, and a failed cell degrades to a recorded
error instead of aborting the run.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import _kernels
from .errors import AlignmentError, DegenerateTargetError, DimensionError, LmdkitError
from .moments import accumulate
from .solver import LmdSolution, SolverConfig, solve
from .store import EmbeddingDataset, align_datasets


@dataclass
class FitReport:
    """SSR, SST and R2 for one (target, basis set, split) evaluation."""

    target: str
    basis: list[str]
    split: str
    ssr: float
    sst: float
    r2: float
    n_eval: int
    in_sample: bool

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "basis": self.basis,
            "split": self.split,
            "ssr": self.ssr,
            "sst": self.sst,
            "r2": self.r2,
            "n_eval": self.n_eval,
            "in_sample": self.in_sample,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FitReport":
        return cls(
            target=raw["target"],
            basis=list(raw["basis"]),
            split=raw["split"],
            ssr=float(raw["ssr"]),
            sst=float(raw["sst"]),
            r2=float(raw["r2"]),
            n_eval=int(raw["n_eval"]),
            in_sample=bool(raw["in_sample"]),
        )


@dataclass
class DatasetGroup:
    """All splits of one model's embeddings at one sequence length."""

    name: str
    splits: dict[str, EmbeddingDataset]

    @property
    def seq_len(self) -> int:
        return next(iter(self.splits.values())).seq_len

    def split(self, name: str) -> EmbeddingDataset:
        if name not in self.splits:
            raise AlignmentError(f"model {self.name!r} has no {name!r} split")
        return self.splits[name]


class CellCache(Protocol):
    """Optional per-cell persistence; lets long analyses resume."""

    def get(self, key: str) -> dict | None: ...

    def put(self, key: str, value: dict) -> None: ...


def evaluate_r2(
    solution: LmdSolution,
    target: EmbeddingDataset,
    bases: Sequence[EmbeddingDataset],
    in_sample: bool = False,
    chunk_rows: int = 8192,
) -> FitReport:
    """Score a fitted solution against evaluation data in one streaming pass."""
    view = align_datasets(bases, target)
    if view.dims != solution.dims:
        raise DimensionError(
            f"solution blocks {solution.dims} do not match basis dims {view.dims}"
        )
    if view.u_dim != solution.d_u:
        raise DimensionError(
            f"solution output dim {solution.d_u} does not match target dim {view.u_dim}"
        )
    w_t = np.ascontiguousarray(solution.W.T)
    bias = solution.bias if solution.bias is not None else np.zeros(solution.d_u)
    bias = np.ascontiguousarray(bias, dtype=np.float64)

    sum_u = np.zeros(view.u_dim)
    ssr_total = 0.0
    usq_total = 0.0
    for u, z in view.chunks(chunk_rows):
        ssr_inc, usq_inc = _kernels.accumulate_fit(u, z, w_t, bias, sum_u)
        ssr_total += ssr_inc
        usq_total += usq_inc

    n = view.n
    mean_u = sum_u / n
    ssr = ssr_total / n
    sst = usq_total / n - float(mean_u @ mean_u)
    if sst <= 0.0:
        raise DegenerateTargetError(
            f"target {target.model_name!r} is constant on split {target.split!r}; R2 undefined"
        )
    return FitReport(
        target=target.model_name,
        basis=[b.model_name for b in bases],
        split=target.split,
        ssr=ssr,
        sst=sst,
        r2=1.0 - ssr / sst,
        n_eval=n,
        in_sample=in_sample,
    )


def fit_datasets(
    target: EmbeddingDataset,
    bases: Sequence[EmbeddingDataset],
    config: SolverConfig | None = None,
    chunk_rows: int = 8192,
) -> LmdSolution:
    """Align, accumulate moments and solve in one call."""
    config = config or SolverConfig()
    view = align_datasets(bases, target)
    summary = accumulate(view, chunk_rows).finalize(center=config.center)
    return solve(summary, config)


def fit_cell(
    target_group: DatasetGroup,
    basis_groups: Sequence[DatasetGroup],
    config: SolverConfig,
    eval_split: str,
    train_split: str = "train",
) -> FitReport:
    """Fit one cell on the train split and score it on the eval split."""
    solution = fit_datasets(
        target_group.split(train_split),
        [g.split(train_split) for g in basis_groups],
        config,
    )
    return evaluate_r2(
        solution,
        target_group.split(eval_split),
        [g.split(eval_split) for g in basis_groups],
        in_sample=(eval_split == train_split),
    )


@dataclass
class CorrelationReport:
    """Pairwise and/or leave-one-out dependency structure of a model set.

    pairwise_r2[i][j] is the dependency of target i on basis j (diagonal
    defined as 1, never fitted); pairwise_rho is its symmetrization.
    group_r2[i] is target i fitted on all the others. Failed cells hold
    NaN and their errors are recorded by cell key.
    """

    models: list[str]
    eval_split: str
    seq_len: int | None = None
    pairwise_r2: np.ndarray | None = None
    pairwise_rho: np.ndarray | None = None
    group_r2: list[float] | None = None
    group_rho: float | None = None
    errors: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "eval_split": self.eval_split,
            "seq_len": self.seq_len,
            "pairwise_r2": None if self.pairwise_r2 is None else _matrix_to_lists(self.pairwise_r2),
            "pairwise_rho": None
            if self.pairwise_rho is None
            else _matrix_to_lists(self.pairwise_rho),
            "group_r2": None if self.group_r2 is None else [_json_float(v) for v in self.group_r2],
            "group_rho": _json_float(self.group_rho) if self.group_rho is not None else None,
            "errors": self.errors,
            "config": self.config,
        }


@dataclass
class SweepReport:
    """Leave-one-out R2 per model across sequence lengths (plus the mean row)."""

    models: list[str]
    seq_lens: list[int]
    group_r2: dict[int, list[float]]
    group_rho: dict[int, float]
    eval_split: str
    errors: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "seq_lens": self.seq_lens,
            "group_r2": {str(t): [_json_float(v) for v in row] for t, row in self.group_r2.items()},
            "group_rho": {str(t): _json_float(v) for t, v in self.group_rho.items()},
            "eval_split": self.eval_split,
            "errors": self.errors,
            "config": self.config,
        }


def _json_float(v: float) -> float | None:
    return None if v is None or math.isnan(v) else float(v)


def _matrix_to_lists(m: np.ndarray) -> list[list[float | None]]:
    return [[_json_float(float(v)) for v in row] for row in m]


def _config_echo(config: SolverConfig) -> dict:
    return {
        "mode": config.mode,
        "lambda": config.lambda_,
        "eig_target": config.eig_target,
        "pinv_cutoff": config.pinv_cutoff,
        "center": config.center,
    }


def cell_key(kind: str, target: str, basis: Sequence[str], seq_len: int, eval_split: str) -> str:
    basis_part = "+".join(basis)
    return f"{kind}__{target}__{basis_part}__T{seq_len}__{eval_split}"


def _run_cells(
    cells: list[tuple[str, DatasetGroup, list[DatasetGroup]]],
    config: SolverConfig,
    eval_split: str,
    train_split: str,
    workers: int,
    cache: CellCache | None,
) -> tuple[dict[str, FitReport], dict[str, str]]:
    """Execute analysis cells, consulting the cache first; errors degrade."""
    reports: dict[str, FitReport] = {}
    errors: dict[str, str] = {}
    pending: list[tuple[str, DatasetGroup, list[DatasetGroup]]] = []
    for key, target_group, basis_groups in cells:
        cached = cache.get(key) if cache is not None else None
        if cached is not None:
            if "error" in cached:
                errors[key] = cached["error"]
            else:
                reports[key] = FitReport.from_dict(cached["report"])
            continue
        pending.append((key, target_group, basis_groups))

    def run_one(item):
        key, target_group, basis_groups = item
        try:
            report = fit_cell(target_group, basis_groups, config, eval_split, train_split)
            return key, report, None
        except LmdkitError as exc:
            return key, None, f"{type(exc).__name__}: {exc}"

    if workers > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, pending))
    else:
        results = [run_one(item) for item in pending]

    for key, report, error in results:
        if error is not None:
            errors[key] = error
            if cache is not None:
                cache.put(key, {"error": error})
        else:
            reports[key] = report
            if cache is not None:
                cache.put(key, {"report": report.to_dict()})
    return reports, errors


def _check_groups(groups: Sequence[DatasetGroup], eval_split: str, train_split: str) -> None:
    if len(groups) < 2:
        raise AlignmentError("analyses need at least two models")
    names = [g.name for g in groups]
    if len(set(names)) != len(names):
        raise AlignmentError(f"duplicate model names in analysis: {names}")
    for g in groups:
        g.split(train_split)
        g.split(eval_split)


def pairwise_analysis(
    groups: Sequence[DatasetGroup],
    config: SolverConfig | None = None,
    eval_split: str = "test",
    train_split: str = "train",
    workers: int = 1,
    cache: CellCache | None = None,
) -> CorrelationReport:
    """Directional R2 for every ordered model pair, plus the symmetric rho."""
    config = config or SolverConfig()
    _check_groups(groups, eval_split, train_split)
    models = [g.name for g in groups]
    n = len(groups)
    seq_len = groups[0].seq_len

    cells = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            key = cell_key("pair", models[i], [models[j]], seq_len, eval_split)
            cells.append((key, groups[i], [groups[j]]))
    reports, errors = _run_cells(cells, config, eval_split, train_split, workers, cache)

    r2 = np.full((n, n), np.nan)
    np.fill_diagonal(r2, 1.0)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            key = cell_key("pair", models[i], [models[j]], seq_len, eval_split)
            if key in reports:
                r2[i, j] = reports[key].r2

    rho = np.full((n, n), np.nan)
    np.fill_diagonal(rho, 1.0)
    for i in range(n):
        for j in range(i + 1, n):
            value = (r2[i, j] + r2[j, i]) / 2.0
            rho[i, j] = value
            rho[j, i] = value

    _report_failed_rows(models, r2, errors)
    return CorrelationReport(
        models=models,
        eval_split=eval_split,
        seq_len=seq_len,
        pairwise_r2=r2,
        pairwise_rho=rho,
        errors=errors,
        config=_config_echo(config),
    )


def group_analysis(
    groups: Sequence[DatasetGroup],
    config: SolverConfig | None = None,
    eval_split: str = "test",
    train_split: str = "train",
    workers: int = 1,
    cache: CellCache | None = None,
) -> CorrelationReport:
    """Leave-one-out R2 per model; group rho is their mean."""
    config = config or SolverConfig()
    _check_groups(groups, eval_split, train_split)
    models = [g.name for g in groups]
    seq_len = groups[0].seq_len

    cells = []
    for i, target_group in enumerate(groups):
        rest = [g for j, g in enumerate(groups) if j != i]
        key = cell_key("group", models[i], [g.name for g in rest], seq_len, eval_split)
        cells.append((key, target_group, rest))
    reports, errors = _run_cells(cells, config, eval_split, train_split, workers, cache)

    group_r2: list[float] = []
    for i, target_group in enumerate(groups):
        rest = [g.name for j, g in enumerate(groups) if j != i]
        key = cell_key("group", models[i], rest, seq_len, eval_split)
        group_r2.append(reports[key].r2 if key in reports else float("nan"))
    ok = [v for v in group_r2 if not math.isnan(v)]
    group_rho = float(np.mean(ok)) if ok else float("nan")

    return CorrelationReport(
        models=models,
        eval_split=eval_split,
        seq_len=seq_len,
        group_r2=group_r2,
        group_rho=group_rho,
        errors=errors,
        config=_config_echo(config),
    )


def length_sweep(
    groups_by_seq_len: Mapping[int, Sequence[DatasetGroup]],
    config: SolverConfig | None = None,
    eval_split: str = "test",
    train_split: str = "train",
    workers: int = 1,
    cache: CellCache | None = None,
) -> SweepReport:
    """Group analysis repeated across sequence lengths; per-T failures isolated."""
    config = config or SolverConfig()
    if not groups_by_seq_len:
        raise AlignmentError("sweep needs at least one sequence length")
    seq_lens = sorted(int(t) for t in groups_by_seq_len)
    models = [g.name for g in groups_by_seq_len[seq_lens[0]]]

    group_r2: dict[int, list[float]] = {}
    group_rho: dict[int, float] = {}
    errors: dict[str, str] = {}
    for t in seq_lens:
        groups = list(groups_by_seq_len[t])
        if [g.name for g in groups] != models:
            raise AlignmentError(
                f"model list at T={t} differs from T={seq_lens[0]}: "
                f"{[g.name for g in groups]} vs {models}"
            )
        try:
            report = group_analysis(groups, config, eval_split, train_split, workers, cache)
            group_r2[t] = list(report.group_r2)
            group_rho[t] = report.group_rho
            errors.update(report.errors)
        except LmdkitError as exc:
            group_r2[t] = [float("nan")] * len(models)
            group_rho[t] = float("nan")
            errors[f"sweep__T{t}"] = f"{type(exc).__name__}: {exc}"

    return SweepReport(
        models=models,
        seq_lens=seq_lens,
        group_r2=group_r2,
        group_rho=group_rho,
        eval_split=eval_split,
        errors=errors,
        config=_config_echo(config),
    )


def _report_failed_rows(models: list[str], r2: np.ndarray, errors: dict[str, str]) -> None:
    """Flag targets for which every fit failed; the analysis still returns."""
    n = len(models)
    for i in range(n):
        off_diag = [r2[i, j] for j in range(n) if j != i]
        if off_diag and all(math.isnan(v) for v in off_diag):
            errors[f"row__{models[i]}"] = "every fit for this target failed"


# --- report emission ------------------------------------------------------


def format_float(v: float) -> str:
    """Shortest decimal that round-trips; NaN spelled 'nan'."""
    if math.isnan(v):
        return "nan"
    return repr(float(v))


def matrix_csv(models: Sequence[str], matrix: np.ndarray, corner: str = "model") -> str:
    """n x n matrix with model-name headers, row = target, column = basis."""
    lines = [",".join([corner] + list(models))]
    for name, row in zip(models, matrix):
        lines.append(",".join([name] + [format_float(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def group_csv(report: CorrelationReport) -> str:
    """Two-column table: per-model leave-one-out R2 plus the Group Corr row."""
    header = f"model,T={report.seq_len}"
    lines = [header]
    for name, value in zip(report.models, report.group_r2):
        lines.append(f"{name},{format_float(value)}")
    lines.append(f"Group Corr,{format_float(report.group_rho)}")
    return "\n".join(lines) + "\n"


def sweep_csv(report: SweepReport) -> str:
    """models x T table with a trailing Group Corr row."""
    header = ",".join(["model"] + [f"T={t}" for t in report.seq_lens])
    lines = [header]
    for i, name in enumerate(report.models):
        values = [format_float(report.group_r2[t][i]) for t in report.seq_lens]
        lines.append(",".join([name] + values))
    corr = [format_float(report.group_rho[t]) for t in report.seq_lens]
    lines.append(",".join(["Group Corr"] + corr))
    return "\n".join(lines) + "\n"


def plotdata(labels: Sequence[str], matrix: np.ndarray, kind: str) -> dict:
    """Labels + values payload for external heatmap rendering."""
    return {"kind": kind, "labels": list(labels), "values": _matrix_to_lists(matrix)}

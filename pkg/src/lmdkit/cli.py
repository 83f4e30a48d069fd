"""Command-line pipeline: validate trees, generate synthetic fixtures, fit
single decompositions and run pairwise / leave-one-out / length-sweep
analyses with resumable per-cell caching.

Dataset layout convention: ``<root>/<model>/<split>/T<seq_len>.lmdemb``.
Reports are deterministic: identical inputs and flags produce byte-identical
JSON/CSV artifacts (floats printed shortest-round-trip, no timestamps).

Exit codes: 0 success, 2 invalid input (with a machine-readable error JSON
on stdout), 1 internal failure.
"""

from __future__ import annotations

import json
import os
import re
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics, store, synth
from .errors import LmdkitError, ValidationError
from .metrics import DatasetGroup
from .solver import SolverConfig
from .store import EmbeddingDataset, read_dataset

SOLVER_FLAG_TO_MODE = {
    "full-rank": "full_rank",
    "min-norm": "min_norm",
    "ridge": "ridge_fixed",
    "ridge-adaptive": "ridge_adaptive",
}

FORMATS = ("json", "csv", "plotdata")


def _fail_validation(exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(payload, indent=2, sort_keys=True))
    sys.exit(2)


def _fail_internal(exc: Exception) -> None:
    click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def dataset_path(root: Path, model: str, split: str, seq_len: int) -> Path:
    return root / model / split / f"T{seq_len}.lmdemb"


def _load_group(
    root: Path, model: str, splits: list[str], seq_len: int, normalize: bool
) -> DatasetGroup:
    loaded: dict[str, EmbeddingDataset] = {}
    for split in splits:
        path = dataset_path(root, model, split, seq_len)
        if not path.exists():
            raise ValidationError(f"missing dataset for model {model!r}: {path}")
        ds = read_dataset(path, model_name=model, split=split)
        loaded[split] = store.l2_normalized(ds) if normalize else ds
    return DatasetGroup(name=model, splits=loaded)


class DirectoryCellCache:
    """Per-cell JSON files under <out>/cells; lets analyses resume."""

    def __init__(self, directory: Path, force: bool = False) -> None:
        self.directory = directory
        self.force = force
        directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def _filename(key: str) -> str:
        return re.sub(r"[^A-Za-z0-9_.+=-]", "-", key) + ".json"

    def get(self, key: str) -> dict | None:
        if self.force:
            return None
        path = self.directory / self._filename(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError:
            return None

    def put(self, key: str, value: dict) -> None:
        _write_json(self.directory / self._filename(key), value)


def _solver_options(fn):
    fn = click.option(
        "--solver",
        type=click.Choice(sorted(SOLVER_FLAG_TO_MODE)),
        default="ridge-adaptive",
        show_default=True,
        help="Closed-form route for inverting the moment matrix.",
    )(fn)
    fn = click.option("--lambda", "lambda_", type=float, default=0.0, show_default=True,
                      help="Fixed ridge weight (solver=ridge).")(fn)
    fn = click.option("--eig-target", type=float, default=1e-6, show_default=True,
                      help="Adaptive-ridge floor for the smallest eigenvalue.")(fn)
    fn = click.option("--pinv-cutoff", type=float, default=1e-12, show_default=True,
                      help="Relative eigenvalue cutoff for the pseudoinverse.")(fn)
    fn = click.option("--center/--no-center", default=True, show_default=True,
                      help="Fit the bias-term variant on covariances.")(fn)
    fn = click.option("--l2-normalize", is_flag=True, default=False,
                      help="L2-normalize embedding rows before analysis.")(fn)
    return fn


def _analysis_options(fn):
    fn = click.option("--root", type=click.Path(exists=True, file_okay=False), required=True,
                      help="Dataset tree root (<root>/<model>/<split>/T<L>.lmdemb).")(fn)
    fn = click.option("--models", required=True,
                      help="Comma-separated model list; report order follows it.")(fn)
    fn = click.option("--train-split", default="train", show_default=True)(fn)
    fn = click.option("--eval-split", type=click.Choice(store.SPLITS), default="test",
                      show_default=True)(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), required=True)(fn)
    fn = click.option("--format", "formats", default="json,csv", show_default=True,
                      help="Comma-separated output formats: json,csv,plotdata.")(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="Cell worker threads [default: $LMDKIT_WORKERS or 1].")(fn)
    fn = click.option("--force", is_flag=True, default=False,
                      help="Recompute cells even when cached results exist.")(fn)
    fn = _solver_options(fn)
    return fn


def _build_config(solver: str, lambda_: float, eig_target: float, pinv_cutoff: float,
                  center: bool) -> SolverConfig:
    return SolverConfig(
        mode=SOLVER_FLAG_TO_MODE[solver],
        lambda_=lambda_,
        eig_target=eig_target,
        pinv_cutoff=pinv_cutoff,
        center=center,
    )


def _parse_formats(formats: str) -> list[str]:
    chosen = [f.strip() for f in formats.split(",") if f.strip()]
    for f in chosen:
        if f not in FORMATS:
            raise ValidationError(f"unknown output format {f!r} (expected subset of {FORMATS})")
    if not chosen:
        raise ValidationError("need at least one output format")
    return chosen


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    return max(1, int(os.environ.get("LMDKIT_WORKERS", "1")))


@click.group()
@click.version_option()
def main() -> None:
    """Linear decomposition of sequence-embedding models."""


# --- validate ---------------------------------------------------------------


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path(exists=True))
def validate(paths: tuple[str, ...]) -> None:
    """Check embedding files: headers, payload sizes, finiteness, alignment."""
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.rglob("*.lmdemb")))
        else:
            files.append(path)
    violations: list[str] = []
    headers: dict[Path, tuple[int, int, int, str]] = {}
    for path in files:
        try:
            n_rows = 0
            for chunk in store.iter_chunks(path):
                n_rows += chunk.shape[0]
            ds_header = read_dataset(path, validate=False, mmap=True)
            headers[path] = (ds_header.n, ds_header.d, ds_header.seq_len, ds_header.split)
            manifest = store.read_manifest(path)
            if manifest is not None and manifest.split_sizes.get(ds_header.split) not in (
                None,
                ds_header.n,
            ):
                violations.append(
                    f"{path}: manifest promises "
                    f"{manifest.split_sizes.get(ds_header.split)} rows, file has {ds_header.n}"
                )
            click.echo(
                f"OK   {path} (n={ds_header.n}, d={ds_header.d}, T={ds_header.seq_len})"
            )
        except LmdkitError as exc:
            violations.append(str(exc))
            click.echo(f"FAIL {path}: {exc}")
    # alignment: all files sharing (split, T) must agree on n
    by_key: dict[tuple[str, int], dict[Path, int]] = {}
    for path, (n, _, seq_len, split) in headers.items():
        by_key.setdefault((split, seq_len), {})[path] = n
    for (split, seq_len), group in sorted(by_key.items()):
        if len(set(group.values())) > 1:
            detail = ", ".join(f"{p.name}:{n}" for p, n in sorted(group.items()))
            violations.append(
                f"alignment: row counts differ for split={split} T={seq_len}: {detail}"
            )
    if violations:
        click.echo(f"{len(violations)} violation(s)")
        payload = {"error": {"type": "ValidationError", "violations": violations}}
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        sys.exit(2)
    click.echo(f"all {len(files)} file(s) valid")


# --- synth ------------------------------------------------------------------


@main.command("synth")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train", "n_train", type=int, default=1000, show_default=True)
@click.option("--validation", "n_validation", type=int, default=0, show_default=True)
@click.option("--test", "n_test", type=int, default=0, show_default=True)
@click.option("--dims", default="8,8,8", show_default=True, help="Per-basis dims, comma-separated.")
@click.option("--d-u", "d_u", type=int, default=8, show_default=True, help="Target dimension.")
@click.option("--rule", default="exact_combination", show_default=True,
              help="Target rule; duplicate_of takes an index as duplicate_of:<i>.")
@click.option("--sigma", type=float, default=0.0, show_default=True)
@click.option("--seq-len", type=int, default=128, show_default=True)
@click.option("--latent-rank", type=int, default=None)
@click.option("--names", default=None, help="Model names: target,basis1,... ")
def synth_cmd(out, seed, n_train, n_validation, n_test, dims, d_u, rule, sigma, seq_len,
              latent_rank, names) -> None:
    """Generate a synthetic dataset tree plus its ground-truth file."""
    try:
        root = Path(out)
        dim_list = [int(x) for x in dims.split(",") if x.strip()]
        duplicate_index = 0
        if rule.startswith("duplicate_of"):
            rule, _, idx = rule.partition(":")
            duplicate_index = int(idx or 0)
        name_list = [x.strip() for x in names.split(",")] if names else None
        split_counts = {"train": n_train, "validation": n_validation, "test": n_test}
        truth = None
        for stream, (split, count) in enumerate(split_counts.items()):
            if count < 1:
                continue
            spec = synth.SynthSpec(
                seed=seed,
                n=count,
                dims=dim_list,
                d_u=d_u,
                target_rule=rule,
                duplicate_index=duplicate_index,
                noise_sigma=sigma,
                latent_rank=latent_rank,
                stream=stream,
                split=split,
                seq_len=seq_len,
                model_names=name_list,
            )
            target, bases, truth = synth.generate(spec)
            for ds in [target] + bases:
                store.write_dataset(ds, dataset_path(root, ds.model_name, split, seq_len))
        if truth is None:
            raise ValidationError("no split has a positive sample count")
        names_out = name_list or synth.SynthSpec(
            seed=seed, n=1, dims=dim_list, d_u=d_u, target_rule="zero"
        ).names()
        _write_json(
            root / f"synth_truth_T{seq_len}.json",
            {
                "seed": seed,
                "dims": dim_list,
                "d_u": d_u,
                "rule": rule,
                "sigma": sigma,
                "seq_len": seq_len,
                "names": names_out,
                "expected_r2": truth.expected_r2,
                "W": None if truth.W is None else [[float(v) for v in row] for row in truth.W],
                "b": None if truth.b is None else [float(v) for v in truth.b],
            },
        )
        click.echo(f"wrote synthetic tree under {root}")
    except LmdkitError as exc:
        _fail_validation(exc)
    except Exception as exc:  # pragma: no cover - internal failures
        _fail_internal(exc)


# --- fit --------------------------------------------------------------------


@main.command()
@click.option("--root", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--target", required=True)
@click.option("--bases", required=True, help="Comma-separated basis model names.")
@click.option("--seq-len", type=int, required=True)
@click.option("--train-split", default="train", show_default=True)
@click.option("--eval-split", type=click.Choice(store.SPLITS), default="test", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_solver_options
def fit(root, target, bases, seq_len, train_split, eval_split, out,
        solver, lambda_, eig_target, pinv_cutoff, center, l2_normalize) -> None:
    """Fit one decomposition and report R2 on train and eval splits."""
    try:
        config = _build_config(solver, lambda_, eig_target, pinv_cutoff, center)
        root_path = Path(root)
        basis_names = [b.strip() for b in bases.split(",") if b.strip()]
        if not basis_names:
            raise ValidationError("need at least one basis model")
        splits = sorted({train_split, eval_split})
        target_group = _load_group(root_path, target, splits, seq_len, l2_normalize)
        basis_groups = [
            _load_group(root_path, name, splits, seq_len, l2_normalize) for name in basis_names
        ]

        solution = metrics.fit_datasets(
            target_group.split(train_split),
            [g.split(train_split) for g in basis_groups],
            config,
        )
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        solution.save(out_dir / "solution.json")

        report_train = metrics.evaluate_r2(
            solution,
            target_group.split(train_split),
            [g.split(train_split) for g in basis_groups],
            in_sample=True,
        )
        _write_json(out_dir / f"fit_{train_split}.json", report_train.to_dict())
        click.echo(f"r2[{train_split}] = {metrics.format_float(report_train.r2)}")
        if eval_split != train_split:
            report_eval = metrics.evaluate_r2(
                solution,
                target_group.split(eval_split),
                [g.split(eval_split) for g in basis_groups],
                in_sample=False,
            )
            _write_json(out_dir / f"fit_{eval_split}.json", report_eval.to_dict())
            click.echo(f"r2[{eval_split}] = {metrics.format_float(report_eval.r2)}")
        click.echo(f"solution written to {out_dir}")
    except LmdkitError as exc:
        _fail_validation(exc)
    except Exception as exc:
        _fail_internal(exc)


# --- analyses ---------------------------------------------------------------


def _load_groups(root: str, models: str, train_split: str, eval_split: str, seq_len: int,
                 normalize: bool) -> list[DatasetGroup]:
    names = [m.strip() for m in models.split(",") if m.strip()]
    if len(names) < 2:
        raise ValidationError("need at least two models")
    splits = sorted({train_split, eval_split})
    return [_load_group(Path(root), name, splits, seq_len, normalize) for name in names]


def _emit_pairwise(report, out_dir: Path, formats: list[str]) -> None:
    if "json" in formats:
        _write_json(out_dir / "pairwise.json", report.to_dict())
    if "csv" in formats:
        _write_text(out_dir / "pairwise_r2.csv",
                    metrics.matrix_csv(report.models, report.pairwise_r2))
        _write_text(out_dir / "pairwise_rho.csv",
                    metrics.matrix_csv(report.models, report.pairwise_rho))
    if "plotdata" in formats:
        _write_json(out_dir / "pairwise_rho.plotdata.json",
                    metrics.plotdata(report.models, report.pairwise_rho, "pairwise_rho"))
        _write_json(out_dir / "pairwise_r2.plotdata.json",
                    metrics.plotdata(report.models, report.pairwise_r2, "pairwise_r2"))


def _emit_group(report, out_dir: Path, formats: list[str]) -> None:
    if "json" in formats:
        _write_json(out_dir / "group.json", report.to_dict())
    if "csv" in formats:
        _write_text(out_dir / "group.csv", metrics.group_csv(report))
    if "plotdata" in formats:
        matrix = np.asarray([report.group_r2])
        _write_json(out_dir / "group.plotdata.json",
                    metrics.plotdata(report.models, matrix, "group_r2"))


def _emit_sweep(report, out_dir: Path, formats: list[str]) -> None:
    if "json" in formats:
        _write_json(out_dir / "sweep.json", report.to_dict())
    if "csv" in formats:
        _write_text(out_dir / "sweep.csv", metrics.sweep_csv(report))
    if "plotdata" in formats:
        matrix = np.asarray(
            [[report.group_r2[t][i] for t in report.seq_lens] for i in range(len(report.models))]
        )
        _write_json(out_dir / "sweep.plotdata.json",
                    metrics.plotdata(report.models, matrix, "sweep_group_r2"))


def _finish_analysis(n_cells_expected: int, errors: dict, out_dir: Path) -> None:
    if errors:
        click.echo(f"{len(errors)} cell error(s); see report errors", err=True)
    if n_cells_expected > 0 and len(errors) >= n_cells_expected:
        click.echo("every analysis cell failed", err=True)
        sys.exit(1)
    click.echo(f"reports written to {out_dir}")


@main.command()
@click.option("--seq-len", type=int, required=True)
@_analysis_options
def pairwise(root, models, train_split, eval_split, out, formats, workers, force, seq_len,
             solver, lambda_, eig_target, pinv_cutoff, center, l2_normalize) -> None:
    """Directional R2 and symmetric rho for every model pair."""
    try:
        config = _build_config(solver, lambda_, eig_target, pinv_cutoff, center)
        chosen = _parse_formats(formats)
        groups = _load_groups(root, models, train_split, eval_split, seq_len, l2_normalize)
        out_dir = Path(out)
        cache = DirectoryCellCache(out_dir / "cells", force=force)
        report = metrics.pairwise_analysis(
            groups, config, eval_split, train_split,
            workers=_resolve_workers(workers), cache=cache,
        )
        _emit_pairwise(report, out_dir, chosen)
        n = len(report.models)
        _finish_analysis(n * (n - 1), report.errors, out_dir)
    except LmdkitError as exc:
        _fail_validation(exc)
    except Exception as exc:
        _fail_internal(exc)


@main.command()
@click.option("--seq-len", type=int, required=True)
@_analysis_options
def group(root, models, train_split, eval_split, out, formats, workers, force, seq_len,
          solver, lambda_, eig_target, pinv_cutoff, center, l2_normalize) -> None:
    """Leave-one-out R2 per model plus the group correlation."""
    try:
        config = _build_config(solver, lambda_, eig_target, pinv_cutoff, center)
        chosen = _parse_formats(formats)
        groups = _load_groups(root, models, train_split, eval_split, seq_len, l2_normalize)
        out_dir = Path(out)
        cache = DirectoryCellCache(out_dir / "cells", force=force)
        report = metrics.group_analysis(
            groups, config, eval_split, train_split,
            workers=_resolve_workers(workers), cache=cache,
        )
        _emit_group(report, out_dir, chosen)
        _finish_analysis(len(report.models), report.errors, out_dir)
    except LmdkitError as exc:
        _fail_validation(exc)
    except Exception as exc:
        _fail_internal(exc)


@main.command()
@click.option("--seq-lens", required=True, help="Comma-separated sequence lengths.")
@_analysis_options
def sweep(root, models, train_split, eval_split, out, formats, workers, force, seq_lens,
          solver, lambda_, eig_target, pinv_cutoff, center, l2_normalize) -> None:
    """Group analysis repeated across sequence lengths."""
    try:
        config = _build_config(solver, lambda_, eig_target, pinv_cutoff, center)
        chosen = _parse_formats(formats)
        lengths = [int(t) for t in seq_lens.split(",") if t.strip()]
        if not lengths:
            raise ValidationError("need at least one sequence length")
        groups_by_t = {
            t: _load_groups(root, models, train_split, eval_split, t, l2_normalize)
            for t in lengths
        }
        out_dir = Path(out)
        cache = DirectoryCellCache(out_dir / "cells", force=force)
        report = metrics.length_sweep(
            groups_by_t, config, eval_split, train_split,
            workers=_resolve_workers(workers), cache=cache,
        )
        _emit_sweep(report, out_dir, chosen)
        n_cells = len(report.models) * len(report.seq_lens)
        _finish_analysis(n_cells, report.errors, out_dir)
    except LmdkitError as exc:
        _fail_validation(exc)
    except Exception as exc:
        _fail_internal(exc)


if __name__ == "__main__":
    main()

"""Command-line entry point for embedding export jobs."""

from __future__ import annotations

import json
import sys

import click

from .export import ExportJob, run_export
from .format import ExportError


@click.group()
def main() -> None:
    """Extract mean-pooled sequence embeddings from pretrained checkpoints."""


@main.command()
@click.option("--checkpoint", required=True, help="Model checkpoint name or local path.")
@click.option("--corpus", required=True,
              help="Corpus id: file:<path> (one sequence per line) or hf:<dataset>[:config][:split].")
@click.option("--train", "n_train", type=int, default=0, show_default=True)
@click.option("--validation", "n_validation", type=int, default=0, show_default=True)
@click.option("--test", "n_test", type=int, default=0, show_default=True)
@click.option("--seq-lens", required=True, help="Comma-separated sequence lengths.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_root", required=True, type=click.Path(file_okay=False))
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("--model-name", default=None,
              help="Directory name in the output tree [default: checkpoint basename].")
@click.option("--exclude-special", is_flag=True, default=False,
              help="Drop special-token positions from the pooled mean.")
@click.option("--t-ignores-special", is_flag=True, default=False,
              help="Interpret T as content tokens, excluding added special tokens.")
@click.option("--reference-tokenizer", default=None,
              help="Checkpoint whose tokenizer filters sequence lengths; must be "
                   "identical across all models of one analysis.")
@click.option("--min-tokens", type=int, default=16, show_default=True)
@click.option("--max-tokens", type=int, default=512, show_default=True)
def export(checkpoint, corpus, n_train, n_validation, n_test, seq_lens, seed, out_root,
           batch_size, device, model_name, exclude_special, t_ignores_special,
           reference_tokenizer, min_tokens, max_tokens) -> None:
    """Export embeddings for one checkpoint over a corpus."""
    try:
        lengths = [int(t) for t in seq_lens.split(",") if t.strip()]
        job = ExportJob(
            checkpoint=checkpoint,
            corpus=corpus,
            out_root=out_root,
            seq_lens=lengths,
            counts={"train": n_train, "validation": n_validation, "test": n_test},
            seed=seed,
            batch_size=batch_size,
            device=device,
            model_name=model_name,
            include_special=not exclude_special,
            t_counts_special=not t_ignores_special,
            reference_tokenizer=reference_tokenizer,
            min_tokens=min_tokens,
            max_tokens=max_tokens,
        )
        written = run_export(job)
        for path in written:
            click.echo(f"wrote {path}")
    except ExportError as exc:
        payload = {"error": {"type": "ExportError", "message": str(exc)}}
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        sys.exit(2)
    except Exception as exc:
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()

"""Mean-pooled sequence-embedding export into the lmdemb wire format."""

from .corpus import Selection, eligible_indices, load_sequences, select_sequences
from .export import ExportJob, run_export
from .format import ExportError, make_manifest, read_embeddings, write_embeddings
from .pooling import masked_mean

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportJob",
    "Selection",
    "eligible_indices",
    "load_sequences",
    "make_manifest",
    "masked_mean",
    "read_embeddings",
    "run_export",
    "select_sequences",
    "write_embeddings",
]

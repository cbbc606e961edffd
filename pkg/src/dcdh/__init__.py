"""Dual-stream collaborative discrete hashing with Hamming-space retrieval."""

import os as _os

# DCDH_THREADS caps internal (BLAS/OpenMP) parallelism. The limits must be
# exported before numpy is first imported, so this runs at package import.
_threads = _os.environ.get("DCDH_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ[_var] = _threads

from .dataset import (  # noqa: E402
    Dataset,
    DatasetError,
    Split,
    build_similarity,
    load_dataset,
    save_dataset,
    split_query_database,
    synth_clusters,
)
from .losses import HyperParams  # noqa: E402
from .train import Model, TrainConfig, encode, load_model, save_model, train  # noqa: E402

__all__ = [
    "Dataset",
    "DatasetError",
    "Split",
    "build_similarity",
    "load_dataset",
    "save_dataset",
    "split_query_database",
    "synth_clusters",
    "HyperParams",
    "Model",
    "TrainConfig",
    "encode",
    "load_model",
    "save_model",
    "train",
]

__version__ = "0.1.0"

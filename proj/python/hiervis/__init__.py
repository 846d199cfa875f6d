"""Hierarchical EEG-to-image retrieval.

Thin wrappers over the native core. Configs are plain dicts with the same schema as the
JSON documents the ``hiervis`` command line tool reads; reports come back as dicts.
"""

import json
from os import PathLike
from typing import Optional, Sequence, Union

import numpy as np

from . import _hiervis
from ._hiervis import HiervisError

__all__ = [
    "HiervisError",
    "default_config",
    "generate_synthetic",
    "train",
    "evaluate",
    "topk_accuracy",
    "binarize",
    "infonce_loss",
    "token_count",
    "count_parameters",
    "accounting_report",
]

Path = Union[str, PathLike]


def _dump(doc: Optional[dict]) -> str:
    return "" if doc is None else json.dumps(doc)


def default_config() -> dict:
    return json.loads(_hiervis.default_config())


def generate_synthetic(out: Path, spec: Optional[dict] = None) -> None:
    """Write a synthetic dataset directory."""
    _hiervis.generate_synthetic(_dump(spec), str(out))


def train(data: Path, config: Optional[dict] = None, out: Optional[Path] = None, protocol: str = "dep",
          subject: str = "", seed: Optional[int] = None) -> dict:
    """Train one model, evaluate it on the test concepts and return the report.

    With ``out`` the checkpoint is written to ``out/checkpoint``.
    """
    return json.loads(_hiervis.train(str(data), _dump(config), "" if out is None else str(out), protocol, subject,
                                     seed))


def evaluate(data: Path, config: Optional[dict] = None, protocol: str = "dep", repeats: int = 0,
             threads: int = 1) -> dict:
    """Train and evaluate ``repeats`` seeds per subject (0: training.n_repeats)."""
    return json.loads(_hiervis.evaluate(str(data), _dump(config), protocol, repeats, threads))


def topk_accuracy(queries, gallery, truth: Sequence[int], ks: Sequence[int] = (1, 5)) -> dict:
    q = np.asarray(queries, dtype=np.float32)
    g = np.asarray(gallery, dtype=np.float32)
    return _hiervis.topk_accuracy(q, g, list(truth), list(ks))


def binarize(saliency, tau: float = 0.5) -> np.ndarray:
    return _hiervis.binarize(np.asarray(saliency, dtype=np.float32), float(tau))


def infonce_loss(features, targets, logit_scale: float, symmetric: bool = False) -> float:
    f = np.asarray(features, dtype=np.float32)
    t = np.asarray(targets, dtype=np.float32)
    return _hiervis.infonce_loss(f, t, float(logit_scale), symmetric)


def token_count(timepoints: int, temporal_kernel: int = 25, temporal_stride: int = 1, pool_kernel: int = 51,
                pool_stride: int = 5) -> int:
    return _hiervis.token_count(timepoints, temporal_kernel, temporal_stride, pool_kernel, pool_stride)


def count_parameters(config: Optional[dict] = None) -> int:
    return _hiervis.count_parameters(_dump(config))


def accounting_report(config: Optional[dict] = None) -> dict:
    return json.loads(_hiervis.accounting_report(_dump(config)))

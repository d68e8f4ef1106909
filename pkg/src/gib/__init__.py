"""Gated information bottleneck: sequential-environment training with a
matrix-based Renyi entropy penalty and a learned feature gate."""

import os

_threads = os.environ.get("GIB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .autodiff import Tensor, grad  # noqa: E402
from .gating import GateState  # noqa: E402
from .model import GIBModel, MLPSpec, load_checkpoint, make_model, save_checkpoint  # noqa: E402
from .renyi import KernelConfig, renyi_entropy  # noqa: E402
from .training import GIBConfig, erm_train, gib_loss, information_projection, train_sequential  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad", "GateState", "GIBModel", "MLPSpec", "load_checkpoint", "make_model",
    "save_checkpoint", "KernelConfig", "renyi_entropy", "GIBConfig", "erm_train", "gib_loss",
    "information_projection", "train_sequential",
]

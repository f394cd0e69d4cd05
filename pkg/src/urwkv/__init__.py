"""U-shaped VRWKV segmentation stack with verifiable numerics.

Subpackages: tensor (tape autodiff), wkv (bidirectional linear attention),
blocks (VRWKV blocks + patch ops), wavelet (Haar + sub-band attention),
fusion (multi-scale channel fusion + seg head), model (assembly +
checkpoints), data/metrics (synthetic sets, loss, DSC/IoU), cli.
"""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig
from .kernels import BACKEND as KERNEL_BACKEND
from .model import build_model, load_checkpoint, save_checkpoint
from .tensor import Tape, Tensor, set_debug

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "Tape",
    "Tensor",
    "set_debug",
    "build_model",
    "save_checkpoint",
    "load_checkpoint",
    "KERNEL_BACKEND",
    "__version__",
]

"""Joint SDR restoration and SDR-to-HDR conversion on a small numpy autodiff engine."""

from .color import ColorSpace, Frame
from .model import DIDNet, ModelConfig, loss_dual
from .tensor import ContractError, NumericError, ShapeError, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "ColorSpace",
    "ContractError",
    "DIDNet",
    "Frame",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "Tape",
    "Tensor",
    "loss_dual",
]

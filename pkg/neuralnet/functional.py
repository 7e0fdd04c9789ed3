import numpy as np
import torch
from exceptions import ShapeMismatchError
from neuralnet.attention import DTYPE


def as_tensor(values) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values.to(DTYPE)
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


def dense_forward(x, W, b) -> torch.Tensor:
    """y = x W + b for a row vector or a batch of rows."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.shape[-1] != W.shape[0] or W.shape[1:] != b.shape:
        raise ShapeMismatchError(
            f"dense layer shapes disagree: x {tuple(x.shape)}, W {tuple(W.shape)}, b {tuple(b.shape)}"
        )
    return x @ W + b


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """sum_i |pred_i - target_i| per sample, averaged over a leading batch axis when present."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    per_sample = torch.abs(pred - target).sum(dim=-1)
    return per_sample.mean() if per_sample.dim() > 0 else per_sample

from dataclasses import dataclass
import torch
import torch.nn as nn
from exceptions import NonFiniteError


@dataclass
class AdamSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def build_optimizer(parameters, settings: AdamSettings | None = None) -> torch.optim.Adam:
    settings = settings or AdamSettings()
    return torch.optim.Adam(
        parameters, lr=settings.lr, betas=(settings.beta1, settings.beta2), eps=settings.eps
    )


def check_gradients(named_parameters):
    for name, parameter in named_parameters:
        if parameter.grad is not None and not torch.isfinite(parameter.grad).all():
            raise NonFiniteError(f"gradient of '{name}' is not finite")


def optimizer_step(module: nn.Module, optimizer: torch.optim.Optimizer):
    """One Adam update of the module's trainable parameters; refuses NaN or infinite gradients."""
    check_gradients((n, p) for n, p in module.named_parameters() if p.requires_grad)
    optimizer.step()

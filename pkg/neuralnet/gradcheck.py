from dataclasses import dataclass, field
from typing import Callable
import torch
from exceptions import GradientCheckError

FD_STEP = 1e-6


@dataclass
class GradientReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def offending(self, tolerance: float) -> list[str]:
        return [name for name, error in self.errors.items() if error > tolerance]


def _relative_error(numeric: torch.Tensor, analytic: torch.Tensor) -> float:
    scale = max(numeric.abs().max().item(), analytic.abs().max().item())
    if scale == 0.0:
        return 0.0
    return (numeric - analytic).abs().max().item() / scale


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    parameters: dict[str, torch.Tensor],
    tolerance: float = 1e-5,
    step: float = FD_STEP,
) -> GradientReport:
    """Central finite differences against autograd for every entry of every named tensor.

    `loss_fn` must return a scalar computed from the tensors in `parameters`, which are
    perturbed in place and restored afterwards.
    """
    for tensor in parameters.values():
        tensor.grad = None
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, list(parameters.values()), allow_unused=True)

    report = GradientReport()
    with torch.no_grad():
        for (name, tensor), grad in zip(parameters.items(), analytic):
            if grad is None:
                grad = torch.zeros_like(tensor)
            numeric = torch.zeros_like(tensor)
            flat, flat_numeric = tensor.view(-1), numeric.view(-1)
            for k in range(flat.numel()):
                original = flat[k].item()
                flat[k] = original + step
                upper = loss_fn().item()
                flat[k] = original - step
                lower = loss_fn().item()
                flat[k] = original
                flat_numeric[k] = (upper - lower) / (2.0 * step)
            report.errors[name] = _relative_error(numeric, grad)

    offending = report.offending(tolerance)
    if offending:
        raise GradientCheckError(
            f"gradient check failed (max relative error {report.max_error:.3e} > {tolerance:g}) for: "
            + ", ".join(offending),
            offending,
        )
    return report


def module_parameters(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: parameter for name, parameter in module.named_parameters() if parameter.requires_grad}

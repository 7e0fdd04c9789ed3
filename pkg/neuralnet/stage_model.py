import math
from dataclasses import asdict, dataclass
import torch
import torch.nn as nn
from exceptions import ShapeMismatchError
from neuralnet.attention import DTYPE, AttentionConfig, MultiHeadReduction


@dataclass
class StageArchitecture:
    """Everything needed to rebuild a stage network from a checkpoint.

    kind "attention": (m0, r0) inputs through M_k and a one-layer generator;
    kind "dense": r0-vectors through a two-layer generator (no attention).
    """

    kind: str
    r0: int
    l: int
    m0: int = 1
    m1: int = 1
    r1: int = 1
    heads: int = 6
    layers: int = 1
    ff_multiplier: int = 2
    positional_encoding: bool = False
    hidden: int = 128
    combination: bool = False
    combination_hidden: int = 0

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            self.m0, self.r0, self.m1, self.r1, self.heads, self.layers, self.ff_multiplier, self.positional_encoding
        )

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in ("attention", "dense"):
            errors.append(f"network kind must be attention or dense, got '{self.kind}'")
        if self.kind == "attention":
            errors += self.attention_config().validate()
        if self.r0 < 1 or self.l < 1:
            errors.append("network input and output widths must be positive")
        if self.kind == "dense" and self.hidden < 1:
            errors.append("network.steady_hidden must be positive")
        if self.combination and 0 < self.combination_hidden < 2 * self.l:
            errors.append(
                f"network.combination_hidden must be 0 (one layer) or >= 2 l = {2 * self.l} to start as pass-through"
            )
        return errors

    def to_dict(self) -> dict:
        return asdict(self)


class Combination(nn.Module):
    """C_k(prev, current): one dense layer, or two with a rectifier in between.

    Both variants start as the pass-through C(prev, current) = prev; hidden units beyond
    the first 2 l start with random input weights and zero output weights.
    """

    def __init__(self, l: int, hidden: int = 0):
        super().__init__()
        self.l = l
        if hidden:
            self.layers = nn.Sequential(
                nn.Linear(2 * l, hidden, dtype=DTYPE), nn.ReLU(), nn.Linear(hidden, l, dtype=DTYPE)
            )
        else:
            self.layers = nn.Sequential(nn.Linear(2 * l, l, dtype=DTYPE))
        self.reset_to_pass_through()

    @torch.no_grad()
    def reset_to_pass_through(self):
        l = self.l
        identity = torch.eye(l, dtype=DTYPE)
        for layer in self.layers:
            if isinstance(layer, nn.Linear):
                layer.weight.zero_()
                layer.bias.zero_()
        first = self.layers[0]
        if len(self.layers) == 1:
            first.weight[:, :l] = identity
            return
        # relu(prev) - relu(-prev) = prev
        first.weight[:l, :l] = identity
        first.weight[l : 2 * l, :l] = -identity
        last = self.layers[-1]
        last.weight[:, :l] = identity
        last.weight[:, l : 2 * l] = -identity
        # spare units: random inputs, zero outputs
        spare = first.weight[2 * l :]
        if spare.numel():
            nn.init.normal_(spare, std=1.0 / math.sqrt(2 * l))

    def forward(self, prev: torch.Tensor, current: torch.Tensor) -> torch.Tensor:
        if prev.shape != current.shape or prev.shape[-1] != self.l:
            raise ShapeMismatchError(
                f"combination inputs {tuple(prev.shape)} and {tuple(current.shape)}, expected width {self.l}"
            )
        return self.layers(torch.cat((prev, current), dim=-1))


def combination_forward(prev, current, module: Combination) -> torch.Tensor:
    return module(torch.as_tensor(prev, dtype=DTYPE), torch.as_tensor(current, dtype=DTYPE))


class StageModel(nn.Module):
    """One stage: optional reduction M_k, generator G_k and, from stage 2 on, combination C_k."""

    def __init__(self, architecture: StageArchitecture, seed: int = 0):
        super().__init__()
        self.architecture = architecture
        self.seed = seed
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            if architecture.kind == "attention":
                self.reduction = MultiHeadReduction(architecture.attention_config())
                self.generator = nn.Linear(architecture.m1 * architecture.r1, architecture.l, dtype=DTYPE)
            else:
                self.reduction = None
                self.generator = nn.Sequential(
                    nn.Linear(architecture.r0, architecture.hidden, dtype=DTYPE),
                    nn.ReLU(),
                    nn.Linear(architecture.hidden, architecture.l, dtype=DTYPE),
                )
            self.combination = (
                Combination(architecture.l, architecture.combination_hidden) if architecture.combination else None
            )

    def stage_output(self, x: torch.Tensor) -> torch.Tensor:
        """G_k(M_k(x)) before any combination."""
        if self.reduction is not None:
            reduced = self.reduction(x)
            return self.generator(reduced.flatten(start_dim=-2))
        return self.generator(x)

    def forward(self, x: torch.Tensor, prev: torch.Tensor | None = None) -> torch.Tensor:
        current = self.stage_output(x)
        if self.combination is None:
            return current
        if prev is None:
            raise ShapeMismatchError("a stage with a combination network needs the previous prediction")
        return self.combination(prev, current)


def parameter_count(model: nn.Module) -> int:
    """Exact number of trainable weight and bias entries."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

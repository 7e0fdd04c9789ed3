import math
from dataclasses import dataclass
import torch
import torch.nn as nn
import torch.nn.functional as F
from exceptions import NonFiniteError, ShapeMismatchError

DTYPE = torch.float64
LAYER_NORM_EPS = 1e-5


@dataclass
class AttentionConfig:
    """Shapes of one reduction module M_k: (m0, r0) in, (m1, r1) out."""

    m0: int
    r0: int
    m1: int
    r1: int
    heads: int = 6
    layers: int = 1
    ff_multiplier: int = 2
    positional_encoding: bool = False

    @property
    def d_model(self) -> int:
        return self.heads * math.ceil(self.r1 / self.heads)

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def validate(self) -> list[str]:
        errors = []
        if min(self.m0, self.r0, self.m1, self.r1) < 1:
            errors.append(f"attention dims must be positive, got {self.describe()}")
        if self.heads < 1 or self.layers < 1:
            errors.append("attention needs at least one head and one layer")
        if self.m1 > self.m0:
            errors.append(f"m1={self.m1} must not exceed m0={self.m0}")
        if self.r1 > self.r0:
            errors.append(f"r1={self.r1} must not exceed r0={self.r0}")
        return errors

    def describe(self) -> str:
        return f"({self.m0}, {self.r0}) -> ({self.m1}, {self.r1}), {self.heads} heads"


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.query = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.key = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.value = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.output = nn.Linear(d_model, d_model, dtype=DTYPE)
        self.last_weights: torch.Tensor | None = None

    def split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.d_head).transpose(1, 2)

    def attend(self, x: torch.Tensor) -> torch.Tensor:
        """Concatenated head outputs before the output projection."""
        q, k, v = self.split(self.query(x)), self.split(self.key(x)), self.split(self.value(x))
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_head)
        weights = F.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        heads = torch.matmul(weights, v)
        batch, _, length, _ = heads.shape
        return heads.transpose(1, 2).contiguous().view(batch, length, self.heads * self.d_head)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(self.attend(x))


class EncoderLayer(nn.Module):
    """Self-attention and feed-forward, each with residual and layer normalization."""

    def __init__(self, d_model: int, heads: int, ff_multiplier: int):
        super().__init__()
        self.attention = SelfAttention(d_model, heads)
        self.norm_attention = nn.LayerNorm(d_model, eps=LAYER_NORM_EPS, dtype=DTYPE)
        self.feed_forward = nn.Sequential(
            nn.Linear(d_model, ff_multiplier * d_model, dtype=DTYPE),
            nn.ReLU(),
            nn.Linear(ff_multiplier * d_model, d_model, dtype=DTYPE),
        )
        self.norm_feed_forward = nn.LayerNorm(d_model, eps=LAYER_NORM_EPS, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm_attention(x + self.attention(x))
        return self.norm_feed_forward(x + self.feed_forward(x))


def sinusoidal_encoding(length: int, width: int) -> torch.Tensor:
    position = torch.arange(length, dtype=DTYPE)[:, None]
    frequency = torch.exp(torch.arange(0, width, 2, dtype=DTYPE) * (-math.log(10000.0) / width))
    encoding = torch.zeros(length, width, dtype=DTYPE)
    encoding[:, 0::2] = torch.sin(position * frequency)
    encoding[:, 1::2] = torch.cos(position * frequency[: width // 2])
    return encoding


class MultiHeadReduction(nn.Module):
    """M_k: project space r0 -> d_model, attend over the m0 time rows, project d_model -> r1,
    then map the time axis m0 -> m1."""

    def __init__(self, config: AttentionConfig):
        super().__init__()
        self.config = config
        d_model = config.d_model
        self.input_projection = nn.Linear(config.r0, d_model, dtype=DTYPE)
        self.layers = nn.ModuleList(
            [EncoderLayer(d_model, config.heads, config.ff_multiplier) for _ in range(config.layers)]
        )
        self.output_projection = nn.Linear(d_model, config.r1, dtype=DTYPE)
        self.time_reduction = nn.Linear(config.m0, config.m1, dtype=DTYPE)
        if config.positional_encoding:
            self.register_buffer("encoding", sinusoidal_encoding(config.m0, d_model), persistent=False)
        else:
            self.encoding = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        if tuple(x.shape[1:]) != (self.config.m0, self.config.r0):
            raise ShapeMismatchError(
                f"attention input has shape {tuple(x.shape[1:])}, expected ({self.config.m0}, {self.config.r0})"
            )
        h = self.input_projection(x)
        if self.encoding is not None:
            h = h + self.encoding
        for layer in self.layers:
            h = layer(h)
        h = self.output_projection(h)
        out = self.time_reduction(h.transpose(1, 2)).transpose(1, 2)
        if not torch.isfinite(out).all():
            raise NonFiniteError("attention output is not finite (diverged training?)")
        return out[0] if single else out


def multi_head_attention_forward(F0, config: AttentionConfig, module: MultiHeadReduction | None = None) -> torch.Tensor:
    """Runs M_k on an (m0, r0) matrix or a batch of them."""
    module = module or MultiHeadReduction(config)
    x = torch.as_tensor(F0, dtype=DTYPE)
    return module(x)

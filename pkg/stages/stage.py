import copy
from dataclasses import dataclass, field
import numpy as np
import torch
from tqdm import tqdm
from exceptions import ConfigError, NonFiniteError
from neuralnet.attention import DTYPE
from neuralnet.functional import l1_loss
from neuralnet.optim import AdamSettings, build_optimizer, optimizer_step
from neuralnet.stage_model import StageArchitecture, StageModel
from problems.dataset import SampleSet
from services.printr import Printr
from stages.selectors import StageContext, StageInput

printr = Printr()

PREDICTION_CHUNK = 256


@dataclass
class TrainingSettings:
    epochs: int = 5000
    patience: int = 200
    min_improvement: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    threads: int = 1

    @staticmethod
    def from_config(config: dict) -> "TrainingSettings":
        defaults = TrainingSettings()
        return TrainingSettings(
            **{key: type(getattr(defaults, key))(config[key]) for key in defaults.__dict__ if key in config}
        )

    def validate(self) -> list[str]:
        errors = []
        if self.epochs < 0:
            errors.append("training.epochs must be >= 0")
        if self.patience < 1:
            errors.append("training.patience must be >= 1")
        if self.lr <= 0:
            errors.append("training.lr must be positive")
        if self.batch_size < 1:
            errors.append("training.batch_size must be >= 1")
        return errors


@dataclass
class StageSpec:
    """One stage of the pipeline: its input, network dims and training budget."""

    name: str
    selector: StageInput
    network: dict = field(default_factory=dict)
    training: TrainingSettings = field(default_factory=TrainingSettings)

    def architecture(self, context: StageContext, target_width: int, with_combination: bool) -> StageArchitecture:
        network = self.network
        common = dict(
            r0=self.selector.width(context),
            l=target_width,
            combination=with_combination,
            combination_hidden=int(network.get("combination_hidden", 0)),
        )
        if self.selector.kind == "dense":
            return StageArchitecture(kind="dense", hidden=int(network.get("steady_hidden", 128)), **common)
        return StageArchitecture(
            kind="attention",
            m0=context.m0,
            m1=int(network.get("m1", 10)),
            r1=int(network.get("r1", 30)),
            heads=int(network.get("heads", 6)),
            layers=int(network.get("layers", 1)),
            ff_multiplier=int(network.get("ff_multiplier", 2)),
            positional_encoding=bool(network.get("positional_encoding", False)),
            **common,
        )

    def validate(self, context: StageContext, target_width: int, with_combination: bool) -> list[str]:
        errors = self.selector.validate(context) + self.training.validate()
        if not errors:
            errors += self.architecture(context, target_width, with_combination).validate()
        return errors


@dataclass
class Standardizer:
    """Per-entry input scaling with training-split statistics."""

    mean: np.ndarray
    scale: np.ndarray

    @staticmethod
    def fit(train_inputs: np.ndarray) -> "Standardizer":
        mean = train_inputs.mean(axis=0)
        scale = train_inputs.std(axis=0)
        scale[scale < 1e-12] = 1.0
        return Standardizer(mean, scale)

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.mean) / self.scale


@dataclass
class StageResult:
    model: StageModel
    predictions: np.ndarray
    losses: list[float]
    epochs_run: int
    standardizer: Standardizer


def predict(model: StageModel, inputs: torch.Tensor, prev: torch.Tensor | None) -> np.ndarray:
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, inputs.shape[0], PREDICTION_CHUNK):
            stop = start + PREDICTION_CHUNK
            chunks.append(model(inputs[start:stop], None if prev is None else prev[start:stop]).numpy())
    return np.concatenate(chunks) if chunks else np.zeros((0, model.architecture.l))


def train_stage(
    spec: StageSpec,
    dataset: SampleSet,
    context: StageContext,
    stage_index: int = 1,
    prev_predictions: np.ndarray | None = None,
    inputs: np.ndarray | None = None,
) -> StageResult:
    """Fits G_k (and M_k, C_k) with the L1 objective; earlier stages only contribute `prev_predictions`.

    Stops when the training loss has not improved by `min_improvement` (relative) for
    `patience` epochs, or after `epochs`; the parameters of the best training epoch are kept.
    """
    if (prev_predictions is None) != (stage_index == 1):
        raise ConfigError(
            f"stage {stage_index} ('{spec.name}'): previous predictions are required from the second stage on only"
        )
    errors = spec.validate(context, dataset.target_width, stage_index > 1)
    if errors:
        raise ConfigError(f"stage '{spec.name}': " + "; ".join(errors))

    settings = spec.training
    if inputs is None:
        inputs = spec.selector.build(dataset, context)
    standardizer = Standardizer.fit(dataset.train(inputs))
    x = torch.as_tensor(standardizer(inputs), dtype=DTYPE)
    y = torch.as_tensor(dataset.targets, dtype=DTYPE)
    prev = None if prev_predictions is None else torch.as_tensor(prev_predictions, dtype=DTYPE)

    torch.set_num_threads(max(1, settings.threads))
    model = StageModel(spec.architecture(context, dataset.target_width, stage_index > 1), seed=settings.seed)
    optimizer = build_optimizer(model.parameters(), AdamSettings(lr=settings.lr))
    shuffle = torch.Generator().manual_seed(settings.seed)
    train_index = torch.as_tensor(dataset.train_index)

    losses: list[float] = []
    best_loss, best_state = np.inf, copy.deepcopy(model.state_dict())
    reference, stale = np.inf, 0
    progress = tqdm(range(settings.epochs), desc=spec.name, disable=printr.is_quiet(), leave=False)
    for epoch in progress:
        model.train()
        order = train_index[torch.randperm(len(train_index), generator=shuffle)]
        total = 0.0
        for start in range(0, len(order), settings.batch_size):
            batch = order[start : start + settings.batch_size]
            optimizer.zero_grad()
            loss = l1_loss(model(x[batch], None if prev is None else prev[batch]), y[batch])
            if not torch.isfinite(loss):
                raise NonFiniteError(f"stage '{spec.name}': loss is not finite in epoch {epoch + 1}")
            loss.backward()
            optimizer_step(model, optimizer)
            total += loss.item() * len(batch)

        epoch_loss = total / max(len(order), 1)
        losses.append(epoch_loss)
        progress.set_postfix(loss=f"{epoch_loss:.4g}")
        if epoch_loss < best_loss:
            best_loss, best_state = epoch_loss, copy.deepcopy(model.state_dict())
        if epoch_loss < reference * (1.0 - settings.min_improvement):
            reference, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= settings.patience:
                printr.print_info(f"{spec.name}: training loss plateaued after {epoch + 1} epochs")
                break

    if losses:
        model.load_state_dict(best_state)
    return StageResult(model, predict(model, x, prev), losses, len(losses), standardizer)

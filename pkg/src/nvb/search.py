"""Random hyperparameter search with synchronous successive halving."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import mlp
from .mlp import Architecture, TrainConfig


@dataclass(frozen=True)
class SearchSpace:
    learning_rates: Tuple[float, ...] = mlp.LEARNING_RATES
    batch_sizes: Tuple[int, ...] = mlp.BATCH_SIZES
    dropouts: Tuple[float, ...] = mlp.DROPOUTS
    weight_decays: Tuple[float, ...] = mlp.WEIGHT_DECAYS
    layers: Tuple[int, int] = (1, 32)
    width: Tuple[int, int] = (1, 1024)


def log_uniform_int(rng: np.random.Generator, low: int, high: int) -> int:
    """exp(U(ln low, ln high)), rounded and clamped to [low, high]."""
    value = math.exp(rng.uniform(math.log(low), math.log(high)))
    return int(min(max(round(value), low), high))


def sample_config(
    space: SearchSpace, rng: np.random.Generator, input_dim: int, max_epochs: int = mlp.MAX_EPOCHS, seed: int = 0
) -> Tuple[TrainConfig, Architecture]:
    cfg = TrainConfig(
        learning_rate=float(rng.choice(space.learning_rates)),
        batch_size=int(rng.choice(space.batch_sizes)),
        dropout_rate=float(rng.choice(space.dropouts)),
        weight_decay=float(rng.choice(space.weight_decays)),
        max_epochs=max_epochs,
        seed=seed,
    )
    arch = Architecture(input_dim, log_uniform_int(rng, *space.layers), log_uniform_int(rng, *space.width))
    return cfg, arch


@dataclass
class TrialState:
    index: int
    config: TrainConfig
    arch: Architecture
    epochs_completed: int = 0
    valid_mae_mhz: float = float("inf")
    status: str = "running"  # running | promoted | stopped | done
    rungs: List[Tuple[int, float]] = field(default_factory=list)
    trainer: Optional[mlp.Trainer] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "trial": self.index,
            "config": asdict(self.config),
            "architecture": asdict(self.arch),
            "rung_history": [list(r) for r in self.rungs],
            "final_mae_mhz": self.valid_mae_mhz,
            "epochs_completed": self.epochs_completed,
            "status": self.status,
        }


@dataclass
class SearchResult:
    best: TrialState
    model: mlp.MlpModel
    trials: List[TrialState]

    def write_report(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for t in self.trials:
                fh.write(json.dumps(t.to_json()) + "\n")
        return path


def rung_schedule(min_epochs: int, reduction_factor: int, max_epochs: int) -> List[int]:
    if min_epochs < 1 or reduction_factor < 2 or max_epochs < min_epochs:
        raise ValueError("need min_epochs >= 1, reduction_factor >= 2, max_epochs >= min_epochs")
    rungs = []
    e = min_epochs
    while e < max_epochs:
        rungs.append(e)
        e *= reduction_factor
    rungs.append(max_epochs)
    return rungs


def promote(trials: Sequence[TrialState], reduction_factor: int) -> List[TrialState]:
    """Top floor(n/r) trials by validation MAE (at least one); ties go to the lower index."""
    keep = max(1, len(trials) // reduction_factor)
    ranked = sorted(trials, key=lambda t: (t.valid_mae_mhz, t.index))
    return sorted(ranked[:keep], key=lambda t: t.index)


def _advance(trial: TrialState, target_epochs: int) -> None:
    try:
        trial.trainer.run(target_epochs - trial.epochs_completed)
        trial.valid_mae_mhz = trial.trainer.record.best_valid_mae_mhz
    except mlp.TrainingDiverged:
        trial.valid_mae_mhz = float("inf")
    trial.epochs_completed = trial.trainer.epoch if np.isfinite(trial.valid_mae_mhz) else target_epochs
    trial.rungs.append((target_epochs, trial.valid_mae_mhz))


def run_asha(
    n_trials: int,
    reduction_factor: int,
    min_epochs: int,
    max_epochs: int,
    train_set,
    valid_set,
    space: SearchSpace = SearchSpace(),
    seed: int = 0,
    target_span_mhz: float = 600.0,
    configs: Optional[Sequence[Tuple[TrainConfig, Architecture]]] = None,
) -> SearchResult:
    """Sample ``n_trials`` configurations and halve them at each epoch rung.

    Rungs sit at min_epochs * r**j, capped by max_epochs. Returns the
    finished trial with the lowest best-so-far validation MAE together with
    its best-on-validation model.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    train_x, train_y = train_set
    valid_x, valid_y = valid_set
    rungs = rung_schedule(min_epochs, reduction_factor, max_epochs)
    rng = np.random.default_rng(seed)
    trials = []
    for i in range(n_trials):
        if configs is not None:
            cfg, arch = configs[i]
        else:
            cfg, arch = sample_config(space, rng, train_x.shape[1], max_epochs, seed=seed * 10_000 + i)
        model = mlp.init_model(arch, seed=cfg.seed)
        trainer = mlp.Trainer(model, train_x, train_y, valid_x, valid_y, cfg, target_span_mhz)
        trials.append(TrialState(i, cfg, arch, trainer=trainer))

    alive = list(trials)
    for j, epochs in enumerate(rungs):
        for t in alive:
            _advance(t, epochs)
        if j == len(rungs) - 1:
            for t in alive:
                t.status = "done"
            break
        promoted = promote(alive, reduction_factor)
        for t in alive:
            t.status = "promoted" if t in promoted else "stopped"
        alive = promoted

    done = [t for t in trials if t.status == "done"]
    best = min(done, key=lambda t: (t.valid_mae_mhz, t.index))
    model = best.trainer.best
    for t in trials:
        t.trainer = None  # release data references
    return SearchResult(best, model, trials)

"""The five training schemes: Scratch, DA, TL, DA-TL and DA-TL-DA.

TL-family schemes start from a source model.  DA-TL expects the source to
have been trained with augmentation and fine-tunes without it; DA-TL-DA
augments in both phases.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

from .augment import AugmentSpec
from .data.dataset import Dataset, split
from .model import DESK, FreezeSpec, ModelConfig, ModelState, TrainSchedule, build, fine_tune, train
from .model.training import VAL_FRACTION
from .rng import derive_seed


class Scheme(enum.Enum):
    SCRATCH = "scratch"
    DA = "da"
    TL = "tl"
    DA_TL = "da-tl"
    DA_TL_DA = "da-tl-da"

    @property
    def transfers(self) -> bool:
        return self in (Scheme.TL, Scheme.DA_TL, Scheme.DA_TL_DA)

    @property
    def target_augment(self) -> bool:
        return self in (Scheme.DA, Scheme.DA_TL_DA)

    @property
    def source_augment(self) -> bool | None:
        """Whether the source must be augmented (None: no source)."""
        if not self.transfers:
            return None
        return self is not Scheme.TL


class SchemeError(ValueError):
    """Inconsistent scheme, source and flags."""


@dataclass(frozen=True)
class SchemeSpec:
    scheme: Scheme
    freeze: FreezeSpec = FreezeSpec.FIX_CONV1
    source: ModelState | None = None
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        validate_scheme(self.scheme, self.source is not None,
                        None if self.source is None else source_was_augmented(self.source))


def source_was_augmented(state: ModelState) -> bool | None:
    if "augment" not in state.meta:
        return None
    return state.meta["augment"] is not None


def validate_scheme(scheme: Scheme, has_source: bool, source_augmented: bool | None = None) -> None:
    if scheme.transfers and not has_source:
        raise SchemeError(f"scheme {scheme.value} needs a source checkpoint")
    if not scheme.transfers and has_source:
        raise SchemeError(f"scheme {scheme.value} trains from scratch and takes no source checkpoint")
    if has_source and source_augmented is not None and source_augmented != scheme.source_augment:
        want = "with" if scheme.source_augment else "without"
        raise SchemeError(f"scheme {scheme.value} expects a source trained {want} augmentation")


def _split_val(dataset: Dataset, seed: int):
    try:
        parts = split(dataset, [1 - VAL_FRACTION, VAL_FRACTION], derive_seed(seed, "val"), names=["train", "val"])
    except ValueError:
        return dataset, None
    return parts["train"], parts["val"]


def train_from_scratch(dataset: Dataset, schedule: TrainSchedule, config: ModelConfig = DESK,
                       augment: AugmentSpec | None = None) -> tuple[ModelState, list]:
    """Fresh model seeded by ``schedule.seed``; 10 % of the lines held out for selection."""
    config = config.with_charset_size(len(dataset.charset))
    state = build(config, schedule.seed, dataset.charset.chars)
    state.meta["augment"] = dataclasses.asdict(augment) if augment is not None else None
    train_part, val_part = _split_val(dataset, schedule.seed)
    best, history = train(state, train_part, val_part, schedule, FreezeSpec.ALL_FREE, augment)
    best.meta = dict(state.meta)
    return best, history


def run_scheme(spec: SchemeSpec, target_train: Dataset, schedule: TrainSchedule,
               config: ModelConfig = DESK) -> tuple[ModelState, list]:
    augment = spec.augment if spec.scheme.target_augment else None
    if not spec.scheme.transfers:
        state, history = train_from_scratch(target_train, schedule, config, augment)
    else:
        state, history = fine_tune(spec.source, target_train, schedule, spec.freeze, augment)
    state.meta = {**state.meta, "scheme": spec.scheme.value}
    return state, history

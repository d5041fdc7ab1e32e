"""CTC training loop, transfer initialization and evaluation helpers."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import ctc
from ..data.dataset import Dataset, split
from ..metrics import EvalReport, evaluate, levenshtein
from ..numerics import Adam, NonFiniteError, Tape, Tensor, clip_by_global_norm, sgd_step
from ..rng import derive_seed, substream
from .config import ConfigError, FreezeSpec, TrainSchedule
from .network import ModelState, decode, forward_tensors, init_param, param_shapes, prepare_batch

log = logging.getLogger(__name__)

OUTPUT_PARAMS = ("out.weight", "out.bias")
VAL_FRACTION = 0.1


class TrainingError(RuntimeError):
    """Training cannot proceed (e.g. no line is feasible for CTC)."""


@dataclass
class _Item:
    index: int
    id: str
    image: np.ndarray
    target: list


def _check_charset(state: ModelState, dataset: Dataset, role: str) -> None:
    if tuple(dataset.charset.chars) != tuple(state.charset):
        raise ConfigError(f"{role} charset {''.join(dataset.charset.chars)!r} does not match "
                          f"model charset {''.join(state.charset)!r}")


def feasible_items(state: ModelState, dataset: Dataset) -> tuple[list, list]:
    """Split lines into CTC-feasible training items and the ids of infeasible ones."""
    ds = state.config.downsample
    items, skipped = [], []
    for n, line in enumerate(dataset):
        target = dataset.charset.encode(line.text)
        frames = -(-line.width // ds)
        if not target or ctc.required_frames(target) > frames:
            skipped.append(line.id)
        else:
            items.append(_Item(n, line.id, line.image, target))
    return items, skipped


def _batches(items: list, batch_size: int, rng: np.random.Generator) -> list:
    """Shuffle, sort by width inside windows of 8 batches, then shuffle batch order."""
    order = rng.permutation(len(items))
    window = batch_size * 8
    batches = []
    for lo in range(0, len(order), window):
        chunk = sorted(order[lo:lo + window], key=lambda i: (items[i].image.shape[1], i))
        batches.extend(chunk[k:k + batch_size] for k in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def corpus_cer(hyps, refs) -> float:
    """Edit-weighted CER; lines with empty references are ignored."""
    edits = sum(levenshtein(h, r) for h, r in zip(hyps, refs) if r)
    chars = sum(len(r) for r in refs if r)
    return edits / chars if chars else 0.0


def train_step(state: ModelState, opt, batch: list, schedule: TrainSchedule, frozen: frozenset,
               augment=None, epoch: int = 0) -> tuple[ModelState, float]:
    images = [it.image for it in batch]
    if augment is not None:
        from ..augment import apply as augment_apply

        images = [augment_apply(img, augment, substream(schedule.seed, "augment", epoch, it.index))
                  for img, it in zip(images, batch)]
    x, lengths = prepare_batch(images, state.config, [it.id for it in batch])
    tensors = {k: Tensor(v, requires_grad=k not in frozen, name=k) for k, v in state.params.items()}
    drop_rng = substream(schedule.seed, "dropout", state.step)
    with Tape() as tape:
        logits = forward_tensors(tensors, state.config, x, lengths, drop_rng)
        loss = ctc.ctc_loss_op(logits, [it.target for it in batch], lengths)
    loss_value = float(loss.data)
    if not np.isfinite(loss_value):
        raise NonFiniteError(f"non-finite loss {loss_value} at step {state.step}")
    names = [k for k in tensors if k not in frozen]
    grads = dict(zip(names, tape.gradient(loss, [tensors[k] for k in names])))
    grads, _ = clip_by_global_norm(grads, schedule.clip_norm)
    if schedule.optimizer == "adam":
        params = opt.step(state.params, grads, frozen)
    else:
        params = sgd_step(state.params, grads, schedule.lr, frozen)
    return ModelState(state.config, params, state.charset, state.step + 1, state.seed, state.meta), loss_value


def train(state: ModelState, train_set: Dataset, val_set: Dataset | None, schedule: TrainSchedule,
          freeze: FreezeSpec = FreezeSpec.ALL_FREE, augment=None) -> tuple[ModelState, list]:
    """Train with CTC and return the best-on-validation state plus per-epoch history.

    Without a validation set the final epoch's state is returned.  Frozen
    parameters are passed through untouched, so they stay bit-identical.
    """
    _check_charset(state, train_set, "training set")
    if val_set is not None and len(val_set) == 0:
        val_set = None
    if val_set is not None:
        _check_charset(state, val_set, "validation set")
    frozen = freeze.frozen_params(state.config)
    items, skipped = feasible_items(state, train_set)
    if skipped:
        log.warning("skipping %d line(s) too short for their transcripts: %s", len(skipped),
                    ", ".join(skipped[:5]) + (" ..." if len(skipped) > 5 else ""))
    if not items:
        raise TrainingError(f"all {len(train_set)} training lines are infeasible for CTC")
    opt = Adam(lr=schedule.lr)
    best, best_cer, stale = state, float("inf"), 0
    history = []
    val_images = [ln.image for ln in val_set] if val_set is not None else None
    for epoch in range(1, schedule.max_epochs + 1):
        losses, aborted = [], None
        for batch_idx in _batches(items, schedule.batch_size, substream(schedule.seed, "shuffle", epoch)):
            batch = [items[i] for i in batch_idx]
            try:
                state, loss = train_step(state, opt, batch, schedule, frozen, augment, epoch)
            except NonFiniteError as exc:
                aborted = str(exc)
                log.error("epoch %d aborted: %s (lines %s)", epoch, exc, ", ".join(it.id for it in batch))
                break
            losses.append(loss)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
               "val_cer": float("nan"), "skipped": len(skipped), "aborted": aborted or ""}
        if val_set is not None:
            row["val_cer"] = corpus_cer(decode(state, val_images), val_set.texts)
            if row["val_cer"] < best_cer:
                best, best_cer, stale = state, row["val_cer"], 0
            else:
                stale += 1
        else:
            best = state
        history.append(row)
        log.info("epoch %d loss %.4f val_cer %.4f", epoch, row["train_loss"], row["val_cer"])
        if val_set is not None and stale >= schedule.patience:
            break
    return best, history


def transfer_init(source: ModelState, target_charset) -> ModelState:
    """Copy every layer from ``source``; rebuild the output layer if the charset differs."""
    chars = tuple(getattr(target_charset, "chars", target_charset))
    if chars == tuple(source.charset):
        return source.copy()
    config = source.config.with_charset_size(len(chars))
    shapes = param_shapes(config)
    rng = substream(source.seed, "transfer")
    params = dict(source.params)
    for name in OUTPUT_PARAMS:
        params[name] = init_param(name, shapes[name], rng)
    return ModelState(config, params, chars, source.step, source.seed, dict(source.meta))


def fine_tune(source: ModelState, target_train: Dataset, schedule: TrainSchedule,
              freeze: FreezeSpec = FreezeSpec.FIX_CONV1, augment=None,
              val_fraction: float = VAL_FRACTION) -> tuple[ModelState, list]:
    """Transfer-initialize from ``source`` and train on ``target_train``.

    ``val_fraction`` of the lines is held out for model selection.  With no
    target lines the transferred model is returned untrained.
    """
    state = transfer_init(source, target_train.charset)
    if len(target_train) == 0:
        return state, []
    train_part, val_part = target_train, None
    if val_fraction > 0:
        try:
            train_part, val_part = split(target_train, [1 - val_fraction, val_fraction],
                                         derive_seed(schedule.seed, "val"), names=["train", "val"]).values()
        except ValueError:
            log.warning("%d target lines are too few for a validation split; training without one",
                        len(target_train))
    return train(state, train_part, val_part, schedule, freeze, augment)


def evaluate_model(state: ModelState, dataset: Dataset, level: float = 0.95, B: int = 1000,
                   seed: int = 0) -> tuple[EvalReport, list]:
    """Decode ``dataset`` and score it; returns the report and the hypotheses."""
    hyps = decode(state, [ln.image for ln in dataset])
    return evaluate(hyps, dataset.texts, level=level, B=B, seed=seed), hyps

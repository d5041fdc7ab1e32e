"""Label noise: planted corruption, corrupted label purging, histograms, realignment, sweeps.

Purging follows the usual cross-validation recipe: split the target set
into N folds, fine-tune a copy of the source model on each complement,
score the held-out lines by per-line CER of the greedy decode against the
annotation, and keep the lines whose CER is at most epsilon.  The final
model is fine-tuned from the source on what survives.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data.dataset import Dataset
from .metrics import EvalReport, cer as line_cer
from .model import FreezeSpec, ModelState, TrainSchedule, decode, evaluate_model, fine_tune
from .model.training import corpus_cer
from .rng import derive_seed, substream

log = logging.getLogger(__name__)

KEPT, REMOVED, REALIGNED = "kept", "removed", "realigned"
SUMMARY_THRESHOLDS = (0.5, 0.7)


# -- corruption ----------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    L: float = 0.1   # probability that a line is modified
    R: float = 0.3   # per-character replacement probability inside a modified line
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.L <= 1 and 0 <= self.R <= 1):
            raise ValueError(f"L and R must lie in [0, 1], got L={self.L}, R={self.R}")


def corrupt(dataset: Dataset, spec: CorruptionSpec) -> tuple[Dataset, np.ndarray]:
    """Replace characters by uniform draws over the whole charset.

    A draw can return the original character, so the expected fraction of
    changed characters in a modified line is ``R * (1 - 1/|charset|)``.
    """
    rng = substream(spec.seed, "corrupt")
    chars = dataset.charset.chars
    mask = np.zeros(len(dataset), dtype=bool)
    lines = []
    for n, line in enumerate(dataset):
        if rng.random() >= spec.L:
            lines.append(line)
            continue
        mask[n] = True
        hit = rng.random(len(line.text)) < spec.R
        draws = rng.integers(0, len(chars), size=len(line.text))
        text = "".join(chars[d] if h else c for c, h, d in zip(line.text, hit, draws))
        lines.append(replace(line, text=text, tags=frozenset({"corrupted"})))
    return dataset.with_lines(lines), mask


def permute_labels(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, dict]:
    """Misalign a ``fraction`` of lines by a cyclic shift of their transcripts.

    Returns the dataset and ``{image_id: id of the line whose text it got}``.
    """
    rng = substream(seed, "permute")
    k = int(round(fraction * len(dataset)))
    if k < 2:
        return dataset, {}
    chosen = sorted(rng.choice(len(dataset), size=k, replace=False).tolist())
    donors = chosen[1:] + chosen[:1]
    lines = list(dataset.lines)
    moved = {}
    for dst, src in zip(chosen, donors):
        lines[dst] = replace(dataset[dst], text=dataset[src].text, tags=frozenset({"misaligned"}))
        moved[dataset[dst].id] = dataset[src].id
    return dataset.with_lines(lines), moved


# -- purging -------------------------------------------------------------------

class ClpError(RuntimeError):
    """Purging left nothing to train on; the report is attached."""

    def __init__(self, message: str, report: "ClpReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ClpConfig:
    folds: int = 2
    epsilon: float = 0.5
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    freeze: FreezeSpec = FreezeSpec.FIX_CONV1
    align: bool = False
    seed: int = 0    # fold assignment
    jobs: int = 1    # folds trained concurrently in worker processes

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"CLP needs at least 2 folds, got {self.folds}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")


@dataclass
class LineDecision:
    id: str
    fold: int
    cer: float
    decision: str
    hyp: str = ""
    text_from: str = ""    # for realigned lines: id of the annotation now attached


@dataclass
class Move:
    annotation_id: str
    image_id: str
    cer: float


@dataclass
class FoldScores:
    """Held-out decodes of every target line, computed once per (source, data, config)."""

    folds: list            # fold index per line, dataset order
    hyps: list             # greedy decode of each image by the model that did not see it
    cers: list
    histories: list        # one training history per fold


@dataclass
class Histogram:
    bin_low: list
    bin_high: list
    counts: list
    pct_at_most: dict      # threshold -> percentage of lines with CER <= threshold
    n_lines: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(self.bin_low, self.bin_high, self.counts):
            w.writerow([_fmt(lo), _fmt(hi), c])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"bin_low": self.bin_low, "bin_high": [_fmt(h) if math.isinf(h) else h for h in self.bin_high],
                "counts": self.counts, "n_lines": self.n_lines,
                "pct_at_most": {_fmt(t): p for t, p in self.pct_at_most.items()}}

    def summary(self) -> str:
        return "\n".join(f"CER <= {int(round(t * 100))}%: {p:.1f}% of {self.n_lines} lines"
                         for t, p in self.pct_at_most.items()) + "\n"


@dataclass
class ClpReport:
    epsilon: float
    folds: int
    lines: list
    moves: list = field(default_factory=list)
    final_eval: EvalReport | None = None

    def count(self, decision: str) -> int:
        return sum(1 for d in self.lines if d.decision == decision)

    @property
    def n_removed(self) -> int:
        return self.count(REMOVED)

    def decisions(self) -> dict:
        return {d.id: d.decision for d in self.lines}

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "folds": self.folds,
            "counts": {k: self.count(k) for k in (KEPT, REMOVED, REALIGNED)},
            "lines": [asdict(d) for d in self.lines],
            "moves": [asdict(m) for m in self.moves],
            "final_eval": None if self.final_eval is None else json.loads(self.final_eval.to_json()),
            "histogram": cer_histogram(self).to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def lines_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "fold", "cer", "decision"])
        for d in self.lines:
            w.writerow([d.id, d.fold, _fmt(d.cer), d.decision])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}".rstrip("0").rstrip(".") if math.isfinite(x) else str(x)


def assign_folds(n: int, folds: int, seed: int) -> list:
    if n < folds:
        raise ValueError(f"{n} lines cannot fill {folds} folds")
    order = substream(seed, "folds").permutation(n)
    fold_of = [0] * n
    for k, part in enumerate(np.array_split(order, folds)):
        for i in part.tolist():
            fold_of[i] = k
    return fold_of


def fold_schedule(schedule: TrainSchedule, fold: int) -> TrainSchedule:
    return replace(schedule, seed=derive_seed(schedule.seed, "fold", fold))


def _fold_run(source: ModelState, target: Dataset, fold_of: list, k: int, config: ClpConfig):
    held = [i for i, f in enumerate(fold_of) if f == k]
    rest = [i for i, f in enumerate(fold_of) if f != k]
    model, history = fine_tune(source, target.take(rest), fold_schedule(config.schedule, k), config.freeze)
    return held, decode(model, [target[i].image for i in held]), history


def score_folds(source: ModelState, target: Dataset, config: ClpConfig) -> FoldScores:
    """Steps 1-4: fine-tune on each complement, decode the held-out fold.

    Each fold has its own derived seed, so running folds in ``config.jobs``
    worker processes gives the same scores as running them in turn.
    """
    fold_of = assign_folds(len(target), config.folds, config.seed)
    if config.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(config.jobs, config.folds)) as pool:
            runs = list(pool.map(_fold_run, *zip(*[(source, target, fold_of, k, config)
                                                   for k in range(config.folds)])))
    else:
        runs = [_fold_run(source, target, fold_of, k, config) for k in range(config.folds)]
    hyps, histories = [None] * len(target), []
    for k, (held, decoded, history) in enumerate(runs):
        histories.append(history)
        for i, h in zip(held, decoded):
            hyps[i] = h
        log.info("fold %d: %d held-out lines scored", k, len(held))
    cers = [line_cer(h, ln.text) if ln.text else 0.0 for h, ln in zip(hyps, target)]
    return FoldScores(fold_of, hyps, cers, histories)


def keep(cer_value: float, epsilon: float) -> bool:
    """Keep rule: CER (capped at 1) at most epsilon, so epsilon = 1 keeps everything."""
    return min(cer_value, 1.0) <= epsilon


def purge(target: Dataset, scores: FoldScores, epsilon: float, align: bool = False) -> tuple[Dataset, ClpReport]:
    """Steps 5-6 (plus optional realignment) from precomputed fold scores."""
    decisions = [LineDecision(ln.id, f, c, KEPT if keep(c, epsilon) else REMOVED, h)
                 for ln, f, c, h in zip(target, scores.folds, scores.cers, scores.hyps)]
    report = ClpReport(epsilon, max(scores.folds) + 1, decisions)
    flagged = [d.id for d in decisions if d.decision == REMOVED]
    if align and flagged:
        decodes = {d.id: d.hyp for d in decisions}
        purged, moves = align_correct(None, target, flagged, epsilon, decodes)
        report.moves = moves
        by_image = {m.image_id: m for m in moves}
        for d in decisions:
            if d.id in by_image:
                d.decision, d.text_from = REALIGNED, by_image[d.id].annotation_id
    else:
        purged = target.subset([d.id for d in decisions if d.decision == KEPT])
    return purged, report


def clp(source: ModelState, target: Dataset, config: ClpConfig, test: Dataset | None = None,
        scores: FoldScores | None = None) -> tuple[Dataset, ModelState, ClpReport]:
    """Corrupted label purging; ``scores`` may be reused across epsilons."""
    if scores is None:
        scores = score_folds(source, target, config)
    purged, report = purge(target, scores, config.epsilon, config.align)
    if len(purged) == 0:
        raise ClpError(f"epsilon {config.epsilon} removed all {len(target)} target lines", report)
    final, _ = fine_tune(source, purged, config.schedule, config.freeze)
    if test is not None:
        report.final_eval, _ = evaluate_model(final, test, seed=config.schedule.seed)
    return purged, final, report


def cer_histogram(report: ClpReport | list, bin_width: float = 0.05) -> Histogram:
    """Right-closed bins [0, w], (w, 2w], ..., (1-w, 1] plus an overflow bin (1, inf).

    The thresholds 0.5 and 0.7 must be bin edges, so the percentages of lines
    at or below them are sums of whole bins.
    """
    cers = [d.cer for d in report.lines] if isinstance(report, ClpReport) else list(report)
    if not cers:
        raise ValueError("histogram of an empty report")
    k = int(round(1 / bin_width))
    if abs(k * bin_width - 1) > 1e-9 or any(abs(t * k - round(t * k)) > 1e-9 for t in SUMMARY_THRESHOLDS):
        raise ValueError(f"bin width {bin_width} must divide 1, 0.5 and 0.7")
    counts = [0] * (k + 1)
    for c in cers:
        idx = k if c > 1 + 1e-12 else max(math.ceil(c * k - 1e-9) - 1, 0)
        counts[idx] += 1
    lows = [i / k for i in range(k)] + [1.0]
    highs = [(i + 1) / k for i in range(k)] + [math.inf]
    n = len(cers)
    pct = {t: 100.0 * sum(counts[:int(round(t * k))]) / n for t in SUMMARY_THRESHOLDS}
    return Histogram(lows, highs, counts, pct, n)


# -- realignment ---------------------------------------------------------------

def align_correct(model: ModelState | None, dataset: Dataset, flagged, epsilon: float = 0.5,
                  decodes: dict | None = None) -> tuple[Dataset, list]:
    """Re-attach flagged annotations to the images whose decode fits them best.

    Unflagged lines keep their images.  Candidate pairs (annotation, image)
    over the flagged lines are taken greedily by ascending CER, each image
    and annotation used at most once; a best fit above ``epsilon`` leaves the
    annotation removed.  Returns the dataset of kept plus realigned lines and
    the list of moves (an annotation matched to its own image is not a move).
    """
    flagged = [i for i in dataset.ids if i in set(flagged)]
    if decodes is None:
        if model is None:
            raise ValueError("align_correct needs a model or cached decodes")
        decodes = dict(zip(dataset.ids, decode(model, [ln.image for ln in dataset])))
    by_id = {ln.id: ln for ln in dataset}
    pairs = []
    for a_rank, a in enumerate(flagged):
        ref = by_id[a].text
        if not ref:
            continue
        for i_rank, img in enumerate(flagged):
            pairs.append((line_cer(decodes[img], ref), a_rank, i_rank))
    pairs.sort()
    used_a, used_i, assigned = set(), set(), {}
    for c, a_rank, i_rank in pairs:
        if c > epsilon:
            break
        if a_rank in used_a or i_rank in used_i:
            continue
        used_a.add(a_rank)
        used_i.add(i_rank)
        assigned[flagged[i_rank]] = (flagged[a_rank], c)
    moves = [Move(a, img, c) for img, (a, c) in assigned.items() if a != img]
    lines = []
    flagged_set = set(flagged)
    for ln in dataset:
        if ln.id not in flagged_set:
            lines.append(ln)
        elif ln.id in assigned:
            a, _ = assigned[ln.id]
            if a == ln.id:
                lines.append(ln)
            else:
                lines.append(replace(ln, text=by_id[a].text, tags=frozenset({"realigned"})))
    return dataset.with_lines(lines), sorted(moves, key=lambda m: dataset.ids.index(m.image_id))


# -- sensitivity sweep ---------------------------------------------------------

@dataclass
class SweepPoint:
    l: int
    cer: float
    delta_cer_per_line: float
    report: EvalReport | None = None


def sweep_order(n: int, seed: int) -> np.ndarray:
    return substream(seed, "sweep").permutation(n)


def sensitivity_sweep(source: ModelState, target: Dataset, test: Dataset, line_counts, schedule: TrainSchedule,
                      freeze: FreezeSpec = FreezeSpec.FIX_CONV1, corruption: CorruptionSpec | None = None,
                      seed: int = 0) -> list:
    """Fine-tune on nested subsets of ``target`` and evaluate each on ``test``.

    Subsets are prefixes of one seeded permutation, each kept in dataset
    order, so the full count trains on ``target`` exactly.  The difference
    quotient of the first point is taken against the untrained transfer
    (l = 0).
    """
    counts = [int(c) for c in line_counts]
    if not counts or any(b <= a for a, b in zip(counts, counts[1:])) or counts[0] < 1:
        raise ValueError(f"line counts must be positive and strictly increasing, got {counts}")
    if counts[-1] > len(target):
        raise ValueError(f"line count {counts[-1]} exceeds the {len(target)} target lines")
    if corruption is not None:
        target, _ = corrupt(target, corruption)
    order = sweep_order(len(target), seed)
    base, _ = fine_tune(source, target.take([]), schedule, freeze)
    prev_l, prev_cer = 0, corpus_cer(decode(base, [ln.image for ln in test]), test.texts)
    points = []
    for c in counts:
        subset = target.take(sorted(order[:c].tolist()))
        model, _ = fine_tune(source, subset, schedule, freeze)
        report, _ = evaluate_model(model, test, seed=schedule.seed)
        points.append(SweepPoint(c, report.cer, (report.cer - prev_cer) / (c - prev_l), report))
        prev_l, prev_cer = c, report.cer
    return points


def sweep_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["l", "cer", "delta_cer_per_line"])
    for p in points:
        w.writerow([p.l, _fmt(p.cer), _fmt(p.delta_cer_per_line)])
    return buf.getvalue()

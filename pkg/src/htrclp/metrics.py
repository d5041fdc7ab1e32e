"""Edit-distance error rates and bootstrap confidence intervals."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .rng import substream

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("n_lines", "cer", "wer", "ci_low", "ci_high")


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimal number of unit-cost insertions, deletions and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def words(text: str) -> list[str]:
    return [w for w in text.split(" ") if w]


def cer(hyp: str, ref: str) -> float:
    if not ref:
        raise ValueError("CER is undefined for an empty reference")
    return levenshtein(hyp, ref) / len(ref)


def wer(hyp: str, ref: str) -> float:
    ref_w = words(ref)
    if not ref_w:
        raise ValueError("WER is undefined for an empty reference")
    return levenshtein(words(hyp), ref_w) / len(ref_w)


def bootstrap_ci(values: Sequence[float], level: float = 0.95, B: int = 1000, seed: int = 0,
                 weights: Sequence[float] | None = None) -> tuple[float, float]:
    """Percentile bootstrap interval of the (optionally weighted) mean.

    Each of the ``B`` replicates resamples ``len(values)`` indices with
    replacement from ``substream(seed, "bootstrap")``.  With ``weights`` the
    replicate statistic is ``sum(w*v)/sum(w)``, which for per-line CERs
    weighted by reference length is the edit-weighted corpus CER.
    """
    if B < 1:
        raise ValueError(f"bootstrap needs B >= 1, got {B}")
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("bootstrap of an empty list")
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64)
    rng = substream(seed, "bootstrap")
    idx = rng.integers(0, v.size, size=(B, v.size))
    stats = np.sum(w[idx] * v[idx], axis=1) / np.sum(w[idx], axis=1)
    alpha = (1 - level) / 2
    low, high = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(low), float(high)


@dataclass
class EvalReport:
    """CER/WER of a set of lines.

    ``cer``/``wer`` are edit-weighted (total edits over total reference
    symbols); ``cer_mean`` is the average of per-line CERs.  ``ci_low`` and
    ``ci_high`` bound ``cer``; ``cer_mean_ci`` bounds ``cer_mean``.
    """

    n_lines: int
    cer: float
    wer: float
    ci_low: float
    ci_high: float
    cer_mean: float
    cer_mean_ci: tuple
    per_line_cer: list = field(default_factory=list)
    skipped_empty: int = 0
    level: float = 0.95

    def to_json(self) -> str:
        d = asdict(self)
        d["cer_mean_ci"] = list(self.cer_mean_ci)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerow([getattr(self, c) for c in REPORT_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["cer_mean_ci"] = tuple(d["cer_mean_ci"])
        return cls(**d)


def evaluate(hyps: Sequence[str], refs: Sequence[str], level: float = 0.95, B: int = 1000,
             seed: int = 0) -> EvalReport:
    """Build an :class:`EvalReport`; empty references are excluded and counted."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    char_edits, char_len, word_edits, word_len, per_line = 0, 0, 0, 0, []
    skipped = 0
    for h, r in zip(hyps, refs):
        if not r:
            skipped += 1
            continue
        e = levenshtein(h, r)
        char_edits += e
        char_len += len(r)
        per_line.append(e / len(r))
        rw = words(r)
        word_edits += levenshtein(words(h), rw)
        word_len += len(rw)
    if skipped:
        log.warning("excluded %d line(s) with an empty reference", skipped)
    if not per_line:
        raise ValueError("no line with a nonempty reference to evaluate")
    lengths = [len(r) for r in refs if r]
    low, high = bootstrap_ci(per_line, level, B, seed, weights=lengths)
    mean_ci = bootstrap_ci(per_line, level, B, seed)
    return EvalReport(
        n_lines=len(per_line),
        cer=char_edits / char_len,
        wer=word_edits / word_len if word_len else 0.0,
        ci_low=low,
        ci_high=high,
        cer_mean=float(np.mean(per_line)),
        cer_mean_ci=mean_ci,
        per_line_cer=per_line,
        skipped_empty=skipped,
        level=level,
    )

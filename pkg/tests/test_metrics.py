import functools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htrclp.metrics import EvalReport, bootstrap_ci, cer, evaluate, levenshtein, wer

TEXT = st.text(alphabet="abc ", max_size=8)


def recursive_levenshtein(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


@settings(max_examples=300, deadline=None)
@given(TEXT, TEXT)
def test_levenshtein_matches_recursive_oracle(a, b):
    assert levenshtein(a, b) == recursive_levenshtein(a, b)


@settings(max_examples=300, deadline=None)
@given(TEXT, TEXT, TEXT)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert (levenshtein(a, b) == 0) == (a == b)


def test_known_distances():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein(["a", "b"], ["b"]) == 1


def test_cer_wer():
    assert cer("abd", "abc") == pytest.approx(1 / 3)
    assert wer("the cat sat", "the cat sat on") == pytest.approx(1 / 4)
    assert wer("a  b", "a b") == 0
    with pytest.raises(ValueError):
        cer("x", "")


def test_bootstrap_enumeration_oracle():
    # the interval is the percentile band of replicate means drawn from the documented stream
    from htrclp.rng import substream

    values = [0.0, 0.1, 0.5, 0.2, 0.3]
    rng = substream(7, "bootstrap")
    idx = rng.integers(0, 5, size=(200, 5))
    means = np.asarray(values)[idx].mean(axis=1)
    expected = tuple(np.percentile(means, [2.5, 97.5]))
    assert bootstrap_ci(values, 0.95, 200, seed=7) == pytest.approx(expected, abs=1e-15)


def test_bootstrap_constant_values_degenerate_interval():
    assert bootstrap_ci([0.25] * 10, B=50) == pytest.approx((0.25, 0.25))


def test_bootstrap_weighted_is_corpus_ratio():
    values, weights = [0.5, 0.0], [2, 8]
    lo, hi = bootstrap_ci(values, B=500, weights=weights)
    assert 0.0 <= lo <= 0.1 <= hi <= 0.5


def test_bootstrap_argument_errors():
    for kwargs in ({"B": 0}, {"level": 1.0}, {"level": 0.0}):
        with pytest.raises(ValueError):
            bootstrap_ci([0.1, 0.2], **kwargs)
    with pytest.raises(ValueError):
        bootstrap_ci([])


def test_evaluate_counts_edits_and_skips_empty_references():
    r = evaluate(["abc", "x", "zz"], ["abd", "", "zz"], B=100)
    assert r.n_lines == 2 and r.skipped_empty == 1
    assert r.cer == pytest.approx(1 / 5)
    assert r.per_line_cer == pytest.approx([1 / 3, 0.0])
    assert r.ci_low <= r.cer <= r.ci_high


def test_report_serialization_round_trip():
    r = evaluate(["hello world", "foo"], ["hello word", "fo"], B=50)
    again = EvalReport.from_json(r.to_json())
    assert again == r
    assert json.loads(r.to_json())["n_lines"] == 2
    csv_text = r.to_csv()
    assert csv_text.splitlines()[0] == "n_lines,cer,wer,ci_low,ci_high"
    assert "\r" not in csv_text


def test_eval_deterministic_under_seed():
    hyps, refs = ["ab", "cd", "ef", "g"], ["ab", "cx", "e", "gh"]
    assert evaluate(hyps, refs, seed=3).to_json() == evaluate(hyps, refs, seed=3).to_json()

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htrclp import noise
from htrclp.data import HANDS, SynthSpec, TextSource, synth_generate
from htrclp.metrics import levenshtein
from htrclp.model import ModelConfig, TrainSchedule, build, evaluate_model, fine_tune
from htrclp.noise import (
    KEPT, REALIGNED, REMOVED, ClpConfig, ClpError, CorruptionSpec, FoldScores, align_correct,
    cer_histogram, corrupt, keep, permute_labels, purge, sensitivity_sweep, sweep_csv,
)

TINY = ModelConfig(conv_filters=(3, 4), pool_layers=(0, 1), recurrent_layers=1, recurrent_units=4,
                   input_height=8, charset_size=4)


def data(n=40, seed=0, height=32, charset=None, chars=(6, 12)):
    spec = SynthSpec(atlas="A", hand=HANDS["plain"], n_lines=n, seed=seed, height=height, charset=charset,
                     text=TextSource(min_chars=chars[0], max_chars=chars[1], seed=seed,
                                     alphabet="abc" if charset else "abcdefghijklmnopqrstuvwxyz"))
    return synth_generate(spec)


def tiny_data(n=12, seed=0):
    return data(n, seed, height=8, charset="abc ", chars=(2, 5))


def test_corrupt_identity_cases():
    ds = data()
    for spec in (CorruptionSpec(L=0.0, R=1.0), CorruptionSpec(L=1.0, R=0.0)):
        out, mask = corrupt(ds, spec)
        assert out.texts == ds.texts
        assert mask.sum() == (len(ds) if spec.L == 1 else 0)
    out, mask = corrupt(ds, CorruptionSpec(L=0.0))
    assert not mask.any()


def test_corrupt_keeps_images_and_lengths_and_tags():
    ds = data()
    out, mask = corrupt(ds, CorruptionSpec(L=0.5, R=0.5, seed=3))
    for a, b, m in zip(ds, out, mask):
        assert a.image is b.image
        assert len(a.text) == len(b.text)
        assert ("corrupted" in b.tags) == bool(m)
        assert m or a.text == b.text


def test_corrupt_is_deterministic():
    ds = data()
    a, ma = corrupt(ds, CorruptionSpec(seed=4))
    b, mb = corrupt(ds, CorruptionSpec(seed=4))
    assert a.texts == b.texts and np.array_equal(ma, mb)


def test_corrupt_statistics_small():
    # derived: count ~ Binomial(n, L), changed chars ~ Binomial(chars, R (1 - 1/|C|))
    ds = data(n=2000, chars=(10, 10))
    out, mask = corrupt(ds, CorruptionSpec(L=0.2, R=0.4, seed=1))
    n, L = len(ds), 0.2
    assert abs(mask.sum() - n * L) <= 3 * math.sqrt(n * L * (1 - L))
    changed = sum(sum(x != y for x, y in zip(a.text, b.text)) for a, b, m in zip(ds, out, mask) if m)
    total = sum(len(a.text) for a, m in zip(ds, mask) if m)
    p = 0.4 * (1 - 1 / len(ds.charset))
    assert abs(changed - total * p) <= 3 * math.sqrt(total * p * (1 - p))


def test_corruption_spec_validation():
    with pytest.raises(ValueError):
        CorruptionSpec(L=1.2)


def test_permute_labels_is_a_derangement_of_the_chosen():
    ds = data(n=30)
    out, moved = permute_labels(ds, 0.2, seed=1)
    assert len(moved) == 6
    texts = dict(zip(ds.ids, ds.texts))
    for img, src in moved.items():
        assert img != src
        assert out.subset([img])[0].text == texts[src]
    assert sorted(moved) == sorted(moved.values())
    for ln in out:
        if ln.id not in moved:
            assert ln.text == texts[ln.id]


def test_keep_rule():
    assert keep(0.5, 0.5) and not keep(0.5000001, 0.5)
    assert keep(3.0, 1.0) and not keep(3.0, 0.99)


cers_strategy = st.lists(st.floats(0, 2.5, allow_nan=False), min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(cers_strategy)
def test_histogram_properties(cers):
    h = cer_histogram(cers)
    assert sum(h.counts) == h.n_lines == len(cers)
    assert h.pct_at_most[0.5] <= h.pct_at_most[0.7]
    # the reported percentages are exactly the whole-bin sums
    for t in (0.5, 0.7):
        k = h.bin_high.index(t) + 1
        assert h.pct_at_most[t] == pytest.approx(100 * sum(h.counts[:k]) / len(cers))
        assert h.pct_at_most[t] == pytest.approx(100 * sum(c <= t + 1e-12 for c in cers) / len(cers))


def test_histogram_all_zero_and_edges():
    h = cer_histogram([0.0] * 7)
    assert h.counts[0] == 7 and sum(h.counts) == 7
    assert h.pct_at_most == {0.5: 100.0, 0.7: 100.0}
    h = cer_histogram([0.05, 0.5, 0.7, 1.0, 1.5])
    assert h.counts[0] == 1 and h.counts[9] == 1 and h.counts[13] == 1 and h.counts[19] == 1 and h.counts[20] == 1
    assert h.pct_at_most == {0.5: 40.0, 0.7: 60.0}
    assert h.bin_high[-1] == math.inf
    assert h.to_csv().splitlines()[0] == "bin_low,bin_high,count"
    assert h.to_csv().splitlines()[-1] == "1,inf,1"
    assert h.summary() == "CER <= 50%: 40.0% of 5 lines\nCER <= 70%: 60.0% of 5 lines\n"


def test_histogram_errors():
    with pytest.raises(ValueError):
        cer_histogram([])
    with pytest.raises(ValueError):
        cer_histogram([0.1], bin_width=0.3)


def fake_scores(ds, cers, hyps=None):
    return FoldScores([i % 2 for i in range(len(ds))], hyps or ["" for _ in ds], list(cers), [[], []])


def test_purge_invariants():
    ds = data(n=10)
    cers = [0.0, 0.6, 0.5, 1.2, 0.1, 0.9, 0.2, 0.3, 0.51, 0.0]
    purged, report = purge(ds, fake_scores(ds, cers), 0.5)
    assert [d.id for d in report.lines] == ds.ids
    for d in report.lines:
        assert (d.decision == REMOVED) == (d.cer > 0.5)
    assert set(purged.ids) | {d.id for d in report.lines if d.decision == REMOVED} == set(ds.ids)
    assert report.n_removed == 4
    _, everything = purge(ds, fake_scores(ds, cers), 1.0)
    assert everything.n_removed == 0


def test_report_serialization():
    ds = data(n=4)
    _, report = purge(ds, fake_scores(ds, [0.0, 0.7, 0.2, 1.5]), 0.5)
    lines = report.lines_csv().splitlines()
    assert lines[0] == "id,fold,cer,decision"
    assert lines[2].endswith(",0.7,removed")
    doc = report.to_dict()
    assert doc["counts"] == {KEPT: 2, REMOVED: 2, REALIGNED: 0}
    assert doc["histogram"]["bin_high"][-1] == "inf"
    assert report.to_json() == report.to_json()


def test_align_unpermuted_accurate_model_makes_no_moves():
    ds = data(n=20)
    decodes = dict(zip(ds.ids, ds.texts))
    out, moves = align_correct(None, ds, [], decodes=decodes)
    assert moves == [] and out.texts == ds.texts
    out, moves = align_correct(None, ds, ds.ids[:5], decodes=decodes)
    assert moves == [] and out.texts == ds.texts


def test_align_restores_permutation_with_perfect_decodes():
    ds = data(n=30)
    permuted, moved = permute_labels(ds, 0.3, seed=2)
    decodes = dict(zip(ds.ids, ds.texts))
    out, moves = align_correct(None, permuted, list(moved), decodes=decodes)
    assert out.texts == ds.texts
    # image i now carries the annotation of the line that had received i's text
    assert {m.image_id: m.annotation_id for m in moves} == {v: k for k, v in moved.items()}
    assert len(moves) == len(moved)
    assert len({m.image_id for m in moves}) == len(moves)


def test_align_leaves_poor_fits_removed():
    ds = data(n=6)
    decodes = dict(zip(ds.ids, ds.texts))
    decodes[ds.ids[0]] = "zzzzzzzzzzzzzzzzzzzzzz"
    out, moves = align_correct(None, ds, [ds.ids[0], ds.ids[1]], epsilon=0.5, decodes=decodes)
    assert ds.ids[0] not in out.ids
    assert ds.ids[1] in out.ids


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="ab", min_size=1, max_size=4), min_size=2, max_size=8),
       st.lists(st.text(alphabet="ab", max_size=4), min_size=8, max_size=8))
def test_align_is_one_to_one(texts, hyps):
    from htrclp.data import Charset, Dataset, LabeledLine

    lines = [LabeledLine(f"l{i}", np.ones((4, 4), np.float32), t) for i, t in enumerate(texts)]
    ds = Dataset(tuple(lines), Charset(("a", "b")), 4)
    decodes = {f"l{i}": hyps[i] for i in range(len(texts))}
    out, moves = align_correct(None, ds, ds.ids, epsilon=1.0, decodes=decodes)
    assert len(set(out.ids)) == len(out.ids)
    assert len({m.annotation_id for m in moves}) == len(moves)
    used = [m.annotation_id for m in moves] + [i for i in out.ids if i not in {m.image_id for m in moves}]
    assert len(used) == len(set(used))


def test_align_needs_model_or_decodes():
    with pytest.raises(ValueError):
        align_correct(None, data(n=3), [])


def test_clp_epsilon_zero_removes_everything_and_raises():
    ds = data(n=4)
    scores = fake_scores(ds, [0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ClpError) as info:
        noise.clp(None, ds, ClpConfig(epsilon=0.0), scores=scores)
    assert info.value.report.n_removed == 4


def test_clp_config_validation():
    with pytest.raises(ValueError):
        ClpConfig(folds=1)
    with pytest.raises(ValueError):
        ClpConfig(epsilon=1.5)


def test_assign_folds_balanced_and_deterministic():
    a = noise.assign_folds(11, 3, 5)
    assert a == noise.assign_folds(11, 3, 5)
    assert sorted(np.bincount(a).tolist()) == [3, 4, 4]
    with pytest.raises(ValueError):
        noise.assign_folds(2, 3, 0)


def test_clp_end_to_end_tiny_is_deterministic():
    target = tiny_data(12)
    source = build(TINY, 0, charset=target.charset.chars)
    config = ClpConfig(schedule=TrainSchedule(max_epochs=1, batch_size=4, patience=1), epsilon=1.0)
    purged, final, report = noise.clp(source, target, config, test=tiny_data(4, seed=9))
    assert purged.ids == target.ids and report.n_removed == 0
    assert report.final_eval is not None
    again = noise.clp(source, target, config, test=tiny_data(4, seed=9))[2]
    assert again.to_json() == report.to_json()


def test_sweep_full_count_matches_single_fine_tune():
    target, test = tiny_data(10), tiny_data(4, seed=9)
    source = build(TINY, 0, charset=target.charset.chars)
    sched = TrainSchedule(max_epochs=1, batch_size=4, patience=1)
    points = sensitivity_sweep(source, target, test, [5, 10], sched)
    single, _ = fine_tune(source, target, sched)
    assert points[-1].cer == evaluate_model(single, test)[0].cer
    assert points[1].delta_cer_per_line == pytest.approx((points[1].cer - points[0].cer) / 5)
    assert sweep_csv(points).splitlines()[0] == "l,cer,delta_cer_per_line"


def test_sweep_validates_counts():
    target = tiny_data(6)
    source = build(TINY, 0, charset=target.charset.chars)
    for counts in ([3, 3], [0, 2], [2, 7], []):
        with pytest.raises(ValueError):
            sensitivity_sweep(source, target, target, counts, TrainSchedule(max_epochs=1, patience=1))


def test_levenshtein_bounds_cer_of_corruption():
    ds = data(n=50)
    out, _ = corrupt(ds, CorruptionSpec(L=1.0, R=0.5, seed=2))
    for a, b in zip(ds, out):
        assert levenshtein(a.text, b.text) <= len(a.text)

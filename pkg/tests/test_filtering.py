import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saspa.errors import FilterError
from saspa.filtering import (
    SIMILARITY,
    SOFTMAX,
    ClassThresholds,
    FilterConfig,
    Scorers,
    ScoreVector,
    alia_threshold_filter,
    apply_filter_pipeline,
    clip_label_filter,
    compute_class_thresholds,
    semantic_filter,
    semantic_prompt_set,
    topk_confidence_filter,
    true_label_rank,
)
from saspa.manifest import AugmentationManifest, AugmentationRecord
from saspa.scorers import HashScorer, build_scorers

from conftest import make_descriptor


def softmax_vec(scores):
    scores = np.asarray(scores, dtype=float)
    return ScoreVector([f"c{i}" for i in range(scores.size)], scores / scores.sum(), SOFTMAX)


def rank_oracle(scores, t):
    # stable sort by (-score, index); position of t, 1-based
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(t) + 1


def test_semantic_prompt_set():
    assert semantic_prompt_set("Airplane") == [
        "a photo of a airplane", "a photo of an object", "a photo of a scene", "a photo", "a black photo",
    ]


def test_semantic_filter():
    labels = semantic_prompt_set("Car")
    assert semantic_filter(ScoreVector(labels, [0.3, 0.2, 0.2, 0.1, 0.1])).keep
    v = semantic_filter(ScoreVector(labels, [0.2, 0.3, 0.2, 0.1, 0.1]))
    assert not v.keep and "a photo of an object" in v.reason
    # a tie with label 0 resolves to label 0
    assert semantic_filter(ScoreVector(labels, [0.3, 0.3, 0.2, 0.1, 0.1])).keep


def test_topk_examples():
    s = softmax_vec([0.1, 0.5, 0.2, 0.2])
    assert true_label_rank(s.scores, 1) == 1
    assert true_label_rank(s.scores, 2) == 2 and true_label_rank(s.scores, 3) == 3
    assert topk_confidence_filter(s, 3, k=3).keep
    assert not topk_confidence_filter(s, 3, k=2).keep
    assert not topk_confidence_filter(s, 0, k=3).keep


def test_topk_k_equal_n_keeps_everything():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = softmax_vec(rng.random(7) + 1e-3)
        assert all(topk_confidence_filter(s, t, k=7).keep for t in range(7))


def test_topk_errors():
    s = softmax_vec([0.5, 0.5])
    with pytest.raises(FilterError):
        topk_confidence_filter(s, 2)
    with pytest.raises(FilterError):
        topk_confidence_filter(s, 0, k=3)
    with pytest.raises(FilterError):
        topk_confidence_filter(ScoreVector(["a", "b"], [0.5, 0.5], SIMILARITY), 0, k=1)


@settings(max_examples=200, deadline=None)
@given(
    scores=st.lists(st.integers(1, 6), min_size=2, max_size=30),
    data=st.data(),
)
def test_rank_matches_bruteforce_with_ties(scores, data):
    t = data.draw(st.integers(0, len(scores) - 1))
    k = data.draw(st.integers(1, len(scores)))
    s = softmax_vec(scores)
    assert true_label_rank(s.scores, t) == rank_oracle(list(s.scores), t)
    assert topk_confidence_filter(s, t, k).keep == (rank_oracle(list(s.scores), t) <= k)


@settings(max_examples=100, deadline=None)
@given(scores=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=20), data=st.data())
def test_topk_monotone_in_k(scores, data):
    s = softmax_vec(scores)
    t = data.draw(st.integers(0, len(scores) - 1))
    kept = [topk_confidence_filter(s, t, k).keep for k in range(1, len(scores) + 1)]
    assert kept == sorted(kept)  # once kept, kept for every larger k


@settings(max_examples=100, deadline=None)
@given(scores=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=20), data=st.data())
def test_topk_permutation_invariance(scores, data):
    n = len(scores)
    t = data.draw(st.integers(0, n - 1))
    k = data.draw(st.integers(1, n))
    arr = np.asarray(scores)
    if np.count_nonzero(arr == arr[t]) > 1:
        return  # tie-breaking is by index, so permutation changes the outcome
    perm = np.random.default_rng(n).permutation(n)
    base = topk_confidence_filter(softmax_vec(arr), t, k).keep
    inv = int(np.nonzero(perm == t)[0][0])
    assert topk_confidence_filter(softmax_vec(arr[perm]), inv, k).keep == base


def test_alia_boundary():
    t = ClassThresholds({0: 0.6, 1: 0.7})
    assert not alia_threshold_filter(softmax_vec([0.6, 0.4]), 0, t).keep  # conf == t drops
    assert alia_threshold_filter(softmax_vec([0.59, 0.41]), 0, t).keep
    # confident wrong prediction also drops
    assert not alia_threshold_filter(softmax_vec([0.2, 0.8]), 0, t).keep
    assert alia_threshold_filter(softmax_vec([0.4, 0.6]), 0, t).keep


def test_alia_missing_threshold():
    with pytest.raises(FilterError):
        alia_threshold_filter(softmax_vec([0.2, 0.8]), 0, ClassThresholds({0: 0.5}))


def test_compute_class_thresholds():
    t = compute_class_thresholds([(0, 0.5), (0, 0.7), (1, 0.9)])
    assert t[0] == pytest.approx(0.6) and t[1] == pytest.approx(0.9)
    with pytest.raises(FilterError):
        compute_class_thresholds([(0, 0.5)], classes=[0, 1])


def test_clip_label_filter():
    s = ScoreVector(["a", "b", "c"], [0.2, 0.3, 0.3], SIMILARITY)
    assert clip_label_filter(s, 1).keep
    assert clip_label_filter(s, 2).keep  # ties with the argmax keep
    assert not clip_label_filter(s, 0).keep


def test_for_shots():
    assert not FilterConfig.for_shots(4).use_topk
    assert not FilterConfig.for_shots(8).use_topk
    assert FilterConfig.for_shots(16).use_topk
    assert FilterConfig.for_shots(None).stages == ["semantic", "topk"]
    assert FilterConfig(alternative="alia").stages == ["semantic", "topk", "alia"]


def _manifest(n, classes=3):
    recs = [
        AugmentationRecord(f"a{i:05d}", f"s{i}", i % classes, "p", None, "saspa_no_subject", "d", i, f"images/{i}.png")
        for i in range(n)
    ]
    return AugmentationManifest("toy", recs)


class ScriptedScorer:
    """Semantic failures for ids in ``sem_fail``, top-k failures for ids in ``topk_fail``."""

    def __init__(self, n_classes, sem_fail=(), topk_fail=(), broken=()):
        self.n = n_classes
        self.sem_fail, self.topk_fail, self.broken = set(sem_fail), set(topk_fail), set(broken)
        self.calls = []

    def similarities(self, record, texts):
        self.calls.append(("sim", record.aug_id))
        if record.aug_id in self.broken:
            raise RuntimeError("model crashed")
        s = np.full(len(texts), 0.1)
        s[1 if record.aug_id in self.sem_fail else 0] = 0.5
        return ScoreVector(texts, s, SIMILARITY)

    def softmax(self, record):
        self.calls.append(("cls", record.aug_id))
        s = np.ones(self.n)
        s[record.sub_class] = 0.1 if record.aug_id in self.topk_fail else 10.0
        return ScoreVector([str(i) for i in range(self.n)], s / s.sum(), SOFTMAX)


def test_pipeline_order_and_short_circuit():
    m = _manifest(6)
    sc = ScriptedScorer(3, sem_fail={"a00001"}, topk_fail={"a00002"})
    out, report = apply_filter_pipeline(m, Scorers("Car", ["x", "y", "z"], sc, sc), FilterConfig(k=1))
    verdicts = {r.aug_id: (r.verdict, r.drop_reason) for r in out.records}
    assert verdicts["a00001"][0] == "dropped" and verdicts["a00001"][1].startswith("semantic")
    assert verdicts["a00002"][0] == "dropped" and verdicts["a00002"][1].startswith("topk")
    assert ("cls", "a00001") not in sc.calls
    assert report.kept + report.dropped == report.total == 6
    assert [s.evaluated for s in report.per_stage] == [6, 5]
    assert not out.pending()
    assert m.pending()  # input untouched


def test_pipeline_scorer_error_drops():
    m = _manifest(3)
    sc = ScriptedScorer(3, broken={"a00000"})
    out, report = apply_filter_pipeline(m, Scorers("Car", ["x", "y", "z"], sc, sc))
    assert report.scorer_errors == 1
    assert out.records[0].drop_reason == "scorer_error"


def test_pipeline_missing_provider_fails_fast():
    with pytest.raises(FilterError, match="classifier"):
        apply_filter_pipeline(_manifest(2), Scorers("Car", ["x"], text_image=ScriptedScorer(1)))
    with pytest.raises(FilterError, match="thresholds"):
        sc = ScriptedScorer(3)
        apply_filter_pipeline(_manifest(2), Scorers("Car", ["x", "y", "z"], sc, sc), FilterConfig(alternative="alia"))


def test_pipeline_drop_fraction_45_percent():
    n = 1000
    fails = {f"a{i:05d}" for i in range(0, n, 1000 // 45)}
    fails = set(sorted(fails)[:45])
    sc = ScriptedScorer(12, topk_fail=fails)
    _, report = apply_filter_pipeline(_manifest(n, 12), Scorers("Car", [str(i) for i in range(12)], sc, sc),
                                      FilterConfig(k=10))
    assert report.drop_fraction == pytest.approx(0.045)


def test_hash_scorer_drops_roughly_at_rate():
    d = make_descriptor([10] * 20)
    sc = build_scorers("hash", d, seed=0, need_thresholds=True)
    _, base = apply_filter_pipeline(_manifest(2000, 20), sc, FilterConfig(k=10))
    # two independent checks at rate 0.1 each: 1 - 0.9**2 = 0.19
    assert 0.15 < base.drop_fraction < 0.23
    _, alia = apply_filter_pipeline(_manifest(2000, 20), sc, FilterConfig(k=10, alternative="alia"))
    assert alia.dropped > base.dropped
    keep_all = build_scorers("keep_all", d)
    _, report = apply_filter_pipeline(_manifest(500, 20), keep_all)
    assert report.dropped == 0


def test_hash_scorer_is_deterministic():
    d = make_descriptor([5, 5])
    a = HashScorer("Airplane", d.sub_classes, 0.3, 1)
    rec = _manifest(1, 2).records[0]
    assert np.array_equal(a.softmax(rec).scores, a.softmax(rec).scores)

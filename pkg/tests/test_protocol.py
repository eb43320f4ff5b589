"""Simulated-teacher protocol, its metrics, and offline cross-validation."""

import csv

import numpy as np
import pytest

from conftest import separable_corpus
from localhdp.corpus import BowDocument, LabeledCorpus
from localhdp.errors import ConfigurationError, ParameterError
from localhdp.hdp import Hyperparams
from localhdp.protocol import (
    LACK_OF_DATA,
    STALLED,
    AskEvent,
    CorrectEvent,
    ExperimentTrace,
    Metrics,
    TeachEvent,
    TeacherConfig,
    compute_metrics,
    read_trace,
    run_offline,
    run_open_ended,
    summarize_rounds,
    window_accuracy,
    write_curves,
    write_metrics,
    write_trace,
)
from localhdp.registry import Registry

HYPER = Hyperparams(max_topics=12, max_tables=6, eta=0.05)
FAST_HYPER = Hyperparams(max_topics=8, max_tables=4, eta=0.05)


def identical_corpus(n_categories=6, views=40):
    """Adversarial corpus: every view of every category is the same document."""
    documents = []
    for c in range(n_categories):
        label = f"cat{c}"
        for i in range(views):
            documents.append(
                (BowDocument.from_counts({0: 5, 1: 3, 2: 2}, f"{label}/{i}"), label)
            )
    return LabeledCorpus(dictionary_size=3, documents=documents)


def ask(correct, view="v", truth="a", predicted=None):
    predicted = predicted if predicted is not None else (truth if correct else "other")
    return AskEvent(view_id=view, predicted=predicted, truth=truth, correct=correct)


class TestWindowAccuracy:
    def test_all_correct_window(self):
        trace = ExperimentTrace(events=[ask(True), ask(True), ask(True)])
        assert window_accuracy(trace, 1) == 1.0

    def test_two_of_three_exceeds_threshold(self):
        trace = ExperimentTrace(events=[ask(True), ask(False), ask(True)])
        value = window_accuracy(trace, 1)
        assert value == pytest.approx(2 / 3)
        assert value > 0.66

    def test_empty_trace(self):
        assert window_accuracy(ExperimentTrace(), 1) == 0.0

    def test_window_limits_to_last_3n(self):
        events = [ask(False)] * 10 + [ask(True)] * 3
        assert window_accuracy(ExperimentTrace(events=events), 1) == 1.0
        assert window_accuracy(ExperimentTrace(events=events), 2) == 0.5

    def test_ignores_non_ask_events(self):
        events = [TeachEvent("a", "v0"), ask(True), CorrectEvent("a", "v1"), ask(True)]
        assert window_accuracy(ExperimentTrace(events=events), 1) == 1.0

    def test_bad_n(self):
        with pytest.raises(ParameterError):
            window_accuracy(ExperimentTrace(), 0)


class TestComputeMetrics:
    def test_teach_then_two_correct_asks(self):
        events = [
            TeachEvent("a", "v0"),
            TeachEvent("a", "v1"),
            TeachEvent("a", "v2"),
            ask(True),
            ask(True),
        ]
        metrics = compute_metrics(ExperimentTrace(events=events))
        assert metrics == Metrics(qci=2, lc=1, aic=3.0, gca=1.0)

    def test_ten_asks_five_corrections(self):
        events = [TeachEvent("a", "v0"), TeachEvent("b", "w0")]
        for i in range(5):
            events.append(ask(True, truth="a"))
            events.append(ask(False, truth="b", predicted="a"))
            events.append(CorrectEvent("b", f"w{i}"))
        metrics = compute_metrics(ExperimentTrace(events=events))
        assert metrics.qci == 15
        assert metrics.gca == 0.5
        assert metrics.lc == 2
        assert metrics.aic == pytest.approx((1 + 6) / 2)

    def test_empty_trace(self):
        metrics = compute_metrics(ExperimentTrace())
        assert metrics == Metrics(qci=0, lc=0, aic=0.0, gca=0.0)

    def test_registry_counts_override(self):
        registry = Registry(4, FAST_HYPER, seed=0)
        registry.teach("a", BowDocument.from_counts({0: 2}))
        registry.teach("a", BowDocument.from_counts({1: 2}))
        registry.teach("b", BowDocument.from_counts({2: 2}))
        trace = ExperimentTrace(
            events=[
                TeachEvent("a", "v0"),
                TeachEvent("a", "v1"),
                TeachEvent("b", "w0"),
                ask(True, truth="a"),
            ]
        )
        with_reg = compute_metrics(trace, registry)
        without = compute_metrics(trace)
        assert with_reg == without
        assert with_reg.aic == 1.5


class TestRunOpenEnded:
    def test_separable_corpus_learns_everything(self):
        corpus = separable_corpus(n_categories=10, views=8, seed=1)
        metrics, trace = run_open_ended(corpus, TeacherConfig(seed=7), HYPER)
        assert trace.termination == LACK_OF_DATA
        assert metrics.lc == 10
        assert metrics.gca >= 0.9
        # one full probe cycle per level: 1 + 2 + ... + 10 asks, no corrections
        assert metrics.qci == 55
        assert metrics.aic == 3.0

    def test_replay_is_byte_identical(self, tmp_path):
        corpus = separable_corpus(n_categories=4, views=6, seed=2)
        cfg = TeacherConfig(seed=5)
        first_m, first_t = run_open_ended(corpus, cfg, HYPER)
        second_m, second_t = run_open_ended(corpus, cfg, HYPER)
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_trace(first_t, a)
        write_trace(second_t, b)
        assert a.read_bytes() == b.read_bytes()
        ma, mb = tmp_path / "ma.txt", tmp_path / "mb.txt"
        write_metrics(first_m, ma)
        write_metrics(second_m, mb)
        assert ma.read_bytes() == mb.read_bytes()

    def test_identical_documents_stall(self):
        metrics, trace = run_open_ended(
            identical_corpus(), TeacherConfig(seed=0, patience=30), FAST_HYPER
        )
        assert trace.termination == STALLED
        assert metrics.lc < 6

    def test_patience_one_stalls_after_first_subthreshold_window(self):
        corpus = identical_corpus(n_categories=3, views=30)
        metrics, trace = run_open_ended(
            corpus, TeacherConfig(seed=0, patience=1), FAST_HYPER
        )
        assert trace.termination == STALLED
        tail_asks = 0
        for event in reversed(trace.events):
            if isinstance(event, TeachEvent):
                break
            if isinstance(event, AskEvent):
                tail_asks += 1
        assert tail_asks == 1

    def test_trace_shape_invariants(self):
        corpus = separable_corpus(n_categories=3, views=6, seed=3)
        _, trace = run_open_ended(corpus, TeacherConfig(seed=1), HYPER)
        assert isinstance(trace.events[0], TeachEvent)
        for i, event in enumerate(trace.events):
            if isinstance(event, CorrectEvent):
                previous = trace.events[i - 1]
                assert isinstance(previous, AskEvent)
                assert not previous.correct
                assert previous.truth == event.label
                assert previous.view_id == event.view_id

    def test_metrics_match_trace_recount(self):
        corpus = separable_corpus(n_categories=4, views=6, seed=4)
        metrics, trace = run_open_ended(corpus, TeacherConfig(seed=9), HYPER)
        asks = [e for e in trace.events if isinstance(e, AskEvent)]
        corrections = [e for e in trace.events if isinstance(e, CorrectEvent)]
        teaches = [e for e in trace.events if isinstance(e, TeachEvent)]
        labels = {e.label for e in teaches}
        assert metrics.qci == len(asks) + len(corrections)
        assert metrics.lc == len(labels)
        assert metrics.gca == sum(e.correct for e in asks) / len(asks)
        stored = len(teaches) + len(corrections)
        assert metrics.aic == pytest.approx(stored / len(labels))

    def test_too_few_categories_rejected(self):
        corpus = separable_corpus(n_categories=1, views=6, seed=0)
        with pytest.raises(ConfigurationError):
            run_open_ended(corpus, TeacherConfig(seed=0), HYPER)

    def test_too_few_views_rejected(self):
        corpus = separable_corpus(n_categories=3, views=3, seed=0)
        with pytest.raises(ConfigurationError, match="at least 4"):
            run_open_ended(corpus, TeacherConfig(seed=0, teach_views=3), HYPER)


class TestRunOffline:
    def test_separable_corpus_is_perfect(self):
        corpus = separable_corpus(n_categories=3, views=10, seed=5)
        mean_acc, per_fold = run_offline(
            corpus, folds=5, permutations=2, hyper=FAST_HYPER, seed=1
        )
        assert mean_acc == 1.0
        assert len(per_fold) == 10
        assert all(acc == 1.0 for acc in per_fold)

    def test_null_corpus_near_chance(self):
        # labels carry no information: both categories draw from one block
        rng = np.random.default_rng(6)
        documents = []
        for i in range(40):
            draws = rng.choice(6, size=25)
            words, counts = np.unique(draws, return_counts=True)
            doc = BowDocument(
                counts={int(w): int(c) for w, c in zip(words, counts)},
                total_words=25,
                source_id=f"v{i}",
            )
            documents.append((doc, "a" if i % 2 == 0 else "b"))
        corpus = LabeledCorpus(dictionary_size=6, documents=documents)
        mean_acc, _ = run_offline(corpus, folds=5, permutations=10, hyper=FAST_HYPER, seed=2)
        assert mean_acc == pytest.approx(0.5, abs=0.1)

    def test_fold_count_larger_than_category_rejected(self):
        corpus = separable_corpus(n_categories=2, views=4, seed=0)
        with pytest.raises(ConfigurationError, match="fewer than"):
            run_offline(corpus, folds=5, permutations=1, hyper=FAST_HYPER)

    def test_accuracy_invariant_to_count_map_order(self):
        # bag-of-words: the same multiset of words must behave identically
        # no matter how the sparse map was assembled
        corpus_a = separable_corpus(n_categories=2, views=6, seed=7)
        reordered = []
        for doc, label in corpus_a.documents:
            items = list(doc.counts.items())[::-1]
            reordered.append(
                (BowDocument.from_counts(dict(items), doc.source_id), label)
            )
        corpus_b = LabeledCorpus(corpus_a.dictionary_size, reordered)
        out_a = run_offline(corpus_a, folds=3, permutations=1, hyper=FAST_HYPER, seed=3)
        out_b = run_offline(corpus_b, folds=3, permutations=1, hyper=FAST_HYPER, seed=3)
        assert out_a == out_b

    def test_deterministic(self):
        corpus = separable_corpus(n_categories=2, views=6, seed=8)
        first = run_offline(corpus, folds=3, permutations=2, hyper=FAST_HYPER, seed=4)
        second = run_offline(corpus, folds=3, permutations=2, hyper=FAST_HYPER, seed=4)
        assert first == second


class TestExports:
    def _run(self):
        corpus = separable_corpus(n_categories=3, views=6, seed=9)
        return run_open_ended(corpus, TeacherConfig(seed=2), HYPER)

    def test_trace_round_trip(self, tmp_path):
        _, trace = self._run()
        path = tmp_path / "trace.tsv"
        write_trace(trace, path)
        loaded = read_trace(path)
        assert loaded.events == trace.events
        assert loaded.termination == trace.termination

    def test_metrics_file_is_flat_key_value(self, tmp_path):
        metrics, _ = self._run()
        path = tmp_path / "metrics.txt"
        write_metrics(metrics, path)
        parsed = dict(
            line.split(" ", 1) for line in path.read_text().strip().splitlines()
        )
        assert int(parsed["qci"]) == metrics.qci
        assert int(parsed["lc"]) == metrics.lc
        assert float(parsed["aic"]) == metrics.aic
        assert float(parsed["gca"]) == metrics.gca

    def test_curves_files(self, tmp_path):
        metrics, trace = self._run()
        write_curves(trace, tmp_path)
        with (tmp_path / "learned_categories.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["iteration", "learned_categories"]
        assert int(rows[-1][1]) == metrics.lc

        with (tmp_path / "accuracy_by_categories.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["learned_categories", "accuracy"]
        assert float(rows[-1][1]) == metrics.gca

        with (tmp_path / "instances_per_category.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["category", "stored_instances"]
        stored = sum(int(r[1]) for r in rows[1:])
        teaches = sum(isinstance(e, TeachEvent) for e in trace.events)
        corrections = sum(isinstance(e, CorrectEvent) for e in trace.events)
        assert stored == teaches + corrections


class TestSummarizeRounds:
    def test_mean_and_spread(self):
        rounds = [
            Metrics(qci=10, lc=2, aic=3.0, gca=0.5),
            Metrics(qci=20, lc=4, aic=5.0, gca=1.0),
        ]
        summary = summarize_rounds(rounds)
        assert summary["qci"][0] == 15.0
        assert summary["gca"][0] == 0.75
        assert summary["lc"][1] == pytest.approx(np.std([2, 4], ddof=1))

    def test_single_round_zero_spread(self):
        summary = summarize_rounds([Metrics(qci=5, lc=1, aic=3.0, gca=1.0)])
        assert summary["aic"] == (3.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            summarize_rounds([])

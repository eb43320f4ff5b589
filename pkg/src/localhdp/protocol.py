"""Simulated-teacher open-ended evaluation and offline cross-validation.

The teacher introduces a new category by teaching a few labeled views,
then keeps asking the learner to classify unforeseen views of every
known category, correcting each mistake. When the accuracy over a
sliding window of the most recent asks exceeds a threshold, the next
category enters; when the accuracy fails to recover within a patience
budget the run stops ("stalled"); when no categories remain it stops
("lack_of_data"). Every event lands in an ordered trace from which the
four summary metrics are recomputed.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import BowDocument, LabeledCorpus
from .errors import ConfigurationError, ParameterError
from .hdp import Hyperparams
from .registry import Registry, derive_seed

LACK_OF_DATA = "lack_of_data"
STALLED = "stalled"


@dataclass(frozen=True)
class TeacherConfig:
    """Knobs of the simulated teacher.

    ``window_factor * learned_categories`` asks make up the sliding
    accuracy window; ``teach_views`` views introduce each category;
    ``patience`` bounds the asks allowed below the threshold before the
    run stalls.
    """

    tau: float = 0.66
    window_factor: int = 3
    teach_views: int = 3
    patience: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ParameterError(f"tau must be in (0, 1), got {self.tau}")
        if self.window_factor < 1:
            raise ParameterError(f"window_factor must be >= 1, got {self.window_factor}")
        if self.teach_views < 1:
            raise ParameterError(f"teach_views must be >= 1, got {self.teach_views}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class TeachEvent:
    label: str
    view_id: str


@dataclass(frozen=True)
class AskEvent:
    view_id: str
    predicted: str
    truth: str
    correct: bool
    resampled: bool = False


@dataclass(frozen=True)
class CorrectEvent:
    label: str
    view_id: str


Event = TeachEvent | AskEvent | CorrectEvent


@dataclass
class ExperimentTrace:
    """Ordered record of teacher/learner interactions plus the stop reason."""

    events: list[Event] = field(default_factory=list)
    termination: str = ""

    def asks(self) -> list[AskEvent]:
        return [e for e in self.events if isinstance(e, AskEvent)]


@dataclass(frozen=True)
class Metrics:
    """Question/correction iterations, learned categories, average stored
    instances per category, and global categorization accuracy."""

    qci: int
    lc: int
    aic: float
    gca: float


def window_accuracy(trace: ExperimentTrace, n: int) -> float:
    """Fraction of correct answers among the last ``3n`` asks (0 if none)."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    asks = trace.asks()
    if not asks:
        return 0.0
    window = asks[-3 * n :]
    return sum(e.correct for e in window) / len(window)


def compute_metrics(trace: ExperimentTrace, registry: Registry | None = None) -> Metrics:
    """Recount the four metrics from a trace.

    The average instances per category comes from the registry when one
    is supplied, otherwise from the teach and correct events, which agree
    by construction.
    """
    asks = corrections = 0
    taught: dict[str, int] = {}
    for event in trace.events:
        if isinstance(event, AskEvent):
            asks += 1
        elif isinstance(event, CorrectEvent):
            corrections += 1
            taught[event.label] = taught.get(event.label, 0) + 1
        else:
            taught[event.label] = taught.get(event.label, 0) + 1
    if registry is not None:
        counts = registry.instance_counts()
    else:
        counts = taught
    lc = len(counts)
    aic = (sum(counts.values()) / lc) if lc else 0.0
    correct = sum(e.correct for e in trace.asks())
    gca = correct / asks if asks else 0.0
    return Metrics(qci=asks + corrections, lc=lc, aic=aic, gca=gca)


@dataclass
class _CategoryViews:
    label: str
    views: list[tuple[str, BowDocument]]
    ask_pool: list[tuple[str, BowDocument]]
    next_teach: int = 0
    exhausted: bool = False


def _prepare_views(
    corpus: LabeledCorpus, rng: np.random.Generator
) -> dict[str, _CategoryViews]:
    grouped: dict[str, list[tuple[str, BowDocument]]] = {}
    per_label_index: dict[str, int] = {}
    for doc, label in corpus.documents:
        idx = per_label_index.get(label, 0)
        per_label_index[label] = idx + 1
        grouped.setdefault(label, []).append((f"{label}#{idx}", doc))
    prepared = {}
    for label in sorted(grouped):
        views = list(grouped[label])
        order = rng.permutation(len(views))
        views = [views[i] for i in order]
        prepared[label] = _CategoryViews(label=label, views=views, ask_pool=[])
    return prepared


def run_open_ended(
    corpus: LabeledCorpus, cfg: TeacherConfig, hyper: Hyperparams
) -> tuple[Metrics, ExperimentTrace]:
    """Run one simulated-teacher experiment over the corpus.

    Deterministic per seed: the category order, the per-category view
    order, and every sampling decision derive from ``cfg.seed``, so a
    replay produces an identical trace.
    """
    by_label = corpus.by_label()
    if len(by_label) < 2:
        raise ConfigurationError("open-ended evaluation needs at least 2 categories")
    for label, docs in by_label.items():
        if len(docs) < cfg.teach_views + 1:
            raise ConfigurationError(
                f"category {label!r} has {len(docs)} views, needs at least "
                f"{cfg.teach_views + 1}"
            )

    teacher_rng = np.random.default_rng(derive_seed(cfg.seed, "teacher"))
    categories = _prepare_views(corpus, teacher_rng)
    intro_order = [sorted(categories)[i] for i in teacher_rng.permutation(len(categories))]

    registry = Registry(corpus.dictionary_size, hyper, seed=cfg.seed)
    trace = ExperimentTrace()
    learned: list[str] = []
    correct_history: list[bool] = []

    def introduce(label: str) -> None:
        cat = categories[label]
        for _ in range(cfg.teach_views):
            view_id, doc = cat.views[cat.next_teach]
            cat.next_teach += 1
            registry.teach(label, doc)
            trace.events.append(TeachEvent(label=label, view_id=view_id))
        cat.ask_pool = cat.views[cat.next_teach :]
        learned.append(label)

    def pick_ask(cat: _CategoryViews) -> tuple[str, BowDocument, bool] | None:
        if cat.ask_pool:
            view_id, doc = cat.ask_pool.pop(0)
            return view_id, doc, cat.exhausted
        candidates = cat.views[cat.next_teach :]
        if not candidates:
            return None
        cat.exhausted = True
        view_id, doc = candidates[int(teacher_rng.integers(len(candidates)))]
        return view_id, doc, True

    introduce(intro_order[0])
    next_category = 1
    asks_since_new = 0

    while True:
        progressed = False
        cycle = [learned[i] for i in teacher_rng.permutation(len(learned))]
        for label in cycle:
            cat = categories[label]
            picked = pick_ask(cat)
            if picked is None:
                continue
            view_id, doc, resampled = picked
            progressed = True
            predicted, _ = registry.ask(doc)
            correct = predicted == label
            trace.events.append(
                AskEvent(
                    view_id=view_id,
                    predicted=predicted,
                    truth=label,
                    correct=correct,
                    resampled=resampled,
                )
            )
            correct_history.append(correct)
            if not correct:
                registry.correct(label, doc)
                trace.events.append(CorrectEvent(label=label, view_id=view_id))
                cat.views = [v for v in cat.views if v[0] != view_id]
                cat.next_teach = min(cat.next_teach, len(cat.views))
            asks_since_new += 1

            window = correct_history[-3 * len(learned) :]
            accuracy = sum(window) / len(window)
            # every learned category must be probed at least once after an
            # introduction before the threshold can admit the next one
            if accuracy > cfg.tau and asks_since_new >= len(learned):
                if next_category == len(intro_order):
                    trace.termination = LACK_OF_DATA
                    return compute_metrics(trace, registry), trace
                introduce(intro_order[next_category])
                next_category += 1
                asks_since_new = 0
                break
            if asks_since_new >= cfg.patience:
                trace.termination = STALLED
                return compute_metrics(trace, registry), trace
        if not progressed:
            # every learned category ran out of views to ask about
            trace.termination = LACK_OF_DATA
            return compute_metrics(trace, registry), trace


def run_offline(
    corpus: LabeledCorpus,
    folds: int = 10,
    permutations: int = 10,
    hyper: Hyperparams | None = None,
    seed: int = 0,
) -> tuple[float, list[float]]:
    """Permuted, stratified k-fold accuracy of a freshly trained registry.

    For each permutation the per-category instance order is reshuffled,
    split into ``folds`` stratified parts, and each part serves once as
    the test set against a registry taught on the rest. Returns the mean
    accuracy and the accuracy of every permutation-fold cell.
    """
    if folds < 2:
        raise ParameterError(f"folds must be >= 2, got {folds}")
    if permutations < 1:
        raise ParameterError(f"permutations must be >= 1, got {permutations}")
    hyper = hyper or Hyperparams()
    by_label = corpus.by_label()
    if not by_label:
        raise ConfigurationError("corpus has no documents")
    for label, docs in by_label.items():
        if len(docs) < folds:
            raise ConfigurationError(
                f"category {label!r} has {len(docs)} instances, fewer than "
                f"{folds} folds"
            )

    accuracies: list[float] = []
    for perm in range(permutations):
        rng = np.random.default_rng(derive_seed(seed, "offline", perm))
        shuffled = {
            label: [docs[i] for i in rng.permutation(len(docs))]
            for label, docs in sorted(by_label.items())
        }
        parts: dict[str, list[list[BowDocument]]] = {
            label: [list(chunk) for chunk in np.array_split(np.arange(len(docs)), folds)]
            for label, docs in shuffled.items()
        }
        for fold in range(folds):
            train: list[tuple[BowDocument, str]] = []
            test: list[tuple[BowDocument, str]] = []
            for label, docs in shuffled.items():
                test_idx = set(parts[label][fold])
                for i, doc in enumerate(docs):
                    (test if i in test_idx else train).append((doc, label))
            order = rng.permutation(len(train))
            registry = Registry(
                corpus.dictionary_size, hyper, seed=derive_seed(seed, "fold", perm, fold)
            )
            for i in order:
                doc, label = train[i]
                registry.teach(label, doc)
            hits = sum(registry.ask(doc)[0] == label for doc, label in test)
            accuracies.append(hits / len(test))
    return statistics.fmean(accuracies), accuracies


def write_trace(trace: ExperimentTrace, path: str | Path) -> None:
    """One tab-separated line per event, closing with the stop reason."""
    path = Path(path)
    lines = []
    for event in trace.events:
        if isinstance(event, TeachEvent):
            lines.append(f"teach\t{event.label}\t{event.view_id}")
        elif isinstance(event, AskEvent):
            lines.append(
                "ask\t{id}\t{pred}\t{truth}\t{ok}\t{rs}".format(
                    id=event.view_id,
                    pred=event.predicted,
                    truth=event.truth,
                    ok=int(event.correct),
                    rs=int(event.resampled),
                )
            )
        else:
            lines.append(f"correct\t{event.label}\t{event.view_id}")
    lines.append(f"end\t{trace.termination}")
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_trace(path: str | Path) -> ExperimentTrace:
    trace = ExperimentTrace()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        fields = raw.split("\t")
        kind = fields[0]
        if kind == "teach":
            trace.events.append(TeachEvent(label=fields[1], view_id=fields[2]))
        elif kind == "ask":
            trace.events.append(
                AskEvent(
                    view_id=fields[1],
                    predicted=fields[2],
                    truth=fields[3],
                    correct=fields[4] == "1",
                    resampled=fields[5] == "1",
                )
            )
        elif kind == "correct":
            trace.events.append(CorrectEvent(label=fields[1], view_id=fields[2]))
        elif kind == "end":
            trace.termination = fields[1]
        else:
            raise ParameterError(f"unknown trace event kind {kind!r}")
    return trace


def write_metrics(metrics: Metrics, path: str | Path) -> None:
    """Flat key-value text block, one metric per line."""
    text = (
        f"qci {metrics.qci}\n"
        f"lc {metrics.lc}\n"
        f"aic {metrics.aic!r}\n"
        f"gca {metrics.gca!r}\n"
    )
    Path(path).write_text(text, encoding="utf-8")


def write_curves(trace: ExperimentTrace, out_dir: str | Path) -> None:
    """CSV exports for the standard plots.

    ``learned_categories.csv`` tracks the category count after every
    question/correction iteration, ``accuracy_by_categories.csv`` records
    the running accuracy at each category-count level, and
    ``instances_per_category.csv`` counts stored views per category in
    introduction order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    iteration = 0
    lc = 0
    seen: set[str] = set()
    lc_rows = []
    acc_at_lc: dict[int, float] = {}
    asks = hits = 0
    instance_order: list[str] = []
    instance_counts: dict[str, int] = {}
    for event in trace.events:
        if isinstance(event, TeachEvent):
            if event.label not in seen:
                seen.add(event.label)
                lc += 1
                instance_order.append(event.label)
            instance_counts[event.label] = instance_counts.get(event.label, 0) + 1
        else:
            iteration += 1
            if isinstance(event, AskEvent):
                asks += 1
                hits += int(event.correct)
                acc_at_lc[lc] = hits / asks
            else:
                instance_counts[event.label] = instance_counts.get(event.label, 0) + 1
            lc_rows.append((iteration, lc))

    with (out_dir / "learned_categories.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "learned_categories"])
        writer.writerows(lc_rows)
    with (out_dir / "accuracy_by_categories.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["learned_categories", "accuracy"])
        for n in sorted(acc_at_lc):
            writer.writerow([n, repr(acc_at_lc[n])])
    with (out_dir / "instances_per_category.csv").open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "stored_instances"])
        for label in instance_order:
            writer.writerow([label, instance_counts[label]])


def summarize_rounds(metric_list: Iterable[Metrics]) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation of each metric across repeated runs."""
    metric_list = list(metric_list)
    if not metric_list:
        raise ParameterError("no rounds to summarize")
    out = {}
    for name in ("qci", "lc", "aic", "gca"):
        values = [float(getattr(m, name)) for m in metric_list]
        spread = statistics.stdev(values) if len(values) > 1 else 0.0
        out[name] = (statistics.fmean(values), spread)
    return out

"""Single-category hierarchical Dirichlet process with online variational updates.

Each category owns an independent truncated stick-breaking model:

* global sticks ``Beta(u_k, v_k)`` over at most ``max_topics`` topics,
* a Dirichlet ``topic_word[k]`` over the visual vocabulary per topic,
* per-document sticks ``Beta(a_t, b_t)`` over at most ``max_tables`` tables,
  a table-to-topic assignment matrix and a word-to-table assignment matrix.

Fitting one document runs coordinate ascent on the document-level
parameters with the category frozen, forms natural gradients of the
category parameters (which take the "target minus current" form for this
exponential family), and takes a decaying-step stochastic update. The
per-document objective is the standard variational lower bound, with the
category-level prior and entropy terms weighted by one over the number of
training instances so that summing over a category's documents yields the
category bound.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, logsumexp, psi, xlogy

from .corpus import BowDocument
from .errors import (
    InferenceError,
    NumericalError,
    ParameterError,
    StructuralError,
    ValidationError,
)

_EPS = 1e-300


@dataclass(frozen=True)
class Hyperparams:
    """Truncations, concentrations and learning-rate schedule for one model.

    ``max_topics`` caps the number of topics a category may use
    (corpus-level truncation), ``max_tables`` caps the per-document mixture
    components (document-level truncation). The step size for the t-th
    update is ``(tau0 + t) ** -kappa``.
    """

    max_topics: int = 100
    max_tables: int = 20
    gamma_top: float = 1.0
    alpha0: float = 1.0
    eta: float = 0.01
    tau0: float = 1.0
    kappa: float = 0.9

    def __post_init__(self) -> None:
        if self.max_topics < 1:
            raise ParameterError(f"max_topics must be >= 1, got {self.max_topics}")
        if not 1 <= self.max_tables <= self.max_topics:
            raise ParameterError(
                f"max_tables must be in [1, max_topics], got {self.max_tables}"
            )
        if self.gamma_top <= 0 or self.alpha0 <= 0:
            raise ParameterError("concentration parameters must be > 0")
        if self.eta <= 0:
            raise ParameterError(f"eta must be > 0, got {self.eta}")
        if self.tau0 <= 0:
            raise ParameterError(f"tau0 must be > 0, got {self.tau0}")
        if not 0.5 < self.kappa <= 1.0:
            raise ParameterError(f"kappa must be in (0.5, 1], got {self.kappa}")


@dataclass(frozen=True)
class CategoryModel:
    """Variational state of one category.

    ``topic_word`` is the (max_topics, V) matrix of topic Dirichlet
    parameters; ``u`` and ``v`` are the (max_topics - 1,) Beta parameters
    of the global sticks. ``update_count`` advances by one per fitted
    document; ``doc_count`` is the number of training instances seen.
    """

    topic_word: np.ndarray
    u: np.ndarray
    v: np.ndarray
    update_count: int
    doc_count: int
    hyper: Hyperparams

    @property
    def vocab_size(self) -> int:
        return self.topic_word.shape[1]

    def validate(self) -> None:
        K = self.hyper.max_topics
        if self.topic_word.shape != (K, self.vocab_size):
            raise StructuralError("topic_word shape does not match max_topics")
        if self.u.shape != (K - 1,) or self.v.shape != (K - 1,):
            raise StructuralError("stick parameter arrays must have length max_topics - 1")
        if not (np.all(self.topic_word > 0) and np.all(self.u > 0) and np.all(self.v > 0)):
            raise NumericalError("variational parameters must stay strictly positive")
        if self.update_count < 1:
            raise StructuralError("update_count must be >= 1")


@dataclass(frozen=True)
class DocumentVariational:
    """Per-document variational state over the document's distinct words.

    ``a``/``b`` are the (max_tables - 1,) Beta parameters of the document
    sticks, ``table_topic`` the (max_tables, max_topics) row-stochastic
    assignment of tables to topics, ``word_table`` the (n_distinct,
    max_tables) row-stochastic assignment of word types to tables.
    ``word_ids`` records which distinct word each row belongs to.
    """

    a: np.ndarray
    b: np.ndarray
    table_topic: np.ndarray
    word_table: np.ndarray
    word_ids: np.ndarray


@dataclass(frozen=True)
class NaturalGradients:
    """Natural gradients of the category parameters for one document."""

    d_topic_word: np.ndarray
    d_u: np.ndarray
    d_v: np.ndarray


def dirichlet_log_expectation(alpha: np.ndarray) -> np.ndarray:
    """E[log x] for rows x ~ Dirichlet(row of alpha)."""
    if alpha.ndim == 1:
        return psi(alpha) - psi(np.sum(alpha))
    return psi(alpha) - psi(np.sum(alpha, axis=1))[:, np.newaxis]


def stick_log_expectation(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """E[log sigma_k] for truncated stick-breaking with Beta(first, second) sticks.

    Returns one more entry than the input: the final component takes all
    remaining mass.
    """
    n = len(first) + 1
    out = np.zeros(n)
    if n == 1:
        return out
    dig_sum = psi(first + second)
    log_w = psi(first) - dig_sum
    log_1w = psi(second) - dig_sum
    out[: n - 1] = log_w
    out[1:] += np.cumsum(log_1w)
    return out


def stick_weights(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Mixture weights from the expected stick proportions.

    ``sigma_k = E[x_k] * prod_{l<k} (1 - E[x_l])`` with the final
    proportion pinned to one, so the weights sum to one exactly.
    """
    n = len(first) + 1
    expected = np.ones(n)
    if n > 1:
        expected[: n - 1] = first / (first + second)
    remainder = np.concatenate(([1.0], np.cumprod(1.0 - expected[: n - 1])))
    return expected * remainder


def _log_normalize_rows(log_rows: np.ndarray) -> np.ndarray:
    norm = logsumexp(log_rows, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("row normalizer is not finite in assignment update")
    return np.exp(log_rows - norm)


def _beta_prior_entropy(a: np.ndarray, b: np.ndarray, p: float, q: float) -> float:
    """Sum over sticks of E_q[log Beta(x; p, q)] + H(q) for q = Beta(a, b)."""
    dig_sum = psi(a + b)
    term = -betaln(p, q) + betaln(a, b)
    term += (p - a) * (psi(a) - dig_sum)
    term += (q - b) * (psi(b) - dig_sum)
    return float(np.sum(term))


def _dirichlet_prior_entropy(alpha: np.ndarray, prior: float) -> float:
    """Sum over rows of E_q[log Dir(x; prior)] + H(q) for q = Dir(row)."""
    n_rows, dim = alpha.shape
    row_sums = np.sum(alpha, axis=1)
    elog = psi(alpha) - psi(row_sums)[:, np.newaxis]
    total = n_rows * (gammaln(dim * prior) - dim * gammaln(prior))
    total -= np.sum(gammaln(row_sums))
    total += np.sum(gammaln(alpha))
    total += np.sum((prior - alpha) * elog)
    return float(total)


def init_model(hyper: Hyperparams, vocab_size: int, seed: int) -> CategoryModel:
    """Fresh category: symmetric sticks and lightly perturbed flat topics.

    The perturbation is ``0.01 * Gamma(1, 1)`` noise on top of ``eta``, so
    every entry stays at or above the prior while topic symmetry is broken
    deterministically per seed.
    """
    if vocab_size < 1:
        raise ParameterError(f"vocab_size must be >= 1, got {vocab_size}")
    rng = np.random.default_rng(seed)
    K = hyper.max_topics
    topic_word = hyper.eta + 0.01 * rng.gamma(1.0, 1.0, size=(K, vocab_size))
    u = np.ones(K - 1)
    v = np.full(K - 1, hyper.gamma_top)
    return CategoryModel(
        topic_word=topic_word,
        u=u,
        v=v,
        update_count=1,
        doc_count=0,
        hyper=hyper,
    )


def _doc_arrays(model: CategoryModel, doc: BowDocument) -> tuple[np.ndarray, np.ndarray]:
    if doc.total_words < 1:
        raise InferenceError(f"cannot infer on empty document {doc.source_id!r}")
    ids, counts = doc.arrays()
    if ids.size and ids[-1] >= model.vocab_size:
        raise ValidationError(
            f"word id {int(ids[-1])} >= V={model.vocab_size} in document {doc.source_id!r}"
        )
    return ids, counts


def _document_bound(
    model: CategoryModel,
    counts: np.ndarray,
    elog_beta_doc: np.ndarray,
    elog_sticks_top: np.ndarray,
    elog_sticks_doc: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    table_topic: np.ndarray,
    word_table: np.ndarray,
) -> float:
    hyper = model.hyper
    scale = 1.0 / max(model.doc_count, 1)

    # E[log p(words | assignments, topics)]
    table_word = table_topic @ elog_beta_doc  # (T, n)
    bound = float(np.sum(word_table.T * table_word * counts[np.newaxis, :]))

    # table-to-topic assignments: cross-entropy with global sticks plus entropy
    bound += float(np.sum(table_topic * elog_sticks_top[np.newaxis, :]))
    bound -= float(np.sum(xlogy(table_topic, table_topic)))

    # word-to-table assignments, weighted by token counts
    bound += float(np.sum(counts[:, np.newaxis] * word_table * elog_sticks_doc[np.newaxis, :]))
    bound -= float(np.sum(counts[:, np.newaxis] * xlogy(word_table, word_table)))

    # document sticks against their Beta(1, alpha0) prior
    if a.size:
        bound += _beta_prior_entropy(a, b, 1.0, hyper.alpha0)

    # category-level terms, spread over the category's instances
    category = 0.0
    if model.u.size:
        category += _beta_prior_entropy(model.u, model.v, 1.0, hyper.gamma_top)
    category += _dirichlet_prior_entropy(model.topic_word, hyper.eta)
    bound += scale * category

    if not np.isfinite(bound):
        raise NumericalError("per-document bound is not finite")
    return bound


def infer_document(
    model: CategoryModel,
    doc: BowDocument,
    tol: float = 1e-5,
    max_iters: int = 100,
    record_bounds: list[float] | None = None,
) -> tuple[DocumentVariational, float]:
    """Coordinate ascent on the document-level parameters, category frozen.

    Sweeps update the word-to-table assignments, the table-to-topic
    assignments, and the document sticks in turn; each step is the exact
    maximizer of the bound in that coordinate, so the bound is
    non-decreasing across sweeps. Stops when the relative bound change
    drops below ``tol`` or after ``max_iters`` sweeps. Deterministic: the
    initial state is uniform, no randomness is involved.

    Returns the document state and the final bound. ``record_bounds``, if
    given, receives the bound after every sweep.
    """
    if max_iters < 1:
        raise ParameterError(f"max_iters must be >= 1, got {max_iters}")
    ids, counts = _doc_arrays(model, doc)
    hyper = model.hyper
    T = hyper.max_tables
    K = hyper.max_topics

    elog_beta = dirichlet_log_expectation(model.topic_word)
    elog_beta_doc = elog_beta[:, ids]  # (K, n)
    elog_sticks_top = stick_log_expectation(model.u, model.v)  # (K,)

    a = np.ones(T - 1)
    b = np.full(T - 1, hyper.alpha0)
    elog_sticks_doc = stick_log_expectation(a, b)  # (T,)
    table_topic = np.full((T, K), 1.0 / K)
    counts_f = counts.astype(np.float64)

    bound = -np.inf
    previous = -np.inf
    for _ in range(max_iters):
        # word types to tables
        log_word_table = elog_sticks_doc[np.newaxis, :] + (table_topic @ elog_beta_doc).T
        word_table = _log_normalize_rows(log_word_table)  # (n, T)

        # tables to topics
        weighted = word_table * counts_f[:, np.newaxis]  # (n, T)
        log_table_topic = elog_sticks_top[np.newaxis, :] + weighted.T @ elog_beta_doc.T
        table_topic = _log_normalize_rows(log_table_topic)  # (T, K)

        # document sticks from the table occupancies
        table_mass = np.sum(weighted, axis=0)  # (T,)
        if T > 1:
            a = 1.0 + table_mass[: T - 1]
            tail = np.cumsum(table_mass[::-1])[::-1]
            b = hyper.alpha0 + tail[1:]
            elog_sticks_doc = stick_log_expectation(a, b)

        bound = _document_bound(
            model, counts_f, elog_beta_doc, elog_sticks_top, elog_sticks_doc,
            a, b, table_topic, word_table,
        )
        if record_bounds is not None:
            record_bounds.append(bound)
        if np.isfinite(previous) and abs(bound - previous) <= tol * abs(previous) + _EPS:
            break
        previous = bound

    state = DocumentVariational(
        a=a, b=b, table_topic=table_topic, word_table=word_table, word_ids=ids
    )
    return state, bound


def natural_gradients(
    model: CategoryModel, doc_var: DocumentVariational, doc: BowDocument
) -> NaturalGradients:
    """Target-minus-current gradients of the category parameters.

    The data term scales with the number of instances in the category, so
    a single document stands in for the category's empirical average.
    """
    ids, counts = _doc_arrays(model, doc)
    if ids.shape != doc_var.word_ids.shape or not np.array_equal(ids, doc_var.word_ids):
        raise StructuralError("document state does not belong to this document")
    hyper = model.hyper
    K = hyper.max_topics
    if doc_var.table_topic.shape != (hyper.max_tables, K):
        raise StructuralError("table_topic shape does not match the model truncation")
    if doc_var.word_table.shape != (ids.size, hyper.max_tables):
        raise StructuralError("word_table shape does not match the document")

    scale = float(max(model.doc_count, 1))
    weighted = doc_var.word_table * counts[:, np.newaxis].astype(np.float64)  # (n, T)
    topic_word_stats = doc_var.table_topic.T @ weighted.T  # (K, n)

    d_topic_word = hyper.eta - model.topic_word
    d_topic_word[:, ids] += scale * topic_word_stats

    topic_mass = np.sum(doc_var.table_topic, axis=0)  # (K,)
    d_u = 1.0 - model.u + scale * topic_mass[: K - 1]
    tail = np.cumsum(topic_mass[::-1])[::-1]  # tail[k] = sum_{l >= k}
    d_v = hyper.gamma_top - model.v + scale * tail[1:]
    return NaturalGradients(d_topic_word=d_topic_word, d_u=d_u, d_v=d_v)


def learning_rate(hyper: Hyperparams, update_count: int) -> float:
    """Step size ``(tau0 + t) ** -kappa``; strictly decreasing in t."""
    if update_count < 1:
        raise ParameterError(f"update_count must be >= 1, got {update_count}")
    return float((hyper.tau0 + update_count) ** (-hyper.kappa))


def apply_update(
    model: CategoryModel, grads: NaturalGradients, rho: float
) -> CategoryModel:
    """Step the category parameters along the natural gradients.

    With ``rho == 1`` the parameters land exactly on the gradient's target
    (prior plus scaled sufficient statistics). Returns a new model with
    ``update_count`` advanced.
    """
    if not 0.0 < rho <= 1.0:
        raise ParameterError(f"rho must be in (0, 1], got {rho}")
    if grads.d_topic_word.shape != model.topic_word.shape:
        raise StructuralError("topic gradient shape does not match the model")
    if grads.d_u.shape != model.u.shape or grads.d_v.shape != model.v.shape:
        raise StructuralError("stick gradient shapes do not match the model")
    topic_word = model.topic_word + rho * grads.d_topic_word
    u = model.u + rho * grads.d_u
    v = model.v + rho * grads.d_v
    if not (np.all(topic_word > 0) and np.all(u > 0) and np.all(v > 0)):
        raise NumericalError("update produced a non-positive variational parameter")
    return dataclasses.replace(
        model,
        topic_word=topic_word,
        u=u,
        v=v,
        update_count=model.update_count + 1,
    )


def fit_document(model: CategoryModel, doc: BowDocument) -> tuple[CategoryModel, float]:
    """One online update from a single document.

    The new instance counts toward the category size before the gradients
    are formed. Returns the updated model and the pre-update bound. The
    input model is never mutated, so failures leave it intact.
    """
    counted = dataclasses.replace(model, doc_count=model.doc_count + 1)
    doc_var, bound = infer_document(counted, doc)
    grads = natural_gradients(counted, doc_var, doc)
    rho = learning_rate(model.hyper, counted.update_count)
    return apply_update(counted, grads, rho), bound


def category_bound(model: CategoryModel, docs: list[BowDocument]) -> float:
    """Sum of per-document bounds, each from a fresh inference run."""
    if not docs:
        raise ParameterError("category_bound requires at least one document")
    return float(sum(infer_document(model, doc)[1] for doc in docs))


def expected_topics(model: CategoryModel) -> np.ndarray:
    """Posterior-mean topics: each row normalized to a distribution over words."""
    return model.topic_word / np.sum(model.topic_word, axis=1)[:, np.newaxis]


def log_likelihood(model: CategoryModel, doc: BowDocument) -> float:
    """Per-word predictive log-likelihood of a held-out document.

    Runs document inference with the category frozen, mixes the expected
    topics by the document's expected topic proportions, and averages the
    per-token log-probabilities.
    """
    ids, counts = _doc_arrays(model, doc)
    doc_var, _ = infer_document(model, doc)
    table_weights = stick_weights(doc_var.a, doc_var.b)  # (T,)
    theta = table_weights @ doc_var.table_topic  # (K,)
    beta = expected_topics(model)
    word_probs = theta @ beta[:, ids]  # (n,)
    value = float(np.sum(counts * np.log(word_probs)) / doc.total_words)
    if not np.isfinite(value):
        raise NumericalError("predictive log-likelihood is not finite")
    return value


def effective_topic_count(model: CategoryModel, mass_threshold: float) -> int:
    """Number of topics whose global stick weight exceeds the threshold."""
    if not 0.0 < mass_threshold < 1.0:
        raise ParameterError(f"mass_threshold must be in (0, 1), got {mass_threshold}")
    weights = stick_weights(model.u, model.v)
    return int(np.sum(weights > mass_threshold))

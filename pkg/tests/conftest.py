"""Shared synthetic data builders for the test suite."""

import numpy as np
import pytest

from localhdp.corpus import BowDocument, LabeledCorpus
from localhdp.hdp import Hyperparams


def make_doc(rng, word_ids, n_words, source_id=""):
    """Document of n_words tokens drawn uniformly from the given word ids."""
    draws = rng.choice(word_ids, size=n_words)
    words, counts = np.unique(draws, return_counts=True)
    return BowDocument(
        counts={int(w): int(c) for w, c in zip(words, counts)},
        total_words=int(n_words),
        source_id=source_id,
    )


def separable_corpus(n_categories, views, words_per_category=5, doc_words=30, seed=0):
    """Categories over disjoint word blocks: perfectly separable by vocabulary."""
    rng = np.random.default_rng(seed)
    vocab = n_categories * words_per_category
    documents = []
    for c in range(n_categories):
        label = f"cat{c:02d}"
        block = np.arange(c * words_per_category, (c + 1) * words_per_category)
        for i in range(views):
            documents.append((make_doc(rng, block, doc_words, f"{label}/{i}"), label))
    return LabeledCorpus(dictionary_size=vocab, documents=documents)


def planted_topic_corpus(
    n_categories=3,
    topics_per_category=3,
    words_per_topic=5,
    views=20,
    doc_words=60,
    vocab=50,
    seed=0,
):
    """Each category mixes its own disjoint planted topics.

    Topic t of category c owns a block of ``words_per_topic`` consecutive
    word ids; a view draws a Dirichlet mixture over its category's topics
    and samples each token from the chosen topic's block.
    """
    assert n_categories * topics_per_category * words_per_topic <= vocab
    rng = np.random.default_rng(seed)
    documents = []
    for c in range(n_categories):
        label = f"cat{c:02d}"
        blocks = []
        for t in range(topics_per_category):
            start = (c * topics_per_category + t) * words_per_topic
            blocks.append(np.arange(start, start + words_per_topic))
        for i in range(views):
            theta = rng.dirichlet(np.ones(topics_per_category))
            topics = rng.choice(topics_per_category, size=doc_words, p=theta)
            tokens = np.array([rng.choice(blocks[t]) for t in topics])
            words, counts = np.unique(tokens, return_counts=True)
            doc = BowDocument(
                counts={int(w): int(cnt) for w, cnt in zip(words, counts)},
                total_words=doc_words,
                source_id=f"{label}/{i}",
            )
            documents.append((doc, label))
    return LabeledCorpus(dictionary_size=vocab, documents=documents)


@pytest.fixture
def small_hyper():
    """Fast truncations for synthetic-data tests."""
    return Hyperparams(max_topics=12, max_tables=6, eta=0.05)

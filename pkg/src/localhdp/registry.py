"""Open-ended category store: teach, ask, and correct over independent models.

Every category owns its own model; teaching one label never touches
another label's parameters. Per-category seeds are derived from the
registry seed and the label with a stable hash, so a label trains to
bit-identical parameters whether it lives alone or among other categories.
"""

from __future__ import annotations

import hashlib
import logging

from . import hdp
from .corpus import BowDocument
from .errors import ConfigurationError, InferenceError, ValidationError
from .hdp import CategoryModel, Hyperparams

logger = logging.getLogger(__name__)


def derive_seed(seed: int, *parts: object) -> int:
    """Stable, platform-independent child seed from a base seed and context."""
    text = ":".join([str(seed), *[str(p) for p in parts]])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Registry:
    """Label-to-model map with incremental training and likelihood scoring."""

    def __init__(self, dictionary_size: int, hyper: Hyperparams, seed: int = 0):
        if dictionary_size < 1:
            raise ValidationError(f"dictionary_size must be >= 1, got {dictionary_size}")
        self.dictionary_size = dictionary_size
        self.hyper = hyper
        self.seed = seed
        self._models: dict[str, CategoryModel] = {}
        self._instances: dict[str, list[BowDocument]] = {}

    def __len__(self) -> int:
        return len(self._models)

    def labels(self) -> list[str]:
        return sorted(self._models)

    def model(self, label: str) -> CategoryModel:
        return self._models[label]

    def instances(self, label: str) -> list[BowDocument]:
        return list(self._instances[label])

    def instance_counts(self) -> dict[str, int]:
        return {label: len(docs) for label, docs in self._instances.items()}

    def _check_doc(self, doc: BowDocument) -> None:
        if doc.total_words < 1:
            raise InferenceError(f"cannot train on empty document {doc.source_id!r}")
        if doc.max_word_id() >= self.dictionary_size:
            raise ValidationError(
                f"word id {doc.max_word_id()} >= V={self.dictionary_size} "
                f"in document {doc.source_id!r}"
            )

    def teach(self, label: str, doc: BowDocument) -> None:
        """Introduce a labeled view: init the label's model if new, then fit.

        Validation happens before any state changes, so a bad document
        leaves the registry untouched.
        """
        if not label:
            raise ValidationError("category labels must be non-empty strings")
        self._check_doc(doc)
        model = self._models.get(label)
        if model is None:
            model = hdp.init_model(
                self.hyper, self.dictionary_size, derive_seed(self.seed, label)
            )
            logger.debug("new category %r", label)
        updated, _ = hdp.fit_document(model, doc)
        self._models[label] = updated
        self._instances.setdefault(label, []).append(doc)

    def correct(self, label: str, doc: BowDocument) -> None:
        """Corrective feedback: update the true category with the missed view."""
        self.teach(label, doc)

    def ask(self, doc: BowDocument) -> tuple[str, dict[str, float]]:
        """Score the document under every category and return the best label.

        Ties break toward the lexicographically smallest label. Pure read:
        no registry state changes.
        """
        if not self._models:
            raise ConfigurationError("no categories taught")
        self._check_doc(doc)
        scores = {
            label: hdp.log_likelihood(model, doc)
            for label, model in self._models.items()
        }
        best = max(sorted(scores), key=scores.__getitem__)
        return best, scores

    def insert_trained(
        self, label: str, model: CategoryModel, instances: list[BowDocument]
    ) -> None:
        """Install an already-trained category (snapshot loading)."""
        if not label:
            raise ValidationError("category labels must be non-empty strings")
        if model.doc_count != len(instances):
            raise ValidationError(
                f"category {label!r}: doc_count {model.doc_count} != "
                f"{len(instances)} stored instances"
            )
        self._models[label] = model
        self._instances[label] = list(instances)

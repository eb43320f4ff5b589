"""Sparse bag-of-words documents, labeled corpora, and their file formats.

Two interchangeable on-disk formats are supported:

* ``bow-text``: one document per line, ``<label> <N> <wordId>:<count> ...``,
  whitespace separated, ``#`` starts a comment. Human-diffable.
* ``bow-binary``: same fields with varint-encoded integers, plus a header
  that records the dictionary size. See ``docs/formats.md``.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .errors import ParameterError, ParseError, ValidationError

logger = logging.getLogger(__name__)

BOW_BINARY_MAGIC = b"LHDB"
BOW_BINARY_VERSION = 1

CorpusFormat = Literal["bow-text", "bow-binary"]


@dataclass(frozen=True)
class BowDocument:
    """One object view as a sparse map of visual-word counts.

    ``counts`` maps word ids to positive counts, ``total_words`` is their
    sum. Empty documents are representable (``total_words == 0``) but are
    rejected by inference.
    """

    counts: dict[int, int]
    total_words: int
    source_id: str = ""

    def __post_init__(self) -> None:
        total = 0
        for word, count in self.counts.items():
            if not isinstance(word, int) or word < 0:
                raise ValidationError(f"word id {word!r} is not a non-negative integer")
            if not isinstance(count, int) or count < 1:
                raise ValidationError(f"count for word {word} must be >= 1, got {count!r}")
            total += count
        if total != self.total_words:
            raise ValidationError(
                f"total_words={self.total_words} does not match sum of counts {total}"
            )

    @classmethod
    def from_counts(cls, counts: dict[int, int], source_id: str = "") -> "BowDocument":
        return cls(counts=dict(counts), total_words=sum(counts.values()), source_id=source_id)

    @property
    def is_empty(self) -> bool:
        return self.total_words == 0

    def max_word_id(self) -> int:
        """Largest word id present, or -1 for an empty document."""
        return max(self.counts) if self.counts else -1

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct word ids (sorted ascending) and their counts."""
        if not self.counts:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        ids = np.array(sorted(self.counts), dtype=np.int64)
        cnts = np.array([self.counts[int(i)] for i in ids], dtype=np.int64)
        return ids, cnts


@dataclass(frozen=True)
class LabeledCorpus:
    """An ordered list of (document, label) pairs over a fixed vocabulary."""

    dictionary_size: int
    documents: list[tuple[BowDocument, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.dictionary_size < 1:
            raise ValidationError(f"dictionary_size must be >= 1, got {self.dictionary_size}")
        for doc, label in self.documents:
            if not label:
                raise ValidationError("category labels must be non-empty strings")
            _check_vocab(doc, self.dictionary_size, label)

    def __len__(self) -> int:
        return len(self.documents)

    def labels(self) -> list[str]:
        """Distinct labels, sorted."""
        return sorted({label for _, label in self.documents})

    def by_label(self) -> dict[str, list[BowDocument]]:
        grouped: dict[str, list[BowDocument]] = {}
        for doc, label in self.documents:
            grouped.setdefault(label, []).append(doc)
        return grouped


def _check_vocab(doc: BowDocument, dictionary_size: int, label: str) -> None:
    worst = doc.max_word_id()
    if worst >= dictionary_size:
        name = doc.source_id or label
        raise ValidationError(
            f"word id {worst} >= V={dictionary_size} in document {name!r}"
        )


def load_corpus(
    path: str | Path,
    fmt: CorpusFormat = "bow-text",
    dictionary_size: int | None = None,
) -> LabeledCorpus:
    """Read a corpus file.

    For ``bow-text`` the vocabulary size is not stored in the file;
    pass ``dictionary_size`` to validate against a known vocabulary, or
    leave it ``None`` to infer ``max word id + 1``. For ``bow-binary`` the
    header value is used and ``dictionary_size``, if given, must agree.
    """
    path = Path(path)
    if fmt == "bow-text":
        return _load_bow_text(path, dictionary_size)
    if fmt == "bow-binary":
        return _load_bow_binary(path, dictionary_size)
    raise ParameterError(f"unknown corpus format {fmt!r}")


def save_corpus(corpus: LabeledCorpus, path: str | Path, fmt: CorpusFormat = "bow-text") -> None:
    """Write a corpus file in the given format (canonical form, ids ascending)."""
    path = Path(path)
    if fmt == "bow-text":
        payload = dumps_bow_text(corpus).encode("utf-8")
    elif fmt == "bow-binary":
        payload = dumps_bow_binary(corpus)
    else:
        raise ParameterError(f"unknown corpus format {fmt!r}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def dumps_bow_text(corpus: LabeledCorpus) -> str:
    lines = []
    for doc, label in corpus.documents:
        pairs = " ".join(f"{w}:{doc.counts[w]}" for w in sorted(doc.counts))
        line = f"{label} {doc.total_words}"
        if pairs:
            line += " " + pairs
        lines.append(line)
    return "".join(line + "\n" for line in lines)


def _parse_bow_line(tokens: list[str], lineno: int, source_id: str) -> tuple[BowDocument, str]:
    if len(tokens) < 2:
        raise ParseError(f"line {lineno}: expected '<label> <N> [id:count ...]'")
    label = tokens[0]
    try:
        declared_total = int(tokens[1])
    except ValueError:
        raise ParseError(f"line {lineno}: word total {tokens[1]!r} is not an integer") from None
    counts: dict[int, int] = {}
    for token in tokens[2:]:
        word_s, sep, count_s = token.partition(":")
        if not sep:
            raise ParseError(f"line {lineno}: malformed pair {token!r}, expected 'id:count'")
        try:
            word, count = int(word_s), int(count_s)
        except ValueError:
            raise ParseError(f"line {lineno}: malformed pair {token!r}") from None
        if word < 0:
            raise ParseError(f"line {lineno}: negative word id {word}")
        if count < 1:
            raise ParseError(f"line {lineno}: count for word {word} must be >= 1")
        if word in counts:
            raise ParseError(f"line {lineno}: duplicate word id {word}")
        counts[word] = count
    total = sum(counts.values())
    if total != declared_total:
        raise ParseError(
            f"line {lineno}: declared total {declared_total} != sum of counts {total}"
        )
    return BowDocument(counts=counts, total_words=total, source_id=source_id), label


def _load_bow_text(path: Path, dictionary_size: int | None) -> LabeledCorpus:
    documents: list[tuple[BowDocument, str]] = []
    stem = path.stem
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            doc, label = _parse_bow_line(line.split(), lineno, f"{stem}:{lineno}")
            if doc.is_empty:
                logger.warning("%s line %d: empty document (%s)", path, lineno, label)
            documents.append((doc, label))
    if dictionary_size is None:
        dictionary_size = max(
            (doc.max_word_id() for doc, _ in documents), default=0
        ) + 1
        dictionary_size = max(dictionary_size, 1)
    return LabeledCorpus(dictionary_size=dictionary_size, documents=documents)


def _write_varint(out: io.BytesIO, value: int) -> None:
    if value < 0:
        raise ValidationError(f"cannot varint-encode negative value {value}")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.write(bytes((byte | 0x80,)))
        else:
            out.write(bytes((byte,)))
            return


def _read_varint(data: bytes, offset: int, lineno: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if offset >= len(data):
            raise ParseError(f"record {lineno}: truncated varint")
        byte = data[offset]
        offset += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, offset
        shift += 7
        if shift > 63:
            raise ParseError(f"record {lineno}: varint too long")


def dumps_bow_binary(corpus: LabeledCorpus) -> bytes:
    out = io.BytesIO()
    out.write(BOW_BINARY_MAGIC)
    out.write(bytes((BOW_BINARY_VERSION,)))
    _write_varint(out, corpus.dictionary_size)
    _write_varint(out, len(corpus.documents))
    for doc, label in corpus.documents:
        encoded = label.encode("utf-8")
        _write_varint(out, len(encoded))
        out.write(encoded)
        _write_varint(out, doc.total_words)
        _write_varint(out, len(doc.counts))
        for word in sorted(doc.counts):
            _write_varint(out, word)
            _write_varint(out, doc.counts[word])
    return out.getvalue()


def _load_bow_binary(path: Path, dictionary_size: int | None) -> LabeledCorpus:
    data = path.read_bytes()
    if data[:4] != BOW_BINARY_MAGIC:
        raise ParseError(f"{path}: not a bow-binary file (bad magic)")
    if len(data) < 5:
        raise ParseError(f"{path}: truncated header")
    version = data[4]
    if version != BOW_BINARY_VERSION:
        raise ParseError(f"{path}: unsupported bow-binary version {version}")
    offset = 5
    file_v, offset = _read_varint(data, offset, 0)
    if dictionary_size is not None and dictionary_size != file_v:
        raise ValidationError(
            f"{path}: file dictionary size {file_v} != expected {dictionary_size}"
        )
    ndocs, offset = _read_varint(data, offset, 0)
    documents: list[tuple[BowDocument, str]] = []
    stem = path.stem
    for index in range(1, ndocs + 1):
        label_len, offset = _read_varint(data, offset, index)
        if offset + label_len > len(data):
            raise ParseError(f"record {index}: truncated label")
        label = data[offset : offset + label_len].decode("utf-8")
        offset += label_len
        declared_total, offset = _read_varint(data, offset, index)
        nentries, offset = _read_varint(data, offset, index)
        counts: dict[int, int] = {}
        for _ in range(nentries):
            word, offset = _read_varint(data, offset, index)
            count, offset = _read_varint(data, offset, index)
            if count < 1:
                raise ParseError(f"record {index}: count for word {word} must be >= 1")
            if word in counts:
                raise ParseError(f"record {index}: duplicate word id {word}")
            counts[word] = count
        total = sum(counts.values())
        if total != declared_total:
            raise ParseError(
                f"record {index}: declared total {declared_total} != sum of counts {total}"
            )
        doc = BowDocument(counts=counts, total_words=total, source_id=f"{stem}:{index}")
        if doc.is_empty:
            logger.warning("%s record %d: empty document (%s)", path, index, label)
        documents.append((doc, label))
    if offset != len(data):
        raise ParseError(f"{path}: {len(data) - offset} trailing bytes after last record")
    return LabeledCorpus(dictionary_size=file_v, documents=documents)


def corpus_from_pairs(
    pairs: Iterable[tuple[BowDocument, str]], dictionary_size: int
) -> LabeledCorpus:
    """Convenience constructor used by encoders and tests."""
    return LabeledCorpus(dictionary_size=dictionary_size, documents=list(pairs))

"""Binary snapshots of a trained registry.

Layout (all integers and floats little-endian, floats raw IEEE-754
binary64 so parameters round-trip exactly; see ``docs/formats.md``):

    magic "LHDP" | u32 format_version | u64 payload_len | u32 payload_crc32
    payload:
      u32 dictionary_size
      hyper block: u32 max_topics, u32 max_tables,
                   f64 gamma_top, alpha0, eta, tau0, kappa
      u64 registry_seed
      u8 has_dictionary [+ dictionary block]
      u32 n_categories, then per category (sorted by label):
        label | u64 update_count | u64 doc_count
        f64 topic_word[K*V] | f64 u[K-1] | f64 v[K-1]
        u64 n_instances, then per instance:
          source_id | u64 total | u32 n_entries | (u32 id, u64 count)*

Strings are u32 length + UTF-8 bytes. Saving is atomic (temp file then
rename); loading verifies the version, the payload length, and the CRC
before touching any field.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path
from typing import TextIO

import numpy as np

from .corpus import BowDocument
from .errors import SnapshotIntegrityError, SnapshotVersionError
from .features import Dictionary, FeatureParams
from .hdp import CategoryModel, Hyperparams
from .registry import Registry

SNAPSHOT_MAGIC = b"LHDP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


def _pack_str(out: io.BytesIO, text: str) -> None:
    data = text.encode("utf-8")
    out.write(struct.pack("<I", len(data)))
    out.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise SnapshotIntegrityError("snapshot payload is truncated")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (length,) = self.unpack("<I")
        return self.take(length).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)

    def done(self) -> bool:
        return self.offset == len(self.data)


def _dump_payload(registry: Registry, dictionary: Dictionary | None) -> bytes:
    out = io.BytesIO()
    hyper = registry.hyper
    out.write(struct.pack("<I", registry.dictionary_size))
    out.write(
        struct.pack(
            "<IIddddd",
            hyper.max_topics,
            hyper.max_tables,
            hyper.gamma_top,
            hyper.alpha0,
            hyper.eta,
            hyper.tau0,
            hyper.kappa,
        )
    )
    out.write(struct.pack("<Q", registry.seed))
    if dictionary is None:
        out.write(struct.pack("<B", 0))
    else:
        out.write(struct.pack("<B", 1))
        p = dictionary.params
        out.write(
            struct.pack(
                "<IIIdd",
                dictionary.size,
                dictionary.descriptor_length,
                p.image_width,
                p.voxel_size,
                p.support_length,
            )
        )
        out.write(dictionary.centroids.astype("<f8").tobytes())
    labels = registry.labels()
    out.write(struct.pack("<I", len(labels)))
    for label in labels:
        model = registry.model(label)
        _pack_str(out, label)
        out.write(struct.pack("<QQ", model.update_count, model.doc_count))
        out.write(model.topic_word.astype("<f8").tobytes())
        out.write(model.u.astype("<f8").tobytes())
        out.write(model.v.astype("<f8").tobytes())
        instances = registry.instances(label)
        out.write(struct.pack("<Q", len(instances)))
        for doc in instances:
            _pack_str(out, doc.source_id)
            out.write(struct.pack("<QI", doc.total_words, len(doc.counts)))
            for word in sorted(doc.counts):
                out.write(struct.pack("<IQ", word, doc.counts[word]))
    return out.getvalue()


def save_snapshot(
    registry: Registry, path: str | Path, dictionary: Dictionary | None = None
) -> None:
    """Write the registry (and optionally the visual dictionary) to disk."""
    path = Path(path)
    payload = _dump_payload(registry, dictionary)
    header = _HEADER.pack(SNAPSHOT_MAGIC, FORMAT_VERSION, len(payload), zlib.crc32(payload))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def load_snapshot(path: str | Path) -> tuple[Registry, Dictionary | None]:
    """Load a snapshot, restoring every parameter and stored instance exactly."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotIntegrityError(f"{path}: shorter than the snapshot header")
    magic, version, payload_len, crc = _HEADER.unpack(data[: _HEADER.size])
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotIntegrityError(f"{path}: not a snapshot file (bad magic)")
    if version != FORMAT_VERSION:
        raise SnapshotVersionError(
            f"{path}: format version {version} is unsupported (expected {FORMAT_VERSION})"
        )
    payload = data[_HEADER.size :]
    if len(payload) != payload_len:
        raise SnapshotIntegrityError(
            f"{path}: payload is {len(payload)} bytes, header declares {payload_len}"
        )
    if zlib.crc32(payload) != crc:
        raise SnapshotIntegrityError(f"{path}: payload checksum mismatch")

    reader = _Reader(payload)
    (dictionary_size,) = reader.unpack("<I")
    max_topics, max_tables, gamma_top, alpha0, eta, tau0, kappa = reader.unpack("<IIddddd")
    hyper = Hyperparams(
        max_topics=max_topics,
        max_tables=max_tables,
        gamma_top=gamma_top,
        alpha0=alpha0,
        eta=eta,
        tau0=tau0,
        kappa=kappa,
    )
    (seed,) = reader.unpack("<Q")
    (has_dictionary,) = reader.unpack("<B")
    dictionary = None
    if has_dictionary:
        v, dlen, iw, vs, sl = reader.unpack("<IIIdd")
        centroids = reader.floats(v * dlen).reshape(v, dlen)
        dictionary = Dictionary(
            centroids=centroids,
            params=FeatureParams(voxel_size=vs, image_width=iw, support_length=sl),
        )

    registry = Registry(dictionary_size=dictionary_size, hyper=hyper, seed=seed)
    (n_categories,) = reader.unpack("<I")
    K = hyper.max_topics
    for _ in range(n_categories):
        label = reader.string()
        update_count, doc_count = reader.unpack("<QQ")
        topic_word = reader.floats(K * dictionary_size).reshape(K, dictionary_size)
        u = reader.floats(K - 1)
        v = reader.floats(K - 1)
        model = CategoryModel(
            topic_word=topic_word,
            u=u,
            v=v,
            update_count=update_count,
            doc_count=doc_count,
            hyper=hyper,
        )
        (n_instances,) = reader.unpack("<Q")
        instances = []
        for _ in range(n_instances):
            source_id = reader.string()
            total, n_entries = reader.unpack("<QI")
            counts = {}
            for _ in range(n_entries):
                word, count = reader.unpack("<IQ")
                counts[int(word)] = int(count)
            instances.append(
                BowDocument(counts=counts, total_words=total, source_id=source_id)
            )
        registry.insert_trained(label, model, instances)
    if not reader.done():
        raise SnapshotIntegrityError(f"{path}: trailing bytes after last category")
    return registry, dictionary


def export_snapshot_text(path: str | Path, out: TextIO) -> None:
    """Lossless textual dump of a snapshot for debugging.

    Floats are printed with ``float.hex`` so every bit is visible.
    """
    registry, dictionary = load_snapshot(path)
    hyper = registry.hyper
    print(f"format_version {FORMAT_VERSION}", file=out)
    print(f"dictionary_size {registry.dictionary_size}", file=out)
    print(f"seed {registry.seed}", file=out)
    for name in ("max_topics", "max_tables"):
        print(f"hyper.{name} {getattr(hyper, name)}", file=out)
    for name in ("gamma_top", "alpha0", "eta", "tau0", "kappa"):
        print(f"hyper.{name} {float(getattr(hyper, name)).hex()}", file=out)
    if dictionary is not None:
        print(f"dictionary {dictionary.size} {dictionary.descriptor_length}", file=out)
        for row in dictionary.centroids:
            print("centroid " + " ".join(x.hex() for x in row), file=out)
    for label in registry.labels():
        model = registry.model(label)
        print(f"category {label!r}", file=out)
        print(f"  update_count {model.update_count}", file=out)
        print(f"  doc_count {model.doc_count}", file=out)
        for k, row in enumerate(model.topic_word):
            print(f"  topic_word[{k}] " + " ".join(x.hex() for x in row), file=out)
        print("  u " + " ".join(x.hex() for x in model.u), file=out)
        print("  v " + " ".join(x.hex() for x in model.v), file=out)
        for doc in registry.instances(label):
            pairs = " ".join(f"{w}:{doc.counts[w]}" for w in sorted(doc.counts))
            print(f"  instance {doc.source_id!r} {doc.total_words} {pairs}", file=out)

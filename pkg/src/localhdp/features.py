"""Point-cloud front-end: voxel keypoints, spin images, and visual words.

The pipeline for one segmented object view is

    cloud -> select_keypoints -> spin_image per keypoint
          -> encode_bow against a k-means Dictionary -> BowDocument

A spin image is a 2D histogram of the neighbors around an oriented
keypoint, indexed by radial distance from the normal axis (columns) and
signed height along the normal (rows), flattened row-major to length
``image_width ** 2``. Support is the Euclidean ball of radius
``support_length``; the keypoint itself (and exact duplicates) never
counts as its own neighbor.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import BowDocument
from .errors import (
    DescriptorError,
    EncodingError,
    ParameterError,
    ParseError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DICTIONARY_MAGIC = b"LHDD"
DICTIONARY_VERSION = 1

NORMAL_NEIGHBORS = 10
KMEANS_MAX_ITERS = 100
KMEANS_REL_TOL = 1e-6


@dataclass(frozen=True)
class PointCloud:
    """Points of one segmented object view, with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValidationError("points must be a non-empty (N, 3) array")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValidationError("normals must match points in shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise ValidationError("normals must have unit length (tolerance 1e-6)")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FeatureParams:
    """Voxel size (m), spin-image width (bins per axis), support length (m)."""

    voxel_size: float = 0.03
    image_width: int = 4
    support_length: float = 0.1

    def __post_init__(self) -> None:
        if self.voxel_size <= 0:
            raise ParameterError(f"voxel_size must be > 0, got {self.voxel_size}")
        if self.image_width < 2:
            raise ParameterError(f"image_width must be >= 2, got {self.image_width}")
        if self.support_length <= 0:
            raise ParameterError(f"support_length must be > 0, got {self.support_length}")


@dataclass(frozen=True)
class SpinImageDescriptor:
    """Flattened spin-image histogram plus the keypoint it describes."""

    values: np.ndarray
    keypoint: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValidationError("descriptor values must be a flat vector")
        if np.any(values < 0):
            raise ValidationError("descriptor bins must be non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "keypoint", np.asarray(self.keypoint, dtype=np.float64))


@dataclass(frozen=True)
class Dictionary:
    """Visual vocabulary: k-means centroids over spin-image descriptors."""

    centroids: np.ndarray
    params: FeatureParams
    sse_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        cents = np.asarray(self.centroids, dtype=np.float64)
        if cents.ndim != 2 or cents.shape[0] < 1:
            raise ValidationError("centroids must be a (V, D) array with V >= 1")
        object.__setattr__(self, "centroids", cents)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def descriptor_length(self) -> int:
        return self.centroids.shape[1]


def select_keypoint_indices(cloud: PointCloud, voxel_size: float) -> np.ndarray:
    """Indices of one representative point per occupied voxel.

    The representative is the point nearest to its voxel center; ties
    break toward the lowest point index. Output is ordered by voxel grid
    coordinate, so it is deterministic for a fixed input.
    """
    if voxel_size <= 0:
        raise ParameterError(f"voxel_size must be > 0, got {voxel_size}")
    pts = cloud.points
    origin = pts.min(axis=0)
    cells = np.floor((pts - origin) / voxel_size).astype(np.int64)
    centers = origin + (cells + 0.5) * voxel_size
    dist2 = np.sum((pts - centers) ** 2, axis=1)

    # sort by (cell, distance, index); the first row of each cell group wins
    order = np.lexsort((np.arange(len(pts)), dist2, cells[:, 2], cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    is_first = np.ones(len(pts), dtype=bool)
    is_first[1:] = np.any(sorted_cells[1:] != sorted_cells[:-1], axis=1)
    return order[is_first]


def select_keypoints(cloud: PointCloud, voxel_size: float) -> np.ndarray:
    """Keypoint coordinates, one per occupied voxel (see indices variant)."""
    return cloud.points[select_keypoint_indices(cloud, voxel_size)]


def estimate_normal(cloud: PointCloud, point: np.ndarray, k: int = NORMAL_NEIGHBORS) -> np.ndarray:
    """Surface normal at ``point`` from PCA over its k nearest neighbors.

    The sign points toward the sensor origin (0, 0, 0). Raises
    ``DescriptorError`` when the neighborhood has no spatial extent.
    """
    pts = cloud.points
    point = np.asarray(point, dtype=np.float64)
    dist2 = np.sum((pts - point) ** 2, axis=1)
    take = min(k, len(pts))
    neighbors = pts[np.argsort(dist2, kind="stable")[:take]]
    centered = neighbors - neighbors.mean(axis=0)
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-18:
        raise DescriptorError("degenerate neighborhood: no spatial extent for a normal")
    normal = eigvecs[:, 0]
    norm = np.linalg.norm(normal)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DescriptorError("degenerate normal (zero vector) at keypoint")
    normal = normal / norm
    if np.dot(normal, point) > 0:
        normal = -normal
    return normal


def spin_image(
    cloud: PointCloud,
    keypoint: np.ndarray,
    params: FeatureParams,
    normal: np.ndarray | None = None,
) -> SpinImageDescriptor:
    """Spin-image histogram of the cloud around one oriented keypoint.

    Neighbors within ``support_length`` of the keypoint are expressed in
    cylindrical coordinates (radial distance from the normal axis, signed
    height along the normal) and hard-binned into an
    ``image_width x image_width`` grid: columns span radius in
    ``[0, support_length]``, rows span height in ``[-support_length,
    support_length]``. Bin totals equal the number of in-support neighbors.
    """
    keypoint = np.asarray(keypoint, dtype=np.float64)
    if keypoint.shape != (3,):
        raise ParameterError("keypoint must be a 3-vector")
    iw = params.image_width
    sl = params.support_length

    offsets = cloud.points - keypoint
    dist = np.linalg.norm(offsets, axis=1)
    in_support = (dist > 0) & (dist <= sl)
    values = np.zeros(iw * iw, dtype=np.float64)
    if not np.any(in_support):
        return SpinImageDescriptor(values=values, keypoint=keypoint)

    if normal is None:
        normal = _lookup_normal(cloud, keypoint)
    if normal is None:
        normal = estimate_normal(cloud, keypoint)
    normal = np.asarray(normal, dtype=np.float64)
    length = np.linalg.norm(normal)
    if not np.isfinite(length) or length < 1e-12:
        raise DescriptorError("degenerate normal (zero vector) at keypoint")
    normal = normal / length

    local = offsets[in_support]
    height = local @ normal
    radial2 = np.sum(local * local, axis=1) - height**2
    radial = np.sqrt(np.clip(radial2, 0.0, None))

    keep = (radial <= sl) & (np.abs(height) <= sl)
    col = np.minimum((radial[keep] / (sl / iw)).astype(np.int64), iw - 1)
    row = np.minimum(((height[keep] + sl) / (2.0 * sl / iw)).astype(np.int64), iw - 1)
    np.add.at(values, row * iw + col, 1.0)
    return SpinImageDescriptor(values=values, keypoint=keypoint)


def _lookup_normal(cloud: PointCloud, keypoint: np.ndarray) -> np.ndarray | None:
    if cloud.normals is None:
        return None
    matches = np.flatnonzero(np.all(cloud.points == keypoint, axis=1))
    if matches.size:
        return cloud.normals[matches[0]]
    return None


def extract_descriptors(cloud: PointCloud, params: FeatureParams) -> list[SpinImageDescriptor]:
    """All spin images for a cloud, one per voxel keypoint.

    Keypoints whose normal cannot be estimated are skipped with a warning,
    preserving keypoint order for the rest.
    """
    indices = select_keypoint_indices(cloud, params.voxel_size)
    descriptors = []
    for idx in indices:
        point = cloud.points[idx]
        normal = cloud.normals[idx] if cloud.normals is not None else None
        try:
            descriptors.append(spin_image(cloud, point, params, normal=normal))
        except DescriptorError as exc:
            logger.warning("skipping keypoint %s: %s", point, exc)
    return descriptors


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, data.shape[1]))
    first = rng.integers(len(data))
    centroids[0] = data[first]
    dist2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = dist2.sum()
        if total <= 0:
            centroids[i] = data[rng.integers(len(data))]
            continue
        pick = np.searchsorted(np.cumsum(dist2), rng.random() * total)
        pick = min(pick, len(data) - 1)
        centroids[i] = data[pick]
        dist2 = np.minimum(dist2, np.sum((data - centroids[i]) ** 2, axis=1))
    return centroids


def _nearest_centroid(data: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # ||x - c||^2 expanded; argmin takes the lowest index on ties
    cross = data @ centroids.T
    d2 = np.sum(data**2, axis=1)[:, np.newaxis] - 2.0 * cross + np.sum(centroids**2, axis=1)
    d2 = np.maximum(d2, 0.0)
    assign = np.argmin(d2, axis=1)
    return assign, d2[np.arange(len(data)), assign]


def build_dictionary(
    descriptors: list[SpinImageDescriptor],
    dictionary_size: int,
    seed: int,
    params: FeatureParams | None = None,
) -> Dictionary:
    """Cluster descriptors into a visual vocabulary with seeded k-means.

    Uses k-means++ seeding, at most 100 Lloyd iterations, and stops when
    the within-cluster SSE improves by less than a relative 1e-6. Empty
    clusters are re-seeded from the point farthest from its centroid. The
    result is deterministic per seed; the SSE history is recorded on the
    returned dictionary and is non-increasing.
    """
    if dictionary_size < 1:
        raise ParameterError(f"dictionary_size must be >= 1, got {dictionary_size}")
    if len(descriptors) < dictionary_size:
        raise ParameterError(
            f"{len(descriptors)} descriptors cannot support a dictionary of "
            f"{dictionary_size} words; use a size <= {len(descriptors)}"
        )
    lengths = {d.values.shape[0] for d in descriptors}
    if len(lengths) != 1:
        raise ValidationError(f"descriptors have mixed lengths {sorted(lengths)}")
    data = np.stack([d.values for d in descriptors])
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, dictionary_size, rng)

    history: list[float] = []
    for _ in range(KMEANS_MAX_ITERS):
        assign, d2 = _nearest_centroid(data, centroids)
        for cluster in range(dictionary_size):
            members = assign == cluster
            if not np.any(members):
                farthest = int(np.argmax(d2))
                centroids[cluster] = data[farthest]
                assign[farthest] = cluster
                d2[farthest] = 0.0
                members = assign == cluster
            centroids[cluster] = data[members].mean(axis=0)
        _, d2 = _nearest_centroid(data, centroids)
        sse = float(d2.sum())
        history.append(sse)
        if len(history) > 1:
            prev = history[-2]
            if abs(prev - sse) <= KMEANS_REL_TOL * max(prev, 1e-12):
                break
    if params is None:
        params = FeatureParams()
    return Dictionary(centroids=centroids, params=params, sse_history=tuple(history))


def encode_bow(
    descriptors: list[SpinImageDescriptor],
    dictionary: Dictionary,
    source_id: str = "",
) -> BowDocument:
    """Assign each descriptor to its nearest centroid and count the words."""
    if not descriptors:
        return BowDocument(counts={}, total_words=0, source_id=source_id)
    data = np.stack([d.values for d in descriptors])
    if data.shape[1] != dictionary.descriptor_length:
        raise EncodingError(
            f"descriptor length {data.shape[1]} != dictionary centroid length "
            f"{dictionary.descriptor_length}"
        )
    assign, _ = _nearest_centroid(data, dictionary.centroids)
    words, counts = np.unique(assign, return_counts=True)
    mapping = {int(w): int(c) for w, c in zip(words, counts)}
    return BowDocument(counts=mapping, total_words=len(descriptors), source_id=source_id)


def load_point_cloud(path: str | Path) -> PointCloud:
    """Read an ASCII PLY file or a plain whitespace ``x y z [nx ny nz]`` file."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return _load_ply(path)
    return _load_xyz(path)


def _load_xyz(path: Path) -> PointCloud:
    rows = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) not in (3, 6):
                raise ParseError(f"{path} line {lineno}: expected 3 or 6 columns")
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise ParseError(f"{path} line {lineno}: non-numeric value") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError(f"{path}: mixed column counts {sorted(widths)}")
    data = np.array(rows, dtype=np.float64)
    if data.shape[1] == 6:
        return PointCloud(points=data[:, :3], normals=_unit_rows(data[:, 3:], path))
    return PointCloud(points=data)


def _unit_rows(vectors: np.ndarray, path: Path) -> np.ndarray:
    lengths = np.linalg.norm(vectors, axis=1)
    if np.any(lengths < 1e-12):
        raise ParseError(f"{path}: zero-length normal")
    return vectors / lengths[:, np.newaxis]


def _load_ply(path: Path) -> PointCloud:
    with path.open("r", encoding="utf-8", errors="replace") as handle:
        magic = handle.readline().strip()
        if magic != "ply":
            raise ParseError(f"{path}: not a PLY file")
        vertex_count = None
        properties: list[str] = []
        in_vertex = False
        fmt_seen = False
        for raw in handle:
            line = raw.strip()
            if not line or line.startswith("comment"):
                continue
            fields = line.split()
            if fields[0] == "format":
                if fields[1] != "ascii":
                    raise ParseError(f"{path}: only ascii PLY is supported")
                fmt_seen = True
            elif fields[0] == "element":
                in_vertex = fields[1] == "vertex"
                if in_vertex:
                    vertex_count = int(fields[2])
            elif fields[0] == "property" and in_vertex:
                properties.append(fields[-1])
            elif fields[0] == "end_header":
                break
        if not fmt_seen or vertex_count is None:
            raise ParseError(f"{path}: malformed PLY header")
        for axis in ("x", "y", "z"):
            if axis not in properties:
                raise ParseError(f"{path}: vertex element lacks property {axis!r}")
        rows = []
        for _ in range(vertex_count):
            line = handle.readline()
            if not line:
                raise ParseError(f"{path}: truncated vertex data")
            values = line.split()
            if len(values) < len(properties):
                raise ParseError(f"{path}: short vertex row")
            rows.append([float(v) for v in values[: len(properties)]])
    data = np.array(rows, dtype=np.float64)
    index = {name: i for i, name in enumerate(properties)}
    points = data[:, [index["x"], index["y"], index["z"]]]
    if all(n in index for n in ("nx", "ny", "nz")):
        normals = data[:, [index["nx"], index["ny"], index["nz"]]]
        return PointCloud(points=points, normals=_unit_rows(normals, path))
    return PointCloud(points=points)


def save_dictionary(dictionary: Dictionary, path: str | Path) -> None:
    """Write a dictionary file (fixed little-endian binary layout)."""
    path = Path(path)
    p = dictionary.params
    header = struct.pack(
        "<4sIIIIdd",
        DICTIONARY_MAGIC,
        DICTIONARY_VERSION,
        dictionary.size,
        dictionary.descriptor_length,
        p.image_width,
        p.voxel_size,
        p.support_length,
    )
    body = dictionary.centroids.astype("<f8").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + body)
    tmp.replace(path)


def load_dictionary(path: str | Path) -> Dictionary:
    path = Path(path)
    data = path.read_bytes()
    header_size = struct.calcsize("<4sIIIIdd")
    if len(data) < header_size:
        raise ParseError(f"{path}: truncated dictionary header")
    magic, version, v, dlen, iw, vs, sl = struct.unpack("<4sIIIIdd", data[:header_size])
    if magic != DICTIONARY_MAGIC:
        raise ParseError(f"{path}: not a dictionary file (bad magic)")
    if version != DICTIONARY_VERSION:
        raise ParseError(f"{path}: unsupported dictionary version {version}")
    expected = header_size + v * dlen * 8
    if len(data) != expected:
        raise ParseError(f"{path}: expected {expected} bytes, found {len(data)}")
    centroids = np.frombuffer(data[header_size:], dtype="<f8").reshape(v, dlen).copy()
    params = FeatureParams(voxel_size=vs, image_width=iw, support_length=sl)
    return Dictionary(centroids=centroids, params=params)

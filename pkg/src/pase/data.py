"""Datasets, loaders, synthetic blobs, re-partitioning and duplicate groups."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, InputError
from .rng import SplitMix64

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels and stable per-sample ids."""

    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    class_count: int

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        if f.ndim != 2:
            raise InputError(f"features must be a 2-D matrix, got shape {f.shape}")
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.asarray(self.ids, dtype=np.uint64)
        n = f.shape[0]
        if labels.shape != (n,) or ids.shape != (n,):
            raise InputError("features, labels and ids must have the same length")
        if self.class_count < 1:
            raise InputError("class_count must be positive")
        if n and (labels.min() < 0 or labels.max() >= self.class_count):
            raise InputError(f"labels must lie in [0, {self.class_count})")
        if len(np.unique(ids)) != n:
            raise InputError("sample ids must be unique")
        for a in (f, labels, ids):
            a.flags.writeable = False
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def take(self, rows) -> "Dataset":
        """Subset by row positions (not ids)."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.ids[rows], self.class_count)

    def select_ids(self, ids) -> "Dataset":
        """Subset by sample id, in the order given."""
        pos = {int(i): p for p, i in enumerate(self.ids)}
        try:
            rows = [pos[int(i)] for i in ids]
        except KeyError as exc:
            raise InputError(f"unknown sample id {exc.args[0]}") from None
        return self.take(rows)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.ids, self.class_count)


@dataclass(frozen=True)
class SplitBundle:
    target_train: Dataset
    target_test: Dataset
    attack_pool: Dataset


@dataclass(frozen=True)
class DuplicateGroups:
    """``group_of[id]`` is shared exactly by samples with bit-identical features."""

    group_of: dict[int, int]

    @property
    def group_count(self) -> int:
        return len(set(self.group_of.values()))

    def groups(self) -> dict[int, list[int]]:
        """Group id -> member ids, members in dataset order."""
        out: dict[int, list[int]] = {}
        for sid, g in self.group_of.items():
            out.setdefault(g, []).append(sid)
        return out


def load_csv(path, has_header: bool = False, label_column: int = -1, class_count: int | None = None) -> Dataset:
    """Read a numeric CSV; one column holds integer labels, the rest are features."""
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [c.strip() for c in row]
                raw_label = values.pop(label_column)
            except IndexError:
                raise FormatError(f"{path}:{lineno}: label column {label_column} out of range") from None
            try:
                lab = float(raw_label)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label {raw_label!r} is not a number") from None
            if not np.isfinite(lab) or lab != int(lab):
                raise FormatError(f"{path}:{lineno}: label {raw_label!r} is not an integer")
            try:
                feats = [float(v) for v in values]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if rows and len(feats) != len(rows[0]):
                raise FormatError(f"{path}:{lineno}: expected {len(rows[0])} features, got {len(feats)}")
            rows.append(feats)
            labels.append(int(lab))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise FormatError(f"{path}: negative class label")
    k = class_count if class_count is not None else int(labels_arr.max()) + 1
    return Dataset(np.asarray(rows), labels_arr, np.arange(len(rows), dtype=np.uint64), k)


def save_csv(data: Dataset, path) -> None:
    """Write features followed by the label column; floats use repr for exact round-trip."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for row, lab in zip(data.features.tolist(), data.labels.tolist()):
            w.writerow([repr(v) for v in row] + [lab])


def _read_idx(path, magic: int, ndims: int):
    blob = Path(path).read_bytes()
    header = 4 + 4 * ndims
    if len(blob) < header:
        raise FormatError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", blob[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    shape = struct.unpack(f">{ndims}I", blob[4:header])
    size = int(np.prod(shape))
    if len(blob) - header != size:
        raise FormatError(f"{path}: expected {size} payload bytes, found {len(blob) - header}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(shape)


def load_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    """MNIST-style IDX pair; pixels scaled by 1/255 and flattened row-major."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if len(labels) and labels.max() >= class_count:
        raise FormatError(f"{labels_path}: label {labels.max()} >= class_count {class_count}")
    return Dataset(feats, labels, np.arange(len(labels), dtype=np.uint64), class_count)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for uint8 arrays (used for fixtures and tests)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def gen_blobs(class_count: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs around standard-normal class centers.

    Rows are grouped by class (class 0 first); ids are 0..n-1.
    """
    if class_count < 1 or per_class < 1 or dim < 1:
        raise ConfigurationError("class_count, per_class and dim must be positive")
    if spread < 0:
        raise ConfigurationError("spread must be non-negative")
    rng = SplitMix64(seed)
    centers = rng.normal(class_count * dim).reshape(class_count, dim)
    noise = rng.normal(class_count * per_class * dim).reshape(class_count, per_class, dim)
    feats = (centers[:, None, :] + spread * noise).reshape(-1, dim)
    labels = np.repeat(np.arange(class_count), per_class)
    return Dataset(feats, labels, np.arange(len(labels), dtype=np.uint64), class_count)


def add_label_noise(data: Dataset, rate: float, seed: int) -> Dataset:
    """Reassign ``round(rate * n)`` randomly chosen labels to a different random class."""
    if not 0 <= rate <= 1:
        raise ConfigurationError("label noise rate must be in [0, 1]")
    if data.class_count < 2 or rate == 0:
        return data
    rng = SplitMix64(seed)
    m = int(round(rate * data.n))
    rows = rng.choice(data.n, m)
    shift = 1 + rng.below(np.full(m, data.class_count - 1))
    labels = data.labels.copy()
    labels[rows] = (labels[rows] + shift) % data.class_count
    return data.with_labels(labels)


def repartition(full: Dataset, target_fraction: float = 0.5, train_fraction: float = 0.5,
                seed: int = 0) -> SplitBundle:
    """Shuffle, carve off the target side, split it into train/test; the rest is the attack pool."""
    for name, v in (("target_fraction", target_fraction), ("train_fraction", train_fraction)):
        if not 0 < v < 1:
            raise ConfigurationError(f"{name} must be in (0, 1), got {v}")
    order = SplitMix64(seed).permutation(full.n)
    n_target = int(round(target_fraction * full.n))
    n_train = int(round(train_fraction * n_target))
    parts = order[:n_train], order[n_train:n_target], order[n_target:]
    if any(len(p) == 0 for p in parts):
        raise ConfigurationError(f"split of {full.n} samples leaves an empty part "
                                 f"(sizes {[len(p) for p in parts]})")
    return SplitBundle(*(full.take(p) for p in parts))


def find_duplicates(data: Dataset) -> DuplicateGroups:
    """Group ids by exact bitwise feature equality; groups numbered by first occurrence."""
    seen: dict[bytes, int] = {}
    group_of = {}
    for sid, row in zip(data.ids.tolist(), data.features):
        key = row.tobytes()
        group_of[sid] = seen.setdefault(key, len(seen))
    return DuplicateGroups(group_of)


def split_manifest(bundle: SplitBundle) -> dict:
    return {part: [int(i) for i in getattr(bundle, part).ids]
            for part in ("target_train", "target_test", "attack_pool")}


def save_split(bundle: SplitBundle, path, **extra) -> None:
    Path(path).write_text(json.dumps(split_manifest(bundle) | extra, indent=1))


def load_split(full: Dataset, path) -> SplitBundle:
    """Rebuild a split from a manifest of id lists over ``full``."""
    try:
        d = json.loads(Path(path).read_text())
        return SplitBundle(full.select_ids(d["target_train"]), full.select_ids(d["target_test"]),
                           full.select_ids(d["attack_pool"]))
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: malformed split manifest ({exc})") from exc

"""Switching ensemble: fold assignment, k leave-one-fold-out models, exact L2 switch index.

A query is answered by the model that never saw the fold holding the query's
nearest training sample, so a training sample is always scored by a model
that was not trained on it.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, DuplicateGroups, find_duplicates
from .errors import ConfigurationError, FormatError, InputError
from .nn import MlpModel, TrainConfig, init_mlp, load_model, save_model, train
from .rng import SplitMix64

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b"F64M"


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: dict[int, int]

    def members(self, j: int) -> np.ndarray:
        return np.asarray(sorted(i for i, f in self.fold_of.items() if f == j), dtype=np.uint64)

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.fold_of.values():
            counts[f] += 1
        return counts


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # cumsum accumulates strictly left to right, so the result is reproducible
    # independent of SIMD/pairwise summation choices
    diff = a - b
    return np.cumsum(diff * diff, axis=1)[:, -1]


class SwitchIndex:
    """Exact nearest-neighbour search under squared L2.

    Candidates come from the cached-norm expansion ``|y|^2 - 2 x.y + |x|^2``;
    everything within its rounding bound of the best is re-scored with the
    direct difference formula, summed left to right, and ties go to the lowest id.
    """

    def __init__(self, features: np.ndarray, ids: np.ndarray, chunk_size: int = 1024):
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InputError("index needs a nonempty 2-D feature matrix")
        self.features = features
        self.ids = np.asarray(ids, dtype=np.uint64)
        if self.ids.shape != (features.shape[0],):
            raise InputError("one id per indexed row required")
        self.sq_norms = np.einsum("ij,ij->i", features, features)
        self._norm_max = float(self.sq_norms.max())
        self.chunk_size = chunk_size

    @classmethod
    def build(cls, data: Dataset) -> "SwitchIndex":
        return cls(data.features, data.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def _check(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise InputError(f"query dimension mismatch: index has {self.dim}, got shape {q.shape}")
        return q

    def search(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest id and exact squared distance for every row of ``queries``."""
        q = self._check(queries)
        out_ids = np.empty(len(q), dtype=np.uint64)
        out_d = np.empty(len(q))
        eps = np.finfo(np.float64).eps
        for s in range(0, len(q), self.chunk_size):
            block = q[s:s + self.chunk_size]
            qn = np.einsum("ij,ij->i", block, block)
            approx = self.sq_norms[None, :] - 2.0 * (block @ self.features.T) + qn[:, None]
            best = approx.min(axis=1)
            slack = 4.0 * (self.dim + 2) * eps * (qn + self._norm_max) + 1e-300
            mask = approx <= (best + slack)[:, None]
            counts = mask.sum(axis=1)
            single = np.flatnonzero(counts == 1)
            if len(single):
                pick = np.argmax(mask[single], axis=1)
                out_ids[s + single] = self.ids[pick]
                out_d[s + single] = _sq_dist(self.features[pick], block[single])
            for r in np.flatnonzero(counts > 1):
                cand = np.flatnonzero(approx[r] <= best[r] + slack[r])
                exact = _sq_dist(self.features[cand], block[r])
                m = exact.min()
                winners = cand[exact == m]
                pick = winners[np.argmin(self.ids[winners])]
                out_ids[s + r] = self.ids[pick]
                out_d[s + r] = m
        return out_ids, out_d


def nearest(index: SwitchIndex, x) -> tuple[int, float]:
    """``(id, squared_distance)`` of the training sample closest to vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("nearest() takes a single vector; use SwitchIndex.search for batches")
    ids, d = index.search(x[None, :])
    return int(ids[0]), float(d[0])


def assign_folds(train: Dataset, k: int, seed: int, dups: DuplicateGroups | None = None) -> FoldAssignment:
    """Shuffle duplicate groups, then give each to the currently smallest fold.

    With all-unique samples this is a plain round-robin deal. With duplicates,
    the least-loaded rule keeps fold sizes within one largest group of each other.
    """
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    if dups is None:
        dups = find_duplicates(train)
    missing = set(int(i) for i in train.ids) - dups.group_of.keys()
    if missing:
        raise InputError(f"duplicate map lacks {len(missing)} training ids")
    groups = dups.groups()
    if k > len(groups):
        raise ConfigurationError(f"k={k} exceeds the number of distinct samples ({len(groups)})")
    order = SplitMix64(seed).shuffle(np.asarray(sorted(groups), dtype=np.int64))
    sizes = [0] * k
    fold_of = {}
    for g in order.tolist():
        j = sizes.index(min(sizes))
        for sid in groups[g]:
            fold_of[sid] = j
        sizes[j] += len(groups[g])
    return FoldAssignment(k, fold_of)


@dataclass
class SwitchEnsemble:
    models: list[MlpModel]
    folds: FoldAssignment
    index: SwitchIndex
    train_ref: Dataset
    trained_ids: list[np.ndarray] = field(default_factory=list)
    train_seconds: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.models) != self.folds.k:
            raise InputError(f"{len(self.models)} models for k={self.folds.k} folds")
        self._fold_by_id = {int(i): self.folds.fold_of[int(i)] for i in self.index.ids}

    @property
    def k(self) -> int:
        return self.folds.k

    def select_batch(self, x) -> np.ndarray:
        ids, _ = self.index.search(x)
        return np.fromiter((self._fold_by_id[int(i)] for i in ids), dtype=np.int64, count=len(ids))

    def predict_proba(self, x) -> np.ndarray:
        """Switched confidence vectors for a batch of queries."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        chosen = self.select_batch(x)
        out = np.empty((len(x), self.models[0].class_count))
        for j in np.unique(chosen):
            rows = chosen == j
            out[rows] = self.models[j].predict_proba(x[rows])
        return out

    __call__ = predict_proba


def _model_dims(data: Dataset, hidden) -> list[int]:
    return [data.dim, *hidden, data.class_count]


def train_pase(train_data: Dataset, folds: FoldAssignment, cfg: TrainConfig,
               hidden=(128,)) -> SwitchEnsemble:
    """Train model j on every fold except j (seed ``cfg.seed + j``) and index all of ``train_data``."""
    ids = [int(i) for i in train_data.ids]
    if set(ids) != folds.fold_of.keys():
        raise InputError("fold assignment does not cover exactly the training ids")
    fold_arr = np.asarray([folds.fold_of[i] for i in ids])
    models, trained_ids, seconds = [], [], []
    for j in range(folds.k):
        subset = train_data.take(np.flatnonzero(fold_arr != j))
        seed_j = cfg.seed + j
        t0 = time.perf_counter()
        model = train(init_mlp(_model_dims(train_data, hidden), seed_j), subset,
                      TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                                  seed_j, cfg.shuffle))
        seconds.append(time.perf_counter() - t0)
        logger.info("PASE model %d/%d trained on %d samples in %.2fs", j + 1, folds.k,
                    subset.n, seconds[-1])
        models.append(model)
        trained_ids.append(np.sort(subset.ids))
    t0 = time.perf_counter()
    index = SwitchIndex.build(train_data)
    seconds.append(time.perf_counter() - t0)
    return SwitchEnsemble(models, folds, index, train_data, trained_ids, seconds)


def select_model(ens: SwitchEnsemble, x) -> int:
    """Index of the model whose excluded fold holds ``x``'s nearest training sample."""
    sid, _ = nearest(ens.index, x)
    return ens.folds.fold_of[sid]


def pase_predict(ens: SwitchEnsemble, x) -> np.ndarray:
    """Confidence vector for one query from the switched-in model."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("pase_predict() takes a single vector")
    return ens.models[select_model(ens, x)].predict_proba(x)[0]


def write_matrix(a: np.ndarray, path) -> None:
    """Little-endian float64 matrix with a ``F64M`` + (rows, cols) uint64 header."""
    a = np.ascontiguousarray(a, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<QQ", *a.shape))
        fh.write(a.tobytes())


def read_matrix(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MATRIX_MAGIC or len(blob) < 20:
        raise FormatError(f"{path}: not a matrix file")
    rows, cols = struct.unpack("<QQ", blob[4:20])
    if len(blob) - 20 != rows * cols * 8:
        raise FormatError(f"{path}: payload size does not match shape {rows}x{cols}")
    return np.frombuffer(blob, dtype="<f8", offset=20).reshape(rows, cols).astype(np.float64)


def save_ensemble(ens: SwitchEnsemble, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for j, m in enumerate(ens.models):
        save_model(m, d / f"model_{j}.json")
    (d / "folds.json").write_text(json.dumps(
        {"k": ens.k, "fold_of": {str(i): f for i, f in ens.folds.fold_of.items()}}))
    write_matrix(ens.train_ref.features, d / "train_features.f64")
    (d / "index.json").write_text(json.dumps({
        "format_version": 1,
        "metric": "squared_l2",
        "features": "train_features.f64",
        "ids": [int(i) for i in ens.train_ref.ids],
        "labels": ens.train_ref.labels.tolist(),
        "class_count": ens.train_ref.class_count,
        "train_seconds": ens.train_seconds,
    }))


def load_ensemble(directory) -> SwitchEnsemble:
    d = Path(directory)
    try:
        meta = json.loads((d / "index.json").read_text())
        fd = json.loads((d / "folds.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{d}: cannot read ensemble manifests ({exc})") from exc
    folds = FoldAssignment(int(fd["k"]), {int(i): int(f) for i, f in fd["fold_of"].items()})
    train_ref = Dataset(read_matrix(d / meta["features"]), meta["labels"], meta["ids"], meta["class_count"])
    models = [load_model(d / f"model_{j}.json") for j in range(folds.k)]
    fold_arr = np.asarray([folds.fold_of[int(i)] for i in train_ref.ids])
    trained = [np.sort(train_ref.ids[fold_arr != j]) for j in range(folds.k)]
    return SwitchEnsemble(models, folds, SwitchIndex.build(train_ref), train_ref, trained,
                          list(meta.get("train_seconds", [])))

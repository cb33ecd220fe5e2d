"""Teacher/student baseline: disjoint-shard teachers vote labels for a student.

Votes are aggregated without noise by default; ``noise_scale > 0`` adds
Laplace noise to the vote counts before the argmax.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, InputError
from .nn import MlpModel, TrainConfig, init_mlp, train
from .rng import SplitMix64, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class TeacherEnsemble:
    teachers: list[MlpModel]
    partition: dict[int, int]
    train_seconds: list[float] = field(default_factory=list)

    def shard_ids(self, t: int) -> np.ndarray:
        return np.asarray(sorted(i for i, s in self.partition.items() if s == t), dtype=np.uint64)

    @property
    def class_count(self) -> int:
        return self.teachers[0].class_count


def train_teachers(train_data: Dataset, n_teachers: int, cfg: TrainConfig, hidden=(128,)) -> TeacherEnsemble:
    """Shuffle with ``cfg.seed``, cut into contiguous near-equal shards, train one teacher each."""
    if n_teachers < 2:
        raise ConfigurationError("need at least two teachers")
    if n_teachers > train_data.n:
        raise ConfigurationError(f"{n_teachers} teachers leave empty shards for {train_data.n} samples")
    order = SplitMix64(derive_seed(cfg.seed, "shards")).permutation(train_data.n)
    shards = np.array_split(order, n_teachers)
    dims = [train_data.dim, *hidden, train_data.class_count]
    teachers, partition, seconds = [], {}, []
    for t, rows in enumerate(shards):
        shard = train_data.take(np.sort(rows))
        t_seed = derive_seed(cfg.seed, "teacher", t)
        t0 = time.perf_counter()
        teachers.append(train(init_mlp(dims, t_seed), shard,
                              TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                                          t_seed, cfg.shuffle)))
        seconds.append(time.perf_counter() - t0)
        partition.update({int(i): t for i in shard.ids})
    logger.info("trained %d teachers on shards of ~%d", n_teachers, len(shards[0]))
    return TeacherEnsemble(teachers, partition, seconds)


def vote_counts(ens: TeacherEnsemble, queries) -> np.ndarray:
    """``(n, classes)`` integer tally of teacher argmax votes."""
    queries = np.asarray(queries, dtype=np.float64)
    counts = np.zeros((len(queries), ens.class_count), dtype=np.int64)
    rows = np.arange(len(queries))
    for t in ens.teachers:
        np.add.at(counts, (rows, t.predict(queries)), 1)
    return counts


def aggregate_labels(ens: TeacherEnsemble, queries, noise_scale: float = 0.0, seed: int = 0) -> np.ndarray:
    """Plurality label per query; lowest class wins ties."""
    if noise_scale < 0:
        raise ConfigurationError("noise_scale must be >= 0")
    counts = vote_counts(ens, queries).astype(np.float64)
    if noise_scale > 0:
        counts += SplitMix64(seed).laplace(counts.size, noise_scale).reshape(counts.shape)
    return np.argmax(counts, axis=1)


def train_student(ens: TeacherEnsemble, student_pool: Dataset, cfg: TrainConfig, noise_scale: float = 0.0,
                  seed: int = 0, hidden=(128,)) -> MlpModel:
    """Train the deployed student on ``student_pool`` features labelled by the teachers."""
    overlap = set(int(i) for i in student_pool.ids) & ens.partition.keys()
    if overlap:
        raise InputError(f"student pool shares {len(overlap)} ids with teacher training data")
    labels = aggregate_labels(ens, student_pool.features, noise_scale, seed)
    relabelled = student_pool.with_labels(labels)
    s_seed = derive_seed(cfg.seed, "student")
    return train(init_mlp([student_pool.dim, *hidden, student_pool.class_count], s_seed), relabelled,
                 TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum, s_seed, cfg.shuffle))


def split_teacher_student(train_data: Dataset, teacher_fraction: float = 0.9, seed: int = 0):
    """Seeded split of the target training data into (teacher part, student pool)."""
    if not 0 < teacher_fraction < 1:
        raise ConfigurationError("teacher_fraction must be in (0, 1)")
    order = SplitMix64(seed).permutation(train_data.n)
    cut = int(round(teacher_fraction * train_data.n))
    if cut == 0 or cut == train_data.n:
        raise ConfigurationError("teacher/student split leaves an empty part")
    return train_data.take(np.sort(order[:cut])), train_data.take(np.sort(order[cut:]))

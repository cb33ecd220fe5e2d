"""Shadow-model membership inference.

Shadow models are trained on attacker-held data to imitate the target. Their
confidence vectors on their own training samples ("in") and on held-out
samples ("out") become labelled records for per-class binary attack models.
The target is only ever touched through a prediction callable mapping an
``(n, d)`` batch to ``(n, classes)`` confidences.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, InputError
from .nn import MlpModel, TrainConfig, init_mlp, model_from_dict, model_to_dict, train
from .rng import SplitMix64, derive_seed

logger = logging.getLogger(__name__)

PredictFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Shadow:
    model: MlpModel
    train_ids: np.ndarray
    out_ids: np.ndarray


@dataclass
class ShadowSet:
    shadows: list[Shadow]
    pool: Dataset

    def __len__(self):
        return len(self.shadows)


class AttackRecord(NamedTuple):
    confidence: np.ndarray
    true_class: int
    membership: int


@dataclass
class AttackRecords:
    """Column-oriented list of :class:`AttackRecord`."""

    confidences: np.ndarray
    true_class: np.ndarray
    membership: np.ndarray

    def __len__(self):
        return len(self.membership)

    def __getitem__(self, i) -> AttackRecord:
        return AttackRecord(self.confidences[i], int(self.true_class[i]), int(self.membership[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def to_dict(self) -> dict:
        return {"confidences": self.confidences.tolist(), "true_class": self.true_class.tolist(),
                "membership": self.membership.tolist()}

    @classmethod
    def from_dict(cls, d) -> "AttackRecords":
        return cls(np.asarray(d["confidences"], dtype=np.float64), np.asarray(d["true_class"], dtype=np.int64),
                   np.asarray(d["membership"], dtype=np.int64))


@dataclass
class AttackModel:
    """One binary in/out classifier per target class (output 1 = member)."""

    models: list[MlpModel]
    stub: list[bool] = field(default_factory=list)

    @property
    def class_count(self) -> int:
        return len(self.models)

    def predict_membership(self, confidences, true_class) -> np.ndarray:
        confidences = np.asarray(confidences, dtype=np.float64)
        true_class = np.asarray(true_class, dtype=np.int64)
        out = np.zeros(len(true_class), dtype=np.int64)
        for c in np.unique(true_class):
            rows = true_class == c
            out[rows] = self.models[c].predict(confidences[rows])
        return out

    def to_dict(self) -> dict:
        return {"models": [model_to_dict(m) for m in self.models], "stub": self.stub}

    @classmethod
    def from_dict(cls, d) -> "AttackModel":
        return cls([model_from_dict(m) for m in d["models"]], list(d.get("stub", [])))


@dataclass
class AttackReport:
    """Balanced membership-attack evaluation; "in" is the positive class."""

    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int
    per_class_accuracy: list[float | None]

    @property
    def confusion(self) -> list[list[int]]:
        """Rows are actual (in, out); columns are predicted (in, out)."""
        return [[self.tp, self.fn], [self.fp, self.tn]]

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion,
                "per_class_accuracy": self.per_class_accuracy}

    @classmethod
    def from_dict(cls, d) -> "AttackReport":
        (tp, fn), (fp, tn) = d["confusion"]
        return cls(d["accuracy"], tp, fp, fn, tn, list(d["per_class_accuracy"]))


def train_shadows(pool: Dataset, n_shadows: int, per_shadow_n: int, cfg: TrainConfig, seed: int,
                  hidden=(128,)) -> ShadowSet:
    """Train ``n_shadows`` models, each on its own random ``per_shadow_n`` pool samples.

    Each shadow also gets ``per_shadow_n`` disjoint held-out samples. Draws are
    independent across shadows, so different shadows may share samples.
    """
    if n_shadows < 1 or per_shadow_n < 1:
        raise ConfigurationError("n_shadows and per_shadow_n must be positive")
    if 2 * per_shadow_n > pool.n:
        raise ConfigurationError(f"attack pool of {pool.n} cannot supply {per_shadow_n} in + "
                                 f"{per_shadow_n} out samples per shadow")
    dims = [pool.dim, *hidden, pool.class_count]
    shadows = []
    for s in range(n_shadows):
        s_seed = derive_seed(seed, "shadow", s)
        rows = SplitMix64(s_seed).choice(pool.n, 2 * per_shadow_n)
        tr, out = pool.take(rows[:per_shadow_n]), pool.take(rows[per_shadow_n:])
        model = train(init_mlp(dims, s_seed), tr,
                      TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                                  derive_seed(s_seed, "sgd"), cfg.shuffle))
        logger.info("shadow %d/%d trained", s + 1, n_shadows)
        shadows.append(Shadow(model, tr.ids.copy(), out.ids.copy()))
    return ShadowSet(shadows, pool)


def build_attack_records(shadows: ShadowSet) -> AttackRecords:
    """Query each shadow on its own in and out samples."""
    confs, classes, member = [], [], []
    for sh in shadows.shadows:
        for ids, flag in ((sh.train_ids, 1), (sh.out_ids, 0)):
            part = shadows.pool.select_ids(ids)
            confs.append(sh.model.predict_proba(part.features))
            classes.append(part.labels)
            member.append(np.full(part.n, flag, dtype=np.int64))
    return AttackRecords(np.concatenate(confs), np.concatenate(classes), np.concatenate(member))


def _constant_model(class_count: int, label: int) -> MlpModel:
    bias = np.zeros(2)
    bias[label] = 1.0
    return MlpModel([class_count, 2], [np.zeros((2, class_count))], [bias])


def train_attack(records: AttackRecords, class_count: int, cfg: TrainConfig, hidden=(64,)) -> AttackModel:
    """Fit one in/out classifier per class on that class's records.

    A class whose records carry a single membership label (or none) gets a
    constant model voting for the majority label, with a warning.
    """
    if len(records) == 0:
        raise InputError("no attack records")
    if records.confidences.shape[1] != class_count:
        raise InputError("confidence width does not match class_count")
    models, stub = [], []
    for c in range(class_count):
        rows = np.flatnonzero(records.true_class == c)
        labels = records.membership[rows]
        if len(rows) == 0 or labels.min() == labels.max():
            majority = int(labels[0]) if len(rows) else 0
            warnings.warn(f"attack class {c}: records carry a single membership label; "
                          f"using a constant '{'in' if majority else 'out'}' model", RuntimeWarning,
                          stacklevel=2)
            models.append(_constant_model(class_count, majority))
            stub.append(True)
            continue
        ds = Dataset(records.confidences[rows], labels, np.arange(len(rows), dtype=np.uint64), 2)
        c_seed = derive_seed(cfg.seed, "attack", c)
        models.append(train(init_mlp([class_count, *hidden, 2], c_seed), ds,
                            TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.momentum,
                                        c_seed, cfg.shuffle)))
        stub.append(False)
    return AttackModel(models, stub)


def _balance(a: Dataset, b: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    m = min(a.n, b.n)
    rng = SplitMix64(seed)
    if a.n > m:
        a = a.take(np.sort(rng.choice(a.n, m)))
    if b.n > m:
        b = b.take(np.sort(rng.choice(b.n, m)))
    return a, b


def attack_accuracy(attack: AttackModel, target_query: PredictFn, member_set: Dataset,
                    nonmember_set: Dataset, seed: int = 0) -> AttackReport:
    """Score the attack against a black-box target on equal-sized member/non-member sets."""
    if member_set.n == 0 or nonmember_set.n == 0:
        raise InputError("member and non-member sets must both be nonempty")
    members, nonmembers = _balance(member_set, nonmember_set, seed)
    pred_in = attack.predict_membership(np.asarray(target_query(members.features)), members.labels)
    pred_out = attack.predict_membership(np.asarray(target_query(nonmembers.features)), nonmembers.labels)
    tp = int(pred_in.sum())
    fn = members.n - tp
    fp = int(pred_out.sum())
    tn = nonmembers.n - fp
    correct = np.concatenate([pred_in == 1, pred_out == 0])
    classes = np.concatenate([members.labels, nonmembers.labels])
    per_class = [float(correct[classes == c].mean()) if np.any(classes == c) else None
                 for c in range(attack.class_count)]
    return AttackReport((tp + tn) / (tp + fp + fn + tn), tp, fp, fn, tn, per_class)


def save_attack(attack: AttackModel, path) -> None:
    Path(path).write_text(json.dumps(attack.to_dict()))


def load_attack(path) -> AttackModel:
    return AttackModel.from_dict(json.loads(Path(path).read_text()))

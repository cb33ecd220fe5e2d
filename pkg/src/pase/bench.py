"""Experiment orchestration: baseline vs switching ensemble vs teacher/student.

A run goes repartition -> baseline -> switching ensemble -> teacher/student
-> shadow attack -> evaluation -> timing. Each stage writes its artifacts
under ``<out_dir>/<name>-<config hash>/`` and is reused on the next run with
the same config. Every random draw is derived from ``ExperimentConfig.seed``.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import gc
import hashlib
import io
import json
import logging
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attack as atk
from . import data as ds
from . import pate
from .errors import ConfigurationError, FormatError, StageError, UsageError
from .nn import MlpModel, TrainConfig, evaluate, init_mlp, load_model, save_model, train
from .rng import derive_seed
from .switch import SwitchEnsemble, assign_folds, load_ensemble, save_ensemble, train_pase

logger = logging.getLogger(__name__)

OUT_ENV = "PASE_OUT"
ROLES = ("baseline", "pase", "pate")
ROLE_TITLES = {"baseline": "Baseline", "pase": "PASE", "pate": "PATE"}


@dataclass
class DatasetSpec:
    source: str = "blobs"
    class_count: int = 10
    per_class: int = 400
    dim: int = 50
    spread: float = 2.0
    label_noise: float = 0.1
    seed: int | None = None
    path: str | None = None
    labels_path: str | None = None
    has_header: bool = False
    label_column: int = -1
    limit: int | None = None

    def validate(self):
        if self.source not in ("blobs", "csv", "idx"):
            raise ConfigurationError(f"unknown dataset source {self.source!r}")
        if self.source == "blobs":
            if min(self.class_count, self.per_class, self.dim) < 1:
                raise ConfigurationError("blobs need positive class_count, per_class and dim")
            if self.spread < 0:
                raise ConfigurationError("spread must be >= 0")
        elif not self.path or (self.source == "idx" and not self.labels_path):
            raise ConfigurationError(f"{self.source} dataset needs path (and labels_path for idx)")
        if not 0 <= self.label_noise <= 1:
            raise ConfigurationError("label_noise must be in [0, 1]")
        if self.limit is not None and self.limit < 1:
            raise ConfigurationError("limit must be positive")


@dataclass
class TrainSettings:
    """Optimizer settings for one model role; seeds are derived per run."""

    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    shuffle: bool = True

    def config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum, seed, self.shuffle)


@dataclass
class ExperimentConfig:
    name: str = "blobs"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    target_fraction: float = 0.5
    train_fraction: float = 0.5
    hidden: list[int] = field(default_factory=lambda: [128])
    train: TrainSettings = field(default_factory=TrainSettings)
    attack_hidden: list[int] = field(default_factory=lambda: [64])
    attack_train: TrainSettings = field(default_factory=lambda: TrainSettings(epochs=50, batch_size=64))
    k: int = 5
    n_teachers: int = 20
    teacher_fraction: float = 0.9
    noise_scale: float = 0.0
    n_shadows: int = 10
    shadow_size: int | None = None
    seed: int = 0
    timing_repetitions: int = 3
    out_dir: str = "runs"

    def validate(self) -> "ExperimentConfig":
        self.dataset.validate()
        for name in ("target_fraction", "train_fraction", "teacher_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be in (0, 1)")
        if any(h < 1 for h in self.hidden + self.attack_hidden):
            raise ConfigurationError("hidden widths must be positive")
        for t in (self.train, self.attack_train):
            t.config(0)
        if self.k < 2:
            raise ConfigurationError("k must be >= 2")
        if self.n_teachers < 2:
            raise ConfigurationError("n_teachers must be >= 2")
        if self.n_shadows < 1:
            raise ConfigurationError("n_shadows must be >= 1")
        if self.noise_scale < 0:
            raise ConfigurationError("noise_scale must be >= 0")
        if self.timing_repetitions < 3:
            raise ConfigurationError("timing_repetitions must be >= 3")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "dataset" in d:
                d["dataset"] = DatasetSpec(**d["dataset"])
            for key in ("train", "attack_train"):
                if key in d:
                    d[key] = TrainSettings(**d[key])
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc

    def fingerprint(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def seed_for(self, *tags) -> int:
        return derive_seed(self.seed, *tags)


@dataclass
class ExperimentReport:
    dataset: str
    architecture: str
    utility: dict[str, float]
    train_accuracy: dict[str, float]
    attack: dict[str, atk.AttackReport]
    train_seconds: dict[str, float]
    train_time_ratio: dict[str, float]
    inference_ms_per_sample: dict[str, float]
    inference_repetitions: dict[str, list[float]]
    config: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["attack"] = {k: v.to_dict() for k, v in self.attack.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        d = dict(d)
        d["attack"] = {k: atk.AttackReport.from_dict(v) for k, v in d["attack"].items()}
        return cls(**d)

    def non_timing(self) -> dict:
        """Fields that must be identical across reruns of the same config."""
        return {"utility": self.utility, "train_accuracy": self.train_accuracy,
                "attack": {k: v.to_dict() for k, v in self.attack.items()}}


def measure_training_ratio(timings: dict[str, float]) -> dict[str, float]:
    """Each role's training wall time divided by the baseline's."""
    base = timings.get("baseline", 0.0)
    if not base > 0:
        raise ConfigurationError("baseline training time must be positive")
    return {role: t / base for role, t in timings.items()}


@contextlib.contextmanager
def _quiet_gc():
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def inference_repetitions(predict_fn, test: ds.Dataset, repetitions: int = 3) -> list[float]:
    """Per-repetition milliseconds per sample, querying one sample at a time."""
    if repetitions < 3:
        raise ConfigurationError("need at least 3 repetitions")
    if test.n == 0:
        raise ConfigurationError("empty test set")
    x = test.features
    rows = [x[i:i + 1] for i in range(len(x))]
    for r in rows[:min(len(rows), 20)]:
        predict_fn(r)
    out = []
    with _quiet_gc():
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for r in rows:
                predict_fn(r)
            out.append((time.perf_counter() - t0) * 1000.0 / len(rows))
    return out


def measure_inference_time(predict_fn, test: ds.Dataset, repetitions: int = 3) -> float:
    """Median over repetitions of wall time per sample, in milliseconds."""
    return statistics.median(inference_repetitions(predict_fn, test, repetitions))


def _timed(fn, *args, **kwargs):
    with _quiet_gc():
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        return result, time.perf_counter() - t0


def _warm_up(dim: int, classes: int):
    # first numpy/BLAS calls carry one-off costs that would inflate the baseline time
    toy = ds.gen_blobs(classes, 8, dim, 1.0, 0)
    train(init_mlp([dim, 8, classes], 0), toy, TrainConfig(epochs=2, batch_size=4))


def load_dataset(spec: DatasetSpec, seed: int) -> ds.Dataset:
    if spec.source == "blobs":
        data = ds.gen_blobs(spec.class_count, spec.per_class, spec.dim, spec.spread, seed)
    elif spec.source == "csv":
        data = ds.load_csv(spec.path, spec.has_header, spec.label_column)
    else:
        data = ds.load_idx(spec.path, spec.labels_path)
    if spec.limit is not None and spec.limit < data.n:
        data = data.take(np.arange(spec.limit))
    if spec.label_noise:
        data = ds.add_label_noise(data, spec.label_noise, derive_seed(seed, "label-noise"))
    return data


class Experiment:
    """Stage-by-stage runner with on-disk caching keyed by the config fingerprint."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None, cache: bool = True):
        self.cfg = cfg.validate()
        root = Path(out_dir or os.environ.get(OUT_ENV) or cfg.out_dir)
        self.workdir = root / f"{cfg.name}-{cfg.fingerprint()}"
        self.cache = cache
        self._mem: dict[str, object] = {}
        self._warmed = False

    @contextlib.contextmanager
    def stage(self, name):
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            logger.error("stage %s failed; artifacts kept in %s", name, self.workdir)
            raise StageError(name, exc) from exc

    def _path(self, name) -> Path:
        self.workdir.mkdir(parents=True, exist_ok=True)
        return self.workdir / name

    def _cached(self, name) -> bool:
        return self.cache and (self.workdir / name).exists()

    def _write_json(self, name, obj):
        self._path(name).write_text(json.dumps(obj, indent=1))

    def _read_json(self, name):
        return json.loads((self.workdir / name).read_text())

    def _memo(self, key, build):
        if key not in self._mem:
            self._mem[key] = build()
        return self._mem[key]

    def _warm(self, data: ds.Dataset):
        if not self._warmed:
            _warm_up(data.dim, data.class_count)
            self._warmed = True

    # -- stages -----------------------------------------------------------

    def data(self) -> tuple[ds.Dataset, ds.SplitBundle]:
        def build():
            with self.stage("data"):
                cfg = self.cfg
                seed = cfg.dataset.seed if cfg.dataset.seed is not None else cfg.seed_for("dataset")
                full = load_dataset(cfg.dataset, seed)
                if self._cached("split.json"):
                    bundle = ds.load_split(full, self.workdir / "split.json")
                else:
                    bundle = ds.repartition(full, cfg.target_fraction, cfg.train_fraction, cfg.seed_for("split"))
                    self._path("config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
                    ds.save_split(bundle, self._path("split.json"), dataset=cfg.dataset.source,
                                  n=full.n, config_hash=cfg.fingerprint())
                return full, bundle
        return self._memo("data", build)

    def baseline(self) -> MlpModel:
        def build():
            _, split = self.data()
            with self.stage("train-baseline"):
                if self._cached("baseline.json"):
                    return load_model(self.workdir / "baseline.json")
                self._warm(split.target_train)
                cfg = self.cfg
                dims = [split.target_train.dim, *cfg.hidden, split.target_train.class_count]
                seed = cfg.seed_for("baseline")
                model, secs = _timed(train, init_mlp(dims, seed), split.target_train, cfg.train.config(seed))
                save_model(model, self._path("baseline.json"))
                self._write_json("baseline.meta.json", {"train_seconds": secs})
                return model
        return self._memo("baseline", build)

    def pase(self) -> SwitchEnsemble:
        def build():
            _, split = self.data()
            with self.stage("train-pase"):
                if self._cached("pase/index.json"):
                    return load_ensemble(self.workdir / "pase")
                self._warm(split.target_train)
                cfg = self.cfg
                folds = assign_folds(split.target_train, cfg.k, cfg.seed_for("folds"))
                with _quiet_gc():
                    ens = train_pase(split.target_train, folds, cfg.train.config(cfg.seed_for("pase")),
                                     cfg.hidden)
                save_ensemble(ens, self._path("pase"))
                return ens
        return self._memo("pase", build)

    def pate(self) -> tuple[pate.TeacherEnsemble, MlpModel, ds.Dataset]:
        """Teachers, student, and the teacher-training split."""
        def build():
            _, split = self.data()
            with self.stage("train-pate"):
                cfg = self.cfg
                teach, pool = pate.split_teacher_student(split.target_train, cfg.teacher_fraction,
                                                         cfg.seed_for("teacher-split"))
                d = self.workdir / "pate"
                if self._cached("pate/student.json"):
                    part = {int(k): v for k, v in json.loads((d / "partition.json").read_text()).items()}
                    teachers = [load_model(d / f"teacher_{t}.json") for t in range(cfg.n_teachers)]
                    meta = json.loads((d / "meta.json").read_text())
                    ens = pate.TeacherEnsemble(teachers, part, meta["teacher_seconds"])
                    return ens, load_model(d / "student.json"), teach
                self._warm(split.target_train)
                with _quiet_gc():
                    ens = pate.train_teachers(teach, cfg.n_teachers, cfg.train.config(cfg.seed_for("teachers")),
                                              cfg.hidden)
                student, secs = _timed(pate.train_student, ens, pool, cfg.train.config(cfg.seed_for("student")),
                                       cfg.noise_scale, cfg.seed_for("vote-noise"), cfg.hidden)
                d.mkdir(parents=True, exist_ok=True)
                for t, m in enumerate(ens.teachers):
                    save_model(m, d / f"teacher_{t}.json")
                save_model(student, d / "student.json")
                (d / "partition.json").write_text(json.dumps({str(k): v for k, v in ens.partition.items()}))
                (d / "meta.json").write_text(json.dumps({"teacher_seconds": ens.train_seconds,
                                                         "student_seconds": secs}))
                return ens, student, teach
        return self._memo("pate", build)

    def attack_model(self) -> atk.AttackModel:
        def build():
            _, split = self.data()
            with self.stage("attack"):
                if self._cached("attack_model.json"):
                    return atk.load_attack(self.workdir / "attack_model.json")
                cfg = self.cfg
                size = cfg.shadow_size or split.target_train.n
                shadows = atk.train_shadows(split.attack_pool, cfg.n_shadows, size,
                                            cfg.train.config(cfg.seed_for("shadow-sgd")),
                                            cfg.seed_for("shadows"), cfg.hidden)
                records = atk.build_attack_records(shadows)
                self._write_json("attack_records.json", records.to_dict())
                model = atk.train_attack(records, split.target_train.class_count,
                                         cfg.attack_train.config(cfg.seed_for("attack")), cfg.attack_hidden)
                atk.save_attack(model, self._path("attack_model.json"))
                return model
        return self._memo("attack_model", build)

    def targets(self) -> dict[str, tuple]:
        """Role -> (prediction callable, member set). Only prediction callables reach the attack."""
        _, split = self.data()
        _, student, teach = self.pate()
        return {
            "baseline": (self.baseline().predict_proba, split.target_train),
            "pase": (self.pase().predict_proba, split.target_train),
            "pate": (student.predict_proba, teach),
        }

    def attack(self) -> dict[str, atk.AttackReport]:
        def build():
            _, split = self.data()
            targets = self.targets()
            model = self.attack_model()
            with self.stage("attack"):
                out = {role: atk.attack_accuracy(model, fn, members, split.target_test,
                                                 self.cfg.seed_for("balance", role))
                       for role, (fn, members) in targets.items()}
                self._write_json("attack.json", {k: v.to_dict() for k, v in out.items()})
                return out
        return self._memo("attack", build)

    def train_seconds(self) -> dict[str, float]:
        self.baseline(), self.pase(), self.pate()
        base = self._read_json("baseline.meta.json")["train_seconds"]
        pase_meta = self._read_json("pase/index.json")
        pate_meta = self._read_json("pate/meta.json")
        return {"baseline": base, "pase": float(sum(pase_meta["train_seconds"])),
                "pate": float(sum(pate_meta["teacher_seconds"]) + pate_meta["student_seconds"])}

    def report(self) -> ExperimentReport:
        started = time.time()
        _, split = self.data()
        attack_reports = self.attack()
        targets = self.targets()
        with self.stage("evaluate"):
            test, tr = split.target_test, split.target_train
            utility, train_acc = {}, {}
            for role, (fn, members) in targets.items():
                utility[role] = float(np.mean(np.argmax(fn(test.features), axis=1) == test.labels))
                train_acc[role] = float(np.mean(np.argmax(fn(members.features), axis=1) == members.labels))
        with self.stage("timing"):
            secs = self.train_seconds()
            ratios = measure_training_ratio(secs)
            reps = {role: inference_repetitions(fn, test, self.cfg.timing_repetitions)
                    for role, (fn, _) in targets.items()}
        arch = "MLP " + "-".join(str(v) for v in [tr.dim, *self.cfg.hidden, tr.class_count])
        report = ExperimentReport(
            dataset=self.cfg.name, architecture=arch, utility=utility, train_accuracy=train_acc,
            attack=attack_reports, train_seconds=secs, train_time_ratio=ratios,
            inference_ms_per_sample={r: statistics.median(v) for r, v in reps.items()},
            inference_repetitions=reps, config=self.cfg.to_dict(),
            metadata={"workdir": str(self.workdir), "config_hash": self.cfg.fingerprint(),
                      "report_seconds": time.time() - started, "python": platform.python_version(),
                      "numpy": np.__version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S")})
        self._write_json("report.json", report.to_dict())
        return report


def run_experiment(cfg: ExperimentConfig, out_dir=None, cache: bool = True) -> ExperimentReport:
    """Run (or resume) every stage and return the assembled report."""
    return Experiment(cfg, out_dir, cache).report()


def load_report(path) -> ExperimentReport:
    try:
        return ExperimentReport.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: cannot read report ({exc})") from exc


def _pct(v: float) -> str:
    return f"{100 * v:.2f}%"


def render_report(report, fmt: str = "markdown") -> str:
    """Render one report (or a list, one dataset row each) as json, markdown or csv."""
    reports = report if isinstance(report, (list, tuple)) else [report]
    if fmt == "json":
        payload = [r.to_dict() for r in reports]
        return json.dumps(payload[0] if not isinstance(report, (list, tuple)) else payload, indent=1)
    if fmt in ("markdown", "md"):
        return _render_markdown(reports)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "model", "metric", "value"])
        for r in reports:
            for role in ROLES:
                w.writerow([r.dataset, role, "utility_accuracy", repr(r.utility[role])])
                w.writerow([r.dataset, role, "attack_accuracy", repr(r.attack[role].accuracy)])
                w.writerow([r.dataset, role, "train_time_ratio", repr(r.train_time_ratio[role])])
                w.writerow([r.dataset, role, "inference_ms_per_sample", repr(r.inference_ms_per_sample[role])])
        return buf.getvalue()
    raise UsageError(f"unknown report format {fmt!r} (expected json, markdown or csv)")


def _table(title: str, columns: list[str], rows: list[list[str]]) -> str:
    head = "| " + " | ".join(columns) + " |"
    sep = "|" + "|".join("---" for _ in columns) + "|"
    body = ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join([f"### {title}", "", head, sep, *body])


def _render_markdown(reports) -> str:
    cols = ["Dataset"] + [ROLE_TITLES[r] for r in ROLES]
    tables = [
        _table("Utility accuracy", cols, [[r.dataset] + [_pct(r.utility[x]) for x in ROLES] for r in reports]),
        _table("Attack accuracy", cols,
               [[r.dataset] + [_pct(r.attack[x].accuracy) for x in ROLES] for r in reports]),
        _table("Training time (ratio over baseline training time)", cols,
               [[r.dataset] + [f"{r.train_time_ratio[x]:.2f}" for x in ROLES[:2]]
                + [f"{r.train_time_ratio['pate']:.2f} ({r.config['n_teachers']} teachers)"] for r in reports]),
        _table("Inference time (millisecond per sample)", ["Dataset", "Architecture"] + cols[1:],
               [[r.dataset, r.architecture] + [f"{r.inference_ms_per_sample[x]:.4f}" for x in ROLES]
                for r in reports]),
    ]
    return "\n\n".join(tables) + "\n"

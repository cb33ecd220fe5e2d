"""Switching-ensemble defense against membership inference, plus the attack and benchmark harness."""

from .attack import (AttackModel, AttackRecords, AttackReport, attack_accuracy, build_attack_records,
                     train_attack, train_shadows)
from .bench import ExperimentConfig, ExperimentReport, render_report, run_experiment
from .data import (Dataset, SplitBundle, add_label_noise, find_duplicates, gen_blobs, load_csv, load_idx,
                   repartition)
from .errors import ConfigurationError, FormatError, InputError, PaseError, StageError, UsageError
from .nn import MlpModel, TrainConfig, evaluate, forward, init_mlp, loss_and_grad, train
from .pate import aggregate_labels, train_student, train_teachers
from .switch import (FoldAssignment, SwitchEnsemble, SwitchIndex, assign_folds, nearest, pase_predict,
                     select_model, train_pase)

__version__ = "0.1.0"

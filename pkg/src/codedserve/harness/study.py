"""Training pipeline and accuracy study on the synthetic blob task."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..datasets import make_blobs_task
from ..model import TrainConfig, init_model, train
from ..parity import (AccuracyReport, build_parity_dataset, evaluate_available, evaluate_default,
                      evaluate_degraded, train_parity_model)

DEPLOYED_HIDDEN = (256, 128)
# same depth, half the widths
BACKUP_HIDDEN = (128, 64)
TASK_FILE = "task.cfg"


@dataclass
class TaskSpec:
    n_train: int = 5000
    n_test: int = 1000
    n_classes: int = 10
    n_features: int = 64
    mean_scale: float = 0.6
    seed: int = 0

    def make(self):
        return make_blobs_task(self.n_train, self.n_test, self.n_classes, self.n_features,
                               self.mean_scale, self.seed)

    def save(self, model_dir):
        text = "".join(f"{k}={v}\n" for k, v in asdict(self).items())
        Path(model_dir, TASK_FILE).write_text(text)

    @classmethod
    def load(cls, model_dir):
        path = Path(model_dir, TASK_FILE)
        if not path.exists():
            return cls()
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in path.read_text().splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                key = key.strip()
                if key in types:
                    values[key] = float(value) if types[key] == "float" else int(value)
        return cls(**values)


def one_hot(y, n_classes):
    return np.eye(n_classes, dtype=np.float32)[y]


def train_classifier(X, y, n_classes, hidden=DEPLOYED_HIDDEN, cfg=None, seed=0):
    cfg = cfg or TrainConfig(seed=seed)
    model = init_model([X.shape[1], *hidden, n_classes], seed=seed)
    return train(model, (X, one_hot(y, n_classes)), cfg)


def train_parity(deployed, X, k, row=0, cfg=None, repeats=4, encoder="sum", seed=0):
    dataset = build_parity_dataset(X, deployed, k, encoder, row, seed=seed, repeats=repeats)
    cfg = cfg or TrainConfig(seed=seed)
    return train_parity_model(dataset, cfg=cfg, deployed=deployed)


@dataclass
class StudyRow:
    k: int
    a_available: float
    a_degraded: float
    a_overall: float
    default_degraded: float
    default_overall: float


def accuracy_study(task=None, ks=(2, 3, 4), epochs=10, repeats=4, f_u=0.1, parity_models=None,
                   deployed=None):
    """Train (or reuse) deployed and parity models and tabulate A_a, A_d and A_o per k."""
    task = task or TaskSpec()
    X_train, y_train, X_test, y_test = task.make()
    seed = task.seed
    if deployed is None:
        deployed = train_classifier(X_train, y_train, task.n_classes, cfg=TrainConfig(epochs=epochs, seed=seed),
                                    seed=seed)
    parity_models = dict(parity_models or {})
    a_a = evaluate_available(deployed, X_test, y_test)
    a_default = evaluate_default(y_test, task.n_classes)
    rows = []
    for k in ks:
        if k not in parity_models:
            parity_models[k] = train_parity(deployed, X_train, k, cfg=TrainConfig(epochs=epochs, seed=seed + k),
                                            repeats=repeats, seed=seed + k)
        a_d = evaluate_degraded(deployed, parity_models[k], (X_test, y_test), k, seed=seed + 100 + k)
        ours = AccuracyReport.from_rates(a_a, a_d, f_u)
        base = AccuracyReport.from_rates(a_a, a_default, f_u)
        rows.append(StudyRow(k, a_a, a_d, ours.a_overall, a_default, base.a_overall))
    return rows, deployed, parity_models


def format_study(rows, f_u):
    lines = [f"{'k':>3} {'A_a':>8} {'A_d':>8} {'A_o@' + format(f_u, 'g'):>10} {'default A_d':>12} {'default A_o':>12}"]
    for r in rows:
        lines.append(f"{r.k:>3} {r.a_available:>8.4f} {r.a_degraded:>8.4f} {r.a_overall:>10.4f} "
                     f"{r.default_degraded:>12.4f} {r.default_overall:>12.4f}")
    return "\n".join(lines)

import json
from pathlib import Path

import pytest

from codedserve.harness.study import BACKUP_HIDDEN, DEPLOYED_HIDDEN, TaskSpec, accuracy_study, format_study

BASELINE = json.loads((Path(__file__).parent / "accuracy_baseline.json").read_text())


def test_task_spec_round_trip(tmp_path):
    task = TaskSpec(n_train=100, mean_scale=0.7, seed=3)
    task.save(tmp_path)
    assert TaskSpec.load(tmp_path) == task
    assert TaskSpec.load(tmp_path / "missing") == TaskSpec()


def test_backup_is_half_width():
    assert len(BACKUP_HIDDEN) == len(DEPLOYED_HIDDEN)
    assert all(2 * b == d for b, d in zip(BACKUP_HIDDEN, DEPLOYED_HIDDEN))
    assert list(DEPLOYED_HIDDEN) == BASELINE["deployed_hidden"]


@pytest.mark.slow
def test_study_reproduces_frozen_baseline():
    rows, _, _ = accuracy_study(TaskSpec(**BASELINE["task"]), ks=(2, 3, 4), epochs=BASELINE["epochs"],
                                repeats=BASELINE["repeats"])
    tol = BASELINE["regression_tolerance"]
    observed = BASELINE["observed"]
    for row in rows:
        assert row.a_available == pytest.approx(observed["a_available"], abs=tol)
        assert row.a_degraded == pytest.approx(observed["a_degraded"][str(row.k)], abs=tol)
        assert row.default_degraded == pytest.approx(observed["default"], abs=tol)
    k2 = rows[0]
    assert k2.a_available - k2.a_degraded <= BASELINE["thresholds"]["k2_within_points_of_available"]
    table = format_study(rows, 0.1)
    assert table.count("\n") == 3

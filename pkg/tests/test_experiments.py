"""End-to-end drift experiment: online adaptation should pay off after the mixing change."""
import pytest

from tot.evaluation.experiments import drift_run


@pytest.mark.parametrize("seed", [0, 1])
def test_online_adaptation_beats_frozen_model_after_drift(seed):
    frozen = drift_run(seed, k_steps=0)
    adapted = drift_run(seed, k_steps=1)
    assert frozen["rows"] == adapted["rows"]
    assert adapted["post_drift_mse"] < frozen["post_drift_mse"]

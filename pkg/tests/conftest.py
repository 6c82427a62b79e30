"""Shared fixtures.

The full-scale dataset and the flagship experiment are session-scoped: the
acceptance criteria all read the same 5-trial run, so it is computed once.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from gossipcf.engine import SimConfig
from gossipcf.harness import load_ratings, run_experiment
from gossipcf.recommend import RatingMatrix
from gossipcf.synth import generate_ratings

ACCEPTANCE_SEED = 1009


def _dataset_path() -> Path | None:
    """The real ratings file, when one is available."""
    env = os.environ.get("GOSSIPCF_DATA")
    if env and Path(env).exists():
        return Path(env)
    local = Path(__file__).resolve().parent.parent / "data" / "u.data"
    if local.exists():
        return local
    return None


@pytest.fixture(scope="session")
def full_scale_ratings() -> RatingMatrix:
    """943-user ratings: the real file when present, else the synthetic twin."""
    path = _dataset_path()
    if path is not None:
        return load_ratings(path)
    return RatingMatrix(generate_ratings())


@pytest.fixture(scope="session")
def small_ratings() -> RatingMatrix:
    """80-user dataset for fast integration tests."""
    return RatingMatrix(
        generate_ratings(n_users=80, n_items=300, target_ratings=4000, seed=5)
    )


@pytest.fixture(scope="session")
def tiny_ratings() -> RatingMatrix:
    """Hand-sized matrix for unit tests."""
    return RatingMatrix(
        {
            1: {10: 5, 11: 3, 12: 4},
            2: {10: 4, 12: 2, 13: 5},
            3: {11: 2, 13: 4, 14: 1},
            4: {10: 5, 14: 3, 15: 4},
            5: {12: 3, 15: 5, 16: 2},
        }
    )


@pytest.fixture(scope="session")
def flagship(full_scale_ratings) -> "gossipcf.harness.ExperimentResult":
    """The churn-free evaluated-setup experiment: k=20, 100 cycles, 5 trials."""
    config = SimConfig(
        n_peers=full_scale_ratings.n_users,
        cache_size=20,
        cycles=100,
        seed=ACCEPTANCE_SEED,
    )
    return run_experiment(config, full_scale_ratings, trials=5)

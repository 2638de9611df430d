"""
tests/conftest.py
=================
Shared pytest fixtures for the attractor platform test suite.

The session fixtures build one small attractor catalog and a basin model
trained on labeled free trajectories (every point of an uncontrolled
trajectory lies in the basin of its initial state), so environment,
trainer and evaluation tests run in seconds.
"""
import sys
import os

# Ensure the project root is on the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from attractor_platform import boa_classifier, oracle
from attractor_platform.dynamics import integrate_arrays
from attractor_platform.environment import build_env
from attractor_platform.types import (
    GRID_PHI_RANGE, GRID_V_RANGE, GRID_X_RANGE,
    AttractorLabel, BoaDataset, DuffingParams, EpisodeConfig, IntegratorConfig,
)


@pytest.fixture(scope="session")
def params():
    return DuffingParams()


@pytest.fixture(scope="session")
def integrator():
    return IntegratorConfig()


@pytest.fixture(scope="session")
def catalog(params, integrator):
    return oracle.build_catalog(params, integrator, sample_count=100, seed=0)


@pytest.fixture(scope="session")
def trajectory_dataset(catalog, params, integrator):
    rng = np.random.default_rng(7)
    starts = np.column_stack([
        rng.uniform(*GRID_X_RANGE, size=20),
        rng.uniform(*GRID_V_RANGE, size=20),
        rng.uniform(*GRID_PHI_RANGE, size=20),
    ])
    starts = np.vstack([np.zeros((1, 3)), starts])
    codes, _ = oracle.label_batch(starts, catalog, integrator, params)
    keep = codes >= 0
    starts, codes = starts[keep], codes[keep]

    x, v, phi = starts[:, 0].copy(), starts[:, 1].copy(), starts[:, 2].copy()
    points, labels = [starts.copy()], [codes]
    for _ in range(40):
        x, v, phi = integrate_arrays(x, v, phi, 0.0, 100, integrator.dt_inner, params)
        points.append(np.column_stack([x, v, phi]))
        labels.append(codes)
    for lab in AttractorLabel:
        orbit = catalog.orbits[lab][:-1:10]
        points.append(orbit)
        labels.append(np.full(len(orbit), 1 if lab is AttractorLabel.LA else 0))
    states = np.vstack(points)
    codes = np.concatenate(labels)
    return BoaDataset(states=states, labels=[AttractorLabel.LA if c == 1 else AttractorLabel.SA for c in codes])


@pytest.fixture(scope="session")
def basin_model(trajectory_dataset):
    return boa_classifier.train(trajectory_dataset, C=10.0, gamma_k=1.0, seed=0)


@pytest.fixture(scope="session")
def env(catalog, basin_model, params, integrator):
    return build_env(catalog, basin_model, params, integrator, EpisodeConfig())

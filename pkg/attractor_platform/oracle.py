"""
attractor_platform/oracle.py
============================
Ground-truth attractor identification by long uncontrolled integration.

A state is settled for ``settle_periods`` forcing periods (100 by default,
against a transient time constant of 2/δ = 20 time units), after which its
steady-state amplitude max|x| is measured over the last ``measure_periods``
periods. ``build_catalog`` settles random initial conditions drawn from the
grid domain, splits the sorted amplitudes at their largest gaps and keeps
exactly two clusters: SA (small amplitude) and LA (large amplitude).
"""
from __future__ import annotations
import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from .dynamics import integrate_arrays, integrate_path, rk4_arrays, _check_finite
from .errors import AmbiguousLabelError, ClusterCountError
from .types import (
    GRID_PHI_RANGE, GRID_V_RANGE, GRID_X_RANGE,
    AttractorCatalog, AttractorLabel, DuffingParams, IntegratorConfig, SimState,
)

logger = logging.getLogger(__name__)

DEFAULT_SETTLE_PERIODS = 100
DEFAULT_MEASURE_PERIODS = 5
DEFAULT_AMBIGUITY_BAND = 0.05

# label codes used by the batch API
CODE_SA = 0
CODE_LA = 1
CODE_AMBIGUOUS = -1


def default_settle_time(params: DuffingParams, settle_periods: int = DEFAULT_SETTLE_PERIODS) -> float:
    return settle_periods * params.forcing_period


# ─── Settling ─────────────────────────────────────────────────────────────────

def settle_batch(
    states: np.ndarray,
    settle_time: float,
    measure_periods: int,
    cfg: IntegratorConfig,
    params: DuffingParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Settle every row of ``states`` (n, 3) without control.

    Returns (amplitudes, final_states): max|x| over the trailing
    ``measure_periods`` forcing periods and the (n, 3) end states.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    dt = cfg.dt_inner
    n_total = int(math.ceil(settle_time / dt - 1e-9))
    n_measure = min(n_total, int(math.ceil(measure_periods * params.forcing_period / dt - 1e-9)))
    x, v, phi = states[:, 0].copy(), states[:, 1].copy(), states[:, 2].copy()

    x, v, phi = integrate_arrays(x, v, phi, 0.0, n_total - n_measure, dt, params)
    amp = np.abs(x)
    for _ in range(n_measure):
        x, v, phi = rk4_arrays(x, v, phi, 0.0, dt, params)
        np.maximum(amp, np.abs(x), out=amp)
    _check_finite(x, v, phi)
    return amp, np.column_stack([x, v, phi])


def settle(
    initial: SimState,
    cfg: IntegratorConfig,
    params: DuffingParams,
    settle_time: Optional[float] = None,
    measure_periods: int = DEFAULT_MEASURE_PERIODS,
) -> np.ndarray:
    """
    Settle one state and return the trailing steady-state segment as (k, 3)
    rows of x, v, phi sampled every ``dt_inner`` over the last
    ``measure_periods`` forcing periods. Its amplitude is ``np.abs(seg[:, 0]).max()``.
    """
    settle_time = default_settle_time(params) if settle_time is None else settle_time
    if settle_time < default_settle_time(params) * (1.0 - 1e-9):
        raise ValueError(
            f"settle_time {settle_time:.3f} is shorter than {DEFAULT_SETTLE_PERIODS} forcing periods"
        )
    dt = cfg.dt_inner
    n_total = int(math.ceil(settle_time / dt - 1e-9))
    n_measure = min(n_total, int(math.ceil(measure_periods * params.forcing_period / dt - 1e-9)))
    x, v, phi = integrate_arrays(
        np.array([initial.x]), np.array([initial.v]), np.array([initial.phi]),
        0.0, n_total - n_measure, dt, params,
    )
    return integrate_path(x, v, phi, 0.0, n_measure, dt, params)


def segment_amplitude(segment: np.ndarray) -> float:
    return float(np.max(np.abs(segment[:, 0])))


# ─── Clustering ───────────────────────────────────────────────────────────────

def split_amplitude_clusters(
    amplitudes: np.ndarray,
    gap_fraction: float = 0.05,
    min_cluster_fraction: float = 0.01,
) -> List[np.ndarray]:
    """
    1-D gap scan: sort the amplitudes and split wherever two neighbours differ
    by more than ``gap_fraction`` of the largest amplitude. Clusters holding
    fewer than ``min_cluster_fraction`` of the samples are treated as
    unsettled outliers and dropped. Returns index arrays sorted by amplitude.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    order = np.argsort(amplitudes, kind="stable")
    ordered = amplitudes[order]
    tol = max(gap_fraction * float(ordered[-1]), 1e-9)
    cuts = np.flatnonzero(np.diff(ordered) > tol) + 1
    groups = np.split(order, cuts)
    min_size = max(1, int(math.ceil(min_cluster_fraction * len(amplitudes))))
    kept = []
    for g in groups:
        if len(g) < min_size:
            logger.warning(
                "dropping %d outlier amplitude(s) near %.4f (below %d-sample cluster floor)",
                len(g), float(np.median(amplitudes[g])), min_size,
            )
            continue
        kept.append(g)
    return kept


def build_catalog(
    params: DuffingParams,
    cfg: IntegratorConfig,
    sample_count: int = 1000,
    seed: int = 0,
    settle_periods: int = DEFAULT_SETTLE_PERIODS,
    measure_periods: int = DEFAULT_MEASURE_PERIODS,
    min_cluster_fraction: float = 0.01,
    rng: Optional[np.random.Generator] = None,
) -> AttractorCatalog:
    """Discover the SA/LA attractor pair from random settled initial conditions."""
    if sample_count < 100:
        raise ValueError(f"sample_count must be >= 100, got {sample_count}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    initial = np.column_stack([
        rng.uniform(*GRID_X_RANGE, size=sample_count),
        rng.uniform(*GRID_V_RANGE, size=sample_count),
        rng.uniform(*GRID_PHI_RANGE, size=sample_count),
    ])
    settle_time = default_settle_time(params, settle_periods)
    amps, finals = settle_batch(initial, settle_time, measure_periods, cfg, params)

    clusters = split_amplitude_clusters(amps, min_cluster_fraction=min_cluster_fraction)
    if len(clusters) != 2:
        centres = [float(np.median(amps[c])) for c in clusters]
        raise ClusterCountError(
            f"expected 2 attractor amplitude clusters at omega={params.omega}, found {len(clusters)} "
            f"(centres {[round(c, 4) for c in centres]}); check the parameters or lengthen the settle time",
            clusters=len(clusters), amplitudes=centres,
        )

    low, high = clusters
    threshold = 0.5 * (float(np.max(amps[low])) + float(np.min(amps[high])))
    amplitudes = {}
    orbits = {}
    for label, members in ((AttractorLabel.SA, low), (AttractorLabel.LA, high)):
        centre = float(np.median(amps[members]))
        rep = members[int(np.argmin(np.abs(amps[members] - centre)))]
        amplitudes[label] = float(amps[rep])
        orbits[label] = reference_orbit(finals[rep], cfg, params)
        logger.info("attractor %s: amplitude %.4f from %d of %d samples",
                    label.value, amplitudes[label], len(members), sample_count)

    return AttractorCatalog(
        params=params,
        amplitudes=amplitudes,
        orbits=orbits,
        amplitude_threshold=threshold,
        settle_periods=settle_periods,
        measure_periods=measure_periods,
    )


def reference_orbit(start: np.ndarray, cfg: IntegratorConfig, params: DuffingParams) -> np.ndarray:
    """One forcing period from a settled state, m = ⌈period/dt_inner⌉ equal steps."""
    period = params.forcing_period
    m = int(math.ceil(period / cfg.dt_inner))
    path = integrate_path(
        np.array([start[0]]), np.array([start[1]]), np.array([start[2]]), 0.0, m, period / m, params,
    )
    closure = float(np.hypot(path[-1, 0] - path[0, 0], path[-1, 1] - path[0, 1]))
    if closure > 1e-3:
        logger.warning("reference orbit closes only to %.2e after one period", closure)
    return path


# ─── Labeling ─────────────────────────────────────────────────────────────────

def label_batch(
    states: np.ndarray,
    catalog: AttractorCatalog,
    cfg: IntegratorConfig,
    params: DuffingParams,
    settle_time: Optional[float] = None,
    ambiguity_band: float = DEFAULT_AMBIGUITY_BAND,
) -> Tuple[np.ndarray, np.ndarray]:
    """Label rows of ``states``; returns (codes, amplitudes) with codes in {SA=0, LA=1, ambiguous=-1}."""
    settle_time = default_settle_time(params, catalog.settle_periods) if settle_time is None else settle_time
    amps, _ = settle_batch(states, settle_time, catalog.measure_periods, cfg, params)
    thr = catalog.amplitude_threshold
    codes = np.where(amps > thr, CODE_LA, CODE_SA)
    codes[np.abs(amps - thr) < ambiguity_band * thr] = CODE_AMBIGUOUS
    return codes, amps


def label(
    initial: SimState,
    catalog: AttractorCatalog,
    cfg: IntegratorConfig,
    params: DuffingParams,
    settle_time: Optional[float] = None,
    ambiguity_band: float = DEFAULT_AMBIGUITY_BAND,
) -> AttractorLabel:
    """Settle ``initial`` and threshold its amplitude against the catalog."""
    codes, amps = label_batch(initial.as_array()[None, :], catalog, cfg, params, settle_time, ambiguity_band)
    if codes[0] == CODE_AMBIGUOUS:
        raise AmbiguousLabelError(
            f"amplitude {amps[0]:.4f} lies within {ambiguity_band:.0%} of threshold "
            f"{catalog.amplitude_threshold:.4f}; settle longer",
            amplitude=float(amps[0]), threshold=catalog.amplitude_threshold,
        )
    return catalog.label_for_amplitude(float(amps[0]))

"""
attractor_platform/types.py
===========================
Python dataclasses for the value types shared across the platform:
oscillator parameters and states, attractor labels and catalogs, labeled
basin datasets, replay transitions and evaluation reports.
"""
from __future__ import annotations
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi

# ─── Oscillator ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class DuffingParams:
    """x'' + δx' + αx + βx³ = Γcos(φ + φ₀) + a, with φ = ωt mod 2π."""
    delta: float = 0.1
    alpha: float = 1.0
    beta: float = 0.04
    gamma_f: float = 1.0
    omega: float = 1.4
    phi0: float = 0.0

    def __post_init__(self) -> None:
        values = (self.delta, self.alpha, self.beta, self.gamma_f, self.omega, self.phi0)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"DuffingParams must be finite: {self}")
        if self.omega <= 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")

    @property
    def forcing_period(self) -> float:
        return TWO_PI / self.omega


@dataclass(frozen=True)
class SimState:
    x: float
    v: float
    phi: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.v) and math.isfinite(self.phi)):
            raise ValueError(f"SimState must be finite: {self}")
        if not 0.0 <= self.phi < TWO_PI:
            raise ValueError(f"phi must lie in [0, 2π), got {self.phi}")

    @classmethod
    def wrapped(cls, x: float, v: float, phi: float) -> "SimState":
        """Build a state, folding any finite phase into [0, 2π)."""
        p = math.fmod(phi, TWO_PI)
        if p < 0:
            p += TWO_PI
        if p >= TWO_PI:
            p = 0.0
        return cls(float(x), float(v), float(p))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.v, self.phi], dtype=np.float64)


@dataclass(frozen=True)
class IntegratorConfig:
    dt_inner: float = 0.01
    dt_control: float = 0.25

    def __post_init__(self) -> None:
        if self.dt_inner <= 0 or self.dt_control <= 0:
            raise ValueError("integration steps must be > 0")
        ratio = self.dt_control / self.dt_inner
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"dt_control ({self.dt_control}) must be an integer multiple of dt_inner ({self.dt_inner})"
            )

    @property
    def inner_steps(self) -> int:
        return int(round(self.dt_control / self.dt_inner))


# ─── Attractors ───────────────────────────────────────────────────────────────


class AttractorLabel(str, Enum):
    SA = "SA"   # small-amplitude periodic solution
    LA = "LA"   # large-amplitude periodic solution

    @property
    def sign(self) -> int:
        """Classifier encoding: LA → +1, SA → −1."""
        return 1 if self is AttractorLabel.LA else -1


DirectionName = Literal["sa2la", "la2sa"]

_DIRECTIONS: Dict[str, Tuple[AttractorLabel, AttractorLabel]] = {
    "sa2la": (AttractorLabel.SA, AttractorLabel.LA),
    "la2sa": (AttractorLabel.LA, AttractorLabel.SA),
}


def direction_labels(direction: str) -> Tuple[AttractorLabel, AttractorLabel]:
    """Return (source, target) for a switching direction name."""
    try:
        return _DIRECTIONS[direction]
    except KeyError:
        raise ValueError(f"unknown direction {direction!r}; expected one of {sorted(_DIRECTIONS)}") from None


DIRECTIONS: Tuple[str, ...] = tuple(_DIRECTIONS)


@dataclass
class AttractorCatalog:
    params: DuffingParams
    amplitudes: Dict[AttractorLabel, float]
    orbits: Dict[AttractorLabel, np.ndarray]   # (m + 1, 3) rows of x, v, phi over one period
    amplitude_threshold: float
    settle_periods: int = 100
    measure_periods: int = 5

    def label_for_amplitude(self, amplitude: float) -> AttractorLabel:
        return AttractorLabel.LA if amplitude > self.amplitude_threshold else AttractorLabel.SA

    def orbit_state(self, label: AttractorLabel, index: int = 0) -> SimState:
        row = self.orbits[label][index]
        return SimState.wrapped(row[0], row[1], row[2])


# ─── Basin dataset ────────────────────────────────────────────────────────────

GRID_X_RANGE: Tuple[float, float] = (-10.0, 10.0)
GRID_V_RANGE: Tuple[float, float] = (-15.0, 15.0)
GRID_PHI_RANGE: Tuple[float, float] = (0.0, TWO_PI)


@dataclass
class BoaDataset:
    states: np.ndarray          # (n, 3) float64 rows of x, v, phi
    labels: List[AttractorLabel]
    x_range: Tuple[float, float] = GRID_X_RANGE
    v_range: Tuple[float, float] = GRID_V_RANGE
    phi_range: Tuple[float, float] = GRID_PHI_RANGE
    resolution: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.states) != len(self.labels):
            raise ValueError(f"{len(self.states)} states but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def label_signs(self) -> np.ndarray:
        return np.array([lab.sign for lab in self.labels], dtype=np.float64)

    def label_fractions(self) -> Dict[AttractorLabel, float]:
        n = max(len(self.labels), 1)
        return {lab: sum(1 for l in self.labels if l is lab) / n for lab in AttractorLabel}

    def subset(self, idx: np.ndarray) -> "BoaDataset":
        return BoaDataset(
            states=self.states[idx],
            labels=[self.labels[i] for i in idx],
            x_range=self.x_range, v_range=self.v_range, phi_range=self.phi_range,
            resolution=None,
        )


# ─── Reinforcement learning records ───────────────────────────────────────────


@dataclass(frozen=True)
class EpisodeConfig:
    t1: float = 15.0       # Phase 1 free-running time
    t2: float = 20.0       # Phase 2 control time limit
    r_end: float = 100.0   # terminal bonus for reaching the target basin

    def control_steps(self, integrator: IntegratorConfig) -> int:
        return int(round(self.t2 / integrator.dt_control))


@dataclass(frozen=True)
class Transition:
    state: np.ndarray        # features of s_t
    action: float            # executed (clipped) action
    reward: float
    next_state: np.ndarray   # features of s_t+1
    terminal: bool           # target basin reached


@dataclass
class RolloutRecord:
    index: int
    t1_prime: float
    success: bool
    reward: float
    steps: int
    abs_action_sum: float
    control_duration: float
    final_state: SimState


@dataclass
class EvalReport:
    n: int
    success_rate: float
    reward_mean: float
    reward_std: float
    mean_control_duration: Optional[float]
    records: List[RolloutRecord] = field(default_factory=list)
    audit_size: int = 0
    audit_agreement: Optional[float] = None

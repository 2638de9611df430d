"""
attractor_platform/artifacts.py
===============================
File formats for pipeline artifacts:
  - CSV (pandas) for trajectories, labeled datasets, learning curves and
    evaluation records
  - ``CATALOG1`` text format for the attractor catalog (floats via repr,
    so reload is exact)
"""
from __future__ import annotations
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import FormatError
from .formatting import summary_block
from .types import AttractorCatalog, AttractorLabel, BoaDataset, DuffingParams, EvalReport

logger = logging.getLogger(__name__)

CATALOG_MAGIC = "CATALOG1"

TRAJECTORY_COLUMNS = ["t", "x", "v", "phi", "a"]
ROLLOUT_COLUMNS = ["t", "x", "v", "phi", "a", "phase_tag"]
DATASET_COLUMNS = ["x", "v", "phi", "label"]
CURVE_COLUMNS = ["episode", "samples_total", "success_rate", "reward_mean", "reward_std"]
RECORD_COLUMNS = ["index", "t1_prime", "success", "reward", "steps",
                  "abs_action_sum", "control_duration", "final_x", "final_v", "final_phi"]


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _read_csv(path: str, required: List[str]) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return df


# ─── CSV ──────────────────────────────────────────────────────────────────────

def write_frame(df: pd.DataFrame, path: str) -> None:
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format="%.17g")


def write_trajectory_csv(df: pd.DataFrame, path: str) -> None:
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"trajectory frame lacks columns {missing}")
    write_frame(df[TRAJECTORY_COLUMNS], path)


def read_trajectory_csv(path: str) -> pd.DataFrame:
    return _read_csv(path, TRAJECTORY_COLUMNS)


def read_curve_csv(path: str) -> pd.DataFrame:
    return _read_csv(path, CURVE_COLUMNS)


# ─── Learning curves ──────────────────────────────────────────────────────────

def curve_row(episode: int, samples_total: int, report: Optional[EvalReport]) -> Dict[str, float]:
    """One learning-curve row; the evaluation columns are NaN on episodes that were not evaluated."""
    return {
        "episode": episode,
        "samples_total": samples_total,
        "success_rate": report.success_rate if report else np.nan,
        "reward_mean": report.reward_mean if report else np.nan,
        "reward_std": report.reward_std if report else np.nan,
    }


def curve_frame(rows: Sequence[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=CURVE_COLUMNS)


def dataset_frame(dataset: BoaDataset) -> pd.DataFrame:
    return pd.DataFrame({
        "x": dataset.states[:, 0],
        "v": dataset.states[:, 1],
        "phi": dataset.states[:, 2],
        "label": [lab.value for lab in dataset.labels],
    })


def write_dataset_csv(dataset: BoaDataset, path: str) -> None:
    write_frame(dataset_frame(dataset), path)


def read_dataset_csv(path: str) -> BoaDataset:
    df = _read_csv(path, DATASET_COLUMNS)
    try:
        labels = [AttractorLabel(v) for v in df["label"].astype(str)]
    except ValueError as exc:
        raise FormatError(f"{path}: bad label value: {exc}") from exc
    return BoaDataset(states=df[["x", "v", "phi"]].to_numpy(dtype=np.float64), labels=labels)


def report_frame(report: EvalReport) -> pd.DataFrame:
    rows = [{
        "index": r.index,
        "t1_prime": r.t1_prime,
        "success": r.success,
        "reward": r.reward,
        "steps": r.steps,
        "abs_action_sum": r.abs_action_sum,
        "control_duration": r.control_duration,
        "final_x": r.final_state.x,
        "final_v": r.final_state.v,
        "final_phi": r.final_state.phi,
    } for r in report.records]
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def write_report(report: EvalReport, csv_path: str, summary_path: str, title: str = "Evaluation") -> str:
    """Per-rollout CSV plus the human-readable summary; returns the summary text."""
    write_frame(report_frame(report), csv_path)
    text = summary_block(report, title)
    _ensure_parent(summary_path)
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    return text


# ─── Catalog ──────────────────────────────────────────────────────────────────

_PARAM_FIELDS = ("delta", "alpha", "beta", "gamma_f", "omega", "phi0")


def save_catalog(catalog: AttractorCatalog, path: str) -> None:
    _ensure_parent(path)
    p = catalog.params
    lines = [CATALOG_MAGIC]
    lines += [f"param {name} {getattr(p, name)!r}" for name in _PARAM_FIELDS]
    lines.append(f"threshold {catalog.amplitude_threshold!r}")
    lines.append(f"settle_periods {catalog.settle_periods}")
    lines.append(f"measure_periods {catalog.measure_periods}")
    for lab in (AttractorLabel.SA, AttractorLabel.LA):
        orbit = catalog.orbits[lab]
        lines.append(f"attractor {lab.value} {catalog.amplitudes[lab]!r} {len(orbit)}")
        lines += [" ".join(repr(float(v)) for v in row) for row in orbit]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_catalog(path: str) -> AttractorCatalog:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CATALOG_MAGIC:
        raise FormatError(f"{path}: missing '{CATALOG_MAGIC}' header")
    try:
        values: Dict[str, float] = {}
        pos = 1
        for name in _PARAM_FIELDS:
            parts = lines[pos].split()
            if parts[0] != "param" or parts[1] != name:
                raise FormatError(f"{path}: expected param {name}, got {lines[pos]!r}")
            values[name] = float(parts[2])
            pos += 1
        threshold = float(_expect(lines[pos], "threshold", path))
        settle_periods = int(_expect(lines[pos + 1], "settle_periods", path))
        measure_periods = int(_expect(lines[pos + 2], "measure_periods", path))
        pos += 3
        amplitudes, orbits = {}, {}
        for _ in range(2):
            head = lines[pos].split()
            if head[0] != "attractor":
                raise FormatError(f"{path}: expected attractor block, got {lines[pos]!r}")
            lab = AttractorLabel(head[1])
            amplitudes[lab] = float(head[2])
            count = int(head[3])
            rows = lines[pos + 1: pos + 1 + count]
            if len(rows) != count:
                raise FormatError(f"{path}: truncated orbit for {lab.value}")
            orbits[lab] = np.array([[float(t) for t in r.split()] for r in rows], dtype=np.float64).reshape(count, 3)
            pos += 1 + count
    except FormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: cannot parse catalog: {exc}") from exc
    if set(amplitudes) != {AttractorLabel.SA, AttractorLabel.LA}:
        raise FormatError(f"{path}: catalog must hold exactly one SA and one LA attractor")
    return AttractorCatalog(
        params=DuffingParams(**values),
        amplitudes=amplitudes,
        orbits=orbits,
        amplitude_threshold=threshold,
        settle_periods=settle_periods,
        measure_periods=measure_periods,
    )


def _expect(line: str, key: str, path: str) -> str:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise FormatError(f"{path}: expected '{key}' line, got {line!r}")
    return parts[1]

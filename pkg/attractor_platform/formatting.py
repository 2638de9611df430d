"""
attractor_platform/formatting.py
================================
Display helpers for amplitudes, rates, rewards, switching directions and
evaluation summaries printed by the CLI.
"""
from __future__ import annotations
import math
from typing import Optional

from .types import EvalReport, direction_labels


def _missing(value: Optional[float]) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def format_amplitude(value: Optional[float], decimals: int = 4) -> str:
    if _missing(value):
        return "—"
    return f"{value:.{decimals}f}"


def format_rate(value: Optional[float], decimals: int = 1) -> str:
    """Fraction → percent, e.g. 0.93 → 93.0%"""
    if _missing(value):
        return "—"
    return f"{100.0 * value:.{decimals}f}%"


def format_reward(mean: Optional[float], std: Optional[float] = None, decimals: int = 2) -> str:
    """mean ± std"""
    if _missing(mean):
        return "—"
    if _missing(std):
        return f"{mean:.{decimals}f}"
    return f"{mean:.{decimals}f} ± {std:.{decimals}f}"


def format_duration(value: Optional[float], decimals: int = 2) -> str:
    if _missing(value):
        return "—"
    return f"{value:.{decimals}f} t.u."


def direction_label(direction: str) -> str:
    """'sa2la' → 'SA → LA'"""
    source, target = direction_labels(direction)
    return f"{source.value} → {target.value}"


def summary_block(report: EvalReport, title: str = "Evaluation") -> str:
    rows = [
        ("rollouts", str(report.n)),
        ("success rate", format_rate(report.success_rate)),
        ("reward", format_reward(report.reward_mean, report.reward_std)),
        ("mean control duration", format_duration(report.mean_control_duration)),
    ]
    if report.audit_size:
        rows.append(("oracle audit", f"{format_rate(report.audit_agreement)} agreement on {report.audit_size}"))
    width = max(len(k) for k, _ in rows)
    lines = [title, "─" * max(len(title), 24)]
    lines += [f"{k.ljust(width)}  {v}" for k, v in rows]
    return "\n".join(lines)

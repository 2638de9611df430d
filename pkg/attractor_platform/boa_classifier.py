"""
attractor_platform/boa_classifier.py
====================================
Basin-of-attraction surrogate: a Gaussian-kernel support vector classifier
that predicts which attractor an instantaneous state (x, v, φ) will settle
into, trained on an oracle-labeled grid.

Covers:
  - Grid dataset generation with chunked, resumable oracle labeling
  - Feature encoding (x/10, v/15, cos φ, sin φ); raw-φ mode (x/10, v/15, φ/2π)
  - Soft-margin SVM solved by SMO with second-order working-set selection,
    stopping when the maximal KKT violation drops below ``tol``
  - Prediction (LA ↔ decision > 0, SA otherwise), accuracy, grid search
  - Versioned text model format ``BOA1``
"""
from __future__ import annotations
import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from .errors import FormatError, NonconvergenceError
from .oracle import CODE_AMBIGUOUS, CODE_LA, DEFAULT_AMBIGUITY_BAND, default_settle_time, label_batch
from .types import (
    GRID_PHI_RANGE, GRID_V_RANGE, GRID_X_RANGE, TWO_PI,
    AttractorCatalog, AttractorLabel, BoaDataset, DuffingParams, IntegratorConfig, SimState,
)

logger = logging.getLogger(__name__)

FeatureMode = Literal["trig", "raw"]

X_SCALE = 10.0
V_SCALE = 15.0
MODEL_MAGIC = "BOA1"

_PENDING = -2
_DROPPED = -3
_TAU = 1e-12


# ─── Features ─────────────────────────────────────────────────────────────────

def featurize_batch(states: np.ndarray, feature_mode: FeatureMode = "trig",
                    x_scale: float = X_SCALE, v_scale: float = V_SCALE) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    x, v, phi = states[:, 0], states[:, 1], states[:, 2]
    if feature_mode == "trig":
        return np.column_stack([x / x_scale, v / v_scale, np.cos(phi), np.sin(phi)])
    if feature_mode == "raw":
        return np.column_stack([x / x_scale, v / v_scale, np.mod(phi, TWO_PI) / TWO_PI])
    raise ValueError(f"unknown feature_mode {feature_mode!r}")


def featurize(state: SimState, feature_mode: FeatureMode = "trig") -> np.ndarray:
    """(x/10, v/15, cos φ, sin φ) for one state."""
    return featurize_batch(np.array([[state.x, state.v, state.phi]]), feature_mode)[0]


# ─── Dataset generation ───────────────────────────────────────────────────────

def grid_states(
    resolution: int,
    x_range: Tuple[float, float] = GRID_X_RANGE,
    v_range: Tuple[float, float] = GRID_V_RANGE,
    phi_range: Tuple[float, float] = GRID_PHI_RANGE,
) -> np.ndarray:
    """resolution³ grid; x and v include both ends, φ excludes 2π (same state as 0)."""
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    xs = np.linspace(*x_range, resolution)
    vs = np.linspace(*v_range, resolution)
    phis = np.linspace(phi_range[0], phi_range[1], resolution, endpoint=False)
    X, V, P = np.meshgrid(xs, vs, phis, indexing="ij")
    return np.column_stack([X.ravel(), V.ravel(), P.ravel()])


def _label_chunk(args) -> np.ndarray:
    states, catalog, cfg, params, settle_time, band = args
    codes, _ = label_batch(states, catalog, cfg, params, settle_time, band)
    return codes


def _save_checkpoint(path: str, codes: np.ndarray, resolution: int) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, codes=codes, resolution=np.array(resolution))
    os.replace(tmp, path)


def _load_checkpoint(path: Optional[str], n: int, resolution: int) -> Optional[np.ndarray]:
    if not path or not os.path.exists(path):
        return None
    try:
        with np.load(path) as data:
            codes = data["codes"]
            saved_res = int(data["resolution"])
    except Exception as exc:
        logger.warning("ignoring unreadable dataset checkpoint %s: %s", path, exc)
        return None
    if saved_res != resolution or codes.shape != (n,):
        logger.warning("ignoring dataset checkpoint %s for resolution %d", path, saved_res)
        return None
    return codes.astype(np.int64)


def generate_dataset(
    catalog: AttractorCatalog,
    cfg: IntegratorConfig,
    params: DuffingParams,
    resolution: int = 20,
    x_range: Tuple[float, float] = GRID_X_RANGE,
    v_range: Tuple[float, float] = GRID_V_RANGE,
    phi_range: Tuple[float, float] = GRID_PHI_RANGE,
    workers: int = 1,
    chunk_size: int = 2000,
    checkpoint_path: Optional[str] = None,
    ambiguity_band: float = DEFAULT_AMBIGUITY_BAND,
) -> BoaDataset:
    """
    Oracle-label every grid point. Chunks already labeled in ``checkpoint_path``
    are skipped, so an interrupted run resumes. Ambiguous points are re-settled
    for twice as long and dropped with a warning if still ambiguous.
    """
    states = grid_states(resolution, x_range, v_range, phi_range)
    n = len(states)
    codes = _load_checkpoint(checkpoint_path, n, resolution)
    if codes is None:
        codes = np.full(n, _PENDING, dtype=np.int64)
    else:
        logger.info("resuming dataset: %d of %d points already labeled", int(np.sum(codes != _PENDING)), n)

    settle_time = default_settle_time(params, catalog.settle_periods)
    pending = np.flatnonzero(codes == _PENDING)
    chunks = [pending[i:i + chunk_size] for i in range(0, len(pending), chunk_size)]
    jobs = [(states[c], catalog, cfg, params, settle_time, ambiguity_band) for c in chunks]

    def _record(idx: np.ndarray, chunk_codes: np.ndarray, k: int) -> None:
        codes[idx] = chunk_codes
        if checkpoint_path:
            _save_checkpoint(checkpoint_path, codes, resolution)
        logger.info("labeled chunk %d/%d (%d points)", k + 1, len(chunks), len(idx))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, (idx, chunk_codes) in enumerate(zip(chunks, pool.map(_label_chunk, jobs))):
                _record(idx, chunk_codes, k)
    else:
        for k, (idx, job) in enumerate(zip(chunks, jobs)):
            _record(idx, _label_chunk(job), k)

    ambiguous = np.flatnonzero(codes == CODE_AMBIGUOUS)
    if len(ambiguous):
        retry, _ = label_batch(states[ambiguous], catalog, cfg, params, 2.0 * settle_time, ambiguity_band)
        still = retry == CODE_AMBIGUOUS
        retry[still] = _DROPPED
        codes[ambiguous] = retry
        if still.any():
            logger.warning("dropping %d grid point(s) still ambiguous after doubled settle time",
                           int(still.sum()))
        if checkpoint_path:
            _save_checkpoint(checkpoint_path, codes, resolution)

    keep = codes >= 0
    labels = [AttractorLabel.LA if c == CODE_LA else AttractorLabel.SA for c in codes[keep]]
    dataset = BoaDataset(states=states[keep], labels=labels,
                         x_range=x_range, v_range=v_range, phi_range=phi_range, resolution=resolution)
    fractions = dataset.label_fractions()
    logger.info("dataset: %d points, SA %.3f / LA %.3f", len(dataset),
                fractions[AttractorLabel.SA], fractions[AttractorLabel.LA])
    return dataset


def split_dataset(dataset: BoaDataset, holdout_fraction: float,
                  rng: np.random.Generator) -> Tuple[BoaDataset, BoaDataset]:
    """Shuffled (train, holdout) split."""
    n = len(dataset)
    order = rng.permutation(n)
    n_hold = int(round(holdout_fraction * n))
    return dataset.subset(np.sort(order[n_hold:])), dataset.subset(np.sort(order[:n_hold]))


# ─── Model ────────────────────────────────────────────────────────────────────

@dataclass
class BoaModel:
    support_vectors: np.ndarray   # (k, d) feature rows
    dual_coef: np.ndarray         # (k,) α_i·y_i
    bias: float                   # decision = Σ coef·K + bias
    gamma_k: float
    C: float
    feature_mode: FeatureMode = "trig"
    x_scale: float = X_SCALE
    v_scale: float = V_SCALE
    train_accuracy: Optional[float] = None
    iterations: int = 0

    def features(self, states: np.ndarray) -> np.ndarray:
        return featurize_batch(states, self.feature_mode, self.x_scale, self.v_scale)

    def decision_function(self, states: np.ndarray) -> np.ndarray:
        feats = self.features(states)
        K = np.exp(-self.gamma_k * cdist(feats, self.support_vectors, "sqeuclidean"))
        return K @ self.dual_coef + self.bias

    def predict_codes(self, states: np.ndarray) -> np.ndarray:
        """1 for LA, 0 for SA; a decision value of exactly 0 maps to SA."""
        return (self.decision_function(states) > 0.0).astype(np.int64)


def predict(model: BoaModel, state: SimState) -> AttractorLabel:
    return predict_batch(model, state.as_array()[None, :])[0]


def predict_batch(model: BoaModel, states: np.ndarray) -> List[AttractorLabel]:
    return [AttractorLabel.LA if c == 1 else AttractorLabel.SA for c in model.predict_codes(states)]


def accuracy(model: BoaModel, dataset: BoaDataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    truth = (dataset.label_signs() > 0).astype(np.int64)
    return float(np.mean(model.predict_codes(dataset.states) == truth))


# ─── SMO solver ───────────────────────────────────────────────────────────────

class _RbfColumns:
    """On-demand RBF kernel columns with a bounded LRU cache."""

    def __init__(self, X: np.ndarray, gamma: float, cache_bytes: int = 256 * 2 ** 20):
        self.X = X
        self.gamma = gamma
        self.capacity = max(2, cache_bytes // max(8 * len(X), 1))
        self._cache: "OrderedDict[int, np.ndarray]" = OrderedDict()

    def __call__(self, i: int) -> np.ndarray:
        col = self._cache.get(i)
        if col is not None:
            self._cache.move_to_end(i)
            return col
        col = np.exp(-self.gamma * cdist(self.X, self.X[i:i + 1], "sqeuclidean")[:, 0])
        self._cache[i] = col
        if len(self._cache) > self.capacity:
            self._cache.popitem(last=False)
        return col


def smo_solve(X: np.ndarray, y: np.ndarray, C: float, gamma_k: float,
              tol: float = 1e-3, max_iter: int = 2_000_000) -> Tuple[np.ndarray, float, int]:
    """
    Dual soft-margin SVM:  min ½αᵀQα − eᵀα,  0 ≤ α ≤ C,  yᵀα = 0,  Q_ij = y_i y_j K_ij.

    Each iteration picks the maximal violating i and the j with the best
    second-order gain, solves the two-variable subproblem analytically and
    updates the gradient G = Qα − e. Returns (alpha, rho, iterations) where
    the decision function is Σ α_i y_i K(x_i, x) − rho.
    """
    n = len(y)
    kernel = _RbfColumns(X, gamma_k)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    neg = ~pos
    it = 0
    gap = float("inf")
    while True:
        v = -y * G
        up = (pos & (alpha < C)) | (neg & (alpha > 0))
        low = (pos & (alpha > 0)) | (neg & (alpha < C))
        v_up = np.where(up, v, -np.inf)
        i = int(np.argmax(v_up))
        g_max = v_up[i]
        g_min = float(np.min(np.where(low, v, np.inf)))
        gap = g_max - g_min
        if gap < tol:
            break
        if it >= max_iter:
            raise NonconvergenceError(
                f"SMO did not reach KKT tolerance {tol} within {max_iter} iterations "
                f"(violation {gap:.3e}); check C and gamma_k",
                iterations=it, gap=gap,
            )
        Ki = kernel(i)
        b = g_max - v
        a = np.maximum(2.0 - 2.0 * Ki, _TAU)      # K_ii = K_tt = 1 for the RBF kernel
        cand = low & (v < g_max)
        j = int(np.argmin(np.where(cand, -(b * b) / a, np.inf)))
        Kj = kernel(j)

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(2.0 - 2.0 * Ki[j], _TAU)
        if yi != yj:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += y * (yi * (ai - ai_old) * Ki + yj * (aj - aj_old) * Kj)
        it += 1

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        ub_mask = (at_upper & neg) | (at_lower & pos)
        lb_mask = (at_upper & pos) | (at_lower & neg)
        ub = float(np.min(yG[ub_mask])) if ub_mask.any() else float("inf")
        lb = float(np.max(yG[lb_mask])) if lb_mask.any() else -float("inf")
        rho = 0.5 * (ub + lb) if math.isfinite(ub + lb) else 0.0
    logger.debug("SMO converged after %d iterations (violation %.2e)", it, gap)
    return alpha, rho, it


def train(
    dataset: BoaDataset,
    C: float = 10.0,
    gamma_k: float = 1.0,
    seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 2_000_000,
    feature_mode: FeatureMode = "trig",
) -> BoaModel:
    """Fit the kernel SVM; LA is the positive class."""
    y_all = dataset.label_signs()
    if not (np.any(y_all > 0) and np.any(y_all < 0)):
        raise ValueError("training set must contain both SA and LA labels")
    order = np.random.default_rng(seed).permutation(len(dataset))
    X = featurize_batch(dataset.states[order], feature_mode)
    y = y_all[order]

    alpha, rho, iterations = smo_solve(X, y, C, gamma_k, tol, max_iter)
    sv = alpha > 0
    model = BoaModel(
        support_vectors=X[sv].copy(),
        dual_coef=(alpha[sv] * y[sv]).copy(),
        bias=-rho,
        gamma_k=float(gamma_k),
        C=float(C),
        feature_mode=feature_mode,
        iterations=iterations,
    )
    model.train_accuracy = accuracy(model, dataset)
    logger.info("SVM (C=%g, gamma_k=%g): %d support vectors, %d iterations, train accuracy %.4f",
                C, gamma_k, int(sv.sum()), iterations, model.train_accuracy)
    return model


def grid_search(
    train_set: BoaDataset,
    validation_set: BoaDataset,
    Cs: Sequence[float] = (1.0, 10.0, 100.0),
    gammas: Sequence[float] = (0.5, 1.0, 2.0),
    seed: int = 0,
    tol: float = 1e-3,
    feature_mode: FeatureMode = "trig",
) -> Tuple[BoaModel, pd.DataFrame]:
    """Pick (C, γ_k) by validation accuracy; ties keep the first combination."""
    rows: List[Dict[str, float]] = []
    best: Optional[BoaModel] = None
    best_acc = -1.0
    for C in Cs:
        for g in gammas:
            model = train(train_set, C, g, seed, tol, feature_mode=feature_mode)
            acc = accuracy(model, validation_set)
            rows.append({"C": C, "gamma_k": g, "validation_accuracy": acc,
                         "support_vectors": len(model.dual_coef)})
            if acc > best_acc:
                best, best_acc = model, acc
    return best, pd.DataFrame(rows)


# ─── Persistence ──────────────────────────────────────────────────────────────

def save_model(model: BoaModel, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    lines = [
        MODEL_MAGIC,
        f"feature_mode {model.feature_mode}",
        f"x_scale {model.x_scale!r}",
        f"v_scale {model.v_scale!r}",
        f"gamma_k {model.gamma_k!r}",
        f"C {model.C!r}",
        f"bias {float(model.bias)!r}",
        f"train_accuracy {model.train_accuracy!r}",
        f"iterations {model.iterations}",
        f"support_vectors {len(model.dual_coef)} {model.support_vectors.shape[1]}",
    ]
    for coef, row in zip(model.dual_coef, model.support_vectors):
        lines.append(" ".join(repr(float(x)) for x in (coef, *row)))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _field(line: str, key: str) -> List[str]:
    parts = line.split()
    if not parts or parts[0] != key:
        raise FormatError(f"expected '{key}' line, got {line!r}")
    return parts[1:]


def load_model(path: str) -> BoaModel:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        raise FormatError(f"{path}: missing '{MODEL_MAGIC}' header (unsupported model format version)")
    try:
        head = lines[1:10]
        if len(head) < 9:
            raise FormatError(f"{path}: truncated header")
        feature_mode = _field(head[0], "feature_mode")[0]
        x_scale = float(_field(head[1], "x_scale")[0])
        v_scale = float(_field(head[2], "v_scale")[0])
        gamma_k = float(_field(head[3], "gamma_k")[0])
        C = float(_field(head[4], "C")[0])
        bias = float(_field(head[5], "bias")[0])
        acc_raw = _field(head[6], "train_accuracy")[0]
        iterations = int(_field(head[7], "iterations")[0])
        k, d = (int(t) for t in _field(head[8], "support_vectors"))
        rows = [ln for ln in lines[10:] if ln.strip()]
        if len(rows) != k:
            raise FormatError(f"{path}: expected {k} support vector rows, found {len(rows)}")
        table = np.array([[float(t) for t in ln.split()] for ln in rows], dtype=np.float64).reshape(k, d + 1)
    except FormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: cannot parse model file: {exc}") from exc
    return BoaModel(
        support_vectors=table[:, 1:].copy(),
        dual_coef=table[:, 0].copy(),
        bias=bias,
        gamma_k=gamma_k,
        C=C,
        feature_mode=feature_mode,  # type: ignore[arg-type]
        x_scale=x_scale,
        v_scale=v_scale,
        train_accuracy=None if acc_raw == "None" else float(acc_raw),
        iterations=iterations,
    )

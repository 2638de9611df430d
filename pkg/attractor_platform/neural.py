"""
attractor_platform/neural.py
============================
Small fully connected networks in float64 numpy, shared by the policy
(actor) and the critic:

  - forward / backward with cached activations (ReLU hidden, tanh or
    identity output) and optional concatenation of an auxiliary input
    (the action) in front of one affine layer
  - Adam with bias correction, Polyak soft updates, cloning
  - finite-difference gradient check
  - versioned text format ``NET1`` that round-trips bit-exactly,
    Adam state included
"""
from __future__ import annotations
import copy
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, FormatError, ShapeMismatchError

logger = logging.getLogger(__name__)

NET_MAGIC = "NET1"
ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class DenseNet:
    """
    ``sizes`` lists layer widths from input to output, e.g. [4, 64, 64, 1].
    Affine layer l maps sizes[l] (+ ``aux_size`` when l == ``inject_at``)
    to sizes[l + 1] and is followed by ``activations[l]``. Weights are stored
    as (fan_in, fan_out) so a batch row vector multiplies from the left.
    """
    sizes: List[int]
    activations: List[str]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inject_at: Optional[int] = None
    aux_size: int = 0
    adam_m: List[np.ndarray] = field(default_factory=list)
    adam_v: List[np.ndarray] = field(default_factory=list)
    adam_t: int = 0
    _cache: Optional[Dict[str, list]] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        n_layers = len(self.sizes) - 1
        if n_layers < 1 or len(self.activations) != n_layers:
            raise ShapeMismatchError(
                f"{len(self.sizes)} layer sizes need {n_layers} activations, got {len(self.activations)}"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unsupported activation {act!r}")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeMismatchError("one weight matrix and one bias vector per layer required")
        for l in range(n_layers):
            expected = (self.fan_in(l), self.sizes[l + 1])
            if self.weights[l].shape != expected or self.biases[l].shape != (self.sizes[l + 1],):
                raise ShapeMismatchError(
                    f"layer {l}: weight {self.weights[l].shape} / bias {self.biases[l].shape}, expected {expected}"
                )
        if not self.adam_m:
            self.reset_optimizer()
        elif [m.shape for m in self.adam_m] != [p.shape for p in self.parameters()] or \
                [v.shape for v in self.adam_v] != [p.shape for p in self.parameters()]:
            raise ShapeMismatchError("Adam buffers must be shaped like the parameters")

    # ── structure ──
    @property
    def input_size(self) -> int:
        return self.sizes[0]

    @property
    def output_size(self) -> int:
        return self.sizes[-1]

    def fan_in(self, layer: int) -> int:
        return self.sizes[layer] + (self.aux_size if layer == self.inject_at else 0)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in the fixed order W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def architecture(self) -> Tuple:
        return tuple(self.sizes), tuple(self.activations), self.inject_at, self.aux_size

    def reset_optimizer(self) -> None:
        self.adam_m = [np.zeros_like(p) for p in self.parameters()]
        self.adam_v = [np.zeros_like(p) for p in self.parameters()]
        self.adam_t = 0

    def clone(self) -> "DenseNet":
        twin = copy.deepcopy(self)
        twin._cache = None
        return twin


# ─── Construction ─────────────────────────────────────────────────────────────

def init_net(
    sizes: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    inject_at: Optional[int] = None,
    aux_size: int = 0,
) -> DenseNet:
    """Weights and biases uniform in ±1/√fan_in per layer."""
    sizes = [int(s) for s in sizes]
    weights, biases = [], []
    for l in range(len(sizes) - 1):
        fan_in = sizes[l] + (aux_size if l == inject_at else 0)
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, sizes[l + 1])))
        biases.append(rng.uniform(-bound, bound, size=sizes[l + 1]))
    return DenseNet(sizes, list(activations), weights, biases, inject_at=inject_at, aux_size=aux_size)


def build_policy(hidden: Sequence[int], rng: np.random.Generator, input_size: int = 4) -> DenseNet:
    """input → ReLU hidden layers → 1 tanh output."""
    sizes = [input_size, *hidden, 1]
    return init_net(sizes, ["relu"] * len(hidden) + ["tanh"], rng)


def build_critic(hidden: Sequence[int], rng: np.random.Generator, input_size: int = 4) -> DenseNet:
    """input → ReLU → [h1 ‖ action] → ReLU → ... → 1 identity output."""
    if len(hidden) < 2:
        raise ValueError("critic needs at least two hidden layers to inject the action")
    sizes = [input_size, *hidden, 1]
    return init_net(sizes, ["relu"] * len(hidden) + ["identity"], rng, inject_at=1, aux_size=1)


# ─── Forward / backward ───────────────────────────────────────────────────────

def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return np.ones_like(z)


def forward(net: DenseNet, x: np.ndarray, aux: Optional[np.ndarray] = None, keep_cache: bool = True) -> np.ndarray:
    """Batch forward pass; ``x`` is (B, input_size), ``aux`` is (B, aux_size)."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.input_size:
        raise ShapeMismatchError(f"expected {net.input_size} input features, got {h.shape[1]}")
    if net.inject_at is not None:
        if aux is None:
            raise ShapeMismatchError("this network needs an auxiliary input")
        aux = np.asarray(aux, dtype=np.float64).reshape(h.shape[0], net.aux_size)
    inputs, pre, outs = [], [], []
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        if l == net.inject_at:
            h = np.concatenate([h, aux], axis=1)
        z = h @ W + b
        out = _activate(z, net.activations[l])
        inputs.append(h)
        pre.append(z)
        outs.append(out)
        h = out
    if keep_cache:
        net._cache = {"inputs": inputs, "pre": pre, "outs": outs}
    return h


def backward(net: DenseNet, upstream: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray, Optional[np.ndarray]]:
    """
    Back-propagate ``upstream`` = dL/d(output) of the last cached forward
    pass. Returns (parameter gradients in ``parameters()`` order,
    dL/d(input), dL/d(aux) or None). Gradients are summed over the batch.
    """
    if net._cache is None:
        raise ContractError("backward() called without a cached forward pass")
    cache = net._cache
    delta = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if delta.shape != cache["outs"][-1].shape:
        raise ShapeMismatchError(f"upstream gradient {delta.shape} vs output {cache['outs'][-1].shape}")
    n_layers = len(net.weights)
    grads: List[Optional[np.ndarray]] = [None] * (2 * n_layers)
    d_aux = None
    for l in range(n_layers - 1, -1, -1):
        dz = delta * _activation_grad(cache["pre"][l], cache["outs"][l], net.activations[l])
        grads[2 * l] = cache["inputs"][l].T @ dz
        grads[2 * l + 1] = dz.sum(axis=0)
        delta = dz @ net.weights[l].T
        if l == net.inject_at:
            d_aux = delta[:, net.sizes[l]:]
            delta = delta[:, :net.sizes[l]]
    return grads, delta, d_aux  # type: ignore[return-value]


def _features_row(net: DenseNet, features: np.ndarray) -> np.ndarray:
    row = np.asarray(features, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != net.input_size:
        raise ShapeMismatchError(f"expected {net.input_size} features, got {row.shape[1]}")
    return row


def policy_forward(net: DenseNet, features: np.ndarray) -> float:
    """π(s) ∈ [−1, 1] for one feature vector; does not touch the backward cache."""
    if net.activations[-1] != "tanh" or net.output_size != 1 or net.inject_at is not None:
        raise ShapeMismatchError("policy_forward needs a single tanh output and no injected input")
    return float(forward(net, _features_row(net, features), keep_cache=False)[0, 0])


def critic_forward(net: DenseNet, features: np.ndarray, action: float) -> float:
    """Q(s, a) for one feature vector and a scalar action."""
    if net.inject_at is None or net.aux_size != 1 or net.output_size != 1:
        raise ShapeMismatchError("critic_forward needs a scalar-output net with a 1-wide injected action")
    return float(forward(net, _features_row(net, features), np.array([[action]]), keep_cache=False)[0, 0])


# ─── Optimisation ─────────────────────────────────────────────────────────────

def adam_step(net: DenseNet, grads: Sequence[np.ndarray], cfg: AdamConfig) -> DenseNet:
    """One in-place Adam update; returns ``net``."""
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeMismatchError("gradients must match the parameter shapes")
    net.adam_t += 1
    t = net.adam_t
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p, g, m, v in zip(params, grads, net.adam_m, net.adam_v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return net


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> DenseNet:
    """p′ ← τ·p + (1 − τ)·p′ for every parameter; returns ``target``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.architecture() != source.architecture():
        raise ShapeMismatchError("soft_update needs identical architectures")
    for p_t, p in zip(target.parameters(), source.parameters()):
        p_t[...] = tau * p + (1.0 - tau) * p_t
    return target


def copy_weights(target: DenseNet, source: DenseNet) -> DenseNet:
    if target.architecture() != source.architecture():
        raise ShapeMismatchError("copy_weights needs identical architectures")
    for p_t, p in zip(target.parameters(), source.parameters()):
        p_t[...] = p
    return target


# ─── Gradient check ───────────────────────────────────────────────────────────

def gradient_check(
    net: DenseNet,
    x: np.ndarray,
    aux: Optional[np.ndarray] = None,
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    atol: float = 1e-9,
) -> float:
    """
    Max relative error |a − n| / max(|a|, |n|) between analytic and
    central-difference gradients of L = Σ output, over parameters, inputs
    and the auxiliary input. Differences within ``atol`` (finite-difference
    rounding) count as exact. ``max_entries`` samples that many parameter
    entries per array.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = forward(net, x, aux)
    grads, d_x, d_aux = backward(net, np.ones_like(out))

    def loss() -> float:
        return float(forward(net, x, aux, keep_cache=False).sum())

    def rel(a: float, n: float) -> float:
        diff = abs(a - n)
        return 0.0 if diff <= atol else diff / max(abs(a), abs(n))

    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            worst = max(worst, rel(g.reshape(-1)[i], (up - down) / (2 * h)))

    inputs = [(x, d_x)]
    if aux is not None and d_aux is not None:
        aux = np.asarray(aux, dtype=np.float64).reshape(x.shape[0], net.aux_size)
        inputs.append((aux, d_aux))
    for arr, analytic in inputs:
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            worst = max(worst, rel(analytic.reshape(-1)[i], (up - down) / (2 * h)))
    return worst


# ─── Persistence ──────────────────────────────────────────────────────────────

def _block(tag: str, arr: np.ndarray) -> List[str]:
    shape = " ".join(str(s) for s in arr.shape)
    return [f"{tag} {arr.ndim} {shape}", " ".join(repr(float(v)) for v in arr.reshape(-1))]


def save_net(net: DenseNet, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    lines = [
        NET_MAGIC,
        "sizes " + " ".join(str(s) for s in net.sizes),
        "activations " + " ".join(net.activations),
        f"inject_at {'none' if net.inject_at is None else net.inject_at} {net.aux_size}",
        f"adam_t {net.adam_t}",
    ]
    for i, p in enumerate(net.parameters()):
        lines += _block(f"param{i}", p)
        lines += _block(f"m{i}", net.adam_m[i])
        lines += _block(f"v{i}", net.adam_v[i])
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _read_block(lines: List[str], pos: int, tag: str) -> Tuple[np.ndarray, int]:
    if pos + 1 >= len(lines):
        raise FormatError(f"truncated before block {tag}")
    head = lines[pos].split()
    if not head or head[0] != tag:
        raise FormatError(f"expected block {tag}, got {lines[pos][:40]!r}")
    ndim = int(head[1])
    shape = tuple(int(s) for s in head[2:2 + ndim])
    values = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
    if values.size != int(np.prod(shape)):
        raise FormatError(f"block {tag}: {values.size} values for shape {shape}")
    return values.reshape(shape), pos + 2


def load_net(path: str) -> DenseNet:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != NET_MAGIC:
        raise FormatError(f"{path}: missing '{NET_MAGIC}' header (unsupported network format version)")
    try:
        sizes = [int(s) for s in lines[1].split()[1:]]
        activations = lines[2].split()[1:]
        inj = lines[3].split()
        inject_at = None if inj[1] == "none" else int(inj[1])
        aux_size = int(inj[2])
        adam_t = int(lines[4].split()[1])
        params, ms, vs = [], [], []
        pos = 5
        for i in range(2 * (len(sizes) - 1)):
            p, pos = _read_block(lines, pos, f"param{i}")
            m, pos = _read_block(lines, pos, f"m{i}")
            v, pos = _read_block(lines, pos, f"v{i}")
            params.append(p)
            ms.append(m)
            vs.append(v)
        net = DenseNet(
            sizes=sizes, activations=activations,
            weights=params[0::2], biases=params[1::2],
            inject_at=inject_at, aux_size=aux_size,
            adam_m=ms, adam_v=vs, adam_t=adam_t,
        )
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: cannot parse network file: {exc}") from exc
    return net

"""Small numpy network toolkit with hand-written backward passes.

Everything is float64 so that finite-difference checks stay meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "sigmoid", "none")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, dim: int) -> "BatchNorm":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim))


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "relu"
    batchnorm: BatchNorm | None = None


@dataclass
class MlpParams:
    layers: list[Layer]
    version: int = 0

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in self.layers]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by stable names (views, not copies)."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.weight"] = layer.weight
            out[f"{i}.bias"] = layer.bias
            if layer.batchnorm is not None:
                out[f"{i}.gamma"] = layer.batchnorm.gamma
                out[f"{i}.beta"] = layer.batchnorm.beta
        return out

    def copy(self) -> "MlpParams":
        return MlpParams.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            bn = layer.batchnorm
            layers.append(
                {
                    "in": int(layer.weight.shape[0]),
                    "out": int(layer.weight.shape[1]),
                    "activation": layer.activation,
                    "weight": layer.weight.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                    "batchnorm": None
                    if bn is None
                    else {
                        "gamma": bn.gamma.tolist(),
                        "beta": bn.beta.tolist(),
                        "running_mean": bn.running_mean.tolist(),
                        "running_var": bn.running_var.tolist(),
                        "momentum": bn.momentum,
                        "eps": bn.eps,
                    },
                }
            )
        return {"format_version": CHECKPOINT_VERSION, "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('format_version')}")
        layers = []
        for ld in d["layers"]:
            w = np.array(ld["weight"], dtype=float).reshape(ld["in"], ld["out"])
            bn = ld["batchnorm"]
            layers.append(
                Layer(
                    w,
                    np.array(ld["bias"], dtype=float),
                    ld["activation"],
                    None
                    if bn is None
                    else BatchNorm(
                        np.array(bn["gamma"], dtype=float),
                        np.array(bn["beta"], dtype=float),
                        np.array(bn["running_mean"], dtype=float),
                        np.array(bn["running_var"], dtype=float),
                        bn["momentum"],
                        bn["eps"],
                    ),
                )
            )
        return cls(layers)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(
    dims: Iterable[int],
    seed: int,
    hidden_activation: str = "relu",
    output_activation: str = "none",
    batchnorm: bool = False,
) -> MlpParams:
    """Dense stack; batch-norm (if any) sits between the linear map and the activation
    of every hidden layer, never on the output layer."""
    dims = list(dims)
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        rng = np.random.default_rng([seed, i])
        layers.append(
            Layer(
                glorot_uniform(rng, a, b),
                np.zeros(b),
                output_activation if last else hidden_activation,
                BatchNorm.create(b) if batchnorm and not last else None,
            )
        )
    return MlpParams(layers)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class MlpCache:
    params_id: int
    version: int
    mode: str
    steps: list[dict] = field(default_factory=list)


def mlp_forward(params: MlpParams, batch, mode: str = "eval"):
    """Returns ``(output, cache)``.  ``batch`` may be dense or scipy-sparse."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    if batch.ndim != 2 or batch.shape[1] != params.layers[0].weight.shape[0]:
        raise ShapeError(
            f"batch shape {batch.shape} does not fit input dim {params.layers[0].weight.shape[0]}"
        )
    cache = MlpCache(id(params), params.version, mode)
    h = batch
    for layer in params.layers:
        step: dict = {"x": h}
        z = h @ layer.weight + layer.bias
        z = np.asarray(z)
        bn = layer.batchnorm
        if bn is not None:
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                n = z.shape[0]
                bn.running_mean[:] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
                unbiased = var * n / (n - 1) if n > 1 else var
                bn.running_var[:] = (1 - bn.momentum) * bn.running_var + bn.momentum * unbiased
            else:
                mu, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + bn.eps)
            xhat = (z - mu) * inv_std
            step.update(xhat=xhat, inv_std=inv_std)
            z = bn.gamma * xhat + bn.beta
        if layer.activation == "relu":
            a = np.maximum(z, 0.0)
        elif layer.activation == "sigmoid":
            a = sigmoid(z)
        elif layer.activation == "none":
            a = z
        else:
            raise ValueError(f"unknown activation {layer.activation!r}")
        step["z"] = z
        step["a"] = a
        cache.steps.append(step)
        h = a
    return h, cache


def mlp_backward(params: MlpParams, cache: MlpCache, grad_out: np.ndarray):
    """Returns ``(grads, grad_input)`` with ``grads`` keyed like ``named_arrays``."""
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("cache does not belong to the current parameters")
    grads: dict[str, np.ndarray] = {}
    g = grad_out
    for i in range(len(params.layers) - 1, -1, -1):
        layer, step = params.layers[i], cache.steps[i]
        if layer.activation == "relu":
            g = g * (step["z"] > 0)
        elif layer.activation == "sigmoid":
            a = step["a"]
            g = g * a * (1.0 - a)
        bn = layer.batchnorm
        if bn is not None:
            xhat, inv_std = step["xhat"], step["inv_std"]
            grads[f"{i}.gamma"] = (g * xhat).sum(axis=0)
            grads[f"{i}.beta"] = g.sum(axis=0)
            gx = g * bn.gamma
            if cache.mode == "train":
                n = g.shape[0]
                g = (inv_std / n) * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                g = gx * inv_std
        x = step["x"]
        grads[f"{i}.weight"] = np.asarray(x.T @ g)
        grads[f"{i}.bias"] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


# ---------------------------------------------------------------------------
# pooling, similarity and losses


def embedding_bag_forward(table: np.ndarray, bags: sp.csr_matrix) -> np.ndarray:
    """Weighted sum of table rows; ``bags`` rows hold the pooling weights."""
    return np.asarray(bags @ table)


def embedding_bag_backward(bags: sp.csr_matrix, grad_out: np.ndarray) -> np.ndarray:
    return np.asarray(bags.T @ grad_out)


def l2_normalize(x: np.ndarray):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    norm = np.maximum(norm, 1e-12)
    return x / norm, norm


def l2_normalize_backward(y: np.ndarray, norm: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return (grad_y - y * (grad_y * y).sum(axis=-1, keepdims=True)) / norm


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def contrastive_pair_loss(sim, label, margin: float = 0.5):
    """``1 - sim`` for matching pairs, ``max(0, sim - margin)`` otherwise.

    Works elementwise on arrays; ``label`` is truthy for positives.
    Returns ``(loss, dloss/dsim)``.
    """
    sim = np.asarray(sim, dtype=float)
    pos = np.asarray(label, dtype=bool)
    loss = np.where(pos, 1.0 - sim, np.maximum(0.0, sim - margin))
    grad = np.where(pos, -1.0, (sim > margin).astype(float))
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


PROB_CLAMP = 1e-7


def bce_loss(probs, targets, weights=None):
    """Mean binary cross-entropy; returns ``(loss, dloss/dprobs)``."""
    probs = np.asarray(probs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if probs.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    w = np.ones_like(probs) if weights is None else np.broadcast_to(weights, probs.shape)
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = probs.size
    loss = -(w * (targets * np.log(p) + (1 - targets) * np.log(1 - p))).sum() / n
    grad = w * (-(targets / p) + (1 - targets) / (1 - p)) / n
    # no gradient where the clamp is active
    grad = np.where((probs > PROB_CLAMP) & (probs < 1 - PROB_CLAMP), grad, 0.0)
    return float(loss), grad


def bce_with_logits(logits, targets, weights=None):
    """Numerically stable BCE on pre-sigmoid scores; returns ``(loss, dloss/dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    w = np.ones_like(logits) if weights is None else np.broadcast_to(weights, logits.shape)
    n = logits.size
    loss = (w * (np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits))))).sum()
    grad = w * (sigmoid(logits) - targets) / n
    return float(loss / n), grad


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam update with bias correction; arrays without a gradient are skipped."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst: str


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def finite_diff_gradcheck(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-3,
    signature_fn: Callable[[], bytes] | None = None,
    richardson: bool = True,
) -> GradcheckReport:
    """Central differences over every entry of every array in ``params``.

    ``loss_fn`` must be a deterministic function of the arrays (perturbed in
    place).  With ``richardson`` the steps ``eps`` and ``eps/2`` are combined
    to cancel the O(eps^2) truncation term, which otherwise dominates for
    batch-norm nets on small batches.  If ``signature_fn`` reports the ReLU
    sign pattern, entries whose perturbed evaluations straddle a kink are
    retried with a much smaller step and skipped if they still straddle one.
    """
    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        ana = np.asarray(analytic[name]).reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            num = None
            for step in (eps, eps * 1e-3):
                steps = (step, step / 2) if richardson else (step,)
                diffs, sigs = [], set()
                for h in steps:
                    flat[k] = orig + h
                    lp = loss_fn()
                    if signature_fn:
                        sigs.add(signature_fn())
                    flat[k] = orig - h
                    lm = loss_fn()
                    if signature_fn:
                        sigs.add(signature_fn())
                    diffs.append((lp - lm) / (2 * h))
                flat[k] = orig
                if len(sigs) <= 1:
                    num = (4 * diffs[1] - diffs[0]) / 3 if richardson else diffs[0]
                    break
            if num is None:
                skipped += 1
                continue
            err = float(relative_error(ana[k], num))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{k}]"
    return GradcheckReport(worst, checked, skipped, worst_name)


def relu_signature(params: MlpParams, batch, mode: str = "train") -> bytes:
    _, cache = mlp_forward(params, batch, mode)
    return b"".join(
        np.packbits(s["z"] > 0).tobytes()
        for s, l in zip(cache.steps, params.layers)
        if l.activation == "relu"
    )


def save_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

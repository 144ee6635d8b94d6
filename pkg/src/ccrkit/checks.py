"""Finite-difference gradient checks for the three trainable networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import nn
from .cmdclf import init_classifier
from .corpus import COMMAND_TYPES
from .fusion import init_fusion
from .grammar import expand_icao
from .matcher import init_matcher, pair_loss

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    report: nn.GradcheckReport

    @property
    def ok(self) -> bool:
        return self.report.max_rel_error < TOLERANCE


def _warm_batchnorm(params: nn.MlpParams, x: np.ndarray) -> None:
    # non-trivial running statistics and affine terms so every path is exercised
    rng = np.random.default_rng(5)
    for layer in params.layers:
        if layer.batchnorm is not None:
            layer.batchnorm.gamma[:] = rng.uniform(0.5, 1.5, layer.batchnorm.gamma.shape)
            layer.batchnorm.beta[:] = rng.normal(0.0, 0.1, layer.batchnorm.beta.shape)
    nn.mlp_forward(params, x, "train")


def check_fusion(seed: int = 0, batch: int = 8, corrupt: bool = False, eps: float = 3e-3) -> CheckResult:
    """Full-size fusion net (6-64-64-32-16-1 with batch-norm) under weighted BCE."""
    rng = np.random.default_rng([seed, 90])
    model = init_fusion(seed)
    x = rng.normal(size=(batch, 6))
    y = (rng.random((batch, 1)) < 0.3).astype(float)
    w = np.where(y > 0, 3.0, 1.0)
    _warm_batchnorm(model.net, x)

    def loss_fn():
        model.net.version += 1
        probs, _ = nn.mlp_forward(model.net, x, "train")
        return nn.bce_loss(probs, y, w)[0]

    model.net.version += 1
    probs, cache = nn.mlp_forward(model.net, x, "train")
    grads, _ = nn.mlp_backward(model.net, cache, nn.bce_loss(probs, y, w)[1])
    if corrupt:
        grads = _corrupted(grads)
    report = nn.finite_diff_gradcheck(
        loss_fn, model.net.named_arrays(), grads, eps=eps,
        signature_fn=lambda: nn.relu_signature(model.net, x, "train"),
    )
    return CheckResult("fusion", report)


def check_matcher(seed: int = 0, n_buckets: int = 64, embed_dim: int = 8, dim: int = 8,
                  corrupt: bool = False) -> CheckResult:
    """Matcher encoder (embedding bag, projection, L2 norm) under the contrastive loss.

    Uses a reduced vocabulary and width so every entry can be perturbed quickly.
    """
    model = init_matcher(seed, n_buckets, embed_dim, dim)
    signs = ["RYR124", "DLH4LE", "CSA503", "BAW12", "AFR9"]
    texts = [tuple(expand_icao(s)) for s in signs]
    left = [texts[0] + ("climb",), texts[1], texts[2] + ("turn", "left"), texts[3]]
    right = [texts[0], texts[4], texts[2], texts[1]]
    labels = [True, False, True, False]

    def loss_fn():
        model.projection.version += 1
        return pair_loss(model, left, right, labels)

    # train-mode forward without batch-norm equals eval mode
    _, grads = pair_loss(model, left, right, labels, with_grad=True)
    if corrupt:
        grads = _corrupted(grads)

    def signature():
        bags = model.bags(left + right)
        pooled = nn.embedding_bag_forward(model.embedding, bags)
        # the contrastive hinge is a kink too
        y, _ = nn.l2_normalize(nn.mlp_forward(model.projection, pooled)[0])
        b = len(left)
        sims = (y[:b] * y[b:]).sum(axis=1)
        hinge = np.packbits(sims > model.margin).tobytes()
        return nn.relu_signature(model.projection, pooled, "eval") + hinge

    report = nn.finite_diff_gradcheck(loss_fn, model.named_arrays(), grads, signature_fn=signature)
    return CheckResult("matcher", report)


def check_classifier(seed: int = 0, n_features: int = 64, hidden: int = 16, batch: int = 6,
                     corrupt: bool = False) -> CheckResult:
    """Command-classifier head on sparse count features (reduced input width)."""
    rng = np.random.default_rng([seed, 91])
    model = init_classifier(seed, n_features, hidden)
    x = sp.csr_matrix(rng.poisson(0.3, size=(batch, n_features)).astype(float))
    y = (rng.random((batch, len(COMMAND_TYPES))) < 0.3).astype(float)

    def loss_fn():
        model.head.version += 1
        return nn.bce_loss(nn.mlp_forward(model.head, x, "train")[0], y)[0]

    model.head.version += 1
    probs, cache = nn.mlp_forward(model.head, x, "train")
    grads, _ = nn.mlp_backward(model.head, cache, nn.bce_loss(probs, y)[1])
    if corrupt:
        grads = _corrupted(grads)
    report = nn.finite_diff_gradcheck(
        loss_fn, model.head.named_arrays(), grads,
        signature_fn=lambda: nn.relu_signature(model.head, x, "train"),
    )
    return CheckResult("cmdclf", report)


def _corrupted(grads: dict) -> dict:
    """Negative control: scale one gradient array so the check must fail."""
    out = {k: v.copy() for k, v in grads.items()}
    key = sorted(out)[0]
    out[key] = out[key] * 1.5 + 1e-3
    return out


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check_fusion(seed), check_matcher(seed), check_classifier(seed)]

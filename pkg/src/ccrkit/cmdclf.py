"""Multi-label command-type classifier over hashed word and character n-grams."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .corpus import COMMAND_TYPES, Sample

log = logging.getLogger(__name__)

N_FEATURES = 4096


def char_ngrams(word: str, n: int = 3) -> list[str]:
    padded = f"<{word}>"
    return [padded[i : i + n] for i in range(max(1, len(padded) - n + 1))]


def ngram_features(tokens: Sequence[str] | None) -> list[str]:
    # sub-word trigrams keep near-miss substitutions ("climb" -> "clime") informative
    tokens = list(tokens or ())
    feats = [f"u:{w}" for w in tokens] + [f"b:{a} {b}" for a, b in zip(tokens, tokens[1:])]
    feats += [f"c:{g}" for w in tokens for g in char_ngrams(w)]
    return feats


def featurize(tokens: Sequence[str] | None, n_features: int = N_FEATURES) -> sp.csr_matrix:
    """Hashed word unigram, bigram and character trigram counts as a ``(1, n_features)`` row."""
    return featurize_many([tokens], n_features)


def featurize_many(texts, n_features: int = N_FEATURES) -> sp.csr_matrix:
    rows, cols = [], []
    for r, t in enumerate(texts):
        for f in ngram_features(t):
            rows.append(r)
            cols.append(zlib.crc32(f.encode("utf-8")) % n_features)
    vals = np.ones(len(rows))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(texts), n_features))


def label_matrix(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([[c in s.commands for c in COMMAND_TYPES] for s in samples], dtype=float)


@dataclass
class CommandClassifierModel:
    head: nn.MlpParams
    threshold: float = 0.5
    n_features: int = N_FEATURES
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head.dims[-1] != len(COMMAND_TYPES):
            raise nn.ShapeError("classifier output must have one unit per command type")

    def copy(self) -> "CommandClassifierModel":
        return CommandClassifierModel(self.head.copy(), self.threshold, self.n_features, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "kind": "cmdclf",
            "format_version": nn.CHECKPOINT_VERSION,
            "threshold": self.threshold,
            "n_features": self.n_features,
            "head": self.head.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CommandClassifierModel":
        if d.get("kind") != "cmdclf":
            raise ValueError("not a command-classifier checkpoint")
        return cls(nn.MlpParams.from_dict(d["head"]), d["threshold"], d["n_features"], d["meta"])


def init_classifier(seed: int, n_features: int = N_FEATURES, hidden: int = 128) -> CommandClassifierModel:
    head = nn.init_mlp([n_features, hidden, hidden, len(COMMAND_TYPES)], seed,
                       output_activation="sigmoid")
    return CommandClassifierModel(head, n_features=n_features, meta={"seed": seed, "epochs": 0})


def _loss(model, x, y, with_grad=False):
    probs, cache = nn.mlp_forward(model.head, x, "train" if with_grad else "eval")
    loss, dprobs = nn.bce_loss(probs, y)
    if not with_grad:
        return loss
    grads, _ = nn.mlp_backward(model.head, cache, dprobs)
    return loss, grads


@dataclass
class ClassifierTrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    hidden: int = 128
    n_features: int = N_FEATURES


def train_classifier(
    train: Sequence[Sample],
    val: Sequence[Sample],
    config: ClassifierTrainConfig = ClassifierTrainConfig(),
    seed: int = 0,
    meta: dict | None = None,
    resample: Callable[[int], Sequence[Sample]] | None = None,
) -> CommandClassifierModel:
    """BCE training with Adam; the lowest-validation-loss snapshot is returned.

    ``resample(epoch)``, when given, supplies a fresh noisy view of the training
    set for each epoch (same samples, same order).
    """
    train = [s for s in train if s.transcript is not None]
    val = [s for s in val if s.transcript is not None]
    if not train or not val:
        raise ValueError("train and val splits need transcripts")
    model = init_classifier(seed, config.n_features, config.hidden)
    model.meta.update(meta or {})
    x = featurize_many([s.transcript for s in train], config.n_features)
    y = label_matrix(train)
    vx = featurize_many([s.transcript for s in val], config.n_features)
    vy = label_matrix(val)
    best_loss = _loss(model, vx, vy)
    best = model.copy()
    best.meta["val_loss"] = best_loss
    state = nn.AdamState()
    params = model.head.named_arrays()
    for epoch in range(config.epochs):
        if resample is not None and epoch > 0:
            view = [s for s in resample(epoch) if s.transcript is not None]
            x, y = featurize_many([s.transcript for s in view], config.n_features), label_matrix(view)
        order = np.random.default_rng([seed, 5, epoch]).permutation(x.shape[0])
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            loss, grads = _loss(model, x[idx], y[idx], with_grad=True)
            if not np.isfinite(loss):
                raise nn.TrainingError(f"classifier loss diverged at epoch {epoch}")
            nn.adam_step(params, grads, state, lr=config.lr)
            model.head.version += 1
        vloss = _loss(model, vx, vy)
        log.debug("cmdclf epoch %d val loss %.4f", epoch, vloss)
        if vloss < best_loss:
            best_loss = vloss
            best = model.copy()
            best.meta.update(epochs=epoch + 1, val_loss=vloss)
    best.meta["epochs_run"] = config.epochs
    return best


def predict_proba(model: CommandClassifierModel, texts) -> np.ndarray:
    x = featurize_many([t or () for t in texts], model.n_features)
    return nn.mlp_forward(model.head, x, "eval")[0]


def labels_from_proba(model: CommandClassifierModel, tokens, probs) -> frozenset[str]:
    # an empty transcript carries no evidence: fall back to naive pooling downstream
    if not tokens:
        return frozenset()
    return frozenset(c for c, p in zip(COMMAND_TYPES, probs) if p >= model.threshold)


def predict_commands(model: CommandClassifierModel, tokens: Sequence[str] | None):
    """``(labels, probabilities)``; labels are the types at or above the threshold."""
    probs = predict_proba(model, [tokens])[0]
    return labels_from_proba(model, tokens, probs), probs


def predict_many(model: CommandClassifierModel, texts) -> list[frozenset[str]]:
    probs = predict_proba(model, texts)
    return [labels_from_proba(model, t, p) for t, p in zip(texts, probs)]


def f1_scores(gold: Sequence[frozenset], pred: Sequence[frozenset]) -> dict[str, float]:
    out = {}
    for c in COMMAND_TYPES:
        tp = sum(c in g and c in p for g, p in zip(gold, pred))
        fp = sum(c not in g and c in p for g, p in zip(gold, pred))
        fn = sum(c in g and c not in p for g, p in zip(gold, pred))
        out[c] = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    return out

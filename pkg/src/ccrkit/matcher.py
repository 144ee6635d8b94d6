"""Contrastive call-sign matcher.

A shared encoder maps both the transcript and each candidate's spoken
call-sign to a unit vector; candidates are ranked one at a time by cosine
similarity, so any number of candidates can be scored.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .corpus import Sample, SurveillanceScene
from .grammar import DesignatorTable, default_table, expand_icao

log = logging.getLogger(__name__)

UNKNOWN = 0


def char_trigrams(tokens: Sequence[str]) -> list[str]:
    """Trigrams of ``^w1 w2 ...$``; spaces mark word boundaries."""
    if not tokens:
        return []
    s = "^" + " ".join(tokens) + "$"
    return [s[i : i + 3] for i in range(len(s) - 2)]


def bucket(feature: str, n_buckets: int) -> int:
    # row 0 is reserved for the unknown/empty feature
    return 1 + zlib.crc32(feature.encode("utf-8")) % (n_buckets - 1)


@dataclass(frozen=True)
class ScoredCandidate:
    callsign: str
    index: int
    sim: float | None = None
    dis: float | None = None
    fused: float | None = None


@dataclass
class MatcherModel:
    embedding: np.ndarray  # (n_buckets, embed_dim)
    projection: nn.MlpParams
    margin: float = 0.5
    meta: dict = field(default_factory=dict)
    table: DesignatorTable | None = None
    _bags: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_buckets(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.projection.dims[-1]

    def bag(self, tokens: Sequence[str]) -> dict[int, float]:
        key = tuple(tokens)
        hit = self._bags.get(key)
        if hit is None:
            grams = char_trigrams(key)
            counts: dict[int, float] = {}
            if not grams:
                counts[UNKNOWN] = 1.0
            for g in grams:
                b = bucket(g, self.n_buckets)
                counts[b] = counts.get(b, 0.0) + 1.0 / len(grams)
            hit = self._bags[key] = counts
        return hit

    def bags(self, texts: Sequence[Sequence[str]]) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for r, t in enumerate(texts):
            for c, v in self.bag(t).items():
                rows.append(r)
                cols.append(c)
                vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(texts), self.n_buckets))

    def expansion(self, icao: str) -> tuple[str, ...]:
        return tuple(expand_icao(icao, self.table))

    def copy(self) -> "MatcherModel":
        return MatcherModel(
            self.embedding.copy(), self.projection.copy(), self.margin, dict(self.meta), self.table
        )

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding}
        out.update({f"proj.{k}": v for k, v in self.projection.named_arrays().items()})
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "matcher",
            "format_version": nn.CHECKPOINT_VERSION,
            "n_buckets": self.n_buckets,
            "embed_dim": int(self.embedding.shape[1]),
            "embedding": self.embedding.ravel().tolist(),
            "projection": self.projection.to_dict(),
            "margin": self.margin,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict, table: DesignatorTable | None = None) -> "MatcherModel":
        if d.get("kind") != "matcher":
            raise ValueError("not a matcher checkpoint")
        emb = np.array(d["embedding"], dtype=float).reshape(d["n_buckets"], d["embed_dim"])
        return cls(emb, nn.MlpParams.from_dict(d["projection"]), d["margin"], d["meta"], table)


def init_matcher(
    seed: int,
    n_buckets: int = 8192,
    embed_dim: int = 64,
    dim: int = 64,
    margin: float = 0.5,
    table: DesignatorTable | None = None,
    init_scale: float = 1.0,
) -> MatcherModel:
    rng = np.random.default_rng([seed, 1000])
    emb = rng.normal(0.0, init_scale, size=(n_buckets, embed_dim))
    proj = nn.init_mlp([embed_dim, dim, dim], seed)
    return MatcherModel(emb, proj, margin, {"seed": seed, "epochs": 0}, table)


def _forward(model: MatcherModel, texts, mode="eval"):
    bags = model.bags(texts)
    pooled = nn.embedding_bag_forward(model.embedding, bags)
    z, cache = nn.mlp_forward(model.projection, pooled, mode)
    y, norm = nn.l2_normalize(z)
    return y, (bags, cache, y, norm)


def _backward(model: MatcherModel, saved, grad_y):
    bags, cache, y, norm = saved
    gz = nn.l2_normalize_backward(y, norm, grad_y)
    grads, gpooled = nn.mlp_backward(model.projection, cache, gz)
    out = {f"proj.{k}": v for k, v in grads.items()}
    out["embedding"] = nn.embedding_bag_backward(bags, gpooled)
    return out


def encode(model: MatcherModel, tokens: Sequence[str]) -> np.ndarray:
    return _forward(model, [tuple(tokens)])[0][0]


def encode_many(model: MatcherModel, texts) -> np.ndarray:
    return _forward(model, [tuple(t) for t in texts])[0]


def pair_loss(model: MatcherModel, left, right, labels, with_grad=False):
    """Mean contrastive loss over pairs; optionally with parameter gradients."""
    b = len(left)
    y, saved = _forward(model, list(left) + list(right), "train" if with_grad else "eval")
    sims = np.clip((y[:b] * y[b:]).sum(axis=1), -1.0, 1.0)
    loss, dsim = nn.contrastive_pair_loss(sims, labels, model.margin)
    if not with_grad:
        return float(np.mean(loss))
    dsim = dsim / b
    grad_y = np.concatenate([dsim[:, None] * y[b:], dsim[:, None] * y[:b]])
    return float(np.mean(loss)), _backward(model, saved, grad_y)


def make_pairs(sample: Sample, negatives_per_positive: int = 3, rng=None, table=None):
    """One positive plus up to ``k`` scene negatives; missing transcripts yield nothing."""
    if sample.transcript is None:
        return []
    rng = rng if rng is not None else np.random.default_rng(0)
    scene = sample.scene
    gold = scene.gold_index
    transcript = tuple(sample.transcript)
    pairs = [(transcript, tuple(expand_icao(sample.gold_icao, table)), True)]
    others = [i for i in range(len(scene)) if i != gold]
    k = min(negatives_per_positive, len(others))
    if k:
        for i in rng.choice(others, size=k, replace=False):
            pairs.append((transcript, tuple(expand_icao(scene.planes[i].callsign, table)), False))
    return pairs


def _pairs_for(samples, negatives, seed, table):
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        out.extend(make_pairs(s, negatives, rng, table))
    return out


@dataclass
class MatcherTrainConfig:
    epochs: int = 12
    lr: float = 3e-3
    batch_size: int = 64
    negatives_per_positive: int = 3
    n_buckets: int = 8192
    embed_dim: int = 64
    dim: int = 64
    margin: float = 0.5
    init_scale: float = 1.0


def train_matcher(
    train: Sequence[Sample],
    val: Sequence[Sample],
    config: MatcherTrainConfig = MatcherTrainConfig(),
    seed: int = 0,
    table: DesignatorTable | None = None,
    meta: dict | None = None,
    resample: Callable[[int], Sequence[Sample]] | None = None,
) -> MatcherModel:
    """Adam on the contrastive pair loss; returns the lowest-validation-loss snapshot.

    Negatives are redrawn every epoch; validation pairs are fixed.  ``resample``
    may supply a fresh view of the training split per epoch (e.g. a new noise
    draw at the same target WER).
    """
    if not train or not val:
        raise ValueError("train and val splits must be nonempty")
    model = init_matcher(
        seed, config.n_buckets, config.embed_dim, config.dim, config.margin, table, config.init_scale
    )
    model.meta.update(meta or {})
    val_pairs = _pairs_for(val, config.negatives_per_positive, [seed, 2], table)
    if not val_pairs:
        raise ValueError("validation split has no transcripts")
    vl, vr, vy = zip(*val_pairs)
    best_loss = pair_loss(model, vl, vr, vy)
    best = model.copy()
    best.meta["val_loss"] = best_loss
    state = nn.AdamState()
    params = model.named_arrays()
    for epoch in range(config.epochs):
        view = resample(epoch) if resample is not None else train
        pairs = _pairs_for(view, config.negatives_per_positive, [seed, 3, epoch], table)
        order = np.random.default_rng([seed, 4, epoch]).permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            chunk = [pairs[i] for i in order[start : start + config.batch_size]]
            left, right, labels = zip(*chunk)
            loss, grads = pair_loss(model, left, right, labels, with_grad=True)
            if not np.isfinite(loss):
                raise nn.TrainingError(f"matcher loss diverged at epoch {epoch}")
            nn.adam_step(params, grads, state, lr=config.lr)
            model.projection.version += 1
        vloss = pair_loss(model, vl, vr, vy)
        log.debug("matcher epoch %d val loss %.4f", epoch, vloss)
        if vloss < best_loss:
            best_loss = vloss
            best = model.copy()
            best.meta.update(epochs=epoch + 1, val_loss=vloss)
    best.meta["epochs_run"] = config.epochs
    return best


def scene_sims(model: MatcherModel, tokens: Sequence[str] | None, scene: SurveillanceScene):
    texts = [tuple(tokens or ())] + [model.expansion(c) for c in scene.callsigns]
    y = encode_many(model, texts)
    return np.clip(y[1:] @ y[0], -1.0, 1.0)


def batch_scene_sims(model: MatcherModel, samples: Sequence[Sample]) -> list[np.ndarray]:
    """Sims for many samples with one encoder pass over the unique texts."""
    texts: dict[tuple, int] = {}
    for s in samples:
        texts.setdefault(tuple(s.transcript or ()), len(texts))
        for c in s.scene.callsigns:
            texts.setdefault(model.expansion(c), len(texts))
    y = encode_many(model, list(texts))
    out = []
    for s in samples:
        t = y[texts[tuple(s.transcript or ())]]
        c = y[[texts[model.expansion(c)] for c in s.scene.callsigns]]
        out.append(np.clip(c @ t, -1.0, 1.0))
    return out


def argmax_first(scores: np.ndarray) -> int:
    """Index of the maximum; the lowest index wins ties."""
    return int(np.flatnonzero(scores == scores.max())[0])


def rank_candidates(model: MatcherModel, tokens: Sequence[str] | None, scene: SurveillanceScene):
    """Candidates sorted by similarity (ties by scene order) and the predicted call-sign."""
    if len(scene.planes) == 0:
        raise ValueError("empty scene")
    sims = scene_sims(model, tokens, scene)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    ranked = [ScoredCandidate(scene.callsigns[i], i, float(sims[i])) for i in order]
    return ranked, scene.callsigns[argmax_first(sims)]

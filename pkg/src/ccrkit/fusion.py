"""Per-candidate fusion of transcript similarity and command-distribution scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import nn
from .cdm import Cdm, scene_dis
from .cmdclf import CommandClassifierModel, predict_many
from .corpus import Sample
from .corruption import NoiseConfig, clip_samples, corrupt_samples, drop_transcript
from .matcher import MatcherModel, ScoredCandidate, argmax_first, batch_scene_sims

log = logging.getLogger(__name__)

FUSION_DIMS = (6, 64, 64, 32, 16, 1)
N_FEATURES = FUSION_DIMS[0]


def _rank_fractions(scores: np.ndarray) -> np.ndarray:
    """0 for the best candidate, 1 for the worst; ties keep scene order."""
    n = len(scores)
    if n == 1:
        return np.zeros(1)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    out = np.empty(n)
    out[order] = np.arange(n) / (n - 1)
    return out


def feature_matrix(sims: np.ndarray | None, dis: np.ndarray) -> np.ndarray:
    """Rows ``[sim, dis, sim_rank, dis_rank, 1/N, missing]`` per candidate."""
    dis = np.asarray(dis, dtype=float)
    n = len(dis)
    if n == 0:
        raise ValueError("no candidates")
    out = np.zeros((n, N_FEATURES))
    out[:, 1] = dis
    out[:, 3] = _rank_fractions(dis)
    out[:, 4] = 1.0 / n
    if sims is None:
        out[:, 5] = 1.0
    else:
        out[:, 0] = sims
        out[:, 2] = _rank_fractions(np.asarray(sims, dtype=float))
    return out


def build_features(scored: Sequence[ScoredCandidate], transcript_missing: bool) -> np.ndarray:
    if not scored:
        raise ValueError("no candidates")
    dis = np.array([c.dis if c.dis is not None else 0.0 for c in scored])
    sims = None if transcript_missing else np.array([c.sim for c in scored], dtype=float)
    return feature_matrix(sims, dis)


@dataclass
class FusionModel:
    net: nn.MlpParams
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.net.layers) != 5 or self.net.layers[-1].activation != "sigmoid":
            raise nn.ShapeError("fusion net needs five weight layers and a sigmoid output")

    def copy(self) -> "FusionModel":
        return FusionModel(self.net.copy(), dict(self.meta))

    def to_dict(self) -> dict:
        return {"kind": "fusion", "format_version": nn.CHECKPOINT_VERSION,
                "net": self.net.to_dict(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        if d.get("kind") != "fusion":
            raise ValueError("not a fusion checkpoint")
        return cls(nn.MlpParams.from_dict(d["net"]), d["meta"])


def init_fusion(seed: int) -> FusionModel:
    net = nn.init_mlp(FUSION_DIMS, seed, output_activation="sigmoid", batchnorm=True)
    return FusionModel(net, {"seed": seed, "epochs": 0})


def fused_scores(fusion: FusionModel, features: np.ndarray) -> np.ndarray:
    return nn.mlp_forward(fusion.net, features, "eval")[0][:, 0]


@dataclass
class Components:
    """Upstream stages the fusion net consumes."""

    matcher: MatcherModel
    cmdclf: CommandClassifierModel
    cdm: Cdm


def scene_features(components: Components, samples: Sequence[Sample]) -> list[np.ndarray]:
    """Feature matrices for many samples, batching the encoder and classifier passes."""
    with_text = [s for s in samples if s.transcript is not None]
    sims = iter(batch_scene_sims(components.matcher, with_text))
    labels = iter(predict_many(components.cmdclf, [s.transcript for s in with_text]))
    out = []
    for s in samples:
        if s.transcript is None:
            out.append(feature_matrix(None, scene_dis(components.cdm, s.scene, ())))
        else:
            sim = next(sims)
            out.append(feature_matrix(sim, scene_dis(components.cdm, s.scene, next(labels))))
    return out


def _stack(feats: Sequence[np.ndarray], golds: Sequence[int]):
    x = np.concatenate(feats)
    y = np.concatenate([np.eye(len(f))[g] for f, g in zip(feats, golds)])
    # positives weighted by N-1 to balance one gold against N-1 distractors
    w = np.concatenate([np.where(np.eye(len(f))[g] > 0, len(f) - 1.0, 1.0) for f, g in zip(feats, golds)])
    return x, y[:, None], w[:, None]


def _loss(fusion, x, y, w, with_grad=False):
    probs, cache = nn.mlp_forward(fusion.net, x, "train" if with_grad else "eval")
    loss, dprobs = nn.bce_loss(probs, y, w)
    if not with_grad:
        return loss
    grads, _ = nn.mlp_backward(fusion.net, cache, dprobs)
    return loss, grads


@dataclass
class FusionTrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_scenes: int = 16
    drop_fraction: float = 0.1
    # share of samples given a random clip or noise level so the net sees unreliable sims
    edge_fraction: float = 0.3
    edge_clips: tuple[int, ...] = (2, 3, 4, 5, 6, 7, 8)
    edge_wers: tuple[float, ...] = (0.3, 0.5, 0.7)


def with_edge_cases(samples: Sequence[Sample], config: "FusionTrainConfig", seed) -> list[Sample]:
    """Clip or corrupt a random ``edge_fraction`` of the samples; half each way."""
    rng = np.random.default_rng(seed)
    out = list(samples)
    picked = np.flatnonzero(rng.random(len(out)) < config.edge_fraction)
    if not len(picked):
        return out
    clip_mask = rng.random(len(picked)) < 0.5
    for i in picked[clip_mask]:
        out[i] = clip_samples([out[i]], int(rng.choice(config.edge_clips)))[0]
    noisy = picked[~clip_mask]
    levels = rng.integers(len(config.edge_wers), size=len(noisy))
    for k, wer in enumerate(config.edge_wers):
        idx = noisy[levels == k]
        if len(idx):
            done = corrupt_samples([out[i] for i in idx], NoiseConfig(wer, seed=[*np.atleast_1d(seed), k]))
            for i, smp in zip(idx, done):
                out[i] = smp
    return out


def with_dropped_transcripts(samples: Sequence[Sample], fraction: float, seed) -> list[Sample]:
    rng = np.random.default_rng(seed)
    mask = rng.random(len(samples)) < fraction
    return [drop_transcript(s) if m else s for s, m in zip(samples, mask)]


def train_identifier(
    train: Sequence[Sample],
    val: Sequence[Sample],
    components: Components,
    config: FusionTrainConfig = FusionTrainConfig(),
    seed: int = 0,
    meta: dict | None = None,
) -> FusionModel:
    """Weighted BCE on per-candidate gold targets; best-validation snapshot returned.

    Upstream stages are frozen.  A ``drop_fraction`` of training and
    validation samples lose their transcript so the missing path is trained,
    and an ``edge_fraction`` is clipped or corrupted.
    """
    if not train or not val:
        raise ValueError("train and val splits must be nonempty")
    fusion = init_fusion(seed)
    fusion.meta.update(meta or {})
    train = with_edge_cases(train, config, [seed, 9])
    val = with_edge_cases(val, config, [seed, 10])
    train = with_dropped_transcripts(train, config.drop_fraction, [seed, 6])
    val = with_dropped_transcripts(val, config.drop_fraction, [seed, 7])
    feats = scene_features(components, train)
    golds = [s.scene.gold_index for s in train]
    vx, vy, vw = _stack(scene_features(components, val), [s.scene.gold_index for s in val])
    best_loss = _loss(fusion, vx, vy, vw)
    best = fusion.copy()
    best.meta["val_loss"] = best_loss
    state = nn.AdamState()
    params = fusion.net.named_arrays()
    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, 8, epoch]).permutation(len(feats))
        for start in range(0, len(order), config.batch_scenes):
            idx = order[start : start + config.batch_scenes]
            x, y, w = _stack([feats[i] for i in idx], [golds[i] for i in idx])
            if len(x) < 2:
                continue
            loss, grads = _loss(fusion, x, y, w, with_grad=True)
            if not np.isfinite(loss):
                raise nn.TrainingError(f"fusion loss diverged at epoch {epoch}")
            nn.adam_step(params, grads, state, lr=config.lr)
            fusion.net.version += 1
        vloss = _loss(fusion, vx, vy, vw)
        log.debug("fusion epoch %d val loss %.4f", epoch, vloss)
        if vloss < best_loss:
            best_loss = vloss
            best = fusion.copy()
            best.meta.update(epochs=epoch + 1, val_loss=vloss)
    best.meta["epochs_run"] = config.epochs
    return best


def identify(sample: Sample, components: Components, fusion: FusionModel):
    """Predicted ICAO call-sign and the candidates sorted by fused score."""
    if len(sample.scene.planes) == 0:
        raise ValueError("empty scene")
    feats = scene_features(components, [sample])[0]
    scores = fused_scores(fusion, feats)
    missing = sample.transcript is None
    scored = [
        ScoredCandidate(c, i, None if missing else float(feats[i, 0]), float(feats[i, 1]), float(scores[i]))
        for i, c in enumerate(sample.scene.callsigns)
    ]
    ranked = sorted(scored, key=lambda c: (-c.fused, c.index))
    return sample.scene.callsigns[argmax_first(scores)], ranked


def identify_many(samples: Sequence[Sample], components: Components, fusion: FusionModel) -> list[str]:
    out = []
    for s, f in zip(samples, scene_features(components, samples)):
        out.append(s.scene.callsigns[argmax_first(fused_scores(fusion, f))])
    return out

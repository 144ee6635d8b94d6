import numpy as np
import pytest

from ccrkit import nn
from ccrkit.corpus import SurveillanceScene
from ccrkit.corruption import drop_transcript
from ccrkit.experiments import random_baseline
from ccrkit.fusion import (
    FUSION_DIMS,
    Components,
    FusionModel,
    FusionTrainConfig,
    feature_matrix,
    fused_scores,
    identify,
    identify_many,
    init_fusion,
    scene_features,
    train_identifier,
)
from ccrkit.matcher import init_matcher, rank_candidates


def test_single_candidate_features():
    f = feature_matrix(np.array([0.4]), np.array([0.7]))
    assert f[0, 2] == 0 and f[0, 3] == 0 and f[0, 4] == 1


def test_missing_transcript_features():
    f = feature_matrix(None, np.array([0.2, 0.9, 0.5]))
    assert not f[:, 0].any() and not f[:, 2].any()
    assert np.all(f[:, 5] == 1)
    np.testing.assert_allclose(f[:, 3], [1.0, 0.0, 0.5])


def test_sim_rank_fractions():
    f = feature_matrix(np.array([0.9, 0.1]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(f[:, 2], [0.0, 1.0])
    np.testing.assert_array_equal(f[:, 4], [0.5, 0.5])


def test_feature_matrix_rejects_empty():
    with pytest.raises(ValueError):
        feature_matrix(None, np.array([]))


def test_architecture():
    m = init_fusion(0)
    assert m.net.dims == list(FUSION_DIMS)
    assert [l.batchnorm is not None for l in m.net.layers] == [True, True, True, True, False]
    assert m.net.layers[-1].activation == "sigmoid"
    with pytest.raises(nn.ShapeError):
        FusionModel(nn.init_mlp([6, 1], 0))


def test_zero_epochs_returns_initial(splits, components):
    train, val, _ = splits
    m = train_identifier(train[:30], val[:10], components, FusionTrainConfig(epochs=0), seed=3)
    ref = init_fusion(3)
    for a, b in zip(m.net.layers, ref.net.layers):
        assert np.array_equal(a.weight, b.weight)


def test_training_is_deterministic(splits, components):
    train, val, _ = splits
    cfg = FusionTrainConfig(epochs=1)
    a = train_identifier(train[:60], val[:20], components, cfg, seed=4)
    b = train_identifier(train[:60], val[:20], components, cfg, seed=4)
    assert a.to_dict() == b.to_dict()


def test_validation_loss_drops(clean_fusion):
    assert clean_fusion.meta["epochs"] > 0


def test_single_candidate_any_model(splits, components):
    from ccrkit.experiments import resize_scene
    s = resize_scene(splits[2][0], 1, 0)
    assert identify(s, components, init_fusion(9))[0] == s.gold_icao


def test_scores_in_open_unit_interval(clean_fusion, components, splits):
    for f in scene_features(components, splits[2][:20]):
        p = fused_scores(clean_fusion, f)
        assert np.all((p > 0) & (p < 1))


def test_missing_transcript_ignores_matcher(clean_fusion, components, splits):
    dropped = [drop_transcript(s) for s in splits[2][:30]]
    other = Components(init_matcher(42), components.cmdclf, components.cdm)
    assert identify_many(dropped, components, clean_fusion) == identify_many(dropped, other, clean_fusion)


def _sim_passthrough() -> FusionModel:
    """A fusion net whose output is an increasing function of the sim feature alone."""
    net = init_fusion(0).net
    for i, layer in enumerate(net.layers):
        layer.weight[:] = 0.0
        layer.bias[:] = 0.0
        layer.weight[0, 0] = 1.0
        if i == 0:
            layer.bias[0] = 2.0  # keep sims in [-1, 1] above the ReLU kink
    net.version += 1
    return FusionModel(net)


def test_sim_passthrough_agrees_with_matcher_ranking(components, splits):
    fusion = _sim_passthrough()
    for s in splits[2][:25]:
        assert identify(s, components, fusion)[0] == rank_candidates(components.matcher, s.transcript, s.scene)[1]


def test_permutation_invariance(clean_fusion, components, splits):
    for k, s in enumerate(splits[2][:10]):
        perm = np.random.default_rng(k).permutation(len(s.scene))
        planes = tuple(s.scene.planes[i] for i in perm)
        shuffled = type(s)(s.id, s.transcript, s.gold_icao,
                           SurveillanceScene(planes, int(np.flatnonzero(perm == s.scene.gold_index)[0])),
                           s.commands, s.provenance)
        assert identify(s, components, clean_fusion)[0] == identify(shuffled, components, clean_fusion)[0]


def test_ranked_output_is_sorted(clean_fusion, components, splits):
    pred, ranked = identify(splits[2][0], components, clean_fusion)
    assert ranked[0].callsign == pred
    fused = [c.fused for c in ranked]
    assert fused == sorted(fused, reverse=True)


def test_missing_transcript_beats_chance(clean_fusion, components, splits):
    dropped = [drop_transcript(s) for s in splits[2]]
    preds = identify_many(dropped, components, clean_fusion)
    acc = np.mean([p == s.gold_icao for p, s in zip(preds, dropped)])
    chance = np.mean([1 / len(s.scene) for s in dropped])
    assert acc > chance + 0.05
    assert random_baseline([s.scene for s in dropped], 0) < acc


def test_checkpoint_round_trip(clean_fusion, components, splits):
    back = FusionModel.from_dict(clean_fusion.to_dict())
    samples = splits[2][:10]
    assert identify_many(samples, components, back) == identify_many(samples, components, clean_fusion)

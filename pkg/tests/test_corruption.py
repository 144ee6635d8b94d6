import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccrkit.corruption import (
    MAX_TARGET_WER,
    NoiseConfig,
    NoiseConfigError,
    NoiseInjector,
    clip_samples,
    clip_words,
    corrupt_samples,
    default_pool,
    drop_transcript,
    inject_asr_noise,
)
from ccrkit.grammar import word_error_rate


def corpus_wer(refs, hyps):
    return float(np.mean([word_error_rate(r, h) for r, h in zip(refs, hyps)]))


@pytest.fixture(scope="module")
def transcripts():
    from ccrkit.corpus import generate_corpus
    return [list(s.transcript) for s in generate_corpus(21, 1000)]


def test_zero_target_is_identity(transcripts):
    assert inject_asr_noise(transcripts[:50], NoiseConfig(0.0)) == transcripts[:50]


def test_target_40_lands_in_band(transcripts):
    noisy = inject_asr_noise(transcripts, NoiseConfig(0.40, seed=3))
    assert 0.38 <= corpus_wer(transcripts, noisy) <= 0.42


def test_fixed_seed_is_bit_identical(transcripts):
    cfg = NoiseConfig(0.3, seed=9)
    assert inject_asr_noise(transcripts[:200], cfg) == inject_asr_noise(transcripts[:200], cfg)
    assert inject_asr_noise(transcripts[:200], cfg) != inject_asr_noise(transcripts[:200], NoiseConfig(0.3, seed=10))


def test_injector_draws_differ_by_seed_but_keep_rate(transcripts):
    inj = NoiseInjector(transcripts, NoiseConfig(0.5, seed=1))
    a, b = inj(transcripts, 1), inj(transcripts, 2)
    assert a != b
    assert abs(corpus_wer(transcripts, a) - corpus_wer(transcripts, b)) < 0.02


def test_noisy_words_come_from_pool(transcripts):
    pool = default_pool(transcripts)
    noisy = inject_asr_noise(transcripts[:300], NoiseConfig(0.6, seed=4))
    assert {w for t in noisy for w in t} <= pool


@pytest.mark.parametrize("kwargs", [
    {"target_wer": -0.1}, {"target_wer": MAX_TARGET_WER + 0.01},
    {"target_wer": 0.2, "op_mix": (0.5, 0.5, 0.5)}, {"target_wer": 0.2, "p_confusable": 2.0},
])
def test_invalid_config(kwargs):
    with pytest.raises(NoiseConfigError):
        NoiseConfig(**kwargs)


def test_empty_transcript_rejected():
    with pytest.raises(NoiseConfigError):
        inject_asr_noise([["a", "b"], []], NoiseConfig(0.3))


def test_corrupt_samples_keeps_scene_labels_gold(small_corpus):
    samples = small_corpus[:60]
    noisy = corrupt_samples(samples, NoiseConfig(0.5, seed=2))
    assert any(n.transcript != s.transcript for n, s in zip(noisy, samples))
    for n, s in zip(noisy, samples):
        assert (n.scene, n.commands, n.gold_icao, n.id) == (s.scene, s.commands, s.gold_icao, s.id)
        assert n.provenance["target_wer"] == 0.5


def test_corrupt_samples_skips_dropped(small_corpus):
    samples = [drop_transcript(small_corpus[0])] + small_corpus[1:5]
    out = corrupt_samples(samples, NoiseConfig(0.4, seed=1))
    assert out[0] is samples[0]


def test_clip_examples():
    t = ["lufthansa", "one", "two", "four", "lima", "echo"]
    assert clip_words(t, 3) == ["four", "lima", "echo"]
    assert clip_words(t, 0) == t
    assert clip_words(t, len(t) + 5) == []
    assert clip_words(None, 2) is None
    with pytest.raises(ValueError):
        clip_words(t, -1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text("abc", min_size=1, max_size=3), max_size=12), st.integers(0, 15), st.integers(0, 15))
def test_clip_composes(t, a, b):
    assert clip_words(clip_words(t, a), b) == clip_words(t, a + b)


def test_clip_samples_records_provenance(small_corpus):
    out = clip_samples(clip_samples(small_corpus[:5], 2), 1)
    for o, s in zip(out, small_corpus[:5]):
        assert o.transcript == s.transcript[3:]
        assert o.provenance["clipped_words"] == 3
        assert o.scene == s.scene


def test_drop_transcript(small_corpus):
    s = small_corpus[0]
    d = drop_transcript(s)
    assert d.transcript is None
    assert d.scene.planes == s.scene.planes
    assert drop_transcript(d) == d
    assert d.provenance["transcript_dropped"] is True


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.3, 0.6]))
def test_noise_is_deterministic_per_seed(seed, wer):
    refs = [["ryanair", "one", "two", "turn", "right"], ["good", "morning", "lufthansa", "four"]] * 5
    cfg = NoiseConfig(wer, seed=seed, calibration_size=20)
    assert inject_asr_noise(refs, cfg) == inject_asr_noise(refs, cfg)

"""Edge-case transcript conditions: calibrated ASR noise, front clipping, dropping."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sample
from .grammar import edit_distance, word_error_rate

MAX_TARGET_WER = 0.9
# confusable words are drawn with weight exp(-decay * edit distance)
CONFUSION_DECAY = 1.5


class NoiseConfigError(ValueError):
    pass


@lru_cache(maxsize=1)
def bundled_pool() -> tuple[str, ...]:
    text = resources.files("ccrkit.data").joinpath("asr_pool.txt").read_text("utf-8")
    return tuple(
        sorted({w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#")})
    )


@dataclass(frozen=True)
class NoiseConfig:
    target_wer: float
    op_mix: tuple[float, float, float] = (0.6, 0.2, 0.2)  # substitute, delete, insert
    confusion_pool: tuple[str, ...] = ()
    seed: int = 0
    p_confusable: float = 0.5
    calibration_size: int = 200
    rate_tolerance: float = 0.005

    def __post_init__(self):
        if not 0.0 <= self.target_wer <= MAX_TARGET_WER:
            raise NoiseConfigError(f"target_wer must lie in [0, {MAX_TARGET_WER}]")
        if len(self.op_mix) != 3 or min(self.op_mix) < 0 or abs(sum(self.op_mix) - 1) > 1e-9:
            raise NoiseConfigError("op_mix must be three probabilities summing to 1")
        if not 0.0 <= self.p_confusable <= 1.0:
            raise NoiseConfigError("p_confusable must be a probability")


class _Pool:
    def __init__(self, words: Iterable[str]):
        self.words = tuple(sorted(set(words)))
        if not self.words:
            raise NoiseConfigError("confusion pool is empty")
        self._confusable: dict[str, tuple[str, ...]] = {}

    def confusable(self, word: str) -> tuple[tuple[str, ...], np.ndarray]:
        """Same first letter or within edit distance 2; closer words are likelier."""
        hit = self._confusable.get(word)
        if hit is None:
            near, dist = [], []
            for w in self.words:
                if w == word:
                    continue
                d = edit_distance(w, word)
                if d <= 2 or w[0] == word[0]:
                    near.append(w)
                    dist.append(d)
            cdf = np.cumsum(np.exp(-CONFUSION_DECAY * np.array(dist, dtype=float)))
            hit = self._confusable[word] = (tuple(near), cdf / cdf[-1] if near else cdf)
        return hit

    def other(self, word: str, u: float) -> str:
        choices = self.words
        i = int(u * len(choices)) % len(choices)
        if choices[i] == word:
            i = (i + 1) % len(choices)
        return choices[i]


def _apply(tokens: Sequence[str], rate: float, draws: np.ndarray, cfg: NoiseConfig, pool: _Pool):
    """Edit ``tokens`` word by word; ``draws`` holds 4 uniforms per word.

    The same draws are reused across rates so the set of edited words grows
    monotonically with ``rate``.
    """
    p_sub, p_del, _ = cfg.op_mix
    out: list[str] = []
    for word, (u_hit, u_op, u_conf, u_pick) in zip(tokens, draws):
        if u_hit >= rate:
            out.append(word)
        elif u_op < p_sub:
            near, cdf = pool.confusable(word)
            if near and u_conf < cfg.p_confusable:
                out.append(near[min(int(np.searchsorted(cdf, u_pick)), len(near) - 1)])
            else:
                out.append(pool.other(word, u_pick))
        elif u_op < p_sub + p_del:
            continue
        else:
            out.append(word)
            out.append(pool.other(word, u_pick))
    return out


def _corpus_wer(refs, hyps) -> float:
    return float(np.mean([word_error_rate(r, h) for r, h in zip(refs, hyps)]))


def _draws(rng: np.random.Generator, transcripts) -> list[np.ndarray]:
    return [rng.random((len(t), 4)) for t in transcripts]


def calibrate_rate(transcripts: Sequence[Sequence[str]], config: NoiseConfig, pool=None) -> float:
    """Per-word edit rate whose corpus-mean WER on ``transcripts`` hits the target."""
    transcripts = [t for t in transcripts if t]
    if config.target_wer == 0.0 or not transcripts:
        return 0.0
    pool = pool or _Pool(_default_words(transcripts, config))
    draws = _draws(np.random.default_rng([config.seed, 7919]), transcripts)
    lo, hi = 0.0, 1.0
    while hi - lo > config.rate_tolerance:
        mid = 0.5 * (lo + hi)
        hyps = [_apply(t, mid, d, config, pool) for t, d in zip(transcripts, draws)]
        if _corpus_wer(transcripts, hyps) < config.target_wer:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=4)
def fragment_words(n: int = 1500, seed: int = 20240) -> tuple[str, ...]:
    """Pronounceable out-of-domain fragments of the kind a struggling recognizer emits."""
    rng = np.random.default_rng(seed)
    onsets = "b c d f g h k l m n p r s t v w z br dr fr gr kr pr st tr sh ch".split()
    vowels = "a e i o u ai ea ou".split()
    codas = ["", "", "n", "r", "s", "t", "l", "m", "k"]
    out: set[str] = set()
    while len(out) < n:
        word = "".join(
            onsets[rng.integers(len(onsets))]
            + vowels[rng.integers(len(vowels))]
            + codas[rng.integers(len(codas))]
            for _ in range(int(rng.integers(1, 4)))
        )
        out.add(word)
    return tuple(sorted(out))


def default_pool(transcripts) -> set[str]:
    """Corpus vocabulary, bundled near-homophones and out-of-domain fragments."""
    vocab = {w for t in transcripts for w in t}
    return vocab | set(bundled_pool()) | set(fragment_words())


def _default_words(transcripts, config: NoiseConfig) -> set[str]:
    if config.confusion_pool:
        return set(config.confusion_pool)
    return default_pool(transcripts)


class NoiseInjector:
    """Calibrate once on a corpus, then draw any number of independent corruptions."""

    def __init__(self, transcripts: Sequence[Sequence[str]], config: NoiseConfig):
        self.config = config
        self.pool = _Pool(_default_words(transcripts, config))
        self.rate = 0.0
        if config.target_wer > 0.0 and transcripts:
            rng = np.random.default_rng([config.seed, 1])
            pick = rng.choice(len(transcripts), size=config.calibration_size, replace=True)
            self.rate = calibrate_rate([transcripts[i] for i in pick], config, self.pool)

    def __call__(self, transcripts: Sequence[Sequence[str]], seed) -> list[list[str]]:
        if any(len(t) == 0 for t in transcripts):
            raise NoiseConfigError("cannot corrupt an empty transcript")
        if self.rate == 0.0:
            return [list(t) for t in transcripts]
        draws = _draws(np.random.default_rng(seed), transcripts)
        return [_apply(t, self.rate, d, self.config, self.pool) for t, d in zip(transcripts, draws)]


def inject_asr_noise(
    transcripts: Sequence[Sequence[str]], config: NoiseConfig
) -> list[list[str]]:
    """Corrupt a corpus of transcripts to the configured mean WER.

    The edit rate is calibrated on a batch of ``config.calibration_size``
    transcripts drawn from the corpus, then applied i.i.d. per word.
    """
    if config.target_wer == 0.0:
        return [list(t) for t in transcripts]
    if any(len(t) == 0 for t in transcripts):
        raise NoiseConfigError("cannot corrupt an empty transcript")
    return NoiseInjector(transcripts, config)(transcripts, [config.seed, 2])


def corrupt_samples(
    samples: Sequence[Sample], config: NoiseConfig, injector: NoiseInjector | None = None, seed=None
) -> list[Sample]:
    """Corrupt every sample that has a transcript.

    A prebuilt ``injector`` skips recalibration; ``seed`` then picks the draw.
    """
    idx = [i for i, s in enumerate(samples) if s.transcript]
    texts = [samples[i].transcript for i in idx]
    if injector is None:
        noisy = inject_asr_noise(texts, config)
    else:
        noisy = injector(texts, [config.seed, 2] if seed is None else seed)
    out = list(samples)
    for i, t in zip(idx, noisy):
        prov = dict(samples[i].provenance, target_wer=config.target_wer)
        out[i] = replace(samples[i], transcript=tuple(t), provenance=prov)
    return out


def clip_words(transcript: Sequence[str] | None, n: int) -> list[str] | None:
    if n < 0:
        raise ValueError("n must be non-negative")
    if transcript is None:
        return None
    return list(transcript[n:])


def clip_samples(samples: Iterable[Sample], n: int) -> list[Sample]:
    out = []
    for s in samples:
        if s.transcript is None:
            out.append(s)
            continue
        prov = dict(s.provenance, clipped_words=s.provenance.get("clipped_words", 0) + n)
        out.append(replace(s, transcript=tuple(clip_words(s.transcript, n)), provenance=prov))
    return out


def drop_transcript(sample: Sample) -> Sample:
    return replace(
        sample, transcript=None, provenance=dict(sample.provenance, transcript_dropped=True)
    )

"""Experiment sweeps over seeds, with paired test sets, aggregation and CSV export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import cdm as cdm_mod
from .cmdclf import CommandClassifierModel, predict_proba, train_classifier
from .config import RunConfig
from .corpus import (
    COMMAND_TYPES,
    CorpusConfig,
    RegionModel,
    Sample,
    SurveillanceScene,
    default_region_model,
    generate_command_pairs,
    generate_corpus,
    random_plane,
    split_dataset,
)
from .corruption import NoiseConfig, NoiseInjector, clip_samples, corrupt_samples, drop_transcript
from .fusion import Components, FusionModel, identify_many, train_identifier
from .grammar import default_table
from .matcher import MatcherModel, argmax_first, batch_scene_sims, train_matcher

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "experiment", "variant", "train_wer", "test_wer", "clip_n", "candidates",
    "filter", "dims", "mode", "pairs", "seed", "accuracy", "total",
)


def derive_seed(*parts: int) -> int:
    """A 32-bit integer seed that depends on every part."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _pct(x: float) -> int:
    return int(round(x * 100))


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class Record:
    experiment: str
    variant: str
    seed: int
    accuracy: float
    total: int
    train_wer: float | None = None
    test_wer: float | None = None
    clip_n: int | None = None
    candidates: int | None = None
    filter: str | None = None
    dims: str | None = None
    mode: str | None = None
    pairs: int | None = None

    def axes(self) -> tuple:
        return tuple(getattr(self, f) for f in CSV_FIELDS if f not in ("seed", "accuracy", "total"))


AXES = tuple(f for f in CSV_FIELDS if f not in ("seed", "accuracy", "total"))


def call_sign_accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    if not golds:
        raise ValueError("no predictions to score")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def random_baseline(scenes: Sequence[SurveillanceScene], rng) -> float:
    """Accuracy of a uniform random pick per scene."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if not scenes:
        raise ValueError("no scenes")
    hits = [int(rng.integers(len(s))) == s.gold_index for s in scenes]
    return sum(hits) / len(hits)


def _record(experiment, variant, seed, preds, samples, **axes) -> Record:
    acc = call_sign_accuracy(preds, [s.gold_icao for s in samples])
    return Record(experiment, variant, seed, acc, len(samples), **axes)


@dataclass(frozen=True)
class Aggregate:
    axes: tuple
    mean: float
    std: float | None
    runs: int
    values: tuple[float, ...]

    def get(self, name: str):
        return self.axes[AXES.index(name)]


def aggregate_runs(records: Iterable[Record]) -> list[Aggregate]:
    """Mean and sample standard deviation per condition (std is None for one run)."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        groups[r.axes()].append(r.accuracy)
    out = []
    for axes in sorted(groups, key=_sort_key):
        vals = groups[axes]
        std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
        out.append(Aggregate(axes, float(np.mean(vals)), std, len(vals), tuple(vals)))
    return out


def _sort_key(values: tuple) -> tuple:
    return tuple((v is not None, v if v is not None else 0) if not isinstance(v, str) else (True, v)
                 for v in values)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def records_to_csv(records: Iterable[Record]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    rows = sorted(records, key=lambda r: _sort_key(r.axes() + (r.seed,)))
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def export_csv(records: Iterable[Record], path: str | Path) -> None:
    Path(path).write_text(records_to_csv(records), encoding="utf-8")


_INT_FIELDS = {"seed", "total", "clip_n", "candidates", "pairs"}
_FLOAT_FIELDS = {"accuracy", "train_wer", "test_wer"}


def read_csv(path: str | Path) -> list[Record]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if v == "":
                    kw[k] = None
                elif k in _INT_FIELDS:
                    kw[k] = int(v)
                elif k in _FLOAT_FIELDS:
                    kw[k] = float(v)
                else:
                    kw[k] = v
            out.append(Record(**kw))
    return out


# ---------------------------------------------------------------------------
# scenes of a requested size


def resize_scene(sample: Sample, count: int, seed: int, region: RegionModel | None = None) -> Sample:
    """Keep the gold plane plus ``count - 1`` others; pad with fresh planes if short.

    The kept planes for a smaller ``count`` are a subset of those for a larger
    one (same ``seed``), so accuracy over counts is evaluated on nested sets.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    scene = sample.scene
    gold = scene.gold_index
    others = [i for i in range(len(scene)) if i != gold]
    order = [others[i] for i in rng.permutation(len(others))]
    keep = sorted([gold] + order[: count - 1])
    planes = [scene.planes[i] for i in keep]
    if count > len(planes):
        region = region or default_region_model()
        taken = {p.callsign for p in scene.planes}
        t = scene.planes[gold].t
        planes += [random_plane(rng, region, default_table(), taken, t) for _ in range(count - len(planes))]
    new_scene = SurveillanceScene(tuple(planes), keep.index(gold))
    return replace(sample, scene=new_scene)


# ---------------------------------------------------------------------------
# per-seed model store


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(obj), encoding="utf-8")
    tmp.replace(path)


class SeedRun:
    """Lazily builds the corpus, test conditions and models for one seed."""

    def __init__(self, config: RunConfig, seed: int, cache_dir: str | Path | None = None):
        self.config = config
        self.seed = seed
        self.cache_dir = Path(cache_dir) / f"seed{seed}" if cache_dir else None
        self._memo: dict = {}
        c = config.corpus
        self.region = (
            RegionModel.from_dict(json.loads(Path(c.region_file).read_text("utf-8")))
            if c.region_file else default_region_model()
        )
        corpus_cfg = CorpusConfig(c.plane_count_min, c.plane_count_max, c.p_callsign_first, c.p_two_commands)
        self.corpus = generate_corpus(seed, c.size, self.region, config=corpus_cfg)
        self.train, self.val, self.test = split_dataset(self.corpus, c.split, seed)

    def _noise(self, wer: float, *parts) -> NoiseConfig:
        c = self.config.corruption
        return NoiseConfig(wer, c.op_mix, seed=derive_seed(self.seed, *parts, _pct(wer)),
                           p_confusable=c.p_confusable, calibration_size=c.calibration_size)

    def _cached(self, key: str, build, load):
        if key in self._memo:
            return self._memo[key]
        path = self.cache_dir / f"{key}.json" if self.cache_dir else None
        if path is not None and path.exists():
            obj = load(json.loads(path.read_text("utf-8")))
        else:
            t0 = time.perf_counter()
            obj = build()
            log.info("seed %d: built %s in %.1fs", self.seed, key, time.perf_counter() - t0)
            if path is not None:
                _json_dump(obj.to_dict(), path)
        self._memo[key] = obj
        return obj

    # conditions ------------------------------------------------------------

    def noisy(self, samples_name: str, wer: float) -> list[Sample]:
        key = ("noisy", samples_name, _pct(wer))
        if key not in self._memo:
            base = getattr(self, samples_name)
            tag = {"train": 21, "val": 12, "test": 31}[samples_name]
            self._memo[key] = corrupt_samples(base, self._noise(wer, tag)) if wer > 0 else list(base)
        return self._memo[key]

    def resized(self, samples_name: str, count: int) -> list[Sample]:
        key = ("resized", samples_name, count)
        if key not in self._memo:
            base = getattr(self, samples_name)
            tag = {"train": 41, "val": 42, "test": 43}[samples_name]
            self._memo[key] = [
                resize_scene(s, count, derive_seed(self.seed, tag, i), self.region)
                for i, s in enumerate(base)
            ]
        return self._memo[key]

    # models ----------------------------------------------------------------

    def _training_views(self, train: list[Sample], wer: float, stream: int):
        """First noisy view of ``train`` plus a per-epoch resampler (None when disabled)."""
        if wer <= 0:
            return train, None
        cfg = self._noise(wer, 11)
        injector = NoiseInjector([s.transcript for s in train if s.transcript], cfg)

        def view(epoch: int) -> list[Sample]:
            return corrupt_samples(train, cfg, injector, derive_seed(self.seed, stream, _pct(wer), epoch))

        return view(0), (view if self.config.models.fresh_noise_per_epoch else None)

    def matcher(self, wer: float = 0.0, clip: int = 0, count: int | None = None) -> MatcherModel:
        key = f"matcher-w{_pct(wer)}-c{clip}-n{count or 0}"

        def build():
            train = self.resized("train", count) if count else self.train
            val = self.resized("val", count) if count else self.val
            train, val = clip_samples(train, clip), clip_samples(val, clip)
            if wer > 0:
                val = corrupt_samples(val, self._noise(wer, 12))
            train, resample = self._training_views(train, wer, 100)
            meta = {"train_wer": wer, "train_clip": clip, "train_count": count}
            return train_matcher(train, val, self.config.models.matcher, seed=self.seed,
                                 meta=meta, resample=resample)

        return self._cached(key, build, MatcherModel.from_dict)

    def cmdclf(self, wer: float = 0.0) -> CommandClassifierModel:
        key = f"cmdclf-w{_pct(wer)}"

        def build():
            train, resample = self._training_views(self.train, wer, 110)
            return train_classifier(train, self.noisy("val", wer), self.config.models.cmdclf,
                                    seed=self.seed, meta={"train_wer": wer}, resample=resample)

        return self._cached(key, build, CommandClassifierModel.from_dict)

    def cdm(self, kind: str | None = None, dims: str | None = None, pairs: int | None = None):
        sec = self.config.models.cdm
        kind, dims, pairs = kind or sec.filter, dims or sec.dims, pairs or sec.pairs_per_command
        key = ("cdm", kind, dims, pairs)
        if key not in self._memo:
            self._memo[key] = cdm_mod.build_cdm(
                self.command_pairs(pairs), cdm_mod.FilterConfig(kind), dims
            )
        return self._memo[key]

    def command_pairs(self, per_command: int):
        """The first ``per_command`` pairs of each command from one fixed draw."""
        top = max([per_command, *self.config.experiments.filter_pairs])
        key = ("pairs", top)
        if key not in self._memo:
            self._memo[key] = generate_command_pairs(derive_seed(self.seed, 51), self.region, top)
        pool = self._memo[key]
        out = []
        for cmd in COMMAND_TYPES:
            out.extend([p for p in pool if p[1] == cmd][:per_command])
        return out

    def components(self, wer: float = 0.0, clip: int = 0) -> Components:
        return Components(self.matcher(wer, clip), self.cmdclf(wer), self.cdm())

    def fusion(self, wer: float = 0.0, clip: int = 0) -> FusionModel:
        key = f"fusion-w{_pct(wer)}-c{clip}"

        def build():
            train = clip_samples(self.noisy("train", wer), clip)
            val = clip_samples(self.noisy("val", wer), clip)
            return train_identifier(train, val, self.components(wer, clip), self.config.models.fusion,
                                    seed=self.seed, meta={"train_wer": wer, "train_clip": clip})

        return self._cached(key, build, FusionModel.from_dict)

    # predictions -----------------------------------------------------------

    def predict(self, variant: str, samples: Sequence[Sample], wer: float = 0.0, clip: int = 0,
                count: int | None = None) -> list[str]:
        if variant == "matcher":
            model = self.matcher(wer, clip, count)
            sims = batch_scene_sims(model, samples)
            return [s.scene.callsigns[argmax_first(v)] for s, v in zip(samples, sims)]
        if variant == "ccr":
            return identify_many(samples, self.components(wer, clip), self.fusion(wer, clip))
        if variant == "cdm_naive":
            cdm = self.cdm()
            return [cdm_mod.cdm_only_predict(cdm, s.scene, ()) for s in samples]
        if variant == "cdm_command":
            # the single most probable command type selects the map
            cdm = self.cdm()
            probs = predict_proba(self.cmdclf(wer), [s.transcript for s in samples])
            out = []
            for s, p in zip(samples, probs):
                chosen = (COMMAND_TYPES[int(np.argmax(p))],) if s.transcript else ()
                out.append(cdm_mod.cdm_only_predict(cdm, s.scene, chosen))
            return out
        raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# sweeps


def run_wer_sweep(run: SeedRun, train_wers, test_wers, variants=("matcher", "ccr")) -> list[Record]:
    out = []
    for tw in train_wers:
        for xw in test_wers:
            test = run.noisy("test", xw)
            for v in variants:
                out.append(_record("wer", v, run.seed, run.predict(v, test, tw), test,
                                   train_wer=tw, test_wer=xw, candidates=None))
    return out


def run_clip_sweep(run: SeedRun, train_clips, test_clips, variants=("matcher", "ccr")) -> list[Record]:
    out = []
    for tc in train_clips:
        for xc in test_clips:
            test = clip_samples(run.test, xc)
            for v in variants:
                out.append(_record("clip", v, run.seed, run.predict(v, test, 0.0, tc), test,
                                   train_wer=0.0, clip_n=xc, mode=f"train_clip={tc}"))
    return out


def run_surveillance_sweep(run: SeedRun, train_counts, test_counts) -> list[Record]:
    out = []
    for tc in train_counts:
        for xc in test_counts:
            test = run.resized("test", xc)
            out.append(_record("surveillance", "matcher", run.seed,
                               run.predict("matcher", test, count=tc), test,
                               candidates=xc, mode=f"train_count={tc}"))
    return out


def run_missing_transcript(run: SeedRun, train_wers, variants=("matcher", "ccr")) -> list[Record]:
    test = [drop_transcript(s) for s in run.test]
    out = []
    for tw in train_wers:
        for v in variants:
            out.append(_record("missing", v, run.seed, run.predict(v, test, tw), test, train_wer=tw))
        acc = random_baseline([s.scene for s in test], derive_seed(run.seed, 61, _pct(tw)))
        out.append(Record("missing", "random", run.seed, acc, len(test), train_wer=tw))
    return out


def run_ablation(run: SeedRun, train_wer, test_wers,
                 components=("cdm_naive", "cdm_command", "matcher", "ccr")) -> list[Record]:
    out = []
    for xw in test_wers:
        test = run.noisy("test", xw)
        for comp in components:
            out.append(_record("ablation", comp, run.seed, run.predict(comp, test, train_wer), test,
                               train_wer=train_wer, test_wer=xw))
    return out


def run_filter_study(run: SeedRun, kinds, dims_list, pairs_list) -> list[Record]:
    """CDM-only accuracy with oracle command labels over every corpus scene.

    The maps come from separately drawn coordinate-command pairs, so the whole
    corpus is unseen by them and serves as the evaluation set.
    """
    samples = run.corpus
    golds = [s.gold_icao for s in samples]
    out = []
    for kind in kinds:
        for dims in dims_list:
            for n in pairs_list:
                cdm = run.cdm(kind, dims, n)
                for mode in ("naive", "select"):
                    preds = [
                        cdm_mod.cdm_only_predict(cdm, s.scene, s.commands if mode == "select" else ())
                        for s in samples
                    ]
                    out.append(Record("filter", "cdm", run.seed, call_sign_accuracy(preds, golds),
                                      len(samples), filter=kind, dims=dims, mode=mode, pairs=n))
    return out


def run_seed(config: RunConfig, seed: int, cache_dir=None) -> list[Record]:
    ex = config.experiments
    run = SeedRun(config, seed, cache_dir)
    out: list[Record] = []
    if "filter" in ex.run:
        out += run_filter_study(run, ex.filter_kinds, ex.filter_dims, ex.filter_pairs)
    if "wer" in ex.run:
        out += run_wer_sweep(run, ex.train_wers, ex.test_wers)
    if "ablation" in ex.run:
        out += run_ablation(run, ex.ablation_train_wer, ex.test_wers)
    if "missing" in ex.run:
        out += run_missing_transcript(run, ex.missing_train_wers)
    if "clip" in ex.run:
        out += run_clip_sweep(run, ex.train_clips, ex.test_clips)
    if "surveillance" in ex.run:
        out += run_surveillance_sweep(run, ex.train_counts, ex.test_counts)
    return out


def _run_seed_star(args):
    return run_seed(*args)


def run_suite(config: RunConfig, cache_dir=None, jobs: int = 1) -> list[Record]:
    """Every configured experiment for every seed; record order is canonical."""
    tasks = [(config, s, cache_dir) for s in config.seeds]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            parts = list(pool.map(_run_seed_star, tasks))
    else:
        parts = [_run_seed_star(t) for t in tasks]
    records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: _sort_key((r.experiment,) + r.axes() + (r.seed,)))


# ---------------------------------------------------------------------------
# tables


def missing_table(records: Iterable[Record]) -> str:
    """Markdown table: one row per variant, one column per train WER, ``mean(±std)``."""
    aggs = [a for a in aggregate_runs(records) if a.get("experiment") == "missing"]
    wers = sorted({a.get("train_wer") for a in aggs})
    variants = [v for v in ("random", "matcher", "ccr") if any(a.get("variant") == v for a in aggs)]
    lines = ["| model | " + " | ".join(f"WER {w:.2f}" for w in wers) + " |",
             "|---" * (len(wers) + 1) + "|"]
    for v in variants:
        cells = []
        for w in wers:
            a = next(a for a in aggs if a.get("variant") == v and a.get("train_wer") == w)
            std = f"{a.std:.2f}" if a.std is not None else "n/a"
            cells.append(f"{a.mean:.2f}(±{std})")
        lines.append(f"| {v} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"

"""Synthetic labeled ATC corpus: scenes, transcripts, command labels, JSONL IO."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grammar import (
    DIGITS,
    NATO,
    DesignatorTable,
    default_table,
    expand_icao,
    normalize_tokens,
)

COMMAND_TYPES = ("horizontal", "vertical", "ils", "taxi", "clearing", "greeting")

BOX_HALF_XY = 100_000.0
BOX_Z_MAX = 20_000.0

WAYPOINTS = ("lomki", "bodal", "rapet", "veneb", "okfug", "dovan", "arsin", "nirgo")


class CorpusError(ValueError):
    pass


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# keyword labeler


def _data_text(name: str, path: str | Path | None) -> str:
    if path is None:
        return resources.files("ccrkit.data").joinpath(name).read_text("utf-8")
    return Path(path).read_text("utf-8")


def _read_tsv_pairs(text: str) -> list[tuple[str, str]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise CorpusError(f"line {lineno}: expected two tab-separated fields")
        rows.append((parts[0].strip(), parts[1].strip()))
    return rows


def load_keyword_table(path: str | Path | None = None) -> dict[str, list[tuple[str, ...]]]:
    table: dict[str, list[tuple[str, ...]]] = {c: [] for c in COMMAND_TYPES}
    for command, phrase in _read_tsv_pairs(_data_text("keywords.tsv", path)):
        if command not in table:
            raise CorpusError(f"unknown command type {command!r}")
        table[command].append(tuple(phrase.split()))
    return table


def _contains(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    return any(tuple(tokens[i : i + n]) == tuple(phrase) for i in range(len(tokens) - n + 1))


def label_commands(tokens: Sequence[str] | None, keyword_table=None) -> frozenset[str]:
    """Every command type with at least one key phrase inside ``tokens``."""
    if not tokens:
        return frozenset()
    keyword_table = keyword_table or load_keyword_table()
    return frozenset(
        cmd
        for cmd, phrases in keyword_table.items()
        if any(_contains(tokens, p) for p in phrases)
    )


# --------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class Template:
    commands: frozenset[str]
    text: str


def load_templates(path: str | Path | None = None) -> list[Template]:
    out = []
    for commands, text in _read_tsv_pairs(_data_text("templates.tsv", path)):
        labels = frozenset(commands.split(","))
        if not labels <= set(COMMAND_TYPES):
            raise CorpusError(f"unknown command in template label {commands!r}")
        out.append(Template(labels, text))
    return out


def _digits(rng: np.random.Generator, text: str) -> str:
    return " ".join(DIGITS[ch] for ch in text)


def fill_template(template: Template, rng: np.random.Generator) -> list[str]:
    words = []
    for word in template.text.split():
        if word == "<hdg>":
            words.append(_digits(rng, f"{int(rng.integers(1, 37)) * 10:03d}"))
        elif word == "<fl>":
            words.append(_digits(rng, f"{int(rng.integers(6, 40)) * 10}"))
        elif word == "<alt>":
            words.append(_digits(rng, f"{int(rng.integers(2, 10)) * 1000}"))
        elif word == "<rwy>":
            words.append(_digits(rng, ("06", "24", "12", "30")[int(rng.integers(4))]))
        elif word == "<wp>":
            words.append(WAYPOINTS[int(rng.integers(len(WAYPOINTS)))])
        elif word == "<twy>":
            words.append("abcdfglm"[int(rng.integers(8))].upper())
        elif word == "<kt>":
            words.append(_digits(rng, f"{int(rng.integers(2, 25)):02d}"))
        else:
            words.append(word)
    tokens = []
    for w in words:
        if len(w) == 1 and w.isupper():
            tokens.append(NATO[w])
        else:
            tokens.extend(normalize_tokens(w))
    return tokens


# --------------------------------------------------------------------------
# airspace


@dataclass(frozen=True)
class GaussianComponent:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    weight: float = 1.0


@dataclass(frozen=True)
class RegionModel:
    """Per-command Gaussian mixtures for addressed planes plus a background mixture."""

    commands: dict[str, tuple[GaussianComponent, ...]]
    background: tuple[GaussianComponent, ...]

    def mixture(self, command: str) -> tuple[GaussianComponent, ...]:
        return self.commands[command]

    def to_dict(self) -> dict:
        enc = lambda comps: [
            {"mean": list(c.mean), "std": list(c.std), "weight": c.weight} for c in comps
        ]
        return {
            "commands": {k: enc(v) for k, v in self.commands.items()},
            "background": enc(self.background),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionModel":
        dec = lambda comps: tuple(
            GaussianComponent(tuple(c["mean"]), tuple(c["std"]), float(c.get("weight", 1.0)))
            for c in comps
        )
        return cls({k: dec(v) for k, v in d["commands"].items()}, dec(d["background"]))


def _ring(radius, z, std_xy, std_z, n=8) -> tuple[GaussianComponent, ...]:
    return tuple(
        GaussianComponent(
            (radius * math.cos(2 * math.pi * k / n), radius * math.sin(2 * math.pi * k / n), z),
            (std_xy, std_xy, std_z),
        )
        for k in range(n)
    )


def default_region_model(stray_fraction: float = 0.12) -> RegionModel:
    """``stray_fraction`` of unaddressed planes sit inside the command regions."""
    commands = {
        "taxi": (GaussianComponent((0.0, 0.0, 30.0), (2500.0, 2500.0, 120.0)),),
        "clearing": (
            GaussianComponent((-6000.0, 0.0, 300.0), (4000.0, 1500.0, 250.0)),
            GaussianComponent((6000.0, 0.0, 300.0), (4000.0, 1500.0, 250.0)),
        ),
        "ils": (
            GaussianComponent((-15000.0, 0.0, 1200.0), (4000.0, 2500.0, 300.0)),
            GaussianComponent((-28000.0, 0.0, 2300.0), (5000.0, 3000.0, 400.0)),
            GaussianComponent((15000.0, 0.0, 1200.0), (4000.0, 2500.0, 300.0)),
            GaussianComponent((28000.0, 0.0, 2300.0), (5000.0, 3000.0, 400.0)),
        ),
        "vertical": _ring(40_000.0, 4000.0, 9000.0, 1200.0),
        "horizontal": _ring(65_000.0, 6000.0, 10_000.0, 1200.0),
        # first contact on entering the sector
        "greeting": _ring(85_000.0, 7000.0, 8000.0, 1000.0),
    }
    # Cruise traffic above the terminal area plus unaddressed planes inside the
    # command regions.
    background = [GaussianComponent((0.0, 0.0, 11_500.0), (60_000.0, 60_000.0, 800.0), 1.0 - stray_fraction)]
    for comps in commands.values():
        for c in comps:
            background.append(GaussianComponent(c.mean, c.std, stray_fraction / len(commands) / len(comps)))
    return RegionModel(commands, tuple(background))


def _in_box(p: np.ndarray) -> bool:
    return abs(p[0]) <= BOX_HALF_XY and abs(p[1]) <= BOX_HALF_XY and 0.0 <= p[2] <= BOX_Z_MAX


def sample_position(rng: np.random.Generator, comps: Sequence[GaussianComponent]) -> np.ndarray:
    weights = np.array([c.weight for c in comps], dtype=float)
    weights /= weights.sum()
    for _ in range(20):
        c = comps[int(rng.choice(len(comps), p=weights))]
        p = rng.normal(c.mean, c.std)
        if _in_box(p):
            return p
    return np.clip(p, [-BOX_HALF_XY, -BOX_HALF_XY, 0.0], [BOX_HALF_XY, BOX_HALF_XY, BOX_Z_MAX])


def sample_command_position(rng: np.random.Generator, region: RegionModel, commands) -> np.ndarray:
    """Draw from the equal-weight mixture of the given commands' mixtures."""
    commands = sorted(commands)
    if not commands:
        return sample_position(rng, region.background)
    comps = []
    for cmd in commands:
        mix = region.mixture(cmd)
        total = sum(c.weight for c in mix)
        comps.extend(replace(c, weight=c.weight / total) for c in mix)
    return sample_position(rng, comps)


# --------------------------------------------------------------------------
# scenes and samples


@dataclass(frozen=True)
class PlaneState:
    callsign: str
    x: float
    y: float
    z: float
    t: float = 0.0

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class SurveillanceScene:
    planes: tuple[PlaneState, ...]
    gold_index: int

    def __post_init__(self):
        signs = [p.callsign for p in self.planes]
        if not signs:
            raise CorpusError("scene must contain at least one plane")
        if len(set(signs)) != len(signs):
            raise CorpusError("scene call-signs must be distinct")
        if not 0 <= self.gold_index < len(signs):
            raise CorpusError("gold_index out of range")

    @property
    def callsigns(self) -> list[str]:
        return [p.callsign for p in self.planes]

    @property
    def coords(self) -> np.ndarray:
        return np.array([p.xyz for p in self.planes], dtype=float)

    def __len__(self):
        return len(self.planes)


@dataclass(frozen=True)
class Sample:
    id: str
    transcript: tuple[str, ...] | None
    gold_icao: str
    scene: SurveillanceScene
    commands: frozenset[str]
    provenance: dict = field(default_factory=lambda: {"target_wer": 0.0, "clipped_words": 0})

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "transcript": None if self.transcript is None else list(self.transcript),
            "gold_icao": self.gold_icao,
            "commands": sorted(self.commands, key=COMMAND_TYPES.index),
            "planes": [
                {"callsign": p.callsign, "x": p.x, "y": p.y, "z": p.z, "t": p.t}
                for p in self.scene.planes
            ],
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Sample":
        planes = tuple(
            PlaneState(p["callsign"], float(p["x"]), float(p["y"]), float(p["z"]), float(p["t"]))
            for p in d["planes"]
        )
        signs = [p.callsign for p in planes]
        if d["gold_icao"] not in signs:
            raise CorpusError(f"gold {d['gold_icao']} missing from scene of {d['id']}")
        transcript = d["transcript"]
        return cls(
            id=d["id"],
            transcript=None if transcript is None else tuple(transcript),
            gold_icao=d["gold_icao"],
            scene=SurveillanceScene(planes, signs.index(d["gold_icao"])),
            commands=frozenset(d["commands"]),
            provenance=dict(d["provenance"]),
        )


# suffix length 1..5: digit first, then digits or letters
_SUFFIX_LENGTHS = (1, 2, 3, 4, 5)
_SUFFIX_WEIGHTS = (0.0, 0.1, 0.2, 0.3, 0.4)
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def random_icao(rng: np.random.Generator, table: DesignatorTable) -> str:
    designators = table.designators()
    prefix = designators[int(rng.integers(len(designators)))]
    n = int(rng.choice(_SUFFIX_LENGTHS, p=_SUFFIX_WEIGHTS))
    suffix = [str(int(rng.integers(1, 10)))]
    # digits first, optionally trailing letters (e.g. 124LE)
    n_letters = int(rng.integers(0, min(2, n - 1) + 1)) if n > 1 else 0
    for _ in range(n - 1 - n_letters):
        suffix.append(str(int(rng.integers(10))))
    for _ in range(n_letters):
        suffix.append(_LETTERS[int(rng.integers(26))])
    return prefix + "".join(suffix)


def random_plane(rng, region: RegionModel, table: DesignatorTable, taken: set[str], t: float = 0.0):
    while True:
        sign = random_icao(rng, table)
        if sign not in taken:
            break
    taken.add(sign)
    x, y, z = sample_position(rng, region.background)
    return PlaneState(sign, float(x), float(y), float(z), t)


def generate_scene(
    seed,
    region: RegionModel,
    commands: Iterable[str],
    plane_count: int,
    table: DesignatorTable | None = None,
    gold_icao: str | None = None,
    t: float = 0.0,
) -> SurveillanceScene:
    """Gold plane positioned by its commands, the rest by the background mixture."""
    if plane_count < 1:
        raise CorpusError("plane_count must be >= 1")
    rng = as_rng(seed)
    table = table or default_table()
    gold_icao = gold_icao or random_icao(rng, table)
    taken = {gold_icao}
    gx, gy, gz = sample_command_position(rng, region, commands)
    gold = PlaneState(gold_icao, float(gx), float(gy), float(gz), t)
    others = [random_plane(rng, region, table, taken, t) for _ in range(plane_count - 1)]
    gold_index = int(rng.integers(plane_count))
    planes = others[:gold_index] + [gold] + others[gold_index:]
    return SurveillanceScene(tuple(planes), gold_index)


@dataclass(frozen=True)
class CorpusConfig:
    plane_count_min: int = 20
    plane_count_max: int = 40
    p_callsign_first: float = 0.8
    p_two_commands: float = 0.3
    base_time: float = 1_600_000_000.0


def generate_sample(
    seed,
    region: RegionModel,
    templates: Sequence[Template],
    table: DesignatorTable | None = None,
    config: CorpusConfig = CorpusConfig(),
    sample_id: str = "s0",
    plane_count: int | None = None,
) -> Sample:
    if not templates:
        raise CorpusError("template set must be nonempty")
    rng = as_rng(seed)
    table = table or default_table()
    first = templates[int(rng.integers(len(templates)))]
    chosen = [first]
    if rng.random() < config.p_two_commands:
        rest = [t for t in templates if not (t.commands & first.commands)]
        if rest:
            chosen.append(rest[int(rng.integers(len(rest)))])
    commands = frozenset().union(*(t.commands for t in chosen))
    phrases = []
    for tpl in chosen:
        phrases.extend(fill_template(tpl, rng))
    gold = random_icao(rng, table)
    spoken = expand_icao(gold, table)
    transcript = spoken + phrases if rng.random() < config.p_callsign_first else phrases + spoken
    if plane_count is None:
        plane_count = int(rng.integers(config.plane_count_min, config.plane_count_max + 1))
    t = config.base_time + float(rng.integers(0, 86_400))
    scene = generate_scene(rng, region, commands, plane_count, table, gold_icao=gold, t=t)
    return Sample(
        id=sample_id,
        transcript=tuple(transcript),
        gold_icao=gold,
        scene=scene,
        commands=commands,
        provenance={"target_wer": 0.0, "clipped_words": 0},
    )


def generate_corpus(
    seed: int,
    n: int,
    region: RegionModel | None = None,
    templates: Sequence[Template] | None = None,
    table: DesignatorTable | None = None,
    config: CorpusConfig = CorpusConfig(),
) -> list[Sample]:
    """``n`` samples; sample ``i`` depends only on ``(seed, i)``."""
    region = region or default_region_model()
    templates = templates if templates is not None else load_templates()
    return [
        generate_sample(
            np.random.default_rng([seed, i]), region, templates, table, config,
            sample_id=f"s{seed}-{i:05d}",
        )
        for i in range(n)
    ]


def generate_command_pairs(seed, region: RegionModel, per_command: int):
    """Coordinate-command pairs as seen when the command is addressed to a plane."""
    rng = as_rng(seed)
    return [
        (tuple(float(v) for v in sample_command_position(rng, region, [cmd])), cmd)
        for cmd in COMMAND_TYPES
        for _ in range(per_command)
    ]


def pairs_from_samples(samples: Iterable[Sample]):
    out = []
    for s in samples:
        xyz = s.scene.planes[s.scene.gold_index].xyz
        out.extend((xyz, cmd) for cmd in sorted(s.commands))
    return out


def split_dataset(samples: Sequence, ratios=(0.818, 0.091, 0.091), seed=0):
    """Shuffle and cut into train/val/test; sizes round to the nearest integer."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise CorpusError(f"split ratios must be three non-negative numbers summing to 1: {ratios}")
    n = len(samples)
    order = as_rng(seed).permutation(n)
    n_train = int(round(ratios[0] / sum(ratios) * n))
    n_val = min(n - n_train, int(round(ratios[1] / sum(ratios) * n)))
    pick = lambda idx: [samples[i] for i in idx]
    return (
        pick(order[:n_train]),
        pick(order[n_train : n_train + n_val]),
        pick(order[n_train + n_val :]),
    )


def write_jsonl(samples: Iterable[Sample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[Sample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Sample.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed sample ({exc})") from exc
    return out

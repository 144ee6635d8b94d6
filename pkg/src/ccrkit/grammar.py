"""ICAO call-sign grammar: ICAO <-> spoken form, token normalization and WER."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

NATO = {
    "A": "alpha", "B": "bravo", "C": "charlie", "D": "delta", "E": "echo",
    "F": "foxtrot", "G": "golf", "H": "hotel", "I": "india", "J": "juliett",
    "K": "kilo", "L": "lima", "M": "mike", "N": "november", "O": "oscar",
    "P": "papa", "Q": "quebec", "R": "romeo", "S": "sierra", "T": "tango",
    "U": "uniform", "V": "victor", "W": "whiskey", "X": "xray", "Y": "yankee",
    "Z": "zulu",
}

DIGITS = {
    "0": "zero", "1": "one", "2": "two", "3": "three", "4": "four",
    "5": "five", "6": "six", "7": "seven", "8": "eight", "9": "nine",
}

# Three-letter designator, a leading digit, then up to four alphanumerics.
ICAO_PATTERN = re.compile(r"^[A-Z]{3}[0-9][A-Z0-9]{0,4}$")


class GrammarError(ValueError):
    """Raised for malformed ICAO strings or token sequences outside the grammar."""


@dataclass(frozen=True)
class DesignatorTable:
    """Mapping from ICAO airline designator to its telephony word."""

    entries: Mapping[str, str]
    digit_words: Mapping[str, str] = field(default_factory=lambda: dict(DIGITS))

    def __post_init__(self):
        words = list(self.entries.values())
        if len(set(words)) != len(words):
            raise GrammarError("telephony words must be unique")
        reserved = set(NATO.values()) | set(self.digit_words.values())
        for code, word in self.entries.items():
            if not re.fullmatch(r"[A-Z]{3}", code):
                raise GrammarError(f"bad designator {code!r}")
            if not re.fullmatch(r"[a-z]+", word):
                raise GrammarError(f"telephony word must be one lowercase word: {word!r}")
            if word in reserved:
                raise GrammarError(f"telephony word {word!r} collides with a letter/digit word")

    @property
    def by_word(self) -> dict[str, str]:
        return {w: c for c, w in self.entries.items()}

    @property
    def word_to_char(self) -> dict[str, str]:
        inv = {w: c for c, w in NATO.items()}
        inv.update({w: d for d, w in self.digit_words.items()})
        # accept both conventions for nine when parsing
        inv.setdefault("niner", "9")
        inv.setdefault("nine", "9")
        return inv

    def designators(self) -> list[str]:
        return sorted(self.entries)


def load_designator_table(path: str | Path | None = None) -> DesignatorTable:
    """Read a ``ICAO<TAB>word`` file; ``None`` loads the bundled table."""
    if path is None:
        text = resources.files("ccrkit.data").joinpath("designators.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise GrammarError(f"line {lineno}: expected ICAO<TAB>word")
        code, word = parts[0].strip(), parts[1].strip()
        if code in entries:
            raise GrammarError(f"line {lineno}: duplicate designator {code}")
        entries[code] = word
    return DesignatorTable(entries)


_DEFAULT_TABLE: DesignatorTable | None = None


def default_table() -> DesignatorTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_designator_table()
    return _DEFAULT_TABLE


@dataclass(frozen=True)
class Callsign:
    icao: str
    expanded: tuple[str, ...]

    @classmethod
    def from_icao(cls, icao: str, table: DesignatorTable | None = None) -> "Callsign":
        return cls(icao, tuple(expand_icao(icao, table)))


def expand_icao(icao: str, table: DesignatorTable | None = None) -> list[str]:
    """Spoken form of an ICAO call-sign, e.g. ``RYR124 -> ryanair one two four``.

    Designators missing from the table are spelled letter by letter.
    """
    table = table or default_table()
    if not isinstance(icao, str) or not ICAO_PATTERN.match(icao):
        raise GrammarError(f"malformed ICAO call-sign: {icao!r}")
    prefix, suffix = icao[:3], icao[3:]
    if prefix in table.entries:
        words = [table.entries[prefix]]
    else:
        words = [NATO[ch] for ch in prefix]
    for ch in suffix:
        words.append(table.digit_words[ch] if ch.isdigit() else NATO[ch])
    return words


def parse_expanded(tokens: Sequence[str], table: DesignatorTable | None = None) -> str:
    """Exact inverse of :func:`expand_icao`; no fuzzy matching."""
    table = table or default_table()
    tokens = list(tokens)
    if not tokens:
        raise GrammarError("empty token list")
    by_word = table.by_word
    to_char = table.word_to_char
    letters = {w: c for c, w in NATO.items()}
    if tokens[0] in by_word:
        prefix, rest = by_word[tokens[0]], tokens[1:]
    elif len(tokens) >= 3 and all(t in letters for t in tokens[:3]):
        prefix = "".join(letters[t] for t in tokens[:3])
        if prefix in table.entries:
            raise GrammarError(f"{prefix} must be spoken as {table.entries[prefix]!r}")
        rest = tokens[3:]
    else:
        raise GrammarError(f"no designator in {tokens!r}")
    try:
        suffix = "".join(to_char[t] for t in rest)
    except KeyError as exc:
        raise GrammarError(f"token {exc.args[0]!r} is not a digit or letter word") from None
    icao = prefix + suffix
    if not ICAO_PATTERN.match(icao):
        raise GrammarError(f"tokens do not form a valid call-sign: {icao!r}")
    return icao


_WORD_PARTS = re.compile(r"[a-z]+|[0-9]")


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, drop punctuation, spell digits as words."""
    out: list[str] = []
    for raw in text.lower().split():
        for part in _WORD_PARTS.findall(raw):
            out.append(DIGITS[part] if part.isdigit() else part)
    return out


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over arbitrary sequences (unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def word_error_rate(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    if len(reference) == 0:
        raise ValueError("WER is undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)

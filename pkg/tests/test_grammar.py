import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccrkit.grammar import (
    DIGITS,
    ICAO_PATTERN,
    NATO,
    DesignatorTable,
    GrammarError,
    default_table,
    edit_distance,
    expand_icao,
    load_designator_table,
    normalize_tokens,
    parse_expanded,
    word_error_rate,
)
from tests.oracles import levenshtein

ALNUM = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


def icao_strategy(prefixes=None):
    prefix = st.sampled_from(prefixes) if prefixes else st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ", min_size=3, max_size=3)
    return st.builds(
        lambda p, d, rest: p + d + rest,
        prefix,
        st.sampled_from("0123456789"),
        st.text(ALNUM, max_size=4),
    )


def test_expand_known_designator():
    assert expand_icao("RYR124") == ["ryanair", "one", "two", "four"]


def test_expand_unknown_designator_spells_letters():
    assert "XYZ" not in default_table().entries
    assert expand_icao("XYZ12") == ["xray", "yankee", "zulu", "one", "two"]


def test_expand_letter_suffix():
    assert expand_icao("DLH124LE") == ["lufthansa", "one", "two", "four", "lima", "echo"]


@pytest.mark.parametrize("bad", ["", "RY124", "RYRA24", "ryr124", "RYR12345X", None, "RYR-12"])
def test_expand_rejects_malformed(bad):
    with pytest.raises(GrammarError):
        expand_icao(bad)


def test_parse_examples():
    assert parse_expanded(["ryanair", "one", "two", "four"]) == "RYR124"
    assert parse_expanded(["ryanair", "three", "five", "four", "lima", "echo"]) == "RYR354LE"
    assert parse_expanded(["ryanair", "niner"]) == "RYR9"


@pytest.mark.parametrize("tokens", [["hello", "world"], [], ["ryanair", "hello"], ["ryanair"],
                                    ["ryanair", "alpha", "one"]])
def test_parse_errors(tokens):
    with pytest.raises(GrammarError):
        parse_expanded(tokens)


def test_parse_rejects_spelled_known_designator():
    # RYR has a telephony word, so spelling it out is not the canonical form
    with pytest.raises(GrammarError):
        parse_expanded(["romeo", "yankee", "romeo", "one"])


def test_table_is_well_formed():
    table = default_table()
    assert len(table.entries) >= 20
    words = list(table.entries.values())
    assert len(words) == len(set(words))
    assert all(re.fullmatch(r"[a-z]+", w) for w in words)


def test_table_rejects_collisions(tmp_path):
    with pytest.raises(GrammarError):
        DesignatorTable({"AAA": "alpha"})
    with pytest.raises(GrammarError):
        DesignatorTable({"AAA": "same", "BBB": "same"})
    bad = tmp_path / "t.tsv"
    bad.write_text("AAA\tfoo\nAAA\tbar\n")
    with pytest.raises(GrammarError, match="line 2"):
        load_designator_table(bad)


@settings(max_examples=300, deadline=None)
@given(icao_strategy())
def test_expand_total_on_valid_pattern(icao):
    words = expand_icao(icao)
    vocab = set(default_table().entries.values()) | set(NATO.values()) | set(DIGITS.values())
    assert set(words) <= vocab


@settings(max_examples=300, deadline=None)
@given(icao_strategy(default_table().designators()))
def test_round_trip_known(icao):
    assert ICAO_PATTERN.match(icao)
    assert parse_expanded(expand_icao(icao)) == icao


@pytest.mark.parametrize("text,expected", [
    ("Turn RIGHT, heading", ["turn", "right", "heading"]),
    ("", []),
    ("ryanair 124", ["ryanair", "one", "two", "four"]),
])
def test_normalize(text, expected):
    assert normalize_tokens(text) == expected


def test_normalized_digits_round_trip():
    assert parse_expanded(normalize_tokens("Ryanair 124")) == "RYR124"


@pytest.mark.parametrize("ref,hyp,wer", [
    (["turn", "right"], ["turn", "right"], 0.0),
    (list("abcd"), list("axcd"), 0.25),
    (list("abcd"), list("bcd"), 0.25),
    (list("ab"), list("abxy"), 1.0),
])
def test_wer_examples(ref, hyp, wer):
    assert word_error_rate(ref, hyp) == pytest.approx(wer)


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        word_error_rate([], ["a"])


words = st.lists(st.sampled_from("abcdefgh"), max_size=9)


@settings(max_examples=300, deadline=None)
@given(words, words)
def test_edit_distance_matches_full_table(a, b):
    assert edit_distance(a, b) == levenshtein(a, b)


@settings(max_examples=200, deadline=None)
@given(words.filter(bool), words)
def test_wer_renaming_invariance(ref, hyp):
    rename = {c: c.upper() * 2 for c in "abcdefgh"}
    assert word_error_rate(ref, ref) == 0.0
    assert word_error_rate([rename[w] for w in ref], [rename[w] for w in hyp]) == word_error_rate(ref, hyp)


@settings(max_examples=200, deadline=None)
@given(words.filter(bool), st.data())
def test_wer_grows_with_one_more_substitution(ref, data):
    i = data.draw(st.integers(0, len(ref) - 1))
    hyp = list(ref)
    hyp[i] = "zz"
    assert word_error_rate(ref, hyp) == pytest.approx(1 / len(ref))
    assert word_error_rate(ref, hyp) > word_error_rate(ref, ref)

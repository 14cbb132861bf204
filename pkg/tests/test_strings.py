import base64
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import fixtures
from tabmax.binary import parse_binary
from tabmax.strings import (Encoding, ExtractedString, Label, analyze_strings, classify_string, default_config,
                            detect_base64, extract_strings, find_base64, label_strings, load_config,
                            match_indicators)

CFG = default_config()


def _s(text, offset=0, enc=Encoding.ASCII):
    return ExtractedString(text, enc, offset)


# -- extraction -------------------------------------------------------------

def test_ascii_literal_recovered_at_offset():
    raw = b"\x01\x02\x00SELECT * FROM t\x00\xff"
    found = extract_strings(raw, 3)
    assert found == [ExtractedString("SELECT * FROM t", Encoding.ASCII, 3)]


def test_utf16_literal_recovered():
    raw = b"\xff\xfe" + "cmd.exe".encode("utf-16-le") + b"\x00\x00"
    found = [s for s in extract_strings(raw, 3) if s.encoding is Encoding.UTF16LE]
    assert [(s.text, s.file_offset) for s in found] == [("cmd.exe", 2)]


def test_below_minimum_is_dropped():
    assert extract_strings(b'= "ab\x00', 3) == [ExtractedString('= "ab', Encoding.ASCII, 0)]
    assert extract_strings(b"\x00ab\x00", 3) == []


def test_min_len_must_be_positive():
    with pytest.raises(ValueError):
        extract_strings(b"abc", 0)


_printable = st.text(st.characters(min_codepoint=0x20, max_codepoint=0x7E), min_size=3, max_size=40)


@settings(max_examples=200)
@given(st.lists(st.tuples(_printable, st.booleans()), min_size=1, max_size=6), st.integers(3, 6))
def test_extraction_completeness(literals, min_len):
    raw = bytearray(b"\x00\x01")
    planted = []
    for text, wide in literals:
        data = text.encode("utf-16-le") if wide else text.encode()
        planted.append((text, Encoding.UTF16LE if wide else Encoding.ASCII, len(raw)))
        raw += data + b"\x00\x00\x01\x02"
    found = [(s.text, s.encoding, s.file_offset) for s in extract_strings(bytes(raw), min_len)]
    for p in planted:
        if len(p[0]) >= min_len:
            assert found.count(p) == 1
    for s in extract_strings(bytes(raw), min_len):
        assert s.char_length >= min_len
        assert all(0x20 <= ord(c) <= 0x7E for c in s.text)


# -- classification ---------------------------------------------------------

@pytest.mark.parametrize("text,labels", [
    ("SELECT name FROM sysobjects", {Label.SQL}),
    ("Invoke-WebRequest -Uri $u", {Label.POWERSHELL}),
    ("EXEC xp_cmdshell 'Invoke-Expression $p'", {Label.SQL, Label.POWERSHELL}),
    ("selector", set()),
    ("xSELECTx", set()),
    ("exec sp_who2", {Label.SQL}),
    ("US$ 5", set()),
    ("Price: $value", {Label.POWERSHELL}),
    ("run.ps1", {Label.POWERSHELL}),
    ("select * from t", {Label.SQL}),
])
def test_classify_examples(text, labels):
    assert classify_string(text, CFG) == frozenset(labels)


_words = st.sampled_from(["select", "from", "Invoke-", "sp_who", "$x", "foo", "bar", "IEX", "tempdbx", "where",
                          "a", "_", " ", "-", "upload", "Decode", "text/plain", "WinExec", "selector"])
_texts = st.lists(_words, min_size=1, max_size=8).map("".join)


@settings(max_examples=200)
@given(_texts, st.sampled_from(["foo", "bar", "a", "x", "selector", "-"]), st.booleans())
def test_adding_keyword_never_removes_a_label(text, extra, to_sql):
    field = "sql_keywords" if to_sql else "ps_keywords"
    bigger = replace(CFG, **{field: getattr(CFG, field) | {extra}})
    assert classify_string(text, CFG) <= classify_string(text, bigger)


# -- base64 -----------------------------------------------------------------

def test_base64_examples():
    assert detect_base64("SGVsbG8sIFdvcmxkISBUaGlzIGlzIGI2NA==") == b"Hello, World! This is b64"
    assert detect_base64("abc!") is None
    assert detect_base64("AAAA", 16) is None


def test_base64_inside_longer_string():
    blob = base64.b64encode(b"net user admin P@ss /add").decode()
    s, e, decoded = find_base64(f"cmd={blob};")
    assert decoded == b"net user admin P@ss /add"
    assert f"cmd={blob};"[s:e] == blob


@settings(max_examples=300)
@given(st.text(st.characters(min_codepoint=0x20, max_codepoint=0x7E), max_size=80), st.integers(4, 32))
def test_base64_soundness(text, min_len):
    found = find_base64(text, min_len)
    if found is not None:
        s, e, decoded = found
        assert base64.b64encode(decoded).decode() == text[s:e]
        assert e - s >= min_len


@settings(max_examples=100)
@given(st.binary(min_size=12, max_size=60), _printable, _printable)
def test_planted_base64_found(payload, pre, post):
    blob = base64.b64encode(payload).decode()
    found = find_base64(f"{pre} {blob} {post}")
    assert found is not None and found[1] - found[0] >= len(blob)


# -- aggregation --------------------------------------------------------------

def test_planted_string_counts():
    img = parse_binary(fixtures.planted_pe())
    hits = match_indicators(extract_strings(img, 3), CFG)
    assert (hits.sql_string_count, hits.ps_string_count, hits.keyword_api_count, hits.base64_count) == (10, 7, 3, 5)
    for _, offset in hits.keyword_hits:
        assert 0 <= offset < len(img.raw)
    assert hits.sql_string_count <= len(extract_strings(img, 3))


def test_content_type_hit_offset():
    hits = match_indicators([_s("text/plain", 40)], CFG)
    assert hits.content_type_hits == (("text/plain", 40),)


def test_content_type_uppercase():
    hits = match_indicators([_s("IMAGE/PNG", 0)], CFG)
    assert hits.content_type_hits == (("image/png", 0),)


def test_downloadstring_keyword():
    hits = match_indicators([_s("DownloadString(", 0)], CFG)
    assert "DownloadString" in [k for k, _ in hits.keyword_hits]


def test_utf16_offsets_scale():
    hits = match_indicators([_s("xx upload", 100, Encoding.UTF16LE)], CFG)
    assert hits.keyword_hits == (("upload", 106),)


def test_keyword_api_split():
    hits = match_indicators([_s("upload via WinExec", 0)], CFG)
    assert (hits.keyword_count, hits.api_count, hits.keyword_api_count) == (1, 1, 2)


def test_labels_are_attached():
    out = label_strings([_s("SELECT 1 FROM t"), _s("text/html"), _s("plain words")], CFG)
    assert [s.labels for s in out] == [frozenset({Label.SQL}), frozenset({Label.CONTENT_TYPE}), frozenset()]


def _naive(strings, cfg):
    """Per-string evaluation, independent of the batched implementation."""
    sql = sum(1 for s in strings if Label.SQL in classify_string(s.text, cfg))
    ps = sum(1 for s in strings if Label.POWERSHELL in classify_string(s.text, cfg))
    kw = sum(s.text.lower().count(k.lower()) for s in strings for k in cfg.suspicious_keywords | cfg.suspicious_apis)
    b64 = sum(1 for s in strings if find_base64(s.text, cfg.min_base64_len) is not None)
    return sql, ps, kw, b64


_b64ish = st.binary(min_size=8, max_size=30).map(lambda b: base64.b64encode(b).decode())


@settings(max_examples=200)
@given(st.lists(st.one_of(_texts, _b64ish, _printable), max_size=12))
def test_batched_analysis_matches_per_string(texts):
    strings = [_s(t, i * 100) for i, t in enumerate(texts)]
    labelled, hits = analyze_strings(strings, CFG)
    assert (hits.sql_string_count, hits.ps_string_count, hits.keyword_api_count, hits.base64_count) == \
        _naive(strings, CFG)
    assert [s.text for s in labelled] == texts
    for s in labelled:
        lang = classify_string(s.text, CFG)
        assert (Label.SQL in s.labels) == (Label.SQL in lang)
        assert (Label.POWERSHELL in s.labels) == (Label.POWERSHELL in lang)


def test_config_section_replaces_default(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("[sql_keywords]\nMERGE\n")
    cfg = load_config(p)
    assert cfg.sql_keywords == frozenset({"MERGE"})
    assert cfg.ps_keywords == CFG.ps_keywords
    assert classify_string("SELECT 1", cfg) == frozenset()


def test_shipped_sets_nonempty():
    for name in ("sql_keywords", "ps_keywords", "suspicious_keywords", "suspicious_apis", "content_types"):
        assert getattr(CFG, name)
    assert CFG.min_string_len == 3


def test_config_digest_stable():
    assert CFG.digest() == default_config().digest()
    assert CFG.digest() != replace(CFG, min_string_len=4).digest()

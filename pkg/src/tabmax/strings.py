"""
String extraction and string-level indicators.

Strings are pulled from the whole file the way ``strings`` does (ASCII and
UTF-16LE runs of printable characters), then labelled: SQL or PowerShell by
keyword, base64 by alphabet and round-trip, and suspicious keywords, API
names and MIME content types by case-insensitive substring.
"""

from __future__ import annotations

import base64
import binascii
import bisect
import enum
import functools
import hashlib
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from tabmax import config as _config
from tabmax.binary import BinaryImage
from tabmax.constants import DEFAULT_MIN_BASE64_LEN, DEFAULT_MIN_STRING_LEN


class Encoding(str, enum.Enum):
    ASCII = "ASCII"
    UTF16LE = "UTF16LE"


class Label(str, enum.Enum):
    SQL = "SQL"
    POWERSHELL = "POWERSHELL"
    BASE64 = "BASE64"
    KEYWORD = "KEYWORD"
    CONTENT_TYPE = "CONTENT_TYPE"


@dataclass(frozen=True)
class ExtractedString:
    text: str
    encoding: Encoding
    file_offset: int
    labels: frozenset = frozenset()

    @property
    def char_length(self) -> int:
        return len(self.text)

    @property
    def char_width(self) -> int:
        return 2 if self.encoding is Encoding.UTF16LE else 1

    @property
    def byte_length(self) -> int:
        return self.char_width * len(self.text)

    def offset_of(self, index: int) -> int:
        """File offset of character ``index``."""
        return self.file_offset + index * self.char_width


@dataclass(frozen=True)
class IndicatorConfig:
    sql_keywords: frozenset
    ps_keywords: frozenset
    suspicious_keywords: frozenset
    suspicious_apis: frozenset
    content_types: frozenset
    min_string_len: int = DEFAULT_MIN_STRING_LEN
    min_base64_len: int = DEFAULT_MIN_BASE64_LEN

    def __post_init__(self):
        if self.min_string_len < 1:
            raise ValueError("min_string_len must be at least 1")
        if self.min_base64_len < 4:
            raise ValueError("min_base64_len must be at least 4")

    def canonical_text(self) -> str:
        lines = []
        for name in ("sql_keywords", "ps_keywords", "suspicious_keywords", "suspicious_apis", "content_types"):
            lines.append(f"[{name}]")
            lines.extend(sorted(getattr(self, name)))
        lines.append("[settings]")
        lines.append(f"min_string_len = {self.min_string_len}")
        lines.append(f"min_base64_len = {self.min_base64_len}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_sections(cls, sections: dict[str, list[str]]) -> "IndicatorConfig":
        settings = dict(_config.key_values(sections.get("settings", [])))
        try:
            min_len = int(settings.get("min_string_len", DEFAULT_MIN_STRING_LEN))
            min_b64 = int(settings.get("min_base64_len", DEFAULT_MIN_BASE64_LEN))
        except ValueError as exc:
            raise _config.ConfigError(f"bad [settings] value: {exc}") from None
        return cls(
            sql_keywords=frozenset(sections.get("sql_keywords", ())),
            ps_keywords=frozenset(sections.get("ps_keywords", ())),
            suspicious_keywords=frozenset(sections.get("suspicious_keywords", ())),
            suspicious_apis=frozenset(sections.get("suspicious_apis", ())),
            content_types=frozenset(sections.get("content_types", ())),
            min_string_len=min_len,
            min_base64_len=min_b64,
        )


def default_config() -> IndicatorConfig:
    return IndicatorConfig.from_sections(_config.default_sections())


def load_config(path: str | os.PathLike | None) -> IndicatorConfig:
    """Shipped defaults overlaid with the sections present in ``path``."""
    return IndicatorConfig.from_sections(_config.merged_sections(path))


@dataclass(frozen=True)
class IndicatorHits:
    sql_string_count: int = 0
    ps_string_count: int = 0
    keyword_hits: tuple = ()            # (keyword or API, file offset), both classes
    base64_hits: tuple = ()             # (file offset, decoded length)
    content_type_hits: tuple = ()       # (content type, file offset)
    api_names: frozenset = field(default=frozenset(), repr=False)

    @property
    def keyword_api_count(self) -> int:
        return len(self.keyword_hits)

    @property
    def api_count(self) -> int:
        return sum(1 for kw, _ in self.keyword_hits if kw in self.api_names)

    @property
    def keyword_count(self) -> int:
        return self.keyword_api_count - self.api_count

    @property
    def distinct_keyword_count(self) -> int:
        return len({kw.lower() for kw, _ in self.keyword_hits})

    @property
    def base64_count(self) -> int:
        return len(self.base64_hits)


_PRINTABLE = rb"[\x20-\x7e]"


@functools.lru_cache(maxsize=16)
def _string_patterns(min_len: int):
    ascii_re = re.compile(_PRINTABLE + b"{%d,}" % min_len)
    utf16_re = re.compile(b"(?:" + _PRINTABLE + b"\x00){%d,}" % min_len)
    return ascii_re, utf16_re


def extract_strings(image: BinaryImage | bytes, min_len: int = DEFAULT_MIN_STRING_LEN) -> list[ExtractedString]:
    """
    Maximal printable runs of at least ``min_len`` characters, both as
    single-byte ASCII and as UTF-16LE (printable byte followed by NUL).

    :return: strings ordered by file offset, ASCII before UTF-16 on ties
    """
    if min_len < 1:
        raise ValueError("min_len must be at least 1")
    raw = image.raw if isinstance(image, BinaryImage) else bytes(image)
    ascii_re, utf16_re = _string_patterns(min_len)
    found = [ExtractedString(m.group().decode("ascii"), Encoding.ASCII, m.start())
             for m in ascii_re.finditer(raw)]
    ascii_last = {s.file_offset + s.char_length - 1 for s in found}
    for m in utf16_re.finditer(raw):
        start, text = m.start(), m.group()[::2]
        # "abc\0" followed by a UTF-16 run: the 'c' belongs to the ASCII string
        if start in ascii_last:
            start, text = start + 2, text[1:]
            if len(text) < min_len:
                continue
        found.append(ExtractedString(text.decode("ascii"), Encoding.UTF16LE, start))
    found.sort(key=lambda s: (s.file_offset, s.encoding is Encoding.UTF16LE))
    return found


_WORD = "A-Za-z0-9_"


def _keyword_regex(keyword: str) -> str:
    if keyword == "$":
        # sigil: only a variable reference counts, not a lone dollar sign
        return r"\$(?=[A-Za-z_{])"
    left = f"(?<![{_WORD}])" if keyword[0].isalnum() else ""
    right = f"(?![{_WORD}])" if keyword[-1].isalnum() else ""
    return left + re.escape(keyword) + right


@functools.lru_cache(maxsize=64)
def _keyword_pattern(keywords: frozenset) -> Optional[re.Pattern]:
    if not keywords:
        return None
    parts = sorted((_keyword_regex(k) for k in keywords if k), key=lambda p: (-len(p), p))
    # a leading first-character lookahead lets the engine skip most positions cheaply
    first = "".join(sorted({re.escape(k[0]) for k in keywords if k}))
    return re.compile(f"(?=[{first}])(?:{'|'.join(parts)})", re.IGNORECASE)


def classify_string(text: str, cfg: IndicatorConfig) -> frozenset:
    """
    Language labels for one string.

    A keyword whose edge character is alphanumeric must sit on a token
    boundary on that side, so ``SELECT`` does not fire inside ``selector``
    while ``Invoke-`` and ``sp_`` act as prefixes. Matching ignores case.
    Both labels may apply at once.
    """
    labels = set()
    sql = _keyword_pattern(cfg.sql_keywords)
    if sql is not None and sql.search(text):
        labels.add(Label.SQL)
    ps = _keyword_pattern(cfg.ps_keywords)
    if ps is not None and ps.search(text):
        labels.add(Label.POWERSHELL)
    return frozenset(labels)


_B64_RUN = re.compile(r"[A-Za-z0-9+/]+(={1,2})?")


def find_base64(text: str, min_b64_len: int = DEFAULT_MIN_BASE64_LEN) -> Optional[tuple[int, int, bytes]]:
    """
    Longest substring of ``text`` that is canonical base64.

    :return: ``(start, end, decoded)`` or None; ties go to the leftmost
    """
    best = None
    for m in _B64_RUN.finditer(text):
        start, end = m.span()
        pad = len(m.group(1) or "")
        run_end = end - pad
        candidates = []
        if pad:
            trim = (end - start) % 4
            if end - (start + trim) >= 4:
                candidates.append((start + trim, end))
        usable = (run_end - start) // 4 * 4
        if usable:
            candidates.append((start, start + usable))
        for s, e in candidates:
            length = e - s
            if length < min_b64_len:
                continue
            if best is not None and (length < best[1] - best[0] or (length == best[1] - best[0] and s >= best[0])):
                continue
            chunk = text[s:e]
            try:
                decoded = base64.b64decode(chunk, validate=True)
            except (binascii.Error, ValueError):
                continue
            if base64.b64encode(decoded).decode("ascii") != chunk:
                continue
            best = (s, e, decoded)
            break
    return best


def detect_base64(text: str, min_b64_len: int = DEFAULT_MIN_BASE64_LEN) -> Optional[bytes]:
    found = find_base64(text, min_b64_len)
    return found[2] if found else None


@functools.lru_cache(maxsize=16)
def _b64_prefilter(min_b64_len: int) -> re.Pattern:
    # a qualifying candidate has at least min_b64_len - 2 alphabet characters in a row
    return re.compile("[A-Za-z0-9+/]{%d,}" % max(min_b64_len - 2, 1))


class _Joined:
    """All string texts joined by newlines so each pattern runs once over the batch."""

    def __init__(self, strings: list[ExtractedString]):
        self.strings = strings
        self.text = "\n".join(s.text for s in strings)
        self.starts = []
        pos = 0
        for s in strings:
            self.starts.append(pos)
            pos += len(s.text) + 1
        self._lower = None

    @property
    def lower(self) -> str:
        if self._lower is None:
            self._lower = self.text.lower()
        return self._lower

    def owner(self, pos: int) -> int:
        return bisect.bisect_right(self.starts, pos) - 1

    def matching(self, pattern: Optional[re.Pattern]) -> set[int]:
        """Indices of strings with at least one match. Matches never span a newline."""
        if pattern is None:
            return set()
        return {self.owner(m.start()) for m in pattern.finditer(self.text)}

    def occurrences(self, needle: str) -> Iterable[tuple[int, int]]:
        """``(string index, char index)`` of non-overlapping, case-insensitive occurrences."""
        needle = needle.lower()
        lower, n = self.lower, len(needle)
        i = lower.find(needle)
        while i >= 0:
            k = self.owner(i)
            yield k, i - self.starts[k]
            i = lower.find(needle, i + n)


def analyze_strings(strings: list[ExtractedString], cfg: IndicatorConfig) -> tuple[list[ExtractedString], IndicatorHits]:
    """
    Label every string and aggregate the string indicators in one pass.

    Keywords, API names and content types are counted per occurrence
    (case-insensitive substring); SQL and PowerShell are counted per string.

    :return: labelled copies of ``strings`` and the aggregated hits
    """
    joined = _Joined(strings)
    sql = joined.matching(_keyword_pattern(cfg.sql_keywords))
    ps = joined.matching(_keyword_pattern(cfg.ps_keywords))

    keyword_hits, content_hits = [], []
    keyword_owners, content_owners = set(), set()
    for kw in sorted(k for k in cfg.suspicious_keywords | cfg.suspicious_apis if k):
        for k, i in joined.occurrences(kw):
            keyword_hits.append((kw, strings[k].offset_of(i)))
            keyword_owners.add(k)
    for ct in sorted(c for c in cfg.content_types if c):
        for k, i in joined.occurrences(ct):
            content_hits.append((ct, strings[k].offset_of(i)))
            content_owners.add(k)

    base64_hits = []
    base64_owners = set()
    for k in sorted(joined.matching(_b64_prefilter(cfg.min_base64_len))):
        found = find_base64(strings[k].text, cfg.min_base64_len)
        if found is not None:
            base64_hits.append((strings[k].offset_of(found[0]), len(found[2])))
            base64_owners.add(k)

    labelled = []
    for k, s in enumerate(strings):
        labels = set()
        if k in sql:
            labels.add(Label.SQL)
        if k in ps:
            labels.add(Label.POWERSHELL)
        if k in keyword_owners:
            labels.add(Label.KEYWORD)
        if k in content_owners:
            labels.add(Label.CONTENT_TYPE)
        if k in base64_owners:
            labels.add(Label.BASE64)
        labels = frozenset(labels)
        labelled.append(s if labels == s.labels else ExtractedString(s.text, s.encoding, s.file_offset, labels))

    keyword_hits.sort(key=lambda h: (h[1], h[0]))
    content_hits.sort(key=lambda h: (h[1], h[0]))
    hits = IndicatorHits(
        sql_string_count=len(sql),
        ps_string_count=len(ps),
        keyword_hits=tuple(keyword_hits),
        base64_hits=tuple(base64_hits),
        content_type_hits=tuple(content_hits),
        api_names=frozenset(cfg.suspicious_apis),
    )
    return labelled, hits


def match_indicators(strings: list[ExtractedString], cfg: IndicatorConfig) -> IndicatorHits:
    """Aggregate string indicators over one file's extracted strings."""
    return analyze_strings(strings, cfg)[1]


def label_strings(strings: list[ExtractedString], cfg: IndicatorConfig) -> list[ExtractedString]:
    """Copies of ``strings`` carrying every applicable label."""
    return analyze_strings(strings, cfg)[0]

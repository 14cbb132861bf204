"""
Character-frequency tables and cosine "obfuscation indices".

A table is the normalized distribution of the 95 printable ASCII characters
(case preserved). Reference tables come from SQL and PowerShell script
corpora; target tables come from the strings of one binary that carry the
matching language label. The index is the cosine similarity of the two.
Higher values mean the binary's strings look more like real scripts.
"""

from __future__ import annotations

import collections
import csv
import enum
import io
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from tabmax.constants import ALPHABET_SIZE, PRINTABLE_HIGH, PRINTABLE_LOW, SUM_TOLERANCE
from tabmax.strings import ExtractedString, Label


class EmptyCorpus(ValueError):
    """No printable characters were found in the input texts."""


class BaselineError(ValueError):
    """A frequency-table file is malformed."""


class Provenance(str, enum.Enum):
    CORPUS = "CORPUS"
    TARGET = "TARGET"


@dataclass(frozen=True)
class FrequencyTable:
    values: tuple[float, ...]
    provenance: Provenance
    source_id: str
    total_chars: Optional[int]      # None when loaded from a file

    def __post_init__(self):
        if len(self.values) != ALPHABET_SIZE:
            raise ValueError(f"frequency table needs {ALPHABET_SIZE} entries, got {len(self.values)}")

    def __getitem__(self, char: str) -> float:
        return self.values[ord(char) - PRINTABLE_LOW]

    def as_dict(self) -> dict[str, float]:
        return {chr(PRINTABLE_LOW + i): v for i, v in enumerate(self.values)}

    def top(self, n: int = 30) -> list[tuple[str, float]]:
        ranked = sorted(self.as_dict().items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:n]

    @property
    def is_zero(self) -> bool:
        return not any(self.values)


def zero_table(provenance: Provenance, source_id: str) -> FrequencyTable:
    return FrequencyTable((0.0,) * ALPHABET_SIZE, provenance, source_id, 0)


def count_chars(texts: Iterable[str]) -> list[int]:
    """Occurrences of each printable ASCII character; anything else is ignored."""
    tally = collections.Counter()
    for text in texts:
        tally.update(text)
    return [tally.get(chr(code), 0) for code in range(PRINTABLE_LOW, PRINTABLE_HIGH + 1)]


def table_from_counts(counts: Sequence[float], provenance: Provenance, source_id: str) -> FrequencyTable:
    total = math.fsum(counts)
    if total <= 0:
        return zero_table(provenance, source_id)
    values = tuple(c / total for c in counts)
    return FrequencyTable(values, provenance, source_id, int(total) if float(total).is_integer() else None)


def build_frequency_table(texts: Iterable[str], source_id: str) -> FrequencyTable:
    """
    Reference table over a corpus of script texts.

    :raises EmptyCorpus: no printable character in any text
    """
    counts = count_chars(texts)
    if not any(counts):
        raise EmptyCorpus(f"{source_id}: corpus contains no printable characters")
    return table_from_counts(counts, Provenance.CORPUS, source_id)


def target_frequency(strings: Iterable[ExtractedString], label: Label, source_id: str = "target") -> FrequencyTable:
    """Table over every string carrying ``label``; all-zero when none do."""
    counts = count_chars(s.text for s in strings if label in s.labels)
    return table_from_counts(counts, Provenance.TARGET, source_id)


def cosine_similarity(a: FrequencyTable | Sequence[float], b: FrequencyTable | Sequence[float]) -> float:
    va = a.values if isinstance(a, FrequencyTable) else a
    vb = b.values if isinstance(b, FrequencyTable) else b
    # products are accumulated in index order so the result is symmetric bit-for-bit
    dot = math.fsum(x * y for x, y in zip(va, vb))
    na = math.sqrt(math.fsum(x * x for x in va))
    nb = math.sqrt(math.fsum(y * y for y in vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, dot / (na * nb)))


@dataclass(frozen=True)
class ObfuscationIndices:
    sql_index: float
    ps1_index: float
    sql_char_total: int
    ps1_char_total: int


def obfuscation_indices(strings: Sequence[ExtractedString], sql_baseline: FrequencyTable,
                        ps_baseline: FrequencyTable) -> ObfuscationIndices:
    """
    Cosine of the SQL-labelled and PowerShell-labelled string distributions
    against their corpus baselines. ``strings`` must already be labelled.
    """
    for base in (sql_baseline, ps_baseline):
        if base.provenance is not Provenance.CORPUS:
            raise ValueError(f"baseline {base.source_id} is not a corpus table")
    sql_t = target_frequency(strings, Label.SQL, "target-sql")
    ps_t = target_frequency(strings, Label.POWERSHELL, "target-ps1")
    return ObfuscationIndices(
        sql_index=cosine_similarity(sql_t, sql_baseline),
        ps1_index=cosine_similarity(ps_t, ps_baseline),
        sql_char_total=sql_t.total_chars or 0,
        ps1_char_total=ps_t.total_chars or 0,
    )


# -- CSV ---------------------------------------------------------------

CSV_HEADER = ("char_code", "frequency")


def table_to_csv(table: FrequencyTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i, v in enumerate(table.values):
        writer.writerow((PRINTABLE_LOW + i, f"{v:.12f}"))
    return buf.getvalue()


def write_table_csv(table: FrequencyTable, path: str | os.PathLike) -> None:
    Path(path).write_text(table_to_csv(table), encoding="ascii")


def table_from_csv(text: str, source_id: str) -> FrequencyTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise BaselineError(f"{source_id}: header must be {','.join(CSV_HEADER)}")
    values = [None] * ALPHABET_SIZE
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            code, freq = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise BaselineError(f"{source_id}:{lineno}: expected 'char_code,frequency'") from None
        if not PRINTABLE_LOW <= code <= PRINTABLE_HIGH:
            raise BaselineError(f"{source_id}:{lineno}: char_code {code} is not printable ASCII")
        if values[code - PRINTABLE_LOW] is not None:
            raise BaselineError(f"{source_id}:{lineno}: duplicate char_code {code}")
        if not (freq >= 0.0 and math.isfinite(freq)):
            raise BaselineError(f"{source_id}:{lineno}: frequency must be a non-negative number")
        values[code - PRINTABLE_LOW] = freq
    missing = [PRINTABLE_LOW + i for i, v in enumerate(values) if v is None]
    if missing:
        raise BaselineError(f"{source_id}: missing rows for char codes {missing[:5]}...")
    total = math.fsum(values)
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise BaselineError(f"{source_id}: frequencies sum to {total!r}, not 1")
    return FrequencyTable(tuple(values), Provenance.CORPUS, source_id, None)


def read_table_csv(path: str | os.PathLike, source_id: str | None = None) -> FrequencyTable:
    p = Path(path)
    return table_from_csv(p.read_text(encoding="utf-8"), source_id or p.name)


# -- corpora -----------------------------------------------------------

def read_script(path: Path) -> str:
    data = path.read_bytes()
    if data.startswith((b"\xff\xfe", b"\xfe\xff")):
        return data.decode("utf-16", errors="replace")
    if data.startswith(b"\xef\xbb\xbf"):
        return data[3:].decode("utf-8", errors="replace")
    return data.decode("utf-8", errors="replace")


def collect_corpus(root: str | os.PathLike, extension: str) -> list[Path]:
    """Files under ``root`` (recursively) whose suffix matches, case-insensitively."""
    ext = extension.lower()
    return sorted(p for p in Path(root).rglob("*") if p.is_file() and p.suffix.lower() == ext)


def build_corpus_table(files: Sequence[Path], source_id: str) -> FrequencyTable:
    return build_frequency_table((read_script(f) for f in files), source_id)

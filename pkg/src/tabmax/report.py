"""
Indicator rows and their rendering.

One ``ScanRow`` per scanned file carries the string-level columns
(SQL/PowerShell/keyword/base64 counts and the two obfuscation indices) and
the instruction-level columns (cmp, strstr, CompareStringA and whether a
command literal was recovered). Rows are indicators with advisory notes;
nothing here classifies a file as malicious.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from tabmax import __version__
from tabmax.assembly import CodeIndicators
from tabmax.obfuscation import ObfuscationIndices
from tabmax.strings import IndicatorHits

SCHEMA_VERSION = 1


class Format(str, enum.Enum):
    TABLE = "table"
    CSV = "csv"
    JSON = "json"


@dataclass(frozen=True)
class ScanRow:
    file_name: str
    sha256: str = ""
    sql_string_count: int = 0
    ps_string_count: int = 0
    keyword_api_count: int = 0
    base64_count: int = 0
    obf_index_sql: float = 0.0
    obf_index_ps1: float = 0.0
    cmp_count: int = 0
    strstr_count: int = 0
    comparestringa_count: int = 0
    command_sequence_found: bool = False
    command_tokens: tuple = ()
    constant_fingerprints: tuple = ()
    # split of keyword_api_count and columns beyond the published matrix
    keyword_count: int = 0
    api_count: int = 0
    comparestringw_count: int = 0
    anchored_function_count: int = 0
    notes: tuple = ()
    error: Optional[str] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        for name in ("obf_index_sql", "obf_index_ps1"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.command_sequence_found != bool(self.command_tokens):
            raise ValueError("command_sequence_found must mirror command_tokens")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("command_tokens", "constant_fingerprints", "notes"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScanRow":
        d = dict(d)
        for key in ("command_tokens", "constant_fingerprints", "notes"):
            d[key] = tuple(d.get(key, ()))
        return cls(**d)


@dataclass(frozen=True)
class ScanReport:
    rows: tuple
    config_digest: str
    baseline_ids: tuple                 # (sql, ps1)
    tool_version: str = __version__

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: (r.file_name, r.sha256))))

    @property
    def failed(self) -> list[ScanRow]:
        return [r for r in self.rows if r.error is not None]


NOTE_VERIFY = "script-like strings resemble a backdoor's; verify the binary signature and hash"
NOTE_DISPATCH = "string comparisons against command literals; review the dispatching function"
NOTE_ANCHOR = "code references a content-type literal; check what the referencing function returns"


def advisory_notes(row: ScanRow) -> tuple[str, ...]:
    """Follow-up hints for a human analyst, never a verdict."""
    notes = []
    if row.command_sequence_found and (row.cmp_count or row.strstr_count or row.comparestringa_count
                                       or row.comparestringw_count):
        notes.append(NOTE_DISPATCH)
    if row.anchored_function_count:
        notes.append(NOTE_ANCHOR)
    if row.sql_string_count and row.ps_string_count and not row.command_sequence_found:
        notes.append(NOTE_VERIFY)
    return tuple(notes)


def format_fingerprint(name: str, va: int) -> str:
    return f"{name}@{va:x}"


def assemble_row(file: str, sha256: str, hits: IndicatorHits, idx: ObfuscationIndices,
                 code: CodeIndicators) -> ScanRow:
    row = ScanRow(
        file_name=str(file),
        sha256=sha256,
        sql_string_count=hits.sql_string_count,
        ps_string_count=hits.ps_string_count,
        keyword_api_count=hits.keyword_api_count,
        base64_count=hits.base64_count,
        obf_index_sql=idx.sql_index,
        obf_index_ps1=idx.ps1_index,
        cmp_count=code.cmp_ascii_count,
        strstr_count=code.strstr_call_count,
        comparestringa_count=code.comparestringa_call_count,
        command_sequence_found=bool(code.command_tokens),
        command_tokens=tuple(code.command_tokens),
        constant_fingerprints=tuple(format_fingerprint(n, va) for n, va in code.constant_fingerprints),
        keyword_count=hits.keyword_count,
        api_count=hits.api_count,
        comparestringw_count=code.comparestringw_call_count,
        anchored_function_count=code.anchored_function_count,
    )
    return replace(row, notes=advisory_notes(row))


def error_row(file: str, message: str, sha256: str = "") -> ScanRow:
    return ScanRow(file_name=str(file), sha256=sha256, error=message)


# -- rendering ------------------------------------------------------------

TABLE_COLUMNS = [
    ("Native Module Filename", "file_name"),
    ("No. of SQL strings", "sql_string_count"),
    ("No. of ps1 strings", "ps_string_count"),
    ("No. of Interesting strings /keywords and API", "keyword_api_count"),
    ("No. of Base64 encoded strings", "base64_count"),
    ("Obfuscation index SQL", "obf_index_sql"),
    ("Obfuscation index ps1", "obf_index_ps1"),
    ("No. of CMP", "cmp_count"),
    ("No. of StrStr", "strstr_count"),
    ("No. of Calling CompareStringA", "comparestringa_count"),
    ("Identified Character Sequence and Command", "command_sequence_found"),
]

CSV_COLUMNS = [
    "file_name", "sha256", "sql_string_count", "ps_string_count", "keyword_api_count", "base64_count",
    "obf_index_sql", "obf_index_ps1", "cmp_count", "strstr_count", "comparestringa_count",
    "command_sequence_found", "command_tokens", "constant_fingerprints", "keyword_count", "api_count",
    "comparestringw_count", "anchored_function_count", "notes", "error",
]


def _cell(row: ScanRow, key: str) -> str:
    v = getattr(row, key)
    if key.startswith("obf_index"):
        return f"{v:.3f}"
    if isinstance(v, bool):
        return "Yes" if v else "No"
    if isinstance(v, tuple):
        return ";".join(v)
    if v is None:
        return ""
    return str(v)


def render_table(report: ScanReport) -> str:
    headers = [h for h, _ in TABLE_COLUMNS]
    body = [[_cell(r, k) for _, k in TABLE_COLUMNS] for r in report.rows]
    widths = [max(len(c) for c in col) for col in zip(headers, *body)]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join([first] + rest).rstrip()

    out = [line(headers), line(["-" * w for w in widths])]
    out += [line(cells) for cells in body]
    details = []
    for r in report.rows:
        if r.error:
            details.append(f"{r.file_name}: error: {r.error}")
        if r.command_tokens:
            details.append(f"{r.file_name}: command tokens: {', '.join(r.command_tokens)}")
        if r.constant_fingerprints:
            details.append(f"{r.file_name}: known constants: {', '.join(r.constant_fingerprints)}")
        for n in r.notes:
            details.append(f"{r.file_name}: note: {n}")
    if details:
        out.append("")
        out += details
    out.append("")
    out.append(f"config {report.config_digest[:16]}  baselines {report.baseline_ids[0]}, {report.baseline_ids[1]}  "
               f"tabmax {report.tool_version}")
    return "\n".join(out) + "\n"


def render_csv(report: ScanReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        cells = []
        for key in CSV_COLUMNS:
            v = getattr(r, key)
            cells.append("true" if v is True else "false" if v is False else _cell(r, key))
        writer.writerow(cells)
    return buf.getvalue()


def report_to_dict(report: ScanReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": report.tool_version,
        "config_digest": report.config_digest,
        "baseline_ids": {"sql": report.baseline_ids[0], "ps1": report.baseline_ids[1]},
        "rows": [r.to_dict() for r in report.rows],
    }


def render_json(report: ScanReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"


def report_from_json(text: str) -> ScanReport:
    d = json.loads(text)
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
    b = d["baseline_ids"]
    return ScanReport(
        rows=tuple(ScanRow.from_dict(r) for r in d["rows"]),
        config_digest=d["config_digest"],
        baseline_ids=(b["sql"], b["ps1"]),
        tool_version=d["tool_version"],
    )


def render(report: ScanReport, fmt: Format | str) -> bytes:
    fmt = Format(fmt)
    if fmt is Format.TABLE:
        text = render_table(report)
    elif fmt is Format.CSV:
        text = render_csv(report)
    else:
        text = render_json(report)
    return text.encode("utf-8")

"""Command-line front end: ``tabmax scan | build-corpus | compare | explain``."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from tabmax import __version__
from tabmax.assembly import UnsupportedArchitecture, disassemble, parse_constants
from tabmax.baselines import default_ps1_baseline, default_sql_baseline
from tabmax.binary import BinaryFormatError, NotAnExecutable, load_binary
from tabmax.config import ConfigError, key_values, merged_sections
from tabmax.constants import DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_FILE_SIZE, DEFAULT_MIN_INSTRUCTIONS
from tabmax.obfuscation import (BaselineError, EmptyCorpus, build_corpus_table, collect_corpus, read_table_csv,
                                write_table_csv)
from tabmax.report import Format, render
from tabmax.scanner import ScanSettings, scan_files
from tabmax.similarity import (FunctionDigest, digest_functions, format_match, match_binaries, read_digests,
                               write_digests)
from tabmax.strings import IndicatorConfig

EXIT_OK = 0
EXIT_PARSE_FAILURE = 2
EXIT_USAGE = 64
EXIT_EMPTY_CORPUS = 65
EXIT_NO_INPUT = 66

CONFIG_ENV = "TABMAX_CONFIG"


class UsageError(Exception):
    pass


class MissingInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"tabmax: {msg}", file=sys.stderr)


def _write(data: bytes) -> None:
    out = getattr(sys.stdout, "buffer", None)
    if out is None:                 # captured or replaced stdout
        sys.stdout.write(data.decode("utf-8"))
    else:
        sys.stdout.flush()
        out.write(data)
        out.flush()


# -- configuration ------------------------------------------------------

def _config_path(args) -> Optional[Path]:
    raw = args.config or os.environ.get(CONFIG_ENV) or None
    if raw is None:
        return None
    p = Path(raw)
    if not p.is_file():
        raise MissingInput(f"config file not found: {p}")
    return p


def _baseline(flag: Optional[str], configured: Optional[str], base_dir: Optional[Path], loader, label: str):
    if flag:
        path = Path(flag)
    elif configured:
        path = Path(configured)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
    else:
        return loader()
    if not path.is_file():
        raise MissingInput(f"{label} baseline not found: {path}")
    try:
        return read_table_csv(path)
    except BaselineError as exc:
        raise MissingInput(f"{label} baseline unusable: {exc}") from None


def load_settings(args) -> ScanSettings:
    """Resolve indicator config, constants and baselines from flags, config file and defaults."""
    path = _config_path(args)
    sections = merged_sections(path)
    cfg = IndicatorConfig.from_sections(sections)
    if getattr(args, "min_string_len", None) is not None:
        if args.min_string_len < 1:
            raise UsageError("--min-string-len must be at least 1")
        cfg = replace(cfg, min_string_len=args.min_string_len)
    constants = parse_constants(key_values(sections.get("constants", [])))
    configured = dict(key_values(sections.get("baselines", [])))
    base_dir = path.parent if path else None
    sql = _baseline(args.sql_baseline, configured.get("sql"), base_dir, default_sql_baseline, "SQL")
    ps1 = _baseline(args.ps1_baseline, configured.get("ps1"), base_dir, default_ps1_baseline, "PowerShell")
    return ScanSettings(cfg, sql, ps1, constants=constants, cmp_strict=args.cmp_strict,
                        anchored_only=args.anchored_only)


# -- commands -----------------------------------------------------------

def run_scan(args) -> int:
    settings = load_settings(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    report = scan_files(args.inputs, settings, jobs=args.jobs)
    _write(render(report, args.format))
    for row in report.failed:
        _err(f"{row.file_name}: {row.error}")
    return EXIT_PARSE_FAILURE if report.failed else EXIT_OK


def run_build_corpus(args) -> int:
    root = Path(args.directory)
    if not root.exists():
        raise MissingInput(f"corpus directory not found: {root}")
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    out = Path(args.output or ".")
    tables = []
    empty = []
    for ext, label, stem in ((".sql", "sql", "sql_baseline"), (".ps1", "ps1", "ps1_baseline")):
        files = collect_corpus(root, ext)
        try:
            table = build_corpus_table(files, f"{stem}:{root.name or root}")
        except EmptyCorpus:
            empty.append(label)
            continue
        tables.append((label, stem, files, table))
    if empty:
        _err(f"empty corpus for {' and '.join(empty)}: no {', '.join('.' + e for e in empty)} file "
             f"with printable characters under {root}")
        return EXIT_EMPTY_CORPUS
    out.mkdir(parents=True, exist_ok=True)
    for label, stem, files, table in tables:
        dest = out / f"{stem}.csv"
        write_table_csv(table, dest)
        print(f"{label}: {len(files)} files, {table.total_chars} characters -> {dest}")
    return EXIT_OK


def _digests_for(path: str, max_size: int) -> list[FunctionDigest]:
    try:
        image = load_binary(path, max_size=max_size)
    except NotAnExecutable:
        # a saved digest listing is accepted in place of a binary
        return read_digests(path)
    return digest_functions(image.binary_id, disassemble(image))


def run_compare(args) -> int:
    if len(args.inputs) != 2:
        raise UsageError("compare takes exactly two inputs")
    if not args.threshold >= 0.0:
        raise UsageError("--threshold must be non-negative")
    if args.min_instructions < 1:
        raise UsageError("--min-instructions must be at least 1")
    sides = []
    for path in args.inputs:
        try:
            sides.append(_digests_for(path, args.max_file_size))
        except FileNotFoundError:
            _err(f"{path}: file not found")
            return EXIT_PARSE_FAILURE
        except (OSError, BinaryFormatError, UnsupportedArchitecture, ValueError, UnicodeDecodeError) as exc:
            _err(f"{path}: {exc}")
            return EXIT_PARSE_FAILURE
    if args.save_digests:
        out = Path(args.save_digests)
        out.mkdir(parents=True, exist_ok=True)
        for digests in sides:
            if digests:
                write_digests(digests, out / f"{digests[0].binary_id}.digests")
    for m in match_binaries(sides[0], sides[1], args.threshold, args.min_instructions):
        print(format_match(m))
    return EXIT_OK


INDICATORS = {
    "sql": ("No. of SQL strings",
            "Extracted strings (ASCII or UTF-16LE, at least --min-string-len characters) containing a "
            "[sql_keywords] entry on a word boundary, case-insensitive. Counted once per string."),
    "ps1": ("No. of ps1 strings",
            "Extracted strings containing a [ps_keywords] entry such as Invoke- or a $variable. "
            "Counted once per string; a string may be both SQL and PowerShell."),
    "keywords": ("No. of Interesting strings /keywords and API",
                 "Occurrences of [suspicious_keywords] and [suspicious_apis] entries as case-insensitive "
                 "substrings. JSON splits the total into keyword_count and api_count."),
    "base64": ("No. of Base64 encoded strings",
               "Strings holding a run of at least min_base64_len characters that decodes as canonical base64. "
               "Long identifiers made only of letters can qualify too."),
    "obf-sql": ("Obfuscation index SQL",
                "Cosine similarity between the character distribution of the SQL strings and the SQL "
                "reference table. 0 when no SQL string was found."),
    "obf-ps1": ("Obfuscation index ps1",
                "Cosine similarity between the character distribution of the PowerShell strings and the "
                "PowerShell reference table. 0 when no PowerShell string was found."),
    "cmp": ("No. of CMP",
            "cmp instructions (and test, unless --cmp-strict) whose immediate consists only of printable ASCII "
            "bytes once high zero bytes are dropped, e.g. cmp eax, 0x504d44 ('DMP')."),
    "strstr": ("No. of StrStr", "Calls resolving to an import named strstr, directly or through a jump stub."),
    "comparestringa": ("No. of Calling CompareStringA",
                       "Calls resolving to the CompareStringA import. CompareStringW is counted separately."),
    "command": ("Identified Character Sequence and Command",
                "Yes when a literal was recovered for a counted compare site: a string whose address is loaded "
                "shortly before the call, or the printable bytes of a cmp immediate."),
    "constants": ("Known constants",
                  "Functions using an immediate listed under [constants], e.g. the Adler-32 modulus 0xFFF1."),
}


def run_explain(args) -> int:
    key = args.indicator.lower()
    if key not in INDICATORS:
        raise UsageError(f"unknown indicator {args.indicator!r}; choose from {', '.join(INDICATORS)}")
    title, text = INDICATORS[key]
    print(f"{title}\n  {text}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tabmax", description="Static backdoor indicators for web-server native modules.")
    p.add_argument("--version", action="version", version=f"tabmax {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help=f"indicator config (fallback: ${CONFIG_ENV})")
        sp.add_argument("--sql-baseline", metavar="PATH")
        sp.add_argument("--ps1-baseline", metavar="PATH")
        sp.add_argument("--min-string-len", type=int, metavar="N")
        sp.add_argument("--cmp-strict", action="store_true", help="count cmp only, not test")
        sp.add_argument("--anchored-only", action="store_true",
                        help="count compare sites only in functions referencing a content type")

    s = sub.add_parser("scan", help="scan binaries and print the indicator matrix")
    s.add_argument("inputs", nargs="+", metavar="FILE")
    s.add_argument("--format", choices=[f.value for f in Format], default="table")
    s.add_argument("--jobs", type=int, default=1, metavar="N")
    common(s)
    s.set_defaults(func=run_scan)

    b = sub.add_parser("build-corpus", help="build SQL and PowerShell reference tables from a script corpus")
    b.add_argument("directory")
    b.add_argument("-o", "--output", metavar="DIR", help="where to write the two CSVs (default: .)")
    b.set_defaults(func=run_build_corpus)

    c = sub.add_parser("compare", help="match functions of two binaries by simhash")
    c.add_argument("inputs", nargs="+", metavar="FILE")
    c.add_argument("--threshold", type=float, default=DEFAULT_MATCH_THRESHOLD)
    c.add_argument("--min-instructions", type=int, default=DEFAULT_MIN_INSTRUCTIONS)
    c.add_argument("--save-digests", metavar="DIR")
    c.set_defaults(func=run_compare, max_file_size=DEFAULT_MAX_FILE_SIZE)

    e = sub.add_parser("explain", help="describe how an indicator is computed")
    e.add_argument("indicator", help=", ".join(INDICATORS))
    e.set_defaults(func=run_explain)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except MissingInput as exc:
        _err(str(exc))
        return EXIT_NO_INPUT
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        # bad [settings] values or unreadable config
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

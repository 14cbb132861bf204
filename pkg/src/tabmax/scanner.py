"""
Per-file scanning pipeline: load, extract strings, classify, compute
indices, disassemble, count, assemble a row. A failure on one file becomes
an error row and never touches another file's row.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from tabmax.assembly import UnsupportedArchitecture, analyze_code
from tabmax.binary import BinaryFormatError, BinaryImage, load_binary
from tabmax.constants import DEFAULT_MAX_FILE_SIZE, DEFAULT_TOKEN_WINDOW
from tabmax.obfuscation import FrequencyTable, obfuscation_indices
from tabmax.report import ScanReport, ScanRow, assemble_row, error_row
from tabmax.strings import IndicatorConfig, Label, analyze_strings, extract_strings


@dataclass(frozen=True)
class ScanSettings:
    config: IndicatorConfig
    sql_baseline: FrequencyTable
    ps1_baseline: FrequencyTable
    constants: tuple | None = None        # None: shipped table
    cmp_strict: bool = False
    anchored_only: bool = False
    token_window: int = DEFAULT_TOKEN_WINDOW
    max_file_size: int = DEFAULT_MAX_FILE_SIZE


def scan_image(image: BinaryImage, settings: ScanSettings, file_name: str | None = None) -> ScanRow:
    cfg = settings.config
    strings, hits = analyze_strings(extract_strings(image, cfg.min_string_len), cfg)
    indices = obfuscation_indices(strings, settings.sql_baseline, settings.ps1_baseline)
    anchors = [s for s in strings if Label.CONTENT_TYPE in s.labels]
    code = analyze_code(image, anchors=anchors, strict=settings.cmp_strict, constants=settings.constants,
                        window=settings.token_window, anchored_only=settings.anchored_only)
    return assemble_row(file_name or image.path, image.sha256, hits, indices, code.indicators)


def scan_file(path: str | os.PathLike, settings: ScanSettings) -> ScanRow:
    name = os.fspath(path)
    try:
        image = load_binary(name, settings.max_file_size)
    except FileNotFoundError:
        return error_row(name, "file not found")
    except (OSError, BinaryFormatError) as exc:
        return error_row(name, _describe(exc))
    try:
        return scan_image(image, settings, name)
    except UnsupportedArchitecture as exc:
        return error_row(name, str(exc), image.sha256)


def _describe(exc: Exception) -> str:
    if isinstance(exc, OSError) and exc.strerror:
        return exc.strerror.lower()
    return str(exc)


def scan_files(paths: Sequence[str | os.PathLike], settings: ScanSettings, jobs: int = 1) -> ScanReport:
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(scan_file, paths, [settings] * len(paths)))
    else:
        rows = [scan_file(p, settings) for p in paths]
    return ScanReport(
        rows=tuple(rows),
        config_digest=settings.config.digest(),
        baseline_ids=(settings.sql_baseline.source_id, settings.ps1_baseline.source_id),
    )

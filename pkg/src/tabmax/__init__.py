"""TABMAX: static indicators for web-server native-module backdoors.

The scanner loads a PE or ELF module, extracts and classifies its strings,
measures how closely SQL/PowerShell-looking strings match reference
character distributions, counts string-comparison sites in code, and
emits one indicator row per file. It reports indicators, never verdicts.
"""

__version__ = "0.1.0"

from tabmax.binary import (
    BinaryImage,
    ImportEntry,
    NotAnExecutable,
    Section,
    TruncatedHeaders,
    UnsupportedFormat,
    load_binary,
    resolve_import,
    va_to_offset,
)

__all__ = [
    "BinaryImage",
    "ImportEntry",
    "NotAnExecutable",
    "Section",
    "TruncatedHeaders",
    "UnsupportedFormat",
    "load_binary",
    "resolve_import",
    "va_to_offset",
    "__version__",
]

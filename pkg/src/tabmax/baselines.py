"""
Shipped reference tables.

Only the thirty most frequent characters of each reference corpus were
published. The shipped files keep those thirty values verbatim and spread
the remaining probability mass uniformly over the other 65 printable
characters; they are reconstructions, and ``tabmax build-corpus`` should be
used to regenerate full tables from real script corpora.
"""

from __future__ import annotations

from importlib import resources

from tabmax.constants import ALPHABET_SIZE, PRINTABLE_LOW
from tabmax.obfuscation import FrequencyTable, Provenance, table_from_csv

SQL_BASELINE_FILE = "sql_top30_reconstructed.csv"
PS1_BASELINE_FILE = "ps1_top30_reconstructed.csv"
SQL_BASELINE_ID = "sql-top30-reconstructed"
PS1_BASELINE_ID = "ps1-top30-reconstructed"

PUBLISHED_SQL_TOP30 = {
    "0": 0.087421, " ": 0.075127, "e": 0.047623, "a": 0.034788, "3": 0.034726,
    "6": 0.034533, "C": 0.033376, "4": 0.033155, ",": 0.032057, "9": 0.032014,
    "t": 0.031492, "1": 0.025061, "i": 0.024927, "r": 0.022208, "o": 0.021458,
    "n": 0.021324, "5": 0.019975, "'": 0.019325, "c": 0.019143, "d": 0.017487,
    "D": 0.017420, "7": 0.016492, "2": 0.016190, "F": 0.015992, "E": 0.013884,
    "8": 0.013748, "m": 0.012664, "l": 0.010761, "T": 0.010660, "S": 0.010444,
}

# The published PowerShell list repeats "l"; its second, rarer entry is
# taken to be a capital "I".
PUBLISHED_PS1_TOP30 = {
    " ": 0.168742, "e": 0.085947, "t": 0.056438, "r": 0.055300, "o": 0.052609,
    "a": 0.048058, "i": 0.038527, "s": 0.036009, "n": 0.035964, "c": 0.030310,
    "-": 0.025493, "u": 0.025067, "m": 0.020010, "p": 0.019976, "l": 0.019949,
    "$": 0.018316, "d": 0.016633, "g": 0.013452, '"': 0.012247, "N": 0.011838,
    "S": 0.010192, "A": 0.010040, "h": 0.009941, ".": 0.008611, "y": 0.007967,
    "b": 0.007843, "f": 0.007659, "I": 0.007238, "P": 0.006948, "R": 0.006778,
}


def reconstruct_table(top: dict[str, float], source_id: str) -> FrequencyTable:
    """Published top entries verbatim, residual mass uniform over the rest."""
    rest = ALPHABET_SIZE - len(top)
    residual = (1.0 - sum(top.values())) / rest
    values = tuple(top.get(chr(PRINTABLE_LOW + i), residual) for i in range(ALPHABET_SIZE))
    return FrequencyTable(values, Provenance.CORPUS, source_id, None)


def _load(filename: str, source_id: str) -> FrequencyTable:
    text = resources.files("tabmax.data").joinpath(filename).read_text(encoding="ascii")
    return table_from_csv(text, source_id)


def default_sql_baseline() -> FrequencyTable:
    return _load(SQL_BASELINE_FILE, SQL_BASELINE_ID)


def default_ps1_baseline() -> FrequencyTable:
    return _load(PS1_BASELINE_FILE, PS1_BASELINE_ID)

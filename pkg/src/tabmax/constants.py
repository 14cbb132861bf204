"""Numeric constants shared across modules and tests."""

# Frequency tables must sum to one within this bound.
SUM_TOLERANCE = 1e-9
# Spot checks of computed similarities and frequencies.
EXAMPLE_TOLERANCE = 1e-6
# Scale-invariance check of normalized tables.
SCALE_TOLERANCE = 1e-12

PRINTABLE_LOW = 0x20
PRINTABLE_HIGH = 0x7E
# One dimension per printable ASCII code, space through tilde.
ALPHABET_SIZE = PRINTABLE_HIGH - PRINTABLE_LOW + 1

DEFAULT_MIN_STRING_LEN = 3
DEFAULT_MIN_BASE64_LEN = 16

DEFAULT_MAX_FILE_SIZE = 256 * 1024 * 1024

SIMHASH_BITS = 128
DEFAULT_MATCH_THRESHOLD = 0.80
DEFAULT_MIN_INSTRUCTIONS = 10

# Instructions scanned backwards from a compare call for its string argument.
DEFAULT_TOKEN_WINDOW = 8
MIN_TOKEN_LEN = 2

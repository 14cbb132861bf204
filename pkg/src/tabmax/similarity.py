"""
Per-function simhash digests and cross-binary matching.

Each instruction is reduced to its mnemonic plus the kinds of its operands
(``REG``/``MEM``/``IMM``), so relocations and register allocation of
literal values do not move the digest. Overlapping 3-grams of those
tokens are hashed with MD5 (128 bits) and combined by per-bit majority
vote.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tabmax.assembly import FunctionRegion, InstructionRecord, is_conditional_mnemonic, operand_kinds
from tabmax.constants import DEFAULT_MATCH_THRESHOLD, DEFAULT_MIN_INSTRUCTIONS, SIMHASH_BITS

NGRAM = 3
_MASK = (1 << SIMHASH_BITS) - 1


@dataclass(frozen=True)
class FunctionDigest:
    binary_id: str
    entry_va: int
    simhash: int
    instruction_count: int
    branching_node_count: int

    def __post_init__(self):
        if self.instruction_count < 1:
            raise ValueError("a digest needs at least one instruction")
        if not 0 <= self.simhash <= _MASK:
            raise ValueError("simhash out of range")

    @property
    def name(self) -> str:
        return f"{self.binary_id}.{self.entry_va:x}"


@dataclass(frozen=True)
class MatchRecord:
    score: float
    left: FunctionDigest
    right: FunctionDigest


def _token(mnemonic: str, op_str: str) -> str:
    kinds = ",".join(operand_kinds(op_str))
    return f"{mnemonic} {kinds}" if kinds else mnemonic


def instruction_token(ins: InstructionRecord) -> str:
    return _token(ins.mnemonic, ins.op_str)


def features(tokens: Sequence[str], n: int = NGRAM) -> list[str]:
    """Overlapping n-grams; a stream shorter than ``n`` yields itself as one feature."""
    if len(tokens) < n:
        return ["|".join(tokens)]
    return ["|".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def feature_hash(feature: str) -> bytes:
    return hashlib.md5(feature.encode("utf-8")).digest()


def simhash(feats: Iterable[str]) -> int:
    """
    Bit ``i`` (counting from the most significant bit of the MD5 digest)
    is set when more features have it set than clear. Ties clear the bit.
    """
    digests = [feature_hash(f) for f in feats]
    if not digests:
        return 0
    bits = np.unpackbits(np.frombuffer(b"".join(digests), dtype=np.uint8).reshape(len(digests), 16), axis=1)
    votes = bits.sum(axis=0, dtype=np.int64) * 2 - len(digests)
    packed = np.packbits((votes > 0).astype(np.uint8))
    return int.from_bytes(packed.tobytes(), "big")


def function_digest(binary_id: str, f: FunctionRegion) -> FunctionDigest:
    tokens = [_token(r[2], r[3]) for r in f.raw]
    return FunctionDigest(
        binary_id=binary_id,
        entry_va=f.entry_va,
        simhash=simhash(features(tokens)),
        instruction_count=len(tokens),
        branching_node_count=sum(1 for r in f.raw if is_conditional_mnemonic(r[2])),
    )


def digest_functions(binary_id: str, functions: Sequence[FunctionRegion]) -> list[FunctionDigest]:
    return [function_digest(binary_id, f) for f in functions]


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def simhash_similarity(a: FunctionDigest, b: FunctionDigest) -> float:
    return 1.0 - hamming(a.simhash, b.simhash) / SIMHASH_BITS


def match_binaries(left: Sequence[FunctionDigest], right: Sequence[FunctionDigest],
                   threshold: float = DEFAULT_MATCH_THRESHOLD,
                   min_instructions: int = DEFAULT_MIN_INSTRUCTIONS) -> list[MatchRecord]:
    """
    Best right-hand match for every eligible left function, kept when it
    reaches ``threshold``. Both sides must have at least
    ``min_instructions`` instructions. Ties on score go to the lower
    right-hand entry address; output is ordered by descending score.
    """
    if not threshold >= 0.0:
        # a threshold above 1 is allowed and simply matches nothing
        raise ValueError("threshold must be non-negative")
    candidates = [d for d in right if d.instruction_count >= min_instructions]
    if not candidates:
        return []
    hashes = [d.simhash for d in candidates]
    records = []
    for d in left:
        if d.instruction_count < min_instructions:
            continue
        best_i, best_h = 0, SIMHASH_BITS + 1
        for i, h in enumerate(hashes):
            dist = (d.simhash ^ h).bit_count()
            if dist < best_h:
                best_i, best_h = i, dist
                if dist == 0:
                    break
        score = 1.0 - best_h / SIMHASH_BITS
        if score >= threshold:
            records.append(MatchRecord(score, d, candidates[best_i]))
    records.sort(key=lambda r: (-r.score, r.left.binary_id, r.left.entry_va, r.right.entry_va))
    return records


def format_score(score: float) -> str:
    return f"{score:.6f}"


def format_match(m: MatchRecord) -> str:
    return (f"{format_score(m.score)}: {m.left.name} matches {m.right.name} "
            f"({m.left.instruction_count}/{m.right.instruction_count} - "
            f"{m.left.branching_node_count} branching nodes)")


# -- text export ----------------------------------------------------------

def dump_digests(digests: Iterable[FunctionDigest]) -> str:
    return "".join(f"{d.binary_id} {d.entry_va:x} {d.simhash:032x} {d.instruction_count} "
                   f"{d.branching_node_count}\n" for d in digests)


def parse_digests(text: str) -> list[FunctionDigest]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            out.append(FunctionDigest(parts[0], int(parts[1], 16), int(parts[2], 16), int(parts[3]), int(parts[4])))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def write_digests(digests: Iterable[FunctionDigest], path: str | os.PathLike) -> None:
    Path(path).write_text(dump_digests(digests), encoding="ascii")


def read_digests(path: str | os.PathLike) -> list[FunctionDigest]:
    return parse_digests(Path(path).read_text(encoding="ascii"))

"""
Instruction-level indicators.

Executable sections are decoded by linear sweep (capstone in skip-data
mode, so an undecodable byte is stepped over and decoding resumes on the
next one).  The instruction stream is cut into function regions at call
targets, entry points, frame-setup prologues and inter-function padding.
Over those regions we count:

* ``cmp`` (and, unless strict, ``test``) against an immediate made only of
  printable ASCII bytes,
* calls into the ``strstr`` import,
* calls into ``CompareStringA`` (``CompareStringW`` separately),

and recover the literal each compare site tests against.

Internally an instruction is the ``(va, length, mnemonic, op_str)`` tuple
capstone yields; ``InstructionRecord`` objects are built on demand, since
building millions of them up front dominates the cost of a large scan.
"""

from __future__ import annotations

import bisect
import functools
import os
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import capstone

from tabmax import config as _config
from tabmax.binary import BinaryImage, Format, ImportEntry, Section
from tabmax.constants import DEFAULT_TOKEN_WINDOW, MIN_TOKEN_LEN, PRINTABLE_HIGH, PRINTABLE_LOW
from tabmax.strings import ExtractedString


class UnsupportedArchitecture(Exception):
    pass


REG, MEM, IMM = "REG", "MEM", "IMM"

STRSTR_IMPORTS = frozenset({"strstr"})
COMPARESTRINGA_IMPORTS = frozenset({"CompareStringA"})
COMPARESTRINGW_IMPORTS = frozenset({"CompareStringW"})

# positions inside a raw instruction tuple
VA, LENGTH, MNEMONIC, OP_STR = 0, 1, 2, 3

_SIZE_PREFIX = {"byte": 1, "word": 2, "dword": 4, "qword": 8, "tbyte": 10, "xmmword": 16, "ymmword": 32, "zmmword": 64}
_REG8 = {"al", "bl", "cl", "dl", "ah", "bh", "ch", "dh", "sil", "dil", "spl", "bpl"}
_REG16 = {"ax", "bx", "cx", "dx", "si", "di", "sp", "bp", "ip"}
_RN = re.compile(r"r(\d+)([bwd]?)$")


def register_size(name: str) -> int:
    if name in _REG8:
        return 1
    if name in _REG16:
        return 2
    m = _RN.match(name)
    if m:
        return {"b": 1, "w": 2, "d": 4, "": 8}[m.group(2)]
    if name.startswith("r") and len(name) == 3:
        return 8
    if name.startswith("e") and len(name) == 3:
        return 4
    if name.startswith("xmm"):
        return 16
    if name.startswith("ymm"):
        return 32
    return 0


@dataclass(frozen=True)
class Operand:
    kind: str                       # REG, MEM or IMM
    value: object                   # register name, resolved address (or None), immediate
    size: int = 0                   # bytes, 0 when unknown


def _parse_int(text: str) -> Optional[int]:
    try:
        return int(text, 0)
    except ValueError:
        return None


def _parse_memory(op: str, next_va: int) -> Operand:
    size = 0
    head, _, rest = op.partition("[")
    words = head.split()
    if words and words[0] in _SIZE_PREFIX:
        size = _SIZE_PREFIX[words[0]]
    if ":" in head:                  # fs:/gs: relative, not a flat address
        return Operand(MEM, None, size)
    expr = rest.rstrip("]").replace(" ", "")
    value = None
    if expr.startswith("rip"):
        disp = _parse_int(expr[3:]) if len(expr) > 3 else 0
        if disp is not None:
            value = next_va + disp
    else:
        value = _parse_int(expr)
        if value is not None and value < 0:
            value = None
    return Operand(MEM, value, size)


def parse_operands(op_str: str, next_va: int, default_size: int) -> tuple[Operand, ...]:
    """
    Operands from capstone's Intel-syntax text. Memory operands resolve to
    a flat address when absolute or rip-relative; immediates take the width
    of the register or memory operand they are paired with.
    """
    if not op_str:
        return ()
    ops = []
    for text in op_str.split(", "):
        if "[" in text:
            ops.append(_parse_memory(text, next_va))
            continue
        value = _parse_int(text)
        if value is not None:
            ops.append(Operand(IMM, value, 0))
        else:
            ops.append(Operand(REG, text, register_size(text)))
    width = next((o.size for o in ops if o.kind != IMM and o.size), default_size)
    return tuple(Operand(IMM, o.value, width) if o.kind == IMM else o for o in ops)


def operand_kinds(op_str: str) -> tuple[str, ...]:
    """Kinds of the operands only, without resolving values."""
    if not op_str:
        return ()
    kinds = []
    for text in op_str.split(", "):
        if "[" in text:
            kinds.append(MEM)
        elif text[0].isdigit() or text[0] == "-":
            kinds.append(IMM)
        else:
            kinds.append(REG)
    return tuple(kinds)


def direct_target(op_str: str) -> Optional[int]:
    """Target of a direct branch or call, printed by capstone as a bare number."""
    if op_str.startswith("0x"):
        try:
            return int(op_str, 16)
        except ValueError:
            return None
    if op_str.isdigit():
        return int(op_str)
    return None


class InstructionRecord:
    """One decoded instruction; operands are parsed from capstone text on demand."""

    __slots__ = ("va", "length", "mnemonic", "op_str", "bits", "_operands")

    def __init__(self, va: int, length: int, mnemonic: str, op_str: str, bits: int = 64):
        self.va = va
        self.length = length
        self.mnemonic = mnemonic
        self.op_str = op_str
        self.bits = bits
        self._operands = None

    @classmethod
    def from_raw(cls, raw: tuple, bits: int = 64) -> "InstructionRecord":
        return cls(raw[0], raw[1], raw[2], raw[3], bits)

    def __repr__(self):
        return f"InstructionRecord({self.va:#x}, {self.mnemonic} {self.op_str})"

    def __eq__(self, other):
        if not isinstance(other, InstructionRecord):
            return NotImplemented
        return (self.va, self.length, self.mnemonic, self.op_str) == (other.va, other.length, other.mnemonic,
                                                                      other.op_str)

    def __hash__(self):
        return hash((self.va, self.length, self.mnemonic, self.op_str))

    @property
    def operands(self) -> tuple[Operand, ...]:
        if self._operands is None:
            self._operands = parse_operands(self.op_str, self.va + self.length, self.bits // 8)
        return self._operands

    @property
    def is_call(self) -> bool:
        return self.mnemonic == "call"

    @property
    def call_target(self) -> Optional[int]:
        if self.mnemonic != "call":
            return None
        return direct_target(self.op_str)

    @property
    def branch_target(self) -> Optional[int]:
        if is_branch_mnemonic(self.mnemonic):
            return direct_target(self.op_str)
        return None

    def immediates(self) -> Iterator[Operand]:
        return (o for o in self.operands if o.kind == IMM)

    def referenced_addresses(self) -> Iterator[int]:
        """Flat addresses named by a memory operand or an immediate."""
        for o in self.operands:
            if o.kind in (MEM, IMM) and isinstance(o.value, int) and o.value > 0:
                yield o.value


_TERMINATORS = frozenset({"ret", "retf", "jmp", "bnd jmp", "bnd ret", "ud2", "hlt"})
_PADDING = frozenset({"int3", "nop", "fnop"})
_CONDITIONAL_EXTRA = frozenset({"loop", "loope", "loopne", "jecxz", "jrcxz", "jcxz"})


def is_branch_mnemonic(m: str) -> bool:
    return m[0] == "j" or m.startswith("loop") or m.endswith(" jmp")


def is_conditional_mnemonic(m: str) -> bool:
    return (m[0] == "j" and m != "jmp") or m in _CONDITIONAL_EXTRA


def is_padding(ins: InstructionRecord) -> bool:
    return ins.mnemonic in _PADDING or ins.mnemonic.startswith("nop")


def is_terminator(ins: InstructionRecord) -> bool:
    return ins.mnemonic in _TERMINATORS


def is_conditional_branch(ins: InstructionRecord) -> bool:
    return is_conditional_mnemonic(ins.mnemonic)


@dataclass(frozen=True)
class Sweep:
    section: Section
    instructions: list              # raw (va, length, mnemonic, op_str) tuples
    decoded_bytes: int
    skipped_bytes: int
    gaps: tuple = ()                # (va, length) runs the decoder stepped over
    bits: int = 64

    def records(self) -> list[InstructionRecord]:
        return [InstructionRecord.from_raw(r, self.bits) for r in self.instructions]


_CHUNK = 1 << 16
_MAX_INSN = 15


def _capstone(image: BinaryImage) -> capstone.Cs:
    if image.format is Format.PE32:
        mode = capstone.CS_MODE_32
    elif image.format in (Format.PE64, Format.ELF64):
        mode = capstone.CS_MODE_64
    else:
        raise UnsupportedArchitecture(f"{image.path}: no x86 decoder for {image.format}")
    md = capstone.Cs(capstone.CS_ARCH_X86, mode)
    md.skipdata = True
    return md


def linear_sweep(image: BinaryImage, section: Section, md: capstone.Cs | None = None) -> Sweep:
    """
    Decode one executable section start to end. Bytes that do not start a
    valid instruction are stepped over one at a time and recorded as gaps.
    """
    md = md or _capstone(image)
    code = image.raw[section.file_offset:section.file_offset + section.mapped_size]
    base = section.virtual_address
    out = []
    gaps: list = []
    skipped = 0
    end = len(code)
    pos = 0
    while pos < end:
        stop = min(pos + _CHUNK, end)
        # decode a little past the chunk so the last instruction is never cut short
        batch = list(md.disasm_lite(code[pos:min(stop + _MAX_INSN, end)], base + pos))
        limit = base + stop
        k = len(batch)
        while k and batch[k - 1][0] >= limit:
            k -= 1
        if k == 0:                      # defensive: capstone yielded nothing
            gaps.append([base + pos, 1])
            skipped += 1
            pos += 1
            continue
        del batch[k:]
        last = batch[-1]
        data = [r for r in batch if r[2] == ".byte"]
        if data:
            for addr, size, _, _ in data:
                if gaps and gaps[-1][0] + gaps[-1][1] == addr:
                    gaps[-1][1] += size
                else:
                    gaps.append([addr, size])
                skipped += size
            batch = [r for r in batch if r[2] != ".byte"]
        out.extend(batch)
        pos = last[0] + last[1] - base
    decoded = sum(r[1] for r in out)
    return Sweep(section, out, decoded, skipped, tuple((a, n) for a, n in gaps), image.bits)


@dataclass(frozen=True)
class FunctionRegion:
    entry_va: int
    raw: tuple                      # (va, length, mnemonic, op_str) per instruction
    basic_block_count: int
    string_refs: tuple = ()
    bits: int = 64

    @functools.cached_property
    def instructions(self) -> tuple[InstructionRecord, ...]:
        return tuple(InstructionRecord.from_raw(r, self.bits) for r in self.raw)

    @property
    def instruction_count(self) -> int:
        return len(self.raw)

    @property
    def end_va(self) -> int:
        last = self.raw[-1]
        return last[0] + last[1]


def region_from_records(records: Sequence[InstructionRecord], bits: int = 64) -> FunctionRegion:
    raw = tuple((r.va, r.length, r.mnemonic, r.op_str) for r in records)
    return FunctionRegion(raw[0][0], raw, _count_blocks(raw), bits=bits)


def _is_frame_setup(a: tuple, b: tuple) -> bool:
    return (a[2] == "push" and a[3] in ("rbp", "ebp")
            and b[2] == "mov" and b[3] in ("rbp, rsp", "ebp, esp"))


def _looks_like_entry(r: tuple) -> bool:
    m, op = r[2], r[3]
    if m == "push" or m == "endbr64" or m == "endbr32":
        return True
    if m == "sub" and op.startswith(("rsp, ", "esp, ")):
        return True
    return m == "mov" and op.startswith(("qword ptr [rsp + ", "dword ptr [rsp + "))


def _count_blocks(raw: Sequence[tuple]) -> int:
    """Leaders: the entry, in-region branch targets, and every instruction after a branch."""
    n = len(raw)
    lo, hi = raw[0][0], raw[-1][0] + raw[-1][1]
    leaders = {lo}
    vas = None
    for idx in range(n):
        r = raw[idx]
        m = r[2]
        if m[0] == "j" or m in _TERMINATORS or m in _CONDITIONAL_EXTRA:
            target = direct_target(r[3]) if is_branch_mnemonic(m) else None
            if target is not None and lo <= target < hi:
                if vas is None:
                    vas = {i[0] for i in raw}
                if target in vas:
                    leaders.add(target)
            if idx + 1 < n:
                leaders.add(raw[idx + 1][0])
    return len(leaders)


def split_functions(image: BinaryImage, sweeps: Sequence[Sweep]) -> list[FunctionRegion]:
    """
    Partition swept instructions into function regions.

    A region starts at an entry point, a direct call target, a frame-setup
    prologue, or the first instruction after a terminator that is either
    preceded by padding or looks like an entry sequence. Padding after a
    terminator and bytes the sweep could not decode end a region.
    """
    boundaries = set(image.entry_points)
    for sw in sweeps:
        for r in sw.instructions:
            if r[2] == "call":
                t = direct_target(r[3])
                if t is not None:
                    boundaries.add(t)
    regions = []
    for sw in sweeps:
        instrs = sw.instructions
        bits = sw.bits
        count = len(instrs)
        gap_starts = {a for a, _ in sw.gaps}
        gap_ends = {a + n for a, n in sw.gaps}
        current: list = []
        after_terminator = False      # last non-padding instruction ended a flow
        padding_seen = False

        def close():
            if current:
                raw = tuple(current)
                regions.append(FunctionRegion(raw[0][0], raw, _count_blocks(raw), (), bits))
                current.clear()

        for idx in range(count):
            r = instrs[idx]
            va, m = r[0], r[2]
            if va in gap_ends:
                # data stepped over by the sweep ends any open region
                close()
                after_terminator = padding_seen = False
            padding = m in _PADDING or m.startswith("nop")
            if padding and (after_terminator or not current):
                padding_seen = True
                close()
                continue
            if current:
                start = va in boundaries
                if not start and m == "push":
                    start = idx + 1 < count and _is_frame_setup(r, instrs[idx + 1])
                if not start and after_terminator and not padding:
                    start = padding_seen or _looks_like_entry(r)
                if start:
                    close()
            current.append(r)
            padding_seen = False
            after_terminator = m in _TERMINATORS
            if va + r[1] in gap_starts:
                close()
                after_terminator = False
        close()
    regions.sort(key=lambda f: f.entry_va)
    return regions


def disassemble(image: BinaryImage) -> list[FunctionRegion]:
    """
    Linear-sweep every executable section and split the result into
    function regions.

    :raises UnsupportedArchitecture: the image is not x86 or x86-64
    """
    md = _capstone(image)
    sweeps = [linear_sweep(image, s, md) for s in image.executable_sections()]
    return split_functions(image, sweeps)


# -- string references ------------------------------------------------

def _string_ranges(image: BinaryImage, targets: Iterable[ExtractedString]) -> tuple[list[int], list[int]]:
    spans = []
    for s in targets:
        va = image.offset_to_va(s.file_offset)
        if va is not None:
            spans.append((va, va + s.byte_length))
    spans.sort()
    return [a for a, _ in spans], [b for _, b in spans]


def _lookup(starts: list[int], ends: list[int], addr: int) -> Optional[int]:
    i = bisect.bisect_right(starts, addr) - 1
    if i >= 0 and addr < ends[i]:
        return starts[i]
    return None


def _referenced(r: tuple, width: int) -> Iterator[int]:
    for o in parse_operands(r[3], r[0] + r[1], width):
        if o.kind != REG and isinstance(o.value, int) and o.value > 0:
            yield o.value


def find_string_xrefs(image: BinaryImage, functions: Sequence[FunctionRegion],
                      targets: Sequence[ExtractedString]) -> list[FunctionRegion]:
    """
    Functions with an operand that points into one of ``targets``, either
    as an absolute address or rip-relative. Returned copies carry the
    referenced string addresses in ``string_refs``.
    """
    if not targets:
        return []
    starts, ends = _string_ranges(image, targets)
    if not starts:
        return []
    lo, hi = starts[0], max(ends)
    width = image.bits // 8
    found = []
    for fn in functions:
        refs = []
        for r in fn.raw:
            if "0x" not in r[3]:
                continue
            for addr in _referenced(r, width):
                if lo <= addr < hi:
                    hit = _lookup(starts, ends, addr)
                    if hit is not None and hit not in refs:
                        refs.append(hit)
        if refs:
            found.append(replace(fn, string_refs=fn.string_refs + tuple(refs)))
    return found


# -- compare sites ------------------------------------------------------

def printable_immediate(op: Operand) -> Optional[bytes]:
    """
    Little-endian bytes of an immediate, masked to its operand width with
    high zero bytes dropped, if every remaining byte is printable ASCII.
    Zero never qualifies.
    """
    if op.kind != IMM or not isinstance(op.value, int):
        return None
    width = op.size or 8
    value = op.value & ((1 << (8 * width)) - 1)
    if value == 0:
        return None
    data = value.to_bytes(width, "little").rstrip(b"\x00")
    if all(PRINTABLE_LOW <= b <= PRINTABLE_HIGH for b in data):
        return data
    return None


def _ascii_compare(r: tuple, strict: bool, width: int) -> Optional[bytes]:
    m = r[2]
    if m != "cmp" and (strict or m != "test"):
        return None
    # the immediate, when present, is the last operand; skip the full parse otherwise
    tail = r[3].rpartition(", ")[2]
    if not tail or not (tail[0].isdigit() or tail[0] == "-"):
        return None
    for op in parse_operands(r[3], r[0] + r[1], width):
        if op.kind == IMM:
            return printable_immediate(op)
    return None


def is_ascii_compare(ins: InstructionRecord, strict: bool = False) -> Optional[bytes]:
    """Printable bytes of a cmp (or test) immediate, None when it does not qualify."""
    return _ascii_compare((ins.va, ins.length, ins.mnemonic, ins.op_str), strict, ins.bits // 8)


class ImportResolver:
    """Maps call instructions onto imported symbols."""

    def __init__(self, image: BinaryImage, functions: Sequence[FunctionRegion]):
        self.thunks = image.import_by_thunk()
        self.width = image.bits // 8
        self.stubs: dict[int, ImportEntry] = {}
        if not self.thunks:
            return
        for fn in functions:
            first = next((r for r in fn.raw[:2] if not r[2].startswith("endbr")), None)
            if first is not None and first[2].endswith("jmp"):
                for op in parse_operands(first[3], first[0] + first[1], self.width):
                    if op.kind == MEM and op.value in self.thunks:
                        self.stubs[fn.entry_va] = self.thunks[op.value]

    def resolve_raw(self, r: tuple) -> Optional[ImportEntry]:
        if r[2] != "call" or not self.thunks:
            return None
        op = r[3]
        if "[" in op:
            ops = parse_operands(op, r[0] + r[1], self.width)
            return self.thunks.get(ops[0].value) if len(ops) == 1 else None
        target = direct_target(op)
        return self.stubs.get(target) if target is not None else None

    def resolve(self, ins: InstructionRecord) -> Optional[ImportEntry]:
        return self.resolve_raw((ins.va, ins.length, ins.mnemonic, ins.op_str))


@dataclass(frozen=True)
class CompareSite:
    kind: str                       # "cmp", "strstr", "CompareStringA", "CompareStringW"
    function_entry: int
    index: int                      # position inside the function
    va: int
    immediate: Optional[bytes] = None


_DECORATION = re.compile(r"^_+|@\d+$")


def undecorate(symbol: str) -> str:
    """Import name without 32-bit calling-convention decoration: ``_CompareStringA@24`` -> ``CompareStringA``."""
    return _DECORATION.sub("", symbol)


_CALL_KINDS = [(STRSTR_IMPORTS, "strstr"), (COMPARESTRINGA_IMPORTS, "CompareStringA"),
               (COMPARESTRINGW_IMPORTS, "CompareStringW")]


def compare_sites(image: BinaryImage, functions: Sequence[FunctionRegion], strict: bool = False,
                  resolver: ImportResolver | None = None) -> list[CompareSite]:
    """Every counted compare site, in function then instruction order."""
    resolver = resolver or ImportResolver(image, functions)
    width = image.bits // 8
    sites = []
    for fn in functions:
        for idx, r in enumerate(fn.raw):
            m = r[2]
            if m == "cmp" or m == "test":
                data = _ascii_compare(r, strict, width)
                if data is not None:
                    sites.append(CompareSite("cmp", fn.entry_va, idx, r[0], data))
            elif m == "call":
                imp = resolver.resolve_raw(r)
                if imp is None:
                    continue
                name = undecorate(imp.symbol_name)
                for names, kind in _CALL_KINDS:
                    if name in names:
                        sites.append(CompareSite(kind, fn.entry_va, idx, r[0]))
                        break
    return sites


@dataclass(frozen=True)
class CodeIndicators:
    cmp_ascii_count: int = 0
    strstr_call_count: int = 0
    comparestringa_call_count: int = 0
    comparestringw_call_count: int = 0
    anchored_function_count: int = 0
    command_tokens: tuple = ()
    constant_fingerprints: tuple = ()       # (name, function entry va)


def _tally(sites: Sequence[CompareSite]) -> dict:
    kinds = [s.kind for s in sites]
    return dict(
        cmp_ascii_count=kinds.count("cmp"),
        strstr_call_count=kinds.count("strstr"),
        comparestringa_call_count=kinds.count("CompareStringA"),
        comparestringw_call_count=kinds.count("CompareStringW"),
    )


def count_compare_indicators(image: BinaryImage, functions: Sequence[FunctionRegion], *,
                             strict: bool = False,
                             anchors: Sequence[ExtractedString] | None = None) -> CodeIndicators:
    """
    Count compare indicators over ``functions``. When ``anchors`` (the
    content-type strings) are given, ``anchored_function_count`` is the
    number of functions referencing one of them.
    """
    sites = compare_sites(image, functions, strict)
    anchored = len(find_string_xrefs(image, functions, anchors)) if anchors else 0
    return CodeIndicators(anchored_function_count=anchored, **_tally(sites))


def read_string_at(image: BinaryImage, va: int, limit: int = 256) -> Optional[str]:
    """NUL-terminated ASCII or UTF-16LE printable string at ``va``."""
    data = image.read_va(va, limit * 2)
    if not data:
        return None
    n = 0
    while n < len(data) and n < limit and PRINTABLE_LOW <= data[n] <= PRINTABLE_HIGH:
        n += 1
    if n >= MIN_TOKEN_LEN and (n == len(data) or data[n] == 0):
        return data[:n].decode("ascii")
    chars = []
    for i in range(0, min(len(data), 2 * limit) - 1, 2):
        lo, hi = data[i], data[i + 1]
        if hi != 0 or not PRINTABLE_LOW <= lo <= PRINTABLE_HIGH:
            break
        chars.append(chr(lo))
    if len(chars) >= MIN_TOKEN_LEN:
        return "".join(chars)
    return None


def _address_loads(r: tuple, width: int) -> Iterator[int]:
    m = r[2]
    if m == "lea":
        for op in parse_operands(r[3], r[0] + r[1], width):
            if op.kind == MEM and op.value:
                yield op.value
    elif m in ("mov", "movabs", "push"):
        for op in parse_operands(r[3], r[0] + r[1], width):
            if op.kind == IMM and op.value and op.value > 0xFFFF:
                yield op.value


def _string_argument(image: BinaryImage, fn: FunctionRegion, index: int, window: int) -> Optional[str]:
    width = image.bits // 8
    for back in range(1, window + 1):
        i = index - back
        if i < 0:
            break
        r = fn.raw[i]
        if r[2] == "call":
            break
        for addr in _address_loads(r, width):
            text = read_string_at(image, addr)
            if text is not None:
                return text
    return None


def extract_command_tokens(image: BinaryImage, functions: Sequence[FunctionRegion], *,
                           strict: bool = False, window: int = DEFAULT_TOKEN_WINDOW,
                           sites: Sequence[CompareSite] | None = None) -> list[str]:
    """
    Literal comparands of the counted compare sites, deduplicated in order
    of first appearance. Call sites take the nearest string whose address
    is loaded within ``window`` instructions before the call (stopping at
    an earlier call); ``cmp`` sites take the printable bytes of their
    immediate.
    """
    if sites is None:
        sites = compare_sites(image, functions, strict)
    by_entry = {fn.entry_va: fn for fn in functions}
    tokens: dict[str, None] = {}
    for site in sites:
        if site.kind == "cmp":
            text = site.immediate.decode("ascii") if site.immediate else None
        else:
            text = _string_argument(image, by_entry[site.function_entry], site.index, window)
        if text is not None and len(text) >= MIN_TOKEN_LEN:
            tokens.setdefault(text, None)
    return list(tokens)


# -- known constants -----------------------------------------------------

def parse_constants(pairs: Iterable[tuple[str, str]]) -> tuple[tuple[str, int], ...]:
    out = []
    for name, value in pairs:
        try:
            out.append((name, int(value, 16)))
        except ValueError:
            raise _config.ConfigError(f"[constants] {name}: {value!r} is not a hex value") from None
    return tuple(out)


def default_constants() -> tuple[tuple[str, int], ...]:
    return parse_constants(_config.key_values(_config.default_sections().get("constants", [])))


def load_constants(path: str | os.PathLike | None) -> tuple[tuple[str, int], ...]:
    sections = _config.merged_sections(path)
    return parse_constants(_config.key_values(sections.get("constants", [])))


def detect_known_constants(image: BinaryImage, functions: Sequence[FunctionRegion],
                           constants: Sequence[tuple[str, int]] | None = None) -> list[tuple[str, int]]:
    """``(name, entry_va)`` for every function using one of the constants as an immediate."""
    if constants is None:
        constants = default_constants()
    by_value: dict[int, set] = {}
    for name, value in constants:
        by_value.setdefault(value, set()).add(name)
    if not by_value:
        return []
    # capstone prints immediates in lowercase hex (decimal below 10)
    needles = re.compile("|".join(sorted({re.escape(f"{v:#x}" if v > 9 else str(v)) for v in by_value})))
    width = image.bits // 8
    found = []
    for fn in functions:
        names = set()
        for r in fn.raw:
            if needles.search(r[3]) is None:
                continue
            for op in parse_operands(r[3], r[0] + r[1], width):
                if op.kind != IMM:
                    continue
                hit = by_value.get(op.value) or by_value.get(op.value & 0xFFFFFFFF)
                if hit:
                    names |= hit
        found.extend((name, fn.entry_va) for name in sorted(names))
    return found


@dataclass
class CodeAnalysis:
    functions: list = field(default_factory=list)
    indicators: CodeIndicators = field(default_factory=CodeIndicators)


def analyze_code(image: BinaryImage, *, anchors: Sequence[ExtractedString] = (), strict: bool = False,
                 constants: Sequence[tuple[str, int]] | None = None,
                 window: int = DEFAULT_TOKEN_WINDOW, anchored_only: bool = False) -> CodeAnalysis:
    """
    Disassemble ``image`` and compute every code indicator in one pass.

    :param anchors: content-type strings; functions referencing one are anchored
    :param anchored_only: count compare sites only inside anchored functions
    """
    if not image.executable_sections():
        return CodeAnalysis()
    functions = disassemble(image)
    resolver = ImportResolver(image, functions)
    anchored = find_string_xrefs(image, functions, anchors) if anchors else []
    counted = anchored if anchored_only else functions
    sites = compare_sites(image, counted, strict, resolver)
    indicators = CodeIndicators(
        anchored_function_count=len(anchored),
        command_tokens=tuple(extract_command_tokens(image, counted, window=window, sites=sites)),
        constant_fingerprints=tuple(detect_known_constants(image, functions, constants)),
        **_tally(sites),
    )
    return CodeAnalysis(functions, indicators)

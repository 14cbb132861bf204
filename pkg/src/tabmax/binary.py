"""
Executable loading for PE32, PE32+ and ELF64 x86 modules.

Only the pieces the indicator analyses need are parsed: headers, the
section table, the import table, and entry points (optional-header entry
plus exports).  Everything is done with :mod:`struct` so that malformed
headers map onto exactly three error types.
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from tabmax.constants import DEFAULT_MAX_FILE_SIZE


class BinaryFormatError(Exception):
    """Base class for load failures."""


class NotAnExecutable(BinaryFormatError):
    """The file does not start with an MZ/PE or ELF signature."""


class TruncatedHeaders(BinaryFormatError):
    """A header or table declared by the file extends past its end."""


class UnsupportedFormat(BinaryFormatError):
    """A recognised container for an architecture or class we do not handle."""

    def __init__(self, message: str, machine: Optional[int] = None):
        super().__init__(message)
        self.machine = machine


class FileTooLarge(BinaryFormatError):
    pass


class Format(str, enum.Enum):
    PE64 = "PE64"
    PE32 = "PE32"
    ELF64 = "ELF64"


@dataclass(frozen=True)
class Section:
    name: str
    file_offset: int
    file_size: int
    virtual_address: int
    virtual_size: int
    executable: bool
    readable: bool

    def contains_va(self, va: int) -> bool:
        return self.virtual_address <= va < self.virtual_address + self.virtual_size

    def contains_offset(self, offset: int) -> bool:
        return self.file_offset <= offset < self.file_offset + self.mapped_size

    @property
    def mapped_size(self) -> int:
        """Bytes that are both file-backed and inside the virtual range."""
        return min(self.file_size, self.virtual_size)


@dataclass(frozen=True)
class ImportEntry:
    dll_name: str
    symbol_name: str
    thunk_va: int


@dataclass(frozen=True)
class BinaryImage:
    path: str
    format: Format
    image_base: int
    sections: tuple[Section, ...]
    imports: tuple[ImportEntry, ...]
    raw: bytes = field(repr=False)
    sha256: str
    entry_points: tuple[int, ...] = ()
    machine: int = 0

    @property
    def bits(self) -> int:
        return 32 if self.format is Format.PE32 else 64

    @property
    def binary_id(self) -> str:
        return self.sha256[:16]

    def executable_sections(self) -> list[Section]:
        return [s for s in self.sections if s.executable]

    def section_for_va(self, va: int) -> Optional[Section]:
        for s in self.sections:
            if s.contains_va(va):
                return s
        return None

    def va_to_offset(self, va: int) -> Optional[int]:
        for s in self.sections:
            if s.contains_va(va):
                delta = va - s.virtual_address
                if delta < s.mapped_size:
                    return s.file_offset + delta
                return None
        return None

    def offset_to_va(self, offset: int) -> Optional[int]:
        for s in self.sections:
            if s.contains_offset(offset):
                return s.virtual_address + (offset - s.file_offset)
        return None

    def read_va(self, va: int, size: int) -> bytes:
        """Bytes at ``va``, stopping early at the end of the containing section."""
        off = self.va_to_offset(va)
        if off is None:
            return b""
        s = self.section_for_va(va)
        end = s.file_offset + s.mapped_size
        return self.raw[off:min(off + size, end)]

    def import_by_thunk(self) -> dict[int, ImportEntry]:
        return {imp.thunk_va: imp for imp in self.imports}


def resolve_import(image: BinaryImage, symbol: str) -> Optional[ImportEntry]:
    """Case-sensitive lookup of an imported symbol (``"#N"`` for ordinals)."""
    for imp in image.imports:
        if imp.symbol_name == symbol:
            return imp
    return None


def va_to_offset(image: BinaryImage, va: int) -> Optional[int]:
    return image.va_to_offset(va)


def offset_to_va(image: BinaryImage, offset: int) -> Optional[int]:
    return image.offset_to_va(offset)


def load_binary(path: str | os.PathLike, max_size: int = DEFAULT_MAX_FILE_SIZE) -> BinaryImage:
    """
    Read and parse an executable from disk.

    :param path: file to load
    :param max_size: files larger than this are rejected
    :raises NotAnExecutable: unknown magic bytes
    :raises TruncatedHeaders: a declared header table runs past end of file
    :raises UnsupportedFormat: known container, unsupported machine or class
    :raises FileTooLarge: file exceeds ``max_size``
    """
    p = Path(path)
    size = p.stat().st_size
    if size > max_size:
        raise FileTooLarge(f"{p}: {size} bytes exceeds cap of {max_size}")
    raw = p.read_bytes()
    return parse_binary(raw, str(p))


def parse_binary(raw: bytes, path: str = "<memory>") -> BinaryImage:
    if raw[:4] == b"\x7fELF":
        return _ElfParser(raw, path).parse()
    if raw[:2] == b"MZ":
        return _PeParser(raw, path).parse()
    raise NotAnExecutable(f"{path}: unrecognised magic {raw[:4]!r}")


def _normalize_sections(sections: list[Section], raw_len: int) -> tuple[Section, ...]:
    """Clip file extents to the file and to each other so none overlap."""
    clipped = []
    for s in sections:
        off = min(s.file_offset, raw_len)
        fsize = max(0, min(s.file_size, raw_len - off))
        clipped.append(Section(s.name, off, fsize, s.virtual_address, s.virtual_size,
                               s.executable and fsize > 0, s.readable))
    order = sorted(range(len(clipped)), key=lambda i: (clipped[i].file_offset, i))
    result = list(clipped)
    for a, b in zip(order, order[1:]):
        sa, sb = result[a], result[b]
        if sa.file_size and sb.file_size and sa.file_offset + sa.file_size > sb.file_offset:
            fsize = sb.file_offset - sa.file_offset
            result[a] = Section(sa.name, sa.file_offset, fsize, sa.virtual_address,
                                sa.virtual_size, sa.executable and fsize > 0, sa.readable)
    return tuple(result)


# ---------------------------------------------------------------------------
# PE
# ---------------------------------------------------------------------------

MACHINE_I386 = 0x14C
MACHINE_AMD64 = 0x8664

SCN_CNT_CODE = 0x00000020
SCN_MEM_EXECUTE = 0x20000000
SCN_MEM_READ = 0x40000000

_MAX_IMPORT_DLLS = 4096
_MAX_THUNKS = 65536


class _PeParser:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.path = path

    def _unpack(self, fmt: str, offset: int, what: str):
        size = struct.calcsize(fmt)
        if offset < 0 or offset + size > len(self.raw):
            raise TruncatedHeaders(f"{self.path}: {what} at {offset:#x} exceeds file size {len(self.raw)}")
        return struct.unpack_from(fmt, self.raw, offset)

    def parse(self) -> BinaryImage:
        (e_lfanew,) = self._unpack("<I", 0x3C, "DOS header")
        (sig,) = self._unpack("<4s", e_lfanew, "PE signature")
        if sig != b"PE\x00\x00":
            raise NotAnExecutable(f"{self.path}: MZ file without PE signature")
        coff = e_lfanew + 4
        machine, nsections, _, _, _, opt_size, _ = self._unpack("<HHIIIHH", coff, "COFF header")
        if machine not in (MACHINE_I386, MACHINE_AMD64):
            raise UnsupportedFormat(f"{self.path}: unsupported PE machine type {machine:#06x}", machine)
        opt = coff + 20
        (magic,) = self._unpack("<H", opt, "optional header")
        if magic == 0x20B:
            fmt = Format.PE64
            self._unpack("<112s", opt, "PE32+ optional header")
            (entry_rva,) = struct.unpack_from("<I", self.raw, opt + 16)
            (image_base,) = struct.unpack_from("<Q", self.raw, opt + 24)
            (ndirs,) = struct.unpack_from("<I", self.raw, opt + 108)
            dirs_off = opt + 112
        elif magic == 0x10B:
            fmt = Format.PE32
            self._unpack("<96s", opt, "PE32 optional header")
            (entry_rva,) = struct.unpack_from("<I", self.raw, opt + 16)
            (image_base,) = struct.unpack_from("<I", self.raw, opt + 28)
            (ndirs,) = struct.unpack_from("<I", self.raw, opt + 92)
            dirs_off = opt + 96
        else:
            raise UnsupportedFormat(f"{self.path}: unknown optional header magic {magic:#x}", machine)
        if (fmt is Format.PE64) != (machine == MACHINE_AMD64):
            raise UnsupportedFormat(f"{self.path}: optional header {fmt.value} does not match machine {machine:#06x}", machine)

        ndirs = min(ndirs, 16)
        dirs = []
        for i in range(ndirs):
            dirs.append(self._unpack("<II", dirs_off + 8 * i, "data directory"))

        sect_off = opt + opt_size
        sections = []
        for i in range(nsections):
            name, vsize, va, rsize, rptr, _, _, _, _, chars = self._unpack(
                "<8sIIIIIIHHI", sect_off + 40 * i, "section table")
            name = name.rstrip(b"\x00").decode("latin-1")
            exec_flag = bool(chars & (SCN_MEM_EXECUTE | SCN_CNT_CODE))
            sections.append(Section(name, rptr, rsize, image_base + va, vsize or rsize,
                                    exec_flag, bool(chars & SCN_MEM_READ)))
        self.sections = _normalize_sections(sections, len(self.raw))
        self.image_base = image_base
        self.ptr_size = 8 if fmt is Format.PE64 else 4

        imports = []
        if ndirs > 1 and dirs[1][0]:
            imports = self._parse_imports(dirs[1][0])
        entries = set()
        if entry_rva:
            entries.add(image_base + entry_rva)
        if ndirs > 0 and dirs[0][0]:
            entries.update(self._parse_exports(*dirs[0]))

        return BinaryImage(
            path=self.path, format=fmt, image_base=image_base, sections=self.sections,
            imports=tuple(imports), raw=self.raw, sha256=hashlib.sha256(self.raw).hexdigest(),
            entry_points=tuple(sorted(entries)), machine=machine,
        )

    def _rva_offset(self, rva: int) -> Optional[int]:
        va = self.image_base + rva
        for s in self.sections:
            if s.contains_va(va):
                delta = va - s.virtual_address
                return s.file_offset + delta if delta < s.file_size else None
        return None

    def _cstring(self, rva: int, limit: int = 512) -> Optional[str]:
        off = self._rva_offset(rva)
        if off is None:
            return None
        end = self.raw.find(b"\x00", off, off + limit)
        if end < 0:
            return None
        return self.raw[off:end].decode("latin-1")

    def _in_some_section(self, va: int) -> bool:
        return any(s.contains_va(va) for s in self.sections)

    def _parse_imports(self, dir_rva: int) -> list[ImportEntry]:
        off = self._rva_offset(dir_rva)
        if off is None:
            raise TruncatedHeaders(f"{self.path}: import directory RVA {dir_rva:#x} not backed by file data")
        entries = []
        thunk_fmt = "<Q" if self.ptr_size == 8 else "<I"
        ordinal_flag = 1 << (self.ptr_size * 8 - 1)
        for i in range(_MAX_IMPORT_DLLS):
            oft, _, _, name_rva, ft = self._unpack("<IIIII", off + 20 * i, "import descriptor")
            if not (oft or name_rva or ft):
                break
            dll = self._cstring(name_rva) or ""
            lookup = oft or ft
            lookup_off = self._rva_offset(lookup)
            if lookup_off is None or not ft:
                continue
            for j in range(_MAX_THUNKS):
                (value,) = self._unpack(thunk_fmt, lookup_off + self.ptr_size * j, "import thunk")
                if value == 0:
                    break
                if value & ordinal_flag:
                    symbol = f"#{value & 0xFFFF}"
                else:
                    symbol = self._cstring((value & 0x7FFFFFFF) + 2)
                    if not symbol:
                        continue
                thunk_va = self.image_base + ft + self.ptr_size * j
                if self._in_some_section(thunk_va):
                    entries.append(ImportEntry(dll, symbol, thunk_va))
        return entries

    def _parse_exports(self, dir_rva: int, dir_size: int) -> list[int]:
        off = self._rva_offset(dir_rva)
        if off is None:
            return []
        fields = self._unpack("<IIHHIIIIIII", off, "export directory")
        nfuncs, funcs_rva = fields[6], fields[8]
        funcs_off = self._rva_offset(funcs_rva)
        if funcs_off is None:
            return []
        result = []
        for i in range(min(nfuncs, _MAX_THUNKS)):
            (rva,) = self._unpack("<I", funcs_off + 4 * i, "export address table")
            # RVAs inside the export directory are forwarder strings
            if rva and not (dir_rva <= rva < dir_rva + dir_size):
                result.append(self.image_base + rva)
        return result


# ---------------------------------------------------------------------------
# ELF64
# ---------------------------------------------------------------------------

EM_X86_64 = 62
PT_LOAD = 1
PT_DYNAMIC = 2
SHT_NOBITS = 8
SHT_DYNSYM = 11
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4
PF_X = 0x1
PF_R = 0x4

DT_NULL, DT_PLTRELSZ, DT_STRTAB, DT_SYMTAB, DT_RELA, DT_RELASZ = 0, 2, 5, 6, 7, 8
DT_STRSZ, DT_JMPREL, DT_HASH = 10, 23, 4
R_X86_64_GLOB_DAT = 6
R_X86_64_JUMP_SLOT = 7


class _ElfParser:
    def __init__(self, raw: bytes, path: str):
        self.raw = raw
        self.path = path

    def _unpack(self, fmt: str, offset: int, what: str):
        size = struct.calcsize(fmt)
        if offset < 0 or offset + size > len(self.raw):
            raise TruncatedHeaders(f"{self.path}: {what} at {offset:#x} exceeds file size {len(self.raw)}")
        return struct.unpack_from(fmt, self.raw, offset)

    def parse(self) -> BinaryImage:
        ident = self._unpack("<16s", 0, "ELF identification")[0]
        if ident[4] != 2:
            raise UnsupportedFormat(f"{self.path}: only ELF64 is supported (EI_CLASS={ident[4]})")
        if ident[5] != 1:
            raise UnsupportedFormat(f"{self.path}: big-endian ELF is not supported")
        (e_type, e_machine, _, e_entry, e_phoff, e_shoff, _, _, e_phentsize, e_phnum,
         e_shentsize, e_shnum, e_shstrndx) = self._unpack("<HHIQQQIHHHHHH", 16, "ELF header")
        if e_machine != EM_X86_64:
            raise UnsupportedFormat(f"{self.path}: unsupported ELF machine {e_machine}", e_machine)

        self.segments = []
        dynamic = None
        for i in range(e_phnum if e_phoff else 0):
            p_type, p_flags, p_offset, p_vaddr, _, p_filesz, p_memsz, _ = self._unpack(
                "<IIQQQQQQ", e_phoff + i * max(e_phentsize, 56), "program header")
            if p_type == PT_LOAD:
                self.segments.append((p_offset, p_filesz, p_vaddr, p_memsz, p_flags))
            elif p_type == PT_DYNAMIC:
                dynamic = (p_offset, p_filesz)

        sections = []
        dynsym_count = None
        if e_shoff and e_shnum:
            headers = []
            for i in range(e_shnum):
                headers.append(self._unpack("<IIQQQQIIQQ", e_shoff + i * max(e_shentsize, 64), "section header"))
            strtab = headers[e_shstrndx] if e_shstrndx < len(headers) else None
            for sh_name, sh_type, sh_flags, sh_addr, sh_offset, sh_size, _, _, _, sh_entsize in headers:
                if sh_type == SHT_DYNSYM and sh_entsize:
                    dynsym_count = sh_size // sh_entsize
                if not sh_flags & SHF_ALLOC or sh_size == 0:
                    continue
                name = self._name(strtab, sh_name) if strtab else ""
                fsize = 0 if sh_type == SHT_NOBITS else sh_size
                sections.append(Section(name, sh_offset, fsize, sh_addr, sh_size,
                                        bool(sh_flags & SHF_EXECINSTR), True))
        if not sections:
            for i, (off, filesz, vaddr, memsz, flags) in enumerate(self.segments):
                sections.append(Section(f"LOAD{i}", off, filesz, vaddr, memsz,
                                        bool(flags & PF_X), bool(flags & PF_R)))
        self.sections = _normalize_sections(sections, len(self.raw))
        image_base = min((s[2] for s in self.segments), default=0) & ~0xFFF

        imports, exports = [], []
        if dynamic:
            imports, exports = self._parse_dynamic(dynamic, dynsym_count)
        entries = set(exports)
        if e_entry:
            entries.add(e_entry)
        return BinaryImage(
            path=self.path, format=Format.ELF64, image_base=image_base, sections=self.sections,
            imports=tuple(imports), raw=self.raw, sha256=hashlib.sha256(self.raw).hexdigest(),
            entry_points=tuple(sorted(entries)), machine=e_machine,
        )

    def _name(self, strtab_hdr, index: int) -> str:
        base = strtab_hdr[4]
        start = base + index
        end = self.raw.find(b"\x00", start, start + 256)
        if start >= len(self.raw) or end < 0:
            return ""
        return self.raw[start:end].decode("latin-1")

    def _vaddr_offset(self, va: int) -> Optional[int]:
        for off, filesz, vaddr, _, _ in self.segments:
            if vaddr <= va < vaddr + filesz:
                return off + (va - vaddr)
        return None

    def _parse_dynamic(self, dynamic, dynsym_count):
        off, size = dynamic
        tags: dict[int, int] = {}
        for i in range(size // 16):
            d_tag, d_val = self._unpack("<qQ", off + 16 * i, "dynamic entry")
            if d_tag == DT_NULL:
                break
            tags.setdefault(d_tag, d_val)
        strtab = self._vaddr_offset(tags.get(DT_STRTAB, -1))
        symtab = self._vaddr_offset(tags.get(DT_SYMTAB, -1))
        if strtab is None or symtab is None:
            return [], []

        def sym(index):
            st_name, st_info, _, st_shndx, st_value, _ = self._unpack("<IBBHQQ", symtab + 24 * index, "dynamic symbol")
            end = self.raw.find(b"\x00", strtab + st_name, strtab + st_name + 512)
            name = self.raw[strtab + st_name:end].decode("latin-1") if end >= 0 else ""
            return name, st_info & 0xF, st_shndx, st_value

        imports = []
        for rel_tag, size_tag in ((DT_JMPREL, DT_PLTRELSZ), (DT_RELA, DT_RELASZ)):
            rel_off = self._vaddr_offset(tags.get(rel_tag, -1))
            if rel_off is None:
                continue
            for i in range(tags.get(size_tag, 0) // 24):
                r_offset, r_info, _ = self._unpack("<QQq", rel_off + 24 * i, "relocation")
                rtype, sym_index = r_info & 0xFFFFFFFF, r_info >> 32
                if rtype not in (R_X86_64_JUMP_SLOT, R_X86_64_GLOB_DAT) or not sym_index:
                    continue
                name, _, shndx, _ = sym(sym_index)
                if name and shndx == 0 and any(s.contains_va(r_offset) for s in self.sections):
                    imports.append(ImportEntry("", name, r_offset))

        exports = []
        if dynsym_count is None and DT_HASH in tags:
            hash_off = self._vaddr_offset(tags[DT_HASH])
            if hash_off is not None:
                dynsym_count = self._unpack("<II", hash_off, "hash table")[1]
        for i in range(1, min(dynsym_count or 0, _MAX_THUNKS)):
            name, stype, shndx, value = sym(i)
            if stype == 2 and shndx != 0 and value:
                exports.append(value)
        return imports, exports


"""Generated binaries with known indicator content."""

from __future__ import annotations

import base64
import random

from pebuild import Asm, build_pe

SQL_STRINGS = [
    "SELECT name FROM sysobjects WHERE xtype = 'U'",
    "INSERT INTO audit (id, msg) VALUES (1, 'x')",
    "UPDATE users SET pwd = '0' WHERE id = 3",
    "DELETE FROM sessions WHERE expired = 1",
    "EXEC xp_cmdshell 'whoami'",
    "DECLARE @q nvarchar(400)",
    "exec sp_who2",
    "select top 10 * from tempdb..tmp",
    "SELECT * FROM OPENROWSET('SQLNCLI', 'x', 'y')",
    "DECLARE c CURSOR FOR SELECT id FROM t",
]
PS_STRINGS = [
    "Invoke-Expression $cmd",
    "Get-ChildItem C:\\inetpub -Recurse",
    "Set-Content -Path out.txt -Value $data",
    "New-Object Net.WebClient",
    "powershell -ExecutionPolicy Bypass -File run.ps1",
    "IEX $payload",
    "Import-Module .\\tools.ps1",
]
BASE64_PAYLOADS = [b"cmd.exe /c whoami", b"net user admin P@ss /add", b"type C:\\secret.txt",
                   b"\x00\x01binary\xff\xfeblob!", b"tasklist /svc > out"]
KEYWORD_STRINGS = ["upload", "httpmodule", "decode"]
# "+" and "/" do not occur in these, so none parse as base64 runs of length >= 16
NEUTRAL_STRINGS = ["Microsoft IIS module", "1.0.0.0", "handler ok"]

# printable immediates: "DMP", "GET", "A", "zz", "POST", "ok!"
CMP_IMMEDIATES = [("eax", 0x504D44), ("ecx", 0x544547), ("al", 0x41), ("edx", 0x7A7A), ("eax", 0x54534F50),
                  ("ebx", 0x216B6F)]
NON_PRINTABLE_CMPS = [("eax", 1), ("ecx", 0), ("al", 0x0A), ("edx", 0x1F41)]

PLANTED = {
    "sql_string_count": 10,
    "ps_string_count": 7,
    "base64_count": 5,
    "keyword_api_count": 3,
    "cmp_count": 6,
    "strstr_count": 2,
    "comparestringa_count": 4,
}

IIS_TOKENS = ["CMD|", "PIN|", "INJ|", "DMP|"]


def planted_pe(seed: int = 7) -> bytes:
    """PE64 DLL carrying exactly the counts in ``PLANTED``."""
    rng = random.Random(seed)
    a = Asm(64)
    a.label("dispatch").prologue()
    for i, (reg, value) in enumerate(CMP_IMMEDIATES):
        a.filler(3, rng)
        a.cmp_imm(reg, value).jcc("je", f"case{i}")
        a.label(f"case{i}")
    for reg, value in NON_PRINTABLE_CMPS:
        a.cmp_imm(reg, value).jcc("jne", "after")
    a.label("after")
    a.test_rr("eax")
    a.epilogue().align()

    a.label("search").prologue()
    for i in range(2):
        a.lea("rcx", "buffer").lea("rdx", f"needle{i}").call_mem("iat:strstr")
        a.test_rr("eax").jcc("je", f"miss{i}")
        a.label(f"miss{i}")
    a.epilogue().align()

    a.label("compare").prologue()
    for i in range(4):
        a.mov_imm("ecx", 0x400).xor("edx")
        a.lea("r8", "buffer").mov_imm("r9d", 4).lea("rax", f"verb{i}").store_arg(0x20)
        a.call_mem("iat:CompareStringA")
        a.cmp_imm("r8d", 2).jcc("je", f"hit{i}")
        a.label(f"hit{i}")
    a.epilogue().align()

    a.label("main").prologue().call("dispatch").call("search").call("compare").epilogue().align()

    strings = {}
    for i, s in enumerate(SQL_STRINGS):
        strings[f"sql{i}"] = s.encode()
    for i, s in enumerate(PS_STRINGS):
        # every other PowerShell literal stored wide, as .NET-hosted modules do
        strings[f"ps{i}"] = s.encode("utf-16-le") if i % 2 else s.encode()
    for i, blob in enumerate(BASE64_PAYLOADS):
        strings[f"b64_{i}"] = base64.b64encode(blob)
    for i, s in enumerate(KEYWORD_STRINGS):
        strings[f"kw{i}"] = s.encode()
    for i, s in enumerate(NEUTRAL_STRINGS):
        strings[f"neutral{i}"] = s.encode()
    strings["needle0"] = b"cmd="
    strings["needle1"] = b"pw="
    for i, tok in enumerate(["q1|", "q2|", "q3|", "q4|"]):
        strings[f"verb{i}"] = tok.encode()
    strings["buffer"] = b"\x00" * 16
    return build_pe(a, strings, {"KERNEL32.dll": ["CompareStringA"], "msvcrt.dll": ["strstr"]},
                    exports={"RegisterModule": "main"}, entry="main")


def iis_raid_like_pe(seed: int = 11, comparestringa: int = 4, tokens=IIS_TOKENS, extra: list | None = None) -> bytes:
    """
    Command dispatcher shaped like the IIS RAID module: each verb literal is
    loaded with ``lea rax`` and spilled as the fifth argument several
    instructions ahead of ``call [CompareStringA]``, with the remaining
    arguments set up in between.
    """
    rng = random.Random(seed)
    a = Asm(64)
    a.label("handler").prologue(0x40)
    a.lea("rax", "ctype").store_arg(0x28)
    for i in range(comparestringa):
        tok = f"tok{i % len(tokens)}"
        a.lea("rax", tok).store_arg(0x20)
        a.mov_imm("ecx", 0x7F).mov_imm("edx", 1)
        a.lea("r8", "cmdbuf").mov_imm("r9d", 4)
        a.filler(1, rng)
        a.call_mem("iat:CompareStringA")
        a.cmp_imm("eax", 2).jcc("je", f"do{i}")
        a.label(f"do{i}")
        a.filler(2, rng)
    a.epilogue(0x40).align()
    for name, emit in (extra or []):
        a.label(name)
        emit(a)
        a.align()
    strings = {f"tok{i}": t.encode() for i, t in enumerate(tokens)}
    strings["ctype"] = b"text/plain"
    strings["cmdbuf"] = b"\x00" * 8
    strings["banner"] = b"IIS-Raid native module"
    return build_pe(a, strings, {"KERNEL32.dll": ["CompareStringA", "GetProcAddress"]},
                    exports={"RegisterModule": "handler"}, entry="handler")


def backdoor_like_pe() -> bytes:
    """SQL and PowerShell payloads, base64 blobs, and a CompareStringA dispatcher."""
    a = Asm(64)
    rng = random.Random(3)
    a.label("main").prologue()
    for i in range(4):
        a.lea("rax", f"verb{i}").store_arg(0x20).lea("r8", "req").mov_imm("r9d", 4)
        a.call_mem("iat:CompareStringA")
        a.cmp_imm("eax", 0x6E7572)          # "run"
        a.jcc("je", f"h{i}").label(f"h{i}")
    for i in range(2):
        a.lea("rcx", "req").lea("rdx", f"verb{i}").call_mem("iat:strstr")
    a.filler(5, rng).epilogue().align()
    strings = {}
    for i, s in enumerate(SQL_STRINGS):
        strings[f"sql{i}"] = s.encode()
    for i, s in enumerate(PS_STRINGS):
        strings[f"ps{i}"] = s.encode()
    for i, blob in enumerate(BASE64_PAYLOADS):
        strings[f"b64{i}"] = base64.b64encode(blob)
    for i, s in enumerate(["upload$", "download", "encode", "WinExec"]):
        strings[f"kw{i}"] = s.encode()
    for i, t in enumerate(["CMD|", "UPL|", "DWN|", "SQL|"]):
        strings[f"verb{i}"] = t.encode()
    strings["req"] = b"\x00" * 8
    strings["ctype"] = b"text/plain"
    return build_pe(a, strings, {"KERNEL32.dll": ["CompareStringA", "WinExec"], "msvcrt.dll": ["strstr"]},
                    exports={"RegisterModule": "main"}, entry="main")


def benign_pe() -> bytes:
    """A module with ordinary strings and no compare dispatch."""
    a = Asm(64)
    rng = random.Random(5)
    a.label("main").prologue().filler(20, rng).lea("rcx", "msg").call_mem("iat:OutputDebugStringA")
    a.filler(10, rng).epilogue().align()
    strings = {
        "msg": b"Anonymous authentication module initialized",
        "s1": b"Failed to read configuration section",
        "s2": b"system.webServer/security/authentication",
        "s3": b"Select the anonymous user identity",
        "s4": b"Get the configured user name",
        "ver": b"10.0.17763.1",
    }
    return build_pe(a, strings, {"KERNEL32.dll": ["OutputDebugStringA"]},
                    exports={"RegisterModule": "main"}, entry="main")


def emit_shared(a: Asm):
    """Adler-32 style loop used as the shared, copied function."""
    a.prologue()
    a.mov_imm("ecx", 1).xor("edx")
    a.label("shared_loop")
    a.load_byte("eax", "rsi")
    a.add_rr("ecx", "eax").add_rr("edx", "ecx")
    a.cmp_imm("ecx", 0xFFF1).jcc("jb", "shared_nomod1")
    a.raw(b"\x81\xe9\xf1\xff\x00\x00")      # sub ecx, 0xfff1
    a.label("shared_nomod1")
    a.mov_rr("rax", "rdx").mov_imm("ebx", 0x15B0).div("ebx")
    a.mov_imm("eax", 0xFFF1).imul_imm("edx", 0xFFF1)
    a.raw(b"\x48\xff\xc6")                  # inc rsi
    a.raw(b"\x48\xff\xcf")                  # dec rdi
    a.jcc("jne", "shared_loop")
    a.mov_rr("rax", "rdx")
    for _ in range(6):
        a.add_rr("eax", "ecx").mov_rr("rbx", "rax")
    a.epilogue()


def unique_function(a: Asm, name: str, rng: random.Random, n: int = 40):
    a.label(name).prologue()
    for i in range(n // 4):
        a.filler(2, rng)
        a.cmp_imm("ecx", rng.randrange(1, 1 << 20) * 17 + 1).jcc(rng.choice(["je", "jl", "ja", "js"]), f"{name}_{i}")
        a.label(f"{name}_{i}")
        if rng.random() < 0.5:
            a.load_byte("eax", "rsi", rng.randrange(64))
    a.epilogue()


def similarity_pair(seed_left: int = 1, seed_right: int = 2) -> tuple[bytes, bytes]:
    """Two DLLs with distinct code except one byte-identical function."""
    out = []
    for seed, base in ((seed_left, 0x180000000), (seed_right, 0x10000000)):
        rng = random.Random(seed)
        a = Asm(64)
        names = [f"u{seed}_{i}" for i in range(4)]
        a.label("start").prologue()
        if seed == seed_right:
            a.filler(8, rng).cmp_imm("ecx", 7).jcc("jne", "start_skip").label("start_skip")
        for n in names:
            a.call(n)
        a.call("shared").epilogue().align()
        if seed == seed_right:
            unique_function(a, "pad", rng, 24)
            a.align()
        for n in names:
            unique_function(a, n, rng, rng.randrange(30, 60))
            a.align()
        a.label("shared")
        emit_shared(a)
        a.align()
        out.append(build_pe(a, {"s": b"module"}, {"KERNEL32.dll": ["GetTickCount"]}, image_base=base,
                            exports={"Entry": "start"}, entry="start"))
    return out[0], out[1]


def _code_tile(rng: random.Random, tag: str, functions: int = 120) -> bytes:
    """Self-contained block of compiler-shaped functions (only internal references)."""
    a = Asm(64)
    names = [f"{tag}f{i}" for i in range(functions)]
    for i, name in enumerate(names):
        a.label(name).prologue(rng.choice([0x20, 0x28, 0x38, 0x48]))
        for j in range(rng.randrange(3, 9)):
            a.filler(rng.randrange(2, 6), rng)
            choice = rng.random()
            if choice < 0.3:
                a.cmp_imm(rng.choice(["eax", "ecx", "edx"]), rng.randrange(0, 64)).jcc(
                    rng.choice(["je", "jne", "jl", "jg"]), f"{name}_{j}")
            elif choice < 0.5 and i + 1 < len(names):
                a.call(names[rng.randrange(i + 1, len(names))])
            elif choice < 0.7:
                a.load_byte("eax", "rsi", rng.randrange(64)).test_rr("eax").jcc("je", f"{name}_{j}")
            else:
                a.mov_imm(rng.choice(["eax", "ecx", "r8", "r9"]), rng.randrange(1 << 16))
            a.label(f"{name}_{j}")
        a.epilogue(0x28).align()
    return a.link(0, {})


def large_pe(target_size: int = 5 * 1024 * 1024, seed: int = 17) -> bytes:
    """
    PE64 of about ``target_size`` bytes: roughly two thirds tiled
    compiler-shaped code, the rest a string section mixing identifiers,
    messages, SQL and PowerShell literals.
    """
    rng = random.Random(seed)
    tiles = [_code_tile(rng, f"t{i}_") for i in range(4)]
    code = bytearray()
    code_size = target_size * 2 // 3
    while len(code) < code_size:
        code += tiles[len(code) // len(tiles[0]) % len(tiles)]
    words = ["config", "handler", "request", "buffer", "module", "status", "server", "context", "error", "value"]
    pieces = SQL_STRINGS + PS_STRINGS + NEUTRAL_STRINGS
    data = bytearray()
    # headers and the small .text/.rdata push the file just past target_size
    data_size = target_size - len(code)
    while len(data) < data_size:
        r = rng.random()
        if r < 0.05:
            s = rng.choice(pieces).encode()
        elif r < 0.35:
            s = "".join(w.capitalize() for w in rng.sample(words, 3)).encode()
        elif r < 0.6:
            s = " ".join(rng.sample(words, 5)).encode("utf-16-le")
        else:
            s = bytes(rng.getrandbits(8) for _ in range(rng.randrange(4, 24)))
        data += s + b"\x00"
    a = Asm(64)
    a.label("main").prologue().epilogue().align()
    return build_pe(a, {"s": b"x"}, {"KERNEL32.dll": ["CompareStringA"]},
                    extra_sections=[(".text1", bytes(code), True), (".data1", bytes(data[:data_size]), False)],
                    entry="main")

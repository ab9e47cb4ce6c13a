import re
import shutil
import struct
import subprocess

import pytest

from fase.loader import ElfError, Image, parse_elf, resolve_interp, stack_blob
from fase.runtime import abi

from conftest import fixture_path, run_fixture

pytestmark = pytest.mark.usefixtures("fixtures_bin")


def readelf_loads(path):
    """PT_LOAD rows as reported by binutils."""
    if not shutil.which("readelf"):
        pytest.skip("readelf not available")
    text = subprocess.run(["readelf", "-lW", path], capture_output=True, text=True, check=True).stdout
    rows = []
    for line in text.splitlines():
        m = re.match(r"\s+LOAD\s+(0x\w+)\s+(0x\w+)\s+0x\w+\s+(0x\w+)\s+(0x\w+)", line)
        if m:
            rows.append(tuple(int(v, 16) for v in m.groups()))
    entry = int(re.search(r"Entry point (0x\w+)", text).group(1), 16)
    return entry, rows


@pytest.mark.parametrize("name", ["hello", "counter", "dyn", "ld-fase.so.1"])
def test_program_headers_match_readelf(name):
    path = fixture_path(name)
    entry, rows = readelf_loads(path)
    elf = parse_elf(open(path, "rb").read())
    assert elf.entry == entry
    assert [(p.offset, p.vaddr, p.filesz, p.memsz) for p in elf.loads] == rows


def test_dyn_names_its_interpreter():
    elf = parse_elf(open(fixture_path("dyn"), "rb").read())
    assert elf.interp.endswith("ld-fase.so.1")


@pytest.mark.parametrize("blob, msg", [
    (b"hello", "not an ELF"),
    (b"\x7fELF" + bytes(60), "little-endian"),
])
def test_parse_errors(blob, msg):
    with pytest.raises(ElfError, match=msg):
        parse_elf(blob)


def test_wrong_machine():
    raw = bytearray(open(fixture_path("hello"), "rb").read())
    struct.pack_into("<H", raw, 18, 62)   # x86-64
    with pytest.raises(ElfError, match="RISC-V"):
        parse_elf(bytes(raw))


def test_truncated_headers():
    raw = open(fixture_path("hello"), "rb").read()[:80]
    with pytest.raises(ElfError, match="truncated"):
        parse_elf(raw)


def test_resolve_interp(tmp_path):
    (tmp_path / "ld.so").write_bytes(b"")
    assert resolve_interp("/lib/ld.so", str(tmp_path)) == str(tmp_path / "ld.so")


def test_stack_layout():
    img = Image("/bin/prog", entry=0x1000, start_pc=0x1000, phdr=0x40, phnum=3, bias=0)
    top = 0x4000_0000
    sp, blob = stack_blob(img, ["prog", "-x"], ["A=1"], bytes(range(16)), top)
    assert sp % 16 == 0 and sp + len(blob) == top
    words = struct.unpack_from("<8Q", blob)
    argc, argv0, argv1, nul, env0, nul2 = words[:6]
    assert argc == 2 and nul == 0 and nul2 == 0

    def cstr(addr):
        off = addr - sp
        return blob[off:blob.index(b"\0", off)]
    assert (cstr(argv0), cstr(argv1), cstr(env0)) == (b"prog", b"-x", b"A=1")
    aux = {}
    i = 6
    while True:
        k, v = struct.unpack_from("<QQ", blob, 8 * i)
        aux[k] = v
        i += 2
        if k == abi.AT_NULL:
            break
    assert aux[abi.AT_PHDR] == 0x40 and aux[abi.AT_PHNUM] == 3 and aux[abi.AT_PAGESZ] == 4096
    assert aux[abi.AT_ENTRY] == 0x1000
    r = aux[abi.AT_RANDOM] - sp
    assert blob[r:r + 16] == bytes(range(16))
    assert cstr(aux[abi.AT_EXECFN]) == b"/bin/prog"


def test_preload_writes_each_file_page_once():
    path = fixture_path("hello")
    _, rows = readelf_loads(path)
    pages = set()
    for off, _, filesz, _ in rows:
        pages.update(range(off // 4096, (off + filesz + 4095) // 4096))
    rep, rt, sess, out = run_fixture("hello")
    assert rep.memory["buffer_pages"] == len(pages)


def test_no_preload_loads_lazily():
    rep, rt, sess, out = run_fixture("hello", preload=False)
    assert out == b"Hello, FASE!\n"
    assert rep.events["page_fault"] > 0
